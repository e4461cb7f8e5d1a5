#pragma once

#include "pcap/types.hpp"
#include "pcap/mesh.hpp"
#include "pcap/mesh_io.hpp"
#include "pcap/field.hpp"
#include "pcap/energy.hpp"
#include "pcap/solver.hpp"
#include "pcap/capacity.hpp"
#include "pcap/criterion.hpp"
#include "pcap/poincare.hpp"
#include "pcap/models.hpp"
#include "pcap/radial_oracle.hpp"
