#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcap {

using Index = std::int32_t;

/// Largest chart dimension supported by the element kernels.
inline constexpr int kMaxDim = 3;

using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Metric = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;
using GradOperator =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim + 1>;
using LocalMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim + 1, kMaxDim + 1>;
using LocalVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim + 1, 1>;

/// Sorted, duplicate-free list of vertex indices.
using NodeSet = std::vector<Index>;
/// One byte per vertex, nonzero = member.
using NodeMask = std::vector<char>;

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline NodeSet normalized(NodeSet s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

inline NodeMask mask_of(const NodeSet& set, Index n) {
  NodeMask m(static_cast<std::size_t>(n), 0);
  for (Index v : set) m[static_cast<std::size_t>(v)] = 1;
  return m;
}

inline NodeSet set_of(const NodeMask& mask) {
  NodeSet s;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) s.push_back(static_cast<Index>(i));
  return s;
}

inline bool contains(const NodeSet& sorted, Index v) {
  return std::binary_search(sorted.begin(), sorted.end(), v);
}

}  // namespace pcap
