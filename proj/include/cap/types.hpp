#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace cap {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

// Entries are 1 (positive), 0 (negative) and, for pseudo-labels only, -1 (ignored).
using LabelMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;
using IndexList = std::vector<Index>;

inline constexpr std::int8_t kIgnored = -1;

}  // namespace cap
