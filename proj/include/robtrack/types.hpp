#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace robtrack {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

using VectorCRef = Eigen::Ref<const Vector>;
using MatrixCRef = Eigen::Ref<const Matrix>;

using Seed = std::uint64_t;

}  // namespace robtrack
