#pragma once

#include <Eigen/Core>

namespace iaseg {

// Row-major so a row (one voxel / one point) is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace iaseg
