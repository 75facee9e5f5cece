#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace syllo {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

// Activations are positions x features, stored row-major so a position is contiguous.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Residual-stream vectors and biases multiply from the left: x * W.
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatF = Mat<float>;
using VecF = Vec<float>;

} // namespace syllo
