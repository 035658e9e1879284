#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace expanse {

// Row-major so each row is one token / image / slot vector.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

}  // namespace expanse
