#pragma once

#include <Eigen/Core>

#include "blalm/core/tensor.hpp"

namespace blalm::detail {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
Eigen::Map<const RowMatrix<S>> view(const Tensor<S>& t) {
    return Eigen::Map<const RowMatrix<S>>(t.raw(), static_cast<Eigen::Index>(t.rows()),
                                          static_cast<Eigen::Index>(t.cols()));
}

template <typename S>
Eigen::Map<RowMatrix<S>> view(Tensor<S>& t) {
    return Eigen::Map<RowMatrix<S>>(t.raw(), static_cast<Eigen::Index>(t.rows()),
                                    static_cast<Eigen::Index>(t.cols()));
}

using Stride = Eigen::OuterStride<Eigen::Dynamic>;

// Column block [.., col0, col0 + width) of a row-major matrix, e.g. one head.
template <typename S>
Eigen::Map<const RowMatrix<S>, 0, Stride> block_view(const Tensor<S>& t, std::size_t col0, std::size_t width) {
    return Eigen::Map<const RowMatrix<S>, 0, Stride>(t.raw() + col0, static_cast<Eigen::Index>(t.rows()),
                                                     static_cast<Eigen::Index>(width),
                                                     Stride(static_cast<Eigen::Index>(t.cols())));
}

template <typename S>
Eigen::Map<RowMatrix<S>, 0, Stride> block_view(Tensor<S>& t, std::size_t col0, std::size_t width) {
    return Eigen::Map<RowMatrix<S>, 0, Stride>(t.raw() + col0, static_cast<Eigen::Index>(t.rows()),
                                               static_cast<Eigen::Index>(width),
                                               Stride(static_cast<Eigen::Index>(t.cols())));
}

inline void require_rank(const Shape& shape, std::size_t rank, const char* op) {
    if (shape.size() != rank) {
        throw ContractViolation(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                                shape_string(shape));
    }
}

}  // namespace blalm::detail
