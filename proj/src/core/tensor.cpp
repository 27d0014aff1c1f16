#include "blalm/core/tensor.hpp"

#include <limits>

namespace blalm {

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += ", ";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, std::size_t axis) {
    const Shape& shape = x.shape();
    if (axis >= shape.size()) {
        throw ContractViolation("softmax axis " + std::to_string(axis) + " invalid for shape " + shape_string(shape));
    }
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= shape[i];
    }
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        inner *= shape[i];
    }
    const std::size_t n = shape[axis];
    Tensor<Scalar> out(shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            Scalar hi = -std::numeric_limits<Scalar>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                hi = std::max(hi, x[base + j * inner]);
            }
            Scalar total = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const Scalar e = std::exp(x[base + j * inner] - hi);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j) {
                out[base + j * inner] /= total;
            }
        }
    }
    return out;
}

template Tensor<float> softmax(const Tensor<float>&, std::size_t);
template Tensor<double> softmax(const Tensor<double>&, std::size_t);

}  // namespace blalm
