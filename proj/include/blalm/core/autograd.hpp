#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "blalm/core/tensor.hpp"

namespace blalm {

// Muon treats Matrix parameters; everything else goes to AdamW.
enum class ShapeClass { Matrix, ScalarLike };

template <typename Scalar>
struct Parameter {
    std::string name;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    ShapeClass shape_class = ShapeClass::ScalarLike;

    Parameter() = default;
    Parameter(std::string name_, Tensor<Scalar> value_, ShapeClass cls)
        : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), shape_class(cls) {}

    void zero_grad() { grad = Tensor<Scalar>(value.shape()); }
};

template <typename Scalar>
struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    Parameter<Scalar>* param = nullptr;

    // Lazily allocated so constants and dead branches cost nothing.
    Tensor<Scalar>& grad_buffer() {
        if (grad.shape() != value.shape()) {
            grad = Tensor<Scalar>(value.shape());
        }
        return grad;
    }
    bool has_grad() const noexcept { return grad.shape() == value.shape() && !value.shape().empty(); }

    Node& parent(std::size_t i) { return *parents[i]; }
};

// Handle to a value in the differentiation graph. Copies share the node.
template <typename Scalar>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

    static Var constant(Tensor<Scalar> value) {
        auto node = std::make_shared<Node<Scalar>>();
        node->value = std::move(value);
        return Var(std::move(node));
    }

    static Var leaf(Tensor<Scalar> value) {
        auto node = std::make_shared<Node<Scalar>>();
        node->value = std::move(value);
        node->requires_grad = true;
        return Var(std::move(node));
    }

    // Reads the current value of `param`; backward() adds into param.grad.
    static Var bind(Parameter<Scalar>& param) {
        auto node = std::make_shared<Node<Scalar>>();
        node->value = param.value;
        node->requires_grad = true;
        node->param = &param;
        return Var(std::move(node));
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

    const Tensor<Scalar>& value() const { return node_->value; }
    const Tensor<Scalar>& grad() const { return node_->grad_buffer(); }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    Scalar item() const { return node_->value.item(); }

    Node<Scalar>* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node<Scalar>>& node_ptr() const noexcept { return node_; }

private:
    std::shared_ptr<Node<Scalar>> node_;
};

// Graph recording switch (per thread). While disabled, ops return constants.
bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Records an op. The backward closure reads self.grad and accumulates into
// the parents it cares about (check parent(i).requires_grad first).
template <typename Scalar>
Var<Scalar> make_op(Tensor<Scalar> value, std::vector<Var<Scalar>> parents,
                    std::function<void(Node<Scalar>&)> backward_fn) {
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& p : parents) {
            any = any || p.requires_grad();
        }
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (auto& p : parents) {
                node->parents.push_back(p.node_ptr());
            }
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Var<Scalar>(std::move(node));
}

// Reverse sweep from `root`, seeded with `seed` (defaults to ones).
// Leaves bound to parameters receive their gradient in Parameter::grad.
template <typename Scalar>
void backward(const Var<Scalar>& root, const Tensor<Scalar>* seed = nullptr);

template <typename Scalar>
void backward(const Var<Scalar>& root, Scalar seed_value) {
    const auto seed = Tensor<Scalar>::full(root.shape(), seed_value);
    backward(root, &seed);
}

}  // namespace blalm
