#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "blalm/core/autograd.hpp"

namespace blalm {

// Owns parameters by name in insertion order. Addresses stay stable, so
// Var::bind can hold raw pointers into the set.
template <typename Scalar>
class ParameterSet {
public:
    Parameter<Scalar>& add(const std::string& name, Tensor<Scalar> value, ShapeClass cls) {
        if (index_.count(name) != 0) {
            throw ContractViolation("duplicate parameter " + name);
        }
        items_.push_back(std::make_unique<Parameter<Scalar>>(name, std::move(value), cls));
        index_[name] = items_.size() - 1;
        return *items_.back();
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Parameter<Scalar>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw ContractViolation("unknown parameter " + name);
        }
        return *items_[it->second];
    }
    const Parameter<Scalar>& get(const std::string& name) const {
        return const_cast<ParameterSet*>(this)->get(name);
    }

    Var<Scalar> bind(const std::string& name) { return Var<Scalar>::bind(get(name)); }

    // Undefined Var when the parameter does not exist (disabled feature).
    Var<Scalar> bind_optional(const std::string& name) {
        return contains(name) ? bind(name) : Var<Scalar>();
    }

    std::size_t size() const noexcept { return items_.size(); }
    Parameter<Scalar>& operator[](std::size_t i) { return *items_[i]; }
    const Parameter<Scalar>& operator[](std::size_t i) const { return *items_[i]; }

    std::vector<Parameter<Scalar>*> pointers() {
        std::vector<Parameter<Scalar>*> out;
        out.reserve(items_.size());
        for (auto& p : items_) {
            out.push_back(p.get());
        }
        return out;
    }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& p : items_) {
            n += p->value.size();
        }
        return n;
    }

    void zero_grad() {
        for (auto& p : items_) {
            p->zero_grad();
        }
    }

private:
    std::vector<std::unique_ptr<Parameter<Scalar>>> items_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace blalm
