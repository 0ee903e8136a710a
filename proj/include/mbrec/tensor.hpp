#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mbrec/common.hpp"

namespace mbrec::nn {

// Dense row-major tensor of doubles. Copies share storage (shared_ptr), so a
// Tensor value is a cheap handle; gradients live next to the values and are
// allocated lazily the first time an op needs them.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, scalar value, bool requires_grad = false);
    static Tensor from_values(std::vector<std::size_t> shape, std::vector<scalar> values,
                              bool requires_grad = false);
    static Tensor scalar_value(scalar v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(data_); }
    const std::vector<std::size_t>& shape() const { return data_->shape; }
    std::size_t ndim() const { return data_->shape.size(); }
    std::size_t numel() const { return data_->values.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    scalar* values() { return data_->values.data(); }
    const scalar* values() const { return data_->values.data(); }
    std::vector<scalar>& value_vector() { return data_->values; }
    const std::vector<scalar>& value_vector() const { return data_->values; }

    scalar at(std::size_t i) const { return data_->values[i]; }
    scalar at(std::size_t i, std::size_t j) const { return data_->values[i * cols() + j]; }
    scalar& at(std::size_t i) { return data_->values[i]; }
    scalar& at(std::size_t i, std::size_t j) { return data_->values[i * cols() + j]; }

    bool requires_grad() const { return data_ && data_->requires_grad; }
    void set_requires_grad(bool v) { data_->requires_grad = v; }

    // Gradient buffer, zero-initialized on first access.
    scalar* grad();
    const std::vector<scalar>& grad_vector() const;
    bool has_grad() const { return data_ && !data_->grad.empty(); }
    void zero_grad();

    // Deep copy of values (gradients are not copied).
    Tensor clone() const;

    std::string shape_string() const;

    // Identity of the underlying storage; used to detect aliasing.
    const void* storage_id() const { return data_.get(); }

private:
    struct Storage {
        std::vector<std::size_t> shape;
        std::vector<scalar> values;
        std::vector<scalar> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> data_;

    static std::size_t shape_numel(const std::vector<std::size_t>& shape);
};

// Records backward closures during the forward pass and replays them in exact
// reverse order. Pass nullptr to ops for inference (no recording, no grads).
class GradientTape {
public:
    void record(std::function<void()> backward_step) {
        steps_.push_back(std::move(backward_step));
    }

    // Seeds d(loss)/d(loss) = 1 and replays the tape. The loss must be a scalar
    // (numel 1) produced by ops recorded on this tape.
    void backward(Tensor& loss);

    std::size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

private:
    std::vector<std::function<void()>> steps_;
};

}  // namespace mbrec::nn
