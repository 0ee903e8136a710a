#include "mbrec/tensor.hpp"

#include <sstream>

namespace mbrec::nn {

std::size_t Tensor::shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    Tensor t;
    t.data_ = std::make_shared<Storage>();
    t.data_->values.assign(shape_numel(shape), 0.0);
    t.data_->shape = std::move(shape);
    t.data_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, scalar value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.data_->values) v = value;
    return t;
}

Tensor Tensor::from_values(std::vector<std::size_t> shape, std::vector<scalar> values,
                           bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw ShapeError("from_values: " + std::to_string(values.size()) +
                         " values do not fill the given shape");
    Tensor t;
    t.data_ = std::make_shared<Storage>();
    t.data_->shape = std::move(shape);
    t.data_->values = std::move(values);
    t.data_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar_value(scalar v, bool requires_grad) {
    return from_values({1}, {v}, requires_grad);
}

std::size_t Tensor::rows() const {
    if (ndim() != 2) throw ShapeError("rows(): tensor is not 2-D, shape " + shape_string());
    return data_->shape[0];
}

std::size_t Tensor::cols() const {
    if (ndim() != 2) throw ShapeError("cols(): tensor is not 2-D, shape " + shape_string());
    return data_->shape[1];
}

scalar* Tensor::grad() {
    if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
    return data_->grad.data();
}

const std::vector<scalar>& Tensor::grad_vector() const {
    if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
    return data_->grad;
}

void Tensor::zero_grad() {
    if (!data_) return;
    std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor t;
    t.data_ = std::make_shared<Storage>();
    t.data_->shape = data_->shape;
    t.data_->values = data_->values;
    t.data_->requires_grad = data_->requires_grad;
    return t;
}

std::string Tensor::shape_string() const {
    std::ostringstream ss;
    ss << "[";
    for (std::size_t i = 0; i < data_->shape.size(); ++i) {
        if (i) ss << "x";
        ss << data_->shape[i];
    }
    ss << "]";
    return ss.str();
}

void GradientTape::backward(Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward: loss must be a scalar tensor");
    loss.grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

}  // namespace mbrec::nn
