#include "vat/tensor.hpp"

#include <cmath>
#include <sstream>

namespace vat {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape) {
    auto node = std::make_shared<detail::TensorNode>();
    node->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.node_->value) x = v;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    return Tensor(std::move(node));
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor with shape " + shape_str(shape()));
    return node_->value[0];
}

static size_t flat_index(const Shape& shape, std::initializer_list<int64_t> idx) {
    if (idx.size() != shape.size())
        throw DimensionError("index rank mismatch for shape " + shape_str(shape));
    size_t flat = 0;
    size_t i = 0;
    for (int64_t v : idx) {
        if (v < 0 || v >= shape[i]) throw IndexError("index out of range for shape " + shape_str(shape));
        flat = flat * static_cast<size_t>(shape[i]) + static_cast<size_t>(v);
        ++i;
    }
    return flat;
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    return node_->value[flat_index(node_->shape, idx)];
}

double& Tensor::at(std::initializer_list<int64_t> idx) {
    return node_->value[flat_index(node_->shape, idx)];
}

Tensor& Tensor::set_requires_grad(bool v) {
    node_->requires_grad = v;
    if (v) node_->needs_grad = true;
    return *this;
}

std::vector<double>& Tensor::grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::clone() const {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = node_->shape;
    node->value = node_->value;
    node->requires_grad = node_->requires_grad;
    node->needs_grad = node_->requires_grad;
    return Tensor(std::move(node));
}

void Tensor::check_finite(const char* what) const {
#ifdef VAT_CHECK_FINITE
    for (double v : node_->value)
        if (!std::isfinite(v)) throw ContractError(std::string("non-finite value in ") + what);
#else
    (void)what;
#endif
}

void backward(const Tensor& loss, Tape& tape, double seed_grad) {
    if (loss.numel() != 1)
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    Tensor l = loss;
    l.grad()[0] += seed_grad;
    tape.replay_backward();
}

}  // namespace vat
