#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "vat/errors.hpp"

namespace vat {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;    // allocated lazily by ensure_grad()
    bool requires_grad = false;  // leaf parameter flag
    bool needs_grad = false;     // true if gradients must flow through this node
};
}  // namespace detail

// Dense n-dimensional float64 tensor with row-major storage and optional
// reverse-mode gradient tracking. Copying a Tensor copies the handle, not
// the storage; two handles to the same node share value and grad.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double v) { return from_data({}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
    int64_t dim(size_t i) const { return node_->shape.at(i); }
    int64_t ndim() const { return static_cast<int64_t>(node_->shape.size()); }

    double* data() { return node_->value.data(); }
    const double* data() const { return node_->value.data(); }
    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }

    double item() const;
    double at(std::initializer_list<int64_t> idx) const;
    double& at(std::initializer_list<int64_t> idx);

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v);
    bool needs_grad() const { return node_ && node_->needs_grad; }
    void mark_needs_grad() { node_->needs_grad = true; }

    // Grad buffer, allocated zero-filled on first use.
    std::vector<double>& grad();
    const std::vector<double>& grad_or_empty() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad();

    // Identity of the underlying storage node; used by parameter registries.
    const void* node_id() const { return node_.get(); }
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    // Deep copy with fresh storage (grad not copied).
    Tensor clone() const;

    void check_finite(const char* what) const;

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;
};

// Ordered record of primitive operations from one forward pass. Backward
// replays the recorded closures in reverse order, visiting each exactly
// once. A tape is single-writer: one forward/backward pair at a time.
class Tape {
public:
    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
    size_t size() const { return ops_.size(); }
    bool empty() const { return ops_.empty(); }
    void reset() { ops_.clear(); }

    // Runs all recorded backward rules in reverse order, then leaves the
    // tape intact (callers reset explicitly).
    void replay_backward() {
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> ops_;
};

// Seeds d(loss)/d(loss) = seed_grad and propagates gradients to every
// tensor recorded on the tape. Gradients accumulate additively; callers
// zero them explicitly between steps.
void backward(const Tensor& loss, Tape& tape, double seed_grad = 1.0);

}  // namespace vat
