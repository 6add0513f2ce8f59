#pragma once

// Minimal reverse-mode autograd over dense NCHW float64 tensors.
//
// A Tensor is a cheap handle to a shared node. Nodes created while grad mode
// is enabled and at least one input requires grad record a backward closure;
// Tensor::backward() runs those closures in reverse topological order and
// accumulates into leaf gradients.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fosp {

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

namespace detail {
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward;

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const { return shape().numel(); }

    std::span<const double> data() const;
    // Writable view. Only meaningful for leaves or freshly built outputs.
    std::span<double> mutable_data();
    std::span<const double> grad() const;
    bool has_grad() const;

    bool requires_grad() const;
    double item() const;
    double at(int n, int c, int h, int w) const;

    void backward() const;
    void zero_grad();
    // Shares no graph history; copies the value.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    // Builds a graph node over `parents` when grad mode is on and any parent
    // requires grad; otherwise the returned tensor is a constant.
    static Tensor make_result(Shape shape, std::vector<double> value,
                              std::vector<Tensor> parents);
    void set_backward(std::function<void()> fn) const;

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// Constant (graph-free) concatenation along the batch axis, and its inverse.
Tensor stack_batch(std::span<const Tensor> items);
Tensor slice_batch(const Tensor& batch, int index);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace fosp
