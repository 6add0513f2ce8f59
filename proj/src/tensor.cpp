#include "fosp/tensor.hpp"

#include "fosp/error.hpp"

#include <algorithm>
#include <unordered_set>

namespace fosp {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    return from(shape, std::vector<double>(shape.numel(), value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape.numel()) {
        throw ValidationError("tensor value count " + std::to_string(values.size()) +
                              " does not match shape " + shape.str());
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({1, 1, 1, 1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

std::span<const double> Tensor::grad() const { return node_->grad; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::item() const {
    if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape().str());
    return node_->value[0];
}

double Tensor::at(int n, int c, int h, int w) const {
    const Shape& s = shape();
    return node_->value[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

Tensor Tensor::make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents) {
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->value = std::move(value);
    if (g_grad_enabled) {
        const bool any = std::any_of(parents.begin(), parents.end(),
                                     [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (auto& p : parents) node->parents.push_back(p.node_);
        }
    }
    return Tensor(std::move(node));
}

void Tensor::set_backward(std::function<void()> fn) const {
    if (node_->requires_grad && !node_->parents.empty()) node_->backward = std::move(fn);
}

void Tensor::backward() const {
    if (numel() != 1) throw ValidationError("backward() requires a scalar, got " + shape().str());
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward();
    }
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor stack_batch(std::span<const Tensor> items) {
    if (items.empty()) throw ValidationError("stack_batch: no items");
    Shape shape = items[0].shape();
    std::vector<double> values;
    values.reserve(shape.numel() * items.size());
    int total = 0;
    for (const Tensor& t : items) {
        const Shape& s = t.shape();
        if (s.c != shape.c || s.h != shape.h || s.w != shape.w) {
            throw ValidationError("stack_batch: shape mismatch " + shape.str() + " vs " + s.str());
        }
        values.insert(values.end(), t.data().begin(), t.data().end());
        total += s.n;
    }
    shape.n = total;
    return Tensor::from(shape, std::move(values));
}

Tensor slice_batch(const Tensor& batch, int index) {
    Shape s = batch.shape();
    if (index < 0 || index >= s.n) throw ValidationError("slice_batch: index out of range");
    const std::size_t len = s.numel() / static_cast<std::size_t>(s.n);
    auto src = batch.data().subspan(static_cast<std::size_t>(index) * len, len);
    s.n = 1;
    return Tensor::from(s, std::vector<double>(src.begin(), src.end()));
}

}  // namespace fosp
