#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msbwe::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on first use
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

// Shared handle onto a node of the computation graph. Copies alias the same
// storage; use `clone` for an independent leaf.
template <typename T>
class Tensor {
public:
    using NodePtr = std::shared_ptr<Node<T>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false) { return from({1}, {value}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    std::span<T> mutable_data() { return node_->value; }
    T item() const { return node_->value.at(0); }
    T operator[](std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    // Only leaves may be frozen or unfrozen; graph history is unaffected.
    void set_requires_grad(bool on) {
        if (node_->leaf) node_->requires_grad = on;
    }
    bool is_leaf() const { return node_->leaf; }
    // Gradient view; empty until a backward pass has reached this tensor.
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // New leaf with a copy of the value and no history.
    Tensor detach() const { return from(shape(), node_->value, false); }
    Tensor clone(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

    // Reverse-mode sweep from this tensor. Non-scalar roots are seeded with ones.
    // Leaf gradients accumulate across calls; interior gradients are reset.
    void backward() const;

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Graph recording is enabled by default; a NoGradGuard disables it for the
// current thread, making every op produce plain leaves.
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

// Builds an op result. History is attached only when recording is enabled and
// at least one parent requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward_fn);

}  // namespace msbwe::ad
