#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fairlab {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor shape dimensions must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until materialized
    bool requires_grad = false;
};

// Value-semantic handle to shared n-d array storage. Gradients live beside the
// values and are filled in by Graph::backward.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.d_ = std::make_shared<TensorData<T>>();
        t.d_->data.assign(static_cast<std::size_t>(shape_numel(shape)), T(0));
        t.d_->shape = std::move(shape);
        t.d_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.d_->data.begin(), t.d_->data.end(), value);
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
            throw std::invalid_argument("tensor: value count does not match shape " + shape_str(shape));
        Tensor t;
        t.d_ = std::make_shared<TensorData<T>>();
        t.d_->shape = std::move(shape);
        t.d_->data = std::move(values);
        t.d_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(d_->data.size()); }
    bool is_scalar() const { return size() == 1; }

    std::span<T> values() { return {d_->data.data(), d_->data.size()}; }
    std::span<const T> values() const { return {d_->data.data(), d_->data.size()}; }
    T item() const {
        if (!is_scalar()) throw std::invalid_argument("item(): tensor is not scalar");
        return d_->data[0];
    }

    bool requires_grad() const { return d_ && d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    bool has_grad() const { return d_ && !d_->grad.empty(); }
    void ensure_grad() {
        if (d_->grad.empty()) d_->grad.assign(d_->data.size(), T(0));
    }
    void zero_grad() {
        ensure_grad();
        std::fill(d_->grad.begin(), d_->grad.end(), T(0));
    }
    void drop_grad() { d_->grad.clear(); }
    std::span<T> grad() {
        if (!has_grad()) throw std::runtime_error("tensor has no gradient buffer");
        return {d_->grad.data(), d_->grad.size()};
    }
    std::span<const T> grad() const {
        if (!has_grad()) throw std::runtime_error("tensor has no gradient buffer");
        return {d_->grad.data(), d_->grad.size()};
    }

    // Constant copy of the values; nothing recorded flows through it.
    Tensor detach() const {
        Tensor t;
        t.d_ = std::make_shared<TensorData<T>>();
        t.d_->shape = d_->shape;
        t.d_->data = d_->data;
        return t;
    }

    Tensor clone() const {
        Tensor t = detach();
        t.d_->requires_grad = d_->requires_grad;
        return t;
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }
    std::shared_ptr<TensorData<T>> storage() const { return d_; }

private:
    std::shared_ptr<TensorData<T>> d_;
};

// Dynamic tape. Each forward op that involves a grad-requiring input appends a
// node holding its backward closure; one backward pass replays the nodes in
// reverse. A fresh Graph is built per training step.
template <typename T>
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // RAII activation: ops record into the innermost active graph.
    class Scope {
    public:
        explicit Scope(Graph& g) : prev_(active_ref()) { active_ref() = &g; }
        ~Scope() { active_ref() = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Graph* prev_;
    };

    static Graph* active() { return active_ref(); }

    void record(const Tensor<T>& output, std::function<void()> backward_fn) {
        nodes_.push_back(Node{output, std::move(backward_fn)});
    }

    std::size_t size() const { return nodes_.size(); }

    // Accumulates d(loss)/d(leaf) into the grad buffer of every recorded
    // tensor reachable from loss. Nodes whose output never received a
    // gradient are skipped, so a graph holding several roots can be walked
    // once per root (clearing intermediate grads in between).
    void backward(Tensor<T> loss) {
        if (!loss.defined() || !loss.is_scalar())
            throw std::invalid_argument("backward: loss must be a scalar tensor");
        loss.ensure_grad();
        loss.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->output.has_grad()) it->fn();
        }
    }

    // Drops gradient buffers of all op outputs (leaves keep theirs). Call
    // between backward passes over different roots of the same graph.
    void clear_intermediate_grads() {
        for (auto& n : nodes_) n.output.drop_grad();
    }

    void clear() { nodes_.clear(); }

private:
    struct Node {
        Tensor<T> output;
        std::function<void()> fn;
    };

    static Graph*& active_ref() {
        thread_local Graph* active = nullptr;
        return active;
    }

    std::vector<Node> nodes_;
};

// Spec'd entry point: backward through the currently active graph.
template <typename T>
void backward(const Tensor<T>& loss) {
    Graph<T>* g = Graph<T>::active();
    if (!g) throw std::runtime_error("backward: no active graph");
    g->backward(loss);
}

}  // namespace fairlab
