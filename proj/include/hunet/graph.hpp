#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hunet/tensor.hpp"

namespace hunet {

// Learnable value plus its gradient accumulator. Gradients are accumulated
// (+=) by Graph::backward and cleared explicitly between optimizer steps.
template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;
    std::string name;

    Param() = default;
    Param(std::string n, Tensor<T> v)
        : value(std::move(v)), grad(Tensor<T>::zeros(value.shape)), name(std::move(n)) {}

    void zero_grad() { grad.fill(T(0)); }

    // Tracked view of the value when a graph is recording, plain copy otherwise.
    Tensor<T> use(Graph<T>* g);
};

// Reverse-mode tape. One graph records exactly one forward pass; node ids are
// assigned in execution order, so every node's parents have smaller ids and
// the reverse sweep is a simple descending loop.
template <typename T>
class Graph {
public:
    using PullFn = std::function<void(Graph&, const Tensor<T>&)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaf bound to a parameter; after backward the adjoint is added onto the
    // parameter's grad buffer.
    Tensor<T> leaf(Param<T>& p) {
        Tensor<T> t = p.value.detached();
        t.graph = this;
        t.node = record(t.shape, nullptr);
        param_leaves_.emplace_back(t.node, &p);
        return t;
    }

    // Leaf for a non-parameter tensor (e.g. the network input); its adjoint is
    // queryable after backward via adjoint().
    Tensor<T> input(const Tensor<T>& x) {
        Tensor<T> t = x.detached();
        t.graph = this;
        t.node = record(t.shape, nullptr);
        return t;
    }

    // Appends an operation node. `pull` receives the node's upstream adjoint
    // and is responsible for routing gradients to parents via add_grad.
    int record(Shape shape, PullFn pull) {
        nodes_.push_back(Node{shape, std::move(pull)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Accumulates into a node's adjoint during the reverse sweep. Callers pass
    // node < 0 for untracked operands; those are skipped.
    void add_grad(int node, const Tensor<T>& g) {
        if (node < 0) return;
        Node& n = nodes_.at(static_cast<std::size_t>(node));
        if (g.shape != n.shape)
            throw std::logic_error("Graph::add_grad: gradient shape " + to_string(g.shape) +
                                   " does not match node shape " + to_string(n.shape));
        Tensor<T>& adj = adjoints_.at(static_cast<std::size_t>(node));
        if (adj.data.empty()) {
            adj = g.detached();
        } else {
            for (std::size_t i = 0; i < adj.data.size(); ++i) adj.data[i] += g.data[i];
        }
    }

    // Reverse sweep from a scalar loss. Parameter gradients accumulate onto
    // their grad buffers; a second call without zeroing doubles them.
    void backward(const Tensor<T>& loss) {
        if (loss.graph != this || loss.node < 0)
            throw std::invalid_argument("Graph::backward: loss is not tracked on this graph");
        if (loss.numel() != 1)
            throw std::invalid_argument("Graph::backward: loss must be a scalar, got shape " +
                                        to_string(loss.shape));
        adjoints_.assign(nodes_.size(), Tensor<T>{});
        add_grad(loss.node, Tensor<T>::ones(Shape{1, 1, 1, 1}));
        for (int id = loss.node; id >= 0; --id) {
            const Tensor<T>& adj = adjoints_[static_cast<std::size_t>(id)];
            if (adj.data.empty()) continue;  // unreachable from the loss
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.pull) n.pull(*this, adj);
        }
        for (auto& [node, param] : param_leaves_) {
            const Tensor<T>& adj = adjoints_[static_cast<std::size_t>(node)];
            if (adj.data.empty()) continue;
            for (std::size_t i = 0; i < adj.data.size(); ++i) param->grad.data[i] += adj.data[i];
        }
        ran_backward_ = true;
    }

    // Adjoint of any tracked tensor after backward; zeros if unreached.
    Tensor<T> adjoint(const Tensor<T>& t) const {
        if (t.graph != this || t.node < 0)
            throw std::invalid_argument("Graph::adjoint: tensor is not tracked on this graph");
        if (!ran_backward_)
            throw std::logic_error("Graph::adjoint: backward has not run");
        const Tensor<T>& adj = adjoints_.at(static_cast<std::size_t>(t.node));
        if (adj.data.empty()) return Tensor<T>::zeros(t.shape);
        return adj.detached();
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        PullFn pull;  // null for leaves
    };

    std::vector<Node> nodes_;
    std::vector<Tensor<T>> adjoints_;
    std::vector<std::pair<int, Param<T>*>> param_leaves_;
    bool ran_backward_ = false;
};

template <typename T>
Tensor<T> Param<T>::use(Graph<T>* g) {
    return g ? g->leaf(*this) : value.detached();
}

namespace detail {

// Resolves the recording graph for an op from its operands. Mixing tensors
// tracked on different graphs is an error; untracked operands are constants.
template <typename T>
Graph<T>* common_graph(std::initializer_list<const Tensor<T>*> operands, const char* op) {
    Graph<T>* g = nullptr;
    for (const Tensor<T>* t : operands) {
        if (!t || !t->tracked()) continue;
        if (g && g != t->graph)
            throw std::logic_error(std::string(op) + ": operands tracked on different graphs");
        g = t->graph;
    }
    return g;
}

}  // namespace detail

}  // namespace hunet
