#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mdtrack/tensor.hpp"

namespace mdtrack {

class Graph;

// Named trainable tensor with a persistent gradient accumulator.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;  // same shape as value, zero-initialized

    void zero_grad();
};

// Owns a model's parameters in creation order; names are unique.
class ParamStore {
public:
    Param& create(const std::string& name, Tensor value);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    std::vector<Param*> all();
    std::vector<const Param*> all() const;
    std::size_t size() const { return items_.size(); }
    std::int64_t element_count() const;
    void zero_grad();

private:
    std::vector<std::unique_ptr<Param>> items_;
};

// Handle into a Graph's node list.
struct Value {
    Graph* g = nullptr;
    std::int32_t id = -1;

    bool defined() const { return g != nullptr && id >= 0; }
    const Tensor& tensor() const;
    const std::vector<int>& shape() const { return tensor().shape(); }
    int dim(int i) const { return tensor().dim(i); }
    std::int64_t numel() const { return tensor().numel(); }
    Dtype dtype() const { return tensor().dtype(); }
};

// Dynamically recorded reverse-mode tape. Nodes are appended in execution
// order; backward() walks them once in reverse. With grads disabled the
// tape still carries values (so the same model code serves inference) but
// records no closures.
class Graph {
public:
    struct Node {
        Tensor value;
        Tensor grad;  // undefined until touched by backward
        std::vector<std::int32_t> parents;
        std::function<void(Graph&, std::int32_t)> backward;  // (graph, own id)
        Param* param = nullptr;
        bool needs_grad = false;
    };

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }

    Value constant(Tensor t);
    Value leaf(Param& p);
    // Generic recorded op. `fn` runs during backward with this node's grad
    // already accumulated; it must add into parent grads via grad().
    Value record(Tensor out, const std::vector<Value>& parents,
                 std::function<void(Graph&, std::int32_t)> fn);

    Node& node(std::int32_t id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)]; }

    // Grad accumulator for a node, allocated as zeros on first touch.
    Tensor& grad(std::int32_t id);
    bool grad_defined(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].grad.defined(); }

    // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node,
    // adding leaf gradients into their Params. `loss` must be scalar.
    void backward(Value loss);

private:
    std::deque<Node> nodes_;
    bool grad_enabled_;
};

}  // namespace mdtrack
