#include "mdtrack/graph.hpp"

#include <cmath>

#include "mdtrack/kernels.hpp"

namespace mdtrack {

void Param::zero_grad() {
    dispatch(grad.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* g = grad.data<T>();
        for (std::int64_t i = 0; i < grad.numel(); ++i) g[i] = T(0);
    });
}

Param& ParamStore::create(const std::string& name, Tensor value) {
    if (find(name)) throw ContractError("duplicate param name: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->grad = Tensor::zeros(value.shape(), value.dtype());
    p->value = std::move(value);
    items_.push_back(std::move(p));
    return *items_.back();
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : items_)
        if (p->name == name) return p.get();
    return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
    for (const auto& p : items_)
        if (p->name == name) return p.get();
    return nullptr;
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(p.get());
    return out;
}

std::vector<const Param*> ParamStore::all() const {
    std::vector<const Param*> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p.get());
    return out;
}

std::int64_t ParamStore::element_count() const {
    std::int64_t n = 0;
    for (const auto& p : items_) n += p->value.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : items_) p->zero_grad();
}

const Tensor& Value::tensor() const {
    if (!defined()) throw ContractError("use of undefined graph value");
    return g->node(id).value;
}

Value Graph::constant(Tensor t) {
    Node n;
    n.value = std::move(t);
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Value Graph::leaf(Param& p) {
    Node n;
    n.value = p.value;
    n.param = &p;
    n.needs_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    const auto id = static_cast<std::int32_t>(nodes_.size() - 1);
    if (grad_enabled_) {
        Param* pp = &p;
        nodes_.back().backward = [pp](Graph& g, std::int32_t self) {
            const Tensor& gin = g.grad(self);
            dispatch(gin.dtype(), [&](auto tag) {
                using T = decltype(tag);
                kernels<T>().add(pp->grad.data<T>(), gin.data<T>(), pp->grad.data<T>(), gin.numel());
            });
        };
    }
    return Value{this, id};
}

Value Graph::record(Tensor out, const std::vector<Value>& parents,
                    std::function<void(Graph&, std::int32_t)> fn) {
    Node n;
    n.value = std::move(out);
    if (grad_enabled_) {
        for (const Value& p : parents) {
            if (p.g != this) throw ContractError("op mixes values from different graphs");
            if (node(p.id).needs_grad) n.needs_grad = true;
            n.parents.push_back(p.id);
        }
        if (n.needs_grad) n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad.defined()) n.grad = Tensor::zeros(n.value.shape(), n.value.dtype());
    return n.grad;
}

void Graph::backward(Value loss) {
    if (!grad_enabled_) throw ContractError("backward on a no-grad graph");
    if (loss.g != this) throw ContractError("loss belongs to another graph");
    if (loss.numel() != 1) throw ShapeError("backward expects a scalar loss");
    if (!std::isfinite(loss.tensor().at(0))) throw DomainError("non-finite loss");

    grad(loss.id).set(0, 1.0);
    for (std::int32_t id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || !n.grad.defined() || !n.backward) continue;
        n.backward(*this, id);
    }
}

}  // namespace mdtrack
