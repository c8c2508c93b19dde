#include "volseg/nn/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace volseg::nn {

namespace {
thread_local bool no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(no_grad) { no_grad = true; }
NoGradGuard::~NoGradGuard() { no_grad = previous_; }
bool NoGradGuard::active() { return no_grad; }

std::string Shape::str() const
{
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(d) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, bool requires_grad, float fill) : node_(std::make_shared<Node>())
{
    if (shape.n < 1 || shape.c < 1 || shape.d < 1 || shape.h < 1 || shape.w < 1)
        throw DomainError("tensor shape must be positive: " + shape.str());
    node_->shape = shape;
    node_->values.assign(shape.numel(), fill);
    node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad)
    : Tensor(shape, requires_grad)
{
    if (values.size() != shape.numel())
        throw DomainError("tensor value count does not match shape " + shape.str());
    node_->values = std::move(values);
}

float Tensor::item() const
{
    if (numel() != 1)
        throw DomainError("item() needs a single-element tensor");
    return node_->values[0];
}

std::span<float> Tensor::grad() { return node_->ensure_grad(); }

void Tensor::zero_grad()
{
    if (!node_->grad.empty())
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const
{
    return Tensor(node_->shape, node_->values, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<float> values,
                           std::initializer_list<const Tensor*> inputs,
                           std::function<void(Node&)> fn)
{
    Tensor out(shape, std::move(values), false);
    if (no_grad)
        return out;
    for (const Tensor* in : inputs)
        if (in->defined() && in->requires_grad()) {
            out.node_->requires_grad = true;
            break;
        }
    if (out.node_->requires_grad) {
        for (const Tensor* in : inputs)
            out.node_->parents.push_back(in->node_);
        out.node_->backward_fn = std::move(fn);
    }
    return out;
}

void Tensor::backward()
{
    if (numel() != 1)
        throw DomainError("backward() needs a scalar tensor");
    if (!node_->requires_grad)
        return;

    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->ensure_grad()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty())
            n->backward_fn(*n);
    }
}

}  // namespace volseg::nn
