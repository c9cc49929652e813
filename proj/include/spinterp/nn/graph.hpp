#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spinterp/common.hpp"
#include "spinterp/nn/tensor.hpp"
#include "spinterp/preset_schema.hpp"

namespace spinterp::nn {

/// Trainable tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

/// Ordered parameter registry. Addresses are stable for the store's lifetime.
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) = default;
    ParameterStore& operator=(ParameterStore&&) = default;

    Parameter& add(const std::string& name, Shape shape);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::size_t size() const { return params_.size(); }
    std::size_t total_values() const;
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    void zero_grad();

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

/// Handle to a node of a Graph.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Tape of operations recorded during a forward pass. Nodes are appended in
/// execution order, so reverse creation order is a reverse topological order.
/// A graph is single-threaded; separate graphs may run concurrently.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var input(Tensor value);
    Var param(Parameter& p);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape; }
    /// Gradient of the last backward() target with respect to v (zeros if unreached).
    Tensor grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    /// Records a node whose backward pass is user supplied. The callback reads
    /// out_grad(self) and accumulates into grad_buffer(parent).
    Var custom(const std::string& op, std::vector<Var> parents, Tensor value, BackwardFn backward);
    std::span<const double> out_grad(int id) const { return nodes_[id].grad; }
    std::span<double> grad_buffer(Var v);
    std::span<const double> data(Var v) const { return nodes_.at(v.id).value.data; }

    // Elementwise / structural
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_row(Var x, Var bias);  // x[N, C] + bias[C]
    Var exp(Var a);
    Var gelu(Var a);   // tanh approximation
    Var reshape(Var a, Shape shape);
    Var sum(Var a);    // scalar

    // Linear algebra
    Var matmul(Var a, Var b, bool trans_b = false);          // [m,k] x [k,n]
    Var linear(Var x, Var weight, Var bias);                 // x[N,in] W[in,out] + b[out]
    Var bmm(Var a, Var b, bool trans_b = false);             // [G,m,k] x [G,k,n]
    Var softmax_lastdim(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);  // over the last dim

    // Sequence helpers
    Var split_heads(Var x, int batch, int seq, int heads);   // [B*S, d] -> [B*h, S, d/h]
    Var merge_heads(Var x, int batch, int seq, int heads);   // inverse
    Var gather_rows(Var x, std::vector<int> rows);           // [N, d] -> [len, d]
    Var slice_cols(Var x, int begin, int end);               // [N, C] -> [N, end-begin]
    Var repeat_rows(Var x, int times);                       // [R, d] -> [times*R, d]

    // Convolution
    Var conv2d(Var x, Var weight, Var bias, int stride, int pad);  // NCHW, square kernel
    Var upsample2x(Var x);                                         // nearest neighbour
    Var channel_norm(Var x, Var gamma, Var beta, double eps = 1e-5);  // per-sample over C,H,W; affine per channel

    // Losses (sum reduction, scalar output)
    Var softmax_cross_entropy(Var logits, std::vector<int> targets);  // logits[N, C]
    Var gaussian_nll(Var prediction, const Tensor& target);           // sum 0.5 (x_hat - x)^2
    Var kl_divergence(Var mu, Var logvar);                            // sum 0.5 (mu^2 + e^lv - 1 - lv)
    Var dlm_nll(Var heads, int components, const QuantGrid& grid, std::vector<int> bins);  // heads[N, 3K]

    /// Fills parameter gradients (accumulating into Parameter::grad). The loss
    /// must be a scalar.
    void backward(Var loss);

private:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<double> grad;  // empty until some gradient reaches the node
        std::vector<int> parents;
        BackwardFn backward;
        Parameter* param = nullptr;
    };

    Var push(const std::string& op, std::vector<Var> parents, Tensor value, BackwardFn backward);
    Node& node(Var v) { return nodes_.at(v.id); }
    const Node& node(Var v) const { return nodes_.at(v.id); }

    std::deque<Node> nodes_;
};

}  // namespace spinterp::nn
