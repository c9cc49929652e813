#include "spinterp/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spinterp/dlm.hpp"
#include "spinterp/nn/kernels.hpp"

namespace spinterp::nn {

// ---------------------------------------------------------------------------
// Tensor / ParameterStore
// ---------------------------------------------------------------------------

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
    return s + "]";
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) + " != numel" + shape_str(shape));
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Parameter& ParameterStore::add(const std::string& name, Shape shape) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor(shape);
    p->grad = Tensor(std::move(shape));
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return *p;
    throw std::out_of_range("no parameter named '" + name + "'");
}

const Parameter& ParameterStore::get(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return *p;
    throw std::out_of_range("no parameter named '" + name + "'");
}

bool ParameterStore::contains(const std::string& name) const {
    return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p->name == name; });
}

std::size_t ParameterStore::total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Graph plumbing
// ---------------------------------------------------------------------------

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    require(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

Var Graph::push(const std::string& op, std::vector<Var> parents, Tensor value, BackwardFn backward) {
    if (!value.all_finite())
        throw NumericalError("non-finite value produced by op '" + op + "' (node " + std::to_string(nodes_.size()) + ")");
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (Var p : parents) n.parents.push_back(p.id);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Tensor value) { return push("input", {}, std::move(value), nullptr); }

Var Graph::param(Parameter& p) {
    Var v = push("param:" + p.name, {}, p.value, nullptr);
    nodes_[v.id].param = &p;
    return v;
}

Var Graph::custom(const std::string& op, std::vector<Var> parents, Tensor value, BackwardFn backward) {
    return push(op, std::move(parents), std::move(value), std::move(backward));
}

std::span<double> Graph::grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

Tensor Graph::grad(Var v) const {
    const Node& n = node(v);
    Tensor t(n.value.shape);
    if (!n.grad.empty()) t.data = n.grad;
    return t;
}

void Graph::backward(Var loss) {
    Node& root = node(loss);
    if (root.value.size() != 1) throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(root.value.shape));
    for (auto& n : nodes_) n.grad.clear();
    root.grad.assign(1, 1.0);
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) continue;
        if (!std::all_of(n.grad.begin(), n.grad.end(), [](double v) { return std::isfinite(v); }))
            throw NumericalError("non-finite gradient at op '" + n.op + "' (node " + std::to_string(id) + ")");
        if (n.param) {
            auto& g = n.param->grad.data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        } else if (n.backward) {
            n.backward(*this, id);
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise / structural
// ---------------------------------------------------------------------------

Var Graph::add(Var a, Var b) {
    require_same_shape(shape(a), shape(b), "add");
    Tensor out = value(a);
    const auto& bv = value(b).data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
    return push("add", {a, b}, std::move(out), [a, b](Graph& g, int self) {
        auto go = g.out_grad(self);
        for (Var p : {a, b}) {
            auto gp = g.grad_buffer(p);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[i];
        }
    });
}

Var Graph::sub(Var a, Var b) {
    require_same_shape(shape(a), shape(b), "sub");
    Tensor out = value(a);
    const auto& bv = value(b).data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
    return push("sub", {a, b}, std::move(out), [a, b](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
        auto gb = g.grad_buffer(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    });
}

Var Graph::mul(Var a, Var b) {
    require_same_shape(shape(a), shape(b), "mul");
    Tensor out = value(a);
    const auto& bv = value(b).data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
    return push("mul", {a, b}, std::move(out), [a, b](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto av = g.data(a);
        auto bv = g.data(b);
        auto ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
        auto gb = g.grad_buffer(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
    });
}

Var Graph::scale(Var a, double c) {
    Tensor out = value(a);
    for (double& v : out.data) v *= c;
    return push("scale", {a}, std::move(out), [a, c](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * go[i];
    });
}

Var Graph::add_row(Var x, Var bias) {
    const auto& xs = shape(x);
    require(xs.size() == 2 && shape(bias) == Shape{xs[1]}, "add_row: expected x[N,C] and bias[C], got " + shape_str(xs) +
                                                               " and " + shape_str(shape(bias)));
    const int N = xs[0], C = xs[1];
    Tensor out = value(x);
    const auto& bv = value(bias).data;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) out.data[static_cast<std::size_t>(n) * C + c] += bv[c];
    return push("add_row", {x, bias}, std::move(out), [x, bias, N, C](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto gx = g.grad_buffer(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
        auto gb = g.grad_buffer(bias);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) gb[c] += go[static_cast<std::size_t>(n) * C + c];
    });
}

Var Graph::exp(Var a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::exp(v);
    return push("exp", {a}, std::move(out), [a](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto y = g.nodes_[self].value.data;
        auto ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * y[i];
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var Graph::gelu(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    return push("gelu", {a}, std::move(out), [a](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto xv = g.data(a);
        auto ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double x = xv[i];
            const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
            const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
            ga[i] += go[i] * d;
        }
    });
}

Var Graph::reshape(Var a, Shape new_shape) {
    require(numel(new_shape) == value(a).size(), "reshape: " + shape_str(shape(a)) + " -> " + shape_str(new_shape));
    Tensor out(std::move(new_shape), value(a).data);
    return push("reshape", {a}, std::move(out), [a](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    });
}

Var Graph::sum(Var a) {
    double s = 0.0;
    for (double v : value(a).data) s += v;
    return push("sum", {a}, Tensor({1}, {s}), [a](Graph& g, int self) {
        const double go = g.out_grad(self)[0];
        auto ga = g.grad_buffer(a);
        for (double& v : ga) v += go;
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Var Graph::matmul(Var a, Var b, bool trans_b) {
    const auto& as = shape(a);
    const auto& bs = shape(b);
    require(as.size() == 2 && bs.size() == 2, "matmul: expected 2-D operands");
    const int m = as[0], k = as[1];
    const int n = trans_b ? bs[0] : bs[1];
    require((trans_b ? bs[1] : bs[0]) == k, "matmul: inner dimension mismatch " + shape_str(as) + " x " + shape_str(bs));
    Tensor out({m, n});
    kernels::parallel::matmul(value(a).data, value(b).data, out.data, {m, k, n, false, trans_b, false});
    return push("matmul", {a, b}, std::move(out), [a, b, m, k, n, trans_b](Graph& g, int self) {
        auto go = g.out_grad(self);
        // dA[m,k] = dC[m,n] * op(B)^T
        kernels::parallel::matmul(go, g.data(b), g.grad_buffer(a), {m, n, k, false, !trans_b, true});
        if (!trans_b)  // dB[k,n] = A^T dC
            kernels::parallel::matmul(g.data(a), go, g.grad_buffer(b), {k, m, n, true, false, true});
        else  // dB[n,k] = dC^T A
            kernels::parallel::matmul(go, g.data(a), g.grad_buffer(b), {n, m, k, true, false, true});
    });
}

Var Graph::linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var Graph::bmm(Var a, Var b, bool trans_b) {
    const auto& as = shape(a);
    const auto& bs = shape(b);
    require(as.size() == 3 && bs.size() == 3 && as[0] == bs[0], "bmm: expected [G,m,k] and [G,k,n]");
    const int G = as[0], m = as[1], k = as[2];
    const int n = trans_b ? bs[1] : bs[2];
    require((trans_b ? bs[2] : bs[1]) == k, "bmm: inner dimension mismatch " + shape_str(as) + " x " + shape_str(bs));
    Tensor out({G, m, n});
    const auto& av = value(a).data;
    const auto& bv = value(b).data;
    const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * n,
                      sc = static_cast<std::size_t>(m) * n;
#pragma omp parallel for schedule(static)
    for (int gi = 0; gi < G; ++gi)
        kernels::serial::matmul(std::span(av).subspan(gi * sa, sa), std::span(bv).subspan(gi * sb, sb),
                                std::span(out.data).subspan(gi * sc, sc), {m, k, n, false, trans_b, false});
    return push("bmm", {a, b}, std::move(out), [a, b, G, m, k, n, trans_b, sa, sb, sc](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto av = g.data(a);
        auto bv = g.data(b);
        auto ga = g.grad_buffer(a);
        auto gb = g.grad_buffer(b);
#pragma omp parallel for schedule(static)
        for (int gi = 0; gi < G; ++gi) {
            auto gc = go.subspan(gi * sc, sc);
            kernels::serial::matmul(gc, bv.subspan(gi * sb, sb), ga.subspan(gi * sa, sa), {m, n, k, false, !trans_b, true});
            if (!trans_b)
                kernels::serial::matmul(av.subspan(gi * sa, sa), gc, gb.subspan(gi * sb, sb), {k, m, n, true, false, true});
            else
                kernels::serial::matmul(gc, av.subspan(gi * sa, sa), gb.subspan(gi * sb, sb), {n, m, k, true, false, true});
        }
    });
}

Var Graph::softmax_lastdim(Var a) {
    const auto& s = shape(a);
    require(!s.empty(), "softmax: scalar input");
    const int C = s.back();
    const std::size_t rows = value(a).size() / static_cast<std::size_t>(C);
    Tensor out = value(a);
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.data.data() + r * C;
        const double mx = *std::max_element(row, row + C);
        double total = 0.0;
        for (int c = 0; c < C; ++c) total += (row[c] = std::exp(row[c] - mx));
        for (int c = 0; c < C; ++c) row[c] /= total;
    }
    return push("softmax", {a}, std::move(out), [a, C, rows](Graph& g, int self) {
        auto go = g.out_grad(self);
        const auto& y = g.nodes_[self].value.data;
        auto ga = g.grad_buffer(a);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int c = 0; c < C; ++c) dot += go[r * C + c] * y[r * C + c];
            for (int c = 0; c < C; ++c) ga[r * C + c] += y[r * C + c] * (go[r * C + c] - dot);
        }
    });
}

namespace {

// Shared normalization kernel: rows of length `len`, affine index = channel_of(i).
struct NormStats {
    std::vector<double> xhat;
    std::vector<double> inv_std;  // per row
};

template <class ChannelOf>
NormStats normalize_rows(const std::vector<double>& x, std::size_t rows, std::size_t len, double eps, const std::vector<double>& gamma,
                         const std::vector<double>& beta, std::vector<double>& out, ChannelOf channel_of) {
    NormStats st;
    st.xhat.resize(x.size());
    st.inv_std.resize(rows);
    out.resize(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * len;
        double mean = 0.0;
        for (std::size_t i = 0; i < len; ++i) mean += xr[i];
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (std::size_t i = 0; i < len; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<double>(len);
        const double inv = 1.0 / std::sqrt(var + eps);
        st.inv_std[r] = inv;
        for (std::size_t i = 0; i < len; ++i) {
            const double xh = (xr[i] - mean) * inv;
            st.xhat[r * len + i] = xh;
            const std::size_t c = channel_of(i);
            out[r * len + i] = gamma[c] * xh + beta[c];
        }
    }
    return st;
}

template <class ChannelOf>
void normalize_rows_backward(std::span<const double> go, const NormStats& st, std::size_t rows, std::size_t len,
                             const std::vector<double>& gamma, std::span<double> gx, std::span<double> ggamma,
                             std::span<double> gbeta, ChannelOf channel_of) {
    std::vector<double> gxh(len);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean_g = 0.0, mean_gx = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t c = channel_of(i);
            const double gi = go[r * len + i];
            ggamma[c] += gi * st.xhat[r * len + i];
            gbeta[c] += gi;
            gxh[i] = gi * gamma[c];
            mean_g += gxh[i];
            mean_gx += gxh[i] * st.xhat[r * len + i];
        }
        mean_g /= static_cast<double>(len);
        mean_gx /= static_cast<double>(len);
        for (std::size_t i = 0; i < len; ++i)
            gx[r * len + i] += st.inv_std[r] * (gxh[i] - mean_g - st.xhat[r * len + i] * mean_gx);
    }
}

}  // namespace

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const auto& xs = shape(x);
    require(!xs.empty() && shape(gamma) == Shape{xs.back()} && shape(beta) == Shape{xs.back()},
            "layer_norm: gamma/beta must match the last dimension of " + shape_str(xs));
    const std::size_t len = static_cast<std::size_t>(xs.back());
    const std::size_t rows = value(x).size() / len;
    Tensor out(xs);
    auto st = std::make_shared<NormStats>(normalize_rows(value(x).data, rows, len, eps, value(gamma).data, value(beta).data,
                                                         out.data, [](std::size_t i) { return i; }));
    return push("layer_norm", {x, gamma, beta}, std::move(out), [x, gamma, beta, st, rows, len](Graph& g, int self) {
        normalize_rows_backward(g.out_grad(self), *st, rows, len, g.value(gamma).data, g.grad_buffer(x), g.grad_buffer(gamma),
                                g.grad_buffer(beta), [](std::size_t i) { return i; });
    });
}

Var Graph::channel_norm(Var x, Var gamma, Var beta, double eps) {
    const auto& xs = shape(x);
    require(xs.size() == 4 && shape(gamma) == Shape{xs[1]} && shape(beta) == Shape{xs[1]},
            "channel_norm: expected x[B,C,H,W] with gamma/beta[C], got " + shape_str(xs));
    const std::size_t plane = static_cast<std::size_t>(xs[2]) * xs[3];
    const std::size_t len = plane * xs[1];
    const std::size_t rows = static_cast<std::size_t>(xs[0]);
    auto channel_of = [plane](std::size_t i) { return i / plane; };
    Tensor out(xs);
    auto st = std::make_shared<NormStats>(
        normalize_rows(value(x).data, rows, len, eps, value(gamma).data, value(beta).data, out.data, channel_of));
    return push("channel_norm", {x, gamma, beta}, std::move(out), [x, gamma, beta, st, rows, len, channel_of](Graph& g, int self) {
        normalize_rows_backward(g.out_grad(self), *st, rows, len, g.value(gamma).data, g.grad_buffer(x), g.grad_buffer(gamma),
                                g.grad_buffer(beta), channel_of);
    });
}

// ---------------------------------------------------------------------------
// Sequence helpers
// ---------------------------------------------------------------------------

Var Graph::split_heads(Var x, int batch, int seq, int heads) {
    const auto& xs = shape(x);
    require(xs.size() == 2 && xs[0] == batch * seq && xs[1] % heads == 0,
            "split_heads: expected [B*S, d] with d divisible by heads, got " + shape_str(xs));
    const int d = xs[1], dh = d / heads;
    Tensor out({batch * heads, seq, dh});
    const auto& xv = value(x).data;
    auto index = [=](int b, int s, int h, int j) {
        return std::pair<std::size_t, std::size_t>{(static_cast<std::size_t>(b) * seq + s) * d + h * dh + j,
                                                   ((static_cast<std::size_t>(b) * heads + h) * seq + s) * dh + j};
    };
    for (int b = 0; b < batch; ++b)
        for (int s = 0; s < seq; ++s)
            for (int h = 0; h < heads; ++h)
                for (int j = 0; j < dh; ++j) {
                    auto [src, dst] = index(b, s, h, j);
                    out.data[dst] = xv[src];
                }
    return push("split_heads", {x}, std::move(out), [x, batch, seq, heads, dh, index](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto gx = g.grad_buffer(x);
        for (int b = 0; b < batch; ++b)
            for (int s = 0; s < seq; ++s)
                for (int h = 0; h < heads; ++h)
                    for (int j = 0; j < dh; ++j) {
                        auto [src, dst] = index(b, s, h, j);
                        gx[src] += go[dst];
                    }
    });
}

Var Graph::merge_heads(Var x, int batch, int seq, int heads) {
    const auto& xs = shape(x);
    require(xs.size() == 3 && xs[0] == batch * heads && xs[1] == seq, "merge_heads: expected [B*h, S, dh], got " + shape_str(xs));
    const int dh = xs[2], d = dh * heads;
    Tensor out({batch * seq, d});
    const auto& xv = value(x).data;
    auto index = [=](int b, int s, int h, int j) {
        return std::pair<std::size_t, std::size_t>{((static_cast<std::size_t>(b) * heads + h) * seq + s) * dh + j,
                                                   (static_cast<std::size_t>(b) * seq + s) * d + h * dh + j};
    };
    for (int b = 0; b < batch; ++b)
        for (int s = 0; s < seq; ++s)
            for (int h = 0; h < heads; ++h)
                for (int j = 0; j < dh; ++j) {
                    auto [src, dst] = index(b, s, h, j);
                    out.data[dst] = xv[src];
                }
    return push("merge_heads", {x}, std::move(out), [x, batch, seq, heads, dh, index](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto gx = g.grad_buffer(x);
        for (int b = 0; b < batch; ++b)
            for (int s = 0; s < seq; ++s)
                for (int h = 0; h < heads; ++h)
                    for (int j = 0; j < dh; ++j) {
                        auto [src, dst] = index(b, s, h, j);
                        gx[src] += go[dst];
                    }
    });
}

Var Graph::gather_rows(Var x, std::vector<int> rows) {
    const auto& xs = shape(x);
    require(xs.size() == 2, "gather_rows: expected a 2-D input");
    const int N = xs[0], d = xs[1];
    for (int r : rows) require(r >= 0 && r < N, "gather_rows: row " + std::to_string(r) + " out of range");
    Tensor out({static_cast<int>(rows.size()), d});
    const auto& xv = value(x).data;
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[i]) * d, d, out.data.begin() + static_cast<std::ptrdiff_t>(i) * d);
    return push("gather_rows", {x}, std::move(out), [x, rows = std::move(rows), d](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto gx = g.grad_buffer(x);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (int j = 0; j < d; ++j) gx[static_cast<std::size_t>(rows[i]) * d + j] += go[i * d + j];
    });
}

Var Graph::slice_cols(Var x, int begin, int end) {
    const auto& xs = shape(x);
    require(xs.size() == 2 && 0 <= begin && begin < end && end <= xs[1], "slice_cols: bad range for " + shape_str(xs));
    const int N = xs[0], C = xs[1], W = end - begin;
    Tensor out({N, W});
    const auto& xv = value(x).data;
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < W; ++j) out.data[static_cast<std::size_t>(n) * W + j] = xv[static_cast<std::size_t>(n) * C + begin + j];
    return push("slice_cols", {x}, std::move(out), [x, N, C, W, begin](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto gx = g.grad_buffer(x);
        for (int n = 0; n < N; ++n)
            for (int j = 0; j < W; ++j) gx[static_cast<std::size_t>(n) * C + begin + j] += go[static_cast<std::size_t>(n) * W + j];
    });
}

Var Graph::repeat_rows(Var x, int times) {
    const auto& xs = shape(x);
    require(xs.size() == 2 && times >= 1, "repeat_rows: expected a 2-D input and times >= 1");
    const std::size_t block = value(x).size();
    Tensor out({xs[0] * times, xs[1]});
    for (int t = 0; t < times; ++t) std::copy(value(x).data.begin(), value(x).data.end(), out.data.begin() + t * block);
    return push("repeat_rows", {x}, std::move(out), [x, times, block](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto gx = g.grad_buffer(x);
        for (int t = 0; t < times; ++t)
            for (std::size_t i = 0; i < block; ++i) gx[i] += go[t * block + i];
    });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

Var Graph::conv2d(Var x, Var weight, Var bias, int stride, int pad) {
    const auto& xs = shape(x);
    const auto& ws = shape(weight);
    require(xs.size() == 4 && ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3] && shape(bias) == Shape{ws[0]},
            "conv2d: expected x[B,C,H,W], w[O,C,k,k], b[O]; got " + shape_str(xs) + ", " + shape_str(ws));
    kernels::ConvShape cs{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad};
    require(cs.out_h() > 0 && cs.out_w() > 0, "conv2d: empty output");
    Tensor out({cs.batch, cs.out_ch, cs.out_h(), cs.out_w()});
    kernels::parallel::conv2d_forward(value(x).data, value(weight).data, value(bias).data, out.data, cs);
    return push("conv2d", {x, weight, bias}, std::move(out), [x, weight, bias, cs](Graph& g, int self) {
        auto go = g.out_grad(self);
        kernels::parallel::conv2d_backward_input(go, g.data(weight), g.grad_buffer(x), cs);
        kernels::parallel::conv2d_backward_weight(go, g.data(x), g.grad_buffer(weight), g.grad_buffer(bias), cs);
    });
}

Var Graph::upsample2x(Var x) {
    const auto& xs = shape(x);
    require(xs.size() == 4, "upsample2x: expected NCHW");
    const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    Tensor out({B, C, 2 * H, 2 * W});
    const auto& xv = value(x).data;
    for (int p = 0; p < B * C; ++p)
        for (int y = 0; y < 2 * H; ++y)
            for (int xx = 0; xx < 2 * W; ++xx)
                out.data[(static_cast<std::size_t>(p) * 2 * H + y) * 2 * W + xx] =
                    xv[(static_cast<std::size_t>(p) * H + y / 2) * W + xx / 2];
    return push("upsample2x", {x}, std::move(out), [x, B, C, H, W](Graph& g, int self) {
        auto go = g.out_grad(self);
        auto gx = g.grad_buffer(x);
        for (int p = 0; p < B * C; ++p)
            for (int y = 0; y < 2 * H; ++y)
                for (int xx = 0; xx < 2 * W; ++xx)
                    gx[(static_cast<std::size_t>(p) * H + y / 2) * W + xx / 2] +=
                        go[(static_cast<std::size_t>(p) * 2 * H + y) * 2 * W + xx];
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Var Graph::softmax_cross_entropy(Var logits, std::vector<int> targets) {
    const auto& ls = shape(logits);
    require(ls.size() == 2 && static_cast<int>(targets.size()) == ls[0], "softmax_cross_entropy: expected logits[N,C] and N targets");
    const int N = ls[0], C = ls[1];
    for (int t : targets)
        if (t < 0 || t >= C) throw std::out_of_range("softmax_cross_entropy: class " + std::to_string(t) + " outside [0, " + std::to_string(C) + ")");
    const auto& lv = value(logits).data;
    auto probs = std::make_shared<std::vector<double>>(lv.size());
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        const double* row = lv.data() + static_cast<std::size_t>(n) * C;
        const double mx = *std::max_element(row, row + C);
        double total = 0.0;
        for (int c = 0; c < C; ++c) total += std::exp(row[c] - mx);
        const double lse = mx + std::log(total);
        for (int c = 0; c < C; ++c) (*probs)[static_cast<std::size_t>(n) * C + c] = std::exp(row[c] - lse);
        loss += lse - row[targets[n]];
    }
    return push("softmax_cross_entropy", {logits}, Tensor({1}, {loss}), [logits, probs, targets = std::move(targets), N, C](Graph& g, int self) {
        const double go = g.out_grad(self)[0];
        auto gl = g.grad_buffer(logits);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t i = static_cast<std::size_t>(n) * C + c;
                gl[i] += go * ((*probs)[i] - (c == targets[n] ? 1.0 : 0.0));
            }
    });
}

Var Graph::gaussian_nll(Var prediction, const Tensor& target) {
    require_same_shape(shape(prediction), target.shape, "gaussian_nll");
    const auto& pv = value(prediction).data;
    double loss = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) loss += 0.5 * (pv[i] - target.data[i]) * (pv[i] - target.data[i]);
    return push("gaussian_nll", {prediction}, Tensor({1}, {loss}), [prediction, target](Graph& g, int self) {
        const double go = g.out_grad(self)[0];
        auto pv = g.data(prediction);
        auto gp = g.grad_buffer(prediction);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go * (pv[i] - target.data[i]);
    });
}

Var Graph::kl_divergence(Var mu, Var logvar) {
    require_same_shape(shape(mu), shape(logvar), "kl_divergence");
    const auto& m = value(mu).data;
    const auto& lv = value(logvar).data;
    double kl = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) kl += 0.5 * (m[i] * m[i] + std::exp(lv[i]) - 1.0 - lv[i]);
    return push("kl_divergence", {mu, logvar}, Tensor({1}, {kl}), [mu, logvar](Graph& g, int self) {
        const double go = g.out_grad(self)[0];
        auto m = g.data(mu);
        auto lv = g.data(logvar);
        auto gm = g.grad_buffer(mu);
        for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += go * m[i];
        auto gl = g.grad_buffer(logvar);
        for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += go * 0.5 * (std::exp(lv[i]) - 1.0);
    });
}

Var Graph::dlm_nll(Var heads, int components, const QuantGrid& grid, std::vector<int> bins) {
    const auto& hs = shape(heads);
    require(hs.size() == 2 && hs[1] == 3 * components && static_cast<int>(bins.size()) == hs[0],
            "dlm_nll: expected heads[N, 3K] and N bins, got " + shape_str(hs));
    const int N = hs[0], W = hs[1];
    auto grads = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * W);
    const auto& hv = value(heads).data;
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        const auto row = std::span(hv).subspan(static_cast<std::size_t>(n) * W, W);
        loss -= dlm::head_log_prob(row, components, grid, bins[n], std::span(*grads).subspan(static_cast<std::size_t>(n) * W, W));
    }
    return push("dlm_nll", {heads}, Tensor({1}, {loss}), [heads, grads](Graph& g, int self) {
        const double go = g.out_grad(self)[0];
        auto gh = g.grad_buffer(heads);
        for (std::size_t i = 0; i < gh.size(); ++i) gh[i] -= go * (*grads)[i];
    });
}

}  // namespace spinterp::nn
