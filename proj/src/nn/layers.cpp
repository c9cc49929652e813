#include "spinterp/nn/layers.hpp"

#include <cmath>

namespace spinterp::nn {

void init_normal(Parameter& p, Rng& rng, double std) {
    for (double& v : p.value.data) v = std * rng.normal();
}

Linear Linear::create(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, double init_scale) {
    Linear l;
    l.weight = &store.add(name + ".w", {in, out});
    l.bias = &store.add(name + ".b", {out});
    init_normal(*l.weight, rng, init_scale / std::sqrt(static_cast<double>(in)));
    return l;
}

Var Linear::operator()(Graph& g, Var x) const { return g.linear(x, g.param(*weight), g.param(*bias)); }

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, int width) {
    LayerNorm l;
    l.gamma = &store.add(name + ".gamma", {width});
    l.beta = &store.add(name + ".beta", {width});
    std::fill(l.gamma->value.data.begin(), l.gamma->value.data.end(), 1.0);
    return l;
}

Var LayerNorm::operator()(Graph& g, Var x) const { return g.layer_norm(x, g.param(*gamma), g.param(*beta)); }

void AttentionConfig::validate() const {
    if (d_model <= 0 || heads <= 0 || layers < 0 || ff_dim <= 0)
        throw ValidationError("attention config: sizes must be positive");
    if (d_model % heads != 0)
        throw ValidationError("attention config: d_model " + std::to_string(d_model) + " not divisible by heads " +
                              std::to_string(heads));
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name, int d_model, int heads,
                                              Rng& rng) {
    if (d_model % heads != 0) throw ValidationError("attention: d_model not divisible by heads");
    MultiHeadAttention m;
    m.q = Linear::create(store, name + ".q", d_model, d_model, rng);
    m.k = Linear::create(store, name + ".k", d_model, d_model, rng);
    m.v = Linear::create(store, name + ".v", d_model, d_model, rng);
    m.o = Linear::create(store, name + ".o", d_model, d_model, rng);
    m.d_model = d_model;
    m.heads = heads;
    return m;
}

MultiHeadAttention::Result MultiHeadAttention::operator()(Graph& g, Var queries, Var keys_values, int batch, int seq_q,
                                                          int seq_kv) const {
    const auto& qs = g.shape(queries);
    const auto& ks = g.shape(keys_values);
    if (qs.size() != 2 || ks.size() != 2 || qs[1] != d_model || ks[1] != d_model || qs[0] != batch * seq_q ||
        ks[0] != batch * seq_kv)
        throw std::invalid_argument("attention: shape mismatch " + shape_str(qs) + " / " + shape_str(ks));
    const int dh = d_model / heads;
    Var qh = g.split_heads(q(g, queries), batch, seq_q, heads);
    Var kh = g.split_heads(k(g, keys_values), batch, seq_kv, heads);
    Var vh = g.split_heads(v(g, keys_values), batch, seq_kv, heads);
    Var scores = g.scale(g.bmm(qh, kh, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var weights = g.softmax_lastdim(scores);
    Var ctx = g.merge_heads(g.bmm(weights, vh), batch, seq_q, heads);
    return {o(g, ctx), weights};
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, int d_model, int hidden, Rng& rng) {
    return {Linear::create(store, name + ".in", d_model, hidden, rng), Linear::create(store, name + ".out", hidden, d_model, rng)};
}

Var FeedForward::operator()(Graph& g, Var x) const { return out(g, g.gelu(in(g, x))); }

EncoderLayer EncoderLayer::create(ParameterStore& store, const std::string& name, const AttentionConfig& cfg, Rng& rng) {
    EncoderLayer l;
    l.ln1 = LayerNorm::create(store, name + ".ln1", cfg.d_model);
    l.attn = MultiHeadAttention::create(store, name + ".attn", cfg.d_model, cfg.heads, rng);
    l.ln2 = LayerNorm::create(store, name + ".ln2", cfg.d_model);
    l.ff = FeedForward::create(store, name + ".ff", cfg.d_model, cfg.ff_dim, rng);
    return l;
}

Var EncoderLayer::operator()(Graph& g, Var x, int batch, int seq) const {
    Var h = ln1(g, x);
    x = g.add(x, attn(g, h, h, batch, seq, seq).output);
    return g.add(x, ff(g, ln2(g, x)));
}

DecoderLayer DecoderLayer::create(ParameterStore& store, const std::string& name, const AttentionConfig& cfg, Rng& rng) {
    DecoderLayer l;
    l.ln1 = LayerNorm::create(store, name + ".ln1", cfg.d_model);
    l.self_attn = MultiHeadAttention::create(store, name + ".self", cfg.d_model, cfg.heads, rng);
    l.ln2 = LayerNorm::create(store, name + ".ln2", cfg.d_model);
    l.cross_attn = MultiHeadAttention::create(store, name + ".cross", cfg.d_model, cfg.heads, rng);
    l.ln3 = LayerNorm::create(store, name + ".ln3", cfg.d_model);
    l.ff = FeedForward::create(store, name + ".ff", cfg.d_model, cfg.ff_dim, rng);
    return l;
}

Var DecoderLayer::operator()(Graph& g, Var x, Var memory, int batch, int seq, int memory_len) const {
    Var h = ln1(g, x);
    x = g.add(x, self_attn(g, h, h, batch, seq, seq).output);
    x = g.add(x, cross_attn(g, ln2(g, x), memory, batch, seq, memory_len).output);
    return g.add(x, ff(g, ln3(g, x)));
}

ConvBlock ConvBlock::create(ParameterStore& store, const std::string& name, int in_ch, int out_ch, int stride, Rng& rng) {
    ConvBlock b;
    b.weight = &store.add(name + ".w", {out_ch, in_ch, 3, 3});
    b.bias = &store.add(name + ".b", {out_ch});
    b.gamma = &store.add(name + ".gamma", {out_ch});
    b.beta = &store.add(name + ".beta", {out_ch});
    init_normal(*b.weight, rng, std::sqrt(2.0 / (9.0 * in_ch)));
    std::fill(b.gamma->value.data.begin(), b.gamma->value.data.end(), 1.0);
    b.in_ch = in_ch;
    b.out_ch = out_ch;
    b.stride = stride;
    return b;
}

Var ConvBlock::operator()(Graph& g, Var x) const {
    Var y = g.conv2d(x, g.param(*weight), g.param(*bias), stride, 1);
    y = g.gelu(g.channel_norm(y, g.param(*gamma), g.param(*beta)));
    if (g.shape(y) == g.shape(x)) y = g.add(y, x);
    return y;
}

Conv Conv::create(ParameterStore& store, const std::string& name, int in_ch, int out_ch, int stride, Rng& rng) {
    Conv c;
    c.weight = &store.add(name + ".w", {out_ch, in_ch, 3, 3});
    c.bias = &store.add(name + ".b", {out_ch});
    init_normal(*c.weight, rng, std::sqrt(1.0 / (9.0 * in_ch)));
    c.stride = stride;
    return c;
}

Var Conv::operator()(Graph& g, Var x) const { return g.conv2d(x, g.param(*weight), g.param(*bias), stride, 1); }

}  // namespace spinterp::nn
