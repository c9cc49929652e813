#pragma once

#include <string>

#include "spinterp/common.hpp"
#include "spinterp/nn/graph.hpp"

namespace spinterp::nn {

/// Fills a parameter with N(0, std^2) draws.
void init_normal(Parameter& p, Rng& rng, double std);

struct Linear {
    Parameter* weight = nullptr;  // [in, out]
    Parameter* bias = nullptr;    // [out]

    static Linear create(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, double init_scale = 1.0);
    Var operator()(Graph& g, Var x) const;
};

struct LayerNorm {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;

    static LayerNorm create(ParameterStore& store, const std::string& name, int width);
    Var operator()(Graph& g, Var x) const;
};

struct AttentionConfig {
    int d_model = 32;
    int heads = 4;
    int layers = 2;
    int ff_dim = 64;

    void validate() const;
};

/// Scaled dot-product attention over all positions (no masking).
struct MultiHeadAttention {
    Linear q, k, v, o;
    int d_model = 0;
    int heads = 0;

    struct Result {
        Var output;   // [B*Sq, d]
        Var weights;  // [B*h, Sq, Sk], row-stochastic
    };

    static MultiHeadAttention create(ParameterStore& store, const std::string& name, int d_model, int heads, Rng& rng);
    Result operator()(Graph& g, Var queries, Var keys_values, int batch, int seq_q, int seq_kv) const;
};

struct FeedForward {
    Linear in, out;
    static FeedForward create(ParameterStore& store, const std::string& name, int d_model, int hidden, Rng& rng);
    Var operator()(Graph& g, Var x) const;
};

/// Pre-norm Transformer encoder layer.
struct EncoderLayer {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ff;

    static EncoderLayer create(ParameterStore& store, const std::string& name, const AttentionConfig& cfg, Rng& rng);
    Var operator()(Graph& g, Var x, int batch, int seq) const;
};

/// Pre-norm decoder layer: self-attention, cross-attention to a memory, FFN.
struct DecoderLayer {
    LayerNorm ln1, ln2, ln3;
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ff;

    static DecoderLayer create(ParameterStore& store, const std::string& name, const AttentionConfig& cfg, Rng& rng);
    Var operator()(Graph& g, Var x, Var memory, int batch, int seq, int memory_len) const;
};

/// conv -> channel norm -> GELU, plus identity skip when input and output shapes match.
struct ConvBlock {
    Parameter* weight = nullptr;
    Parameter* bias = nullptr;
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    int in_ch = 0, out_ch = 0, stride = 1;

    static ConvBlock create(ParameterStore& store, const std::string& name, int in_ch, int out_ch, int stride, Rng& rng);
    Var operator()(Graph& g, Var x) const;
};

/// Plain 3x3 convolution (no norm, no activation).
struct Conv {
    Parameter* weight = nullptr;
    Parameter* bias = nullptr;
    int stride = 1;

    static Conv create(ParameterStore& store, const std::string& name, int in_ch, int out_ch, int stride, Rng& rng);
    Var operator()(Graph& g, Var x) const;
};

}  // namespace spinterp::nn
