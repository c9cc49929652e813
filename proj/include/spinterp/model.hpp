#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "spinterp/fm_synth.hpp"
#include "spinterp/nn/checkpoint.hpp"
#include "spinterp/nn/graph.hpp"
#include "spinterp/nn/layers.hpp"
#include "spinterp/preset_schema.hpp"

namespace spinterp {

enum class EncoderMode { Bimodal, PresetOnly, SoundMatching };
enum class NumericalHead { Dlm, Softmax };

std::string to_string(EncoderMode m);
std::string to_string(NumericalHead h);
EncoderMode parse_encoder_mode(std::string_view s);
NumericalHead parse_numerical_head(std::string_view s);

struct ModelConfig {
    int latent_dim = 32;
    nn::AttentionConfig attention{};  // layers = encoder depth
    int decoder_layers = 2;
    int memory_tokens = 1;
    int mixture = 3;
    NumericalHead numerical_head = NumericalHead::Dlm;
    EncoderMode mode = EncoderMode::Bimodal;
    double beta = 2e-3;
    int spec_height = 64;  // mel bins
    int spec_width = 64;   // frames

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(std::string_view text);
};

/// Differentiable views of one batch. Spectrograms may be null in PresetOnly mode.
struct Batch {
    std::vector<const Spectrogram*> x;
    std::vector<const Preset*> u;

    int size() const { return static_cast<int>(u.size()); }
};

struct Posterior {
    nn::Var mu;      // [B, D]
    nn::Var logvar;  // [B, D]
};

/// Batch-mean loss terms, all scalars.
struct LossVars {
    nn::Var total, kl, audio_nll, preset_nll;
};

struct LossValues {
    double total = 0, kl = 0, audio_nll = 0, preset_nll = 0;
};

class SpinVae {
public:
    SpinVae(const SynthDescriptor& descriptor, ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const SynthDescriptor& descriptor() const { return descriptor_; }
    nn::ParameterStore& parameters() { return store_; }
    const nn::ParameterStore& parameters() const { return store_; }

    /// Token sequence [B*(P+2), d]; positions P and P+1 hold e_mu and e_sigma.
    nn::Var embed_preset(nn::Graph& g, const std::vector<const Preset*>& presets) const;
    /// Spectrogram batch as an image tensor [B, 1, H, W].
    nn::Tensor spectrogram_tensor(const std::vector<const Spectrogram*>& x) const;

    Posterior encode(nn::Graph& g, const Batch& batch) const { return encode(g, batch, config_.mode); }
    Posterior encode(nn::Graph& g, const Batch& batch, EncoderMode mode) const;
    /// z = mu + exp(logvar / 2) * eps.
    nn::Var reparameterize(nn::Graph& g, const Posterior& post, const nn::Tensor& eps) const;
    nn::Var decode_audio(nn::Graph& g, nn::Var z) const;   // [B, 1, H, W]
    nn::Var decode_preset(nn::Graph& g, nn::Var z) const;  // [B, head_total()]
    /// Sum over batch and parameters of the negative log-likelihood of the presets.
    nn::Var preset_nll(nn::Graph& g, nn::Var heads, const std::vector<const Preset*>& presets) const;

    /// Batch-mean training loss with explicit noise eps [B, D] (zeros => z = mu).
    LossVars loss(nn::Graph& g, const Batch& batch, const nn::Tensor& eps, double beta) const;
    LossVars loss(nn::Graph& g, const Batch& batch, Rng& rng, double beta) const;

    // Head layout within a decoded row.
    int head_offset(int param) const { return head_offsets_[param]; }
    int head_width(int param) const { return head_widths_[param]; }
    int head_total() const { return head_offsets_.back(); }

    // Inference (no gradients).
    /// Posterior means for each item; z = mu.
    std::vector<std::vector<double>> encode_means(const Batch& batch) const;
    /// Decoded head rows for each latent vector.
    std::vector<std::vector<double>> decode_heads(const std::vector<std::vector<double>>& zs) const;
    /// Head row -> on-grid preset: categorical argmax, numerical DLM mode (or argmax class).
    Preset preset_from_heads(std::span<const double> row) const;
    std::vector<Preset> decode(const std::vector<std::vector<double>>& zs) const;

    nn::Checkpoint to_checkpoint() const;
    /// Rebuilds the model from a checkpoint. Throws DescriptorMismatch when the
    /// descriptor hash differs.
    static SpinVae from_checkpoint(const nn::Checkpoint& ckpt, const SynthDescriptor& descriptor);
    void load_weights(const nn::Checkpoint& ckpt);

private:
    SynthDescriptor descriptor_;
    ModelConfig config_;
    nn::ParameterStore store_;

    std::vector<int> class_offsets_;  // row offset into the class table per categorical param
    std::vector<int> head_offsets_;   // P + 1 entries
    std::vector<int> head_widths_;

    // preset encoder
    nn::Parameter* pos_embed_ = nullptr;    // [P+2, d]
    nn::Parameter* class_embed_ = nullptr;  // [sum classes, d]
    nn::Parameter* num_weight_ = nullptr;   // [P, d]
    nn::Parameter* num_bias_ = nullptr;     // [P, d]
    std::vector<nn::EncoderLayer> encoder_layers_;
    nn::LayerNorm encoder_norm_;
    nn::Linear tok_mu_, tok_logvar_;

    // audio encoder
    std::vector<nn::ConvBlock> cnn_encoder_;
    nn::Linear cnn_out_;

    // audio decoder
    nn::Linear audio_in_;
    nn::ConvBlock audio_res_;
    std::vector<nn::ConvBlock> audio_up_;
    nn::Conv audio_out_;

    // preset decoder
    nn::Linear memory_proj_;
    nn::Parameter* queries_ = nullptr;  // [P, d]
    std::vector<nn::DecoderLayer> decoder_layers_;
    nn::LayerNorm decoder_norm_;
    nn::Parameter* head_weight_ = nullptr;  // [head_total, d]
    nn::Parameter* head_bias_ = nullptr;    // [head_total]

    int flat_features() const;
};

}  // namespace spinterp
