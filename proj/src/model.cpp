#include "spinterp/model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include <json.hpp>

#include "spinterp/dlm.hpp"

namespace spinterp {

using nn::Graph;
using nn::Shape;
using nn::Tensor;
using nn::Var;
using json = nlohmann::json;

namespace {
constexpr int kCnnChannels = 32;
}

std::string to_string(EncoderMode m) {
    switch (m) {
        case EncoderMode::Bimodal: return "bimodal";
        case EncoderMode::PresetOnly: return "preset-only";
        case EncoderMode::SoundMatching: return "sound-matching";
    }
    return "?";
}

std::string to_string(NumericalHead h) { return h == NumericalHead::Dlm ? "dlm" : "softmax"; }

EncoderMode parse_encoder_mode(std::string_view s) {
    if (s == "bimodal") return EncoderMode::Bimodal;
    if (s == "preset-only") return EncoderMode::PresetOnly;
    if (s == "sound-matching") return EncoderMode::SoundMatching;
    throw ValidationError("unknown encoder mode '" + std::string(s) + "' (bimodal|preset-only|sound-matching)");
}

NumericalHead parse_numerical_head(std::string_view s) {
    if (s == "dlm") return NumericalHead::Dlm;
    if (s == "softmax") return NumericalHead::Softmax;
    throw ValidationError("unknown numerical head '" + std::string(s) + "' (dlm|softmax)");
}

void ModelConfig::validate() const {
    attention.validate();
    if (latent_dim <= 0) throw ValidationError("latent_dim must be positive");
    if (decoder_layers < 0 || memory_tokens < 1) throw ValidationError("decoder_layers >= 0 and memory_tokens >= 1 required");
    if (mixture < 2 || mixture > 4) throw ValidationError("mixture components must be in {2, 3, 4}");
    if (!(beta >= 0.0)) throw ValidationError("beta must be non-negative");
    if (spec_height <= 0 || spec_width <= 0 || spec_height % 16 != 0 || spec_width % 16 != 0)
        throw ValidationError("spectrogram dimensions must be positive multiples of 16");
}

std::string ModelConfig::to_json() const {
    json j;
    j["latent_dim"] = latent_dim;
    j["d_model"] = attention.d_model;
    j["heads"] = attention.heads;
    j["encoder_layers"] = attention.layers;
    j["ff_dim"] = attention.ff_dim;
    j["decoder_layers"] = decoder_layers;
    j["memory_tokens"] = memory_tokens;
    j["mixture"] = mixture;
    j["numerical_head"] = to_string(numerical_head);
    j["mode"] = to_string(mode);
    j["beta"] = beta;
    j["spec_height"] = spec_height;
    j["spec_width"] = spec_width;
    return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
    ModelConfig c;
    try {
        const json j = json::parse(text);
        c.latent_dim = j.value("latent_dim", c.latent_dim);
        c.attention.d_model = j.value("d_model", c.attention.d_model);
        c.attention.heads = j.value("heads", c.attention.heads);
        c.attention.layers = j.value("encoder_layers", c.attention.layers);
        c.attention.ff_dim = j.value("ff_dim", c.attention.ff_dim);
        c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
        c.memory_tokens = j.value("memory_tokens", c.memory_tokens);
        c.mixture = j.value("mixture", c.mixture);
        c.numerical_head = parse_numerical_head(j.value("numerical_head", std::string("dlm")));
        c.mode = parse_encoder_mode(j.value("mode", std::string("bimodal")));
        c.beta = j.value("beta", c.beta);
        c.spec_height = j.value("spec_height", c.spec_height);
        c.spec_width = j.value("spec_width", c.spec_width);
    } catch (const json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

SpinVae::SpinVae(const SynthDescriptor& descriptor, ModelConfig config, std::uint64_t seed)
    : descriptor_(descriptor), config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const int P = descriptor_.size();
    const int d = config_.attention.d_model;
    const int D = config_.latent_dim;
    const int K = config_.mixture;

    int classes = 0;
    head_offsets_.push_back(0);
    for (const auto& p : descriptor_.params) {
        class_offsets_.push_back(classes);
        if (p.categorical()) classes += p.num_classes;
        const int w = p.categorical() ? p.num_classes : (config_.numerical_head == NumericalHead::Dlm ? 3 * K : p.grid.steps());
        head_widths_.push_back(w);
        head_offsets_.push_back(head_offsets_.back() + w);
    }

    pos_embed_ = &store_.add("embed.pos", {P + 2, d});
    nn::init_normal(*pos_embed_, rng, 1.0);
    class_embed_ = &store_.add("embed.class", {std::max(classes, 1), d});
    nn::init_normal(*class_embed_, rng, 1.0);
    num_weight_ = &store_.add("embed.num_w", {P, d});
    nn::init_normal(*num_weight_, rng, 1.0);
    num_bias_ = &store_.add("embed.num_b", {P, d});
    for (int l = 0; l < config_.attention.layers; ++l)
        encoder_layers_.push_back(nn::EncoderLayer::create(store_, "enc." + std::to_string(l), config_.attention, rng));
    encoder_norm_ = nn::LayerNorm::create(store_, "enc.norm", d);
    tok_mu_ = nn::Linear::create(store_, "enc.mu", d, D, rng);
    tok_logvar_ = nn::Linear::create(store_, "enc.logvar", d, D, rng, 0.1);

    const int chans[] = {1, 8, 16, 32, kCnnChannels};
    for (int i = 0; i < 4; ++i)
        cnn_encoder_.push_back(nn::ConvBlock::create(store_, "cnn." + std::to_string(i), chans[i], chans[i + 1], 2, rng));
    cnn_encoder_.push_back(nn::ConvBlock::create(store_, "cnn.4", kCnnChannels, kCnnChannels, 1, rng));
    cnn_out_ = nn::Linear::create(store_, "cnn.out", flat_features(), 2 * D, rng, 0.1);

    audio_in_ = nn::Linear::create(store_, "adec.in", D, flat_features(), rng);
    audio_res_ = nn::ConvBlock::create(store_, "adec.res", kCnnChannels, kCnnChannels, 1, rng);
    const int up[] = {kCnnChannels, 16, 8, 8};
    for (int i = 0; i < 3; ++i)
        audio_up_.push_back(nn::ConvBlock::create(store_, "adec.up" + std::to_string(i), up[i], up[i + 1], 1, rng));
    audio_out_ = nn::Conv::create(store_, "adec.out", 8, 1, 1, rng);

    memory_proj_ = nn::Linear::create(store_, "pdec.memory", D, config_.memory_tokens * d, rng);
    queries_ = &store_.add("pdec.query", {P, d});
    nn::init_normal(*queries_, rng, 1.0);
    for (int l = 0; l < config_.decoder_layers; ++l)
        decoder_layers_.push_back(nn::DecoderLayer::create(store_, "pdec." + std::to_string(l), config_.attention, rng));
    decoder_norm_ = nn::LayerNorm::create(store_, "pdec.norm", d);
    head_weight_ = &store_.add("pdec.head_w", {head_total(), d});
    nn::init_normal(*head_weight_, rng, 0.1 / std::sqrt(static_cast<double>(d)));
    head_bias_ = &store_.add("pdec.head_b", {head_total()});
    // DLM components start spread over [0, 1] with moderate scales.
    if (config_.numerical_head == NumericalHead::Dlm) {
        for (int i = 0; i < P; ++i) {
            if (descriptor_.params[i].categorical()) continue;
            double* b = head_bias_->value.data.data() + head_offsets_[i];
            for (int k = 0; k < K; ++k) {
                b[K + k] = (k + 0.5) / K;
                b[2 * K + k] = std::log(0.1);
            }
        }
    }
}

int SpinVae::flat_features() const { return kCnnChannels * (config_.spec_height / 16) * (config_.spec_width / 16); }

Tensor SpinVae::spectrogram_tensor(const std::vector<const Spectrogram*>& x) const {
    const int H = config_.spec_height, W = config_.spec_width;
    Tensor t({static_cast<int>(x.size()), 1, H, W});
    for (std::size_t b = 0; b < x.size(); ++b) {
        if (!x[b]) throw std::invalid_argument("spectrogram missing for batch item " + std::to_string(b));
        if (x[b]->mel_bins != H || x[b]->frames != W)
            throw std::invalid_argument("spectrogram shape " + std::to_string(x[b]->mel_bins) + "x" + std::to_string(x[b]->frames) +
                                        " does not match model " + std::to_string(H) + "x" + std::to_string(W));
        std::copy(x[b]->data.begin(), x[b]->data.end(), t.data.begin() + static_cast<std::ptrdiff_t>(b) * H * W);
    }
    return t;
}

Var SpinVae::embed_preset(Graph& g, const std::vector<const Preset*>& presets) const {
    const int P = descriptor_.size();
    const int S = P + 2;
    const int d = config_.attention.d_model;
    const int B = static_cast<int>(presets.size());
    // rows[b*S + i] = class-table row for categorical params, -1 otherwise
    std::vector<int> class_rows(static_cast<std::size_t>(B) * P, -1);
    std::vector<double> num_values(static_cast<std::size_t>(B) * P, 0.0);
    for (int b = 0; b < B; ++b) {
        require_valid(descriptor_, *presets[b]);
        for (int i = 0; i < P; ++i) {
            const double v = presets[b]->values[i];
            if (descriptor_.params[i].categorical())
                class_rows[b * P + i] = class_offsets_[i] + static_cast<int>(v);
            else
                num_values[b * P + i] = v;
        }
    }
    Var pos = g.param(*pos_embed_), cls = g.param(*class_embed_), nw = g.param(*num_weight_), nb = g.param(*num_bias_);
    const auto& pv = g.data(pos);
    const auto& cv = g.data(cls);
    const auto& wv = g.data(nw);
    const auto& bv = g.data(nb);
    Tensor out({B * S, d});
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < S; ++i) {
            double* o = out.data.data() + (static_cast<std::size_t>(b) * S + i) * d;
            for (int j = 0; j < d; ++j) o[j] = pv[static_cast<std::size_t>(i) * d + j];
            if (i >= P) continue;
            const int row = class_rows[b * P + i];
            if (row >= 0) {
                for (int j = 0; j < d; ++j) o[j] += cv[static_cast<std::size_t>(row) * d + j];
            } else {
                const double v = num_values[b * P + i];
                for (int j = 0; j < d; ++j) o[j] += wv[static_cast<std::size_t>(i) * d + j] * v + bv[static_cast<std::size_t>(i) * d + j];
            }
        }
    return g.custom("embed_preset", {pos, cls, nw, nb}, std::move(out),
                    [pos, cls, nw, nb, class_rows, num_values, B, S, P, d](Graph& gr, int self) {
                        auto go = gr.out_grad(self);
                        auto gp = gr.grad_buffer(pos);
                        auto gc = gr.grad_buffer(cls);
                        auto gw = gr.grad_buffer(nw);
                        auto gb = gr.grad_buffer(nb);
                        for (int b = 0; b < B; ++b)
                            for (int i = 0; i < S; ++i) {
                                const double* o = go.data() + (static_cast<std::size_t>(b) * S + i) * d;
                                for (int j = 0; j < d; ++j) gp[static_cast<std::size_t>(i) * d + j] += o[j];
                                if (i >= P) continue;
                                const int row = class_rows[b * P + i];
                                if (row >= 0) {
                                    for (int j = 0; j < d; ++j) gc[static_cast<std::size_t>(row) * d + j] += o[j];
                                } else {
                                    const double v = num_values[b * P + i];
                                    for (int j = 0; j < d; ++j) {
                                        gw[static_cast<std::size_t>(i) * d + j] += o[j] * v;
                                        gb[static_cast<std::size_t>(i) * d + j] += o[j];
                                    }
                                }
                            }
                    });
}

Posterior SpinVae::encode(Graph& g, const Batch& batch, EncoderMode mode) const {
    const int B = batch.size();
    const int P = descriptor_.size();
    const int S = P + 2;
    const int D = config_.latent_dim;
    std::optional<Posterior> tok, cnn;
    if (mode != EncoderMode::SoundMatching) {
        Var x = embed_preset(g, batch.u);
        for (const auto& layer : encoder_layers_) x = layer(g, x, B, S);
        x = encoder_norm_(g, x);
        std::vector<int> mu_rows, lv_rows;
        for (int b = 0; b < B; ++b) {
            mu_rows.push_back(b * S + P);
            lv_rows.push_back(b * S + P + 1);
        }
        tok = Posterior{tok_mu_(g, g.gather_rows(x, mu_rows)), tok_logvar_(g, g.gather_rows(x, lv_rows))};
    }
    if (mode != EncoderMode::PresetOnly) {
        if (static_cast<int>(batch.x.size()) != B) throw std::invalid_argument("encode: spectrogram count != preset count");
        Var h = g.input(spectrogram_tensor(batch.x));
        for (const auto& block : cnn_encoder_) h = block(g, h);
        h = cnn_out_(g, g.reshape(h, {B, flat_features()}));
        cnn = Posterior{g.slice_cols(h, 0, D), g.slice_cols(h, D, 2 * D)};
    }
    if (tok && cnn) return {g.add(tok->mu, cnn->mu), g.add(tok->logvar, cnn->logvar)};
    return tok ? *tok : *cnn;
}

Var SpinVae::reparameterize(Graph& g, const Posterior& post, const Tensor& eps) const {
    if (eps.shape != g.shape(post.mu)) throw std::invalid_argument("reparameterize: eps shape " + nn::shape_str(eps.shape));
    Var sigma = g.exp(g.scale(post.logvar, 0.5));
    return g.add(post.mu, g.mul(sigma, g.input(eps)));
}

Var SpinVae::decode_audio(Graph& g, Var z) const {
    const int B = g.shape(z).at(0);
    Var h = g.reshape(audio_in_(g, z), {B, kCnnChannels, config_.spec_height / 16, config_.spec_width / 16});
    h = audio_res_(g, h);
    for (const auto& block : audio_up_) h = block(g, g.upsample2x(h));
    return audio_out_(g, g.upsample2x(h));
}

Var SpinVae::decode_preset(Graph& g, Var z) const {
    const int B = g.shape(z).at(0);
    const int P = descriptor_.size();
    const int d = config_.attention.d_model;
    const int M = config_.memory_tokens;
    Var memory = g.reshape(memory_proj_(g, z), {B * M, d});
    Var x = g.repeat_rows(g.param(*queries_), B);
    for (const auto& layer : decoder_layers_) x = layer(g, x, memory, B, P, M);
    x = decoder_norm_(g, x);

    // Grouped per-parameter heads: out[b, off_i + j] = x[b*P + i] . W[off_i + j] + bias[off_i + j].
    Var w = g.param(*head_weight_), bias = g.param(*head_bias_);
    const int total = head_total();
    std::vector<int> owner(total);
    for (int i = 0; i < P; ++i)
        for (int o = head_offsets_[i]; o < head_offsets_[i + 1]; ++o) owner[o] = i;
    const auto& xv = g.data(x);
    const auto& wv = g.data(w);
    const auto& bv = g.data(bias);
    Tensor out({B, total});
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < total; ++o) {
            const double* xr = xv.data() + (static_cast<std::size_t>(b) * P + owner[o]) * d;
            const double* wr = wv.data() + static_cast<std::size_t>(o) * d;
            double acc = 0.0;
            for (int k = 0; k < d; ++k) acc += xr[k] * wr[k];
            out.data[static_cast<std::size_t>(b) * total + o] = acc + bv[o];
        }
    return g.custom("param_heads", {x, w, bias}, std::move(out), [x, w, bias, owner, B, P, d, total](Graph& gr, int self) {
        auto go = gr.out_grad(self);
        auto xv = gr.data(x);
        auto wv = gr.data(w);
        auto gx = gr.grad_buffer(x);
        auto gw = gr.grad_buffer(w);
        auto gb = gr.grad_buffer(bias);
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < total; ++o) {
                const double go_v = go[static_cast<std::size_t>(b) * total + o];
                const std::size_t xr = (static_cast<std::size_t>(b) * P + owner[o]) * d;
                const std::size_t wr = static_cast<std::size_t>(o) * d;
                for (int k = 0; k < d; ++k) {
                    gx[xr + k] += go_v * wv[wr + k];
                    gw[wr + k] += go_v * xv[xr + k];
                }
                gb[o] += go_v;
            }
    });
}

namespace {

// -log softmax(row)[target] and its gradient softmax - onehot.
double cross_entropy(std::span<const double> row, int target, std::span<double> grad) {
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < row.size(); ++c) grad[c] = std::exp(row[c] - lse) - (static_cast<int>(c) == target ? 1.0 : 0.0);
    return lse - row[target];
}

}  // namespace

Var SpinVae::preset_nll(Graph& g, Var heads, const std::vector<const Preset*>& presets) const {
    const int B = static_cast<int>(presets.size());
    const int P = descriptor_.size();
    const int total = head_total();
    if (g.shape(heads) != Shape{B, total}) throw std::invalid_argument("preset_nll: head shape " + nn::shape_str(g.shape(heads)));
    const auto& hv = g.data(heads);
    auto grads = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * total, 0.0);
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        const auto bins = preset_bins(descriptor_, *presets[b]);
        for (int i = 0; i < P; ++i) {
            const std::size_t off = static_cast<std::size_t>(b) * total + head_offsets_[i];
            auto row = std::span(hv).subspan(off, head_widths_[i]);
            auto grad = std::span(*grads).subspan(off, head_widths_[i]);
            const auto& spec = descriptor_.params[i];
            if (spec.categorical() || config_.numerical_head == NumericalHead::Softmax) {
                loss += cross_entropy(row, bins[i], grad);
            } else {
                loss -= dlm::head_log_prob(row, config_.mixture, spec.grid, bins[i], grad);
                for (double& gv : grad) gv = -gv;
            }
        }
    }
    return g.custom("preset_nll", {heads}, Tensor({1}, {loss}), [heads, grads](Graph& gr, int self) {
        const double go = gr.out_grad(self)[0];
        auto gh = gr.grad_buffer(heads);
        for (std::size_t i = 0; i < gh.size(); ++i) gh[i] += go * (*grads)[i];
    });
}

LossVars SpinVae::loss(Graph& g, const Batch& batch, const Tensor& eps, double beta) const {
    const int B = batch.size();
    if (B == 0) throw std::invalid_argument("loss: empty batch");
    const double inv_b = 1.0 / B;
    Posterior post = encode(g, batch);
    Var z = reparameterize(g, post, eps);
    Var kl = g.scale(g.kl_divergence(post.mu, post.logvar), inv_b);
    Var pnll = g.scale(preset_nll(g, decode_preset(g, z), batch.u), inv_b);
    Var total = g.add(g.scale(kl, beta), pnll);
    Var anll{};
    if (config_.mode != EncoderMode::PresetOnly) {
        Var pred = decode_audio(g, z);
        anll = g.scale(g.gaussian_nll(pred, spectrogram_tensor(batch.x)), inv_b);
        total = g.add(total, anll);
    } else {
        anll = g.input(Tensor({1}, 0.0));
    }
    return {total, kl, anll, pnll};
}

LossVars SpinVae::loss(Graph& g, const Batch& batch, Rng& rng, double beta) const {
    Tensor eps({batch.size(), config_.latent_dim});
    for (double& v : eps.data) v = rng.normal();
    return loss(g, batch, eps, beta);
}

std::vector<std::vector<double>> SpinVae::encode_means(const Batch& batch) const {
    Graph g;
    Posterior post = encode(g, batch);
    const auto& mu = g.value(post.mu);
    const int D = config_.latent_dim;
    std::vector<std::vector<double>> out(batch.size());
    for (int b = 0; b < batch.size(); ++b) out[b].assign(mu.data.begin() + b * D, mu.data.begin() + (b + 1) * D);
    return out;
}

std::vector<std::vector<double>> SpinVae::decode_heads(const std::vector<std::vector<double>>& zs) const {
    const int B = static_cast<int>(zs.size());
    const int D = config_.latent_dim;
    Tensor zt({B, D});
    for (int b = 0; b < B; ++b) {
        if (static_cast<int>(zs[b].size()) != D)
            throw std::invalid_argument("decode: latent dimension " + std::to_string(zs[b].size()) + " != " + std::to_string(D));
        std::copy(zs[b].begin(), zs[b].end(), zt.data.begin() + static_cast<std::ptrdiff_t>(b) * D);
    }
    Graph g;
    const auto& heads = g.value(decode_preset(g, g.input(std::move(zt))));
    const int total = head_total();
    std::vector<std::vector<double>> out(B);
    for (int b = 0; b < B; ++b) out[b].assign(heads.data.begin() + b * total, heads.data.begin() + (b + 1) * total);
    return out;
}

Preset SpinVae::preset_from_heads(std::span<const double> row) const {
    if (static_cast<int>(row.size()) != head_total()) throw std::invalid_argument("preset_from_heads: wrong row width");
    Preset p;
    for (int i = 0; i < descriptor_.size(); ++i) {
        const auto& spec = descriptor_.params[i];
        auto h = row.subspan(head_offsets_[i], head_widths_[i]);
        if (spec.categorical() || config_.numerical_head == NumericalHead::Softmax) {
            const int arg = static_cast<int>(std::max_element(h.begin(), h.end()) - h.begin());  // first max
            p.values.push_back(spec.categorical() ? arg : spec.grid.value(arg));
        } else {
            p.values.push_back(dlm::mode(dlm::from_head(h, config_.mixture), spec.grid));
        }
    }
    return p;
}

std::vector<Preset> SpinVae::decode(const std::vector<std::vector<double>>& zs) const {
    std::vector<Preset> out;
    for (const auto& row : decode_heads(zs)) out.push_back(preset_from_heads(row));
    return out;
}

nn::Checkpoint SpinVae::to_checkpoint() const {
    nn::Checkpoint c;
    c.descriptor_hash = descriptor_.hash();
    c.config = config_.to_json();
    for (std::size_t i = 0; i < store_.size(); ++i) c.tensors.push_back({store_[i].name, store_[i].value});
    return c;
}

SpinVae SpinVae::from_checkpoint(const nn::Checkpoint& ckpt, const SynthDescriptor& descriptor) {
    if (ckpt.descriptor_hash != descriptor.hash())
        throw DescriptorMismatch("checkpoint descriptor hash " + hex64(ckpt.descriptor_hash) + " != " + hex64(descriptor.hash()));
    SpinVae model(descriptor, ModelConfig::from_json(ckpt.config), 0);
    model.load_weights(ckpt);
    return model;
}

void SpinVae::load_weights(const nn::Checkpoint& ckpt) {
    if (ckpt.descriptor_hash != descriptor_.hash())
        throw DescriptorMismatch("checkpoint descriptor hash " + hex64(ckpt.descriptor_hash) + " != " + hex64(descriptor_.hash()));
    if (ckpt.tensors.size() != store_.size())
        throw ParseError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                         std::to_string(store_.size()));
    for (const auto& t : ckpt.tensors) {
        auto& p = store_.get(t.name);
        if (p.value.shape != t.tensor.shape)
            throw ParseError("checkpoint tensor '" + t.name + "' has shape " + nn::shape_str(t.tensor.shape) + ", expected " +
                             nn::shape_str(p.value.shape));
        p.value = t.tensor;
    }
}

}  // namespace spinterp
