#include "spinterp/trainer.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

namespace spinterp {

using json = nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (!(lr > 0)) throw ValidationError("learning rate must be positive");
    if (!(final_lr_fraction > 0 && final_lr_fraction <= 1)) throw ValidationError("final lr fraction must be in (0, 1]");
    if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ValidationError("warm-up fraction must be in [0, 1]");
    if (!(ema_decay >= 0 && ema_decay < 1)) throw ValidationError("EMA decay must be in [0, 1)");
    model.validate();
}

double beta_at(const TrainConfig& cfg, long long step, long long total_steps) {
    const double warm = cfg.warmup_fraction * static_cast<double>(total_steps);
    if (warm <= 0.0) return cfg.model.beta;
    return cfg.model.beta * std::min(1.0, static_cast<double>(step) / warm);
}

namespace {

double lr_at(const TrainConfig& cfg, long long step, long long total_steps) {
    if (cfg.final_lr_fraction >= 1.0 || total_steps <= 1) return cfg.lr;
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    const double f = cfg.final_lr_fraction;
    return cfg.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

Batch make_batch(const Corpus& corpus, const std::vector<int>& idx, std::size_t begin, std::size_t end) {
    Batch b;
    for (std::size_t i = begin; i < end; ++i) {
        const auto& item = corpus.items[idx[i]];
        b.x.push_back(&item.spectrogram);
        b.u.push_back(&item.record.preset);
    }
    return b;
}

LossValues values_of(const nn::Graph& g, const LossVars& v) {
    return {g.value(v.total)[0], g.value(v.kl)[0], g.value(v.audio_nll)[0], g.value(v.preset_nll)[0]};
}

void accumulate(LossValues& acc, const LossValues& v, double w) {
    acc.total += w * v.total;
    acc.kl += w * v.kl;
    acc.audio_nll += w * v.audio_nll;
    acc.preset_nll += w * v.preset_nll;
}

json loss_json(const LossValues& v) { return json::array({v.total, v.kl, v.audio_nll, v.preset_nll}); }

LossValues loss_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()}; }

void check_spectrogram_shape(const Corpus& corpus, const ModelConfig& mc) {
    if (corpus.items.empty()) return;
    const auto& s = corpus.items[0].spectrogram;
    if (s.mel_bins != mc.spec_height || s.frames != mc.spec_width)
        throw ValidationError("corpus spectrograms are " + std::to_string(s.mel_bins) + "x" + std::to_string(s.frames) +
                              ", model expects " + std::to_string(mc.spec_height) + "x" + std::to_string(mc.spec_width));
}

void swap_weights(nn::ParameterStore& store, std::vector<nn::Tensor>& other) {
    for (std::size_t i = 0; i < store.size(); ++i) std::swap(store[i].value.data, other[i].data);
}

}  // namespace

std::string train_state_json(const TrainConfig& cfg, const std::vector<EpochRecord>& history, int best_epoch, long long step) {
    json j;
    j["format"] = "spinterp-train/1";
    j["config"] = {{"epochs", cfg.epochs},       {"batch_size", cfg.batch_size},
                   {"lr", cfg.lr},               {"final_lr_fraction", cfg.final_lr_fraction},
                   {"warmup_fraction", cfg.warmup_fraction}, {"ema_decay", cfg.ema_decay}, {"seed", cfg.seed}};
    j["step"] = step;
    j["best_epoch"] = best_epoch;
    json h = json::array();
    for (const auto& r : history)
        h.push_back({{"epoch", r.epoch}, {"beta", r.beta}, {"lr", r.lr}, {"train", loss_json(r.train)}, {"val", loss_json(r.val)},
                     {"train_running", r.train_running}});
    j["history"] = h;
    return j.dump();
}

LossValues evaluate_loss(const SpinVae& model, const Corpus& corpus, Split split, double beta, int batch_size) {
    const auto idx = corpus.indices(split);
    LossValues acc;
    if (idx.empty()) return acc;
    for (std::size_t b = 0; b < idx.size(); b += batch_size) {
        const std::size_t e = std::min(idx.size(), b + batch_size);
        Batch batch = make_batch(corpus, idx, b, e);
        nn::Graph g;
        const auto v = model.loss(g, batch, nn::Tensor({batch.size(), model.config().latent_dim}), beta);
        accumulate(acc, values_of(g, v), static_cast<double>(batch.size()));
    }
    const double inv = 1.0 / static_cast<double>(idx.size());
    return {acc.total * inv, acc.kl * inv, acc.audio_nll * inv, acc.preset_nll * inv};
}

TrainResult train(const Corpus& corpus, const TrainConfig& cfg_in, const nn::Checkpoint* resume, const EpochCallback& on_epoch) {
    TrainConfig cfg = cfg_in;
    if (resume) {
        if (resume->descriptor_hash != corpus.descriptor.hash())
            throw DescriptorMismatch("checkpoint descriptor hash " + hex64(resume->descriptor_hash) + " != corpus descriptor hash " +
                                     hex64(corpus.descriptor.hash()));
        cfg.model = ModelConfig::from_json(resume->config);
    }
    cfg.validate();
    check_spectrogram_shape(corpus, cfg.model);
    const auto train_idx_base = corpus.indices(Split::Train);
    if (train_idx_base.empty()) throw ValidationError("corpus has no training items");

    SpinVae model(corpus.descriptor, cfg.model, mix_seed(cfg.seed, 1));
    nn::AdamState adam = nn::AdamState::zeros_like(model.parameters());
    const bool use_ema = cfg.ema_decay > 0;
    std::vector<nn::Tensor> ema;
    bool ema_loaded = false;
    if (use_ema)
        for (std::size_t i = 0; i < model.parameters().size(); ++i) ema.push_back(model.parameters()[i].value);
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    long long step = 0;
    nn::Checkpoint best = model.to_checkpoint();
    double best_val = std::numeric_limits<double>::infinity();

    if (resume) {
        try {
            const json st = json::parse(resume->training_state);
            step = st.at("step").get<long long>();
            best_epoch = st.at("best_epoch").get<int>();
            for (const auto& r : st.at("history")) {
                EpochRecord e;
                e.epoch = r.at("epoch").get<int>();
                e.beta = r.at("beta").get<double>();
                e.lr = r.at("lr").get<double>();
                e.train = loss_from_json(r.at("train"));
                e.val = loss_from_json(r.at("val"));
                e.train_running = r.at("train_running").get<double>();
                history.push_back(e);
            }
        } catch (const json::exception& e) {
            throw ParseError(std::string("checkpoint training state: ") + e.what());
        }
        best.tensors = resume->tensors;
        if (best_epoch > 0) best_val = history.at(best_epoch - 1).val.total;
        auto& store = model.parameters();
        for (const auto& t : resume->state_tensors) {
            const auto slash = t.name.find('/');
            if (slash == std::string::npos) throw ParseError("bad state tensor name '" + t.name + "'");
            const std::string kind = t.name.substr(0, slash), name = t.name.substr(slash + 1);
            std::size_t pi = 0;
            while (pi < store.size() && store[pi].name != name) ++pi;
            if (pi == store.size()) throw ParseError("state tensor for unknown parameter '" + name + "'");
            if (t.tensor.shape != store[pi].value.shape) throw ParseError("state tensor '" + t.name + "' has the wrong shape");
            if (kind == "last") store[pi].value = t.tensor;
            else if (kind == "adam.m") adam.m[pi] = t.tensor;
            else if (kind == "adam.v") adam.v[pi] = t.tensor;
            else if (kind == "ema") {
                if (use_ema) ema[pi] = t.tensor, ema_loaded = true;
            }
            else throw ParseError("unknown state tensor kind '" + kind + "'");
        }
        adam.step = step;
        if (use_ema && !ema_loaded)
            for (std::size_t i = 0; i < ema.size(); ++i) ema[i] = model.parameters()[i].value;
    }

    const int bs = cfg.batch_size;
    const long long steps_per_epoch = (static_cast<long long>(train_idx_base.size()) + bs - 1) / bs;
    const long long total_steps = steps_per_epoch * cfg.epochs;
    const bool has_val = !corpus.indices(Split::Validation).empty();

    for (int epoch = static_cast<int>(history.size()) + 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        auto idx = train_idx_base;
        for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
        EpochRecord rec;
        rec.epoch = epoch;
        double running = 0.0;
        for (std::size_t b = 0; b < idx.size(); b += bs) {
            const std::size_t e = std::min(idx.size(), b + bs);
            Batch batch = make_batch(corpus, idx, b, e);
            const double beta = beta_at(cfg, step, total_steps);
            nn::AdamConfig opt;
            opt.lr = lr_at(cfg, step, total_steps);
            rec.beta = beta;
            rec.lr = opt.lr;
            nn::Graph g;
            try {
                model.parameters().zero_grad();
                const auto v = model.loss(g, batch, rng, beta);
                g.backward(v.total);
                running += g.value(v.total)[0] * batch.size();
            } catch (const NumericalError& err) {
                throw NumericalError("step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + "): " + err.what());
            }
            nn::adam_step(model.parameters(), adam, opt);
            if (use_ema) {
                const double d = std::min(cfg.ema_decay, (1.0 + static_cast<double>(step)) / (10.0 + static_cast<double>(step)));
                auto& store = model.parameters();
                for (std::size_t i = 0; i < store.size(); ++i) {
                    auto& a = ema[i].data;
                    const auto& w = store[i].value.data;
                    for (std::size_t k = 0; k < a.size(); ++k) a[k] = d * a[k] + (1.0 - d) * w[k];
                }
            }
            ++step;
        }
        rec.train_running = running / static_cast<double>(idx.size());
        if (use_ema) swap_weights(model.parameters(), ema);
        rec.train = evaluate_loss(model, corpus, Split::Train, cfg.model.beta, bs);
        rec.val = evaluate_loss(model, corpus, Split::Validation, cfg.model.beta, bs);
        const double score = has_val ? rec.val.total : rec.train.total;
        if (!std::isfinite(score)) throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
        if (score < best_val) {
            best_val = score;
            best_epoch = epoch;
            best = model.to_checkpoint();
        }
        if (use_ema) swap_weights(model.parameters(), ema);
        history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }

    TrainResult result;
    result.history = history;
    result.best_epoch = best_epoch;
    result.checkpoint = best;
    result.checkpoint.training_state = train_state_json(cfg, history, best_epoch, step);
    const auto& store = model.parameters();
    for (std::size_t i = 0; i < store.size(); ++i) {
        result.checkpoint.state_tensors.push_back({"last/" + store[i].name, store[i].value});
        result.checkpoint.state_tensors.push_back({"adam.m/" + store[i].name, adam.m[i]});
        result.checkpoint.state_tensors.push_back({"adam.v/" + store[i].name, adam.v[i]});
        if (use_ema) result.checkpoint.state_tensors.push_back({"ema/" + store[i].name, ema[i]});
    }
    return result;
}

ReconstructionMetrics evaluate_reconstruction(const SpinVae& model, const Corpus& corpus, Split split, int batch_size) {
    return evaluate_reconstruction(model, corpus, corpus.indices(split), batch_size);
}

ReconstructionMetrics evaluate_reconstruction(const SpinVae& model, const Corpus& corpus, const std::vector<int>& items,
                                              int batch_size) {
    if (model.descriptor().hash() != corpus.descriptor.hash())
        throw DescriptorMismatch("model and corpus descriptors differ");
    const auto& desc = corpus.descriptor;
    ReconstructionMetrics m;
    long long cat_total = 0, cat_ok = 0, num_total = 0, num_ok = 0;
    double sq = 0.0;
    long long pixels = 0;
    for (std::size_t b = 0; b < items.size(); b += batch_size) {
        const std::size_t e = std::min(items.size(), b + batch_size);
        Batch batch = make_batch(corpus, items, b, e);
        nn::Graph g;
        const Posterior post = model.encode(g, batch);
        const auto& heads = g.value(model.decode_preset(g, post.mu));
        const auto& audio = g.value(model.decode_audio(g, post.mu));
        const int total = model.head_total();
        for (int i = 0; i < batch.size(); ++i) {
            const Preset decoded = model.preset_from_heads(std::span(heads.data).subspan(static_cast<std::size_t>(i) * total, total));
            const Preset& truth = *batch.u[i];
            for (int p = 0; p < desc.size(); ++p) {
                const auto& spec = desc.params[p];
                if (spec.categorical()) {
                    ++cat_total;
                    cat_ok += decoded.values[p] == truth.values[p];
                } else {
                    ++num_total;
                    num_ok += std::abs(decoded.values[p] - truth.values[p]) <= spec.grid.bin_width() + 1e-9;
                }
            }
            const auto& x = batch.x[i]->data;
            for (std::size_t k = 0; k < x.size(); ++k) {
                const double d = audio.data[i * x.size() + k] - x[k];
                sq += d * d;
            }
            pixels += static_cast<long long>(x.size());
        }
    }
    m.items = static_cast<int>(items.size());
    m.categorical_accuracy = cat_total ? static_cast<double>(cat_ok) / cat_total : 0.0;
    m.numerical_within_one = num_total ? static_cast<double>(num_ok) / num_total : 0.0;
    m.audio_mse = pixels ? sq / pixels : 0.0;
    return m;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,beta,lr,train_total,train_kl,train_audio,train_preset,val_total,val_kl,val_audio,val_preset,train_running\n";
    for (const auto& r : history) {
        out += std::to_string(r.epoch);
        for (double v : {r.beta, r.lr, r.train.total, r.train.kl, r.train.audio_nll, r.train.preset_nll, r.val.total, r.val.kl,
                         r.val.audio_nll, r.val.preset_nll, r.train_running})
            out += "," + format_sig(v, 17);
        out += "\n";
    }
    return out;
}

}  // namespace spinterp
