#include "spinterp/interp_engine.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

namespace spinterp {

using json = nlohmann::json;

std::string to_string(InterpMethod m) { return m == InterpMethod::Latent ? "latent" : "reference"; }

InterpMethod parse_interp_method(std::string_view s) {
    if (s == "latent") return InterpMethod::Latent;
    if (s == "reference") return InterpMethod::Reference;
    throw ValidationError("unknown interpolation method '" + std::string(s) + "' (latent|reference)");
}

void PathOptions::validate() const {
    if (!std::isfinite(from) || !std::isfinite(to)) throw ValidationError("path coefficients must be finite");
    if (!extrapolate && (from < 0 || from > 1 || to < 0 || to > 1))
        throw ValidationError("path coefficients outside [0, 1] need extrapolation enabled");
}

double PathOptions::coefficient(int t, int T) const {
    return from + (to - from) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
}

namespace {

void check_T(int T) {
    if (T < 3) throw ValidationError("T must be >= 3 (got " + std::to_string(T) + ")");
}

bool default_path(const PathOptions& o) { return o.from == 0.0 && o.to == 1.0; }

}  // namespace

std::vector<std::vector<double>> latent_path(const std::vector<double>& z_n, const std::vector<double>& z_m, int T,
                                             const PathOptions& opts) {
    check_T(T);
    opts.validate();
    if (z_n.size() != z_m.size())
        throw ValidationError("latent dimensions differ: " + std::to_string(z_n.size()) + " vs " + std::to_string(z_m.size()));
    std::vector<std::vector<double>> out(T, std::vector<double>(z_n.size()));
    for (int t = 1; t <= T; ++t) {
        const double c = opts.coefficient(t, T);
        for (std::size_t i = 0; i < z_n.size(); ++i) out[t - 1][i] = z_n[i] + c * (z_m[i] - z_n[i]);
    }
    if (opts.from == 0.0) out.front() = z_n;
    if (opts.to == 1.0) out.back() = z_m;
    return out;
}

InterpSequence interpolate_latent(const SpinVae& model, const RenderConfig& render, Endpoint a, Endpoint b, int T,
                                  const PathOptions& opts) {
    check_T(T);
    if (!a.preset || !b.preset) throw std::invalid_argument("interpolate_latent: missing preset");
    const auto& desc = model.descriptor();
    require_valid(desc, *a.preset);
    require_valid(desc, *b.preset);
    Spectrogram xa, xb;
    Batch batch;
    batch.u = {a.preset, b.preset};
    if (model.config().mode != EncoderMode::PresetOnly) {
        const SpecConfig spec = spec_config_for(render);
        if (!a.spectrogram) {
            xa = mel_spectrogram(spinterp::render(desc, *a.preset, render), spec);
            a.spectrogram = &xa;
        }
        if (!b.spectrogram) {
            xb = mel_spectrogram(spinterp::render(desc, *b.preset, render), spec);
            b.spectrogram = &xb;
        }
        batch.x = {a.spectrogram, b.spectrogram};
    }
    const auto mu = model.encode_means(batch);
    InterpSequence seq;
    seq.method = InterpMethod::Latent;
    seq.a = *a.preset;
    seq.b = *b.preset;
    seq.T = T;
    const auto zs = latent_path(mu[0], mu[1], T, opts);
    const auto presets = model.decode(zs);
    for (int t = 0; t < T; ++t) {
        require_valid(desc, presets[t]);
        seq.steps.push_back(InterpStep{zs[t], {}, presets[t]});
    }
    return seq;
}

InterpSequence interpolate_reference(const SynthDescriptor& descriptor, const Preset& a, const Preset& b, int T,
                                     const PathOptions& opts) {
    check_T(T);
    opts.validate();
    require_valid(descriptor, a);
    require_valid(descriptor, b);
    InterpSequence seq;
    seq.method = InterpMethod::Reference;
    seq.a = a;
    seq.b = b;
    seq.T = T;
    const int P = descriptor.size();
    for (int t = 1; t <= T; ++t) {
        const double c = opts.coefficient(t, T);
        InterpStep step;
        step.raw.resize(P);
        step.preset.values.resize(P);
        for (int i = 0; i < P; ++i) {
            const auto& spec = descriptor.params[i];
            if (spec.categorical()) {
                step.raw[i] = c <= 0.5 ? a.values[i] : b.values[i];
                step.preset.values[i] = step.raw[i];
            } else {
                step.raw[i] = a.values[i] + c * (b.values[i] - a.values[i]);
                step.preset.values[i] = quantize(std::clamp(step.raw[i], 0.0, 1.0), spec.grid);
            }
        }
        seq.steps.push_back(std::move(step));
    }
    if (default_path(opts)) {
        seq.steps.front().raw = a.values;
        seq.steps.front().preset = a;
        seq.steps.back().raw = b.values;
        seq.steps.back().preset = b;
    }
    return seq;
}

std::string wav_file_name(const std::string& pair_id, InterpMethod method, int t) {
    return pair_id + "_" + to_string(method) + "_" + std::to_string(t) + ".wav";
}

std::string sequence_manifest(const SynthDescriptor& descriptor, const InterpSequence& seq, const std::vector<std::string>& files) {
    json j;
    j["format"] = "spinterp-seq/1";
    j["descriptor_hash"] = hex64(descriptor.hash());
    j["pair_id"] = seq.pair_id;
    j["method"] = to_string(seq.method);
    j["T"] = seq.T;
    j["a"] = seq.a.values;
    j["b"] = seq.b.values;
    json steps = json::array();
    for (int t = 0; t < static_cast<int>(seq.steps.size()); ++t) {
        const auto& s = seq.steps[t];
        json js{{"t", t + 1}, {"preset", s.preset.values}};
        if (s.z) js["z"] = *s.z;
        if (!s.raw.empty()) js["raw"] = s.raw;
        if (t < static_cast<int>(files.size())) js["file"] = files[t];
        steps.push_back(std::move(js));
    }
    j["steps"] = std::move(steps);
    return j.dump(1) + "\n";
}

SequenceManifest parse_sequence_manifest(const SynthDescriptor& descriptor, std::string_view text) {
    SequenceManifest m;
    try {
        const json j = json::parse(text);
        if (j.at("format") != "spinterp-seq/1") throw ParseError("sequence manifest: unsupported format");
        if (j.at("descriptor_hash") != hex64(descriptor.hash())) throw DescriptorMismatch("sequence manifest: descriptor hash differs");
        auto& s = m.sequence;
        s.pair_id = j.at("pair_id").get<std::string>();
        s.method = parse_interp_method(j.at("method").get<std::string>());
        s.T = j.at("T").get<int>();
        s.a.values = j.at("a").get<std::vector<double>>();
        s.b.values = j.at("b").get<std::vector<double>>();
        for (const auto& js : j.at("steps")) {
            InterpStep step;
            step.preset.values = js.at("preset").get<std::vector<double>>();
            if (js.contains("z")) step.z = js["z"].get<std::vector<double>>();
            if (js.contains("raw")) step.raw = js["raw"].get<std::vector<double>>();
            if (js.contains("file")) m.files.push_back(js["file"].get<std::string>());
            s.steps.push_back(std::move(step));
        }
        if (static_cast<int>(s.steps.size()) != s.T) throw ParseError("sequence manifest: step count differs from T");
        for (const auto& st : s.steps) require_valid(descriptor, st.preset);
    } catch (const json::exception& e) {
        throw ParseError(std::string("sequence manifest: ") + e.what());
    }
    return m;
}

RenderedSequence render_sequence(const SynthDescriptor& descriptor, const InterpSequence& seq, const RenderConfig& render,
                                 const std::string& out_dir) {
    RenderedSequence r;
    for (const auto& s : seq.steps) r.audio.push_back(spinterp::render(descriptor, s.preset, render));
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        for (int t = 1; t <= static_cast<int>(seq.steps.size()); ++t) {
            r.files.push_back(wav_file_name(seq.pair_id, seq.method, t));
            write_file((std::filesystem::path(out_dir) / r.files.back()).string(), encode_wav(r.audio[t - 1]));
        }
    }
    r.manifest = sequence_manifest(descriptor, seq, r.files);
    if (!out_dir.empty())
        write_file((std::filesystem::path(out_dir) / (seq.pair_id + "_" + to_string(seq.method) + ".json")).string(), r.manifest);
    return r;
}

std::vector<std::pair<int, int>> build_pair_set(const Corpus& corpus, int count, std::uint64_t seed) {
    if (count < 1) throw ValidationError("pair count must be >= 1");
    auto idx = corpus.indices(Split::Test);
    if (static_cast<int>(idx.size()) < 2 * count)
        throw ValidationError("test split has " + std::to_string(idx.size()) + " items, " + std::to_string(count) +
                              " pairs need " + std::to_string(2 * count));
    Rng rng(mix_seed(seed, 0x9a125ULL));
    for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    std::vector<std::pair<int, int>> out;
    for (int k = 0; k < count; ++k) out.emplace_back(idx[2 * k], idx[2 * k + 1]);
    return out;
}

}  // namespace spinterp
