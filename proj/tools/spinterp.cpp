#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "spinterp/corpus.hpp"
#include "spinterp/interp_engine.hpp"
#include "spinterp/run_manifest.hpp"
#include "spinterp/service.hpp"
#include "spinterp/timbre_eval.hpp"
#include "spinterp/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace spinterp;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitMismatch = 4;

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

int fail(int code, const std::string& kind, const std::string& msg) {
    std::cerr << "spinterp: error: " << kind << ": " << one_line(msg) << "\n";
    return code;
}

void write_manifest(RunManifest& m, const std::string& path) {
    m.finished = utc_timestamp();
    write_file(path, m.to_json());
}

struct DatasetArgs {
    std::string descriptor;
    int n = 2000;
    std::uint64_t seed = 1;
    std::string out;
    RenderConfig render;
};

int run_dataset(const DatasetArgs& a) {
    RunManifest m{"dataset", {}, a.seed, {}, {}, utc_timestamp(), {}, {}};
    const SynthDescriptor desc = a.descriptor.empty() ? builtin_descriptor() : load_descriptor_file(a.descriptor);
    m.inputs["descriptor"] = a.descriptor.empty() ? "builtin:" + hex64(desc.hash()) : a.descriptor;
    m.config = json{{"n", a.n}, {"seed", a.seed}, {"sample_rate", a.render.sample_rate}, {"duration", a.render.duration},
                    {"f0", a.render.f0}, {"descriptor_hash", hex64(desc.hash())}}
                   .dump();
    const Corpus c = build_corpus(desc, a.n, a.seed, a.render);
    save_corpus(a.out, c);
    m.outputs["corpus"] = a.out;
    m.add_artifact(a.out);
    write_manifest(m, a.out + ".manifest.json");
    std::cout << "wrote " << a.out << " (" << c.indices(Split::Train).size() << "/" << c.indices(Split::Validation).size() << "/"
              << c.indices(Split::Test).size() << " train/val/test)\n";
    return 0;
}

struct TrainArgs {
    std::string corpus, out, history, resume;
    TrainConfig cfg;
    std::string mode = "bimodal", head = "dlm";
    bool quiet = false;
};

std::string train_config_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr", c.lr},
                {"final_lr_fraction", c.final_lr_fraction},
                {"warmup_fraction", c.warmup_fraction},
                {"seed", c.seed},
                {"model", json::parse(c.model.to_json())}}
        .dump();
}

int run_train(TrainArgs a) {
    RunManifest m{"train", {}, a.cfg.seed, {}, {}, utc_timestamp(), {}, {}};
    a.cfg.model.mode = parse_encoder_mode(a.mode);
    a.cfg.model.numerical_head = parse_numerical_head(a.head);
    const Corpus corpus = load_corpus(a.corpus);
    m.inputs["corpus"] = a.corpus;
    std::optional<nn::Checkpoint> resume;
    if (!a.resume.empty()) {
        resume = nn::load_checkpoint(a.resume);
        m.inputs["resume"] = a.resume;
    }
    const TrainResult r = train(corpus, a.cfg, resume ? &*resume : nullptr, [&](const EpochRecord& e) {
        if (a.quiet) return;
        std::printf("epoch %d beta %.3g lr %.3g train %.6g (kl %.4g audio %.6g preset %.6g) val %.6g\n", e.epoch, e.beta, e.lr,
                    e.train.total, e.train.kl, e.train.audio_nll, e.train.preset_nll, e.val.total);
        std::fflush(stdout);
    });
    TrainConfig effective = a.cfg;
    effective.model = ModelConfig::from_json(r.checkpoint.config);
    m.config = train_config_json(effective);
    nn::save_checkpoint(a.out, r.checkpoint);
    const std::string history = a.history.empty() ? a.out + ".history.csv" : a.history;
    write_file(history, history_csv(r.history));
    m.outputs["checkpoint"] = a.out;
    m.outputs["history"] = history;
    m.add_artifact(a.out);
    m.add_artifact(history);
    write_manifest(m, a.out + ".manifest.json");
    std::cout << "wrote " << a.out << " (best epoch " << r.best_epoch << ")\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint, corpus, out, from_features;
    int pairs = 50;
    int T = 9;
    std::uint64_t seed = 1;
    bool no_audio = false;
};

void write_reports(const InterpReport& rep, const fs::path& out, RunManifest& m) {
    const auto csv = (out / "report.csv").string(), txt = (out / "report.txt").string();
    write_file(csv, report_csv(rep));
    write_file(txt, report_table(rep));
    m.outputs["report_csv"] = csv;
    m.outputs["report_txt"] = txt;
    m.add_artifact(csv);
    m.add_artifact(txt);
}

int run_eval_interp(const EvalArgs& a) {
    RunManifest m{"eval-interp", {}, a.seed, {}, {}, utc_timestamp(), {}, {}};
    m.config = json{{"pairs", a.pairs}, {"T", a.T}, {"seed", a.seed}, {"from_features", !a.from_features.empty()}}.dump();
    const fs::path out(a.out);
    fs::create_directories(out);
    if (!a.from_features.empty()) {
        m.inputs["features"] = a.from_features;
        const auto rows = parse_features_csv(read_file(a.from_features));
        write_reports(report_from_features(rows), out, m);
        write_manifest(m, (out / "run_manifest.json").string());
        std::cout << report_table(report_from_features(rows));
        return 0;
    }
    if (a.checkpoint.empty() || a.corpus.empty()) throw ValidationError("--checkpoint and --corpus are required without --from-features");
    m.inputs["checkpoint"] = a.checkpoint;
    m.inputs["corpus"] = a.corpus;
    const Corpus corpus = load_corpus(a.corpus);
    const SpinVae model = SpinVae::from_checkpoint(nn::load_checkpoint(a.checkpoint), corpus.descriptor);
    const auto pairs = build_pair_set(corpus, a.pairs, a.seed);
    const std::string audio_dir = a.no_audio ? std::string() : (out / "audio").string();
    const int P = static_cast<int>(pairs.size());
    std::vector<std::vector<FeatureRow>> rows(P);
    std::vector<std::string> errors(P);
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < P; ++k) {
        try {
            char id[16];
            std::snprintf(id, sizeof id, "pair%03d", k);
            const auto& A = corpus.items[pairs[k].first];
            const auto& B = corpus.items[pairs[k].second];
            InterpSequence seqs[2] = {
                interpolate_latent(model, corpus.render, {&A.record.preset, &A.spectrogram}, {&B.record.preset, &B.spectrogram}, a.T),
                interpolate_reference(corpus.descriptor, A.record.preset, B.record.preset, a.T)};
            for (auto& seq : seqs) {
                seq.pair_id = id;
                const auto rendered = render_sequence(corpus.descriptor, seq, corpus.render, audio_dir);
                for (int t = 0; t < a.T; ++t)
                    rows[k].push_back({id, to_string(seq.method), t + 1, extract_features(rendered.audio[t])});
            }
        } catch (const std::exception& e) {
            errors[k] = e.what();
        }
    }
    for (int k = 0; k < P; ++k)
        if (!errors[k].empty()) throw Error("pair " + std::to_string(k) + ": " + errors[k]);
    std::vector<FeatureRow> all;
    for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
    const auto features = (out / "features.csv").string();
    write_file(features, features_csv(all));
    m.outputs["features"] = features;
    m.add_artifact(features);
    if (!audio_dir.empty()) m.outputs["audio"] = audio_dir;
    const InterpReport rep = report_from_features(all);
    write_reports(rep, out, m);
    write_manifest(m, (out / "run_manifest.json").string());
    std::cout << report_table(rep);
    return 0;
}

struct RenderArgs {
    std::string corpus, checkpoint, out, method = "reference";
    long long id = -1, a = -1, b = -1;
    int T = 9;
    PathOptions path;
};

int run_render(const RenderArgs& r) {
    RunManifest m{"render", {}, 0, {}, {}, utc_timestamp(), {}, {}};
    m.config = json{{"id", r.id}, {"a", r.a}, {"b", r.b}, {"method", r.method}, {"T", r.T}, {"from", r.path.from}, {"to", r.path.to}}.dump();
    m.inputs["corpus"] = r.corpus;
    const Corpus corpus = load_corpus(r.corpus);
    auto item = [&](long long id) -> const CorpusItem& {
        const int idx = id < 0 ? -1 : corpus.find(static_cast<std::uint64_t>(id));
        if (idx < 0) throw ValidationError("no preset with id " + std::to_string(id) + " in " + r.corpus);
        return corpus.items[idx];
    };
    if (r.id >= 0) {
        write_file(r.out, encode_wav(render(corpus.descriptor, item(r.id).record.preset, corpus.render)));
        m.outputs["wav"] = r.out;
        m.add_artifact(r.out);
        write_manifest(m, r.out + ".manifest.json");
        std::cout << "wrote " << r.out << "\n";
        return 0;
    }
    if (r.a < 0 || r.b < 0) throw ValidationError("give --id, or --a and --b");
    const auto& A = item(r.a);
    const auto& B = item(r.b);
    InterpSequence seq;
    if (parse_interp_method(r.method) == InterpMethod::Latent) {
        if (r.checkpoint.empty()) throw ValidationError("--checkpoint is required for the latent method");
        m.inputs["checkpoint"] = r.checkpoint;
        const SpinVae model = SpinVae::from_checkpoint(nn::load_checkpoint(r.checkpoint), corpus.descriptor);
        seq = interpolate_latent(model, corpus.render, {&A.record.preset, &A.spectrogram}, {&B.record.preset, &B.spectrogram}, r.T, r.path);
    } else {
        seq = interpolate_reference(corpus.descriptor, A.record.preset, B.record.preset, r.T, r.path);
    }
    seq.pair_id = std::to_string(r.a) + "-" + std::to_string(r.b);
    const auto rendered = render_sequence(corpus.descriptor, seq, corpus.render, r.out);
    for (const auto& f : rendered.files) m.add_artifact((fs::path(r.out) / f).string());
    m.outputs["dir"] = r.out;
    write_manifest(m, (fs::path(r.out) / (seq.pair_id + "_" + r.method + ".run.json")).string());
    std::cout << "wrote " << rendered.files.size() << " files to " << r.out << "\n";
    return 0;
}

struct ServeArgs {
    std::string checkpoint, corpus, host = "127.0.0.1";
    int port = 8080;
};

int run_serve(const ServeArgs& s) {
    Corpus corpus = load_corpus(s.corpus);
    SpinVae model = SpinVae::from_checkpoint(nn::load_checkpoint(s.checkpoint), corpus.descriptor);
    Service service(std::move(model), std::move(corpus));
    const int port = service.start(s.host, s.port);
    std::cout << "listening on http://" << s.host << ":" << port << "/api\n" << std::flush;
    service.wait();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Preset interpolation with a bimodal VAE over a miniature FM synthesizer"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI file with option values; command-line flags take precedence");

    DatasetArgs ds;
    auto* dataset = app.add_subcommand("dataset", "Sample, render and split a preset corpus");
    dataset->add_option("--descriptor", ds.descriptor, "Descriptor document (default: built-in mini-FM)")->check(CLI::ExistingFile);
    dataset->add_option("--n", ds.n, "Number of presets")->capture_default_str();
    dataset->add_option("--seed", ds.seed, "Seed")->capture_default_str();
    dataset->add_option("--out", ds.out, "Corpus file")->required();
    dataset->add_option("--sample-rate", ds.render.sample_rate, "Hz")->capture_default_str();
    dataset->add_option("--duration", ds.render.duration, "Seconds")->capture_default_str();
    dataset->add_option("--f0", ds.render.f0, "Note frequency, Hz")->capture_default_str();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model on a corpus");
    train_cmd->add_option("--corpus", tr.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", tr.out, "Checkpoint file")->required();
    train_cmd->add_option("--history", tr.history, "Loss history CSV (default: <out>.history.csv)");
    train_cmd->add_option("--resume", tr.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
    train_cmd->add_option("--epochs", tr.cfg.epochs, "Total epochs")->capture_default_str();
    train_cmd->add_option("--batch-size", tr.cfg.batch_size)->capture_default_str();
    train_cmd->add_option("--lr", tr.cfg.lr, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--final-lr-fraction", tr.cfg.final_lr_fraction, "Cosine decay target; 1 = constant")->capture_default_str();
    train_cmd->add_option("--ema-decay", tr.cfg.ema_decay, "Weight averaging decay per step; 0 = off")->capture_default_str();
    train_cmd->add_option("--warmup-fraction", tr.cfg.warmup_fraction, "Share of steps for the beta warm-up")->capture_default_str();
    train_cmd->add_option("--seed", tr.cfg.seed)->capture_default_str();
    train_cmd->add_option("--mode", tr.mode, "bimodal | preset-only | sound-matching")->capture_default_str();
    train_cmd->add_option("--numerical-head", tr.head, "dlm | softmax")->capture_default_str();
    train_cmd->add_option("--mixture", tr.cfg.model.mixture, "DLM components")->capture_default_str();
    train_cmd->add_option("--latent-dim", tr.cfg.model.latent_dim)->capture_default_str();
    train_cmd->add_option("--beta", tr.cfg.model.beta)->capture_default_str();
    train_cmd->add_option("--d-model", tr.cfg.model.attention.d_model)->capture_default_str();
    train_cmd->add_option("--heads", tr.cfg.model.attention.heads)->capture_default_str();
    train_cmd->add_option("--encoder-layers", tr.cfg.model.attention.layers)->capture_default_str();
    train_cmd->add_option("--ff-dim", tr.cfg.model.attention.ff_dim)->capture_default_str();
    train_cmd->add_option("--decoder-layers", tr.cfg.model.decoder_layers)->capture_default_str();
    train_cmd->add_option("--memory-tokens", tr.cfg.model.memory_tokens)->capture_default_str();
    train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch output");

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval-interp", "Interpolate test pairs with both methods and report timbre metrics");
    eval->add_option("--checkpoint", ev.checkpoint)->check(CLI::ExistingFile);
    eval->add_option("--corpus", ev.corpus)->check(CLI::ExistingFile);
    eval->add_option("--pairs", ev.pairs, "Number of test pairs")->capture_default_str();
    eval->add_option("--T", ev.T, "Steps per sequence")->capture_default_str();
    eval->add_option("--seed", ev.seed, "Pair shuffling seed")->capture_default_str();
    eval->add_option("--out", ev.out, "Output directory")->required();
    eval->add_option("--from-features", ev.from_features, "Rebuild the report from a features CSV")->check(CLI::ExistingFile);
    eval->add_flag("--no-audio", ev.no_audio, "Do not write WAV files");

    RenderArgs rd;
    auto* render_cmd = app.add_subcommand("render", "Render one preset, or one interpolation sequence");
    render_cmd->add_option("--corpus", rd.corpus)->required()->check(CLI::ExistingFile);
    render_cmd->add_option("--checkpoint", rd.checkpoint)->check(CLI::ExistingFile);
    render_cmd->add_option("--id", rd.id, "Preset id to render to --out (a WAV file)");
    render_cmd->add_option("--a", rd.a, "Start preset id");
    render_cmd->add_option("--b", rd.b, "End preset id");
    render_cmd->add_option("--method", rd.method, "latent | reference")->capture_default_str();
    render_cmd->add_option("--T", rd.T)->capture_default_str();
    render_cmd->add_option("--from", rd.path.from, "Coefficient at step 1")->capture_default_str();
    render_cmd->add_option("--to", rd.path.to, "Coefficient at step T")->capture_default_str();
    render_cmd->add_flag("--extrapolate", rd.path.extrapolate, "Allow coefficients outside [0, 1]");
    render_cmd->add_option("--out", rd.out, "WAV file (--id) or directory")->required();

    ServeArgs sv;
    auto* serve = app.add_subcommand("serve", "HTTP API for the explorer UI");
    serve->add_option("--checkpoint", sv.checkpoint)->required()->check(CLI::ExistingFile);
    serve->add_option("--corpus", sv.corpus)->required()->check(CLI::ExistingFile);
    serve->add_option("--host", sv.host)->capture_default_str();
    serve->add_option("--port", sv.port)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(kExitUsage, "usage", e.what());
    }

    try {
        if (*dataset) return run_dataset(ds);
        if (*train_cmd) return run_train(tr);
        if (*eval) return run_eval_interp(ev);
        if (*render_cmd) return run_render(rd);
        if (*serve) return run_serve(sv);
    } catch (const NumericalError& e) {
        return fail(kExitNumerical, "numerical", e.what());
    } catch (const DescriptorMismatch& e) {
        return fail(kExitMismatch, "descriptor-mismatch", e.what());
    } catch (const ValidationError& e) {
        return fail(kExitUsage, "invalid", e.what());
    } catch (const ParseError& e) {
        return fail(kExitUsage, "parse", e.what());
    } catch (const IoError& e) {
        return fail(kExitUsage, "io", e.what());
    } catch (const std::exception& e) {
        return fail(kExitUsage, "failed", e.what());
    }
    return kExitUsage;
}
