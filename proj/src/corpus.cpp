#include "spinterp/corpus.hpp"

#include <cstring>
#include <exception>

#include "spinterp/binary_io.hpp"

namespace spinterp {

namespace {
constexpr char kMagic[4] = {'S', 'P', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val" || s == "validation") return Split::Validation;
    if (s == "test") return Split::Test;
    throw ValidationError("unknown split '" + std::string(s) + "' (train|val|test)");
}

std::vector<int> Corpus::indices(Split s) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(items.size()); ++i)
        if (items[i].split == s) out.push_back(i);
    return out;
}

int Corpus::find(std::uint64_t id) const {
    for (int i = 0; i < static_cast<int>(items.size()); ++i)
        if (items[i].record.id == id) return i;
    return -1;
}

std::vector<Split> assign_splits(int n, std::uint64_t seed) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(seed, 0x5711ULL));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    const int n_train = n * 8 / 10;
    const int n_val = n / 10;
    std::vector<Split> out(n);
    for (int r = 0; r < n; ++r) out[order[r]] = r < n_train ? Split::Train : (r < n_train + n_val ? Split::Validation : Split::Test);
    return out;
}

SpecConfig spec_config_for(const RenderConfig& render) {
    SpecConfig s;
    s.num_samples = render.num_samples();
    s.fmax = std::min(s.fmax, render.sample_rate / 2.0);
    return s;
}

Corpus build_corpus(const SynthDescriptor& descriptor, int n, std::uint64_t seed, const RenderConfig& render) {
    if (n < 10) throw ValidationError("corpus size must satisfy n >= 10 (got " + std::to_string(n) + ")");
    render.validate();
    Corpus c;
    c.descriptor = descriptor;
    c.seed = seed;
    c.render = render;
    c.items.resize(n);
    const auto splits = assign_splits(n, seed);
    const SpecConfig spec = spec_config_for(render);
    std::exception_ptr failure;
    std::string failure_msg;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        auto& item = c.items[i];
        item.record.id = static_cast<std::uint64_t>(i);
        item.record.seed = mix_seed(seed, static_cast<std::uint64_t>(i));
        item.split = splits[i];
        try {
            item.record.preset = sample_random_preset(descriptor, item.record.seed);
            item.spectrogram = mel_spectrogram(spinterp::render(descriptor, item.record.preset, render), spec);
        } catch (const std::exception& e) {
#pragma omp critical(corpus_failure)
            if (!failure) {
                failure = std::current_exception();
                failure_msg = "render failed for preset " + std::to_string(i) + ": " + e.what();
            }
        }
    }
    if (failure) throw Error(failure_msg);
    return c;
}

std::string encode_corpus(const Corpus& corpus) {
    bin::Writer w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u64(corpus.descriptor.hash());
    w.str(corpus.descriptor.to_document());
    w.u64(corpus.seed);
    w.f64(corpus.render.sample_rate);
    w.f64(corpus.render.duration);
    w.f64(corpus.render.f0);
    std::vector<PresetRecord> records;
    for (const auto& it : corpus.items) records.push_back(it.record);
    w.str(serialize_presets(corpus.descriptor, records));
    w.u32(static_cast<std::uint32_t>(corpus.items.size()));
    for (const auto& it : corpus.items) w.u8(static_cast<std::uint8_t>(it.split));
    const int mel = corpus.items.empty() ? 0 : corpus.items[0].spectrogram.mel_bins;
    const int frames = corpus.items.empty() ? 0 : corpus.items[0].spectrogram.frames;
    w.u32(static_cast<std::uint32_t>(mel));
    w.u32(static_cast<std::uint32_t>(frames));
    for (const auto& it : corpus.items) {
        if (it.spectrogram.mel_bins != mel || it.spectrogram.frames != frames)
            throw ValidationError("corpus spectrograms differ in shape");
        for (double v : it.spectrogram.data) w.f64(v);
    }
    return w.take();
}

Corpus decode_corpus(std::string_view bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("not a corpus file (bad magic)");
    bin::Reader r(bytes.substr(4), "corpus");
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) throw ParseError("unsupported corpus version " + std::to_string(version));
    Corpus c;
    const std::uint64_t hash = r.u64("descriptor hash");
    c.descriptor = load_descriptor(r.str("descriptor"));
    if (c.descriptor.hash() != hash)
        throw DescriptorMismatch("corpus descriptor hash " + hex64(hash) + " does not match its embedded descriptor");
    c.seed = r.u64("seed");
    c.render.sample_rate = r.f64("render config");
    c.render.duration = r.f64("render config");
    c.render.f0 = r.f64("render config");
    auto records = parse_presets(c.descriptor, r.str("presets"));
    const std::uint32_t n = r.u32("item count");
    if (n != records.size())
        throw ParseError("corpus lists " + std::to_string(records.size()) + " presets but " + std::to_string(n) + " split labels");
    c.items.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint8_t s = r.u8("split");
        if (s > 2) throw ParseError("corpus item " + std::to_string(i) + ": bad split label " + std::to_string(s));
        c.items[i].split = static_cast<Split>(s);
        c.items[i].record = std::move(records[i]);
    }
    const int mel = static_cast<int>(r.u32("spectrogram shape"));
    const int frames = static_cast<int>(r.u32("spectrogram shape"));
    r.need(static_cast<std::size_t>(n) * mel * frames * 8, "spectrograms");
    for (auto& it : c.items) {
        it.spectrogram.mel_bins = mel;
        it.spectrogram.frames = frames;
        it.spectrogram.data.resize(static_cast<std::size_t>(mel) * frames);
        for (double& v : it.spectrogram.data) v = r.f64("spectrograms");
    }
    if (!r.done()) throw ParseError("trailing bytes after corpus");
    return c;
}

void save_corpus(const std::string& path, const Corpus& corpus) { write_file(path, encode_corpus(corpus)); }

Corpus load_corpus(const std::string& path) { return decode_corpus(read_file(path)); }

}  // namespace spinterp
