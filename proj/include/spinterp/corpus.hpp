#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "spinterp/fm_synth.hpp"
#include "spinterp/preset_schema.hpp"

namespace spinterp {

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

std::string to_string(Split s);
Split parse_split(std::string_view s);

struct CorpusItem {
    PresetRecord record;
    Split split = Split::Train;
    Spectrogram spectrogram;
};

struct Corpus {
    SynthDescriptor descriptor;
    std::uint64_t seed = 0;
    RenderConfig render{};
    std::vector<CorpusItem> items;

    std::vector<int> indices(Split s) const;
    /// Position of the item with the given preset id.
    int find(std::uint64_t id) const;
};

/// 80/10/10 assignment of n items: a seeded shuffle, then the first floor(0.8 n)
/// go to Train, the next floor(0.1 n) to Validation, the rest to Test.
std::vector<Split> assign_splits(int n, std::uint64_t seed);

/// Samples n presets (item i uses seed mix_seed(seed, i)), renders and
/// spectrograms them, and assigns splits. Requires n >= 10.
Corpus build_corpus(const SynthDescriptor& descriptor, int n, std::uint64_t seed, const RenderConfig& render = {});

/// Spectrogram settings shared by the corpus, the model and the service.
SpecConfig spec_config_for(const RenderConfig& render);

/// Corpus container:
///   "SPNC" | u32 version | u64 descriptor hash | str descriptor document | u64 seed
///   | f64 sample_rate, duration, f0 | str preset lines | u32 n | n x u8 split
///   | u32 mel_bins | u32 frames | n x mel_bins x frames f64
/// Little-endian throughout; str = u32 length + bytes.
std::string encode_corpus(const Corpus& corpus);
Corpus decode_corpus(std::string_view bytes);

void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

}  // namespace spinterp
