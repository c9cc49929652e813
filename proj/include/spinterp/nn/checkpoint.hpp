#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "spinterp/nn/tensor.hpp"

namespace spinterp::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Binary container:
///   "SPNV" | u32 version | u64 descriptor hash | str config
///   | u32 count | count x (str name | u8 dtype | u32 rank | rank x u32 dims | f64 data...)
///   | str training state | u32 count | state tensors (same encoding)
/// Integers and doubles are little-endian; str = u32 length + bytes. dtype 1 = f64.
struct Checkpoint {
    std::uint64_t descriptor_hash = 0;
    std::string config;           // JSON
    std::vector<NamedTensor> tensors;
    std::string training_state;   // JSON, may be empty
    std::vector<NamedTensor> state_tensors;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace spinterp::nn
