#include "spinterp/nn/checkpoint.hpp"

#include <cstring>

#include "spinterp/binary_io.hpp"

namespace spinterp::nn {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'N', 'V'};
constexpr std::uint8_t kDtypeF64 = 1;

void write_tensors(bin::Writer& w, const std::vector<NamedTensor>& ts) {
    w.u32(static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) {
        w.str(t.name);
        w.u8(kDtypeF64);
        w.u32(static_cast<std::uint32_t>(t.tensor.shape.size()));
        for (int d : t.tensor.shape) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.tensor.data) w.f64(v);
    }
}

std::vector<NamedTensor> read_tensors(bin::Reader& r) {
    const std::uint32_t count = r.u32("tensor count");
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str("tensor name");
        const std::uint8_t dtype = r.u8("dtype");
        if (dtype != kDtypeF64) throw ParseError("checkpoint tensor '" + t.name + "': unsupported dtype " + std::to_string(dtype));
        const std::uint32_t rank = r.u32("rank");
        if (rank > 8) throw ParseError("checkpoint tensor '" + t.name + "': implausible rank");
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<int>(r.u32("dimension")));
        const std::size_t n = numel(shape);
        r.need(n * 8, "tensor data");
        std::vector<double> data(n);
        for (double& v : data) v = r.f64("tensor data");
        t.tensor = Tensor(std::move(shape), std::move(data));
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    bin::Writer w;
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.u64(ckpt.descriptor_hash);
    w.str(ckpt.config);
    write_tensors(w, ckpt.tensors);
    w.str(ckpt.training_state);
    write_tensors(w, ckpt.state_tensors);
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("not a checkpoint (bad magic)");
    bin::Reader r(bytes.substr(4), "checkpoint");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.descriptor_hash = r.u64("descriptor hash");
    c.config = r.str("config");
    c.tensors = read_tensors(r);
    c.training_state = r.str("training state");
    c.state_tensors = read_tensors(r);
    if (!r.done()) throw ParseError("trailing bytes after checkpoint");
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace spinterp::nn
