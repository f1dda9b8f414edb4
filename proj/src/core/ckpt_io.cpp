#include "ckpt_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "fsio.hpp"
#include "sha256.hpp"

namespace plab {

namespace {

constexpr char k_magic[8] = {'P', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
constexpr uint32_t k_version = 1;
constexpr uint32_t k_dtype_f32 = 0;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const uint8_t* p;
    size_t len;
    size_t pos = 0;

    void need(size_t n) const {
        check(pos + n <= len, errc::format, "checkpoint header truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + static_cast<size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[pos + static_cast<size_t>(i)]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p + pos), n);
        pos += n;
        return s;
    }
};

void config_to_words(const ModelConfig& c, uint32_t w[7]) {
    w[0] = static_cast<uint32_t>(c.num_layers);
    w[1] = static_cast<uint32_t>(c.hidden_dim);
    w[2] = static_cast<uint32_t>(c.num_heads);
    w[3] = static_cast<uint32_t>(c.vocab_size);
    w[4] = static_cast<uint32_t>(c.max_seq_len);
    w[5] = static_cast<uint32_t>(c.vision_feature_dim);
    w[6] = static_cast<uint32_t>(c.ffn_dim);
}

ModelConfig config_from_words(const uint32_t w[7]) {
    ModelConfig c;
    c.num_layers = static_cast<int>(w[0]);
    c.hidden_dim = static_cast<int>(w[1]);
    c.num_heads = static_cast<int>(w[2]);
    c.vocab_size = static_cast<int>(w[3]);
    c.max_seq_len = static_cast<int>(w[4]);
    c.vision_feature_dim = static_cast<int>(w[5]);
    c.ffn_dim = static_cast<int>(w[6]);
    return c;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    ckpt.validate();

    std::string header;
    put_u32(header, static_cast<uint32_t>(ckpt.kind));
    uint32_t cw[7];
    config_to_words(ckpt.config, cw);
    for (uint32_t w : cw) put_u32(header, w);
    put_u32(header, static_cast<uint32_t>(ckpt.tensors.size()));

    // std::map iteration gives the canonical lexicographic tensor order
    uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        put_u32(header, static_cast<uint32_t>(name.size()));
        header.append(name);
        put_u32(header, k_dtype_f32);
        put_u32(header, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) put_u32(header, static_cast<uint32_t>(d));
        const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * 4;
        put_u64(header, offset);
        put_u64(header, nbytes);
        offset += nbytes;
    }

    std::string bytes;
    bytes.reserve(8 + 4 + 8 + header.size() + offset);
    bytes.append(k_magic, sizeof(k_magic));
    put_u32(bytes, k_version);
    put_u64(bytes, header.size());
    bytes.append(header);
    for (const auto& [name, t] : ckpt.tensors) {
        static_assert(sizeof(float) == 4);
        const size_t start = bytes.size();
        bytes.resize(start + t.data.size() * 4);
        // f32 payload is little-endian; this memcpy assumes an LE host
        std::memcpy(bytes.data() + start, t.data.data(), t.data.size() * 4);
    }
    return bytes;
}

std::string checkpoint_digest(const Checkpoint& ckpt) {
    return sha256_hex(serialize_checkpoint(ckpt));
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), errc::io, "cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    check(!in.bad(), errc::io, "read failed: " + path);

    check(bytes.size() >= 8 + 4 + 8, errc::format, "checkpoint too short: " + path);
    check(std::memcmp(bytes.data(), k_magic, sizeof(k_magic)) == 0, errc::format,
          "bad checkpoint magic: " + path);

    Reader top{reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size(), 8};
    const uint32_t version = top.u32();
    check(version == k_version, errc::format, "unsupported checkpoint version");
    const uint64_t header_len = top.u64();
    check(top.pos + header_len <= bytes.size(), errc::format, "checkpoint header truncated");

    Reader hdr{reinterpret_cast<const uint8_t*>(bytes.data()) + top.pos, header_len, 0};
    const size_t payload_start = top.pos + header_len;
    const size_t payload_len = bytes.size() - payload_start;

    Checkpoint ckpt;
    const uint32_t kind_word = hdr.u32();
    check(kind_word <= 2, errc::format, "bad checkpoint kind");
    ckpt.kind = static_cast<CkptKind>(kind_word);
    uint32_t cw[7];
    for (auto& w : cw) w = hdr.u32();
    ckpt.config = config_from_words(cw);
    ckpt.config.validate();

    const uint32_t count = hdr.u32();
    std::string prev_name;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = hdr.u32();
        check(name_len > 0 && name_len <= 256, errc::format, "bad tensor name length");
        std::string name = hdr.bytes(name_len);
        check(i == 0 || prev_name < name, errc::format,
              "tensor names out of canonical order: " + name);
        prev_name = name;

        const uint32_t dtype = hdr.u32();
        check(dtype == k_dtype_f32, errc::format, "unsupported dtype for tensor " + name);
        const uint32_t ndim = hdr.u32();
        check(ndim >= 1 && ndim <= 4, errc::format, "bad rank for tensor " + name);
        std::vector<int> shape;
        uint64_t n = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            const uint32_t dim = hdr.u32();
            check(dim > 0 && dim <= (1u << 24), errc::format, "bad dimension for tensor " + name);
            shape.push_back(static_cast<int>(dim));
            n *= dim;
        }
        const uint64_t off = hdr.u64();
        const uint64_t nbytes = hdr.u64();
        check(nbytes == n * 4, errc::format, "byte length disagrees with shape for " + name);
        check(off + nbytes <= payload_len, errc::format, "payload range out of bounds for " + name);

        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(static_cast<size_t>(n));
        std::memcpy(t.data.data(), bytes.data() + payload_start + off, static_cast<size_t>(nbytes));
        for (float v : t.data)
            check(std::isfinite(v), errc::format, "non-finite value in tensor " + name);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    check(hdr.pos == header_len, errc::format, "trailing bytes in checkpoint header");
    ckpt.validate();
    return ckpt;
}

bool CkptDiff::identical() const { return kinds_match && tensors_identical(); }

bool CkptDiff::tensors_identical() const {
    if (!configs_match) return false;
    if (!only_first.empty() || !only_second.empty()) return false;
    for (const auto& d : deltas)
        if (d.n_differing != 0) return false;
    return true;
}

CkptDiff diff_checkpoints(const Checkpoint& a, const Checkpoint& b) {
    CkptDiff out;
    out.configs_match = a.config == b.config;
    out.kinds_match = a.kind == b.kind;
    for (const auto& [name, ta] : a.tensors) {
        auto it = b.tensors.find(name);
        if (it == b.tensors.end()) {
            out.only_first.push_back(name);
            continue;
        }
        const Tensor& tb = it->second;
        TensorDelta d;
        d.name = name;
        if (!ta.same_shape(tb)) {
            d.max_abs_diff = std::numeric_limits<float>::infinity();
            d.n_differing = std::max(ta.numel(), tb.numel());
        } else {
            for (size_t i = 0; i < ta.data.size(); ++i) {
                const float diff = std::abs(ta.data[i] - tb.data[i]);
                if (diff > 0.0f || ta.data[i] != tb.data[i]) {
                    ++d.n_differing;
                    d.max_abs_diff = std::max(d.max_abs_diff, diff);
                }
            }
        }
        out.deltas.push_back(std::move(d));
    }
    for (const auto& [name, tb] : b.tensors) {
        if (a.tensors.find(name) == a.tensors.end()) out.only_second.push_back(name);
    }
    return out;
}

std::string checkpoint_file_digest(const std::string& path) { return sha256_file_hex(path); }

}  // namespace plab
