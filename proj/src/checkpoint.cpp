#include "hunet/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hunet {

namespace {

constexpr char kMagic[4] = {'U', 'H', 'K', 'T'};

struct Writer {
    std::vector<std::uint8_t> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t raw;
        std::memcpy(&raw, &v, 4);
        u32(raw);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
    void tensor(const Tensor<float>& t) {
        u32(4);
        u32(static_cast<std::uint32_t>(t.shape.n));
        u32(static_cast<std::uint32_t>(t.shape.c));
        u32(static_cast<std::uint32_t>(t.shape.h));
        u32(static_cast<std::uint32_t>(t.shape.w));
        for (float v : t.data) f32(v);
    }
};

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;
    const std::string& origin;

    void need(std::size_t count, const char* what) {
        if (pos + count > bytes.size())
            throw std::runtime_error(origin + ": truncated checkpoint while reading " + what +
                                     " at byte " + std::to_string(pos));
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return bytes[pos++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    float f32(const char* what) {
        const std::uint32_t raw = u32(what);
        float v;
        std::memcpy(&v, &raw, 4);
        return v;
    }
    std::string str(const char* what) {
        const std::uint32_t len = u32(what);
        need(len, what);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), len);
        pos += len;
        return s;
    }
    Tensor<float> tensor(const char* what) {
        const std::uint32_t rank = u32(what);
        if (rank != 4)
            throw std::runtime_error(origin + ": unsupported tensor rank " + std::to_string(rank) +
                                     " for " + what);
        Shape s;
        s.n = static_cast<int>(u32(what));
        s.c = static_cast<int>(u32(what));
        s.h = static_cast<int>(u32(what));
        s.w = static_cast<int>(u32(what));
        if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
            throw std::runtime_error(origin + ": invalid tensor extents for " + what);
        Tensor<float> t(s);
        for (auto& v : t.data) v = f32(what);
        return t;
    }
};

const std::array<std::uint32_t, 256>& crc_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t seed) {
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) c = crc_table()[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    Writer w;
    w.bytes.insert(w.bytes.end(), kMagic, kMagic + 4);
    w.u32(ck.version);
    w.str(ck.config_text);
    w.u64(ck.step);
    w.u8(ck.optimizer ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        w.str(t.name);
        w.tensor(t.value);
    }
    if (ck.optimizer) {
        w.u64(static_cast<std::uint64_t>(ck.optimizer->t));
        if (ck.optimizer->m.size() != ck.tensors.size() || ck.optimizer->v.size() != ck.tensors.size())
            throw std::logic_error("serialize_checkpoint: optimizer state does not match parameter count");
        for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
            w.tensor(ck.optimizer->m[i]);
            w.tensor(ck.optimizer->v[i]);
        }
    }
    w.u32(crc32(w.bytes.data(), w.bytes.size()));
    return w.bytes;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 8) throw std::runtime_error(origin + ": truncated checkpoint (no header)");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error(origin + ": bad magic, not a checkpoint file");
    const std::size_t body = bytes.size() - 4;
    const std::uint32_t want = crc32(bytes.data(), body);
    std::uint32_t have = 0;
    for (int i = 0; i < 4; ++i) have |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
    if (want != have)
        throw std::runtime_error(origin + ": checksum mismatch (file corrupt)");

    Reader r{bytes, 4, origin};
    Checkpoint ck;
    ck.version = r.u32("version");
    if (ck.version != kCheckpointVersion)
        throw std::runtime_error(origin + ": unsupported checkpoint version " + std::to_string(ck.version) +
                                 " (expected " + std::to_string(kCheckpointVersion) + ")");
    ck.config_text = r.str("config");
    ck.step = r.u64("step");
    const bool has_opt = r.u8("optimizer flag") != 0;
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointTensor t;
        t.name = r.str("tensor name");
        t.value = r.tensor(t.name.c_str());
        ck.tensors.push_back(std::move(t));
    }
    if (has_opt) {
        AdamState<float> opt;
        opt.t = static_cast<std::int64_t>(r.u64("optimizer step"));
        for (std::uint32_t i = 0; i < count; ++i) {
            opt.m.push_back(r.tensor("optimizer first moment"));
            opt.v.push_back(r.tensor("optimizer second moment"));
        }
        ck.optimizer = std::move(opt);
    }
    if (r.pos != body)
        throw std::runtime_error(origin + ": trailing bytes after checkpoint payload");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, HybridUNet<float>& model,
                     const std::string& config_text, std::uint64_t step,
                     const AdamState<float>* optimizer) {
    Checkpoint ck;
    ck.version = kCheckpointVersion;
    ck.config_text = config_text;
    ck.step = step;
    for (Param<float>* p : model.params()) ck.tensors.push_back({p->name, p->value.detached()});
    if (optimizer) ck.optimizer = *optimizer;
    const auto bytes = serialize_checkpoint(ck);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes, path.string());
}

void load_into(HybridUNet<float>& model, const Checkpoint& ck) {
    auto& registry = model.params();
    if (registry.size() != ck.tensors.size())
        throw std::runtime_error("checkpoint has " + std::to_string(ck.tensors.size()) +
                                 " tensors but model expects " + std::to_string(registry.size()));
    for (std::size_t i = 0; i < registry.size(); ++i) {
        Param<float>& p = *registry[i];
        const CheckpointTensor& t = ck.tensors[i];
        if (p.name != t.name)
            throw std::runtime_error("checkpoint/config mismatch at tensor '" + t.name +
                                     "' (model expects '" + p.name + "')");
        if (p.value.shape != t.value.shape)
            throw std::runtime_error("checkpoint/config mismatch at tensor '" + t.name + "': shape " +
                                     to_string(t.value.shape) + " vs model " + to_string(p.value.shape));
        p.value = t.value.detached();
    }
}

}  // namespace hunet
