#include "pdp/model/checkpoint.hpp"

#include <fstream>

namespace pdp {

namespace {

constexpr char kMagic[8] = {'P', 'D', 'P', 'C', 'K', 'P', 'T', '\n'};

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw IoError("checkpoint: truncated file");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    const std::uint64_t n = read_u64(in);
    if (n > (1ull << 32)) throw IoError("checkpoint: implausible string length");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw IoError("checkpoint: truncated string");
    return s;
}

void write_tensor(std::ostream& out, const Tensor& t) {
    write_u64(out, static_cast<std::uint64_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_u64(out, static_cast<std::uint64_t>(t.dim(i)));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(real) * static_cast<size_t>(t.numel())));
}

Tensor read_tensor(std::istream& in) {
    const std::uint64_t nd = read_u64(in);
    if (nd > 8) throw IoError("checkpoint: implausible tensor rank");
    std::vector<int> shape;
    for (std::uint64_t i = 0; i < nd; ++i) shape.push_back(static_cast<int>(read_u64(in)));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(real) * static_cast<size_t>(t.numel())));
    if (!in) throw IoError("checkpoint: truncated tensor data");
    return t;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof(kMagic));
    write_string(out, schema_id);
    write_string(out, config.to_text());
    write_u64(out, static_cast<std::uint64_t>(epoch));
    write_u64(out, static_cast<std::uint64_t>(step));
    out.write(reinterpret_cast<const char*>(&best_map50), sizeof(best_map50));
    write_string(out, rng_state);
    write_u64(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        write_string(out, name);
        write_tensor(out, t);
    }
    if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || !std::equal(magic, magic + sizeof(kMagic), kMagic))
        throw IoError("not a checkpoint file: " + path);
    Checkpoint c;
    c.schema_id = read_string(in);
    if (c.schema_id != kSchemaId)
        throw IoError("checkpoint schema '" + c.schema_id + "' does not match expected '" + kSchemaId + "'");
    c.config = RunConfig::from_text(read_string(in));
    c.epoch = static_cast<int>(read_u64(in));
    c.step = static_cast<std::int64_t>(read_u64(in));
    in.read(reinterpret_cast<char*>(&c.best_map50), sizeof(c.best_map50));
    c.rng_state = read_string(in);
    const std::uint64_t n = read_u64(in);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = read_string(in);
        c.tensors.emplace(std::move(name), read_tensor(in));
    }
    return c;
}

void store_network(const Network& net, Checkpoint& ckpt) {
    for (const auto& p : net.registry().params) ckpt.tensors[p.name] = p.var->value;
    for (const auto& b : net.registry().buffers) ckpt.tensors[b.name] = *b.data;
}

void load_network(Network& net, const Checkpoint& ckpt) {
    auto fetch = [&](const std::string& name, const Tensor& like) -> const Tensor& {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw IoError("checkpoint is missing tensor " + name);
        if (!same_shape(it->second, like))
            throw IoError("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape()) +
                          ", model expects " + shape_str(like.shape()));
        return it->second;
    };
    for (auto& p : net.registry().params) p.var->value = fetch(p.name, p.var->value);
    for (auto& b : net.registry().buffers) *b.data = fetch(b.name, *b.data);
}

Network network_from_checkpoint(const Checkpoint& ckpt) {
    Network net(ckpt.config.model, /*seed=*/1);
    load_network(net, ckpt);
    return net;
}

}  // namespace pdp
