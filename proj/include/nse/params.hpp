#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "nse/errors.hpp"
#include "nse/rng.hpp"
#include "nse/tensor.hpp"

namespace nse {

// Named, shaped registry of every trainable tensor in a model. Iteration is
// insertion-ordered so optimizers and checkpoints see a stable sequence.
class ParamRegistry {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool weight_decay_eligible = false;
        std::string initializer_id;
    };

    Tensor& add(const std::string& name, Tensor t, bool weight_decay_eligible,
                const std::string& initializer_id) {
        if (index_.count(name)) throw ConfigError("parameter registered twice: " + name);
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(t), weight_decay_eligible, initializer_id});
        return entries_.back().tensor;
    }

    Tensor xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
        return add(name, Tensor::parameter({fan_in, fan_out}, rng.xavier_uniform(fan_in, fan_out)),
                   true, "xavier_uniform");
    }

    Tensor zeros_bias(const std::string& name, std::size_t n) {
        return add(name, Tensor::parameter({n}, std::vector<double>(n, 0.0)), false, "zeros");
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    const Entry& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return entries_[it->second];
    }
    Tensor tensor(const std::string& name) const { return at(name).tensor; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    void zero_grad() {
        for (auto& e : entries_) {
            auto n = e.tensor.node();
            std::fill(n->grad.begin(), n->grad.end(), 0.0);
        }
    }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Checkpoint container, format version 1.
//
//   magic   8 bytes  "NSECKPT1"
//   seed    u64 LE   rng seed the run was started with
//   count   u32 LE   number of tensors
//   per tensor:
//     u32 LE name length, name bytes
//     u8     weight-decay flag
//     u32 LE initializer-id length, id bytes
//     u32 LE ndim, then ndim x u64 LE dims
//     numel x f64 LE row-major data
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(os, v);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}
inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}
inline double get_f64(std::istream& is) {
    std::uint64_t v = get_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "NSECKPT1";

inline void save_checkpoint(const std::string& path, const ParamRegistry& reg,
                            std::uint64_t seed) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
    os.write(kCheckpointMagic, 8);
    detail::put_u64(os, seed);
    detail::put_u32(os, static_cast<std::uint32_t>(reg.size()));
    for (const auto& e : reg.entries()) {
        detail::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        os.put(e.weight_decay_eligible ? '\1' : '\0');
        detail::put_u32(os, static_cast<std::uint32_t>(e.initializer_id.size()));
        os.write(e.initializer_id.data(), static_cast<std::streamsize>(e.initializer_id.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(e.tensor.ndim()));
        for (auto d : e.tensor.shape()) detail::put_u64(os, d);
        for (double v : e.tensor.value()) detail::put_f64(os, v);
    }
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

struct Checkpoint {
    std::uint64_t seed = 0;
    ParamRegistry registry;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    Checkpoint ck;
    ck.seed = detail::get_u64(is);
    const std::uint32_t count = detail::get_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::get_u32(is);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw DataError("checkpoint: truncated file");
        const int wd = is.get();
        if (wd == EOF) throw DataError("checkpoint: truncated file");
        const std::uint32_t init_len = detail::get_u32(is);
        std::string init(init_len, '\0');
        if (!is.read(init.data(), init_len)) throw DataError("checkpoint: truncated file");
        const std::uint32_t ndim = detail::get_u32(is);
        Shape shape(ndim);
        for (auto& d : shape) d = detail::get_u64(is);
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = detail::get_f64(is);
        ck.registry.add(name, Tensor::parameter(shape, std::move(data)), wd != 0, init);
    }
    return ck;
}

// Copy checkpoint values into an already-built registry; shapes must agree.
inline void restore_params(ParamRegistry& reg, const Checkpoint& ck) {
    for (auto& e : reg.entries()) {
        if (!ck.registry.contains(e.name))
            throw DataError("checkpoint: missing parameter " + e.name);
        const auto& src = ck.registry.at(e.name);
        if (src.tensor.shape() != e.tensor.shape())
            throw DataError("checkpoint: shape mismatch for " + e.name + ": file has " +
                            shape_str(src.tensor.shape()) + ", model expects " +
                            shape_str(e.tensor.shape()));
        e.tensor.mutable_value() = src.tensor.value();
    }
}

}  // namespace nse
