#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "trainer.hpp"

namespace bidpm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");
static_assert(sizeof(double) == 8, "checkpoint format stores 64-bit IEEE doubles");

/// Checkpoint container: a config echo plus named 64-bit-float arrays.
/// On-disk layout (all integers little-endian):
///   magic "BIDPMCKP" | u32 version | u64 config_len | config bytes |
///   u64 array_count | repeated { u64 name_len | name | u32 rank |
///                                u64 dims[rank] | f64 data[prod(dims)] }
struct Checkpoint {
    static constexpr char kMagic[8] = {'B', 'I', 'D', 'P', 'M', 'C', 'K', 'P'};
    static constexpr std::uint32_t kVersion = 1;

    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> arrays;

    const Tensor& find(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return t;
        throw Error("checkpoint: missing array '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return true;
        return false;
    }
};

namespace detail {

inline void put_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void put_u32(std::ostream& out, std::uint32_t v) { put_bytes(out, &v, 4); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_bytes(out, &v, 8); }

inline void get_bytes(std::istream& in, void* p, std::size_t n, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
        throw Error(std::string("checkpoint: truncated file while reading ") + what);
}
inline std::uint32_t get_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    get_bytes(in, &v, 4, what);
    return v;
}
inline std::uint64_t get_u64(std::istream& in, const char* what) {
    std::uint64_t v = 0;
    get_bytes(in, &v, 8, what);
    return v;
}

/// Canonical parameter names, matching the flat canonical order w0,b0,w1,b1…
inline std::vector<std::string> param_names(const VelocityField& f, const std::string& prefix) {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < f.weights.size(); ++l) {
        names.push_back(prefix + ".w" + std::to_string(l));
        names.push_back(prefix + ".b" + std::to_string(l));
    }
    return names;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("checkpoint: cannot open '" + path + "' for writing");
    detail::put_bytes(out, Checkpoint::kMagic, 8);
    detail::put_u32(out, Checkpoint::kVersion);
    detail::put_u64(out, ckpt.config_text.size());
    detail::put_bytes(out, ckpt.config_text.data(), ckpt.config_text.size());
    detail::put_u64(out, ckpt.arrays.size());
    for (const auto& [name, t] : ckpt.arrays) {
        detail::put_u64(out, name.size());
        detail::put_bytes(out, name.data(), name.size());
        detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d = 0; d < t.rank(); ++d) detail::put_u64(out, t.shape()[d]);
        detail::put_bytes(out, t.data().data(), t.size() * sizeof(double));
    }
    out.flush();
    if (!out) throw Error("checkpoint: write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("checkpoint: cannot open '" + path + "'");

    char magic[8] = {};
    detail::get_bytes(in, magic, 8, "magic");
    if (std::memcmp(magic, Checkpoint::kMagic, 8) != 0)
        throw Error("checkpoint: '" + path + "' is not a checkpoint file (bad magic)");
    const std::uint32_t version = detail::get_u32(in, "version");
    if (version != Checkpoint::kVersion)
        throw Error("checkpoint: unsupported format version " + std::to_string(version) +
                    " (expected " + std::to_string(Checkpoint::kVersion) + ")");

    Checkpoint ckpt;
    const std::uint64_t cfg_len = detail::get_u64(in, "config length");
    if (cfg_len > (1ull << 24)) throw Error("checkpoint: implausible config length");
    ckpt.config_text.resize(cfg_len);
    detail::get_bytes(in, ckpt.config_text.data(), cfg_len, "config text");

    const std::uint64_t count = detail::get_u64(in, "array count");
    if (count > (1ull << 20)) throw Error("checkpoint: implausible array count");
    for (std::uint64_t a = 0; a < count; ++a) {
        const std::uint64_t name_len = detail::get_u64(in, "array name length");
        if (name_len == 0 || name_len > (1ull << 16))
            throw Error("checkpoint: implausible array name length");
        std::string name(name_len, '\0');
        detail::get_bytes(in, name.data(), name_len, "array name");

        const std::uint32_t rank = detail::get_u32(in, "array rank");
        if (rank > 8) throw Error("checkpoint: implausible array rank");
        Shape shape;
        std::uint64_t total = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint64_t dim = detail::get_u64(in, "array dimension");
            if (dim > (1ull << 32) || total * std::max<std::uint64_t>(dim, 1) > (1ull << 28))
                throw Error("checkpoint: implausible array size");
            total *= std::max<std::uint64_t>(dim, 1);
            shape.push_back(static_cast<std::size_t>(dim));
        }
        Tensor t(shape);
        detail::get_bytes(in, t.data().data(), t.size() * sizeof(double), "array data");
        if (!t.all_finite())
            throw Error("checkpoint: array '" + name + "' contains non-finite values");
        ckpt.arrays.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

/// Bundle a finished (or in-flight) training run into a checkpoint. The state
/// array keeps the completed-step count and the seed split into two 32-bit
/// halves, so every value is exactly representable as a double.
inline Checkpoint make_checkpoint(const ExperimentConfig& cfg, const VelocityField& live,
                                  const VelocityField& ema, const OptimizerState& opt) {
    Checkpoint ckpt;
    ckpt.config_text = cfg.render();

    const auto push_field = [&ckpt](const VelocityField& f, const std::string& prefix) {
        const auto names = detail::param_names(f, prefix);
        const auto params = field_params(f);
        for (std::size_t i = 0; i < params.size(); ++i)
            ckpt.arrays.emplace_back(names[i], *params[i]);
    };
    push_field(live, "live");
    push_field(ema, "ema");

    const auto names = detail::param_names(live, "adam");
    if (opt.m.size() != names.size() || opt.v.size() != names.size())
        throw Error("make_checkpoint: optimizer state does not match the field layout");
    for (std::size_t i = 0; i < names.size(); ++i) {
        ckpt.arrays.emplace_back("adam.m." + names[i].substr(5), opt.m[i]);
        ckpt.arrays.emplace_back("adam.v." + names[i].substr(5), opt.v[i]);
    }

    Tensor state(Shape{3});
    state[0] = static_cast<double>(opt.step);
    state[1] = static_cast<double>(static_cast<std::uint32_t>(cfg.seed & 0xffffffffull));
    state[2] = static_cast<double>(static_cast<std::uint32_t>(cfg.seed >> 32));
    ckpt.arrays.emplace_back("state", std::move(state));
    return ckpt;
}

struct RestoredTraining {
    ExperimentConfig config;
    VelocityField live;
    VelocityField ema;
    OptimizerState opt;
    std::size_t steps = 0;
    std::uint64_t seed = 0;
};

/// Rebuild fields and optimizer state from a checkpoint, validating that the
/// stored arrays match the layout implied by the embedded config.
inline RestoredTraining restore_training(const Checkpoint& ckpt) {
    RestoredTraining r;
    r.config = ExperimentConfig::parse(ckpt.config_text);

    const TrainConfig& tc = r.config.train;
    const auto rebuild = [&](const std::string& prefix) {
        VelocityField f = init_field(2, tc.hidden, tc.embed_dim, FieldInit{0}, tc.hidden_layers);
        const auto names = detail::param_names(f, prefix);
        const auto params = field_params(f);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Tensor& stored = ckpt.find(names[i]);
            if (!stored.same_shape(*params[i]))
                throw Error("checkpoint: array '" + names[i] + "' has shape " +
                            shape_str(stored.shape()) + ", config implies " +
                            shape_str(params[i]->shape()));
            *params[i] = stored;
        }
        return f;
    };
    r.live = rebuild("live");
    r.ema = rebuild("ema");

    r.opt = OptimizerState::init(r.live);
    const auto names = detail::param_names(r.live, "adam");
    for (std::size_t i = 0; i < names.size(); ++i) {
        const std::string suffix = names[i].substr(5);
        const Tensor& m = ckpt.find("adam.m." + suffix);
        const Tensor& v = ckpt.find("adam.v." + suffix);
        if (!m.same_shape(r.opt.m[i]) || !v.same_shape(r.opt.v[i]))
            throw Error("checkpoint: optimizer array shape mismatch at '" + suffix + "'");
        r.opt.m[i] = m;
        r.opt.v[i] = v;
    }

    const Tensor& state = ckpt.find("state");
    if (state.size() != 3) throw Error("checkpoint: state array must have 3 entries");
    r.steps = static_cast<std::size_t>(state[0]);
    r.opt.step = r.steps;
    r.seed = static_cast<std::uint64_t>(state[1]) |
             (static_cast<std::uint64_t>(state[2]) << 32);
    if (r.seed != r.config.seed)
        throw Error("checkpoint: state seed disagrees with the embedded config");
    return r;
}

/// Human-readable digest for the inspect command.
inline std::string describe_checkpoint(const Checkpoint& ckpt) {
    std::ostringstream out;
    out << "format version: " << Checkpoint::kVersion << "\n";
    const Tensor& state = ckpt.find("state");
    out << "completed steps: " << static_cast<std::uint64_t>(state[0]) << "\n";
    out << "seed: "
        << (static_cast<std::uint64_t>(state[1]) | (static_cast<std::uint64_t>(state[2]) << 32))
        << "\n";
    out << "arrays (" << ckpt.arrays.size() << "):\n";
    for (const auto& [name, t] : ckpt.arrays) {
        double lo = t.size() ? t[0] : 0.0, hi = lo;
        for (std::size_t i = 1; i < t.size(); ++i) {
            lo = std::min(lo, t[i]);
            hi = std::max(hi, t[i]);
        }
        out << "  " << name << "  " << shape_str(t.shape()) << "  range [" << format_full(lo)
            << ", " << format_full(hi) << "]\n";
    }
    out << "embedded config:\n";
    std::istringstream cfg(ckpt.config_text);
    std::string line;
    while (std::getline(cfg, line)) out << "  " << line << "\n";
    return out.str();
}

}  // namespace bidpm
