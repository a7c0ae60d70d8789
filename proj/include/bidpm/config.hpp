#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "table_io.hpp"
#include "trainer.hpp"

namespace bidpm {

/// Everything one experiment needs, parsed from flat `section.key = value`
/// text. Unknown keys are rejected; every bad field is reported, not just the
/// first. `render()` emits the canonical full-precision form that checkpoints
/// embed, and `parse(render())` reproduces the config exactly.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string out = "out";

    // dataset
    std::size_t components = 8;
    std::size_t n_per_component = 128;
    double source_radius = 1.0;
    double source_stddev = 0.1;
    double target_radius = 1.4;
    double target_stddev = 0.06;
    std::string map_text = "rot1";
    double rho = 0.1;
    bool normalize = true;

    // training (model knobs live inside TrainConfig)
    TrainConfig train;

    // evaluation
    std::size_t sample_steps = 10;
    std::size_t eval_n_per_component = 128;
    bool use_ema = true;

    // checkpoint cadence; 0 keeps only the final checkpoint
    std::size_t checkpoint_every = 0;

    // sweep lists; an empty list means "use the base value"
    std::vector<std::size_t> sweep_grid_steps;
    std::vector<double> sweep_rho;
    std::vector<std::string> sweep_method;

    ComponentMap map() const { return ComponentMap::parse(map_text, components); }

    /// TrainConfig carries its own seed member; the experiment-level seed is
    /// the single source of truth, copied in here.
    TrainConfig effective_train() const {
        TrainConfig t = train;
        t.seed = seed;
        return t;
    }

    GaussianRingSpec ring_spec(std::uint64_t data_seed) const {
        GaussianRingSpec s;
        s.components = components;
        s.source = {source_radius, source_stddev};
        s.target = {target_radius, target_stddev};
        s.seed = data_seed;
        return s;
    }

    /// The training dataset. Deterministic in `seed`.
    ToyDataset make_dataset() const {
        return make_toy_dataset(ring_spec(derive_seed(seed, "dataset")), map(), rho,
                                n_per_component, normalize);
    }

    /// A fully paired held-out set drawn from an independent stream, used by
    /// evaluation so test pairs never overlap training draws.
    ToyDataset make_test_dataset() const {
        return make_toy_dataset(ring_spec(derive_seed(seed, "dataset-test")), map(), 1.0,
                                eval_n_per_component, normalize);
    }

    std::vector<std::string> validate() const;
    void require_valid() const;
    std::string render() const;

    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig load(const std::string& path);
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline bool parse_bool(const std::string& s, const char* what) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw Error(std::string(what) + ": expected true/false, got '" + s + "'");
}

/// One config key: how to read it into the struct and write it back out.
struct ConfigKey {
    const char* name;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
    using C = ExperimentConfig;
    const auto u64 = [](std::uint64_t C::* f, const char* k) {
        return ConfigKey{k,
                         [f, k](C& c, const std::string& v) { c.*f = parse_u64(v, k); },
                         [f](const C& c) { return std::to_string(c.*f); }};
    };
    const auto size_of = [](std::size_t C::* f, const char* k, std::size_t lo = 0) {
        return ConfigKey{k,
                         [f, k, lo](C& c, const std::string& v) {
                             const std::uint64_t x = parse_u64(v, k);
                             if (x < lo)
                                 throw Error(std::string(k) + ": must be >= " + std::to_string(lo));
                             c.*f = static_cast<std::size_t>(x);
                         },
                         [f](const C& c) { return std::to_string(c.*f); }};
    };
    const auto dbl = [](double C::* f, const char* k) {
        return ConfigKey{k,
                         [f, k](C& c, const std::string& v) { c.*f = parse_double(v, k); },
                         [f](const C& c) { return format_full(c.*f); }};
    };
    const auto boolean = [](bool C::* f, const char* k) {
        return ConfigKey{k,
                         [f, k](C& c, const std::string& v) { c.*f = parse_bool(v, k); },
                         [f](const C& c) { return (c.*f) ? "true" : "false"; }};
    };
    const auto str = [](std::string C::* f, const char* k) {
        return ConfigKey{k, [f](C& c, const std::string& v) { c.*f = v; },
                         [f](const C& c) { return c.*f; }};
    };
    const auto tsize = [](std::size_t TrainConfig::* f, const char* k, std::size_t lo = 0) {
        return ConfigKey{k,
                         [f, k, lo](C& c, const std::string& v) {
                             const std::uint64_t x = parse_u64(v, k);
                             if (x < lo)
                                 throw Error(std::string(k) + ": must be >= " + std::to_string(lo));
                             c.train.*f = static_cast<std::size_t>(x);
                         },
                         [f](const C& c) { return std::to_string(c.train.*f); }};
    };
    const auto tdbl = [](double TrainConfig::* f, const char* k) {
        return ConfigKey{k,
                         [f, k](C& c, const std::string& v) { c.train.*f = parse_double(v, k); },
                         [f](const C& c) { return format_full(c.train.*f); }};
    };

    static const std::vector<ConfigKey> keys = {
        u64(&C::seed, "seed"),
        str(&C::out, "out"),

        size_of(&C::components, "dataset.components", 1),
        size_of(&C::n_per_component, "dataset.n_per_component", 1),
        dbl(&C::source_radius, "dataset.source_radius"),
        dbl(&C::source_stddev, "dataset.source_stddev"),
        dbl(&C::target_radius, "dataset.target_radius"),
        dbl(&C::target_stddev, "dataset.target_stddev"),
        str(&C::map_text, "dataset.map"),
        dbl(&C::rho, "dataset.rho"),
        boolean(&C::normalize, "dataset.normalize"),

        tsize(&TrainConfig::hidden, "model.hidden", 1),
        tsize(&TrainConfig::hidden_layers, "model.hidden_layers", 1),
        tsize(&TrainConfig::embed_dim, "model.embed_dim", 1),

        ConfigKey{"train.method",
                  [](C& c, const std::string& v) { c.train.method = parse_method(v); },
                  [](const C& c) { return std::string(method_name(c.train.method)); }},
        tsize(&TrainConfig::steps, "train.steps", 1),
        tsize(&TrainConfig::batch_size, "train.batch_size", 1),
        tdbl(&TrainConfig::learning_rate, "train.learning_rate"),
        tdbl(&TrainConfig::beta1, "train.beta1"),
        tdbl(&TrainConfig::beta2, "train.beta2"),
        tdbl(&TrainConfig::adam_eps, "train.adam_eps"),
        tdbl(&TrainConfig::lambda_u, "train.lambda_u"),
        tdbl(&TrainConfig::ema_decay, "train.ema_decay"),
        tsize(&TrainConfig::grid_steps, "train.grid_steps", 1),
        ConfigKey{"train.grid_weights",
                  [](C& c, const std::string& v) {
                      c.train.grid_weights.clear();
                      for (const std::string& item : split_list(v))
                          c.train.grid_weights.push_back(parse_double(item, "train.grid_weights"));
                  },
                  [](const C& c) {
                      std::string s;
                      for (double w : c.train.grid_weights) {
                          if (!s.empty()) s += ",";
                          s += format_full(w);
                      }
                      return s;
                  }},
        tdbl(&TrainConfig::cfm_sigma, "train.cfm_sigma"),
        tdbl(&TrainConfig::clip_grad_norm, "train.clip_grad_norm"),
        tsize(&TrainConfig::record_every, "train.record_every", 1),
        size_of(&C::checkpoint_every, "train.checkpoint_every"),

        size_of(&C::sample_steps, "eval.sample_steps", 1),
        size_of(&C::eval_n_per_component, "eval.n_per_component", 1),
        boolean(&C::use_ema, "eval.use_ema"),

        ConfigKey{"sweep.grid_steps",
                  [](C& c, const std::string& v) {
                      c.sweep_grid_steps.clear();
                      for (const std::string& item : split_list(v)) {
                          const std::uint64_t x = parse_u64(item, "sweep.grid_steps");
                          if (x < 1) throw Error("sweep.grid_steps: entries must be >= 1");
                          c.sweep_grid_steps.push_back(static_cast<std::size_t>(x));
                      }
                  },
                  [](const C& c) {
                      std::string s;
                      for (std::size_t n : c.sweep_grid_steps) {
                          if (!s.empty()) s += ",";
                          s += std::to_string(n);
                      }
                      return s;
                  }},
        ConfigKey{"sweep.rho",
                  [](C& c, const std::string& v) {
                      c.sweep_rho.clear();
                      for (const std::string& item : split_list(v))
                          c.sweep_rho.push_back(parse_double(item, "sweep.rho"));
                  },
                  [](const C& c) {
                      std::string s;
                      for (double r : c.sweep_rho) {
                          if (!s.empty()) s += ",";
                          s += format_full(r);
                      }
                      return s;
                  }},
        ConfigKey{"sweep.method",
                  [](C& c, const std::string& v) {
                      c.sweep_method.clear();
                      for (const std::string& item : split_list(v)) {
                          parse_method(item);  // reject unknown names at parse time
                          c.sweep_method.push_back(item);
                      }
                  },
                  [](const C& c) {
                      std::string s;
                      for (const std::string& m : c.sweep_method) {
                          if (!s.empty()) s += ",";
                          s += m;
                      }
                      return s;
                  }},
    };
    return keys;
}

}  // namespace detail

inline std::vector<std::string> ExperimentConfig::validate() const {
    std::vector<std::string> errs = train.validate();
    const auto bad = [&errs](const std::string& m) { errs.push_back(m); };
    if (!(source_radius > 0.0) || !(target_radius > 0.0))
        bad("dataset: radii must be positive");
    if (!(source_stddev >= 0.0) || !(target_stddev >= 0.0))
        bad("dataset: stddevs must be >= 0");
    if (!(rho >= 0.0 && rho <= 1.0)) bad("dataset.rho: must lie in [0,1]");
    try {
        map();
    } catch (const Error& e) {
        bad(std::string("dataset.map: ") + e.what());
    }
    if (out.empty()) bad("out: must not be empty");
    return errs;
}

inline void ExperimentConfig::require_valid() const {
    const auto errs = validate();
    if (errs.empty()) return;
    std::string msg = "invalid config:";
    for (const std::string& e : errs) msg += "\n  - " + e;
    throw Error(msg);
}

inline std::string ExperimentConfig::render() const {
    std::ostringstream out_s;
    for (const detail::ConfigKey& k : detail::config_keys()) {
        const std::string v = k.get(*this);
        if (v.empty()) continue;  // empty lists / strings stay implicit
        out_s << k.name << " = " << v << "\n";
    }
    return out_s.str();
}

inline ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    ExperimentConfig cfg;
    std::vector<std::string> errs;
    std::vector<std::string> seen;

    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = detail::trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            errs.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
            continue;
        }
        const std::string key = detail::trim(stripped.substr(0, eq));
        const std::string value = detail::trim(stripped.substr(eq + 1));
        if (key.empty()) {
            errs.push_back("line " + std::to_string(lineno) + ": empty key");
            continue;
        }

        const detail::ConfigKey* handler = nullptr;
        for (const detail::ConfigKey& k : detail::config_keys())
            if (key == k.name) {
                handler = &k;
                break;
            }
        if (handler == nullptr) {
            errs.push_back(key + ": unknown key");
            continue;
        }
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
            errs.push_back(key + ": duplicate key");
            continue;
        }
        seen.push_back(key);
        try {
            handler->set(cfg, value);
        } catch (const Error& e) {
            errs.push_back(e.what());
        }
    }

    if (!errs.empty()) {
        std::string msg = "config parse failed:";
        for (const std::string& e : errs) msg += "\n  - " + e;
        throw Error(msg);
    }
    return cfg;
}

inline ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

}  // namespace bidpm
