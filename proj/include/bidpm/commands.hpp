#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "report.hpp"

namespace bidpm {

/// Verbosity from the BIDPM_LOG environment variable: 0 silences progress
/// output, 1 (default) prints one-line progress, 2 adds per-step detail.
inline int log_level() {
    const char* v = std::getenv("BIDPM_LOG");
    if (v == nullptr || *v == '\0') return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0') return 1;
    return static_cast<int>(std::min(std::max(n, 0l), 2l));
}

inline void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cout << msg << "\n";
}
inline void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cout << msg << "\n";
}

/// Exclusive ownership of an output directory for the duration of a command.
/// Creates the directory, then the lock file, failing if the lock exists.
class DirLock {
public:
    explicit DirLock(const std::string& dir) {
        std::filesystem::create_directories(dir);
        path_ = (std::filesystem::path(dir) / ".bidpm.lock").string();
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (f == nullptr)
            throw Error("output directory '" + dir +
                        "' is in use by another command (delete " + path_ +
                        " if that command crashed)");
        std::fputs("locked\n", f);
        std::fclose(f);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;
    ~DirLock() { std::remove(path_.c_str()); }

private:
    std::string path_;
};

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw Error("write to '" + path + "' failed");
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

/// Train per the config and write metrics.csv, timing.csv, config.txt, the
/// final checkpoint.bin and (if configured) periodic checkpoint_<step>.bin
/// files into cfg.out, which must already exist. Throws on abort.
inline TrainResult run_training(const ExperimentConfig& cfg) {
    const ToyDataset ds = cfg.make_dataset();
    log_debug("dataset: " + std::to_string(ds.size()) + " points per side, " +
              std::to_string(ds.paired_count()) + " paired");

    TrainHook hook;
    if (cfg.checkpoint_every > 0) {
        hook = [&cfg](std::size_t done, const VelocityField& live, const VelocityField& ema,
                      const OptimizerState& opt) {
            if (done % cfg.checkpoint_every != 0 || done == cfg.train.steps) return;
            save_checkpoint(join_path(cfg.out, "checkpoint_" + std::to_string(done) + ".bin"),
                            make_checkpoint(cfg, live, ema, opt));
        };
    }

    const TrainResult res = train_any(ds, cfg.effective_train(), hook);
    for (const std::string& w : res.warnings) std::cerr << "warning: " << w << "\n";

    write_metrics_csv(join_path(cfg.out, "metrics.csv"), res.records);
    write_timing_csv(join_path(cfg.out, "timing.csv"), res.records);
    write_text_file(join_path(cfg.out, "config.txt"), cfg.render());
    save_checkpoint(join_path(cfg.out, "checkpoint.bin"),
                    make_checkpoint(cfg, res.field, res.ema_field, res.opt));

    if (res.aborted) throw Error("training aborted: " + res.abort_reason);
    if (!res.records.empty())
        log_info("trained " + std::to_string(cfg.train.steps) + " steps, final loss " +
                 format_full(res.records.back().loss.total));
    return res;
}

/// Evaluate a restored field and write eval.csv, scatter.svg and the test
/// table into out_dir (which must exist). Returns the row written.
inline EvalRow run_evaluation(const RestoredTraining& r, const ToyDataset& test, bool use_ema,
                              const std::string& out_dir) {
    const ExperimentConfig& cfg = r.config;
    const VelocityField& field = use_ema ? r.ema : r.live;
    const EvalReport rep = evaluate(field, test, cfg.sample_steps);
    const EvalRow row = make_eval_row(rep, method_name(cfg.train.method), cfg.rho,
                                      cfg.train.grid_steps, cfg.seed);
    write_eval_csv(detail::join_path(out_dir, "eval.csv"), {row});

    const Tensor synth = synthesize(field, test.source, uniform_grid(cfg.sample_steps),
                                    Direction::forward);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < test.paired_count(); ++i)
        pairs.emplace_back(test.paired_source_rows[i], test.paired_target_rows[i]);
    write_scatter_svg(detail::join_path(out_dir, "scatter.svg"),
                      std::string("bidpm eval: method=") + method_name(cfg.train.method) +
                          " sample_steps=" + std::to_string(cfg.sample_steps),
                      test.source, test.target, synth, pairs);
    write_dataset_table(detail::join_path(out_dir, "test_data.table"), test);
    log_info("eval: forward " + format_full(row.forward_mean) + ", backward " +
             format_full(row.backward_mean) + ", mmd2 " + format_full(row.mmd2));
    return row;
}

}  // namespace detail

struct TrainOptions {
    std::string config_path;
    std::string out_override;                 // empty keeps the config's out
    std::optional<std::uint64_t> seed_override;
};

inline int cmd_train(const TrainOptions& opt) {
    ExperimentConfig cfg = ExperimentConfig::load(opt.config_path);
    if (opt.seed_override) cfg.seed = *opt.seed_override;
    if (!opt.out_override.empty()) cfg.out = opt.out_override;
    cfg.require_valid();

    DirLock lock(cfg.out);
    detail::run_training(cfg);
    return 0;
}

struct SynthesizeOptions {
    std::string checkpoint_path;
    std::string input_path;   // bidpm-table of points to transport
    std::string output_path;  // output table file
    Direction direction = Direction::forward;
    std::optional<bool> use_ema;  // default: the config's eval.use_ema
};

/// Transport the input table's rows that sit on the direction's starting side
/// (side 0 for forward, 1 for backward) and write them on the other side.
inline int cmd_synthesize(const SynthesizeOptions& opt) {
    const RestoredTraining r = restore_training(load_checkpoint(opt.checkpoint_path));
    const bool use_ema = opt.use_ema.value_or(r.config.use_ema);
    const VelocityField& field = use_ema ? r.ema : r.live;

    const Table in = read_table(opt.input_path);
    const int from_side = opt.direction == Direction::forward ? 0 : 1;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < in.rows(); ++i)
        if (in.side[i] == from_side) rows.push_back(i);
    if (rows.empty())
        throw Error(std::string("synthesize: input table has no rows on side ") +
                    std::to_string(from_side) + " (" + direction_name(opt.direction) +
                    " starts there)");

    const Tensor start = gather_rows(in.points, rows);
    const Tensor out_pts =
        synthesize(field, start, uniform_grid(r.config.sample_steps), opt.direction);

    Table out;
    out.meta["kind"] = "synthesized";
    out.meta["direction"] = direction_name(opt.direction);
    out.meta["sample_steps"] = std::to_string(r.config.sample_steps);
    out.meta["use_ema"] = use_ema ? "true" : "false";
    out.meta["checkpoint_steps"] = std::to_string(r.steps);
    out.points = out_pts;
    for (std::size_t i : rows) {
        out.side.push_back(1 - from_side);
        out.component.push_back(in.component[i]);
        out.partner.push_back(-1);
    }
    write_table(opt.output_path, out);
    log_info("synthesized " + std::to_string(rows.size()) + " rows " +
             direction_name(opt.direction) + " -> " + opt.output_path);
    return 0;
}

struct EvalOptions {
    std::string checkpoint_path;
    std::string out_dir;
    std::string data_path;        // optional test table; empty regenerates from config
    std::optional<bool> use_ema;  // default: the config's eval.use_ema
};

inline int cmd_eval(const EvalOptions& opt) {
    const RestoredTraining r = restore_training(load_checkpoint(opt.checkpoint_path));
    DirLock lock(opt.out_dir);
    const ToyDataset test =
        opt.data_path.empty() ? r.config.make_test_dataset() : read_dataset_table(opt.data_path);
    detail::run_evaluation(r, test, opt.use_ema.value_or(r.config.use_ema), opt.out_dir);
    return 0;
}

struct SweepOptions {
    std::string config_path;
    std::string out_override;
    std::optional<std::uint64_t> seed_override;
};

/// One train+eval run per combination of the sweep lists (empty lists pin the
/// base value). A proper sweep derives one seed per combination from the base
/// seed and the combination label; a degenerate single-combination sweep runs
/// at the base seed so it matches a direct train+eval exactly. Failures are
/// recorded in sweep.csv and the sweep continues.
inline int cmd_sweep(const SweepOptions& opt) {
    ExperimentConfig base = ExperimentConfig::load(opt.config_path);
    if (opt.seed_override) base.seed = *opt.seed_override;
    if (!opt.out_override.empty()) base.out = opt.out_override;
    base.require_valid();

    const std::vector<std::size_t> grids =
        base.sweep_grid_steps.empty() ? std::vector<std::size_t>{base.train.grid_steps}
                                      : base.sweep_grid_steps;
    const std::vector<double> rhos =
        base.sweep_rho.empty() ? std::vector<double>{base.rho} : base.sweep_rho;
    const std::vector<std::string> methods =
        base.sweep_method.empty() ? std::vector<std::string>{method_name(base.train.method)}
                                  : base.sweep_method;
    const std::size_t total = grids.size() * rhos.size() * methods.size();

    DirLock lock(base.out);
    std::vector<SweepRow> rows;
    std::size_t failures = 0;
    for (std::size_t gi = 0; gi < grids.size(); ++gi)
        for (std::size_t ri = 0; ri < rhos.size(); ++ri)
            for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                char rho_text[32];
                std::snprintf(rho_text, sizeof(rho_text), "%g", rhos[ri]);
                const std::string label =
                    "n" + std::to_string(grids[gi]) + "_rho" + rho_text + "_" + methods[mi];
                ExperimentConfig cfg = base;
                cfg.train.grid_steps = grids[gi];
                cfg.rho = rhos[ri];
                cfg.train.method = parse_method(methods[mi]);
                // The appendix-table reading of an N sweep: sample with the
                // same number of steps the model was trained on.
                if (!base.sweep_grid_steps.empty()) cfg.sample_steps = grids[gi];
                cfg.seed = total == 1 ? base.seed : derive_seed(base.seed, label);
                cfg.out = detail::join_path(base.out, label);
                cfg.sweep_grid_steps.clear();
                cfg.sweep_rho.clear();
                cfg.sweep_method.clear();

                SweepRow row;
                row.grid_steps = grids[gi];
                row.rho = rhos[ri];
                row.method = methods[mi];
                row.seed = cfg.seed;
                try {
                    std::filesystem::create_directories(cfg.out);
                    log_info("sweep run " + label);
                    detail::run_training(cfg);
                    const RestoredTraining r =
                        restore_training(load_checkpoint(detail::join_path(cfg.out, "checkpoint.bin")));
                    const EvalRow er =
                        detail::run_evaluation(r, cfg.make_test_dataset(), cfg.use_ema, cfg.out);
                    row.forward_mean = er.forward_mean;
                    row.backward_mean = er.backward_mean;
                    row.mmd2 = er.mmd2;
                    row.centroid_max = er.centroid_max;
                } catch (const Error& e) {
                    row.status = std::string("failed: ") + e.what();
                    ++failures;
                    std::cerr << "sweep run " << label << " failed: " << e.what() << "\n";
                }
                rows.push_back(std::move(row));
            }

    write_sweep_csv(detail::join_path(base.out, "sweep.csv"), rows);

    // When the sweep varies rho alone, flag a broken monotone-improvement
    // trend (error should not increase as more pairs become available).
    if (rhos.size() > 1 && grids.size() == 1 && methods.size() == 1) {
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].status != "ok" || rows[i - 1].status != "ok") continue;
            if (rows[i].rho > rows[i - 1].rho && rows[i].forward_mean > rows[i - 1].forward_mean)
                std::cerr << "trend: forward error rose from rho=" << format_full(rows[i - 1].rho)
                          << " (" << format_full(rows[i - 1].forward_mean) << ") to rho="
                          << format_full(rows[i].rho) << " (" << format_full(rows[i].forward_mean)
                          << ")\n";
        }
    }
    return failures == 0 ? 0 : 1;
}

struct InspectOptions {
    std::string checkpoint_path;
};

inline int cmd_inspect(const InspectOptions& opt) {
    std::cout << describe_checkpoint(load_checkpoint(opt.checkpoint_path));
    return 0;
}

}  // namespace bidpm
