#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "eval.hpp"
#include "table_io.hpp"
#include "trainer.hpp"

namespace bidpm {

namespace detail {

inline std::ofstream open_out(const std::string& path, const char* what) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(std::string(what) + ": cannot open '" + path + "' for writing");
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

}  // namespace detail

/// Loss curve. Deliberately excludes wall-clock time so identical runs write
/// identical bytes; timing lives in its own file.
inline constexpr const char* kMetricsHeader = "step,total,loss_paired,loss_unpaired,grad_norm";

inline void write_metrics_csv(const std::string& path, const std::vector<TrainRecord>& records) {
    std::ofstream out = detail::open_out(path, "metrics csv");
    out << kMetricsHeader << "\n";
    for (const TrainRecord& r : records)
        out << r.step << ',' << format_full(r.loss.total) << ',' << format_full(r.loss.paired)
            << ',' << format_full(r.loss.unpaired) << ',' << format_full(r.grad_norm) << "\n";
    if (!out) throw Error("metrics csv: write failed");
}

inline void write_timing_csv(const std::string& path, const std::vector<TrainRecord>& records) {
    std::ofstream out = detail::open_out(path, "timing csv");
    out << "step,wall_ms\n";
    for (const TrainRecord& r : records) out << r.step << ',' << format_full(r.wall_ms) << "\n";
    if (!out) throw Error("timing csv: write failed");
}

/// One evaluation row; the context columns identify the run.
struct EvalRow {
    std::string method;
    double rho = 0.0;
    std::size_t grid_steps = 0;
    std::size_t sample_steps = 0;
    std::uint64_t seed = 0;
    std::size_t n_pairs = 0;
    double forward_mean = 0.0, forward_stddev = 0.0;
    double backward_mean = 0.0, backward_stddev = 0.0;
    double mmd2 = 0.0;
    double centroid_max = 0.0;
    double theorem_max_deviation = 0.0;
    double theorem_endpoint_gap = 0.0;
    double theorem_residual_loss = 0.0;
};

inline constexpr const char* kEvalHeader =
    "method,rho,grid_steps,sample_steps,seed,n_pairs,forward_mean,forward_stddev,"
    "backward_mean,backward_stddev,mmd2,centroid_max,theorem_max_deviation,"
    "theorem_endpoint_gap,theorem_residual_loss";

inline EvalRow make_eval_row(const EvalReport& rep, const std::string& method, double rho,
                             std::size_t grid_steps, std::uint64_t seed) {
    EvalRow row;
    row.method = method;
    row.rho = rho;
    row.grid_steps = grid_steps;
    row.sample_steps = rep.sample_steps;
    row.seed = seed;
    row.n_pairs = rep.forward.count;
    row.forward_mean = rep.forward.mean;
    row.forward_stddev = rep.forward.stddev;
    row.backward_mean = rep.backward.mean;
    row.backward_stddev = rep.backward.stddev;
    row.mmd2 = rep.mmd2;
    row.centroid_max = rep.centroid_max;
    row.theorem_max_deviation = rep.theorem.max_deviation;
    row.theorem_endpoint_gap = rep.theorem.endpoint_gap;
    row.theorem_residual_loss = rep.theorem.residual_loss;
    return row;
}

inline void append_eval_row(std::ostream& out, const EvalRow& r) {
    out << r.method << ',' << format_full(r.rho) << ',' << r.grid_steps << ',' << r.sample_steps
        << ',' << r.seed << ',' << r.n_pairs << ',' << format_full(r.forward_mean) << ','
        << format_full(r.forward_stddev) << ',' << format_full(r.backward_mean) << ','
        << format_full(r.backward_stddev) << ',' << format_full(r.mmd2) << ','
        << format_full(r.centroid_max) << ',' << format_full(r.theorem_max_deviation) << ','
        << format_full(r.theorem_endpoint_gap) << ',' << format_full(r.theorem_residual_loss)
        << "\n";
}

inline void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
    std::ofstream out = detail::open_out(path, "eval csv");
    out << kEvalHeader << "\n";
    for (const EvalRow& r : rows) append_eval_row(out, r);
    if (!out) throw Error("eval csv: write failed");
}

inline std::vector<EvalRow> read_eval_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("eval csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw Error("eval csv: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kEvalHeader) throw Error("eval csv: unexpected header '" + line + "'");

    std::vector<EvalRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> c = detail::split_csv_line(line);
        if (c.size() != 15) throw Error("eval csv: expected 15 cells, got " + std::to_string(c.size()));
        EvalRow r;
        r.method = c[0];
        r.rho = parse_double(c[1], "eval csv rho");
        r.grid_steps = static_cast<std::size_t>(parse_u64(c[2], "eval csv grid_steps"));
        r.sample_steps = static_cast<std::size_t>(parse_u64(c[3], "eval csv sample_steps"));
        r.seed = parse_u64(c[4], "eval csv seed");
        r.n_pairs = static_cast<std::size_t>(parse_u64(c[5], "eval csv n_pairs"));
        r.forward_mean = parse_double(c[6], "eval csv forward_mean");
        r.forward_stddev = parse_double(c[7], "eval csv forward_stddev");
        r.backward_mean = parse_double(c[8], "eval csv backward_mean");
        r.backward_stddev = parse_double(c[9], "eval csv backward_stddev");
        r.mmd2 = parse_double(c[10], "eval csv mmd2");
        r.centroid_max = parse_double(c[11], "eval csv centroid_max");
        r.theorem_max_deviation = parse_double(c[12], "eval csv theorem_max_deviation");
        r.theorem_endpoint_gap = parse_double(c[13], "eval csv theorem_endpoint_gap");
        r.theorem_residual_loss = parse_double(c[14], "eval csv theorem_residual_loss");
        rows.push_back(std::move(r));
    }
    return rows;
}

/// Aggregated sweep output: one row per combination, failures recorded inline.
inline constexpr const char* kSweepHeader =
    "grid_steps,rho,method,seed,status,forward_mean,backward_mean,mmd2,centroid_max";

struct SweepRow {
    std::size_t grid_steps = 0;
    double rho = 0.0;
    std::string method;
    std::uint64_t seed = 0;
    std::string status = "ok";  // "ok" or "failed: reason" (commas stripped)
    double forward_mean = 0.0, backward_mean = 0.0, mmd2 = 0.0, centroid_max = 0.0;
};

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream out = detail::open_out(path, "sweep csv");
    out << kSweepHeader << "\n";
    for (const SweepRow& r : rows) {
        std::string status = r.status;
        for (char& ch : status)
            if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
        out << r.grid_steps << ',' << format_full(r.rho) << ',' << r.method << ',' << r.seed << ','
            << status << ',' << format_full(r.forward_mean) << ',' << format_full(r.backward_mean)
            << ',' << format_full(r.mmd2) << ',' << format_full(r.centroid_max) << "\n";
    }
    if (!out) throw Error("sweep csv: write failed");
}

/// Self-contained scatter plot. Exactly one <circle> per point — source,
/// target, then synthesized — and one <line> per paired correspondence,
/// drawn beneath the points.
inline void write_scatter_svg(const std::string& path, const std::string& title,
                              const Tensor& source, const Tensor& target, const Tensor& synth,
                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    detail::require_rank2(source, "write_scatter_svg");
    detail::require_rank2(target, "write_scatter_svg");
    detail::require_rank2(synth, "write_scatter_svg");
    if (source.cols() != 2 || target.cols() != 2 || synth.cols() != 2)
        throw Error("write_scatter_svg: points must be two-dimensional");
    for (const auto& [si, ti] : pairs)
        if (si >= source.rows() || ti >= target.rows())
            throw Error("write_scatter_svg: pair index out of range");

    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    bool first = true;
    const auto scan = [&](const Tensor& t) {
        for (std::size_t i = 0; i < t.rows(); ++i) {
            const double x = t(i, 0), y = t(i, 1);
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            } else {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
        }
    };
    scan(source);
    scan(target);
    scan(synth);
    const double spanx = std::max(xmax - xmin, 1e-9);
    const double spany = std::max(ymax - ymin, 1e-9);
    const double span = std::max(spanx, spany) * 1.1;
    const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
    constexpr double W = 640.0;
    const auto px = [&](double x) { return (x - (cx - span / 2)) / span * W; };
    const auto py = [&](double y) { return W - (y - (cy - span / 2)) / span * W; };

    std::ofstream out = detail::open_out(path, "svg");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 672\" width=\"640\" "
           "height=\"672\">\n";
    out << "  <title>" << title << "</title>\n";
    out << "  <text x=\"8\" y=\"660\" font-family=\"sans-serif\" font-size=\"13\">" << title
        << "  |  source #1f77b4 (" << source.rows() << ")  target #ff7f0e (" << target.rows()
        << ")  synthesized #2ca02c (" << synth.rows() << ")  pairs (" << pairs.size()
        << ")</text>\n";
    for (const auto& [si, ti] : pairs)
        out << "  <line x1=\"" << px(source(si, 0)) << "\" y1=\"" << py(source(si, 1))
            << "\" x2=\"" << px(target(ti, 0)) << "\" y2=\"" << py(target(ti, 1))
            << "\" stroke=\"#2ca02c\" stroke-opacity=\"0.25\" stroke-width=\"1\"/>\n";
    const auto dots = [&](const Tensor& t, const char* color) {
        for (std::size_t i = 0; i < t.rows(); ++i)
            out << "  <circle cx=\"" << px(t(i, 0)) << "\" cy=\"" << py(t(i, 1))
                << "\" r=\"3\" fill=\"" << color << "\" fill-opacity=\"0.75\"/>\n";
    };
    dots(source, "#1f77b4");
    dots(target, "#ff7f0e");
    dots(synth, "#2ca02c");
    out << "</svg>\n";
    if (!out) throw Error("svg: write failed");
}

}  // namespace bidpm
