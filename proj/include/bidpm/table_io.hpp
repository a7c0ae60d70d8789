#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "tensor.hpp"

namespace bidpm {

/// Shortest decimal form that round-trips a double exactly.
inline std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s, const char* what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || s.empty())
        throw Error(std::string(what) + ": bad number '" + s + "'");
    return v;
}

inline std::uint64_t parse_u64(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw Error(std::string(what) + ": bad integer '" + s + "'");
    return std::stoull(s);
}

/// Whitespace-separated point table with a commented header:
///   # bidpm-table v1
///   # key=value            (one per meta entry)
///   # columns: side component partner x0 x1
///   0 3 17 1.25 -0.5
/// side is 0 (source) or 1 (target); partner is the row index within the
/// other side, -1 for unpaired rows.
struct Table {
    std::map<std::string, std::string> meta;
    std::vector<int> side;
    std::vector<std::size_t> component;
    std::vector<long long> partner;
    Tensor points;  // [n, 2]

    std::size_t rows() const { return side.size(); }
};

inline void write_table(const std::string& path, const Table& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("write_table: cannot open '" + path + "'");
    out << "# bidpm-table v1\n";
    for (const auto& [k, v] : t.meta) out << "# " << k << "=" << v << "\n";
    out << "# columns: side component partner x0 x1\n";
    for (std::size_t i = 0; i < t.rows(); ++i) {
        out << t.side[i] << ' ' << t.component[i] << ' ' << t.partner[i] << ' '
            << format_full(t.points(i, 0)) << ' ' << format_full(t.points(i, 1)) << "\n";
    }
    if (!out) throw Error("write_table: write failed for '" + path + "'");
}

inline Table read_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("read_table: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "# bidpm-table v1")
        throw Error("read_table: '" + path + "' is not a bidpm-table v1 file");

    Table t;
    std::vector<double> coords;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string body = line.size() > 1 && line[1] == ' ' ? line.substr(2)
                                                                       : line.substr(1);
            const std::size_t eq = body.find('=');
            if (eq != std::string::npos && body.rfind("columns:", 0) == std::string::npos)
                t.meta[body.substr(0, eq)] = body.substr(eq + 1);
            continue;
        }
        std::istringstream row(line);
        int side;
        std::size_t comp;
        long long partner;
        std::string x0, x1;
        if (!(row >> side >> comp >> partner >> x0 >> x1))
            throw Error("read_table: malformed row '" + line + "'");
        if (side != 0 && side != 1) throw Error("read_table: side must be 0 or 1");
        t.side.push_back(side);
        t.component.push_back(comp);
        t.partner.push_back(partner);
        coords.push_back(parse_double(x0, "read_table"));
        coords.push_back(parse_double(x1, "read_table"));
    }
    t.points = Tensor(Shape{t.side.size(), 2}, std::move(coords));
    return t;
}

inline Table dataset_to_table(const ToyDataset& ds) {
    Table t;
    t.meta["kind"] = "dataset";
    t.meta["components"] = std::to_string(ds.spec.components);
    t.meta["source_radius"] = format_full(ds.spec.source.radius);
    t.meta["source_stddev"] = format_full(ds.spec.source.stddev);
    t.meta["target_radius"] = format_full(ds.spec.target.radius);
    t.meta["target_stddev"] = format_full(ds.spec.target.stddev);
    t.meta["seed"] = std::to_string(ds.spec.seed);
    t.meta["rho"] = format_full(ds.rho);
    t.meta["map"] = ds.map.to_string();
    t.meta["n_per_component"] = std::to_string(ds.n_per_component);
    t.meta["normalized"] = ds.normalized ? "1" : "0";
    if (ds.normalized) {
        t.meta["norm_center"] = format_full(ds.norm.center[0]) + "," + format_full(ds.norm.center[1]);
        t.meta["norm_half"] = format_full(ds.norm.half[0]) + "," + format_full(ds.norm.half[1]);
    }

    const std::size_t n = ds.size();
    std::vector<long long> src_partner(n, -1), tgt_partner(n, -1);
    for (std::size_t i = 0; i < ds.paired_count(); ++i) {
        src_partner[ds.paired_source_rows[i]] = static_cast<long long>(ds.paired_target_rows[i]);
        tgt_partner[ds.paired_target_rows[i]] = static_cast<long long>(ds.paired_source_rows[i]);
    }
    t.points = concat_rows(ds.source, ds.target);
    for (std::size_t i = 0; i < n; ++i) {
        t.side.push_back(0);
        t.component.push_back(ds.source_labels[i]);
        t.partner.push_back(src_partner[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        t.side.push_back(1);
        t.component.push_back(ds.target_labels[i]);
        t.partner.push_back(tgt_partner[i]);
    }
    return t;
}

namespace detail {

inline std::string table_meta(const Table& t, const char* key) {
    const auto it = t.meta.find(key);
    if (it == t.meta.end())
        throw Error(std::string("table_to_dataset: missing meta key '") + key + "'");
    return it->second;
}

inline std::vector<double> parse_double_list(const std::string& s, const char* what) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t comma = s.find(',', pos);
        out.push_back(parse_double(
            s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos), what));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace detail

/// Rebuilds a full ToyDataset from a table written by dataset_to_table: the
/// points come verbatim from the file, the pairing from the partner column,
/// and the component means from the recorded geometry.
inline ToyDataset table_to_dataset(const Table& t) {
    ToyDataset ds;
    ds.spec.components = parse_u64(detail::table_meta(t, "components"), "components");
    ds.spec.source.radius = parse_double(detail::table_meta(t, "source_radius"), "source_radius");
    ds.spec.source.stddev = parse_double(detail::table_meta(t, "source_stddev"), "source_stddev");
    ds.spec.target.radius = parse_double(detail::table_meta(t, "target_radius"), "target_radius");
    ds.spec.target.stddev = parse_double(detail::table_meta(t, "target_stddev"), "target_stddev");
    ds.spec.seed = parse_u64(detail::table_meta(t, "seed"), "seed");
    ds.rho = parse_double(detail::table_meta(t, "rho"), "rho");
    ds.map = ComponentMap::parse(detail::table_meta(t, "map"), ds.spec.components);
    ds.n_per_component = parse_u64(detail::table_meta(t, "n_per_component"), "n_per_component");
    ds.spec.validate();

    std::vector<std::size_t> src_rows, tgt_rows;
    for (std::size_t i = 0; i < t.rows(); ++i)
        (t.side[i] == 0 ? src_rows : tgt_rows).push_back(i);
    if (src_rows.empty() || tgt_rows.empty())
        throw Error("table_to_dataset: need rows on both sides");
    if (src_rows.size() != tgt_rows.size())
        throw Error("table_to_dataset: side sizes differ");

    const std::size_t n = src_rows.size();
    ds.source = Tensor(Shape{n, 2});
    ds.target = Tensor(Shape{n, 2});
    ds.source_labels.resize(n);
    ds.target_labels.resize(n);
    // Side-local indices: row j of a side is the j-th row of that side in
    // file order; the partner column uses these indices.
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = src_rows[j];
        ds.source(j, 0) = t.points(i, 0);
        ds.source(j, 1) = t.points(i, 1);
        if (t.component[i] >= ds.spec.components)
            throw Error("table_to_dataset: component label out of range");
        ds.source_labels[j] = t.component[i];
    }
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = tgt_rows[j];
        ds.target(j, 0) = t.points(i, 0);
        ds.target(j, 1) = t.points(i, 1);
        if (t.component[i] >= ds.spec.components)
            throw Error("table_to_dataset: component label out of range");
        ds.target_labels[j] = t.component[i];
    }
    for (std::size_t j = 0; j < n; ++j) {
        const long long p = t.partner[src_rows[j]];
        if (p < 0) continue;
        if (static_cast<std::size_t>(p) >= n)
            throw Error("table_to_dataset: partner index out of range");
        if (t.partner[tgt_rows[static_cast<std::size_t>(p)]] != static_cast<long long>(j))
            throw Error("table_to_dataset: partner columns are not symmetric");
        ds.paired_source_rows.push_back(j);
        ds.paired_target_rows.push_back(static_cast<std::size_t>(p));
    }

    std::vector<char> src_used(n, 0), tgt_used(n, 0);
    for (std::size_t i = 0; i < ds.paired_count(); ++i) {
        src_used[ds.paired_source_rows[i]] = 1;
        tgt_used[ds.paired_target_rows[i]] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!src_used[i]) ds.unpaired_source_rows.push_back(i);
        if (!tgt_used[i]) ds.unpaired_target_rows.push_back(i);
    }
    // Same leftover traversal order as make_paired derives from the seed.
    CounterRng su(derive_seed(ds.spec.seed, "unpaired-order", 0));
    CounterRng tu(derive_seed(ds.spec.seed, "unpaired-order", 1));
    su.shuffle(ds.unpaired_source_rows);
    tu.shuffle(ds.unpaired_target_rows);

    ds.source_means = ring_means(ds.spec.components, ds.spec.source.radius);
    ds.target_means = ring_means(ds.spec.components, ds.spec.target.radius);
    ds.normalized = detail::table_meta(t, "normalized") == "1";
    if (ds.normalized) {
        ds.norm.center = detail::parse_double_list(detail::table_meta(t, "norm_center"), "norm_center");
        ds.norm.half = detail::parse_double_list(detail::table_meta(t, "norm_half"), "norm_half");
        if (ds.norm.center.size() != 2 || ds.norm.half.size() != 2)
            throw Error("table_to_dataset: normalizer needs two coordinates");
        ds.source_means = ds.norm.apply(ds.source_means);
        ds.target_means = ds.norm.apply(ds.target_means);
    }
    return ds;
}

inline void write_dataset_table(const std::string& path, const ToyDataset& ds) {
    write_table(path, dataset_to_table(ds));
}

inline ToyDataset read_dataset_table(const std::string& path) {
    return table_to_dataset(read_table(path));
}

}  // namespace bidpm
