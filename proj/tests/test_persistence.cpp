#include <catch2/catch_amalgamated.hpp>

#include <bidpm/checkpoint.hpp>
#include <bidpm/config.hpp>
#include <bidpm/report.hpp>

#include <filesystem>
#include <fstream>

#include "testutil.hpp"

using namespace bidpm;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string scratch_file(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "bidpm_persistence";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

TEST_CASE("config render/parse round trip is exact") {
    ExperimentConfig cfg;
    cfg.seed = 1234567890123456789ull;
    cfg.rho = 0.1;
    cfg.train.learning_rate = 1.0 / 3.0;  // full 17-digit precision required
    cfg.train.method = Method::otcfm;
    cfg.train.cfm_sigma = 0.05;
    cfg.train.grid_weights = {1.0, 0.25, 1.0};
    cfg.train.grid_steps = 2;
    cfg.map_text = "rot3";
    cfg.sweep_rho = {0.01, 0.1, 0.5, 1.0};
    cfg.sweep_method = {"bidpm", "rf"};
    cfg.use_ema = false;

    const std::string text = cfg.render();
    const ExperimentConfig back = ExperimentConfig::parse(text);
    REQUIRE(back.render() == text);
    REQUIRE(back.seed == cfg.seed);
    REQUIRE(back.train.learning_rate == cfg.train.learning_rate);
    REQUIRE(back.train.method == Method::otcfm);
    REQUIRE(back.train.grid_weights == cfg.train.grid_weights);
    REQUIRE(back.sweep_rho == cfg.sweep_rho);
    REQUIRE(back.sweep_method == cfg.sweep_method);
    REQUIRE(back.use_ema == false);
}

TEST_CASE("config parser reports every problem at once") {
    const std::string text =
        "seed = 7\n"
        "nonsense.key = 1\n"        // unknown
        "dataset.rho = banana\n"    // bad number
        "seed = 8\n"                // duplicate
        "train.steps\n";            // missing '='
    try {
        ExperimentConfig::parse(text);
        FAIL("expected a parse error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        REQUIRE_THAT(msg, ContainsSubstring("nonsense.key: unknown key"));
        REQUIRE_THAT(msg, ContainsSubstring("dataset.rho"));
        REQUIRE_THAT(msg, ContainsSubstring("seed: duplicate key"));
        REQUIRE_THAT(msg, ContainsSubstring("line 5"));
    }
}

TEST_CASE("config parser handles comments, blanks and spacing") {
    const ExperimentConfig cfg = ExperimentConfig::parse(
        "# an experiment\n"
        "\n"
        "seed = 42   # inline comment\n"
        "  dataset.components=4\n"
        "train.method =rf\n");
    REQUIRE(cfg.seed == 42);
    REQUIRE(cfg.components == 4);
    REQUIRE(cfg.train.method == Method::rf);
}

TEST_CASE("config validation aggregates dataset and training problems") {
    ExperimentConfig cfg;
    cfg.rho = 1.5;
    cfg.map_text = "perm:0,0";
    cfg.components = 2;
    cfg.train.steps = 0;
    const auto errs = cfg.validate();
    REQUIRE(errs.size() == 3);
    REQUIRE_THROWS_AS(cfg.require_valid(), Error);
}

TEST_CASE("checkpoints round trip bit-exactly and rewrite byte-identically") {
    ExperimentConfig cfg;
    cfg.seed = 0xfeedface12345678ull;
    cfg.train.hidden = 6;
    cfg.train.hidden_layers = 2;
    cfg.train.embed_dim = 4;

    VelocityField live = init_field(2, 6, 4, FieldInit{11}, 2);
    VelocityField ema = init_field(2, 6, 4, FieldInit{12}, 2);
    OptimizerState opt = OptimizerState::init(live);
    opt.step = 321;
    CounterRng rng(13);
    for (Tensor& t : opt.m) t = testutil::random_tensor(t.shape(), rng);
    for (Tensor& t : opt.v) t = testutil::random_tensor(t.shape(), rng, 0.0, 1.0);

    const Checkpoint ckpt = make_checkpoint(cfg, live, ema, opt);
    const std::string p1 = scratch_file("round.ckpt");
    save_checkpoint(p1, ckpt);
    const Checkpoint loaded = load_checkpoint(p1);

    REQUIRE(loaded.config_text == ckpt.config_text);
    REQUIRE(loaded.arrays.size() == ckpt.arrays.size());
    for (std::size_t i = 0; i < ckpt.arrays.size(); ++i) {
        REQUIRE(loaded.arrays[i].first == ckpt.arrays[i].first);
        REQUIRE(testutil::bitwise_equal(loaded.arrays[i].second, ckpt.arrays[i].second));
    }

    const std::string p2 = scratch_file("round2.ckpt");
    save_checkpoint(p2, loaded);
    const bool rewrites_identically = slurp(p1) == slurp(p2);
    REQUIRE(rewrites_identically);

    const RestoredTraining r = restore_training(loaded);
    REQUIRE(r.steps == 321);
    REQUIRE(r.seed == cfg.seed);
    REQUIRE(r.opt.step == 321);
    const auto lp = testutil::get_params(live);
    const auto rp = testutil::get_params(r.live);
    for (std::size_t i = 0; i < lp.size(); ++i) REQUIRE(testutil::bitwise_equal(lp[i], rp[i]));
    const auto ep = testutil::get_params(ema);
    const auto re = testutil::get_params(r.ema);
    for (std::size_t i = 0; i < ep.size(); ++i) REQUIRE(testutil::bitwise_equal(ep[i], re[i]));
    for (std::size_t i = 0; i < opt.m.size(); ++i) {
        REQUIRE(testutil::bitwise_equal(opt.m[i], r.opt.m[i]));
        REQUIRE(testutil::bitwise_equal(opt.v[i], r.opt.v[i]));
    }
}

TEST_CASE("corrupt checkpoints are rejected with clear errors") {
    ExperimentConfig cfg;
    cfg.train.hidden = 4;
    cfg.train.hidden_layers = 1;
    cfg.train.embed_dim = 2;
    const VelocityField f = init_field(2, 4, 2, FieldInit{1}, 1);
    const std::string path = scratch_file("corrupt.ckpt");
    save_checkpoint(path, make_checkpoint(cfg, f, f, OptimizerState::init(f)));
    const std::string good = slurp(path);

    SECTION("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        std::ofstream(path, std::ios::binary) << bad;
        REQUIRE_THROWS_WITH(load_checkpoint(path), ContainsSubstring("bad magic"));
    }
    SECTION("unsupported version") {
        std::string bad = good;
        bad[8] = 99;  // version lives right after the 8-byte magic
        std::ofstream(path, std::ios::binary) << bad;
        REQUIRE_THROWS_WITH(load_checkpoint(path), ContainsSubstring("version"));
    }
    SECTION("truncation") {
        std::ofstream(path, std::ios::binary) << good.substr(0, good.size() / 2);
        REQUIRE_THROWS_WITH(load_checkpoint(path), ContainsSubstring("truncated"));
    }
    SECTION("config/state seed disagreement") {
        std::ofstream(path, std::ios::binary) << good;
        Checkpoint ckpt = load_checkpoint(path);
        for (auto& [name, t] : ckpt.arrays)
            if (name == "state") t[1] += 1.0;
        REQUIRE_THROWS_WITH(restore_training(ckpt), ContainsSubstring("seed disagrees"));
    }
}

TEST_CASE("metrics csv is full precision and stable") {
    std::vector<TrainRecord> recs;
    TrainRecord r;
    r.step = 0;
    r.loss = {1.0 / 3.0, 0.25, 1e-17};
    r.grad_norm = 12345.6789012345678;
    r.wall_ms = 3.25;
    recs.push_back(r);
    r.step = 5;
    r.loss = {2.0 / 7.0, 0.125, 0.0};
    recs.push_back(r);

    const std::string path = scratch_file("metrics.csv");
    write_metrics_csv(path, recs);
    const std::string text = slurp(path);
    REQUIRE_THAT(text, ContainsSubstring("step,total,loss_paired,loss_unpaired,grad_norm\n"));

    std::istringstream in(text);
    std::string line;
    std::getline(in, line);  // header
    std::getline(in, line);
    const auto cells = detail::split_csv_line(line);
    REQUIRE(cells.size() == 5);
    REQUIRE(parse_double(cells[1], "t") == 1.0 / 3.0);
    REQUIRE(parse_double(cells[3], "t") == 1e-17);
    REQUIRE(parse_double(cells[4], "t") == 12345.6789012345678);

    write_timing_csv(scratch_file("timing.csv"), recs);
    REQUIRE_THAT(slurp(scratch_file("timing.csv")), ContainsSubstring("step,wall_ms\n"));
}

TEST_CASE("eval csv round trips exactly") {
    EvalRow row;
    row.method = "bidpm";
    row.rho = 0.1;
    row.grid_steps = 2;
    row.sample_steps = 10;
    row.seed = 0xabcdef0123456789ull;
    row.n_pairs = 77;
    row.forward_mean = 1.0 / 3.0;
    row.forward_stddev = 2.0 / 3.0;
    row.backward_mean = 1e-300;
    row.backward_stddev = 0.0;
    row.mmd2 = 0.7869386805747332;
    row.centroid_max = 4.0 / 7.0;
    row.theorem_max_deviation = 1.25e-7;
    row.theorem_endpoint_gap = 3.0;
    row.theorem_residual_loss = 5e-16;

    const std::string path = scratch_file("eval.csv");
    write_eval_csv(path, {row, row});
    const std::vector<EvalRow> back = read_eval_csv(path);
    REQUIRE(back.size() == 2);
    for (const EvalRow& b : back) {
        REQUIRE(b.method == row.method);
        REQUIRE(b.rho == row.rho);
        REQUIRE(b.grid_steps == row.grid_steps);
        REQUIRE(b.sample_steps == row.sample_steps);
        REQUIRE(b.seed == row.seed);
        REQUIRE(b.n_pairs == row.n_pairs);
        REQUIRE(b.forward_mean == row.forward_mean);
        REQUIRE(b.forward_stddev == row.forward_stddev);
        REQUIRE(b.backward_mean == row.backward_mean);
        REQUIRE(b.backward_stddev == row.backward_stddev);
        REQUIRE(b.mmd2 == row.mmd2);
        REQUIRE(b.centroid_max == row.centroid_max);
        REQUIRE(b.theorem_max_deviation == row.theorem_max_deviation);
        REQUIRE(b.theorem_endpoint_gap == row.theorem_endpoint_gap);
        REQUIRE(b.theorem_residual_loss == row.theorem_residual_loss);
    }
    REQUIRE_THROWS_AS(read_eval_csv(scratch_file("missing.csv")), Error);
}

TEST_CASE("sweep csv sanitizes failure messages") {
    SweepRow ok;
    ok.grid_steps = 2;
    ok.rho = 0.5;
    ok.method = "bidpm";
    SweepRow bad = ok;
    bad.status = "failed: x, y\nz";
    const std::string path = scratch_file("sweep.csv");
    write_sweep_csv(path, {ok, bad});
    const std::string text = slurp(path);
    REQUIRE_THAT(text, ContainsSubstring(kSweepHeader));
    REQUIRE_THAT(text, ContainsSubstring("failed: x; y;z"));
    std::size_t lines = 0;
    for (char c : text)
        if (c == '\n') ++lines;
    REQUIRE(lines == 3);  // header + 2 rows; the embedded newline was flattened
}

TEST_CASE("scatter svg has one circle per point and one line per pair") {
    const Tensor source = Tensor::matrix(2, 2, {0.0, 0.0, 1.0, 0.0});
    const Tensor target = Tensor::matrix(3, 2, {0.0, 1.0, 1.0, 1.0, 2.0, 2.0});
    const Tensor synth = Tensor::matrix(1, 2, {0.5, 0.5});
    const std::vector<std::pair<std::size_t, std::size_t>> pairs = {{0, 0}, {1, 1}};

    const std::string path = scratch_file("scatter.svg");
    write_scatter_svg(path, "demo", source, target, synth, pairs);
    const std::string text = slurp(path);

    std::size_t circles = 0, lines = 0, pos = 0;
    while ((pos = text.find("<circle", pos)) != std::string::npos) {
        ++circles;
        ++pos;
    }
    pos = 0;
    while ((pos = text.find("<line", pos)) != std::string::npos) {
        ++lines;
        ++pos;
    }
    REQUIRE(circles == source.rows() + target.rows() + synth.rows());
    REQUIRE(lines == pairs.size());
    REQUIRE_THAT(text, ContainsSubstring("</svg>"));

    REQUIRE_THROWS_AS(write_scatter_svg(path, "bad", source, target, synth, {{5, 0}}), Error);
}
