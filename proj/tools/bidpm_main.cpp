// bidpm: train, sample and evaluate bi-directional discrete process matching
// models on 2D toy distributions. See README.md for the config format.

#include <CLI11.hpp>

#include <bidpm/bidpm.hpp>

#include <iostream>
#include <optional>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"bi-directional discrete process matching on 2D toy data"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, out_path, input_path, data_path;
    std::string direction_text = "forward";
    std::optional<std::uint64_t> seed_override;
    std::optional<bool> use_ema;

    CLI::App* train = app.add_subcommand("train", "train a model per a config file");
    train->add_option("--config", config_path, "experiment config file")->required();
    train->add_option("--out", out_path, "output directory (overrides the config's `out`)");
    train->add_option("--seed-override", seed_override, "replace the config's seed");

    CLI::App* synth = app.add_subcommand("synthesize", "transport a point table through a model");
    synth->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    synth->add_option("--input", input_path, "input point table")->required();
    synth->add_option("--out", out_path, "output table file")->required();
    synth->add_option("--direction", direction_text, "forward (source->target) or backward")
        ->check(CLI::IsMember({"forward", "backward"}));
    synth->add_option("--use-ema", use_ema, "true: EMA weights, false: live weights");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a held-out test set");
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval->add_option("--out", out_path, "output directory")->required();
    eval->add_option("--data", data_path, "test dataset table (default: regenerate from config)");
    eval->add_option("--use-ema", use_ema, "true: EMA weights, false: live weights");

    CLI::App* sweep = app.add_subcommand("sweep", "run every combination of the config's sweep lists");
    sweep->add_option("--config", config_path, "experiment config file with sweep.* lists")
        ->required();
    sweep->add_option("--out", out_path, "output directory (overrides the config's `out`)");
    sweep->add_option("--seed-override", seed_override, "replace the config's base seed");

    CLI::App* inspect = app.add_subcommand("inspect-checkpoint", "print a checkpoint's contents");
    inspect->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed())
            return bidpm::cmd_train({config_path, out_path, seed_override});
        if (synth->parsed())
            return bidpm::cmd_synthesize({checkpoint_path, input_path, out_path,
                                          direction_text == "forward" ? bidpm::Direction::forward
                                                                      : bidpm::Direction::backward,
                                          use_ema});
        if (eval->parsed())
            return bidpm::cmd_eval({checkpoint_path, out_path, data_path, use_ema});
        if (sweep->parsed())
            return bidpm::cmd_sweep({config_path, out_path, seed_override});
        if (inspect->parsed())
            return bidpm::cmd_inspect({checkpoint_path});
    } catch (const bidpm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
