// mlstm command-line driver: synth, prepare, train, evaluate, gradcheck.
//
// Exit codes: 0 ok, 1 usage, 2 config error, 3 data error, 4 divergence,
// 5 gradient check failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "mlstm/mlstm.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kDivergence = 4, kGradcheck = 5 };

mlstm::AppConfig config_or_default(const std::string& path) {
    return path.empty() ? mlstm::AppConfig{} : mlstm::load_config(path);
}

int cmd_synth(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed) {
    auto cfg = config_or_default(config_path);
    if (seed) cfg.synth.seed = *seed;
    const auto table = mlstm::synthesize(cfg.synth);
    if (const auto parent = std::filesystem::path(out).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent);
    mlstm::save_csv(out, table);
    std::cerr << "wrote " << table.rows.size() << " rows to " << out << '\n';
    return kOk;
}

int cmd_prepare(const std::string& config_path, const std::string& in, const std::string& out,
                std::optional<std::uint64_t> seed) {
    auto cfg = config_or_default(config_path);
    if (seed) cfg.preprocess.split_seed = *seed;
    const auto raw = mlstm::load_csv(in, cfg.preprocess.labels);
    const auto prepared = mlstm::prepare(raw, cfg);
    mlstm::save_prepared(out, prepared, cfg);
    for (auto s : {mlstm::Split::train, mlstm::Split::val, mlstm::Split::test})
        std::cerr << mlstm::split_name(s) << ": " << prepared.split(s).subjects().size() << " subjects\n";
    return kOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, std::optional<std::string> strategy_flag,
              const std::string& out, std::optional<int> epochs, std::optional<std::uint64_t> seed, bool quiet) {
    auto cfg = config_or_default(config_path);
    if (epochs) cfg.train.epochs = *epochs;
    if (seed) cfg.train.init_seed = *seed;
    const auto strategy = strategy_flag ? mlstm::parse_strategy(*strategy_flag) : cfg.strategy;
    cfg.validate();

    const auto data = mlstm::load_prepared(data_dir);
    const auto result = mlstm::run_training(data, cfg, strategy, [&](const mlstm::EpochRecord& r) {
        if (quiet || !r.validation_mae) return;
        std::cerr << "epoch " << r.epoch << " loss " << mlstm::format_double(r.loss) << '\n';
    });

    std::filesystem::create_directories(out);
    const auto dir = std::filesystem::path(out);
    mlstm::save_checkpoint((dir / "checkpoint.txt").string(), result.params, mlstm::to_string(strategy));
    std::ofstream history(dir / "history.csv", std::ios::binary);
    mlstm::write_history(history, result.history, data.biomarkers());
    if (!history) throw mlstm::DataError("failed writing history.csv");
    return kOk;
}

int cmd_evaluate(const std::string& config_path, const std::string& data_dir, const std::string& checkpoint_path,
                 const std::string& split, std::optional<std::string> strategy_flag, const std::string& out) {
    const auto cfg = config_or_default(config_path);
    const auto checkpoint = mlstm::load_checkpoint(checkpoint_path);
    const auto strategy = strategy_flag          ? mlstm::parse_strategy(*strategy_flag)
                          : checkpoint.strategy ? mlstm::parse_strategy(*checkpoint.strategy)
                                                : cfg.strategy;
    const auto data = mlstm::load_prepared(data_dir);
    const auto report = mlstm::evaluate(checkpoint.params, data, strategy, mlstm::parse_split(split), cfg.lda_ridge);
    if (out.empty()) {
        mlstm::write_report(std::cout, report);
    } else {
        if (const auto parent = std::filesystem::path(out).parent_path(); !parent.empty())
            std::filesystem::create_directories(parent);
        std::ofstream file(out, std::ios::binary);
        mlstm::write_report(file, report);
        if (!file) throw mlstm::DataError("failed writing '" + out + "'");
    }
    return kOk;
}

struct GradcheckArgs {
    int subjects = 4, steps = 5, inputs = 3, width = 3;
    double missing = 0.3;
    double tolerance = 1e-5;
    double fd_step = 1e-6;
    std::uint64_t seed = 1;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    const auto instance =
        mlstm::make_random_instance(a.subjects, a.steps, a.inputs, a.width, a.missing, a.missing, a.seed);
    const auto report = mlstm::gradient_check(instance.params, instance.batch, a.fd_step, a.tolerance);
    std::cout << "array,max_relative_error,status\n";
    for (const auto& r : report.arrays)
        std::cout << r.name << ',' << std::setprecision(3) << std::scientific << r.max_relative_error << ','
                  << (r.passed ? "pass" : "FAIL") << '\n';
    std::cout << (report.passed() ? "all arrays pass" : "gradient check FAILED") << " (tol "
              << a.tolerance << ")\n";
    return report.passed() ? kOk : kGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Peephole LSTM with missing-data aware training"};
    app.require_subcommand(1);

    std::string config_path, out, in, data_dir, checkpoint_path, split = "test";
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<std::string> strategy;
    bool quiet = false;
    GradcheckArgs gc;

    const std::vector<std::string> strategies{"masked", "mean", "forward"};

    auto* synth = app.add_subcommand("synth", "Generate a synthetic longitudinal cohort CSV");
    synth->add_option("--config", config_path, "Configuration file")->check(CLI::ExistingFile);
    synth->add_option("--out", out, "Output CSV")->required();
    synth->add_option("--seed", seed, "Override synth.seed");

    auto* prep = app.add_subcommand("prepare", "Preprocess a cohort CSV into scaled train/val/test splits");
    prep->add_option("--config", config_path, "Configuration file")->check(CLI::ExistingFile);
    prep->add_option("--in", in, "Raw cohort CSV")->required()->check(CLI::ExistingFile);
    prep->add_option("--out", out, "Output directory")->required();
    prep->add_option("--seed", seed, "Override split_seed");

    auto* tr = app.add_subcommand("train", "Train on a prepared directory");
    tr->add_option("--config", config_path, "Configuration file")->check(CLI::ExistingFile);
    tr->add_option("--data", data_dir, "Prepared directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--missing-strategy", strategy, "masked, mean or forward")->check(CLI::IsMember(strategies));
    tr->add_option("--out", out, "Output directory for checkpoint.txt and history.csv")->required();
    tr->add_option("--epochs", epochs, "Override epochs")->check(CLI::NonNegativeNumber);
    tr->add_option("--seed", seed, "Override init_seed");
    tr->add_flag("--quiet", quiet, "No progress output");

    auto* ev = app.add_subcommand("evaluate", "MAE and LDA/AUC report for one split");
    ev->add_option("--config", config_path, "Configuration file")->check(CLI::ExistingFile);
    ev->add_option("--data", data_dir, "Prepared directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
    ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--missing-strategy", strategy, "Override the strategy stored in the checkpoint")
        ->check(CLI::IsMember(strategies));
    ev->add_option("--out", out, "Report CSV (default: stdout)");

    auto* gcmd = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
    gcmd->add_option("--subjects", gc.subjects, "J")->check(CLI::PositiveNumber);
    gcmd->add_option("--steps", gc.steps, "T")->check(CLI::PositiveNumber);
    gcmd->add_option("--inputs", gc.inputs, "N")->check(CLI::PositiveNumber);
    gcmd->add_option("--width", gc.width, "M")->check(CLI::PositiveNumber);
    gcmd->add_option("--missing", gc.missing, "Missing rate for inputs and targets")->check(CLI::Range(0.0, 0.99));
    gcmd->add_option("--tol", gc.tolerance, "Relative error tolerance");
    gcmd->add_option("--fd-step", gc.fd_step, "Central difference step");
    gcmd->add_option("--seed", gc.seed, "Instance seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*synth) return cmd_synth(config_path, out, seed);
        if (*prep) return cmd_prepare(config_path, in, out, seed);
        if (*tr) return cmd_train(config_path, data_dir, strategy, out, epochs, seed, quiet);
        if (*ev) return cmd_evaluate(config_path, data_dir, checkpoint_path, split, strategy, out);
        if (*gcmd) return cmd_gradcheck(gc);
    } catch (const mlstm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const mlstm::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const mlstm::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return kDivergence;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}
