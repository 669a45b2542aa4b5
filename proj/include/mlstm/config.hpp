#pragma once

// Flat `key = value` configuration, one setting per line, `#` starts a
// comment. Unknown keys are rejected so typos do not pass silently.
//
//   biomarkers       = ventricles,hippocampus      (default: every CSV column)
//   labels           = CN,MCI,AD
//   label_merge      = MCI-to-AD:AD,CN-to-MCI:MCI
//   use_ref_volume   = true
//   visits           = 0,1,2,3,4,5,6,7,8,9,10
//   min_visits       = 3
//   split_val        = 0.1
//   split_test       = 0.1
//   split_seed       = 1
//   outlier.<name>   = lo,hi
//   learning_rate, momentum, weight_decay, epochs, init_range, init_seed,
//   validation_every, missing_strategy, impute_targets, lda_ridge
//   synth.subjects, synth.biomarkers, synth.visits, synth.noise,
//   synth.missing_rate, synth.progression_sd, synth.slope_min,
//   synth.slope_max, synth.ref_volume, synth.thresholds, synth.seed

#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mlstm/cohort.hpp"
#include "mlstm/errors.hpp"
#include "mlstm/imputation.hpp"
#include "mlstm/numeric_io.hpp"
#include "mlstm/optimizer.hpp"

namespace mlstm {

struct AppConfig {
    std::vector<std::string> biomarkers;
    PreprocessConfig preprocess;
    TrainConfig train;
    MissingStrategy strategy = MissingStrategy::masked;
    ImputeOptions impute;
    std::optional<double> lda_ridge;
    SynthConfig synth;

    void validate() const {
        preprocess.validate();
        train.validate();
        synth.validate();
        if (lda_ridge && !(*lda_ridge >= 0.0)) throw ConfigError("lda_ridge must be >= 0");
    }
};

namespace detail {

inline std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    for (auto part : split_commas(s)) out.emplace_back(trim(part));
    return out;
}

}  // namespace detail

inline AppConfig parse_config(std::istream& in, const std::string& source = "config") {
    AppConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    std::string key;

    auto fail = [&](const std::string& what) {
        return ConfigError(source + ":" + std::to_string(line_no) + ": " + what);
    };
    auto real = [&](std::string_view v) {
        const auto d = parse_double(v);
        if (!d || !std::isfinite(*d)) throw fail("'" + key + "' expects a number, got '" + std::string(v) + "'");
        return *d;
    };
    auto integer = [&](std::string_view v) {
        const auto i = parse_int<long long>(v);
        if (!i) throw fail("'" + key + "' expects an integer, got '" + std::string(v) + "'");
        return *i;
    };
    auto seed = [&](std::string_view v) {
        const auto i = parse_int<std::uint64_t>(v);
        if (!i) throw fail("'" + key + "' expects a non-negative integer, got '" + std::string(v) + "'");
        return *i;
    };
    auto boolean = [&](std::string_view v) {
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw fail("'" + key + "' expects true or false, got '" + std::string(v) + "'");
    };
    auto real_list = [&](std::string_view v) {
        std::vector<double> out;
        for (const auto& p : detail::split_list(v)) out.push_back(real(p));
        return out;
    };

    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view(line);
        if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
        view = trim(view);
        if (view.empty()) continue;
        const auto eq = view.find('=');
        if (eq == std::string_view::npos) throw fail("expected 'key = value'");
        key = std::string(trim(view.substr(0, eq)));
        const auto value = trim(view.substr(eq + 1));

        if (key == "biomarkers") cfg.biomarkers = detail::split_list(value);
        else if (key == "labels") {
            cfg.preprocess.labels.classes = detail::split_list(value);
            cfg.synth.classes = cfg.preprocess.labels.classes;
        } else if (key == "label_merge") {
            cfg.preprocess.labels.merge.clear();
            for (const auto& pair : detail::split_list(value)) {
                const auto colon = pair.find(':');
                if (colon == std::string::npos) throw fail("label_merge entries are 'from:to'");
                cfg.preprocess.labels.merge[std::string(trim(std::string_view(pair).substr(0, colon)))] =
                    std::string(trim(std::string_view(pair).substr(colon + 1)));
            }
        } else if (key == "use_ref_volume") cfg.preprocess.use_ref_volume = boolean(value);
        else if (key == "visits") {
            cfg.preprocess.visits.clear();
            for (const auto& p : detail::split_list(value)) cfg.preprocess.visits.push_back(static_cast<int>(integer(p)));
        } else if (key == "min_visits") cfg.preprocess.min_visits = static_cast<int>(integer(value));
        else if (key == "split_val") cfg.preprocess.val_fraction = real(value);
        else if (key == "split_test") cfg.preprocess.test_fraction = real(value);
        else if (key == "split_seed") cfg.preprocess.split_seed = seed(value);
        else if (key.starts_with("outlier.")) {
            const auto bounds = real_list(value);
            if (bounds.size() != 2) throw fail("outlier ranges are 'lo,hi'");
            cfg.preprocess.outlier_ranges[key.substr(8)] = {bounds[0], bounds[1]};
        } else if (key == "learning_rate") cfg.train.hyper.learning_rate = real(value);
        else if (key == "momentum") cfg.train.hyper.momentum = real(value);
        else if (key == "weight_decay") cfg.train.hyper.weight_decay = real(value);
        else if (key == "epochs") cfg.train.epochs = static_cast<int>(integer(value));
        else if (key == "init_range") cfg.train.init_range = real(value);
        else if (key == "init_seed") cfg.train.init_seed = seed(value);
        else if (key == "validation_every") cfg.train.validation_every = static_cast<int>(integer(value));
        else if (key == "missing_strategy") {
            try {
                cfg.strategy = parse_strategy(std::string(value));
            } catch (const ConfigError& e) {
                throw fail(e.what());
            }
        } else if (key == "impute_targets") cfg.impute.impute_targets = boolean(value);
        else if (key == "lda_ridge") cfg.lda_ridge = real(value);
        else if (key == "synth.subjects") cfg.synth.subjects = static_cast<int>(integer(value));
        else if (key == "synth.biomarkers") cfg.synth.biomarkers = static_cast<int>(integer(value));
        else if (key == "synth.visits") cfg.synth.visits = static_cast<int>(integer(value));
        else if (key == "synth.noise") cfg.synth.noise = real(value);
        else if (key == "synth.missing_rate") cfg.synth.missing_rate = real(value);
        else if (key == "synth.progression_sd") cfg.synth.progression_sd = real(value);
        else if (key == "synth.slope_min") cfg.synth.slope_min = real(value);
        else if (key == "synth.slope_max") cfg.synth.slope_max = real(value);
        else if (key == "synth.ref_volume") cfg.synth.ref_volume = boolean(value);
        else if (key == "synth.thresholds") cfg.synth.thresholds = real_list(value);
        else if (key == "synth.seed") cfg.synth.seed = seed(value);
        else throw fail("unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    return parse_config(in, path);
}

}  // namespace mlstm
