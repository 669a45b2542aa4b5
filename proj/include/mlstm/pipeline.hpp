#pragma once

// End-to-end plumbing: prepared-directory persistence, per-strategy
// training and evaluation (MAE plus LDA/AUC diagnostics).
//
// A prepared directory holds
//   manifest.txt   mlstm-prepared 1 / positions <P> / classes <c1,c2,...>
//   scaling.txt    ScalingSpec
//   train.csv, val.csv, test.csv   scaled cohort tables, visit = window position

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mlstm/checkpoint.hpp"
#include "mlstm/cohort.hpp"
#include "mlstm/config.hpp"
#include "mlstm/eval.hpp"
#include "mlstm/imputation.hpp"
#include "mlstm/optimizer.hpp"

namespace mlstm {

/// Keeps only `names`, in that order. An empty list keeps every column.
inline CohortTable select_biomarkers(const CohortTable& table, const std::vector<std::string>& names) {
    if (names.empty()) return table;
    std::vector<std::size_t> columns;
    for (const auto& n : names) {
        const auto it = std::find(table.biomarkers.begin(), table.biomarkers.end(), n);
        if (it == table.biomarkers.end()) throw ConfigError("biomarker '" + n + "' is not a column of the table");
        columns.push_back(static_cast<std::size_t>(it - table.biomarkers.begin()));
    }
    CohortTable out;
    out.biomarkers = names;
    out.has_ref_volume = table.has_ref_volume;
    for (const auto& r : table.rows) {
        CohortRow row = r;
        row.values.clear();
        for (auto c : columns) row.values.push_back(r.values[c]);
        out.rows.push_back(std::move(row));
    }
    return out;
}

inline PreparedCohort prepare(const CohortTable& raw, const AppConfig& cfg) {
    return preprocess(select_biomarkers(raw, cfg.biomarkers), cfg.preprocess);
}

// ---------------------------------------------------------------------------
// Prepared directory
// ---------------------------------------------------------------------------

inline void save_prepared(const std::string& dir, const PreparedCohort& prepared, const AppConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "manifest.txt", std::ios::binary);
        out << "mlstm-prepared 1\npositions " << cfg.preprocess.visits.size() << "\nclasses ";
        const auto& classes = cfg.preprocess.labels.classes;
        for (std::size_t c = 0; c < classes.size(); ++c) out << (c ? "," : "") << classes[c];
        out << '\n';
        if (!out) throw DataError("cannot write manifest in '" + dir + "'");
    }
    {
        std::ofstream out(fs::path(dir) / "scaling.txt", std::ios::binary);
        write_scaling(out, prepared.scaling);
        if (!out) throw DataError("cannot write scaling in '" + dir + "'");
    }
    for (Split s : {Split::train, Split::val, Split::test})
        save_csv((fs::path(dir) / (std::string(split_name(s)) + ".csv")).string(), prepared.split(s));
}

struct PreparedData {
    ScalingSpec scaling;
    std::vector<std::string> classes;
    int positions = 0;
    std::array<MaskedBatch, 3> batches;

    const MaskedBatch& batch(Split s) const { return batches[static_cast<std::size_t>(s)]; }
    std::vector<std::string> biomarkers() const {
        std::vector<std::string> out;
        for (const auto& b : scaling.biomarkers) out.push_back(b.name);
        return out;
    }
};

inline PreparedData window_prepared(const PreparedCohort& prepared, int positions, const LabelPolicy& labels) {
    PreparedData d;
    d.scaling = prepared.scaling;
    d.classes = labels.classes;
    d.positions = positions;
    for (Split s : {Split::train, Split::val, Split::test})
        d.batches[static_cast<std::size_t>(s)] = window(prepared.split(s), positions, labels);
    return d;
}

inline PreparedData load_prepared(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw DataError("'" + dir + "' is not a prepared directory (no manifest.txt)");
    std::string line;
    int positions = 0;
    LabelPolicy labels;
    labels.classes.clear();
    if (!std::getline(manifest, line) || line != "mlstm-prepared 1") throw DataError("manifest: bad header");
    while (std::getline(manifest, line)) {
        if (line.starts_with("positions ")) {
            const auto p = parse_int<int>(std::string_view(line).substr(10));
            if (!p || *p < 2) throw DataError("manifest: bad positions line");
            positions = *p;
        } else if (line.starts_with("classes ")) {
            labels.classes = detail::split_list(std::string_view(line).substr(8));
        }
    }
    if (positions == 0) throw DataError("manifest: missing positions");

    std::ifstream scaling_in(fs::path(dir) / "scaling.txt");
    if (!scaling_in) throw DataError("missing scaling.txt in '" + dir + "'");
    PreparedCohort prepared;
    prepared.scaling = read_scaling(scaling_in);
    for (Split s : {Split::train, Split::val, Split::test}) {
        prepared.splits[static_cast<std::size_t>(s)] =
            load_csv((fs::path(dir) / (std::string(split_name(s)) + ".csv")).string(), labels);
    }
    for (Split s : {Split::train, Split::val, Split::test}) {
        const auto& names = prepared.split(s).biomarkers;
        if (names.size() != prepared.scaling.biomarkers.size())
            throw DataError(std::string(split_name(s)) + ".csv: biomarker columns do not match scaling.txt");
        for (std::size_t k = 0; k < names.size(); ++k)
            if (names[k] != prepared.scaling.biomarkers[k].name)
                throw DataError(std::string(split_name(s)) + ".csv: biomarker columns do not match scaling.txt");
    }
    return window_prepared(prepared, positions, labels);
}

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

/// Network inputs for `batch` under `strategy`, using training-split means.
inline MaskedBatch strategy_inputs(MissingStrategy strategy, const MaskedBatch& batch, const NodeMeans& means) {
    return apply_strategy(strategy, batch, means, ImputeOptions{false});
}

inline TrainResult run_training(const PreparedData& data, const AppConfig& cfg, MissingStrategy strategy,
                                const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    const auto& train_batch = data.batch(Split::train);
    const auto& val_batch = data.batch(Split::val);
    const auto means = node_means(train_batch);
    const auto fitted = apply_strategy(strategy, train_batch, means, cfg.impute);
    const auto val_inputs = strategy_inputs(strategy, val_batch, means);
    const ValidationSet validation{&val_inputs, &val_batch, data.scaling.inverse_maps()};
    return train(fitted, cfg.train, validation, on_epoch);
}

/// Network outputs, one T x M matrix per sequence.
inline std::vector<Matrix> predict(const LstmParameters& params, const MaskedBatch& inputs) {
    std::vector<Matrix> out;
    for (const auto& s : inputs.sequences()) out.push_back(forward(params, s.inputs()).hidden);
    return out;
}

namespace detail {

struct LabeledRows {
    Matrix features;  // rows: labeled target visits, original units
    std::vector<int> labels;
};

inline LabeledRows labeled_rows(const std::vector<Matrix>& predictions, const MaskedBatch& reference,
                                const std::vector<AffineMap>& inverse) {
    std::vector<Vector> rows;
    LabeledRows out;
    for (std::size_t j = 0; j < predictions.size(); ++j) {
        const auto& labels = reference[j].labels();
        for (std::size_t t = 0; t < labels.size(); ++t) {
            if (!labels[t]) continue;
            Vector f = predictions[j].row(static_cast<Eigen::Index>(t)).transpose();
            for (Eigen::Index m = 0; m < f.size(); ++m) f(m) = inverse[static_cast<std::size_t>(m)](f(m));
            rows.push_back(std::move(f));
            out.labels.push_back(*labels[t]);
        }
    }
    const auto D = predictions.empty() ? 0 : predictions.front().cols();
    out.features.resize(static_cast<Eigen::Index>(rows.size()), D);
    for (std::size_t r = 0; r < rows.size(); ++r) out.features.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    return out;
}

}  // namespace detail

/// MAE on `split` in original units; LDA fit on training-split predictions
/// of labeled visits and scored on the labeled visits of `split`. AUC rows
/// cover the classes present in both; none when training has fewer than two
/// labeled classes.
inline MetricsReport evaluate(const LstmParameters& params, const PreparedData& data, MissingStrategy strategy,
                              Split split, std::optional<double> lda_ridge = std::nullopt) {
    const auto& train_batch = data.batch(Split::train);
    const auto& target = data.batch(split);
    const auto means = node_means(train_batch);
    const auto inverse = data.scaling.inverse_maps();

    const auto target_pred = predict(params, strategy_inputs(strategy, target, means));

    MetricsReport report;
    report.biomarkers = data.biomarkers();
    MaeAccumulator acc(inverse);
    for (std::size_t j = 0; j < target_pred.size(); ++j)
        acc.add(target_pred[j], target[j].targets(), target[j].target_mask());
    report.mae = acc.result();

    const auto train_rows =
        detail::labeled_rows(predict(params, strategy_inputs(strategy, train_batch, means)), train_batch, inverse);
    const auto scored_rows = detail::labeled_rows(target_pred, target, inverse);
    if (std::set<int>(train_rows.labels.begin(), train_rows.labels.end()).size() < 2) return report;
    const auto model = fit_lda(train_rows.features, train_rows.labels, lda_ridge);

    // posterior columns for the classes that are actually scored
    std::vector<int> present;
    for (int label : scored_rows.labels)
        if (std::find(present.begin(), present.end(), label) == present.end()) present.push_back(label);
    std::sort(present.begin(), present.end());
    std::vector<Eigen::Index> column;
    for (int label : present) {
        const auto it = std::find(model.classes.begin(), model.classes.end(), label);
        if (it == model.classes.end())
            throw DataError("class '" + data.classes[static_cast<std::size_t>(label)] +
                            "' appears in the evaluated split but not in training");
        column.push_back(static_cast<Eigen::Index>(it - model.classes.begin()));
    }
    for (int label : present) report.class_names.push_back(data.classes[static_cast<std::size_t>(label)]);
    if (present.size() < 2) return report;

    std::vector<ScoredVisit> scored;
    for (Eigen::Index r = 0; r < scored_rows.features.rows(); ++r) {
        const Vector p = posterior(model, scored_rows.features.row(r).transpose());
        ScoredVisit v;
        v.label = static_cast<int>(std::find(present.begin(), present.end(), scored_rows.labels[static_cast<std::size_t>(r)]) -
                                   present.begin());
        v.posteriors.resize(static_cast<Eigen::Index>(present.size()));
        for (std::size_t c = 0; c < present.size(); ++c) v.posteriors(static_cast<Eigen::Index>(c)) = p(column[c]);
        scored.push_back(std::move(v));
    }
    const auto auc = multiclass_auc(scored, static_cast<int>(present.size()));
    report.pair_auc = auc.pairs;
    report.multiclass_auc = auc.overall;
    return report;
}

inline double mean_mae(const MetricsReport& r) {
    double sum = 0.0;
    int n = 0;
    for (const auto& v : r.mae)
        if (v) {
            sum += *v;
            ++n;
        }
    return n ? sum / n : std::nan("");
}

}  // namespace mlstm
