#pragma once

// Longitudinal cohort tables: CSV ingestion, preprocessing into scaled
// train/validation/test splits, one-step-ahead windowing, and a synthetic
// cohort generator with sigmoid biomarker trajectories.
//
// CSV grammar: comma separated, no quoting, '\n' line ends, header
//   subject_id,visit,label,<biomarker_1>,...,<biomarker_N>[,ref_volume]
// An empty field is a missing value; the label is empty or a configured
// class name.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mlstm/errors.hpp"
#include "mlstm/eval.hpp"
#include "mlstm/masked_data.hpp"
#include "mlstm/numeric_io.hpp"

namespace mlstm {

struct CohortRow {
    std::string subject_id;
    int visit = 0;
    std::optional<std::string> label;
    std::vector<std::optional<double>> values;  // one per biomarker
    std::optional<double> ref_volume;
};

struct CohortTable {
    std::vector<std::string> biomarkers;
    bool has_ref_volume = false;
    std::vector<CohortRow> rows;

    /// Subject ids in order of first appearance.
    std::vector<std::string> subjects() const {
        std::vector<std::string> out;
        std::set<std::string> seen;
        for (const auto& r : rows)
            if (seen.insert(r.subject_id).second) out.push_back(r.subject_id);
        return out;
    }
};

/// Allowed class names plus a rename map applied first (e.g. "MCI-to-AD" -> "AD").
/// An empty class list accepts any label.
struct LabelPolicy {
    std::vector<std::string> classes{"CN", "MCI", "AD"};
    std::map<std::string, std::string> merge;

    std::optional<int> index_of(const std::string& label) const {
        const auto it = std::find(classes.begin(), classes.end(), label);
        if (it == classes.end()) return std::nullopt;
        return static_cast<int>(it - classes.begin());
    }
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace detail

inline CohortTable read_csv(std::istream& in, const LabelPolicy& policy = {}) {
    auto fail = [](std::size_t line, const std::string& what) {
        return DataError("line " + std::to_string(line) + ": " + what);
    };

    std::string line;
    if (!std::getline(in, line)) throw DataError("empty cohort file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_commas(line);
    if (header.size() < 4 || header[0] != "subject_id" || header[1] != "visit" || header[2] != "label")
        throw fail(1, "header must start with subject_id,visit,label and name at least one biomarker");

    CohortTable table;
    table.has_ref_volume = header.back() == "ref_volume";
    const std::size_t n_bio = header.size() - 3 - (table.has_ref_volume ? 1 : 0);
    if (n_bio == 0) throw fail(1, "no biomarker columns");
    for (std::size_t k = 0; k < n_bio; ++k) {
        if (header[3 + k].empty()) throw fail(1, "empty biomarker name");
        table.biomarkers.emplace_back(header[3 + k]);
    }

    std::set<std::pair<std::string, int>> seen;
    std::unordered_map<std::string, int> last_visit;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_commas(line);
        if (fields.size() != header.size())
            throw fail(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                    std::to_string(fields.size()));

        CohortRow row;
        row.subject_id = std::string(fields[0]);
        if (row.subject_id.empty()) throw fail(line_no, "empty subject_id");
        const auto visit = parse_int<int>(fields[1]);
        if (!visit || *visit < 0) throw fail(line_no, "malformed visit index '" + std::string(fields[1]) + "'");
        row.visit = *visit;

        if (!fields[2].empty()) {
            std::string label(fields[2]);
            if (const auto it = policy.merge.find(label); it != policy.merge.end()) label = it->second;
            if (!policy.classes.empty() && !policy.index_of(label))
                throw fail(line_no, "unknown label '" + std::string(fields[2]) + "'");
            row.label = std::move(label);
        }

        auto parse_field = [&](std::string_view f) -> std::optional<double> {
            if (f.empty()) return std::nullopt;
            const auto v = parse_double(f);
            if (!v || !std::isfinite(*v)) throw fail(line_no, "malformed number '" + std::string(f) + "'");
            return v;
        };
        for (std::size_t k = 0; k < n_bio; ++k) row.values.push_back(parse_field(fields[3 + k]));
        if (table.has_ref_volume) row.ref_volume = parse_field(fields.back());

        if (!seen.insert({row.subject_id, row.visit}).second)
            throw fail(line_no, "duplicate (subject, visit) = (" + row.subject_id + ", " +
                                    std::to_string(row.visit) + ")");
        if (const auto it = last_visit.find(row.subject_id); it != last_visit.end() && it->second >= row.visit)
            throw fail(line_no, "visit indices of subject '" + row.subject_id + "' are not increasing");
        last_visit[row.subject_id] = row.visit;
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline CohortTable load_csv(const std::string& path, const LabelPolicy& policy = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        return read_csv(in, policy);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

inline void write_csv(std::ostream& out, const CohortTable& table) {
    out << "subject_id,visit,label";
    for (const auto& b : table.biomarkers) out << ',' << b;
    if (table.has_ref_volume) out << ",ref_volume";
    out << '\n';
    for (const auto& r : table.rows) {
        out << r.subject_id << ',' << r.visit << ',' << r.label.value_or("");
        for (const auto& v : r.values) out << ',' << (v ? format_double(*v) : "");
        if (table.has_ref_volume) out << ',' << (r.ref_volume ? format_double(*r.ref_volume) : "");
        out << '\n';
    }
}

inline void save_csv(const std::string& path, const CohortTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    write_csv(out, table);
    if (!out) throw DataError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

struct BiomarkerScaling {
    std::string name;
    std::optional<double> lo, hi;  // outlier range, inclusive
    double min = 0.0, max = 1.0;   // training-split extremes

    double to_unit(double v) const { return 2.0 * (v - min) / (max - min) - 1.0; }
    double from_unit(double s) const { return (s + 1.0) * 0.5 * (max - min) + min; }
    AffineMap inverse() const { return {0.5 * (max - min), min + 0.5 * (max - min)}; }
};

/// Affine maps of each biomarker onto [-1, 1] and back.
///
/// File format:
///   mlstm-scaling 1
///   name,lo,hi,min,max        (lo/hi empty when no outlier bound)
struct ScalingSpec {
    std::vector<BiomarkerScaling> biomarkers;

    std::vector<AffineMap> inverse_maps() const {
        std::vector<AffineMap> out;
        for (const auto& b : biomarkers) out.push_back(b.inverse());
        return out;
    }
};

inline constexpr int kScalingVersion = 1;

inline void write_scaling(std::ostream& out, const ScalingSpec& spec) {
    out << "mlstm-scaling " << kScalingVersion << '\n';
    for (const auto& b : spec.biomarkers)
        out << b.name << ',' << (b.lo ? format_double(*b.lo) : "") << ',' << (b.hi ? format_double(*b.hi) : "")
            << ',' << format_double(b.min) << ',' << format_double(b.max) << '\n';
}

inline ScalingSpec read_scaling(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "mlstm-scaling " + std::to_string(kScalingVersion))
        throw DataError("scaling: missing or unsupported header");
    ScalingSpec spec;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_commas(line);
        if (f.size() != 5) throw DataError("scaling: expected 5 fields in '" + line + "'");
        BiomarkerScaling b;
        b.name = std::string(f[0]);
        auto opt = [&](std::string_view s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            const auto v = parse_double(s);
            if (!v) throw DataError("scaling: bad number '" + std::string(s) + "'");
            return v;
        };
        b.lo = opt(f[1]);
        b.hi = opt(f[2]);
        const auto mn = opt(f[3]);
        const auto mx = opt(f[4]);
        if (!mn || !mx || !(*mn < *mx)) throw DataError("scaling: invalid min/max for '" + b.name + "'");
        b.min = *mn;
        b.max = *mx;
        spec.biomarkers.push_back(std::move(b));
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

struct PreprocessConfig {
    LabelPolicy labels;
    bool use_ref_volume = false;
    std::vector<int> visits{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};  // kept visit indices, window order
    std::map<std::string, std::pair<double, double>> outlier_ranges;
    int min_visits = 3;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
    std::uint64_t split_seed = 1;

    void validate() const {
        if (visits.size() < 2) throw ConfigError("visit window needs at least two visits");
        for (std::size_t i = 1; i < visits.size(); ++i)
            if (visits[i] <= visits[i - 1]) throw ConfigError("visit indices must be strictly increasing");
        if (!(val_fraction >= 0.0) || !(test_fraction >= 0.0) || val_fraction + test_fraction >= 1.0)
            throw ConfigError("split fractions must be >= 0 and sum to less than 1");
        if (min_visits < 1) throw ConfigError("min_visits must be >= 1");
    }
};

enum class Split { train = 0, val = 1, test = 2 };

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

/// Preprocessed cohort: three scaled tables whose visit column is the
/// position inside the visit window (0..T).
struct PreparedCohort {
    ScalingSpec scaling;
    std::array<CohortTable, 3> splits;

    const CohortTable& split(Split s) const { return splits[static_cast<std::size_t>(s)]; }
};

namespace detail {

struct SubjectRows {
    std::string id;
    std::vector<CohortRow> rows;  // window positions as visit
};

inline std::optional<std::string> baseline_label(const SubjectRows& s) {
    for (const auto& r : s.rows)
        if (r.visit == 0) return r.label ? r.label : std::nullopt;
    return std::nullopt;
}

}  // namespace detail

/// Steps, in order: divide by the reference volume (when configured); keep
/// the configured visits; drop out-of-range values; remove subjects with
/// fewer than `min_visits` available visits in any biomarker; split each
/// baseline-label stratum into val/test (floor of the fraction) and train
/// (remainder); scale every biomarker to [-1, 1] using training extremes.
inline PreparedCohort preprocess(const CohortTable& table, const PreprocessConfig& cfg) {
    cfg.validate();
    const auto n_bio = table.biomarkers.size();
    if (cfg.use_ref_volume && !table.has_ref_volume)
        throw ConfigError("use_ref_volume is set but the table has no ref_volume column");
    for (const auto& [name, range] : cfg.outlier_ranges) {
        if (std::find(table.biomarkers.begin(), table.biomarkers.end(), name) == table.biomarkers.end())
            throw ConfigError("outlier range for unknown biomarker '" + name + "'");
        if (!(range.first < range.second)) throw ConfigError("outlier range for '" + name + "' is empty");
    }

    std::map<int, int> position;
    for (std::size_t i = 0; i < cfg.visits.size(); ++i) position[cfg.visits[i]] = static_cast<int>(i);

    // (1)-(3) per row
    std::vector<detail::SubjectRows> subjects;
    std::unordered_map<std::string, std::size_t> subject_index;
    for (const auto& src : table.rows) {
        const auto pos = position.find(src.visit);
        if (pos == position.end()) continue;
        CohortRow row = src;
        row.visit = pos->second;
        row.ref_volume.reset();
        for (std::size_t k = 0; k < n_bio; ++k) {
            auto& v = row.values[k];
            if (!v) continue;
            if (cfg.use_ref_volume) {
                if (src.ref_volume && *src.ref_volume > 0.0)
                    v = *v / *src.ref_volume;
                else
                    v.reset();
            }
            if (v) {
                const auto r = cfg.outlier_ranges.find(table.biomarkers[k]);
                if (r != cfg.outlier_ranges.end() && (*v < r->second.first || *v > r->second.second)) v.reset();
            }
        }
        auto [it, inserted] = subject_index.try_emplace(row.subject_id, subjects.size());
        if (inserted) subjects.push_back({row.subject_id, {}});
        subjects[it->second].rows.push_back(std::move(row));
    }

    // (4)
    std::erase_if(subjects, [&](const detail::SubjectRows& s) {
        for (std::size_t k = 0; k < n_bio; ++k) {
            const auto n = std::count_if(s.rows.begin(), s.rows.end(),
                                         [&](const CohortRow& r) { return r.values[k].has_value(); });
            if (n < cfg.min_visits) return true;
        }
        return false;
    });

    // (5)
    std::vector<std::string> strata = cfg.labels.classes;
    for (const auto& s : subjects)
        if (const auto b = detail::baseline_label(s); b && std::find(strata.begin(), strata.end(), *b) == strata.end())
            strata.push_back(*b);
    strata.emplace_back();  // no baseline label

    std::mt19937_64 engine(cfg.split_seed);
    std::vector<Split> assignment(subjects.size(), Split::train);
    for (const auto& stratum : strata) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < subjects.size(); ++i) {
            const auto b = detail::baseline_label(subjects[i]);
            if (b.value_or("") == stratum) members.push_back(i);
        }
        std::shuffle(members.begin(), members.end(), engine);
        const auto n = static_cast<double>(members.size());
        const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * n));
        const auto n_test = static_cast<std::size_t>(std::floor(cfg.test_fraction * n));
        for (std::size_t r = 0; r < members.size(); ++r)
            assignment[members[r]] = r < n_val ? Split::val : r < n_val + n_test ? Split::test : Split::train;
    }

    // (6)
    PreparedCohort out;
    for (std::size_t k = 0; k < n_bio; ++k) {
        BiomarkerScaling b;
        b.name = table.biomarkers[k];
        if (const auto r = cfg.outlier_ranges.find(b.name); r != cfg.outlier_ranges.end()) {
            b.lo = r->second.first;
            b.hi = r->second.second;
        }
        double mn = std::numeric_limits<double>::infinity(), mx = -mn;
        for (std::size_t i = 0; i < subjects.size(); ++i) {
            if (assignment[i] != Split::train) continue;
            for (const auto& r : subjects[i].rows)
                if (r.values[k]) {
                    mn = std::min(mn, *r.values[k]);
                    mx = std::max(mx, *r.values[k]);
                }
        }
        if (!(mn < mx))
            throw DataError("biomarker '" + b.name + "' has no spread on the training split (min == max)");
        b.min = mn;
        b.max = mx;
        out.scaling.biomarkers.push_back(std::move(b));
    }

    for (auto& split : out.splits) split.biomarkers = table.biomarkers;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        auto& dest = out.splits[static_cast<std::size_t>(assignment[i])];
        for (auto row : subjects[i].rows) {
            for (std::size_t k = 0; k < n_bio; ++k)
                if (row.values[k]) row.values[k] = out.scaling.biomarkers[k].to_unit(*row.values[k]);
            dest.rows.push_back(std::move(row));
        }
    }
    for (Split s : {Split::train, Split::val, Split::test})
        if (out.split(s).rows.empty()) throw DataError(std::string("split '") + split_name(s) + "' is empty");
    return out;
}

/// One sequence per subject: inputs are window positions 0..T-1, targets
/// positions 1..T, labels taken from the target visit. Positions without a
/// row are fully missing.
inline MaskedBatch window(const CohortTable& prepared, int positions, const LabelPolicy& labels) {
    if (positions < 2) throw ConfigError("window needs at least two visit positions");
    const auto T = positions - 1;
    const auto N = static_cast<Eigen::Index>(prepared.biomarkers.size());

    std::vector<MaskedSequence> sequences;
    std::unordered_map<std::string, std::size_t> index;
    std::vector<std::vector<const CohortRow*>> grouped;
    std::vector<std::string> order;
    for (const auto& r : prepared.rows) {
        auto [it, inserted] = index.try_emplace(r.subject_id, grouped.size());
        if (inserted) {
            grouped.emplace_back(static_cast<std::size_t>(positions), nullptr);
            order.push_back(r.subject_id);
        }
        if (r.visit < 0 || r.visit >= positions)
            throw DataError("subject '" + r.subject_id + "': visit position " + std::to_string(r.visit) +
                            " outside the window");
        grouped[it->second][static_cast<std::size_t>(r.visit)] = &r;
    }

    for (std::size_t s = 0; s < grouped.size(); ++s) {
        SequenceData d;
        d.subject_id = order[s];
        d.inputs = Matrix::Zero(T, N);
        d.input_mask = Mask::Constant(T, N, false);
        d.targets = Matrix::Zero(T, N);
        d.target_mask = Mask::Constant(T, N, false);
        d.labels.assign(static_cast<std::size_t>(T), std::nullopt);
        for (int p = 0; p < positions; ++p) {
            const CohortRow* row = grouped[s][static_cast<std::size_t>(p)];
            if (!row) continue;
            for (Eigen::Index k = 0; k < N; ++k) {
                const auto& v = row->values[static_cast<std::size_t>(k)];
                if (!v) continue;
                if (p < T) {
                    d.inputs(p, k) = *v;
                    d.input_mask(p, k) = true;
                }
                if (p > 0) {
                    d.targets(p - 1, k) = *v;
                    d.target_mask(p - 1, k) = true;
                }
            }
            if (p > 0 && row->label) d.labels[static_cast<std::size_t>(p - 1)] = labels.index_of(*row->label);
        }
        sequences.emplace_back(std::move(d));
    }
    return MaskedBatch(std::move(sequences));
}

// ---------------------------------------------------------------------------
// Synthetic cohort
// ---------------------------------------------------------------------------

struct SynthConfig {
    int subjects = 200;
    int biomarkers = 6;
    int visits = 11;
    double noise = 0.05;          // sd as a fraction of each biomarker's amplitude
    double missing_rate = 0.3;    // MCAR, per biomarker cell
    double progression_sd = 3.0;  // spread of subject disease offsets, in visits
    double slope_min = 0.4;
    double slope_max = 1.2;
    bool ref_volume = true;       // emit a per-subject reference volume column
    std::vector<std::string> classes{"CN", "MCI", "AD"};
    std::vector<double> thresholds{-1.5, 1.5};  // progression cut points between classes
    std::uint64_t seed = 1;
    std::vector<double> offsets;  // optional explicit per-subject offsets

    void validate() const {
        if (subjects < 1 || biomarkers < 1 || visits < 1) throw ConfigError("synth: subjects, biomarkers and visits must be >= 1");
        if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("synth: missing_rate must lie in [0, 1)");
        if (!(noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
        if (!(slope_min > 0.0 && slope_min <= slope_max)) throw ConfigError("synth: need 0 < slope_min <= slope_max");
        if (classes.size() != thresholds.size() + 1) throw ConfigError("synth: need one more class than thresholds");
        if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw ConfigError("synth: thresholds must be sorted");
        if (!offsets.empty() && static_cast<int>(offsets.size()) != subjects)
            throw ConfigError("synth: explicit offsets must list every subject");
    }
};

inline std::vector<std::string> default_biomarker_names(int count) {
    static const std::vector<std::string> named{"ventricles", "hippocampus", "whole_brain",
                                                "entorhinal", "fusiform",    "mid_temporal"};
    std::vector<std::string> out;
    for (int k = 0; k < count; ++k)
        out.push_back(count <= static_cast<int>(named.size()) ? named[static_cast<std::size_t>(k)]
                                                              : "biomarker_" + std::to_string(k + 1));
    return out;
}

/// Subject j progresses as p(t) = t - visits/2 + offset_j. Biomarker k
/// follows level_k + direction_k * amplitude_k * sigmoid(slope_k * (p - inflection_k)),
/// expressed as a fraction of the subject's reference volume, plus Gaussian
/// noise. Visit labels threshold p into the configured classes.
inline CohortTable synthesize(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 engine(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    struct Trajectory {
        double level, amplitude, direction, slope, inflection;
    };
    std::vector<Trajectory> traj;
    for (int k = 0; k < cfg.biomarkers; ++k) {
        Trajectory t{};
        t.level = 0.002 + 0.018 * unit(engine);
        t.amplitude = 0.3 * t.level;
        t.direction = (k % 2 == 0) ? 1.0 : -1.0;
        t.slope = cfg.slope_min + (cfg.slope_max - cfg.slope_min) * unit(engine);
        t.inflection = -3.0 + 6.0 * unit(engine);
        traj.push_back(t);
    }

    CohortTable table;
    table.biomarkers = default_biomarker_names(cfg.biomarkers);
    table.has_ref_volume = cfg.ref_volume;
    const int width = std::max(3, static_cast<int>(std::to_string(cfg.subjects - 1).size()));

    for (int j = 0; j < cfg.subjects; ++j) {
        const double offset = cfg.offsets.empty() ? cfg.progression_sd * gauss(engine)
                                                  : cfg.offsets[static_cast<std::size_t>(j)];
        const double reference = cfg.ref_volume ? std::max(1000.0, 1500.0 + 150.0 * gauss(engine)) : 1000.0;
        std::string id = std::to_string(j);
        id = "S" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(id.size(), width), '0') + id;

        for (int v = 0; v < cfg.visits; ++v) {
            const double progression = v - 0.5 * cfg.visits + offset;
            CohortRow row;
            row.subject_id = id;
            row.visit = v;
            const auto cls = std::upper_bound(cfg.thresholds.begin(), cfg.thresholds.end(), progression) -
                             cfg.thresholds.begin();
            row.label = cfg.classes[static_cast<std::size_t>(cls)];
            for (const auto& t : traj) {
                const double s = 1.0 / (1.0 + std::exp(-t.slope * (progression - t.inflection)));
                double ratio = t.level + t.direction * t.amplitude * s;
                const double noise = gauss(engine);
                ratio += cfg.noise * t.amplitude * noise;
                const bool missing = unit(engine) < cfg.missing_rate;
                row.values.push_back(missing ? std::nullopt : std::optional<double>(ratio * reference));
            }
            if (cfg.ref_volume) row.ref_volume = reference;
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

}  // namespace mlstm
