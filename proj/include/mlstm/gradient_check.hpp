#pragma once

// Central finite-difference check of the analytic gradients.
//
// Recurrent, peephole and bias arrays are compared against the central
// difference of the total masked loss. Input-weight arrays carry the
// per-subject 1/node_coverage weighting, which is not the derivative of any
// single scalar loss, so their reference is assembled per subject: the
// central difference of subject j's loss w.r.t. W(:, n), divided by
// node_coverage_j(n) and summed over j. The input adjoints dx are checked
// against the central difference of the loss w.r.t. each available input
// cell.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mlstm/bptt.hpp"
#include "mlstm/errors.hpp"
#include "mlstm/lstm.hpp"
#include "mlstm/masked_data.hpp"

namespace mlstm {

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

struct ArrayCheck {
    std::string name;
    double max_relative_error = 0.0;
    bool passed = true;
};

struct GradientCheckReport {
    std::vector<ArrayCheck> arrays;  // 15 parameter arrays, then "dx"
    double tolerance = 0.0;

    bool passed() const {
        return std::all_of(arrays.begin(), arrays.end(), [](const ArrayCheck& a) { return a.passed; });
    }
    double max_relative_error() const {
        double m = 0.0;
        for (const auto& a : arrays) m = std::max(m, a.max_relative_error);
        return m;
    }
};

namespace detail {

// The finite-difference side runs in extended precision; in double the
// cancellation noise (~1e-10 absolute) swamps gradient entries below ~1e-5.
using FdScalar = long double;

template <class Tag>
std::vector<FdScalar> subject_losses(const LayerArrays<Tag, FdScalar>& params, const MaskedBatch& batch,
                                     const NormalizationFactors& factors) {
    std::vector<FdScalar> out;
    out.reserve(static_cast<std::size_t>(batch.size()));
    for (Eigen::Index j = 0; j < batch.size(); ++j) {
        const auto& seq = batch[static_cast<std::size_t>(j)];
        const auto cache = forward(params, seq.inputs().template cast<FdScalar>());
        const FdScalar l = masked_loss(cache.hidden, seq.targets(), seq.target_mask(), factors, j).total();
        if (!std::isfinite(l)) throw DivergenceError("gradient_check: non-finite loss under perturbation");
        out.push_back(l);
    }
    return out;
}

inline bool is_input_weight(int index) { return index < 4; }

}  // namespace detail

/// Checks `analytic` (normally batch_gradient(params, batch).gradients)
/// against central differences with step `fd_step`.
inline GradientCheckReport gradient_check(const LstmParameters& params, const MaskedBatch& batch,
                                          const GradientSet& analytic, double fd_step, double tolerance) {
    using detail::FdScalar;
    if (!(fd_step > 0.0)) throw ConfigError("gradient_check: fd_step must be > 0");
    if (!same_shape(params, analytic)) throw DataError("gradient_check: gradient shape mismatch");

    const auto factors = compute_factors(batch);
    const FdScalar h = fd_step;
    GradientCheckReport report;
    report.tolerance = tolerance;

    auto probe = params.cast<FdScalar>();
    int index = 0;
    for_each_array([&](std::string_view name, auto& p, const auto& g) {
        ArrayCheck check{std::string(name), 0.0, true};
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.cols(); ++c) {
                const FdScalar saved = p(r, c);
                p(r, c) = saved + h;
                const auto plus = detail::subject_losses(probe, batch, factors);
                p(r, c) = saved - h;
                const auto minus = detail::subject_losses(probe, batch, factors);
                p(r, c) = saved;

                FdScalar numeric = 0.0L;
                for (std::size_t j = 0; j < plus.size(); ++j) {
                    const FdScalar diff = (plus[j] - minus[j]) / (2.0L * h);
                    if (detail::is_input_weight(index)) {
                        const double cov = factors.node_coverage(static_cast<Eigen::Index>(j), c);
                        if (cov > 0.0) numeric += diff / static_cast<FdScalar>(cov);
                    } else {
                        numeric += diff;
                    }
                }
                check.max_relative_error = std::max(
                    check.max_relative_error, relative_error(g(r, c), static_cast<double>(numeric)));
            }
        }
        check.passed = check.max_relative_error <= tolerance;
        report.arrays.push_back(std::move(check));
        ++index;
    }, probe, analytic);

    // Input adjoints.
    const auto probe_params = params.cast<FdScalar>();
    ArrayCheck dx{"dx", 0.0, true};
    for (Eigen::Index j = 0; j < batch.size(); ++j) {
        const auto& seq = batch[static_cast<std::size_t>(j)];
        const auto cache = forward(params, seq.inputs());
        const auto loss = masked_loss(cache.hidden, seq.targets(), seq.target_mask(), factors, j);
        const auto state = backward(params, cache, loss.output_grad);

        MatrixT<FdScalar> x = seq.inputs().cast<FdScalar>();
        auto loss_at = [&]() {
            const auto cc = forward(probe_params, x);
            const FdScalar l = masked_loss(cc.hidden, seq.targets(), seq.target_mask(), factors, j).total();
            if (!std::isfinite(l)) throw DivergenceError("gradient_check: non-finite loss under perturbation");
            return l;
        };
        for (Eigen::Index t = 0; t < x.rows(); ++t)
            for (Eigen::Index n = 0; n < x.cols(); ++n) {
                if (!seq.input_mask()(t, n)) continue;
                const FdScalar saved = x(t, n);
                x(t, n) = saved + h;
                const FdScalar plus = loss_at();
                x(t, n) = saved - h;
                const FdScalar minus = loss_at();
                x(t, n) = saved;
                const auto numeric = static_cast<double>((plus - minus) / (2.0L * h));
                dx.max_relative_error = std::max(dx.max_relative_error, relative_error(state.inputs(t, n), numeric));
            }
    }
    dx.passed = dx.max_relative_error <= tolerance;
    report.arrays.push_back(std::move(dx));
    return report;
}

inline GradientCheckReport gradient_check(const LstmParameters& params, const MaskedBatch& batch, double fd_step,
                                          double tolerance) {
    return gradient_check(params, batch, batch_gradient(params, batch).gradients, fd_step, tolerance);
}

struct RandomInstance {
    LstmParameters params;
    MaskedBatch batch;
};

/// Random problem for gradient checks: values uniform in [-1, 1], cells
/// masked independently at the given rates, parameters uniform in
/// [-param_range, param_range]. Every subject keeps at least one input.
inline RandomInstance make_random_instance(Eigen::Index subjects, Eigen::Index steps, Eigen::Index input_width,
                                           Eigen::Index width, double input_missing, double target_missing,
                                           std::uint64_t seed, double param_range = 0.5) {
    if (subjects < 1 || steps < 1) throw ConfigError("random instance needs at least one subject and step");
    if (!(input_missing >= 0.0 && input_missing < 1.0) || !(target_missing >= 0.0 && target_missing <= 1.0))
        throw ConfigError("missing rates must lie in [0, 1)");

    std::mt19937_64 engine(seed);
    std::uniform_real_distribution<double> value(-1.0, 1.0);
    std::bernoulli_distribution drop_input(input_missing);
    std::bernoulli_distribution drop_target(target_missing);
    std::uniform_int_distribution<Eigen::Index> pick_step(0, steps - 1);
    std::uniform_int_distribution<Eigen::Index> pick_node(0, input_width - 1);

    std::vector<MaskedSequence> sequences;
    for (Eigen::Index j = 0; j < subjects; ++j) {
        SequenceData d;
        d.subject_id = "s" + std::to_string(j);
        d.inputs.resize(steps, input_width);
        d.input_mask.resize(steps, input_width);
        d.targets.resize(steps, width);
        d.target_mask.resize(steps, width);
        for (Eigen::Index t = 0; t < steps; ++t) {
            for (Eigen::Index n = 0; n < input_width; ++n) {
                d.inputs(t, n) = value(engine);
                d.input_mask(t, n) = !drop_input(engine);
            }
            for (Eigen::Index m = 0; m < width; ++m) {
                d.targets(t, m) = 0.9 * value(engine);
                d.target_mask(t, m) = !drop_target(engine);
            }
        }
        if (d.input_mask.count() == 0) d.input_mask(pick_step(engine), pick_node(engine)) = true;
        sequences.emplace_back(std::move(d));
    }
    return {init_parameters(input_width, width, engine(), param_range), MaskedBatch(std::move(sequences))};
}

}  // namespace mlstm
