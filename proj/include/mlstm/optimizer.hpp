#pragma once

// Momentum batch gradient descent with weight decay, and the full-batch
// training loop.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mlstm/bptt.hpp"
#include "mlstm/errors.hpp"
#include "mlstm/eval.hpp"
#include "mlstm/lstm.hpp"
#include "mlstm/masked_data.hpp"
#include "mlstm/numeric_io.hpp"

namespace mlstm {

struct Hyperparameters {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0001;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    }
};

using Velocity = LayerArrays<VelocityTag>;

struct OptimizerState {
    Velocity velocity;
    Hyperparameters hyper;

    static OptimizerState zeros_like(const LstmParameters& params, Hyperparameters hyper = {}) {
        hyper.validate();
        return {Velocity::zeros_like(params), hyper};
    }
};

/// For every array w with gradient g and velocity v:
///   v <- momentum * v - learning_rate * (g + weight_decay * w)
///   w <- w + v
/// Decay applies to all 15 arrays, biases and peepholes included. Nothing
/// is modified if any array would become non-finite.
inline void momentum_step(LstmParameters& params, const GradientSet& grads, OptimizerState& state) {
    if (!same_shape(params, grads) || !same_shape(params, state.velocity))
        throw DataError("momentum_step: shape mismatch");
    const auto& h = state.hyper;

    Velocity next_v = state.velocity;
    LstmParameters next_p = params;
    for_each_array([&](std::string_view name, auto& w, auto& v, const auto& g) {
        v = h.momentum * v - h.learning_rate * (g + h.weight_decay * w);
        w += v;
        if (!w.allFinite() || !v.allFinite())
            throw DivergenceError("momentum_step: non-finite update in " + std::string(name));
    }, next_p, next_v, grads);

    params = std::move(next_p);
    state.velocity = std::move(next_v);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 1000;
    Hyperparameters hyper;
    std::uint64_t init_seed = 1;
    double init_range = 0.05;
    int validation_every = 50;  // 0 disables validation

    void validate() const {
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (validation_every < 0) throw ConfigError("validation_every must be >= 0");
        if (!(init_range >= 0.0)) throw ConfigError("init_range must be >= 0");
        hyper.validate();
    }
};

/// Validation data: `inputs` feeds the network (possibly imputed),
/// `reference` supplies the original targets and masks scored by MAE.
struct ValidationSet {
    const MaskedBatch* inputs = nullptr;
    const MaskedBatch* reference = nullptr;
    std::vector<AffineMap> inverse;  // per target node, back to original units
};

struct EpochRecord {
    int epoch = 0;      // 1-based
    double loss = 0.0;  // total normalized loss before this epoch's update
    std::optional<std::vector<std::optional<double>>> validation_mae;
};

struct TrainResult {
    LstmParameters params;
    std::vector<EpochRecord> history;
};

inline std::vector<std::optional<double>> batch_mae(const LstmParameters& params, const MaskedBatch& inputs,
                                                    const MaskedBatch& reference, std::vector<AffineMap> inverse) {
    if (inputs.size() != reference.size()) throw DataError("batch_mae: input and reference batches differ in size");
    MaeAccumulator acc(std::move(inverse));
    for (std::size_t j = 0; j < static_cast<std::size_t>(inputs.size()); ++j) {
        const auto cache = forward(params, inputs[j].inputs());
        acc.add(cache.hidden, reference[j].targets(), reference[j].target_mask());
    }
    return acc.result();
}

/// Full-batch training from freshly initialized parameters.
inline TrainResult train(const MaskedBatch& batch, const TrainConfig& config,
                         const std::optional<ValidationSet>& validation = std::nullopt,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    config.validate();
    if (batch.empty()) throw DataError("train: empty training batch");

    TrainResult result{init_parameters(batch.input_width(), batch.target_width(), config.init_seed,
                                       config.init_range),
                       {}};
    auto state = OptimizerState::zeros_like(result.params, config.hyper);
    const auto factors = compute_factors(batch);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        BatchGradient step;
        try {
            step = batch_gradient(result.params, batch, factors);
            if (!std::isfinite(step.loss)) throw DivergenceError("non-finite loss");
            momentum_step(result.params, step.gradients, state);
        } catch (const DivergenceError& e) {
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }

        EpochRecord record{epoch, step.loss, std::nullopt};
        if (validation && config.validation_every > 0 &&
            (epoch % config.validation_every == 0 || epoch == config.epochs))
            record.validation_mae =
                batch_mae(result.params, *validation->inputs, *validation->reference, validation->inverse);
        if (on_epoch) on_epoch(record);
        result.history.push_back(std::move(record));
    }
    return result;
}

/// One line per epoch: `epoch,loss[,mae_1,...,mae_M]`, MAE fields present
/// only on validation epochs.
inline void write_history(std::ostream& out, const std::vector<EpochRecord>& history,
                          const std::vector<std::string>& node_names) {
    out << "epoch,loss";
    for (const auto& n : node_names) out << ",mae_" << n;
    out << '\n';
    for (const auto& r : history) {
        out << r.epoch << ',' << format_double(r.loss);
        if (r.validation_mae)
            for (const auto& v : *r.validation_mae) out << ',' << (v ? format_double(*v) : "");
        out << '\n';
    }
}

}  // namespace mlstm
