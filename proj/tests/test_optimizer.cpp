#include <gtest/gtest.h>

#include <sstream>

#include "mlstm/checkpoint.hpp"
#include "mlstm/cohort.hpp"
#include "mlstm/optimizer.hpp"

using namespace mlstm;

namespace {

template <class Tag>
LayerArrays<Tag> filled(double v) {
    auto a = LayerArrays<Tag>::zeros(2, 2);
    for_each_array([&](std::string_view, auto& x) { x.setConstant(v); }, a);
    return a;
}

MaskedBatch synthetic_train_batch() {
    SynthConfig s;
    s.subjects = 40;
    s.ref_volume = false;
    PreprocessConfig p;
    const auto prepared = preprocess(synthesize(s), p);
    return window(prepared.split(Split::train), 11, p.labels);
}

}  // namespace

TEST(Hyperparameters, Defaults) {
    const TrainConfig c;
    EXPECT_EQ(c.hyper.learning_rate, 0.1);
    EXPECT_EQ(c.hyper.momentum, 0.9);
    EXPECT_EQ(c.hyper.weight_decay, 0.0001);
    EXPECT_EQ(c.epochs, 1000);
    EXPECT_EQ(c.init_range, 0.05);
}

TEST(Hyperparameters, Validation) {
    EXPECT_THROW((Hyperparameters{0.0, 0.9, 0.0}.validate()), ConfigError);
    EXPECT_THROW((Hyperparameters{0.1, 1.0, 0.0}.validate()), ConfigError);
    EXPECT_THROW((Hyperparameters{0.1, 0.5, -1.0}.validate()), ConfigError);
}

TEST(MomentumStep, TwoStepHandTrace) {
    auto p = filled<ParameterTag>(1.0);
    const auto g = filled<GradientTag>(1.0);
    auto state = OptimizerState::zeros_like(p, {0.1, 0.9, 0.0});
    momentum_step(p, g, state);
    EXPECT_EQ(p.forget.bias(0), 0.9);
    EXPECT_EQ(state.velocity.forget.bias(0), -0.1);
    momentum_step(p, g, state);
    EXPECT_EQ(state.velocity.forget.bias(0), -0.19);
    EXPECT_EQ(p.forget.bias(0), 0.71);
}

TEST(MomentumStep, PlainGradientDescentWithoutMomentumOrDecay) {
    auto p = init_parameters(3, 2, 1, 0.5);
    const auto before = p;
    const auto g = GradientSet::zeros_like(p);
    auto g2 = g;
    for_each_array([](std::string_view, auto& x) { x.setConstant(0.3); }, g2);
    auto state = OptimizerState::zeros_like(p, {0.1, 0.0, 0.0});
    momentum_step(p, g2, state);
    for_each_array([](std::string_view, const auto& a, const auto& b) {
        EXPECT_TRUE((a.array() == (b.array() - 0.1 * 0.3)).all());
    }, p, before);
}

TEST(MomentumStep, FixedPointWithZeroGradient) {
    auto p = init_parameters(3, 2, 1, 0.5);
    const auto before = p;
    auto state = OptimizerState::zeros_like(p, {0.1, 0.9, 0.0});
    momentum_step(p, GradientSet::zeros_like(p), state);
    for_each_array([](std::string_view, const auto& a, const auto& b) { EXPECT_TRUE((a.array() == b.array()).all()); },
                   p, before);
}

TEST(MomentumStep, WeightDecayAppliesToEveryArray) {
    auto p = filled<ParameterTag>(2.0);
    auto state = OptimizerState::zeros_like(p, {0.5, 0.0, 0.1});
    momentum_step(p, GradientSet::zeros_like(p), state);
    for_each_array([](std::string_view, const auto& a) { EXPECT_TRUE((a.array() == 2.0 - 0.5 * 0.1 * 2.0).all()); }, p);
}

TEST(MomentumStep, NonFiniteUpdateLeavesStateUntouched) {
    auto p = filled<ParameterTag>(1.0);
    const auto before = p;
    auto g = filled<GradientTag>(1.0);
    g.peephole_input(1) = std::numeric_limits<double>::infinity();
    auto state = OptimizerState::zeros_like(p);
    EXPECT_THROW(momentum_step(p, g, state), DivergenceError);
    for_each_array([](std::string_view, const auto& a, const auto& b) { EXPECT_TRUE((a.array() == b.array()).all()); },
                   p, before);
    EXPECT_EQ(state.velocity.peephole_input(1), 0.0);
}

TEST(Train, ZeroEpochsReturnInitialization) {
    const auto batch = synthetic_train_batch();
    TrainConfig c;
    c.epochs = 0;
    const auto r = train(batch, c);
    EXPECT_TRUE(r.history.empty());
    const auto init = init_parameters(batch.input_width(), batch.target_width(), c.init_seed, c.init_range);
    for_each_array([](std::string_view, const auto& a, const auto& b) { EXPECT_TRUE((a.array() == b.array()).all()); },
                   r.params, init);
}

TEST(Train, LossDecreasesOnSyntheticTask) {
    const auto batch = synthetic_train_batch();
    TrainConfig c;
    c.epochs = 200;
    const auto r = train(batch, c);
    ASSERT_EQ(r.history.size(), 200u);
    EXPECT_LT(r.history.back().loss, r.history.front().loss);
}

TEST(Train, BitIdenticalCheckpointsAcrossRuns) {
    const auto batch = synthetic_train_batch();
    TrainConfig c;
    c.epochs = 30;
    std::stringstream a, b;
    write_checkpoint(a, train(batch, c).params);
    write_checkpoint(b, train(batch, c).params);
    EXPECT_EQ(a.str(), b.str());
}

TEST(Train, ValidationCadence) {
    const auto batch = synthetic_train_batch();
    TrainConfig c;
    c.epochs = 12;
    c.validation_every = 5;
    const ValidationSet v{&batch, &batch, identity_maps(batch.target_width())};
    const auto r = train(batch, c, v);
    for (const auto& e : r.history)
        EXPECT_EQ(e.validation_mae.has_value(), e.epoch == 5 || e.epoch == 10 || e.epoch == 12) << e.epoch;
    std::stringstream out;
    write_history(out, r.history, {"a", "b", "c", "d", "e", "f"});
    std::string header;
    std::getline(out, header);
    EXPECT_EQ(header, "epoch,loss,mae_a,mae_b,mae_c,mae_d,mae_e,mae_f");
}

TEST(Train, DivergenceNamesEpoch) {
    const auto batch = synthetic_train_batch();
    TrainConfig c;
    c.epochs = 50;
    c.hyper.learning_rate = 1e200;
    try {
        train(batch, c);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    }
}
