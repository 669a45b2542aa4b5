#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mlstm/eval.hpp"
#include "support/oracle.hpp"

using namespace mlstm;

namespace {

Mask all_true(Eigen::Index r, Eigen::Index c) { return Mask::Constant(r, c, true); }

std::vector<ScoredVisit> random_scored(std::mt19937_64& rng, int classes, int n, bool coarse) {
    std::uniform_int_distribution<int> label(0, classes - 1);
    std::uniform_int_distribution<int> level(1, 4);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    std::vector<ScoredVisit> out;
    for (int c = 0; c < classes; ++c) out.push_back({c, Vector()});  // every class present
    for (int i = classes; i < n; ++i) out.push_back({label(rng), Vector()});
    for (auto& v : out) {
        v.posteriors.resize(classes);
        for (int c = 0; c < classes; ++c) v.posteriors(c) = coarse ? level(rng) : u(rng);
        v.posteriors /= v.posteriors.sum();
    }
    return out;
}

}  // namespace

TEST(Mae, ExactFitIsZero) {
    const Matrix y = Matrix::Random(4, 3);
    for (const auto& v : mae(y, y, all_true(4, 3), identity_maps(3))) EXPECT_EQ(*v, 0.0);
}

TEST(Mae, HandValueSkipsMaskedCell) {
    Matrix s(4, 1), y(4, 1);
    s << 1, 2, 0, 4;
    y << 1.5, 2, 99, 3;
    Mask m = all_true(4, 1);
    m(2, 0) = false;
    EXPECT_DOUBLE_EQ(*mae(y, s, m, identity_maps(1))[0], 0.5);
}

TEST(Mae, ScalesWithInverseTransform) {
    const Matrix s = Matrix::Random(5, 2), y = Matrix::Random(5, 2);
    const auto a = mae(y, s, all_true(5, 2), identity_maps(2));
    const auto b = mae(y, s, all_true(5, 2), {{2.0, 3.0}, {2.0, -1.0}});
    for (int m = 0; m < 2; ++m) EXPECT_DOUBLE_EQ(*b[static_cast<std::size_t>(m)], 2.0 * *a[static_cast<std::size_t>(m)]);
}

TEST(Mae, NonNegativeAndUndefinedWithoutCells) {
    Mask m = all_true(3, 2);
    m.col(1).setConstant(false);
    const auto r = mae(Matrix::Random(3, 2), Matrix::Random(3, 2), m, identity_maps(2));
    EXPECT_GE(*r[0], 0.0);
    EXPECT_FALSE(r[1].has_value());
}

TEST(Lda, OneDimensionalClosedForm) {
    Matrix f(6, 1);
    f << -2, -1, 0, 0, 1, 2;  // class means -1 and +1, pooled variance 4 / (6 - 2) = 1
    const std::vector<int> y{0, 0, 0, 1, 1, 1};
    const auto model = fit_lda(f, y, 0.0);
    EXPECT_DOUBLE_EQ(model.covariance(0, 0), 1.0);
    EXPECT_NEAR(posterior(model, Vector::Zero(1))(0), 0.5, 1e-10);
    EXPECT_GT(posterior(model, Vector::Constant(1, -0.1))(0), 0.5);
    EXPECT_LT(posterior(model, Vector::Constant(1, 0.1))(0), 0.5);
}

TEST(Lda, IdenticalClassesGivePriors) {
    Matrix f(5, 1);
    f << -1, 1, -1, 1, 0;  // class 0: {-1, 1, 0}, class 1: {-1, 1}; both mean 0
    const std::vector<int> y{0, 0, 1, 1, 0};
    const auto model = fit_lda(f, y);
    for (double x : {-3.0, 0.0, 0.7}) {
        const auto p = posterior(model, Vector::Constant(1, x));
        EXPECT_NEAR(p(0), 0.6, 1e-12);
        EXPECT_NEAR(p(1), 0.4, 1e-12);
    }
}

TEST(Lda, FarClustersAreConfident) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 0.1);
    Matrix f(40, 2);
    std::vector<int> y;
    for (int r = 0; r < 40; ++r) {
        const double centre = r < 20 ? -10.0 : 10.0;
        f(r, 0) = centre + n(rng);
        f(r, 1) = n(rng);
        y.push_back(r < 20 ? 3 : 7);
    }
    const auto model = fit_lda(f, y);
    EXPECT_EQ(model.classes, (std::vector<int>{3, 7}));
    for (int r = 0; r < 40; ++r) EXPECT_GE(posterior(model, f.row(r).transpose())(r < 20 ? 0 : 1), 0.99);
    EXPECT_EQ(posterior(model, model.means.row(1).transpose()).maxCoeff(),
              posterior(model, model.means.row(1).transpose())(1));
}

TEST(Lda, MatchesBruteForceDensityRatio) {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix f(13, 2);
    std::vector<int> y;
    for (int r = 0; r < 13; ++r) {
        y.push_back(r < 6 ? 0 : 1);
        f(r, 0) = n(rng) + (r < 6 ? 0.0 : 1.5);
        f(r, 1) = 0.5 * n(rng) + 0.3 * f(r, 0);
    }
    // oracle: class means, pooled covariance / (n - 2), explicit 2x2 inverse
    double mu[2][2] = {{0, 0}, {0, 0}}, cnt[2] = {0, 0};
    for (int r = 0; r < 13; ++r) {
        mu[y[r]][0] += f(r, 0);
        mu[y[r]][1] += f(r, 1);
        cnt[y[r]] += 1;
    }
    for (int k = 0; k < 2; ++k) mu[k][0] /= cnt[k], mu[k][1] /= cnt[k];
    double s00 = 0, s01 = 0, s11 = 0;
    for (int r = 0; r < 13; ++r) {
        const double a = f(r, 0) - mu[y[r]][0], b = f(r, 1) - mu[y[r]][1];
        s00 += a * a, s01 += a * b, s11 += b * b;
    }
    s00 /= 11, s01 /= 11, s11 /= 11;
    const double det = s00 * s11 - s01 * s01;
    auto density = [&](int k, double x0, double x1) {
        const double a = x0 - mu[k][0], b = x1 - mu[k][1];
        const double q = (s11 * a * a - 2 * s01 * a * b + s00 * b * b) / det;
        return std::exp(-0.5 * q) / (2 * M_PI * std::sqrt(det));
    };
    const auto model = fit_lda(f, y, 0.0);
    for (double x0 : {-1.0, 0.2, 0.9, 2.5})
        for (double x1 : {-0.5, 0.4}) {
            const double w0 = cnt[0] / 13 * density(0, x0, x1), w1 = cnt[1] / 13 * density(1, x0, x1);
            Vector x(2);
            x << x0, x1;
            EXPECT_NEAR(posterior(model, x)(0), w0 / (w0 + w1), 1e-10);
        }
}

TEST(Lda, PosteriorsSumToOne) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix f(30, 3);
    std::vector<int> y;
    for (int r = 0; r < 30; ++r) {
        y.push_back(r % 3);
        for (int c = 0; c < 3; ++c) f(r, c) = n(rng) + (r % 3) * (c == 0 ? 1.0 : 0.0);
    }
    const auto model = fit_lda(f, y);
    for (int k = 0; k < 200; ++k) {
        Vector x(3);
        for (int c = 0; c < 3; ++c) x(c) = 5.0 * n(rng);
        const auto p = posterior(model, x);
        EXPECT_NEAR(p.sum(), 1.0, 1e-12);
        EXPECT_GE(p.minCoeff(), 0.0);
    }
}

TEST(Lda, InvariantUnderCommonAffineTransform) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix f(24, 2);
    std::vector<int> y;
    for (int r = 0; r < 24; ++r) {
        y.push_back(r % 3);
        f(r, 0) = n(rng) + (r % 3);
        f(r, 1) = n(rng) - 0.5 * (r % 3);
    }
    Matrix A(2, 2);
    A << 2.0, 0.5, -0.3, 1.5;
    Vector b(2);
    b << 10.0, -4.0;
    const Matrix g = (f * A.transpose()).rowwise() + b.transpose();
    const auto m1 = fit_lda(f, y, 0.0);
    const auto m2 = fit_lda(g, y, 0.0);
    for (int r = 0; r < 24; ++r)
        EXPECT_LT((posterior(m1, f.row(r).transpose()) - posterior(m2, g.row(r).transpose())).cwiseAbs().maxCoeff(),
                  1e-8);
}

TEST(Lda, Errors) {
    Matrix f(3, 1);
    f << 1, 2, 3;
    EXPECT_THROW(fit_lda(f, std::vector<int>{0, 0, 0}), DataError);
    EXPECT_THROW(fit_lda(f, std::vector<int>{0, 0, 1}), DataError);
    Matrix g(4, 2);
    g << 1, 1, 2, 2, 3, 3, 4, 4;  // collinear: singular without ridge
    EXPECT_THROW(fit_lda(g, std::vector<int>{0, 0, 1, 1}, 0.0), DataError);
}

TEST(Auc, PerfectSeparationHandExample) {
    auto visit = [](int label, double a) {
        Vector p(2);
        p << a, 1 - a;
        return ScoredVisit{label, p};
    };
    const std::vector<ScoredVisit> s{visit(0, 0.9), visit(0, 0.8), visit(1, 0.3), visit(1, 0.4)};
    EXPECT_EQ(multiclass_auc(s, 2).overall, 1.0);
}

TEST(Auc, IdenticalScoresGiveOneHalf) {
    std::vector<ScoredVisit> s;
    for (int i = 0; i < 9; ++i) s.push_back({i % 3, Vector::Constant(3, 1.0 / 3.0)});
    const auto r = multiclass_auc(s, 3);
    EXPECT_EQ(r.overall, 0.5);
    for (const auto& p : r.pairs) EXPECT_EQ(p.value, 0.5);
}

TEST(Auc, MatchesPairCountingOracle) {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> size(4, 30);
    for (int trial = 0; trial < 200; ++trial) {
        const int classes = 2 + trial % 2;
        const auto s = random_scored(rng, classes, size(rng), trial % 4 < 2);
        EXPECT_NEAR(multiclass_auc(s, classes).overall, oracle::pair_counting_auc(s, classes), 1e-12);
    }
}

TEST(Auc, InvariantUnderMonotoneTransformOfColumn) {
    std::mt19937_64 rng(5);
    auto s = random_scored(rng, 3, 25, false);
    const double before = multiclass_auc(s, 3).overall;
    for (auto& v : s) v.posteriors(1) = std::exp(3.0 * v.posteriors(1)) - 0.2;
    EXPECT_NEAR(multiclass_auc(s, 3).overall, before, 1e-15);
}

TEST(Auc, PairTermIsSymmetric) {
    std::mt19937_64 rng(7);
    const auto s = random_scored(rng, 2, 20, true);
    auto swapped = s;
    for (auto& v : swapped) {
        v.label = 1 - v.label;
        std::swap(v.posteriors(0), v.posteriors(1));
    }
    EXPECT_NEAR(multiclass_auc(s, 2).pairs[0].value, multiclass_auc(swapped, 2).pairs[0].value, 1e-15);
}

TEST(Auc, EmptyClassIsAnError) {
    std::vector<ScoredVisit> s{{0, Vector::Constant(3, 1.0 / 3)}, {1, Vector::Constant(3, 1.0 / 3)}};
    EXPECT_THROW(multiclass_auc(s, 3), DataError);
}

TEST(Report, LayoutHasOneRowPerBiomarkerAndPair) {
    MetricsReport r{{"a", "b"}, {0.5, std::nullopt}, {"CN", "MCI", "AD"}, {{0, 1, 0.9}, {0, 2, 1.0}, {1, 2, 0.75}}, 0.88};
    std::stringstream out;
    write_report(out, r);
    EXPECT_EQ(out.str(),
              "metric,name,value\nmae,a,0.5\nmae,b,\nauc,CN vs MCI,0.9\nauc,CN vs AD,1\nauc,MCI vs AD,0.75\n"
              "auc,CN vs MCI vs AD,0.88\n");
}
