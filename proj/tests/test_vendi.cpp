#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "cvsg/vendi.hpp"
#include "support.hpp"

using namespace cvsg;

namespace {
FeatureVector v2(double a, double b) { return (FeatureVector(2) << a, b).finished(); }

std::vector<FeatureVector> with(const FeatureVector& x, const std::vector<FeatureVector>& others)
{
    std::vector<FeatureVector> all{x};
    all.insert(all.end(), others.begin(), others.end());
    return all;
}

// random points with every pairwise distance in [lo, hi]
std::vector<FeatureVector> spread_points(std::mt19937_64& rng, int n, int d, double lo, double hi)
{
    std::uniform_real_distribution<double> u(-hi / (2 * std::sqrt(double(d))), hi / (2 * std::sqrt(double(d))));
    for (;;) {
        std::vector<FeatureVector> xs;
        for (int i = 0; i < n; ++i) {
            FeatureVector v(d);
            for (int j = 0; j < d; ++j) v[j] = u(rng);
            xs.push_back(v);
        }
        bool ok = true;
        for (int i = 0; i < n && ok; ++i)
            for (int j = i + 1; j < n && ok; ++j) {
                const double r = (xs[std::size_t(i)] - xs[std::size_t(j)]).norm();
                ok = r >= lo && r <= hi;
            }
        if (ok) return xs;
    }
}
} // namespace

TEST(VendiScore, IdenticalSamplesScoreOne)
{
    for (int n : {1, 2, 5, 9}) {
        std::vector<FeatureVector> xs(std::size_t(n), v2(0.3, 0.1));
        EXPECT_NEAR(vendi_score(xs, KernelSpec::rbf(1.0)).score, 1.0, 1e-8);
    }
}

TEST(VendiScore, OrthogonalSamplesScoreN)
{
    for (int n : {2, 4, 7}) {
        std::vector<FeatureVector> xs;
        for (int i = 0; i < n; ++i) xs.push_back(FeatureVector::Unit(n, i));
        EXPECT_NEAR(vendi_score(xs, KernelSpec::cosine()).score, double(n), 1e-8);
    }
}

TEST(VendiScore, HalfSimilarPair)
{
    KernelMatrix k{(Eigen::MatrixXd(2, 2) << 1, 0.5, 0.5, 1).finished()};
    const auto r = vendi_score(k);
    EXPECT_NEAR(r.eigenvalues[0], 0.75, 1e-12);
    EXPECT_NEAR(r.eigenvalues[1], 0.25, 1e-12);
    EXPECT_NEAR(r.entropy, 0.562335, 1e-6);
    EXPECT_NEAR(r.score, 1.754765, 1e-6);
    // hand value and independent eigensolver
    EXPECT_NEAR(r.score, std::exp(-(0.75 * std::log(0.75) + 0.25 * std::log(0.25))), 1e-14);
    auto ev = oracle::jacobi_eigenvalues(k.entries / 2.0);
    std::sort(ev.rbegin(), ev.rend());
    EXPECT_NEAR(ev[0], 0.75, 1e-14);
    EXPECT_NEAR(ev[1], 0.25, 1e-14);
}

TEST(VendiScore, EmptyThrows)
{
    std::vector<FeatureVector> none;
    EXPECT_THROW(vendi_score(none, KernelSpec::rbf(1.0)), ContractViolation);
}

TEST(VendiScore, NonFiniteMatrixReportsNumericalError)
{
    KernelMatrix k{(Eigen::MatrixXd(2, 2) << 1, std::nan(""), std::nan(""), 1).finished()};
    try {
        vendi_score(k);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("finite=no"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("n=2"), std::string::npos);
    }
}

TEST(VendiProperty, SpectrumRangeAndAgreementWithJacobi)
{
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 80; ++trial) {
        const int n = 1 + trial % 10, d = 1 + trial % 4;
        const double h = 0.2 + 0.03 * trial;
        const auto xs = oracle::random_points(rng, n, d, 1.5);
        const auto r = vendi_score(xs, KernelSpec::rbf(h));
        EXPECT_NEAR(r.eigenvalues.sum(), 1.0, 1e-8);
        for (Eigen::Index i = 0; i < r.eigenvalues.size(); ++i) {
            EXPECT_GE(r.eigenvalues[i], -1e-8);
            EXPECT_LE(r.eigenvalues[i], 1.0 + 1e-8);
            if (i) {
                EXPECT_LE(r.eigenvalues[i], r.eigenvalues[i - 1]);
            }
        }
        EXPECT_DOUBLE_EQ(r.score, std::exp(r.entropy));
        EXPECT_GE(r.score, 1.0 - 1e-12);
        EXPECT_LE(r.score, n + 1e-6);
        EXPECT_NEAR(r.score, oracle::vendi(xs, h), 1e-8);
    }
}

TEST(VendiProperty, PermutationInvariant)
{
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto xs = oracle::random_points(rng, 6, 3, 1.0);
        const double a = vendi_score(xs, KernelSpec::rbf(0.7)).score;
        std::shuffle(xs.begin(), xs.end(), rng);
        EXPECT_NEAR(vendi_score(xs, KernelSpec::rbf(0.7)).score, a, 1e-10);
    }
}

TEST(VendiProperty, DuplicationInvariant)
{
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        auto xs = oracle::random_points(rng, 5, 2, 1.0);
        const double a = vendi_score(xs, KernelSpec::rbf(0.5)).score;
        auto doubled = xs;
        doubled.insert(doubled.end(), xs.begin(), xs.end());
        EXPECT_NEAR(vendi_score(doubled, KernelSpec::rbf(0.5)).score, a, 1e-8);
    }
}

TEST(VendiGradientCheck, EmptyOthersIsZero)
{
    std::vector<FeatureVector> none;
    const auto g = vendi_gradient(v2(1, 2), none, KernelSpec::rbf(1.0));
    EXPECT_EQ(g.grad, FeatureVector::Zero(2));
    EXPECT_FALSE(g.degenerate);
}

TEST(VendiGradientCheck, DistantBankPointSaturates)
{
    std::vector<FeatureVector> bank{v2(50, 0)};
    const auto g = vendi_gradient(v2(0, 0), bank, KernelSpec::rbf(1.0));
    EXPECT_FALSE(g.degenerate);
    EXPECT_LT(g.grad.norm(), 1e-100);
}

TEST(VendiGradientCheck, PushesAwayFromBankPoint)
{
    std::vector<FeatureVector> bank{v2(0, 0)};
    const auto spec = KernelSpec::rbf(1.0);
    const auto g = vendi_gradient(v2(1, 0), bank, spec);
    EXPECT_FALSE(g.degenerate);
    EXPECT_GT(g.grad[0], 0.0);
    EXPECT_NEAR(g.grad[1], 0.0, 1e-15);
    const auto fd = oracle::central_difference(
        [&](const oracle::Vec& x) { return vendi_score(with(x, bank), spec).score; }, v2(1, 0));
    EXPECT_LT(oracle::relative_error(g.grad, fd), 1e-4);
}

TEST(VendiGradientCheck, CoincidenceIsFlagged)
{
    std::vector<FeatureVector> bank{v2(0, 0), v2(1, 1)};
    const auto g = vendi_gradient(v2(1, 1 + 1e-8), bank, KernelSpec::rbf(1.0));
    EXPECT_TRUE(g.degenerate);
    EXPECT_TRUE(g.grad.allFinite());
}

TEST(VendiGradientCheck, CosineZeroVectorIsFlagged)
{
    std::vector<FeatureVector> bank{v2(0, 0), v2(0, 1)};
    EXPECT_TRUE(vendi_gradient(v2(1, 0), bank, KernelSpec::cosine()).degenerate);
}

TEST(VendiGradientCheck, DimensionMismatchThrows)
{
    std::vector<FeatureVector> bank{FeatureVector::Zero(3)};
    EXPECT_THROW(vendi_gradient(v2(1, 0), bank, KernelSpec::rbf(1.0)), ContractViolation);
}

TEST(VendiGradientCheck, CacheAgreesWithDirectCall)
{
    std::mt19937_64 rng(2);
    const auto bank = oracle::random_points(rng, 6, 3, 1.0);
    const auto spec = KernelSpec::rbf(0.6);
    KernelCache cache(spec);
    for (const auto& b : bank) cache.append(b);
    EXPECT_EQ(cache.version(), 6u);
    const FeatureVector x = oracle::random_points(rng, 1, 3, 1.0).front();
    EXPECT_EQ(vendi_gradient(x, cache).grad, vendi_gradient(x, bank, spec).grad);
    EXPECT_EQ(cache.matrix(), build_kernel_matrix(bank, spec).entries);
}

TEST(VendiGradientProperty, MatchesFiniteDifferences)
{
    std::mt19937_64 rng(1234);
    int ok = 0, degenerate = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 7, d = 1 + (trial / 7) % 8;
        const auto xs = spread_points(rng, n, d, 0.1, 10.0);
        std::vector<FeatureVector> others(xs.begin() + 1, xs.end());
        const auto spec = trial % 3 == 0 ? KernelSpec::cosine() : KernelSpec::rbf(0.5 + 0.02 * trial);
        const auto g = vendi_gradient(xs[0], others, spec);
        if (g.degenerate) {
            ++degenerate;
            continue;
        }
        const auto fd = oracle::vendi_gradient_fd(xs[0], others, spec.kind == KernelKind::cosine, spec.bandwidth);
        if (fd.norm() < 1e-10 ? g.grad.norm() < 1e-8 : oracle::relative_error(g.grad, fd) <= 1e-4) ++ok;
        else ADD_FAILURE() << "trial " << trial << " rel " << oracle::relative_error(g.grad, fd);
    }
    EXPECT_EQ(ok + degenerate, 200);
    EXPECT_GE(ok, 199);
}

TEST(VendiGradientProperty, RadialDirectionalDerivativeNonNegative)
{
    std::mt19937_64 rng(77);
    const auto spec = KernelSpec::rbf(1.0);
    for (int trial = 0; trial < 50; ++trial) {
        auto bank = oracle::random_points(rng, 5, 2, 0.1);
        FeatureVector centroid = FeatureVector::Zero(2);
        for (const auto& b : bank) centroid += b / 5.0;
        const FeatureVector dir = oracle::random_points(rng, 1, 2, 1.0).front().normalized();
        const FeatureVector x = centroid + 0.5 * dir;
        const auto g = vendi_gradient(x, bank, spec);
        EXPECT_GE(g.grad.dot(g.grad), 0.0);
        EXPECT_GE(g.grad.dot(dir), 0.0) << "trial " << trial;
    }
}
