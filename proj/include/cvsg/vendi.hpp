#pragma once

// Vendi Score: exp of the Shannon entropy of the spectrum of K/n, and its
// analytic gradient with respect to one sample of the set.

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "cvsg/errors.hpp"
#include "cvsg/kernel.hpp"

namespace cvsg {

inline constexpr double kEigenFloor = 1e-10;
inline constexpr double kCoincidenceDistance = 1e-6;

struct VendiResult {
    double score = 1.0;
    Eigen::VectorXd eigenvalues;  // of K/n, descending, clamped to [0, 1]
    double entropy = 0.0;
};

struct VendiGradient {
    FeatureVector grad;
    bool degenerate = false;
};

namespace detail {

struct Spectrum {
    Eigen::VectorXd values;   // ascending, clamped to [0, 1]
    Eigen::MatrixXd vectors;  // columns orthonormal
};

inline Spectrum normalized_spectrum(const Eigen::MatrixXd& k, bool want_vectors)
{
    const auto n = static_cast<double>(k.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    if (k.allFinite()) solver.compute(k / n, want_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (!k.allFinite() || solver.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << "symmetric eigendecomposition failed: n=" << k.rows() << " frobenius=" << k.norm()
            << " max|K-K^T|=" << (k - k.transpose()).cwiseAbs().maxCoeff()
            << " finite=" << (k.allFinite() ? "yes" : "no");
        throw NumericalError(msg.str());
    }
    Spectrum s;
    s.values = solver.eigenvalues().cwiseMax(0.0).cwiseMin(1.0);
    if (want_vectors) s.vectors = solver.eigenvectors();
    return s;
}

inline double spectral_entropy(const Eigen::VectorXd& lambda)
{
    double h = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
        if (lambda[i] > 0.0) h -= lambda[i] * std::log(lambda[i]);
    return h;
}

} // namespace detail

inline VendiResult vendi_score(const KernelMatrix& k)
{
    require(k.size() >= 1, "vendi_score: empty kernel matrix");
    auto spectrum = detail::normalized_spectrum(k.entries, false);
    VendiResult r;
    r.eigenvalues = spectrum.values.reverse();
    r.entropy = detail::spectral_entropy(r.eigenvalues);
    r.score = std::exp(r.entropy);
    return r;
}

inline VendiResult vendi_score(std::span<const FeatureVector> samples, const KernelSpec& spec)
{
    require(!samples.empty(), "vendi_score: empty sample list");
    return vendi_score(build_kernel_matrix(samples, spec));
}

/// Samples plus their kernel matrix, extended one row per append. Each append
/// bumps the version; a given version's matrix is never modified.
class KernelCache {
public:
    explicit KernelCache(KernelSpec spec) : spec_(spec) { spec_.validate(); }

    KernelCache(KernelSpec spec, std::span<const FeatureVector> samples) : KernelCache(spec)
    {
        for (const auto& s : samples) append(s);
    }

    void append(const FeatureVector& x)
    {
        if (!samples_.empty()) detail::check_dims(samples_.front(), x);
        const auto m = static_cast<Eigen::Index>(samples_.size());
        Eigen::MatrixXd grown(m + 1, m + 1);
        grown.topLeftCorner(m, m) = matrix_;
        for (Eigen::Index j = 0; j < m; ++j) {
            const double v = kernel_value(x, samples_[static_cast<std::size_t>(j)], spec_);
            grown(m, j) = v;
            grown(j, m) = v;
        }
        grown(m, m) = 1.0;
        matrix_ = std::move(grown);
        samples_.push_back(x);
        ++version_;
    }

    [[nodiscard]] std::size_t size() const { return samples_.size(); }
    [[nodiscard]] bool empty() const { return samples_.empty(); }
    [[nodiscard]] std::uint64_t version() const { return version_; }
    [[nodiscard]] const KernelSpec& spec() const { return spec_; }
    [[nodiscard]] const std::vector<FeatureVector>& samples() const { return samples_; }
    [[nodiscard]] const Eigen::MatrixXd& matrix() const { return matrix_; }

private:
    KernelSpec spec_;
    std::vector<FeatureVector> samples_;
    Eigen::MatrixXd matrix_;
    std::uint64_t version_ = 0;
};

/// dVS({x} u bank)/dx with the bank held fixed.
///
/// With K/n = V diag(lambda) V^T, first-order perturbation gives
/// dlambda_m/dK_ij = V_im V_jm / n, so dH/dK_ij = -(1/n) sum_m (log lambda_m + 1) V_im V_jm
/// over eigenvalues above the floor. Only the off-diagonal entries of row/column 0
/// depend on x; each appears twice in the symmetric matrix.
inline VendiGradient vendi_gradient(const FeatureVector& x, const KernelCache& bank)
{
    const auto& others = bank.samples();
    VendiGradient out{FeatureVector::Zero(x.size()), false};
    if (others.empty()) return out;
    detail::check_dims(x, others.front());

    const KernelSpec& spec = bank.spec();
    const auto m = static_cast<Eigen::Index>(others.size());
    const Eigen::Index n = m + 1;

    Eigen::MatrixXd k(n, n);
    k(0, 0) = 1.0;
    k.bottomRightCorner(m, m) = bank.matrix();
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& s = others[static_cast<std::size_t>(j)];
        const double v = kernel_value(x, s, spec);
        k(0, j + 1) = v;
        k(j + 1, 0) = v;
        if ((x - s).norm() < kCoincidenceDistance || kernel_degenerate(x, s, spec)) out.degenerate = true;
    }

    const auto spectrum = detail::normalized_spectrum(k, true);
    const auto& lambda = spectrum.values;
    const auto& v = spectrum.vectors;
    const double score = std::exp(detail::spectral_entropy(lambda));

    // eigenvalues at or below the floor are numerically unresolved; their terms are dropped
    Eigen::VectorXd weight(n);
    for (Eigen::Index i = 0; i < n; ++i) weight[i] = lambda[i] > kEigenFloor ? -(std::log(lambda[i]) + 1.0) : 0.0;

    // dH/dK_{0j} for every j
    const Eigen::RowVectorXd dh = (v.row(0).cwiseProduct(weight.transpose()) * v.transpose()) / static_cast<double>(n);
    for (Eigen::Index j = 0; j < m; ++j)
        out.grad += (2.0 * score * dh[j + 1]) * kernel_gradient(x, others[static_cast<std::size_t>(j)], spec);
    if (!out.grad.allFinite()) {
        out.degenerate = true;
        out.grad.setZero();
    }
    return out;
}

inline VendiGradient vendi_gradient(const FeatureVector& x, std::span<const FeatureVector> others, const KernelSpec& spec)
{
    if (others.empty()) return {FeatureVector::Zero(x.size()), false};
    return vendi_gradient(x, KernelCache(spec, others));
}

} // namespace cvsg
