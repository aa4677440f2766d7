#pragma once

// Similarity kernels over feature vectors, kernel matrices and kernel slopes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvsg/errors.hpp"
#include "cvsg/rng.hpp"

namespace cvsg {

using FeatureVector = Eigen::VectorXd;

enum class KernelKind { cosine, rbf };

inline std::string to_string(KernelKind k) { return k == KernelKind::cosine ? "cosine" : "rbf"; }

inline KernelKind parse_kernel_kind(const std::string& s)
{
    if (s == "cosine") return KernelKind::cosine;
    if (s == "rbf") return KernelKind::rbf;
    throw ContractViolation("unknown kernel kind '" + s + "'");
}

struct KernelSpec {
    KernelKind kind = KernelKind::rbf;
    double bandwidth = 1.0;       // rbf only
    double epsilon_norm = 1e-12;  // cosine zero-norm guard

    void validate() const
    {
        require(epsilon_norm > 0.0, "kernel epsilon_norm must be positive");
        if (kind == KernelKind::rbf)
            require(bandwidth > 0.0 && std::isfinite(bandwidth), "rbf bandwidth must be positive and finite");
    }

    static KernelSpec cosine(double eps = 1e-12) { return {KernelKind::cosine, 1.0, eps}; }
    static KernelSpec rbf(double bandwidth) { return {KernelKind::rbf, bandwidth, 1e-12}; }
};

/// Symmetric n x n similarity matrix with an exact unit diagonal.
struct KernelMatrix {
    Eigen::MatrixXd entries;

    [[nodiscard]] Eigen::Index size() const { return entries.rows(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return entries(i, j); }
};

namespace detail {
inline void check_dims(const FeatureVector& a, const FeatureVector& b)
{
    if (a.size() != b.size())
        throw ContractViolation("feature dimension mismatch: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
}
} // namespace detail

inline double kernel_value(const FeatureVector& a, const FeatureVector& b, const KernelSpec& spec)
{
    detail::check_dims(a, b);
    switch (spec.kind) {
    case KernelKind::cosine: {
        const double na = std::max(a.norm(), spec.epsilon_norm);
        const double nb = std::max(b.norm(), spec.epsilon_norm);
        return a.dot(b) / (na * nb);
    }
    case KernelKind::rbf:
        return std::exp(-(a - b).squaredNorm() / (2.0 * spec.bandwidth * spec.bandwidth));
    }
    return 0.0;
}

/// True when the cosine guard replaced a vector norm.
inline bool kernel_degenerate(const FeatureVector& a, const FeatureVector& b, const KernelSpec& spec)
{
    if (spec.kind != KernelKind::cosine) return false;
    return a.norm() < spec.epsilon_norm || b.norm() < spec.epsilon_norm;
}

/// d k(a, b) / d a.
inline FeatureVector kernel_gradient(const FeatureVector& a, const FeatureVector& b, const KernelSpec& spec)
{
    detail::check_dims(a, b);
    switch (spec.kind) {
    case KernelKind::cosine: {
        const double a_norm = a.norm();
        const double na = std::max(a_norm, spec.epsilon_norm);
        const double nb = std::max(b.norm(), spec.epsilon_norm);
        FeatureVector g = b / (na * nb);
        // below the guard the denominator is constant in a
        if (a_norm >= spec.epsilon_norm) g -= (a.dot(b) / (na * na * na * nb)) * a;
        return g;
    }
    case KernelKind::rbf: {
        const double h2 = spec.bandwidth * spec.bandwidth;
        return -kernel_value(a, b, spec) * (a - b) / h2;
    }
    }
    return FeatureVector::Zero(a.size());
}

inline KernelMatrix build_kernel_matrix(std::span<const FeatureVector> samples, const KernelSpec& spec)
{
    require(!samples.empty(), "build_kernel_matrix: empty sample list");
    spec.validate();
    const auto n = static_cast<Eigen::Index>(samples.size());
    KernelMatrix k{Eigen::MatrixXd(n, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        k.entries(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = kernel_value(samples[i], samples[j], spec);
            k.entries(i, j) = v;
            k.entries(j, i) = v;
        }
    }
    return k;
}

/// Median of all pairwise Euclidean distances; 1.0 when fewer than two samples.
inline double median_pairwise_distance(std::span<const FeatureVector> samples)
{
    std::vector<double> d;
    d.reserve(samples.size() * (samples.size() > 0 ? samples.size() - 1 : 0) / 2);
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t j = i + 1; j < samples.size(); ++j) d.push_back((samples[i] - samples[j]).norm());
    if (d.empty()) return 1.0;
    const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    if (d.size() % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(d.begin(), mid);
    return 0.5 * (lower + upper);
}

/// Map from sample coordinates to the space the kernel sees. Either the
/// identity or a fixed seeded Gaussian lift x -> W x with W of shape d' x d.
class FeatureMap {
public:
    FeatureMap() = default;

    static FeatureMap identity() { return {}; }

    static FeatureMap random_lift(Eigen::Index in_dim, Eigen::Index out_dim, std::uint64_t seed)
    {
        require(in_dim >= 1 && out_dim >= 1, "feature lift dimensions must be positive");
        Rng rng(seed);
        FeatureMap m;
        m.lift_ = Eigen::MatrixXd(out_dim, in_dim);
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(out_dim)));
        for (Eigen::Index r = 0; r < out_dim; ++r)
            for (Eigen::Index c = 0; c < in_dim; ++c) m.lift_(r, c) = normal(rng);
        return m;
    }

    [[nodiscard]] bool is_identity() const { return lift_.size() == 0; }

    [[nodiscard]] FeatureVector apply(const FeatureVector& x) const
    {
        if (is_identity()) return x;
        require(x.size() == lift_.cols(), "feature map input dimension mismatch");
        return lift_ * x;
    }

    /// Pulls a feature-space gradient back to sample coordinates.
    [[nodiscard]] FeatureVector pullback(const FeatureVector& g) const
    {
        if (is_identity()) return g;
        return lift_.transpose() * g;
    }

    [[nodiscard]] std::vector<FeatureVector> apply_all(std::span<const FeatureVector> xs) const
    {
        std::vector<FeatureVector> out;
        out.reserve(xs.size());
        for (const auto& x : xs) out.push_back(apply(x));
        return out;
    }

private:
    Eigen::MatrixXd lift_;
};

} // namespace cvsg
