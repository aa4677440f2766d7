#pragma once

// Gaussian-mixture worlds with exact noised scores, the DDIM reverse step,
// the one-shot denoised estimate and classifier guidance.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvsg/errors.hpp"
#include "cvsg/kernel.hpp"
#include "cvsg/rng.hpp"

namespace cvsg {

inline constexpr double kCovarianceFloor = 1e-8;

/// Cumulative signal levels xi_0 = 1 > xi_1 > ... > xi_T > 0 and per-step noise sigma_t.
class NoiseSchedule {
public:
    NoiseSchedule(std::vector<double> xi, std::vector<double> sigma, double eta)
        : xi_(std::move(xi)), sigma_(std::move(sigma)), eta_(eta)
    {
        require(xi_.size() >= 2 && sigma_.size() + 1 == xi_.size(), "schedule: need T+1 signal levels and T noise levels");
        require(xi_[0] == 1.0, "schedule: xi_0 must be 1");
        for (std::size_t t = 1; t < xi_.size(); ++t) {
            require(xi_[t] < xi_[t - 1] && xi_[t] > 0.0, "schedule: xi must be strictly decreasing and positive");
            require(sigma_[t - 1] >= 0.0, "schedule: sigma must be nonnegative");
            if (sigma_[t - 1] * sigma_[t - 1] > 1.0 - xi_[t - 1] + 1e-15)
                throw ScheduleInvariantError("schedule: sigma_t^2 exceeds 1 - xi_{t-1} at t=" + std::to_string(t));
        }
        require(eta_ >= 0.0 && eta_ <= 1.0, "schedule: eta must lie in [0, 1]");
    }

    [[nodiscard]] int steps() const { return static_cast<int>(sigma_.size()); }
    [[nodiscard]] double xi(int t) const { return xi_.at(static_cast<std::size_t>(t)); }
    /// sigma_t for t in [1, T]
    [[nodiscard]] double sigma(int t) const { return sigma_.at(static_cast<std::size_t>(t - 1)); }
    [[nodiscard]] double eta() const { return eta_; }
    [[nodiscard]] const std::vector<double>& xi_levels() const { return xi_; }
    [[nodiscard]] const std::vector<double>& sigmas() const { return sigma_; }

private:
    std::vector<double> xi_;
    std::vector<double> sigma_;
    double eta_;
};

/// Linear beta ladder, xi_t = prod_{s<=t} (1 - beta_s), DDIM sigma scaled by eta.
inline NoiseSchedule make_schedule(int steps, double beta_min, double beta_max, double eta)
{
    require(steps >= 1, "make_schedule: T must be at least 1");
    require(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0, "make_schedule: need 0 < beta_min <= beta_max < 1");
    require(eta >= 0.0 && eta <= 1.0, "make_schedule: eta must lie in [0, 1]");
    std::vector<double> xi(static_cast<std::size_t>(steps) + 1);
    std::vector<double> sigma(static_cast<std::size_t>(steps));
    xi[0] = 1.0;
    for (int s = 1; s <= steps; ++s) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(s - 1) / static_cast<double>(steps - 1);
        const double beta = beta_min + (beta_max - beta_min) * frac;
        xi[static_cast<std::size_t>(s)] = xi[static_cast<std::size_t>(s - 1)] * (1.0 - beta);
    }
    for (int t = 1; t <= steps; ++t) {
        const double prev = xi[static_cast<std::size_t>(t - 1)];
        const double cur = xi[static_cast<std::size_t>(t)];
        sigma[static_cast<std::size_t>(t - 1)] = eta * std::sqrt((1.0 - prev) / (1.0 - cur)) * std::sqrt(1.0 - cur / prev);
    }
    return {std::move(xi), std::move(sigma), eta};
}

struct MixtureComponent {
    FeatureVector mean;
    FeatureVector cov_diag;  // zero entries allowed (point mass); floored in density evaluation
    double weight = 1.0;
    int object = 0;
    int region = 0;
};

struct Condition {
    int object = 0;
    int region = 0;

    friend bool operator==(const Condition&, const Condition&) = default;
    friend auto operator<=>(const Condition&, const Condition&) = default;
};

/// Which components a classifier query selects. Unset fields match anything.
struct LabelQuery {
    std::optional<int> object;
    std::optional<int> region;

    static LabelQuery of(const Condition& c) { return {c.object, c.region}; }
    static LabelQuery region_only(int r) { return {std::nullopt, r}; }
    static LabelQuery object_only(int o) { return {o, std::nullopt}; }

    [[nodiscard]] bool matches(const MixtureComponent& c) const
    {
        return (!object || *object == c.object) && (!region || *region == c.region);
    }
};

class MixtureWorld {
public:
    MixtureWorld() = default;

    explicit MixtureWorld(std::vector<MixtureComponent> components) : components_(std::move(components))
    {
        require(!components_.empty(), "mixture world needs at least one component");
        dim_ = components_.front().mean.size();
        require(dim_ >= 1, "mixture world dimension must be positive");
        double total = 0.0;
        for (const auto& c : components_) {
            require(c.mean.size() == dim_ && c.cov_diag.size() == dim_, "mixture component dimension mismatch");
            require(c.weight > 0.0, "mixture weights must be positive");
            require((c.cov_diag.array() >= 0.0).all() && c.mean.allFinite(), "mixture covariance must be nonnegative");
            total += c.weight;
        }
        require(std::abs(total - 1.0) <= 1e-12, "mixture weights must sum to 1");
    }

    /// Rescales weights to sum to one before validating.
    static MixtureWorld normalized(std::vector<MixtureComponent> components)
    {
        double total = 0.0;
        for (const auto& c : components) total += c.weight;
        for (auto& c : components) c.weight /= total;
        return MixtureWorld(std::move(components));
    }

    [[nodiscard]] Eigen::Index dim() const { return dim_; }
    [[nodiscard]] const std::vector<MixtureComponent>& components() const { return components_; }
    [[nodiscard]] std::size_t size() const { return components_.size(); }

    [[nodiscard]] bool has_match(const LabelQuery& q) const
    {
        return std::any_of(components_.begin(), components_.end(), [&](const auto& c) { return q.matches(c); });
    }

    [[nodiscard]] std::vector<int> regions() const { return distinct([](const auto& c) { return c.region; }); }
    [[nodiscard]] std::vector<int> objects() const { return distinct([](const auto& c) { return c.object; }); }

    /// Draws one clean sample from the components selected by the query.
    [[nodiscard]] FeatureVector sample(Rng& rng, const LabelQuery& q = {}) const
    {
        std::vector<double> w;
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < components_.size(); ++i)
            if (q.matches(components_[i])) {
                w.push_back(components_[i].weight);
                idx.push_back(i);
            }
        require(!idx.empty(), "sample: query matches no component");
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        const auto& c = components_[idx[pick(rng)]];
        return c.mean + c.cov_diag.cwiseSqrt().cwiseProduct(standard_normal(rng, dim_));
    }

private:
    template <class F>
    std::vector<int> distinct(F f) const
    {
        std::vector<int> out;
        for (const auto& c : components_) out.push_back(f(c));
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    std::vector<MixtureComponent> components_;
    Eigen::Index dim_ = 0;
};

/// Per-component log joint densities and scores of the mixture noised to
/// signal level xi: component i becomes N(sqrt(xi) mu_i, xi Sigma_i + (1 - xi) I).
class NoisedMixture {
public:
    NoisedMixture(const MixtureWorld& world, const FeatureVector& x, double xi)
    {
        require(x.size() == world.dim(), "point dimension does not match world dimension");
        const auto& comps = world.components();
        log_joint_.resize(comps.size());
        scores_.reserve(comps.size());
        const double root = std::sqrt(xi);
        for (std::size_t i = 0; i < comps.size(); ++i) {
            const auto& c = comps[i];
            const Eigen::ArrayXd var = (xi * c.cov_diag.array() + (1.0 - xi)).max(kCovarianceFloor);
            const Eigen::ArrayXd diff = x.array() - root * c.mean.array();
            log_joint_[i] = std::log(c.weight) -
                            0.5 * ((diff.square() / var).sum() + var.log().sum() +
                                   static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi));
            scores_.emplace_back((-diff / var).matrix());
            precisions_.emplace_back(var.inverse().matrix());
        }
    }

    /// log sum_{i in q} w_i N_i(x)
    [[nodiscard]] double log_density(const MixtureWorld& world, const LabelQuery& q) const
    {
        const double shift = max_log(world, q);
        double s = 0.0;
        for (std::size_t i = 0; i < log_joint_.size(); ++i)
            if (q.matches(world.components()[i])) s += std::exp(log_joint_[i] - shift);
        return shift + std::log(s);
    }

    /// grad_x log sum_{i in q} w_i N_i(x), via max-shifted responsibilities
    [[nodiscard]] FeatureVector score(const MixtureWorld& world, const LabelQuery& q) const
    {
        const double shift = max_log(world, q);
        FeatureVector g = FeatureVector::Zero(scores_.front().size());
        double total = 0.0;
        for (std::size_t i = 0; i < log_joint_.size(); ++i) {
            if (!q.matches(world.components()[i])) continue;
            const double r = std::exp(log_joint_[i] - shift);
            total += r;
            g += r * scores_[i];
        }
        return g / total;
    }

    /// Hessian of log sum_{i in q} w_i N_i(x): sum_i r_i (s_i s_i^T - P_i) - s s^T
    [[nodiscard]] Eigen::MatrixXd score_jacobian(const MixtureWorld& world, const LabelQuery& q) const
    {
        const double shift = max_log(world, q);
        const auto d = scores_.front().size();
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
        FeatureVector g = FeatureVector::Zero(d);
        double total = 0.0;
        for (std::size_t i = 0; i < log_joint_.size(); ++i) {
            if (!q.matches(world.components()[i])) continue;
            const double r = std::exp(log_joint_[i] - shift);
            total += r;
            g += r * scores_[i];
            h += r * (scores_[i] * scores_[i].transpose());
            h.diagonal() -= r * precisions_[i];
        }
        g /= total;
        return h / total - g * g.transpose();
    }

private:
    [[nodiscard]] double max_log(const MixtureWorld& world, const LabelQuery& q) const
    {
        double m = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t i = 0; i < log_joint_.size(); ++i)
            if (q.matches(world.components()[i])) {
                m = std::max(m, log_joint_[i]);
                any = true;
            }
        require(any, "label query matches no mixture component");
        return m;
    }

    std::vector<double> log_joint_;
    std::vector<FeatureVector> scores_;
    std::vector<FeatureVector> precisions_;
};

namespace detail {
inline void check_step(int t, const NoiseSchedule& sched)
{
    if (t < 1 || t > sched.steps())
        throw ContractViolation("timestep " + std::to_string(t) + " outside [1, " + std::to_string(sched.steps()) + "]");
}
} // namespace detail

/// Exact noise prediction eps = -sqrt(1 - xi_t) grad log p_t(x | cond).
inline FeatureVector analytic_epsilon(const FeatureVector& x, int t, const std::optional<Condition>& cond,
                                      const MixtureWorld& world, const NoiseSchedule& sched)
{
    detail::check_step(t, sched);
    const LabelQuery q = cond ? LabelQuery::of(*cond) : LabelQuery{};
    require(world.has_match(q), "analytic_epsilon: condition matches no component");
    const double xi = sched.xi(t);
    return -std::sqrt(1.0 - xi) * NoisedMixture(world, x, xi).score(world, q);
}

/// log p(query | x_t) under the noised mixture.
inline double classifier_log_prob(const FeatureVector& x, int t, const LabelQuery& query, const MixtureWorld& world,
                                  const NoiseSchedule& sched)
{
    detail::check_step(t, sched);
    require(world.has_match(query), "classifier_log_prob: empty query set");
    const NoisedMixture nm(world, x, sched.xi(t));
    return std::min(0.0, nm.log_density(world, query) - nm.log_density(world, LabelQuery{}));
}

/// grad_x log p(query | x_t): the restricted score minus the full score.
inline FeatureVector classifier_log_prob_gradient(const FeatureVector& x, int t, const LabelQuery& query,
                                                  const MixtureWorld& world, const NoiseSchedule& sched)
{
    detail::check_step(t, sched);
    require(world.has_match(query), "classifier_log_prob_gradient: empty query set");
    const NoisedMixture nm(world, x, sched.xi(t));
    return nm.score(world, query) - nm.score(world, LabelQuery{});
}

/// Unconditional eps shifted by gamma times the classifier score, mapped to eps units.
inline FeatureVector classifier_guidance_epsilon(const FeatureVector& x, int t, const Condition& cond, double gamma,
                                                 const MixtureWorld& world, const NoiseSchedule& sched)
{
    detail::check_step(t, sched);
    const LabelQuery q = LabelQuery::of(cond);
    require(world.has_match(q), "classifier_guidance_epsilon: condition matches no component");
    const double xi = sched.xi(t);
    const NoisedMixture nm(world, x, xi);
    const FeatureVector uncond = nm.score(world, LabelQuery{});
    const FeatureVector eps = -std::sqrt(1.0 - xi) * uncond;
    if (gamma == 0.0) return eps;
    return eps - gamma * std::sqrt(1.0 - xi) * (nm.score(world, q) - uncond);
}

inline FeatureVector ddim_denoise_approx(const FeatureVector& x, int t, const FeatureVector& eps, const NoiseSchedule& sched)
{
    detail::check_step(t, sched);
    const double xi = sched.xi(t);
    return (x - std::sqrt(1.0 - xi) * eps) / std::sqrt(xi);
}

struct SampleState {
    FeatureVector x;
    int t = 0;
    Rng rng;
};

/// One reverse DDIM step x_t -> x_{t-1}. Noise is drawn only when sigma_t > 0.
inline SampleState ddim_step(SampleState state, const FeatureVector& eps, const NoiseSchedule& sched)
{
    require(state.t >= 1, "ddim_step: state already at t = 0");
    const int t = state.t;
    const double xi_prev = sched.xi(t - 1);
    const double sigma = sched.sigma(t);
    double radicand = 1.0 - xi_prev - sigma * sigma;
    if (radicand < 0.0) {
        if (radicand < -1e-12)
            throw ScheduleInvariantError("ddim_step: negative radicand " + std::to_string(radicand) + " at t=" +
                                         std::to_string(t));
        radicand = 0.0;
    }
    const FeatureVector x0 = ddim_denoise_approx(state.x, t, eps, sched);
    FeatureVector next = std::sqrt(xi_prev) * x0 + std::sqrt(radicand) * eps;
    if (sigma > 0.0) next += sigma * standard_normal(state.rng, state.x.size());
    state.x = std::move(next);
    state.t = t - 1;
    return state;
}

/// Runs t = T..1 from x_T drawn out of the stream, asking eps_at(state) for each step.
template <class EpsilonFn>
FeatureVector run_trajectory(Rng rng, Eigen::Index dim, const NoiseSchedule& sched, EpsilonFn&& eps_at)
{
    SampleState state{FeatureVector(), sched.steps(), std::move(rng)};
    state.x = standard_normal(state.rng, dim);
    while (state.t >= 1) {
        const FeatureVector eps = eps_at(static_cast<const SampleState&>(state));
        state = ddim_step(std::move(state), eps, sched);
    }
    return state.x;
}

/// Conditional sampling with the exact conditional eps and no extra guidance.
inline FeatureVector sample_unguided(const Condition& cond, const MixtureWorld& world, const NoiseSchedule& sched,
                                     std::uint64_t seed)
{
    require(world.has_match(LabelQuery::of(cond)), "sample_unguided: condition matches no component");
    return run_trajectory(Rng(seed), world.dim(), sched,
                          [&](const SampleState& s) { return analytic_epsilon(s.x, s.t, cond, world, sched); });
}

/// Index of the component with the smallest Mahalanobis distance (floored covariance).
inline std::size_t nearest_component(const FeatureVector& x, const MixtureWorld& world)
{
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < world.size(); ++i) {
        const auto& c = world.components()[i];
        const double d = ((x - c.mean).array().square() / c.cov_diag.array().max(kCovarianceFloor)).sum();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

} // namespace cvsg
