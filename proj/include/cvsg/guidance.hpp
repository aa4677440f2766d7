#pragma once

// Vendi Score guidance with a growing memory bank and a fixed exemplar
// context, the auto-regressive generation loop, and classifier-feedback
// baselines.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvsg/diffusion.hpp"
#include "cvsg/errors.hpp"
#include "cvsg/kernel.hpp"
#include "cvsg/rng.hpp"
#include "cvsg/vendi.hpp"

namespace cvsg {

/// Append-only store of finished generations; keeps their kernel matrix in
/// feature space so guidance only recomputes the row of the new sample.
class MemoryBank {
public:
    explicit MemoryBank(KernelSpec spec, FeatureMap features = FeatureMap::identity())
        : features_(std::move(features)), cache_(spec)
    {
    }

    void append(const FeatureVector& x)
    {
        require(x.allFinite(), "memory bank: sample must be finite");
        if (!samples_.empty()) require(x.size() == samples_.front().size(), "memory bank: dimension mismatch");
        samples_.push_back(x);
        cache_.append(features_.apply(x));
    }

    [[nodiscard]] const std::vector<FeatureVector>& samples() const { return samples_; }
    [[nodiscard]] std::size_t size() const { return samples_.size(); }
    [[nodiscard]] bool empty() const { return samples_.empty(); }
    [[nodiscard]] std::uint64_t version() const { return cache_.version(); }
    [[nodiscard]] const KernelCache& kernel() const { return cache_; }
    [[nodiscard]] const FeatureMap& features() const { return features_; }

private:
    std::vector<FeatureVector> samples_;
    FeatureMap features_;
    KernelCache cache_;
};

/// Fixed real-sample context for one run.
class ExemplarSet {
public:
    ExemplarSet(std::vector<FeatureVector> samples, KernelSpec spec, FeatureMap features = FeatureMap::identity())
        : samples_(std::move(samples)), features_(std::move(features)), cache_(spec)
    {
        for (const auto& s : samples_) cache_.append(features_.apply(s));
    }

    static ExemplarSet none(KernelSpec spec) { return ExemplarSet({}, spec); }

    [[nodiscard]] const std::vector<FeatureVector>& samples() const { return samples_; }
    [[nodiscard]] std::size_t size() const { return samples_.size(); }
    [[nodiscard]] bool empty() const { return samples_.empty(); }
    [[nodiscard]] const KernelCache& kernel() const { return cache_; }
    [[nodiscard]] const FeatureMap& features() const { return features_; }

private:
    std::vector<FeatureVector> samples_;
    FeatureMap features_;
    KernelCache cache_;
};

struct GuidanceConfig {
    double alpha = 1.0;  // memory-bank diversity weight
    double beta = 2.0;   // exemplar contextualization weight
    double gamma = 0.0;  // classifier guidance weight, used when classifier_guidance is set
    bool classifier_guidance = false;
    int gfreq = 5;
    int phase = 0;  // guided when t % gfreq == phase
    int generations = 1;
    double grad_clip = 10.0;  // L2 cap on the added eps term
    bool exact_chain = false;  // differentiate x0hat through the analytic eps

    void validate() const
    {
        require(gfreq >= 1, "guidance: gfreq must be at least 1");
        require(phase >= 0 && phase < gfreq, "guidance: phase must lie in [0, gfreq)");
        require(generations >= 1, "guidance: N must be at least 1");
        require(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, "guidance: weights must be nonnegative");
        require(grad_clip > 0.0, "guidance: grad_clip must be positive");
    }

    [[nodiscard]] bool guided_at(int t) const { return t % gfreq == phase; }
};

struct DegenerateEvent {
    std::size_t sample = 0;
    int t = 0;
};

struct GuidanceDiagnostics {
    std::vector<int> guided_steps;  // one entry per trajectory
    std::vector<DegenerateEvent> degenerate;
    std::size_t clipped = 0;
    std::size_t vendi_calls = 0;

    void merge(const GuidanceDiagnostics& o)
    {
        guided_steps.insert(guided_steps.end(), o.guided_steps.begin(), o.guided_steps.end());
        degenerate.insert(degenerate.end(), o.degenerate.begin(), o.degenerate.end());
        clipped += o.clipped;
        vendi_calls += o.vendi_calls;
    }
};

/// The conditional eps every method starts from.
inline FeatureVector base_epsilon(const FeatureVector& x, int t, const Condition& cond, const GuidanceConfig& cfg,
                                  const MixtureWorld& world, const NoiseSchedule& sched)
{
    if (cfg.classifier_guidance) return classifier_guidance_epsilon(x, t, cond, cfg.gamma, world, sched);
    return analytic_epsilon(x, t, cond, world, sched);
}

namespace detail {

/// Converts a score-space addition at step t to eps units and caps its norm.
inline FeatureVector score_shift_to_epsilon(const FeatureVector& score_shift, double xi, double clip, bool* clipped)
{
    FeatureVector delta = -std::sqrt(1.0 - xi) * score_shift;
    const double norm = delta.norm();
    if (norm > clip) {
        delta *= clip / norm;
        if (clipped) *clipped = true;
    }
    return delta;
}

} // namespace detail

/// eps' = eps_cond - sqrt(1 - xi_t) (alpha grad VS(x0hat, bank) - beta grad VS(x0hat, exemplars)) / sqrt(xi_t)
///
/// x0hat is the one-shot denoised estimate; eps_cond is held constant when
/// chaining through it, so dx0hat/dx_t = I / sqrt(xi_t).
inline FeatureVector cvsg_epsilon(const SampleState& state, const Condition& cond, const MemoryBank& bank,
                                  const ExemplarSet& exemplars, const GuidanceConfig& cfg, const MixtureWorld& world,
                                  const NoiseSchedule& sched, GuidanceDiagnostics* diag = nullptr,
                                  std::size_t sample_index = 0)
{
    FeatureVector eps = base_epsilon(state.x, state.t, cond, cfg, world, sched);
    const bool use_bank = cfg.alpha > 0.0 && !bank.empty();
    const bool use_context = cfg.beta > 0.0;
    if (!use_bank && !use_context) return eps;
    require(!use_context || !exemplars.empty(), "cvsg_epsilon: beta > 0 needs at least one exemplar");

    const double xi = sched.xi(state.t);
    const FeatureVector x0 = ddim_denoise_approx(state.x, state.t, eps, sched);
    FeatureVector shift = FeatureVector::Zero(state.x.size());
    bool degenerate = false;
    if (use_bank) {
        const auto g = vendi_gradient(bank.features().apply(x0), bank.kernel());
        degenerate |= g.degenerate;
        shift += cfg.alpha * bank.features().pullback(g.grad);
        if (diag) ++diag->vendi_calls;
    }
    if (use_context) {
        const auto g = vendi_gradient(exemplars.features().apply(x0), exemplars.kernel());
        degenerate |= g.degenerate;
        shift -= cfg.beta * exemplars.features().pullback(g.grad);
        if (diag) ++diag->vendi_calls;
    }
    if (degenerate) {
        if (diag) diag->degenerate.push_back({sample_index, state.t});
        return eps;
    }
    bool clipped = false;
    if (cfg.exact_chain) {
        const NoisedMixture nm(world, state.x, xi);
        const Eigen::MatrixXd h = nm.score_jacobian(world, LabelQuery::of(cond));
        const Eigen::MatrixXd j = Eigen::MatrixXd::Identity(h.rows(), h.cols()) + (1.0 - xi) * h;
        shift = j.transpose() * shift;
    }
    eps += detail::score_shift_to_epsilon(shift / std::sqrt(xi), xi, cfg.grad_clip, &clipped);
    if (clipped && diag) ++diag->clipped;
    return eps;
}

/// Auto-regressive generation: each finished sample joins the bank before the
/// next one starts. Sample n uses the stream derive_seed(seed, {first_index + n}).
/// While the bank is empty the alpha term contributes nothing.
inline std::vector<FeatureVector> generate_sequence(const Condition& cond, MemoryBank& bank, const ExemplarSet& exemplars,
                                                    const GuidanceConfig& cfg, const MixtureWorld& world,
                                                    const NoiseSchedule& sched, std::uint64_t seed,
                                                    GuidanceDiagnostics* diag = nullptr, std::size_t first_index = 0)
{
    cfg.validate();
    require(world.has_match(LabelQuery::of(cond)), "generate_sequence: condition matches no component");
    std::vector<FeatureVector> out;
    out.reserve(static_cast<std::size_t>(cfg.generations));
    for (int n = 0; n < cfg.generations; ++n) {
        const std::size_t index = first_index + static_cast<std::size_t>(n);
        int guided = 0;
        const FeatureVector x0 = run_trajectory(
            Rng(derive_seed(seed, {index})), world.dim(), sched, [&](const SampleState& s) {
                if (!cfg.guided_at(s.t)) return base_epsilon(s.x, s.t, cond, cfg, world, sched);
                ++guided;
                return cvsg_epsilon(s, cond, bank, exemplars, cfg, world, sched, diag, index);
            });
        if (diag) diag->guided_steps.push_back(guided);
        bank.append(x0);
        out.push_back(x0);
    }
    return out;
}

enum class FeedbackMode { loss, entropy };

/// Shannon entropy of p(region | x_t) over the regions of the world.
inline double region_entropy(const FeatureVector& x, int t, const MixtureWorld& world, const NoiseSchedule& sched)
{
    double h = 0.0;
    for (int r : world.regions()) {
        const double lp = classifier_log_prob(x, t, LabelQuery::region_only(r), world, sched);
        h -= std::exp(lp) * lp;
    }
    return h;
}

/// Gradient of the feedback objective: -log p(region | x_t) or H(p(. | x_t)).
inline FeatureVector feedback_objective_gradient(const FeatureVector& x, int t, const Condition& cond, FeedbackMode mode,
                                                 const MixtureWorld& classifier, const NoiseSchedule& sched)
{
    const auto regions = classifier.regions();
    require(regions.size() >= 2, "feedback guidance needs a world with at least two regions");
    const NoisedMixture nm(classifier, x, sched.xi(t));
    const FeatureVector full = nm.score(classifier, LabelQuery{});
    if (mode == FeedbackMode::loss) return -(nm.score(classifier, LabelQuery::region_only(cond.region)) - full);
    const double log_total = nm.log_density(classifier, LabelQuery{});
    // grad H = -sum_r p_r log p_r grad log p_r, because sum_r grad p_r = 0
    FeatureVector g = FeatureVector::Zero(x.size());
    for (int r : regions) {
        const auto q = LabelQuery::region_only(r);
        const double lp = std::min(0.0, nm.log_density(classifier, q) - log_total);
        const double p = std::exp(lp);
        if (p > 0.0) g -= p * lp * (nm.score(classifier, q) - full);
    }
    return g;
}

/// Conditional eps plus weight times the feedback objective's ascent direction,
/// in eps units. The classifier may differ from the sampling world.
inline FeatureVector feedback_guidance_epsilon(const SampleState& state, const Condition& cond, FeedbackMode mode,
                                               double weight, const MixtureWorld& world, const NoiseSchedule& sched,
                                               const MixtureWorld* classifier = nullptr)
{
    const MixtureWorld& clf = classifier ? *classifier : world;
    require(clf.regions().size() >= 2, "feedback guidance needs a world with at least two regions");
    FeatureVector eps = analytic_epsilon(state.x, state.t, cond, world, sched);
    if (weight == 0.0) return eps;
    const double xi = sched.xi(state.t);
    return eps - std::sqrt(1.0 - xi) * weight * feedback_objective_gradient(state.x, state.t, cond, mode, clf, sched);
}

/// Independent feedback-guided trajectories, seeded like generate_sequence.
inline std::vector<FeatureVector> generate_feedback_sequence(const Condition& cond, FeedbackMode mode, double weight,
                                                             int count, const MixtureWorld& world,
                                                             const NoiseSchedule& sched, std::uint64_t seed,
                                                             const MixtureWorld* classifier = nullptr)
{
    require(count >= 1, "generate_feedback_sequence: count must be positive");
    std::vector<FeatureVector> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int n = 0; n < count; ++n)
        out.push_back(run_trajectory(Rng(derive_seed(seed, {static_cast<std::uint64_t>(n)})), world.dim(), sched,
                                     [&](const SampleState& s) {
                                         return feedback_guidance_epsilon(s, cond, mode, weight, world, sched, classifier);
                                     }));
    return out;
}

} // namespace cvsg
