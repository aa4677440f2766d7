#pragma once

// k-NN manifold precision/recall, F1, a posterior-based consistency proxy and
// per-region aggregation with worst-region selection.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cvsg/diffusion.hpp"
#include "cvsg/errors.hpp"
#include "cvsg/kernel.hpp"

namespace cvsg {

struct LabeledSample {
    FeatureVector x;
    Condition cond;
};

struct EvalSet {
    std::vector<LabeledSample> real;
    std::vector<LabeledSample> generated;
};

struct RegionMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double consistency = 0.0;
};

struct MetricsReport {
    std::map<int, RegionMetrics> per_region;
    RegionMetrics average;
    int worst_region = 0;
    RegionMetrics worst;
};

enum class RegionWeighting { unweighted, by_real_count };

/// Distance from each point to its k-th nearest other point.
inline std::vector<double> knn_radii(std::span<const FeatureVector> points, int k)
{
    require(k >= 1, "knn_radii: k must be at least 1");
    require(static_cast<std::size_t>(k) < points.size(),
            "knn_radii: k=" + std::to_string(k) + " needs more than k points, got " + std::to_string(points.size()));
    std::vector<double> radii(points.size());
    std::vector<double> d(points.size() - 1);
    for (std::size_t i = 0; i < points.size(); ++i) {
        std::size_t w = 0;
        for (std::size_t j = 0; j < points.size(); ++j)
            if (j != i) d[w++] = (points[i] - points[j]).norm();
        const auto kth = d.begin() + (k - 1);
        std::nth_element(d.begin(), kth, d.end());
        radii[i] = *kth;
    }
    return radii;
}

/// Fraction of candidates inside at least one ball around a manifold point.
inline double manifold_coverage(std::span<const FeatureVector> candidates, std::span<const FeatureVector> manifold, int k)
{
    require(!candidates.empty() && !manifold.empty(), "precision/recall: empty sample set");
    const auto radii = knn_radii(manifold, k);
    std::size_t inside = 0;
    for (const auto& c : candidates)
        for (std::size_t j = 0; j < manifold.size(); ++j)
            if ((c - manifold[j]).norm() <= radii[j]) {
                ++inside;
                break;
            }
    return static_cast<double>(inside) / static_cast<double>(candidates.size());
}

inline double improved_precision(std::span<const FeatureVector> gen, std::span<const FeatureVector> real, int k)
{
    return manifold_coverage(gen, real, k);
}

inline double improved_recall(std::span<const FeatureVector> gen, std::span<const FeatureVector> real, int k)
{
    return manifold_coverage(real, gen, k);
}

inline double f1_score(double precision, double recall)
{
    const double s = precision + recall;
    return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

/// sorted[floor(q (n - 1))]
inline double lower_percentile(std::vector<double> values, double q)
{
    require(!values.empty(), "percentile of an empty set");
    std::sort(values.begin(), values.end());
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(values.size() - 1)));
    return values[idx];
}

/// p(object | x) under the clean mixture with floored covariances.
inline double object_posterior(const FeatureVector& x, int object, const MixtureWorld& world)
{
    const NoisedMixture nm(world, x, 1.0);
    return std::exp(std::min(0.0, nm.log_density(world, LabelQuery::object_only(object)) -
                                      nm.log_density(world, LabelQuery{})));
}

struct ConsistencyResult {
    double score = 0.0;
    std::vector<int> excluded_objects;  // classes in the world with no samples
};

/// Mean over object classes of the 10th percentile of p(object | x0).
inline ConsistencyResult consistency_score(std::span<const LabeledSample> generated, const MixtureWorld& world)
{
    std::map<int, std::vector<double>> by_object;
    for (const auto& s : generated) by_object[s.cond.object].push_back(object_posterior(s.x, s.cond.object, world));
    require(!by_object.empty(), "consistency_score: no generated samples");
    ConsistencyResult r;
    for (int o : world.objects())
        if (!by_object.contains(o)) r.excluded_objects.push_back(o);
    double total = 0.0;
    for (auto& [object, posts] : by_object) total += lower_percentile(std::move(posts), 0.10);
    r.score = total / static_cast<double>(by_object.size());
    return r;
}

inline MetricsReport region_report(const EvalSet& eval, const MixtureWorld& world, int k,
                                   RegionWeighting weighting = RegionWeighting::unweighted)
{
    std::map<int, std::vector<FeatureVector>> real;
    std::map<int, std::vector<FeatureVector>> gen;
    std::map<int, std::vector<LabeledSample>> gen_labeled;
    for (const auto& s : eval.real) real[s.cond.region].push_back(s.x);
    for (const auto& s : eval.generated) {
        gen[s.cond.region].push_back(s.x);
        gen_labeled[s.cond.region].push_back(s);
    }
    std::set<int> regions;
    for (const auto& [r, v] : real) regions.insert(r);
    for (const auto& [r, v] : gen) regions.insert(r);
    require(!regions.empty(), "region_report: empty evaluation set");
    for (int r : regions) {
        if (!real.contains(r)) throw ContractViolation("region_report: region " + std::to_string(r) + " has no real samples");
        if (!gen.contains(r))
            throw ContractViolation("region_report: region " + std::to_string(r) + " has no generated samples");
    }

    MetricsReport report;
    double weight_total = 0.0;
    bool first = true;
    for (int r : regions) {
        RegionMetrics m;
        m.precision = improved_precision(gen[r], real[r], k);
        m.recall = improved_recall(gen[r], real[r], k);
        m.f1 = f1_score(m.precision, m.recall);
        m.consistency = consistency_score(gen_labeled[r], world).score;
        report.per_region[r] = m;

        const double w = weighting == RegionWeighting::unweighted ? 1.0 : static_cast<double>(real[r].size());
        report.average.precision += w * m.precision;
        report.average.recall += w * m.recall;
        report.average.f1 += w * m.f1;
        report.average.consistency += w * m.consistency;
        weight_total += w;

        // regions iterate in ascending id order, so ties keep the smallest id
        if (first || m.f1 < report.worst.f1) {
            report.worst_region = r;
            report.worst = m;
            first = false;
        }
    }
    report.average.precision /= weight_total;
    report.average.recall /= weight_total;
    report.average.f1 /= weight_total;
    report.average.consistency /= weight_total;
    return report;
}

} // namespace cvsg
