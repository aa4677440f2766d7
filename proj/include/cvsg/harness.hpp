#pragma once

// Experiment configuration, the method matrix, sweeps, one-region-out
// selection and report files.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cvsg/diffusion.hpp"
#include "cvsg/errors.hpp"
#include "cvsg/guidance.hpp"
#include "cvsg/kernel.hpp"
#include "cvsg/metrics.hpp"
#include "cvsg/scenarios.hpp"
#include "cvsg/vendi.hpp"

namespace cvsg {

enum class Method { baseline, fg_loss, fg_entropy, vsg, cvsg, context_only };

inline std::string to_string(Method m)
{
    switch (m) {
    case Method::baseline: return "baseline";
    case Method::fg_loss: return "fg_loss";
    case Method::fg_entropy: return "fg_entropy";
    case Method::vsg: return "vsg";
    case Method::cvsg: return "cvsg";
    case Method::context_only: return "context_only";
    }
    return "?";
}

inline Method parse_method(const std::string& s)
{
    for (Method m : {Method::baseline, Method::fg_loss, Method::fg_entropy, Method::vsg, Method::cvsg, Method::context_only})
        if (to_string(m) == s) return m;
    throw ContractViolation("unknown method '" + s + "'");
}

struct ScheduleParams {
    int steps = 50;
    double beta_min = 1e-4;
    double beta_max = 0.1;
    double eta = 0.0;

    [[nodiscard]] NoiseSchedule build() const { return make_schedule(steps, beta_min, beta_max, eta); }
};

struct ExperimentConfig {
    ScenarioSpec scenario = default_collapse_scenario();
    ScheduleParams schedule;
    KernelKind kernel_kind = KernelKind::rbf;
    double kernel_bandwidth = 0.0;  // <= 0 selects the median heuristic
    bool feature_lift = false;
    int feature_dim = 8;
    std::uint64_t feature_seed = 0;
    GuidanceConfig guidance;
    Method method = Method::cvsg;
    double fg_weight = 1.0;
    int exemplars = 2;
    ExemplarStratify stratify = ExemplarStratify::per_region;
    bool shared_bank = false;
    std::optional<FeatureVector> seed_sample;  // placed in every bank before generation
    int generations_per_cell = 200;
    int eval_k = 3;
    RegionWeighting weighting = RegionWeighting::unweighted;
    std::vector<std::uint64_t> seeds{0};

    /// Effective (alpha, beta) once the method has been applied.
    [[nodiscard]] std::pair<double, double> effective_weights() const
    {
        switch (method) {
        case Method::vsg: return {guidance.alpha, 0.0};
        case Method::cvsg: return {guidance.alpha, guidance.beta};
        case Method::context_only: return {0.0, guidance.beta};
        default: return {0.0, 0.0};
        }
    }

    void validate() const
    {
        scenario.validate();
        guidance.validate();
        require(generations_per_cell >= 1, "config: generations_per_cell must be positive");
        require(eval_k >= 1, "config: eval_k must be positive");
        require(!seeds.empty(), "config: need at least one seed");
        require(exemplars >= 0, "config: exemplars must be nonnegative");
        if (method == Method::cvsg || method == Method::context_only) {
            require(exemplars >= 1, "config: " + to_string(method) + " needs exemplars >= 1");
            require(guidance.beta > 0.0, "config: " + to_string(method) + " needs beta > 0");
        }
        if (method == Method::fg_loss || method == Method::fg_entropy)
            require(scenario.regions.size() >= 2, "config: feedback guidance needs at least two regions");
        require(fg_weight >= 0.0, "config: fg.weight must be nonnegative");
        if (seed_sample)
            require(seed_sample->size() == scenario.dim && seed_sample->allFinite(),
                    "config: guidance.seed_sample must be a finite point of the scenario dimension");
    }
};

// ---------------------------------------------------------------------------
// flat key=value configuration

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string fmt_double(double v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double to_double(const std::string& key, const std::string& v)
{
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ContractViolation("config: key '" + key + "' expects a number, got '" + v + "'");
}

inline long long to_int(const std::string& key, const std::string& v)
{
    try {
        std::size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used == v.size()) return i;
    } catch (const std::exception&) {
    }
    throw ContractViolation("config: key '" + key + "' expects an integer, got '" + v + "'");
}

inline bool to_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ContractViolation("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline int index_of(const std::vector<std::string>& names, const std::string& name, const char* what)
{
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ContractViolation(std::string("config: unknown ") + what + " '" + name + "'");
    return static_cast<int>(it - names.begin());
}

} // namespace detail

inline KeyValues parse_key_values(std::istream& is)
{
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractViolation("config line " + std::to_string(lineno) + ": expected key=value");
        kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    return kv;
}

inline KeyValues to_key_values(const ExperimentConfig& c)
{
    using detail::fmt_double;
    KeyValues kv;
    const auto& s = c.scenario;
    auto join = [](const std::vector<std::string>& v) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
        return out;
    };
    kv["scenario.regions"] = join(s.regions);
    kv["scenario.objects"] = join(s.objects);
    kv["scenario.modes_per_cell"] = std::to_string(s.modes_per_cell);
    kv["scenario.dim"] = std::to_string(s.dim);
    kv["scenario.unit"] = fmt_double(s.unit);
    kv["scenario.separation"] = fmt_double(s.separation);
    kv["scenario.jitter"] = fmt_double(s.jitter);
    kv["scenario.skew"] = fmt_double(s.skew);
    kv["scenario.reference_per_cell"] = std::to_string(s.reference_per_cell);
    kv["scenario.pool_per_cell"] = std::to_string(s.pool_per_cell);
    kv["scenario.seed"] = std::to_string(s.seed);
    for (const auto& [cell, f] : s.collapse)
        kv["scenario.collapse." + s.objects[static_cast<std::size_t>(cell.object)] + "." +
           s.regions[static_cast<std::size_t>(cell.region)]] = fmt_double(f);
    for (const auto& [r, m] : s.imbalance) kv["scenario.imbalance." + s.regions[static_cast<std::size_t>(r)]] = fmt_double(m);
    kv["schedule.T"] = std::to_string(c.schedule.steps);
    kv["schedule.beta_min"] = fmt_double(c.schedule.beta_min);
    kv["schedule.beta_max"] = fmt_double(c.schedule.beta_max);
    kv["schedule.eta"] = fmt_double(c.schedule.eta);
    kv["kernel.kind"] = to_string(c.kernel_kind);
    kv["kernel.bandwidth"] = fmt_double(c.kernel_bandwidth);
    kv["feature.kind"] = c.feature_lift ? "lift" : "identity";
    kv["feature.dim"] = std::to_string(c.feature_dim);
    kv["feature.seed"] = std::to_string(c.feature_seed);
    kv["guidance.alpha"] = fmt_double(c.guidance.alpha);
    kv["guidance.beta"] = fmt_double(c.guidance.beta);
    kv["guidance.gamma"] = fmt_double(c.guidance.gamma);
    kv["guidance.classifier"] = c.guidance.classifier_guidance ? "true" : "false";
    kv["guidance.gfreq"] = std::to_string(c.guidance.gfreq);
    kv["guidance.phase"] = std::to_string(c.guidance.phase);
    kv["guidance.grad_clip"] = fmt_double(c.guidance.grad_clip);
    kv["guidance.exact_chain"] = c.guidance.exact_chain ? "1" : "0";
    kv["guidance.shared_bank"] = c.shared_bank ? "true" : "false";
    if (c.seed_sample) {
        std::string v;
        for (Eigen::Index i = 0; i < c.seed_sample->size(); ++i) v += (i ? ";" : "") + fmt_double((*c.seed_sample)[i]);
        kv["guidance.seed_sample"] = v;
    }
    kv["exemplars.M"] = std::to_string(c.exemplars);
    kv["exemplars.stratify"] = to_string(c.stratify);
    kv["fg.weight"] = fmt_double(c.fg_weight);
    kv["method"] = to_string(c.method);
    kv["generations_per_cell"] = std::to_string(c.generations_per_cell);
    kv["eval.k"] = std::to_string(c.eval_k);
    kv["eval.weighting"] = c.weighting == RegionWeighting::unweighted ? "unweighted" : "by_real_count";
    std::string seeds;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(c.seeds[i]);
    kv["seeds"] = seeds;
    return kv;
}

/// Applies keys on top of `base`. Unknown keys are errors; `sweep.*` keys are ignored here.
inline ExperimentConfig config_from_key_values(const KeyValues& kv, ExperimentConfig c = {})
{
    using namespace detail;
    auto& s = c.scenario;
    if (auto it = kv.find("scenario.preset"); it != kv.end()) s = scenario_preset(it->second, s.seed);
    // names first: collapse/imbalance keys refer to them
    if (auto it = kv.find("scenario.regions"); it != kv.end()) {
        s.regions = split(it->second, ',');
        s.collapse.clear();
        s.imbalance.clear();
    }
    if (auto it = kv.find("scenario.objects"); it != kv.end()) {
        s.objects = split(it->second, ',');
        s.collapse.clear();
    }
    for (const auto& [key, v] : kv) {
        if (key == "scenario.preset" || key == "scenario.regions" || key == "scenario.objects" || key.rfind("sweep.", 0) == 0)
            continue;
        if (key == "scenario.modes_per_cell") s.modes_per_cell = static_cast<int>(to_int(key, v));
        else if (key == "scenario.dim") s.dim = static_cast<int>(to_int(key, v));
        else if (key == "scenario.unit") s.unit = to_double(key, v);
        else if (key == "scenario.separation") s.separation = to_double(key, v);
        else if (key == "scenario.jitter") s.jitter = to_double(key, v);
        else if (key == "scenario.skew") s.skew = to_double(key, v);
        else if (key == "scenario.reference_per_cell") s.reference_per_cell = static_cast<int>(to_int(key, v));
        else if (key == "scenario.pool_per_cell") s.pool_per_cell = static_cast<int>(to_int(key, v));
        else if (key == "scenario.seed") s.seed = static_cast<std::uint64_t>(to_int(key, v));
        else if (key.rfind("scenario.collapse.", 0) == 0) {
            const auto parts = split(key.substr(18), '.');
            require(parts.size() == 2, "config: collapse key must be scenario.collapse.<object>.<region>");
            s.collapse[{index_of(s.objects, parts[0], "object"), index_of(s.regions, parts[1], "region")}] = to_double(key, v);
        } else if (key.rfind("scenario.imbalance.", 0) == 0)
            s.imbalance[index_of(s.regions, key.substr(19), "region")] = to_double(key, v);
        else if (key == "schedule.T") c.schedule.steps = static_cast<int>(to_int(key, v));
        else if (key == "schedule.beta_min") c.schedule.beta_min = to_double(key, v);
        else if (key == "schedule.beta_max") c.schedule.beta_max = to_double(key, v);
        else if (key == "schedule.eta") c.schedule.eta = to_double(key, v);
        else if (key == "kernel.kind") c.kernel_kind = parse_kernel_kind(v);
        else if (key == "kernel.bandwidth") c.kernel_bandwidth = to_double(key, v);
        else if (key == "feature.kind") {
            require(v == "identity" || v == "lift", "config: feature.kind must be identity or lift");
            c.feature_lift = v == "lift";
        } else if (key == "feature.dim") c.feature_dim = static_cast<int>(to_int(key, v));
        else if (key == "feature.seed") c.feature_seed = static_cast<std::uint64_t>(to_int(key, v));
        else if (key == "guidance.alpha") c.guidance.alpha = to_double(key, v);
        else if (key == "guidance.beta") c.guidance.beta = to_double(key, v);
        else if (key == "guidance.gamma") c.guidance.gamma = to_double(key, v);
        else if (key == "guidance.classifier") c.guidance.classifier_guidance = to_bool(key, v);
        else if (key == "guidance.gfreq") c.guidance.gfreq = static_cast<int>(to_int(key, v));
        else if (key == "guidance.phase") c.guidance.phase = static_cast<int>(to_int(key, v));
        else if (key == "guidance.grad_clip") c.guidance.grad_clip = to_double(key, v);
        else if (key == "guidance.exact_chain") c.guidance.exact_chain = to_bool(key, v);
        else if (key == "guidance.shared_bank") c.shared_bank = to_bool(key, v);
        else if (key == "guidance.seed_sample") {
            std::vector<double> xs;
            for (const auto& tok : split(v, ';')) xs.push_back(to_double(key, tok));
            require(!xs.empty(), "config: guidance.seed_sample needs at least one coordinate");
            c.seed_sample = Eigen::Map<FeatureVector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
        }
        else if (key == "exemplars.M") c.exemplars = static_cast<int>(to_int(key, v));
        else if (key == "exemplars.stratify") c.stratify = parse_stratify(v);
        else if (key == "fg.weight") c.fg_weight = to_double(key, v);
        else if (key == "method") c.method = parse_method(v);
        else if (key == "generations_per_cell") c.generations_per_cell = static_cast<int>(to_int(key, v));
        else if (key == "eval.k") c.eval_k = static_cast<int>(to_int(key, v));
        else if (key == "eval.weighting") {
            require(v == "unweighted" || v == "by_real_count", "config: eval.weighting must be unweighted or by_real_count");
            c.weighting = v == "unweighted" ? RegionWeighting::unweighted : RegionWeighting::by_real_count;
        } else if (key == "seeds") {
            c.seeds.clear();
            for (const auto& tok : split(v, ',')) c.seeds.push_back(static_cast<std::uint64_t>(to_int(key, tok)));
        } else
            throw ContractViolation("config: unknown key '" + key + "'");
    }
    return c;
}

/// FNV-1a over the canonical (sorted key=value) text.
inline std::uint64_t config_hash(const ExperimentConfig& c)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, v] : to_key_values(c))
        for (char ch : k + "=" + v + "\n") {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ULL;
        }
    return h;
}

inline std::string hash_hex(std::uint64_t h)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// ---------------------------------------------------------------------------
// running

struct SeedResult {
    std::uint64_t seed = 0;
    MetricsReport report;
    std::map<int, double> region_vendi;  // mean per-cell Vendi Score of the outputs
    double mean_vendi = 0.0;
};

struct RunDiagnostics {
    std::size_t trajectories = 0;
    std::size_t guided_steps = 0;
    int min_guided_steps = 0;
    int max_guided_steps = 0;
    std::size_t degenerate_fallbacks = 0;
    std::size_t clipped = 0;
    double bandwidth = 0.0;
    double seconds_per_sample = 0.0;
};

struct RunRecord {
    ExperimentConfig config;
    std::string label;  // grid-point description, empty for single runs
    std::uint64_t hash = 0;
    std::vector<SeedResult> seeds;
    MetricsReport aggregate;
    RunDiagnostics diagnostics;
    std::vector<std::string> errors;
    std::vector<LabeledSample> first_seed_generations;
    std::vector<FeatureVector> reference_modes;
};

/// Mean of each metric over seeds per region; average and worst recomputed from those means.
inline MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports,
                                       RegionWeighting weighting = RegionWeighting::unweighted,
                                       const std::map<int, double>& region_weights = {})
{
    MetricsReport agg;
    if (reports.empty()) return agg;
    for (const auto& rep : reports)
        for (const auto& [r, m] : rep.per_region) {
            auto& a = agg.per_region[r];
            a.precision += m.precision;
            a.recall += m.recall;
            a.f1 += m.f1;
            a.consistency += m.consistency;
        }
    const auto n = static_cast<double>(reports.size());
    double wt = 0.0;
    bool first = true;
    for (auto& [r, a] : agg.per_region) {
        a.precision /= n;
        a.recall /= n;
        a.f1 /= n;
        a.consistency /= n;
        double w = 1.0;
        if (weighting == RegionWeighting::by_real_count)
            if (auto it = region_weights.find(r); it != region_weights.end()) w = it->second;
        agg.average.precision += w * a.precision;
        agg.average.recall += w * a.recall;
        agg.average.f1 += w * a.f1;
        agg.average.consistency += w * a.consistency;
        wt += w;
        if (first || a.f1 < agg.worst.f1) {
            agg.worst = a;
            agg.worst_region = r;
            first = false;
        }
    }
    agg.average.precision /= wt;
    agg.average.recall /= wt;
    agg.average.f1 /= wt;
    agg.average.consistency /= wt;
    return agg;
}

/// Within-cell median pairwise distance over the exemplar pool (falls back to
/// the reference set when the pool is empty).
inline double median_heuristic_bandwidth(const ScenarioBundle& b)
{
    const auto& src = b.exemplar_pool.size() >= 2 ? b.exemplar_pool : b.reference_set;
    std::map<Condition, std::vector<FeatureVector>> by_cell;
    for (const auto& s : src) by_cell[s.cond].push_back(s.x);
    std::vector<double> d;
    for (const auto& [cell, xs] : by_cell)
        for (std::size_t i = 0; i < xs.size(); ++i)
            for (std::size_t j = i + 1; j < xs.size(); ++j) d.push_back((xs[i] - xs[j]).norm());
    if (d.empty()) return 1.0;
    std::sort(d.begin(), d.end());
    const std::size_t mid = d.size() / 2;
    return d.size() % 2 ? d[mid] : 0.5 * (d[mid - 1] + d[mid]);
}

inline KernelSpec resolve_kernel(const ExperimentConfig& c, const ScenarioBundle& b)
{
    KernelSpec k;
    k.kind = c.kernel_kind;
    k.bandwidth = c.kernel_bandwidth > 0.0 ? c.kernel_bandwidth : median_heuristic_bandwidth(b);
    k.validate();
    return k;
}

inline FeatureMap resolve_features(const ExperimentConfig& c)
{
    if (!c.feature_lift) return FeatureMap::identity();
    return FeatureMap::random_lift(c.scenario.dim, c.feature_dim, c.feature_seed);
}

/// Generates one seed replica of every cell and evaluates it.
inline SeedResult run_seed(const ExperimentConfig& config, const ScenarioBundle& bundle, std::uint64_t seed,
                           RunRecord& record, bool keep_generations)
{
    const NoiseSchedule sched = config.schedule.build();
    const KernelSpec kspec = resolve_kernel(config, bundle);
    const FeatureMap features = resolve_features(config);
    const auto [alpha, beta] = config.effective_weights();
    GuidanceConfig gcfg = config.guidance;
    gcfg.alpha = alpha;
    gcfg.beta = beta;
    gcfg.generations = config.generations_per_cell;

    EvalSet eval;
    eval.real = bundle.reference_set;
    std::map<int, std::vector<double>> vendi_by_region;
    std::optional<MemoryBank> shared;
    if (config.shared_bank) {
        shared.emplace(kspec, features);
        if (config.seed_sample) shared->append(*config.seed_sample);
    }
    GuidanceDiagnostics diag;

    for (const auto& cell : config.scenario.cells()) {
        const auto r = static_cast<std::uint64_t>(cell.region);
        const auto o = static_cast<std::uint64_t>(cell.object);
        const std::uint64_t stream = derive_seed(seed, {20, r, o});
        std::vector<FeatureVector> outputs;
        try {
            if (config.method == Method::fg_loss || config.method == Method::fg_entropy) {
                outputs = generate_feedback_sequence(
                    cell, config.method == Method::fg_loss ? FeedbackMode::loss : FeedbackMode::entropy, config.fg_weight,
                    config.generations_per_cell, bundle.sampler_world, sched, stream, &bundle.reference_world);
                for (std::size_t i = 0; i < outputs.size(); ++i) diag.guided_steps.push_back(0);
            } else {
                const auto picked = beta > 0.0 ? pick_exemplars(bundle.exemplar_pool, cell, config.exemplars,
                                                                config.stratify, derive_seed(seed, {10, r, o}))
                                               : std::vector<FeatureVector>{};
                const ExemplarSet exemplars(picked, kspec, features);
                MemoryBank local(kspec, features);
                if (config.seed_sample && !shared) local.append(*config.seed_sample);
                MemoryBank& bank = shared ? *shared : local;
                outputs = generate_sequence(cell, bank, exemplars, gcfg, bundle.sampler_world, sched, stream, &diag);
            }
        } catch (const std::exception& e) {
            record.errors.push_back("seed " + std::to_string(seed) + " cell " + bundle.spec.objects[o] + "/" +
                                    bundle.spec.regions[r] + ": " + e.what());
            continue;
        }
        vendi_by_region[cell.region].push_back(vendi_score(features.apply_all(outputs), kspec).score);
        for (auto& x : outputs) {
            if (keep_generations) record.first_seed_generations.push_back({x, cell});
            eval.generated.push_back({std::move(x), cell});
        }
    }

    auto& d = record.diagnostics;
    d.bandwidth = kspec.bandwidth;
    for (int g : diag.guided_steps) {
        d.min_guided_steps = d.trajectories == 0 ? g : std::min(d.min_guided_steps, g);
        d.max_guided_steps = d.trajectories == 0 ? g : std::max(d.max_guided_steps, g);
        d.guided_steps += static_cast<std::size_t>(g);
        ++d.trajectories;
    }
    d.degenerate_fallbacks += diag.degenerate.size();
    d.clipped += diag.clipped;

    SeedResult out;
    out.seed = seed;
    out.report = region_report(eval, bundle.reference_world, config.eval_k, config.weighting);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& [region, vs] : vendi_by_region) {
        double s = 0.0;
        for (double v : vs) s += v;
        out.region_vendi[region] = s / static_cast<double>(vs.size());
        total += s;
        count += vs.size();
    }
    out.mean_vendi = count ? total / static_cast<double>(count) : 0.0;
    return out;
}

inline std::map<int, double> real_counts(const ScenarioBundle& b)
{
    std::map<int, double> w;
    for (const auto& s : b.reference_set) w[s.cond.region] += 1.0;
    return w;
}

inline RunRecord run_experiment(const ExperimentConfig& config, const ScenarioBundle& bundle, std::string label = {})
{
    config.validate();
    RunRecord rec;
    rec.config = config;
    rec.label = std::move(label);
    rec.hash = config_hash(config);
    for (const auto& c : bundle.reference_world.components()) rec.reference_modes.push_back(c.mean);
    const auto start = std::chrono::steady_clock::now();
    std::vector<MetricsReport> reports;
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        try {
            rec.seeds.push_back(run_seed(config, bundle, config.seeds[i], rec, i == 0));
            reports.push_back(rec.seeds.back().report);
        } catch (const std::exception& e) {
            rec.errors.push_back("seed " + std::to_string(config.seeds[i]) + ": " + e.what());
        }
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    const double samples = static_cast<double>(config.seeds.size() * config.scenario.cells().size()) *
                           config.generations_per_cell;
    rec.diagnostics.seconds_per_sample = elapsed.count() / samples;
    rec.aggregate = aggregate_reports(reports, config.weighting, real_counts(bundle));
    return rec;
}

inline RunRecord run_experiment(const ExperimentConfig& config)
{
    config.validate();
    return run_experiment(config, build_scenario(config.scenario));
}

// ---------------------------------------------------------------------------
// sweeps and selection

/// Grid axes by name: alpha, beta, gamma, gfreq, M, fg_weight.
using SweepGrid = std::map<std::string, std::vector<double>>;

inline ExperimentConfig apply_grid_value(ExperimentConfig c, const std::string& axis, double v)
{
    if (axis == "alpha") c.guidance.alpha = v;
    else if (axis == "beta") c.guidance.beta = v;
    else if (axis == "gamma") {
        c.guidance.gamma = v;
        c.guidance.classifier_guidance = true;
    } else if (axis == "gfreq") {
        c.guidance.gfreq = static_cast<int>(v);
        c.guidance.phase = std::min(c.guidance.phase, c.guidance.gfreq - 1);
    } else if (axis == "M") c.exemplars = static_cast<int>(v);
    else if (axis == "fg_weight") c.fg_weight = v;
    else throw ContractViolation("sweep: unknown grid axis '" + axis + "'");
    return c;
}

/// Cartesian product in axis-name order, values in the order given.
inline std::vector<std::pair<std::string, ExperimentConfig>> expand_grid(const ExperimentConfig& base, const SweepGrid& grid)
{
    std::vector<std::pair<std::string, ExperimentConfig>> points;
    if (grid.empty()) return points;
    for (const auto& [axis, values] : grid)
        if (values.empty()) return points;
    points.emplace_back("", base);
    for (const auto& [axis, values] : grid) {
        std::vector<std::pair<std::string, ExperimentConfig>> next;
        for (const auto& [label, cfg] : points)
            for (double v : values)
                next.emplace_back(label + (label.empty() ? "" : ";") + axis + "=" + detail::fmt_double(v),
                                  apply_grid_value(cfg, axis, v));
        points = std::move(next);
    }
    return points;
}

inline std::vector<RunRecord> sweep(const ExperimentConfig& base, const SweepGrid& grid)
{
    std::vector<RunRecord> out;
    const auto points = expand_grid(base, grid);
    if (points.empty()) return out;
    const ScenarioBundle bundle = build_scenario(base.scenario);
    for (const auto& [label, cfg] : points) {
        try {
            out.push_back(run_experiment(cfg, bundle, label));
        } catch (const std::exception& e) {
            RunRecord failed;
            failed.config = cfg;
            failed.label = label;
            failed.hash = config_hash(cfg);
            failed.errors.push_back(e.what());
            out.push_back(std::move(failed));
        }
    }
    return out;
}

/// Minimal view of a record for selection: label plus per-region F1.
struct SelectionEntry {
    std::string label;
    std::map<int, double> region_f1;
};

inline std::vector<SelectionEntry> selection_entries(const std::vector<RunRecord>& records)
{
    std::vector<SelectionEntry> out;
    for (const auto& r : records) {
        SelectionEntry e{r.label.empty() ? hash_hex(r.hash) : r.label, {}};
        for (const auto& [region, m] : r.aggregate.per_region) e.region_f1[region] = m.f1;
        out.push_back(std::move(e));
    }
    return out;
}

/// For each region, the entry with the best mean F1 over every other region.
/// Ties go to the lexicographically smallest label. With a single region the
/// held-out set is empty and that region's own F1 is used.
inline std::map<int, std::string> one_region_out_select(const std::vector<SelectionEntry>& entries)
{
    require(!entries.empty(), "one_region_out_select: no records");
    std::set<int> regions;
    for (const auto& e : entries)
        for (const auto& [r, f] : e.region_f1) regions.insert(r);
    require(!regions.empty(), "one_region_out_select: records carry no regions");
    for (const auto& e : entries)
        for (int r : regions)
            if (!e.region_f1.contains(r))
                throw ContractViolation("one_region_out_select: record '" + e.label + "' lacks region " + std::to_string(r));

    std::map<int, std::string> chosen;
    for (int held : regions) {
        const SelectionEntry* best = nullptr;
        double best_score = 0.0;
        for (const auto& e : entries) {
            double s = 0.0;
            int n = 0;
            for (const auto& [r, f] : e.region_f1)
                if (r != held || regions.size() == 1) {
                    s += f;
                    ++n;
                }
            s /= n;
            if (!best || s > best_score || (s == best_score && e.label < best->label)) {
                best = &e;
                best_score = s;
            }
        }
        chosen[held] = best->label;
    }
    return chosen;
}

inline std::map<int, std::string> one_region_out_select(const std::vector<RunRecord>& records)
{
    return one_region_out_select(selection_entries(records));
}

// ---------------------------------------------------------------------------
// report files

inline constexpr const char* kResultsHeader = "config_hash,config,method,region,seed,precision,recall,f1,consistency,vendi";

struct ResultRow {
    std::string hash;
    std::string config;
    std::string method;
    int region = 0;
    std::uint64_t seed = 0;
    RegionMetrics metrics;
    double vendi = 0.0;
};

inline std::vector<ResultRow> result_rows(const std::vector<RunRecord>& records)
{
    std::vector<ResultRow> rows;
    for (const auto& rec : records)
        for (const auto& s : rec.seeds)
            for (const auto& [region, m] : s.report.per_region) {
                auto v = s.region_vendi.find(region);
                rows.push_back({hash_hex(rec.hash), rec.label.empty() ? "-" : rec.label, to_string(rec.config.method),
                                region, s.seed, m, v == s.region_vendi.end() ? 0.0 : v->second});
            }
    return rows;
}

inline void write_results_table(std::ostream& os, const std::vector<ResultRow>& rows)
{
    using detail::fmt_double;
    os << kResultsHeader << "\n";
    for (const auto& r : rows)
        os << r.hash << "," << r.config << "," << r.method << "," << r.region << "," << r.seed << ","
           << fmt_double(r.metrics.precision) << "," << fmt_double(r.metrics.recall) << "," << fmt_double(r.metrics.f1)
           << "," << fmt_double(r.metrics.consistency) << "," << fmt_double(r.vendi) << "\n";
}

inline std::vector<ResultRow> read_results_table(std::istream& is)
{
    std::string line;
    require(static_cast<bool>(std::getline(is, line)) && detail::trim(line) == kResultsHeader,
            "results table: missing or unexpected header");
    std::vector<ResultRow> rows;
    while (std::getline(is, line)) {
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        require(f.size() == 10, "results table: expected 10 columns in '" + line + "'");
        ResultRow r;
        r.hash = f[0];
        r.config = f[1];
        r.method = f[2];
        r.region = static_cast<int>(detail::to_int("region", f[3]));
        r.seed = static_cast<std::uint64_t>(detail::to_int("seed", f[4]));
        r.metrics = {detail::to_double("precision", f[5]), detail::to_double("recall", f[6]),
                     detail::to_double("f1", f[7]), detail::to_double("consistency", f[8])};
        r.vendi = detail::to_double("vendi", f[9]);
        rows.push_back(std::move(r));
    }
    return rows;
}

/// Groups rows by (config_hash, config, method) in first-appearance order and
/// rebuilds the unweighted per-record aggregate.
struct ParsedRecord {
    std::string hash;
    std::string config;
    std::string method;
    MetricsReport aggregate;
    double mean_vendi = 0.0;
};

inline std::vector<ParsedRecord> aggregate_rows(const std::vector<ResultRow>& rows)
{
    std::vector<ParsedRecord> out;
    std::vector<std::vector<std::pair<std::uint64_t, MetricsReport>>> per;
    std::vector<std::vector<double>> vendi;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const ParsedRecord& p) {
            return p.hash == r.hash && p.config == r.config && p.method == r.method;
        });
        std::size_t idx = static_cast<std::size_t>(it - out.begin());
        if (it == out.end()) {
            out.push_back({r.hash, r.config, r.method, {}, 0.0});
            per.emplace_back();
            vendi.emplace_back();
        }
        auto& seeds = per[idx];
        auto s = std::find_if(seeds.begin(), seeds.end(), [&](const auto& p) { return p.first == r.seed; });
        if (s == seeds.end()) {
            seeds.emplace_back(r.seed, MetricsReport{});
            s = seeds.end() - 1;
        }
        s->second.per_region[r.region] = r.metrics;
        vendi[idx].push_back(r.vendi);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::vector<MetricsReport> reps;
        for (auto& [seed, rep] : per[i]) reps.push_back(rep);
        out[i].aggregate = aggregate_reports(reps);
        double s = 0.0;
        for (double v : vendi[i]) s += v;
        out[i].mean_vendi = vendi[i].empty() ? 0.0 : s / static_cast<double>(vendi[i].size());
    }
    return out;
}

inline void write_summary(std::ostream& os, const std::vector<ParsedRecord>& records,
                          const std::vector<std::string>& region_names = {})
{
    auto name = [&](int r) {
        return r >= 0 && static_cast<std::size_t>(r) < region_names.size() ? region_names[static_cast<std::size_t>(r)]
                                                                            : std::to_string(r);
    };
    os << std::fixed << std::setprecision(3);
    os << "# method config worst_region | F1 avg worst | precision avg worst | recall avg worst | consistency avg worst\n";
    for (const auto& r : records) {
        const auto& a = r.aggregate;
        os << r.method << " " << r.config << " " << name(a.worst_region) << " | " << a.average.f1 << " " << a.worst.f1
           << " | " << a.average.precision << " " << a.worst.precision << " | " << a.average.recall << " "
           << a.worst.recall << " | " << a.average.consistency << " " << a.worst.consistency << "\n";
    }
    os << std::defaultfloat;
}

inline std::filesystem::path ensure_dir(const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    return dir;
}

inline std::ofstream open_out(const std::filesystem::path& p)
{
    std::ofstream os(p);
    if (!os) throw IoError("cannot write " + p.string());
    return os;
}

/// Writes results.csv, summary.txt, per-record scatter data and the
/// alpha-vs-Vendi curve into out_dir; returns the paths written.
inline std::vector<std::filesystem::path> emit_reports(const std::vector<RunRecord>& records,
                                                       const std::filesystem::path& out_dir)
{
    ensure_dir(out_dir);
    std::vector<std::filesystem::path> written;
    const auto rows = result_rows(records);
    {
        const auto p = out_dir / "results.csv";
        auto os = open_out(p);
        write_results_table(os, rows);
        written.push_back(p);
    }
    {
        const auto p = out_dir / "summary.txt";
        auto os = open_out(p);
        std::vector<std::string> names = records.empty() ? std::vector<std::string>{} : records.front().config.scenario.regions;
        write_summary(os, aggregate_rows(rows), names);
        written.push_back(p);
    }
    for (const auto& rec : records) {
        if (rec.first_seed_generations.empty()) continue;
        const auto p = out_dir / ("scatter_" + to_string(rec.config.method) + "_" + hash_hex(rec.hash) + ".dat");
        auto os = open_out(p);
        os << std::setprecision(17) << "# x0 x1 kind object region\n";
        for (const auto& m : rec.reference_modes) os << m[0] << " " << (m.size() > 1 ? m[1] : 0.0) << " mode -1 -1\n";
        for (const auto& s : rec.first_seed_generations)
            os << s.x[0] << " " << (s.x.size() > 1 ? s.x[1] : 0.0) << " generated " << s.cond.object << " "
               << s.cond.region << "\n";
        written.push_back(p);
    }
    {
        const auto p = out_dir / "alpha_vendi.dat";
        auto os = open_out(p);
        os << std::setprecision(17) << "# alpha beta method mean_vendi avg_recall avg_precision\n";
        for (const auto& rec : records) {
            if (rec.seeds.empty()) continue;
            double vs = 0.0;
            for (const auto& s : rec.seeds) vs += s.mean_vendi;
            const auto [alpha, beta] = rec.config.effective_weights();
            os << alpha << " " << beta << " " << to_string(rec.config.method) << " "
               << vs / static_cast<double>(rec.seeds.size()) << " " << rec.aggregate.average.recall << " "
               << rec.aggregate.average.precision << "\n";
        }
        written.push_back(p);
    }
    return written;
}

} // namespace cvsg
