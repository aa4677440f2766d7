#pragma once

// Synthetic region x object benchmark worlds: a full reference mixture, a
// collapsed/skewed sampler mixture, a labeled reference set and a disjoint
// exemplar pool.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cvsg/diffusion.hpp"
#include "cvsg/errors.hpp"
#include "cvsg/metrics.hpp"
#include "cvsg/rng.hpp"

namespace cvsg {

struct ScenarioSpec {
    std::vector<std::string> regions{"r0", "r1", "r2"};
    std::vector<std::string> objects{"o0", "o1", "o2", "o3"};
    int modes_per_cell = 4;
    int dim = 2;
    double unit = 0.01;       // per-dimension mode standard deviation
    double separation = 6.0;  // mode spacing, in units
    double jitter = 0.1;      // uniform jitter, as a fraction of the spacing
    std::map<Condition, double> collapse;  // retained-mode fraction per cell, default 1
    std::map<int, double> imbalance;       // reference-count multiplier per region, default 1
    double skew = 1.0;                     // sampler weight ratio between consecutive retained modes
    int reference_per_cell = 50;
    int pool_per_cell = 20;
    std::uint64_t seed = 0;

    [[nodiscard]] double collapse_of(const Condition& c) const
    {
        auto it = collapse.find(c);
        return it == collapse.end() ? 1.0 : it->second;
    }
    [[nodiscard]] double imbalance_of(int region) const
    {
        auto it = imbalance.find(region);
        return it == imbalance.end() ? 1.0 : it->second;
    }
    [[nodiscard]] int retained_modes(const Condition& c) const
    {
        return std::max(1, static_cast<int>(std::ceil(collapse_of(c) * modes_per_cell - 1e-9)));
    }
    [[nodiscard]] std::vector<Condition> cells() const
    {
        std::vector<Condition> out;
        for (int r = 0; r < static_cast<int>(regions.size()); ++r)
            for (int o = 0; o < static_cast<int>(objects.size()); ++o) out.push_back({o, r});
        return out;
    }

    void validate() const
    {
        require(!regions.empty() && !objects.empty(), "scenario: need at least one region and one object");
        require(modes_per_cell >= 1, "scenario: modes_per_cell must be at least 1");
        require(dim >= 1, "scenario: dim must be at least 1");
        require(unit > 0.0 && separation > 0.0, "scenario: unit and separation must be positive");
        require(jitter >= 0.0 && jitter < 0.5, "scenario: jitter must lie in [0, 0.5)");
        require(skew >= 1.0, "scenario: skew must be at least 1");
        require(reference_per_cell >= 1 && pool_per_cell >= 0, "scenario: bad per-cell sample counts");
        for (const auto& [c, f] : collapse) {
            require(c.object >= 0 && c.object < static_cast<int>(objects.size()) && c.region >= 0 &&
                        c.region < static_cast<int>(regions.size()),
                    "scenario: collapse entry names an unknown cell");
            require(f > 0.0 && f <= 1.0, "scenario: collapse fraction must lie in (0, 1]");
        }
        for (const auto& [r, m] : imbalance) {
            require(r >= 0 && r < static_cast<int>(regions.size()), "scenario: imbalance names an unknown region");
            require(m > 0.0, "scenario: imbalance multiplier must be positive");
        }
    }
};

/// Default benchmark: 3 regions x 4 objects x 4 modes in 2-D with the last
/// region collapsed to one retained mode per object.
inline ScenarioSpec default_collapse_scenario(std::uint64_t seed = 0)
{
    ScenarioSpec s;
    s.seed = seed;
    for (int o = 0; o < static_cast<int>(s.objects.size()); ++o) s.collapse[{o, 2}] = 0.25;
    return s;
}

/// The collapse scenario with unequal reference counts: r0 doubled, r2 at 40%.
inline ScenarioSpec imbalanced_scenario(std::uint64_t seed = 0)
{
    ScenarioSpec s = default_collapse_scenario(seed);
    s.imbalance[0] = 2.0;
    s.imbalance[2] = 0.4;
    return s;
}

/// Named presets: collapse, imbalanced, matched (no collapse).
inline ScenarioSpec scenario_preset(const std::string& name, std::uint64_t seed = 0)
{
    if (name == "collapse") return default_collapse_scenario(seed);
    if (name == "imbalanced") return imbalanced_scenario(seed);
    if (name == "matched") {
        ScenarioSpec s;
        s.seed = seed;
        return s;
    }
    throw ContractViolation("unknown scenario preset '" + name + "'");
}

struct ScenarioBundle {
    ScenarioSpec spec;
    MixtureWorld reference_world;
    MixtureWorld sampler_world;
    std::vector<int> sampler_source;  // reference component index of each sampler component
    std::vector<LabeledSample> reference_set;
    std::vector<LabeledSample> exemplar_pool;
    std::vector<std::size_t> reference_draw;  // per-cell draw index of each sample
    std::vector<std::size_t> pool_draw;
};

namespace detail {

inline FeatureVector mode_position(const ScenarioSpec& s, const Condition& cell, int mode, Rng& rng)
{
    const double spacing = s.separation * s.unit;
    std::uniform_real_distribution<double> jit(-s.jitter * spacing, s.jitter * spacing);
    FeatureVector p = FeatureVector::Zero(s.dim);
    const auto n_obj = static_cast<double>(s.objects.size());
    const auto n_reg = static_cast<double>(s.regions.size());
    if (s.dim == 1) {
        const double idx = (cell.region * n_obj + cell.object) * s.modes_per_cell + mode;
        const double count = n_obj * n_reg * s.modes_per_cell;
        p[0] = (idx - 0.5 * (count - 1.0)) * spacing + jit(rng);
        return p;
    }
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(s.modes_per_cell))));
    const int rows = (s.modes_per_cell + cols - 1) / cols;
    const double gx = cell.object * cols + mode % cols;
    const double gy = cell.region * rows + mode / cols;
    p[0] = (gx - 0.5 * (n_obj * cols - 1.0)) * spacing;
    p[1] = (gy - 0.5 * (n_reg * rows - 1.0)) * spacing;
    for (Eigen::Index i = 0; i < s.dim; ++i) p[i] += jit(rng);
    return p;
}

} // namespace detail

inline ScenarioBundle build_scenario(const ScenarioSpec& spec)
{
    spec.validate();
    ScenarioBundle b;
    b.spec = spec;
    Rng layout(derive_seed(spec.seed, {1}));
    const auto cells = spec.cells();
    const double cell_weight = 1.0 / static_cast<double>(cells.size());
    const double mode_weight = cell_weight / spec.modes_per_cell;

    std::vector<MixtureComponent> reference;
    std::vector<MixtureComponent> sampler;
    for (const auto& cell : cells) {
        const std::size_t first = reference.size();
        for (int m = 0; m < spec.modes_per_cell; ++m)
            reference.push_back({detail::mode_position(spec, cell, m, layout),
                                 FeatureVector::Constant(spec.dim, spec.unit * spec.unit), mode_weight, cell.object,
                                 cell.region});

        std::vector<std::size_t> order(static_cast<std::size_t>(spec.modes_per_cell));
        std::iota(order.begin(), order.end(), first);
        Rng pick(derive_seed(spec.seed, {2, static_cast<std::uint64_t>(cell.region), static_cast<std::uint64_t>(cell.object)}));
        std::shuffle(order.begin(), order.end(), pick);
        const int keep = spec.retained_modes(cell);
        order.resize(static_cast<std::size_t>(keep));
        std::sort(order.begin(), order.end());
        double total = 0.0;
        std::vector<double> w(order.size());
        for (std::size_t i = 0; i < order.size(); ++i) total += (w[i] = std::pow(spec.skew, -static_cast<double>(i)));
        for (std::size_t i = 0; i < order.size(); ++i) {
            MixtureComponent c = reference[order[i]];
            c.weight = cell_weight * w[i] / total;
            sampler.push_back(c);
            b.sampler_source.push_back(order[i]);
        }
    }
    b.reference_world = MixtureWorld::normalized(std::move(reference));
    b.sampler_world = MixtureWorld::normalized(std::move(sampler));

    for (const auto& cell : cells) {
        Rng draws(derive_seed(spec.seed, {3, static_cast<std::uint64_t>(cell.region), static_cast<std::uint64_t>(cell.object)}));
        const auto n_ref = static_cast<std::size_t>(
            std::max(1L, std::lround(spec.reference_per_cell * spec.imbalance_of(cell.region))));
        const auto n_pool = static_cast<std::size_t>(spec.pool_per_cell);
        for (std::size_t i = 0; i < n_ref + n_pool; ++i) {
            LabeledSample s{b.reference_world.sample(draws, LabelQuery::of(cell)), cell};
            if (i < n_ref) {
                b.reference_set.push_back(std::move(s));
                b.reference_draw.push_back(i);
            } else {
                b.exemplar_pool.push_back(std::move(s));
                b.pool_draw.push_back(i);
            }
        }
    }
    return b;
}

enum class ExemplarStratify { random, per_region };

inline std::string to_string(ExemplarStratify s) { return s == ExemplarStratify::random ? "random" : "per_region"; }

inline ExemplarStratify parse_stratify(const std::string& s)
{
    if (s == "random") return ExemplarStratify::random;
    if (s == "per_region") return ExemplarStratify::per_region;
    throw ContractViolation("unknown exemplar stratification '" + s + "'");
}

/// Seeded draw without replacement from the pool. `random` draws among all of
/// the object's samples regardless of region; `per_region` only from the
/// condition's own cell.
inline std::vector<FeatureVector> pick_exemplars(std::span<const LabeledSample> pool, const Condition& cond, int count,
                                                 ExemplarStratify stratify, std::uint64_t seed)
{
    require(count >= 0, "pick_exemplars: M must be nonnegative");
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& c = pool[i].cond;
        if (c.object == cond.object && (stratify == ExemplarStratify::random || c.region == cond.region))
            eligible.push_back(i);
    }
    require(eligible.size() >= static_cast<std::size_t>(count),
            "pick_exemplars: pool has " + std::to_string(eligible.size()) + " eligible samples, need " +
                std::to_string(count));
    Rng rng(seed);
    std::shuffle(eligible.begin(), eligible.end(), rng);
    std::vector<FeatureVector> out;
    for (int i = 0; i < count; ++i) out.push_back(pool[eligible[static_cast<std::size_t>(i)]].x);
    return out;
}

namespace detail {
inline void write_vector(std::ostream& os, const FeatureVector& v)
{
    for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ";" : "") << v[i];
}
} // namespace detail

/// One record per line: `component ...` and `sample ...` with key=value fields,
/// vectors as `;`-separated reals printed with round-trip precision.
inline void write_bundle(std::ostream& os, const ScenarioBundle& b)
{
    const auto flags = os.flags();
    os << std::setprecision(17);
    const auto& s = b.spec;
    os << "# cvsg scenario bundle v1\n";
    os << "spec seed=" << s.seed << " dim=" << s.dim << " modes_per_cell=" << s.modes_per_cell << " unit=" << s.unit
       << " separation=" << s.separation << " jitter=" << s.jitter << " skew=" << s.skew << "\n";
    for (std::size_t r = 0; r < s.regions.size(); ++r) os << "region id=" << r << " name=" << s.regions[r] << "\n";
    for (std::size_t o = 0; o < s.objects.size(); ++o) os << "object id=" << o << " name=" << s.objects[o] << "\n";
    auto components = [&](const char* world, const MixtureWorld& w) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto& c = w.components()[i];
            os << "component world=" << world << " id=" << i << " object=" << c.object << " region=" << c.region
               << " weight=" << c.weight << " mean=";
            detail::write_vector(os, c.mean);
            os << " cov=";
            detail::write_vector(os, c.cov_diag);
            os << "\n";
        }
    };
    components("reference", b.reference_world);
    components("sampler", b.sampler_world);
    auto samples = [&](const char* set, const std::vector<LabeledSample>& xs, const std::vector<std::size_t>& draw) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            os << "sample set=" << set << " id=" << i << " draw=" << draw[i] << " object=" << xs[i].cond.object
               << " region=" << xs[i].cond.region << " x=";
            detail::write_vector(os, xs[i].x);
            os << "\n";
        }
    };
    samples("reference", b.reference_set, b.reference_draw);
    samples("pool", b.exemplar_pool, b.pool_draw);
    os.flags(flags);
}

inline std::string serialize_bundle(const ScenarioBundle& b)
{
    std::ostringstream os;
    write_bundle(os, b);
    return os.str();
}

namespace detail {
inline std::map<std::string, std::string> parse_fields(std::istringstream& ls)
{
    std::map<std::string, std::string> f;
    std::string tok;
    while (ls >> tok) {
        const auto eq = tok.find('=');
        require(eq != std::string::npos, "bundle: malformed field '" + tok + "'");
        f[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return f;
}

inline FeatureVector parse_vector(const std::string& s)
{
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ';')) v.push_back(std::stod(item));
    return Eigen::Map<FeatureVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}
} // namespace detail

/// The parts of a serialized bundle that oracles consume: both worlds and both sample sets.
struct ParsedBundle {
    std::vector<MixtureComponent> reference_components;
    std::vector<MixtureComponent> sampler_components;
    std::vector<LabeledSample> reference_set;
    std::vector<LabeledSample> exemplar_pool;
};

inline ParsedBundle read_bundle(std::istream& is)
{
    ParsedBundle out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        auto f = detail::parse_fields(ls);
        if (kind == "component") {
            MixtureComponent c{detail::parse_vector(f.at("mean")), detail::parse_vector(f.at("cov")),
                               std::stod(f.at("weight")), std::stoi(f.at("object")), std::stoi(f.at("region"))};
            (f.at("world") == "reference" ? out.reference_components : out.sampler_components).push_back(std::move(c));
        } else if (kind == "sample") {
            LabeledSample s{detail::parse_vector(f.at("x")), {std::stoi(f.at("object")), std::stoi(f.at("region"))}};
            (f.at("set") == "reference" ? out.reference_set : out.exemplar_pool).push_back(std::move(s));
        }
    }
    return out;
}

} // namespace cvsg
