#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "cvsg/scenarios.hpp"

using namespace cvsg;

namespace {
ScenarioSpec small_spec()
{
    ScenarioSpec s;
    s.regions = {"north", "south"};
    s.objects = {"cup", "pot"};
    s.modes_per_cell = 3;
    s.reference_per_cell = 12;
    s.pool_per_cell = 6;
    s.seed = 5;
    return s;
}
} // namespace

TEST(BuildScenario, ComponentCount)
{
    const auto b = build_scenario(small_spec());
    EXPECT_EQ(b.reference_world.size(), 12u);
    EXPECT_EQ(build_scenario(default_collapse_scenario()).reference_world.size(), 48u);
}

TEST(BuildScenario, NoCollapseMeansSameWorld)
{
    const auto b = build_scenario(small_spec());
    ASSERT_EQ(b.sampler_world.size(), b.reference_world.size());
    for (std::size_t i = 0; i < b.sampler_world.size(); ++i) {
        const auto& a = b.sampler_world.components()[i];
        const auto& r = b.reference_world.components()[i];
        EXPECT_EQ(a.mean, r.mean);
        EXPECT_EQ(a.cov_diag, r.cov_diag);
        EXPECT_NEAR(a.weight, r.weight, 1e-15);
        EXPECT_EQ(a.object, r.object);
        EXPECT_EQ(a.region, r.region);
    }
}

TEST(BuildScenario, SamplerIsSubsetWithRenormalizedWeights)
{
    const auto b = build_scenario(default_collapse_scenario(3));
    EXPECT_EQ(b.sampler_world.size(), 8u * 4 + 4u);
    double total = 0;
    for (std::size_t i = 0; i < b.sampler_world.size(); ++i) {
        const auto& c = b.sampler_world.components()[i];
        const auto& src = b.reference_world.components()[static_cast<std::size_t>(b.sampler_source[i])];
        EXPECT_EQ(c.mean, src.mean);
        EXPECT_EQ(c.object, src.object);
        EXPECT_EQ(c.region, src.region);
        total += c.weight;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(BuildScenario, CollapsedCellSamplesStayInRetainedMode)
{
    auto spec = small_spec();
    spec.collapse[{1, 0}] = 1.0 / 3.0;
    const auto b = build_scenario(spec);
    EXPECT_EQ(spec.retained_modes({1, 0}), 1);
    std::size_t retained = 0;
    for (std::size_t i = 0; i < b.sampler_world.size(); ++i)
        if (b.sampler_world.components()[i].object == 1 && b.sampler_world.components()[i].region == 0)
            retained = static_cast<std::size_t>(b.sampler_source[i]);
    const auto sched = make_schedule(50, 1e-4, 0.1, 0.0);
    int hits = 0;
    for (std::uint64_t i = 0; i < 500; ++i)
        hits += nearest_component(sample_unguided({1, 0}, b.sampler_world, sched, derive_seed(2, {i})), b.reference_world) ==
                retained;
    EXPECT_GT(hits, 475);
}

TEST(BuildScenario, RetainedModesUseCeiling)
{
    auto s = default_collapse_scenario();
    EXPECT_EQ(s.retained_modes({0, 2}), 1);
    EXPECT_EQ(s.retained_modes({0, 0}), 4);
    s.collapse[{0, 0}] = 0.3;
    EXPECT_EQ(s.retained_modes({0, 0}), 2);
    s.collapse[{0, 0}] = 0.01;
    EXPECT_EQ(s.retained_modes({0, 0}), 1);
}

TEST(BuildScenario, ImbalanceScalesReferenceCounts)
{
    const auto b = build_scenario(imbalanced_scenario());
    std::map<int, int> n;
    for (const auto& s : b.reference_set) ++n[s.cond.region];
    EXPECT_EQ(n[0], 4 * 100);
    EXPECT_EQ(n[1], 4 * 50);
    EXPECT_EQ(n[2], 4 * 20);
    EXPECT_EQ(b.exemplar_pool.size(), 12u * 20);
}

TEST(BuildScenario, PoolAndReferenceDisjoint)
{
    const auto b = build_scenario(default_collapse_scenario(1));
    std::set<std::tuple<int, int, std::size_t>> ref;
    for (std::size_t i = 0; i < b.reference_set.size(); ++i)
        ref.insert({b.reference_set[i].cond.object, b.reference_set[i].cond.region, b.reference_draw[i]});
    for (std::size_t i = 0; i < b.exemplar_pool.size(); ++i)
        EXPECT_FALSE(ref.contains({b.exemplar_pool[i].cond.object, b.exemplar_pool[i].cond.region, b.pool_draw[i]}));
    for (const auto& p : b.exemplar_pool)
        for (const auto& r : b.reference_set) ASSERT_NE(p.x, r.x);
}

TEST(BuildScenario, RejectsInvalidSpec)
{
    auto s = small_spec();
    s.modes_per_cell = 0;
    EXPECT_THROW(build_scenario(s), ContractViolation);
    s = small_spec();
    s.collapse[{0, 0}] = 0.0;
    EXPECT_THROW(build_scenario(s), ContractViolation);
    s = small_spec();
    s.collapse[{0, 7}] = 0.5;
    EXPECT_THROW(build_scenario(s), ContractViolation);
    s = small_spec();
    s.imbalance[0] = -1;
    EXPECT_THROW(build_scenario(s), ContractViolation);
    s = small_spec();
    s.separation = 0;
    EXPECT_THROW(build_scenario(s), ContractViolation);
    EXPECT_THROW(scenario_preset("nowhere"), ContractViolation);
}

TEST(BuildScenario, OneDimensionalLayout)
{
    auto s = small_spec();
    s.dim = 1;
    const auto b = build_scenario(s);
    EXPECT_EQ(b.reference_world.dim(), 1);
    EXPECT_EQ(b.reference_world.size(), 12u);
}

TEST(Serialization, ReproducibleBytes)
{
    EXPECT_EQ(serialize_bundle(build_scenario(default_collapse_scenario(4))),
              serialize_bundle(build_scenario(default_collapse_scenario(4))));
    EXPECT_NE(serialize_bundle(build_scenario(default_collapse_scenario(4))),
              serialize_bundle(build_scenario(default_collapse_scenario(5))));
}

TEST(Serialization, RoundTrip)
{
    const auto b = build_scenario(default_collapse_scenario(2));
    std::istringstream is(serialize_bundle(b));
    const auto p = read_bundle(is);
    ASSERT_EQ(p.reference_components.size(), b.reference_world.size());
    ASSERT_EQ(p.sampler_components.size(), b.sampler_world.size());
    ASSERT_EQ(p.reference_set.size(), b.reference_set.size());
    ASSERT_EQ(p.exemplar_pool.size(), b.exemplar_pool.size());
    for (std::size_t i = 0; i < p.reference_components.size(); ++i) {
        EXPECT_EQ(p.reference_components[i].mean, b.reference_world.components()[i].mean);
        EXPECT_EQ(p.reference_components[i].weight, b.reference_world.components()[i].weight);
    }
    for (std::size_t i = 0; i < p.sampler_components.size(); ++i)
        EXPECT_EQ(p.sampler_components[i].weight, b.sampler_world.components()[i].weight);
    for (std::size_t i = 0; i < p.reference_set.size(); ++i) {
        EXPECT_EQ(p.reference_set[i].x, b.reference_set[i].x);
        EXPECT_EQ(p.reference_set[i].cond, b.reference_set[i].cond);
    }
    for (std::size_t i = 0; i < p.exemplar_pool.size(); ++i) EXPECT_EQ(p.exemplar_pool[i].x, b.exemplar_pool[i].x);
}

TEST(Serialization, LineFormat)
{
    const auto text = serialize_bundle(build_scenario(small_spec()));
    std::istringstream is(text);
    std::string line;
    std::map<std::string, int> kinds;
    while (std::getline(is, line)) {
        if (line[0] == '#') continue;
        ++kinds[line.substr(0, line.find(' '))];
    }
    EXPECT_EQ(kinds["spec"], 1);
    EXPECT_EQ(kinds["region"], 2);
    EXPECT_EQ(kinds["object"], 2);
    EXPECT_EQ(kinds["component"], 24);
    EXPECT_EQ(kinds["sample"], 4 * 18);
    EXPECT_NE(text.find("region id=1 name=south"), std::string::npos);
}

TEST(PickExemplars, WholePoolInSeededOrder)
{
    const auto b = build_scenario(small_spec());
    std::vector<FeatureVector> cell;
    for (const auto& s : b.exemplar_pool)
        if (s.cond == Condition{1, 0}) cell.push_back(s.x);
    const auto all = pick_exemplars(b.exemplar_pool, {1, 0}, 6, ExemplarStratify::per_region, 3);
    ASSERT_EQ(all.size(), 6u);
    for (const auto& x : cell) EXPECT_NE(std::find(all.begin(), all.end(), x), all.end());
    EXPECT_EQ(all, pick_exemplars(b.exemplar_pool, {1, 0}, 6, ExemplarStratify::per_region, 3));
}

TEST(PickExemplars, StratificationAndSeeds)
{
    const auto b = build_scenario(small_spec());
    const auto per = pick_exemplars(b.exemplar_pool, {0, 1}, 4, ExemplarStratify::per_region, 1);
    for (const auto& x : per) {
        bool found = false;
        for (const auto& s : b.exemplar_pool) found |= s.x == x && s.cond == Condition{0, 1};
        EXPECT_TRUE(found);
    }
    // random draws may cross regions but never objects
    const auto any = pick_exemplars(b.exemplar_pool, {0, 1}, 12, ExemplarStratify::random, 1);
    std::set<int> regions;
    for (const auto& x : any)
        for (const auto& s : b.exemplar_pool)
            if (s.x == x) {
                EXPECT_EQ(s.cond.object, 0);
                regions.insert(s.cond.region);
            }
    EXPECT_EQ(regions.size(), 2u);
    const auto two = pick_exemplars(b.exemplar_pool, {0, 1}, 2, ExemplarStratify::per_region, 1);
    int differ = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        differ += pick_exemplars(b.exemplar_pool, {0, 1}, 2, ExemplarStratify::per_region, seed) != two;
    EXPECT_GT(differ, 10);
}

TEST(PickExemplars, InsufficientPoolThrows)
{
    const auto b = build_scenario(small_spec());
    EXPECT_THROW(pick_exemplars(b.exemplar_pool, {0, 0}, 7, ExemplarStratify::per_region, 0), ContractViolation);
    EXPECT_NO_THROW(pick_exemplars(b.exemplar_pool, {0, 0}, 12, ExemplarStratify::random, 0));
}

TEST(MatchedPreset, HasNoCollapse)
{
    const auto s = scenario_preset("matched", 3);
    EXPECT_TRUE(s.collapse.empty());
    EXPECT_EQ(s.seed, 3u);
    EXPECT_EQ(scenario_preset("collapse").collapse.size(), 4u);
}
