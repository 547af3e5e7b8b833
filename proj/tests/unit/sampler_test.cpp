// SPDX-License-Identifier: Apache-2.0
#include "csmoe/errors.hpp"
#include "csmoe/rng.hpp"
#include "csmoe/sampler.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

using namespace csmoe;
using namespace csmoe::sampler;
using csmoe::testing::clustered_stratum;
using csmoe::testing::random_subset_mean_distance;

namespace {

/// 2×2 raster over lon [0,2), lat (8,10].
ClassRaster raster(std::vector<std::uint16_t> codes, std::uint16_t nodata = 0)
{
    ClassRaster r;
    r.lat_max = 10.0;
    r.lon_min = 0.0;
    r.dlat = 1.0;
    r.dlon = 1.0;
    r.rows = 2;
    r.cols = 2;
    r.nodata = nodata;
    r.codes = std::move(codes);
    return r;
}

ArchiveEntry box(std::string id, double lon, double lat, double half = 0.1)
{
    return {std::move(id), lon - half, lat - half, lon + half, lat + half};
}

}  // namespace

TEST(Haversine, ReferenceDistances)
{
    EXPECT_EQ(haversine({12.3, -45.6}, {12.3, -45.6}), 0.0);
    EXPECT_NEAR(haversine({0, 0}, {180, 0}), 20015.09, 0.01);
    EXPECT_NEAR(haversine({0, 0}, {180, 0}), std::numbers::pi * kEarthRadiusKm, 1e-9);
    EXPECT_NEAR(haversine({0, 0}, {0, 90}), 10007.54, 0.01);
    EXPECT_EQ(haversine({10, 20}, {-30, 5}), haversine({-30, 5}, {10, 20}));
}

TEST(Lookup, Indexing)
{
    const ClassRaster r = raster({1, 2, 3, 0});
    EXPECT_EQ(lookup(r, 0.5, 9.5), 1);
    EXPECT_EQ(lookup(r, 1.5, 9.5), 2);
    EXPECT_EQ(lookup(r, 0.5, 8.5), 3);
    EXPECT_FALSE(lookup(r, 0.5, 7.5).has_value());   // one cell south
    EXPECT_FALSE(lookup(r, 1.5, 8.5).has_value());   // nodata
    EXPECT_FALSE(lookup(r, -0.5, 9.5).has_value());
    EXPECT_FALSE(lookup(r, 2.5, 9.5).has_value());
    EXPECT_FALSE(lookup(r, 0.5, 10.5).has_value());
}

TEST(Grid, RoundTripAndErrors)
{
    const ClassRaster r = raster({1, 2, 3, 65535}, 7);
    std::stringstream ss;
    write_grid(ss, r);
    const ClassRaster back = read_grid(ss);
    EXPECT_EQ(back.codes, r.codes);
    EXPECT_EQ(back.rows, 2u);
    EXPECT_EQ(back.nodata, 7);
    EXPECT_EQ(back.lat_max, 10.0);

    std::stringstream bytes;
    write_grid(bytes, r);
    const std::string full = bytes.str();
    std::stringstream truncated(full.substr(0, full.size() - 1));
    EXPECT_THROW(read_grid(truncated), FormatError);
    std::stringstream bad_header("{\"rows\": 2}\n");
    EXPECT_THROW(read_grid(bad_header), FormatError);
}

TEST(ArchiveCsv, ParsesAndReportsLine)
{
    std::stringstream ok("id,lon_min,lat_min,lon_max,lat_max\na,0,1,2,3\nb,-1.5,-2,1e-1,4\n");
    const auto entries = read_archive_csv(ok);
    ASSERT_EQ(entries.size(), 2u);
    EXPECT_EQ(entries[1].id, "b");
    EXPECT_EQ(entries[1].lon_min, -1.5);
    EXPECT_EQ(entries[1].center().lon, (-1.5 + 0.1) / 2);

    std::stringstream bad("id,lon_min,lat_min,lon_max,lat_max\na,0,1,2,3\nb,x,1,2,3\n");
    try {
        read_archive_csv(bad);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    std::stringstream inverted("id,lon_min,lat_min,lon_max,lat_max\na,3,1,2,3\n");
    EXPECT_THROW(read_archive_csv(inverted), DataError);
    std::stringstream header("id,lon,lat\n");
    EXPECT_THROW(read_archive_csv(header), DataError);
}

TEST(Descriptors, HandCheckedTuples)
{
    const ClassRaster climate = raster({11, 12, 13, 14});
    const ClassRaster thematic = raster({21, 0, 23, 24});
    const std::vector<ArchiveEntry> archive{box("a", 0.5, 9.5), box("b", 1.5, 8.5), box("c", 0.5, 8.5),
                                            box("d", 1.5, 9.5), box("e", 5.0, 5.0)};
    const auto described = generate_descriptors(archive, climate, thematic);
    ASSERT_EQ(described.size(), 3u);  // d: thematic nodata, e: outside both
    EXPECT_EQ(described[0].entry.id, "a");
    EXPECT_EQ(described[0].climate, 11);
    EXPECT_EQ(described[0].thematic, 21);
    EXPECT_EQ(described[1].entry.id, "b");
    EXPECT_EQ(described[1].climate, 14);
    EXPECT_EQ(described[1].thematic, 24);
    EXPECT_EQ(described[2].climate, 13);
    EXPECT_EQ(described[2].thematic, 23);
}

TEST(Stratify, Partition)
{
    const ClassRaster climate = raster({1, 2, 1, 2}), thematic = raster({5, 5, 6, 6});
    std::vector<ArchiveEntry> archive{box("a", 0.5, 9.5), box("b", 1.5, 9.5), box("c", 0.5, 8.5), box("d", 1.5, 8.5)};
    auto strata = stratify(generate_descriptors(archive, climate, thematic));
    ASSERT_EQ(strata.size(), 4u);
    EXPECT_EQ(strata.begin()->first, (StratumKey{1, 5}));

    Rng rng(3);
    std::vector<ArchiveEntry> many;
    for (int i = 0; i < 300; ++i)
        many.push_back(box("p" + std::to_string(i), rng.uniform(0.2, 1.8), rng.uniform(8.2, 9.8), 0.01));
    const auto described = generate_descriptors(many, climate, thematic);
    EXPECT_EQ(described.size(), 300u);
    std::size_t total = 0;
    for (const auto& [key, members] : stratify(described)) {
        total += members.size();
        for (const auto& m : members)
            EXPECT_EQ((StratumKey{m.climate, m.thematic}), key);
    }
    EXPECT_EQ(total, 300u);
}

TEST(Fitness, EquidistantPoints)
{
    const DistanceTable table({{0, 0}, {90, 0}, {0, 90}});
    const std::vector<std::size_t> all{0, 1, 2};
    const double d = std::numbers::pi / 2 * kEarthRadiusKm;
    EXPECT_NEAR(entropy_dispersion_fitness(table, all), std::log(3.0) + std::log(d), 1e-12);
    EXPECT_NEAR(mean_pairwise_distance(table, all), d, 1e-9);
}

TEST(Fitness, DegenerateCases)
{
    const DistanceTable same({{1, 1}, {1, 1}, {1, 1}});
    const std::vector<std::size_t> all{0, 1, 2};
    EXPECT_EQ(entropy_dispersion_fitness(same, all), kDegenerateFitness);
    const std::vector<std::size_t> one{0};
    EXPECT_EQ(entropy_dispersion_fitness(same, one), kDegenerateFitness);
}

TEST(Fitness, DoublingDistancesAddsLnTwo)
{
    // At ~10 m scale the sphere is flat to well below the tolerance.
    const std::vector<LonLat> base{{0, 0}, {1e-4, 0}, {0, 2e-4}, {3e-4, 1e-4}};
    std::vector<LonLat> doubled;
    for (const auto& p : base)
        doubled.push_back({2 * p.lon, 2 * p.lat});
    const std::vector<std::size_t> all{0, 1, 2, 3};
    const double a = entropy_dispersion_fitness(DistanceTable(base), all);
    const double b = entropy_dispersion_fitness(DistanceTable(doubled), all);
    EXPECT_NEAR(b - a, std::log(2.0), 1e-6);
}

TEST(DistanceTable, CachedAndUncachedAgree)
{
    const auto pts = clustered_stratum(1);
    const DistanceTable cached(pts), uncached(pts, 0);
    for (std::size_t i = 0; i < 500; i += 37)
        for (std::size_t j = 0; j < 500; j += 41)
            EXPECT_EQ(cached(i, j), uncached(i, j));
}

TEST(Ga, MutationRateAndBand)
{
    EXPECT_EQ(mutation_rate(100, 5000), 0.0008);
    EXPECT_EQ(size_band(100), (std::pair<std::size_t, std::size_t>{90, 110}));
    EXPECT_EQ(size_band(15), (std::pair<std::size_t, std::size_t>{14, 16}));
    EXPECT_EQ(size_band(1), (std::pair<std::size_t, std::size_t>{1, 1}));
}

TEST(Ga, RepairKeepsBand)
{
    Rng rng(5);
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t n = 101 + rng.index(900);
        const double density = rng.uniform();
        Chromosome bits(n);
        for (auto& b : bits)
            b = rng.bernoulli(density);
        const std::size_t before = popcount(bits);
        const Chromosome original = bits;
        const std::size_t after = repair(bits, 100, rng.next_u64());
        ASSERT_EQ(after, popcount(bits));
        ASSERT_GE(after, 90u);
        ASSERT_LE(after, 110u);
        if (before > 110)
            ASSERT_EQ(after, 110u);
        else if (before < 90)
            ASSERT_EQ(after, 90u);
        else
            ASSERT_EQ(bits, original);
        for (std::size_t i = 0; i < n; ++i) {
            if (before > 110) {
                ASSERT_LE(bits[i], original[i]);
            }
            if (before < 90) {
                ASSERT_GE(bits[i], original[i]);
            }
        }
    }
}

TEST(Ga, SmallStratumRetainedWhole)
{
    const auto pts = clustered_stratum(2);
    GaConfig cfg;
    cfg.iterations = 5;
    const StratumResult r = evolve_stratum(std::span(pts).first(80), cfg);
    EXPECT_TRUE(r.retained_whole);
    ASSERT_EQ(r.selected.size(), 80u);
    for (std::size_t i = 0; i < 80; ++i)
        EXPECT_EQ(r.selected[i], i);
}

TEST(Ga, ResultSizeInBandAndBestMonotone)
{
    const auto pts = clustered_stratum(3);
    GaConfig cfg;
    cfg.iterations = 60;
    const StratumResult r = evolve_stratum(pts, cfg);
    EXPECT_FALSE(r.retained_whole);
    EXPECT_GE(r.selected.size(), 90u);
    EXPECT_LE(r.selected.size(), 110u);
    EXPECT_TRUE(std::is_sorted(r.selected.begin(), r.selected.end()));
    EXPECT_EQ(std::set<std::size_t>(r.selected.begin(), r.selected.end()).size(), r.selected.size());
    ASSERT_EQ(r.best_history.size(), 61u);
    for (std::size_t g = 1; g < r.best_history.size(); ++g)
        EXPECT_GE(r.best_history[g], r.best_history[g - 1]);
    EXPECT_EQ(r.fitness, r.best_history.back());
    EXPECT_DOUBLE_EQ(r.fitness, entropy_dispersion_fitness(DistanceTable(pts), r.selected));
    EXPECT_EQ(r.mutation_rate, 100.0 / (500.0 * 25.0));
}

TEST(Ga, StagnationLimitStopsEarly)
{
    const auto pts = clustered_stratum(4);
    GaConfig cfg;
    cfg.iterations = 2000;
    cfg.stagnation_limit = 5;
    const StratumResult r = evolve_stratum(pts, cfg);
    EXPECT_LT(r.generations, 2000u);
}

TEST(Ga, BeatsRandomOnClusteredStratum)
{
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto pts = clustered_stratum(100 + seed);
        GaConfig cfg;
        cfg.iterations = 500;
        cfg.population = 10;
        cfg.crossover_rate = 0.5;
        cfg.seed = seed;
        const StratumResult r = evolve_stratum(pts, cfg);
        const DistanceTable table(pts);
        wins += mean_pairwise_distance(table, r.selected) >
                random_subset_mean_distance(table, r.selected.size(), derive_seed(seed, {7}));
    }
    EXPECT_GE(wins, 9);
}

TEST(Ga, PluggableFitness)
{
    const auto pts = clustered_stratum(5);
    GaConfig cfg;
    cfg.iterations = 20;
    // prefer the northernmost points
    const FitnessFn north = [](const DistanceTable& t, std::span<const std::size_t> sel) {
        double s = 0.0;
        for (std::size_t i : sel)
            s += t.points()[i].lat;
        return s;
    };
    const StratumResult r = evolve_stratum(pts, cfg, north);
    EXPECT_EQ(r.selected.size(), 110u);
}

TEST(Ga, ConfigValidationAndJson)
{
    GaConfig cfg;
    cfg.population = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = GaConfig{};
    cfg.crossover_rate = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = GaConfig{};
    cfg.iterations = 77;
    EXPECT_EQ(ga_config_from_json(ga_config_to_json(cfg)).iterations, 77u);
    EXPECT_THROW(ga_config_from_json({{"iterationz", 3}}), ConfigError);
}

namespace {

std::vector<ArchiveEntry> synthetic_archive(std::uint64_t seed, std::size_t n)
{
    Rng rng(seed);
    std::vector<ArchiveEntry> a;
    for (std::size_t i = 0; i < n; ++i)
        a.push_back(box("t" + std::to_string(i), rng.uniform(0.05, 1.95), rng.uniform(8.05, 9.95), 0.01));
    return a;
}

}  // namespace

TEST(SampleArchive, UnionOfStrataAndFullRetention)
{
    const ClassRaster climate = raster({1, 1, 2, 2}), thematic = raster({3, 4, 3, 4});
    const auto archive = synthetic_archive(6, 600);
    GaConfig cfg;
    cfg.target = 100;
    cfg.iterations = 30;
    const SamplingResult r = sample_archive(archive, climate, thematic, cfg, {.baseline = true, .threads = 2});
    EXPECT_EQ(r.report.archive_size, 600u);
    EXPECT_EQ(r.report.described_size, 600u);
    std::size_t sum = 0;
    for (const auto& s : r.report.strata) {
        sum += s.selected;
        EXPECT_EQ(s.retained_whole, s.stratum_size <= 100);
        EXPECT_TRUE(s.baseline_fitness.has_value());
    }
    EXPECT_EQ(sum, r.selection.size());
    EXPECT_EQ(r.report.selected_size, sum);
    std::set<std::string> ids;
    for (const auto& e : r.selection)
        ids.insert(e.described.entry.id);
    EXPECT_EQ(ids.size(), r.selection.size());

    GaConfig big = cfg;
    big.target = 1000;
    const SamplingResult all = sample_archive(archive, climate, thematic, big);
    EXPECT_EQ(all.selection.size(), 600u);
}

TEST(SampleArchive, DeterministicAndThreadInvariant)
{
    const ClassRaster climate = raster({1, 1, 2, 2}), thematic = raster({3, 4, 3, 4});
    const auto archive = synthetic_archive(7, 800);
    GaConfig cfg;
    cfg.iterations = 40;
    cfg.seed = 9;
    auto csv = [&](std::size_t threads) {
        const SamplingResult r = sample_archive(archive, climate, thematic, cfg, {.baseline = true, .threads = threads});
        std::ostringstream os;
        write_selection_csv(os, r.selection);
        return os.str() + report_to_json(r.report).dump();
    };
    const std::string one = csv(1);
    EXPECT_EQ(one, csv(1));
    EXPECT_EQ(one, csv(4));
}
