// SPDX-License-Identifier: Apache-2.0
#include "csmoe/sampler.hpp"

#include "csmoe/errors.hpp"
#include "csmoe/rng.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace csmoe::sampler {

// ---- geometry -------------------------------------------------------------

double haversine(LonLat p, LonLat q) noexcept
{
    constexpr double deg = 3.14159265358979323846 / 180.0;
    const double dlat = (q.lat - p.lat) * deg;
    const double dlon = (q.lon - p.lon) * deg;
    const double s1 = std::sin(dlat / 2.0);
    const double s2 = std::sin(dlon / 2.0);
    double h = s1 * s1 + std::cos(p.lat * deg) * std::cos(q.lat * deg) * s2 * s2;
    h = std::clamp(h, 0.0, 1.0);
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

// ---- rasters --------------------------------------------------------------

void ClassRaster::validate() const
{
    if (!(dlat > 0.0) || !(dlon > 0.0))
        throw FormatError("class raster: cell sizes must be strictly positive");
    if (!std::isfinite(lat_max) || !std::isfinite(lon_min))
        throw FormatError("class raster: non-finite origin");
    if (codes.size() != rows * cols)
        throw FormatError("class raster: " + std::to_string(codes.size()) + " codes for a " + std::to_string(rows) + "×" +
                          std::to_string(cols) + " grid");
}

std::optional<std::uint16_t> lookup(const ClassRaster& raster, double lon, double lat) noexcept
{
    if (!std::isfinite(lon) || !std::isfinite(lat))
        return std::nullopt;
    const double r = std::floor((raster.lat_max - lat) / raster.dlat);
    const double c = std::floor((lon - raster.lon_min) / raster.dlon);
    if (r < 0.0 || c < 0.0 || r >= static_cast<double>(raster.rows) || c >= static_cast<double>(raster.cols))
        return std::nullopt;
    const std::uint16_t code = raster.codes[static_cast<std::size_t>(r) * raster.cols + static_cast<std::size_t>(c)];
    if (code == raster.nodata)
        return std::nullopt;
    return code;
}

void write_grid(std::ostream& os, const ClassRaster& raster)
{
    raster.validate();
    const nlohmann::json header = {{"lat_max", raster.lat_max}, {"lon_min", raster.lon_min}, {"dlat", raster.dlat},
                                   {"dlon", raster.dlon},       {"rows", raster.rows},       {"cols", raster.cols},
                                   {"nodata", raster.nodata}};
    os << header.dump() << '\n';
    for (std::uint16_t code : raster.codes) {
        const char bytes[2] = {static_cast<char>(code & 0xff), static_cast<char>(code >> 8)};
        os.write(bytes, 2);
    }
}

ClassRaster read_grid(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw FormatError("GRID1: missing header line");
    ClassRaster r;
    try {
        const auto h = nlohmann::json::parse(line);
        r.lat_max = h.at("lat_max").get<double>();
        r.lon_min = h.at("lon_min").get<double>();
        r.dlat = h.at("dlat").get<double>();
        r.dlon = h.at("dlon").get<double>();
        r.rows = h.at("rows").get<std::size_t>();
        r.cols = h.at("cols").get<std::size_t>();
        r.nodata = h.at("nodata").get<std::uint16_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("GRID1: bad header: ") + e.what());
    }
    std::vector<unsigned char> raw(r.rows * r.cols * 2);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
        throw FormatError("GRID1: truncated code payload");
    r.codes.resize(r.rows * r.cols);
    for (std::size_t i = 0; i < r.codes.size(); ++i)
        r.codes[i] = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
    r.validate();
    return r;
}

void save_grid(const std::filesystem::path& path, const ClassRaster& raster)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw FormatError("cannot open " + path.string() + " for writing");
    write_grid(os, raster);
}

ClassRaster load_grid(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FormatError("cannot open raster " + path.string());
    try {
        return read_grid(is);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---- archive --------------------------------------------------------------

void ArchiveEntry::validate() const
{
    const auto bad = [&](const std::string& why) { throw DataError("archive entry \"" + id + "\": " + why); };
    if (!(lon_min >= -180.0 && lon_max <= 180.0 && lat_min >= -90.0 && lat_max <= 90.0))
        bad("coordinates outside [-180,180]×[-90,90]");
    if (lon_min > lon_max || lat_min > lat_max)
        bad("bounding box minimum exceeds maximum");
}

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ','))
        out.push_back(trim(field));
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

double parse_double(const std::string& s, std::size_t line_no)
{
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw DataError("archive CSV line " + std::to_string(line_no) + ": \"" + s + "\" is not a number");
    return v;
}

}  // namespace

std::vector<ArchiveEntry> read_archive_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw DataError("archive CSV: empty input");
    const std::vector<std::string> expected{"id", "lon_min", "lat_min", "lon_max", "lat_max"};
    if (split_csv(trim(line)) != expected)
        throw DataError("archive CSV: header must be id,lon_min,lat_min,lon_max,lat_max");
    std::vector<ArchiveEntry> out;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        const auto fields = split_csv(trim(line));
        if (fields.size() != 5)
            throw DataError("archive CSV line " + std::to_string(line_no) + ": expected 5 fields, got " +
                            std::to_string(fields.size()));
        ArchiveEntry e{fields[0], parse_double(fields[1], line_no), parse_double(fields[2], line_no),
                       parse_double(fields[3], line_no), parse_double(fields[4], line_no)};
        e.validate();
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<ArchiveEntry> load_archive_csv(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open archive " + path.string());
    try {
        return read_archive_csv(is);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::vector<DescribedEntry> generate_descriptors(std::span<const ArchiveEntry> archive, const ClassRaster& climate,
                                                 const ClassRaster& thematic)
{
    std::vector<DescribedEntry> out;
    for (const auto& e : archive) {
        const LonLat c = e.center();
        const auto u = lookup(climate, c.lon, c.lat);
        if (!u)
            continue;
        const auto v = lookup(thematic, c.lon, c.lat);
        if (!v)
            continue;
        out.push_back({e, *u, *v});
    }
    return out;
}

std::map<StratumKey, std::vector<DescribedEntry>> stratify(std::span<const DescribedEntry> described)
{
    std::map<StratumKey, std::vector<DescribedEntry>> strata;
    for (const auto& d : described)
        strata[{d.climate, d.thematic}].push_back(d);
    return strata;
}

// ---- fitness --------------------------------------------------------------

DistanceTable::DistanceTable(std::vector<LonLat> points, std::size_t cache_limit) : points_(std::move(points))
{
    const std::size_t n = points_.size();
    if (n <= cache_limit) {
        cache_.assign(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                cache_[i * n + j] = cache_[j * n + i] = haversine(points_[i], points_[j]);
    }
}

double DistanceTable::operator()(std::size_t i, std::size_t j) const noexcept
{
    if (!cache_.empty())
        return cache_[i * points_.size() + j];
    return haversine(points_[i], points_[j]);
}

double entropy_dispersion_fitness(const DistanceTable& table, std::span<const std::size_t> selection)
{
    const std::size_t k = selection.size();
    if (k < 2)
        return kDegenerateFitness;
    double total = 0.0, weighted_log = 0.0;
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b) {
            const double d = table(selection[a], selection[b]);
            if (d > 0.0) {
                total += d;
                weighted_log += d * std::log(d);
            }
        }
    if (!(total > 0.0))
        return kDegenerateFitness;
    const double pairs = static_cast<double>(k) * static_cast<double>(k - 1) / 2.0;
    // H(p) = −Σ (d/D) ln(d/D) = ln D − (Σ d ln d)/D
    const double entropy = std::log(total) - weighted_log / total;
    return entropy + std::log(total / pairs);
}

double mean_pairwise_distance(const DistanceTable& table, std::span<const std::size_t> selection)
{
    const std::size_t k = selection.size();
    if (k < 2)
        return 0.0;
    double total = 0.0;
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b)
            total += table(selection[a], selection[b]);
    return total / (static_cast<double>(k) * static_cast<double>(k - 1) / 2.0);
}

// ---- genetic algorithm ----------------------------------------------------

void GaConfig::validate() const
{
    if (target == 0)
        throw ConfigError("GA config: target must be at least 1");
    if (population < 2)
        throw ConfigError("GA config: population must be at least 2");
    if (!(crossover_rate > 0.0 && crossover_rate <= 1.0))
        throw ConfigError("GA config: crossover rate must lie in (0, 1]");
}

nlohmann::json ga_config_to_json(const GaConfig& c)
{
    return {{"target", c.target},
            {"iterations", c.iterations},
            {"population", c.population},
            {"crossover_rate", c.crossover_rate},
            {"stagnation_limit", c.stagnation_limit},
            {"seed", c.seed}};
}

GaConfig ga_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw ConfigError("GA config must be a JSON object");
    GaConfig c;
    const auto defaults = ga_config_to_json(c);
    for (const auto& [key, value] : j.items())
        if (!defaults.contains(key))
            throw ConfigError("GA config: unknown key \"" + key + "\"");
    try {
        c.target = j.value("target", c.target);
        c.iterations = j.value("iterations", c.iterations);
        c.population = j.value("population", c.population);
        c.crossover_rate = j.value("crossover_rate", c.crossover_rate);
        c.stagnation_limit = j.value("stagnation_limit", c.stagnation_limit);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("GA config: ") + e.what());
    }
    return c;
}

double mutation_rate(std::size_t target, std::size_t stratum_size) noexcept
{
    return static_cast<double>(target) / (static_cast<double>(stratum_size) * 25.0);
}

std::pair<std::size_t, std::size_t> size_band(std::size_t target) noexcept
{
    return {(9 * target + 9) / 10, (11 * target) / 10};
}

std::size_t popcount(const Chromosome& bits) noexcept
{
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

namespace {

/// Picks `count` distinct elements of `pool` uniformly at random.
std::vector<std::size_t> pick(std::vector<std::size_t> pool, std::size_t count, Rng& rng)
{
    count = std::min(count, pool.size());
    for (std::size_t i = 0; i < count; ++i)
        std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
    pool.resize(count);
    return pool;
}

std::vector<std::size_t> selected_indices(const Chromosome& bits)
{
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i])
            idx.push_back(i);
    return idx;
}

struct Individual
{
    Chromosome bits;
    double fitness = kDegenerateFitness;
};

}  // namespace

std::size_t repair(Chromosome& bits, std::size_t target, std::uint64_t seed)
{
    const auto [lo, hi] = size_band(target);
    const std::size_t size = popcount(bits);
    if (size >= lo && size <= hi)
        return size;
    Rng rng(seed);
    std::vector<std::size_t> pool;
    const std::uint8_t wanted = size > hi ? 1 : 0;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i] == wanted)
            pool.push_back(i);
    const std::size_t change = size > hi ? size - hi : lo - size;
    for (std::size_t i : pick(std::move(pool), change, rng))
        bits[i] = wanted ? 0 : 1;
    return popcount(bits);
}

StratumResult evolve_stratum(std::span<const LonLat> points, const GaConfig& cfg, const FitnessFn& fitness)
{
    cfg.validate();
    const std::size_t n = points.size();
    DistanceTable table(std::vector<LonLat>(points.begin(), points.end()));
    StratumResult result;
    result.mutation_rate = mutation_rate(cfg.target, std::max<std::size_t>(n, 1));

    if (n <= cfg.target) {
        result.selected.resize(n);
        std::iota(result.selected.begin(), result.selected.end(), 0);
        result.fitness = fitness(table, result.selected);
        result.retained_whole = true;
        return result;
    }

    const double rm = result.mutation_rate;
    const double log_keep = std::log1p(-std::min(rm, 1.0 - 1e-12));
    const auto evaluate = [&](Individual& ind) { ind.fitness = fitness(table, selected_indices(ind.bits)); };

    std::vector<Individual> population(cfg.population);
    for (std::size_t i = 0; i < cfg.population; ++i) {
        Rng rng(derive_seed(cfg.seed, {0, i}));
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        population[i].bits.assign(n, 0);
        for (std::size_t j : pick(std::move(all), cfg.target, rng))
            population[i].bits[j] = 1;
        evaluate(population[i]);
    }
    const auto best_of = [](const std::vector<Individual>& pop) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < pop.size(); ++i)
            if (pop[i].fitness > pop[best].fitness)
                best = i;
        return best;
    };

    Individual best = population[best_of(population)];
    result.best_history.push_back(best.fitness);
    std::size_t stagnant = 0;

    for (std::size_t gen = 1; gen <= cfg.iterations; ++gen) {
        std::vector<Individual> next;
        next.reserve(cfg.population);
        next.push_back(population[best_of(population)]);
        for (std::size_t c = 1; c < cfg.population; ++c) {
            Rng rng(derive_seed(cfg.seed, {1, gen, c}));
            const auto tournament = [&]() -> const Individual& {
                const Individual& a = population[rng.index(population.size())];
                const Individual& b = population[rng.index(population.size())];
                return b.fitness > a.fitness ? b : a;
            };
            const Individual& p1 = tournament();
            const Individual& p2 = tournament();

            Individual child;
            child.bits = p1.bits;
            for (std::size_t g = 0; g < n; ++g)
                if (p1.bits[g] != p2.bits[g] && rng.bernoulli(cfg.crossover_rate))
                    child.bits[g] = p2.bits[g];

            // Bit-flip mutation with geometric gaps between flipped positions.
            for (std::size_t pos = 0;;) {
                double u = rng.uniform();
                while (u <= 0.0)
                    u = rng.uniform();
                const double gap = std::floor(std::log(u) / log_keep);
                if (!(gap < static_cast<double>(n - pos)))
                    break;
                pos += static_cast<std::size_t>(gap);
                child.bits[pos] ^= 1;
                if (++pos >= n)
                    break;
            }

            repair(child.bits, cfg.target, derive_seed(cfg.seed, {2, gen, c}));
            evaluate(child);
            next.push_back(std::move(child));
        }
        population = std::move(next);
        result.generations = gen;

        const Individual& gen_best = population[best_of(population)];
        if (gen_best.fitness > best.fitness) {
            best = gen_best;
            stagnant = 0;
        } else {
            ++stagnant;
        }
        result.best_history.push_back(best.fitness);
        if (cfg.stagnation_limit > 0 && stagnant >= cfg.stagnation_limit)
            break;
    }

    result.selected = selected_indices(best.bits);
    result.fitness = best.fitness;
    return result;
}

// ---- end-to-end -----------------------------------------------------------

nlohmann::json report_to_json(const SamplingReport& r)
{
    const auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json strata = nlohmann::json::array();
    for (const auto& s : r.strata) {
        nlohmann::json j = {{"u", s.key.first},
                            {"v", s.key.second},
                            {"stratum_size", s.stratum_size},
                            {"selected", s.selected},
                            {"retained_whole", s.retained_whole},
                            {"fitness", num(s.fitness)},
                            {"mean_distance_km", s.mean_distance_km},
                            {"generations", s.generations},
                            {"mutation_rate", s.mutation_rate}};
        if (s.baseline_fitness)
            j["baseline_fitness"] = num(*s.baseline_fitness);
        if (s.baseline_mean_distance_km)
            j["baseline_mean_distance_km"] = *s.baseline_mean_distance_km;
        strata.push_back(std::move(j));
    }
    return {{"archive_size", r.archive_size},
            {"described_size", r.described_size},
            {"selected_size", r.selected_size},
            {"ga", ga_config_to_json(r.config)},
            {"operators",
             {{"selection", "tournament(2)"},
              {"crossover", "uniform, per-gene swap probability r_c"},
              {"mutation", "bit-flip, r_m = N_s/(n_g*25)"},
              {"repair", "random prune/augment to nearest band edge of [ceil(0.9 N_s), floor(1.1 N_s)]"},
              {"elitism", 1},
              {"fitness", "H(p) + ln(mean pairwise haversine km)"}}},
            {"strata", std::move(strata)}};
}

SamplingResult sample_archive(std::span<const ArchiveEntry> archive, const ClassRaster& climate, const ClassRaster& thematic,
                              const GaConfig& cfg, const SamplingOptions& options)
{
    cfg.validate();
    const auto described = generate_descriptors(archive, climate, thematic);
    const auto strata_map = stratify(described);
    std::vector<std::pair<StratumKey, const std::vector<DescribedEntry>*>> strata;
    for (const auto& [key, entries] : strata_map)
        strata.emplace_back(key, &entries);

    std::vector<StratumResult> results(strata.size());
    std::vector<StratumReport> reports(strata.size());
    const auto work = [&](std::size_t s) {
        const auto& [key, entries] = strata[s];
        std::vector<LonLat> points;
        points.reserve(entries->size());
        for (const auto& d : *entries)
            points.push_back(d.entry.center());
        GaConfig local = cfg;
        local.seed = derive_seed(cfg.seed, {key.first, key.second});
        results[s] = evolve_stratum(points, local);

        const DistanceTable table(points);
        StratumReport& rep = reports[s];
        rep.key = key;
        rep.stratum_size = points.size();
        rep.selected = results[s].selected.size();
        rep.retained_whole = results[s].retained_whole;
        rep.fitness = results[s].fitness;
        rep.mean_distance_km = mean_pairwise_distance(table, results[s].selected);
        rep.generations = results[s].generations;
        rep.mutation_rate = results[s].mutation_rate;
        if (options.baseline) {
            Rng rng(derive_seed(local.seed, {0x62617365ULL}));
            std::vector<std::size_t> all(points.size());
            std::iota(all.begin(), all.end(), 0);
            auto random_subset = pick(std::move(all), rep.selected, rng);
            std::sort(random_subset.begin(), random_subset.end());
            rep.baseline_fitness = entropy_dispersion_fitness(table, random_subset);
            rep.baseline_mean_distance_km = mean_pairwise_distance(table, random_subset);
        }
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, strata.size()));
    if (threads == 1) {
        for (std::size_t s = 0; s < strata.size(); ++s)
            work(s);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t s = next++; s < strata.size(); s = next++)
                    work(s);
            });
    }

    SamplingResult out;
    out.report.archive_size = archive.size();
    out.report.described_size = described.size();
    out.report.config = cfg;
    for (std::size_t s = 0; s < strata.size(); ++s) {
        for (std::size_t i : results[s].selected)
            out.selection.push_back({(*strata[s].second)[i], results[s].fitness});
        out.report.strata.push_back(reports[s]);
    }
    out.report.selected_size = out.selection.size();
    return out;
}

void write_selection_csv(std::ostream& os, std::span<const SelectedEntry> selection)
{
    os << "id,u,v,stratum_fitness\n";
    char buf[64];
    for (const auto& s : selection) {
        std::snprintf(buf, sizeof buf, "%.17g", s.stratum_fitness);
        os << s.described.entry.id << ',' << s.described.climate << ',' << s.described.thematic << ',' << buf << '\n';
    }
}

}  // namespace csmoe::sampler
