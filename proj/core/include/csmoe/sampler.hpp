// SPDX-License-Identifier: Apache-2.0
//
// Thematic-climatic stratified sampling of a geolocated archive:
//   1. look up a climate code u and a thematic code v at each entry's bbox center,
//      keeping entries covered by both rasters;
//   2. group entries into strata S_{u,v};
//   3. inside each stratum larger than the per-stratum target N_s, evolve a binary
//      selection mask with a genetic algorithm that maximizes a dispersion score
//      built from pairwise great-circle distances, holding the selection size in
//      [ceil(0.9·N_s), floor(1.1·N_s)] by random pruning/augmentation.
#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace csmoe::sampler {

// ---- geometry -------------------------------------------------------------

/// Mean Earth radius, the conventional 6371 km.
inline constexpr double kEarthRadiusKm = 6371.0;

struct LonLat
{
    double lon = 0.0;
    double lat = 0.0;
};

/// Great-circle distance in kilometres on a sphere of radius kEarthRadiusKm.
double haversine(LonLat p, LonLat q) noexcept;

// ---- rasters --------------------------------------------------------------

/// North-up class raster. Cell (r, c) spans lat ∈ (lat_max − (r+1)Δlat, lat_max − rΔlat],
/// lon ∈ [lon_min + cΔlon, lon_min + (c+1)Δlon).
struct ClassRaster
{
    double lat_max = 0.0;
    double lon_min = 0.0;
    double dlat = 1.0;
    double dlon = 1.0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::uint16_t nodata = 0;
    std::vector<std::uint16_t> codes;  // row-major, rows × cols

    void validate() const;
};

/// Class code at (lon, lat), or nullopt when outside the grid or on a nodata cell.
std::optional<std::uint16_t> lookup(const ClassRaster& raster, double lon, double lat) noexcept;

/// GRID1: one JSON header line {"lat_max","lon_min","dlat","dlon","rows","cols","nodata"}
/// followed by rows·cols little-endian u16 codes.
void write_grid(std::ostream& os, const ClassRaster& raster);
ClassRaster read_grid(std::istream& is);
void save_grid(const std::filesystem::path& path, const ClassRaster& raster);
ClassRaster load_grid(const std::filesystem::path& path);

// ---- archive --------------------------------------------------------------

struct ArchiveEntry
{
    std::string id;
    double lon_min = 0.0;
    double lat_min = 0.0;
    double lon_max = 0.0;
    double lat_max = 0.0;

    LonLat center() const noexcept { return {(lon_min + lon_max) / 2.0, (lat_min + lat_max) / 2.0}; }
    void validate() const;
};

/// CSV with header `id,lon_min,lat_min,lon_max,lat_max`. Throws DataError with the line number.
std::vector<ArchiveEntry> read_archive_csv(std::istream& is);
std::vector<ArchiveEntry> load_archive_csv(const std::filesystem::path& path);

struct DescribedEntry
{
    ArchiveEntry entry;
    std::uint16_t climate = 0;   // u
    std::uint16_t thematic = 0;  // v
};

std::vector<DescribedEntry> generate_descriptors(std::span<const ArchiveEntry> archive, const ClassRaster& climate,
                                                 const ClassRaster& thematic);

using StratumKey = std::pair<std::uint16_t, std::uint16_t>;  // (u, v)

/// Partition by (u, v); map iteration order is sorted by key, input order kept inside a stratum.
std::map<StratumKey, std::vector<DescribedEntry>> stratify(std::span<const DescribedEntry> described);

// ---- fitness --------------------------------------------------------------

inline constexpr double kDegenerateFitness = -std::numeric_limits<double>::infinity();

/// Symmetric n×n distance table; cached for small strata, computed on demand otherwise.
class DistanceTable
{
public:
    explicit DistanceTable(std::vector<LonLat> points, std::size_t cache_limit = 2048);

    std::size_t size() const noexcept { return points_.size(); }
    double operator()(std::size_t i, std::size_t j) const noexcept;
    const std::vector<LonLat>& points() const noexcept { return points_; }

private:
    std::vector<LonLat> points_;
    std::vector<double> cache_;
};

/// Scores a selection (indices into the table). Larger is better.
using FitnessFn = std::function<double(const DistanceTable&, std::span<const std::size_t>)>;

/// With d_ij the pairwise distances of the selection and p_ij = d_ij / Σd:
///   H(p) + ln(mean d_ij),  H(p) = −Σ p ln p  (zero distances contribute nothing to H).
/// Fewer than two points, or all points coincident, give kDegenerateFitness.
double entropy_dispersion_fitness(const DistanceTable& table, std::span<const std::size_t> selection);

/// Mean pairwise distance of a selection in km (0 for fewer than two points).
double mean_pairwise_distance(const DistanceTable& table, std::span<const std::size_t> selection);

// ---- genetic algorithm ----------------------------------------------------

struct GaConfig
{
    std::size_t target = 100;        // N_s
    std::size_t iterations = 2500;   // T
    std::size_t population = 10;     // N_p
    double crossover_rate = 0.5;     // r_c, per-gene swap probability
    /// Stop after this many generations without improvement; 0 disables.
    std::size_t stagnation_limit = 0;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json ga_config_to_json(const GaConfig& cfg);
GaConfig ga_config_from_json(const nlohmann::json& j);

/// r_m = N_s / (n_g · 25)
double mutation_rate(std::size_t target, std::size_t stratum_size) noexcept;

/// [ceil(0.9·N_s), floor(1.1·N_s)], computed in integer arithmetic.
std::pair<std::size_t, std::size_t> size_band(std::size_t target) noexcept;

/// Chromosome: one flag per stratum entry.
using Chromosome = std::vector<std::uint8_t>;

std::size_t popcount(const Chromosome& bits) noexcept;

/// Random pruning down to the upper band edge or augmentation up to the lower edge.
/// Chromosomes inside the band are left untouched. Returns the final size.
std::size_t repair(Chromosome& bits, std::size_t target, std::uint64_t seed);

struct StratumResult
{
    std::vector<std::size_t> selected;  // indices into the stratum, ascending
    double fitness = kDegenerateFitness;
    bool retained_whole = false;
    std::size_t generations = 0;
    double mutation_rate = 0.0;
    /// Best-ever fitness after each generation (index 0 = initial population).
    std::vector<double> best_history;
};

/// Returns the whole stratum when n_g ≤ N_s; otherwise runs the GA (tournament of 2,
/// uniform crossover, bit-flip mutation, size repair, elitism of 1) and returns the
/// best chromosome ever seen.
StratumResult evolve_stratum(std::span<const LonLat> points, const GaConfig& cfg,
                             const FitnessFn& fitness = entropy_dispersion_fitness);

// ---- end-to-end -----------------------------------------------------------

struct StratumReport
{
    StratumKey key;
    std::size_t stratum_size = 0;
    std::size_t selected = 0;
    bool retained_whole = false;
    double fitness = kDegenerateFitness;
    double mean_distance_km = 0.0;
    std::size_t generations = 0;
    double mutation_rate = 0.0;
    std::optional<double> baseline_fitness;
    std::optional<double> baseline_mean_distance_km;
};

struct SamplingReport
{
    std::size_t archive_size = 0;   // N
    std::size_t described_size = 0; // N'
    std::size_t selected_size = 0;  // |D*|
    GaConfig config;
    std::vector<StratumReport> strata;
};

nlohmann::json report_to_json(const SamplingReport& report);

struct SelectedEntry
{
    DescribedEntry described;
    double stratum_fitness = kDegenerateFitness;
};

struct SamplingResult
{
    std::vector<SelectedEntry> selection;  // strata in key order, stratum entries in archive order
    SamplingReport report;
};

struct SamplingOptions
{
    bool baseline = false;  // also score an equal-size uniform random subset per stratum
    std::size_t threads = 1;
};

SamplingResult sample_archive(std::span<const ArchiveEntry> archive, const ClassRaster& climate, const ClassRaster& thematic,
                              const GaConfig& cfg, const SamplingOptions& options = {});

/// `id,u,v,stratum_fitness`
void write_selection_csv(std::ostream& os, std::span<const SelectedEntry> selection);

}  // namespace csmoe::sampler
