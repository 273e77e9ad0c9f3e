#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "hazeforge/dcp.hpp"
#include "hazeforge/image.hpp"

namespace hazeforge {

struct ConstantField {
    double t0 = 0.5;  // (0, 1]
};

// t = exp(-beta * depth), depth normalized to [0,1].
struct DepthField {
    PlanarImage depth;
    double beta = 1.0;
};

// Seeded value noise on a 16-pixel lattice, bilinearly interpolated into [t_lo, t_hi].
struct RandomField {
    double t_lo = 0.2;
    double t_hi = 0.9;
};

using TransmissionField = std::variant<ConstantField, DepthField, RandomField>;

struct HazeParams {
    Atmosphere atmosphere;
    TransmissionField field;
};

struct HazySample {
    PlanarImage hazy;
    PlanarImage transmission;
};

PlanarImage transmission_from_depth(const PlanarImage& depth, double beta);
PlanarImage random_transmission(int width, int height, double t_lo, double t_hi, std::uint64_t seed);
PlanarImage realize_field(const TransmissionField& field, int width, int height, std::uint64_t seed);

// I = J t + A (1 - t), also returning the realized t.
HazySample synthesize(const PlanarImage& clear, const HazeParams& params, std::uint64_t seed);
// Same model with a caller-supplied transmission map.
PlanarImage apply_haze(const PlanarImage& clear, const PlanarImage& t, const Atmosphere& A);

enum class FieldKind { Constant, Random, Mixed };

struct DatasetRanges {
    double a_lo = 0.7;
    double a_hi = 1.0;
    double t_lo = 0.2;
    double t_hi = 0.9;
    FieldKind kind = FieldKind::Mixed;

    void validate() const;
};

struct ManifestRow {
    std::string name;    // stem of the written hazy image
    std::string source;  // clear image file name
    Atmosphere atmosphere;
    std::string field;   // "constant" or "random"
    double p0 = 0.0;     // t0, or t_lo
    double p1 = 0.0;     // t0, or t_hi
    std::uint64_t seed = 0;
};

// Hazy PNGs (<stem>_v<k>.png), t maps (<stem>_v<k>_t.png) and manifest.tsv, one row per variant.
// Image i draws from the stream derive_seed(seed, i), so output is independent of `threads`.
std::vector<ManifestRow> make_dataset(const std::filesystem::path& clear_dir, const std::filesystem::path& out_dir,
                                      int n_variants, const DatasetRanges& ranges, std::uint64_t seed,
                                      int threads = 1);

std::string format_manifest(const std::vector<ManifestRow>& rows);

// Sorted *.png files of a directory. Throws IoError if the directory cannot be read.
std::vector<std::filesystem::path> list_png_files(const std::filesystem::path& dir);

}  // namespace hazeforge
