#include "hazeforge/hazesim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "hazeforge/error.hpp"
#include "hazeforge/parallel.hpp"
#include "hazeforge/png_io.hpp"
#include "hazeforge/rng.hpp"

namespace hazeforge {

namespace {

constexpr int kLattice = 16;

void check_range(double lo, double hi, const char* what) {
    if (!(lo > 0.0 && lo <= hi && hi <= 1.0)) throw InvalidArgument(std::string(what) + ": need 0 < lo <= hi <= 1");
}

}  // namespace

PlanarImage transmission_from_depth(const PlanarImage& depth, double beta) {
    require_single(depth, "transmission_from_depth");
    if (!(beta >= 0.0)) throw InvalidArgument("transmission_from_depth: beta must be >= 0");
    PlanarImage t(depth.width(), depth.height(), 1);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double d = depth.data()[i];
        if (!(d >= 0.0 && d <= 1.0)) throw InvalidArgument("transmission_from_depth: depth must lie in [0,1]");
        t.data()[i] = std::exp(-beta * d);
    }
    return t;
}

PlanarImage random_transmission(int width, int height, double t_lo, double t_hi, std::uint64_t seed) {
    check_range(t_lo, t_hi, "random_transmission");
    const int gw = (width + kLattice - 1) / kLattice + 1;
    const int gh = (height + kLattice - 1) / kLattice + 1;
    Rng rng(seed);
    std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
    for (double& v : lattice) v = rng.uniform();

    PlanarImage t(width, height, 1);
    for (int y = 0; y < height; ++y) {
        const int gy = y / kLattice;
        const double fy = static_cast<double>(y % kLattice) / kLattice;
        for (int x = 0; x < width; ++x) {
            const int gx = x / kLattice;
            const double fx = static_cast<double>(x % kLattice) / kLattice;
            auto node = [&](int i, int j) { return lattice[static_cast<std::size_t>(j) * gw + i]; };
            const double top = node(gx, gy) * (1.0 - fx) + node(gx + 1, gy) * fx;
            const double bottom = node(gx, gy + 1) * (1.0 - fx) + node(gx + 1, gy + 1) * fx;
            const double v = top * (1.0 - fy) + bottom * fy;
            t.at(0, y, x) = std::clamp(t_lo + (t_hi - t_lo) * v, t_lo, t_hi);
        }
    }
    return t;
}

PlanarImage realize_field(const TransmissionField& field, int width, int height, std::uint64_t seed) {
    struct Visitor {
        int w, h;
        std::uint64_t seed;
        PlanarImage operator()(const ConstantField& f) const {
            if (!(f.t0 > 0.0 && f.t0 <= 1.0)) throw InvalidArgument("constant transmission must lie in (0,1]");
            return PlanarImage(w, h, 1, f.t0);
        }
        PlanarImage operator()(const DepthField& f) const {
            if (f.depth.width() != w || f.depth.height() != h) throw ShapeMismatch("depth map size differs from image");
            return transmission_from_depth(f.depth, f.beta);
        }
        PlanarImage operator()(const RandomField& f) const { return random_transmission(w, h, f.t_lo, f.t_hi, seed); }
    };
    return std::visit(Visitor{width, height, seed}, field);
}

PlanarImage apply_haze(const PlanarImage& clear, const PlanarImage& t, const Atmosphere& A) {
    require_valid(clear);
    require_single(t, "apply_haze transmission");
    if (!clear.same_size(t)) throw ShapeMismatch("apply_haze: transmission size differs from image");
    PlanarImage hazy(clear.width(), clear.height(), clear.channels());
    for (int c = 0; c < clear.channels(); ++c) {
        auto src = clear.plane(c);
        auto dst = hazy.plane(c);
        for (std::size_t i = 0; i < dst.size(); ++i) {
            const double tv = t.data()[i];
            dst[i] = src[i] * tv + A[c] * (1.0 - tv);
        }
    }
    return hazy;
}

HazySample synthesize(const PlanarImage& clear, const HazeParams& params, std::uint64_t seed) {
    require_rgb(clear, "synthesize");
    PlanarImage t = realize_field(params.field, clear.width(), clear.height(), seed);
    for (double v : t.data())
        if (!(v > 0.0 && v <= 1.0)) throw InvalidArgument("synthesize: transmission must lie in (0,1]");
    return HazySample{apply_haze(clear, t, params.atmosphere), std::move(t)};
}

void DatasetRanges::validate() const {
    if (!(a_lo >= kMinAtmosphere && a_lo <= a_hi && a_hi <= 1.0))
        throw InvalidArgument("synth: need 0.05 <= a_lo <= a_hi <= 1");
    check_range(t_lo, t_hi, "synth transmission range");
}

std::vector<std::filesystem::path> list_png_files(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::directory_iterator it(dir, ec);
    if (ec) throw IoError("cannot read directory " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : it) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::ranges::transform(ext, ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") files.push_back(entry.path());
    }
    std::ranges::sort(files);
    return files;
}

std::string format_manifest(const std::vector<ManifestRow>& rows) {
    std::string out = "name\tsource\ta_r\ta_g\ta_b\tfield\tp0\tp1\tseed\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s\t%s\t%.9g\t%.9g\t%.9g\t%s\t%.9g\t%.9g\t%llu\n", r.name.c_str(),
                      r.source.c_str(), r.atmosphere[0], r.atmosphere[1], r.atmosphere[2], r.field.c_str(), r.p0, r.p1,
                      static_cast<unsigned long long>(r.seed));
        out += buf;
    }
    return out;
}

std::vector<ManifestRow> make_dataset(const std::filesystem::path& clear_dir, const std::filesystem::path& out_dir,
                                      int n_variants, const DatasetRanges& ranges, std::uint64_t seed, int threads) {
    ranges.validate();
    if (n_variants < 1) throw InvalidArgument("synth: need at least one variant per image");
    const auto files = list_png_files(clear_dir);
    if (files.empty()) throw IoError("no PNG images in " + clear_dir.string());
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());

    std::vector<std::vector<ManifestRow>> per_image(files.size());
    parallel_for(files.size(), threads, [&](std::size_t i) {
        const PlanarImage clear = read_png(files[i]);
        if (clear.channels() != 3) throw FormatError(files[i].string() + ": expected an RGB image");
        Rng rng(derive_seed(seed, i));
        const std::string stem = files[i].stem().string();
        for (int k = 0; k < n_variants; ++k) {
            ManifestRow row;
            row.name = stem + "_v" + std::to_string(k);
            row.source = files[i].filename().string();
            const double a = rng.uniform(ranges.a_lo, ranges.a_hi);
            row.atmosphere = Atmosphere{{a, a, a}};
            bool constant = ranges.kind == FieldKind::Constant;
            if (ranges.kind == FieldKind::Mixed) constant = rng.uniform() < 0.5;
            row.seed = rng.below(~std::uint64_t{0});
            HazeParams params{row.atmosphere, ConstantField{}};
            if (constant) {
                const double t0 = rng.uniform(ranges.t_lo, ranges.t_hi);
                params.field = ConstantField{t0};
                row.field = "constant";
                row.p0 = row.p1 = t0;
            } else {
                params.field = RandomField{ranges.t_lo, ranges.t_hi};
                row.field = "random";
                row.p0 = ranges.t_lo;
                row.p1 = ranges.t_hi;
            }
            const HazySample sample = synthesize(clear, params, row.seed);
            write_png(out_dir / (row.name + ".png"), sample.hazy);
            write_png(out_dir / (row.name + "_t.png"), sample.transmission);
            per_image[i].push_back(std::move(row));
        }
    });

    std::vector<ManifestRow> rows;
    for (auto& v : per_image) rows.insert(rows.end(), v.begin(), v.end());
    std::ofstream manifest(out_dir / "manifest.tsv", std::ios::binary | std::ios::trunc);
    if (!manifest) throw IoError("cannot write manifest in " + out_dir.string());
    manifest << format_manifest(rows);
    return rows;
}

}  // namespace hazeforge
