#include "doctest.h"

#include <cmath>
#include <fstream>

#include "hazeforge/error.hpp"
#include "hazeforge/fusion.hpp"
#include "support.hpp"

using namespace hazeforge;
using testsupport::max_abs_diff;
using testsupport::random_image;

namespace {

struct Inputs {
    PlanarImage hazy;
    PriorResult dcp, bccr;
};

Inputs random_inputs(int w, int h, std::uint64_t seed) {
    Inputs in;
    in.hazy = random_image(w, h, 3, seed);
    in.dcp = {random_image(w, h, 3, seed + 1), random_image(w, h, 1, seed + 2, 0.1, 1.0), Atmosphere{}};
    in.bccr = {random_image(w, h, 3, seed + 3), random_image(w, h, 1, seed + 4, 0.05, 1.0), Atmosphere{}};
    return in;
}

// Scalar probe <gF, J_fuse> + <gT, t_ref>.
double probe(const FusionOutput& out, const PlanarImage& gF, const PlanarImage& gT) {
    double s = 0.0;
    for (std::size_t i = 0; i < gF.size(); ++i) s += gF.data()[i] * out.fused.data()[i];
    for (std::size_t i = 0; i < gT.size(); ++i) s += gT.data()[i] * out.t_ref.data()[i];
    return s;
}

PlanarImage shift_torus(const PlanarImage& img, int dx, int dy) {
    PlanarImage out(img.width(), img.height(), img.channels());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x)
                out.at(c, (y + dy) % img.height(), (x + dx) % img.width()) = img.at(c, y, x);
    return out;
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
    std::ofstream f(p, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("parameter layout") {
    const PfmWeights w = PfmWeights::initialize(3);
    REQUIRE(w.groups().size() == pfm::kGroupCount);
    const auto shapes = PfmWeights::shapes(16);
    const auto names = PfmWeights::names();
    for (int g = 0; g < pfm::kGroupCount; ++g) {
        CHECK(w[g].dims == shapes[g]);
        CHECK(w[g].name == names[g]);
        std::size_t n = 1;
        for (auto d : w[g].dims) n *= d;
        CHECK(w[g].values.size() == n);
    }
    CHECK(w[pfm::kExtractHazy + pfm::kInWeight].name == "extract.hazy.in.weight");
    CHECK(w[pfm::kRefine1Weight].dims == std::vector<std::uint32_t>{16, 6});
}

TEST_CASE("initialization is seeded and bounded") {
    const PfmWeights a = PfmWeights::initialize(9), b = PfmWeights::initialize(9), c = PfmWeights::initialize(10);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    for (int g = 0; g < pfm::kGroupCount; ++g) {
        const auto& t = a[g];
        if (t.dims.size() == 1) {
            for (float v : t.values) CHECK(v == 0.0f);
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(t.dims[1]));
            for (float v : t.values) CHECK(std::abs(v) <= bound);
        }
    }
}

TEST_CASE("equal priors pass through unchanged") {
    Inputs in = random_inputs(7, 5, 10);
    in.bccr.radiance = in.dcp.radiance;
    for (std::uint64_t s : {1, 2, 3}) CHECK(pfm_forward(in.hazy, in.dcp, in.bccr, PfmWeights::initialize(s)).fused == in.dcp.radiance);
}

TEST_CASE("a zero head averages the priors") {
    const Inputs in = random_inputs(6, 6, 20);
    PfmWeights w = PfmWeights::initialize(4);
    for (int g : {pfm::kHeadWeight, pfm::kHeadBias}) std::fill(w[g].values.begin(), w[g].values.end(), 0.0f);
    const FusionOutput out = pfm_forward(in.hazy, in.dcp, in.bccr, w);
    for (std::size_t i = 0; i < out.fused.size(); ++i)
        CHECK(out.fused.data()[i] == doctest::Approx(0.5 * (in.dcp.radiance.data()[i] + in.bccr.radiance.data()[i])).epsilon(1e-14));
    for (double g : out.gates[0].data()) CHECK(g == 0.5);
}

TEST_CASE("softmax weights normalize and the output stays in the convex envelope") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Inputs in = random_inputs(4, 4, 30 + 10 * s);
        const FusionOutput out = pfm_forward(in.hazy, in.dcp, in.bccr, PfmWeights::initialize(s));
        CHECK(std::abs(out.global_weights[0] + out.global_weights[1] - 1.0) < 1e-6);
        CHECK(out.global_weights[0] >= 0.0);
        CHECK(out.global_weights[1] >= 0.0);
        for (std::size_t i = 0; i < 16; ++i) {
            const double g1 = out.gates[0].data()[i], g2 = out.gates[1].data()[i];
            CHECK(std::abs(g1 + g2 - 1.0) < 1e-6);
            CHECK(g1 >= 0.0);
            CHECK(g2 >= 0.0);
        }
        for (std::size_t i = 0; i < out.fused.size(); ++i) {
            const double a = in.dcp.radiance.data()[i], b = in.bccr.radiance.data()[i];
            CHECK(out.fused.data()[i] >= std::min(a, b) - 1e-15);
            CHECK(out.fused.data()[i] <= std::max(a, b) + 1e-15);
        }
        for (double t : out.t_ref.data()) {
            CHECK(t >= 0.1);
            CHECK(t <= 1.0);
        }
        for (double t : out.t_mlp.data()) {
            CHECK(t > 0.0);
            CHECK(t < 1.0);
        }
    }
}

TEST_CASE("forward is deterministic and retention does not change results") {
    const Inputs in = random_inputs(9, 8, 50);
    const PfmWeights w = PfmWeights::initialize(5);
    PfmActivations act;
    const FusionOutput a = pfm_forward(in.hazy, in.dcp, in.bccr, w, {}, &act);
    const FusionOutput b = pfm_forward(in.hazy, in.dcp, in.bccr, w);
    CHECK(a.fused == b.fused);
    CHECK(a.t_ref == b.t_ref);
    CHECK(a.gates[1] == b.gates[1]);
}

TEST_CASE("dimension mismatch is rejected") {
    Inputs in = random_inputs(6, 6, 60);
    in.bccr.radiance = random_image(6, 5, 3, 1);
    CHECK_THROWS_AS(pfm_forward(in.hazy, in.dcp, in.bccr, PfmWeights::initialize(1)), ShapeMismatch);
}

TEST_CASE("per-pixel pathway is equivariant under toroidal shifts") {
    const Inputs in = random_inputs(8, 6, 70);
    Inputs sh;
    sh.hazy = shift_torus(in.hazy, 1, 0);
    sh.dcp = {shift_torus(in.dcp.radiance, 1, 0), shift_torus(in.dcp.transmission, 1, 0), Atmosphere{}};
    sh.bccr = {shift_torus(in.bccr.radiance, 1, 0), shift_torus(in.bccr.transmission, 1, 0), Atmosphere{}};
    // A zero-radius dark channel keeps the refiner input pointwise.
    FusionConfig cfg;
    cfg.dark_radius = 0;
    const PfmWeights w = PfmWeights::initialize(6);
    const FusionOutput a = pfm_forward(in.hazy, in.dcp, in.bccr, w, cfg);
    const FusionOutput b = pfm_forward(sh.hazy, sh.dcp, sh.bccr, w, cfg);
    CHECK(b.global_weights[0] == doctest::Approx(a.global_weights[0]).epsilon(1e-12));
    CHECK(max_abs_diff(shift_torus(a.gates[0], 1, 0), b.gates[0]) < 1e-12);
    CHECK(max_abs_diff(shift_torus(a.t_mlp, 1, 0), b.t_mlp) < 1e-12);
    CHECK(max_abs_diff(shift_torus(a.fused, 1, 0), b.fused) < 1e-12);
}

TEST_CASE("backward matches central differences on every parameter group") {
    const Inputs in = random_inputs(6, 6, 80);
    const PfmWeights w = PfmWeights::initialize(7);
    const PlanarImage gF = random_image(6, 6, 3, 81, -1.0, 1.0), gT = random_image(6, 6, 1, 82, -1.0, 1.0);
    PfmActivations act;
    pfm_forward(in.hazy, in.dcp, in.bccr, w, {}, &act);
    const PfmGradients grads = pfm_backward(act, w, gF, gT);

    const testsupport::ProbeFn f = [&](const PfmWeights& ww, std::vector<char>& sig) {
        PfmActivations a;
        const double v = probe(pfm_forward(in.hazy, in.dcp, in.bccr, ww, {}, &a), gF, gT);
        testsupport::append_kinks(a, {}, sig);
        return v;
    };
    for (const auto& c : testsupport::fd_check(w, grads, f, 1e-3)) {
        CAPTURE(c.name);
        CHECK(c.skipped == 0);
        CHECK(c.rel < 1e-3);
    }
}

TEST_CASE("zero upstream gradients give zero parameter gradients") {
    const Inputs in = random_inputs(5, 5, 90);
    const PfmWeights w = PfmWeights::initialize(8);
    PfmActivations act;
    pfm_forward(in.hazy, in.dcp, in.bccr, w, {}, &act);
    const PfmGradients g = pfm_backward(act, w, PlanarImage(5, 5, 3), PlanarImage(5, 5, 1));
    CHECK(g.squared_norm() == 0.0);
}

TEST_CASE("a gate saturated at zero freezes the feature pathway") {
    const Inputs in = random_inputs(6, 6, 100);
    PfmWeights w = PfmWeights::initialize(9);
    // Logit gap far beyond exp underflow: g2 is exactly 0 and g1 exactly 1.
    w[pfm::kHeadBias].values = {0.0f, -1.0e4f};
    PfmActivations act;
    const FusionOutput out = pfm_forward(in.hazy, in.dcp, in.bccr, w, {}, &act);
    for (double g : out.gates[1].data()) REQUIRE(g == 0.0);
    const PfmGradients g =
        pfm_backward(act, w, random_image(6, 6, 3, 101, -1.0, 1.0), random_image(6, 6, 1, 102, -1.0, 1.0));
    for (int k = 0; k < 6; ++k) CHECK(g.groups[pfm::kExtractBccr + k] == std::vector<double>(g.groups[pfm::kExtractBccr + k].size(), 0.0));
    for (int k = 0; k < 4; ++k) CHECK(g.groups[pfm::kGuideBccr + k] == std::vector<double>(g.groups[pfm::kGuideBccr + k].size(), 0.0));
    double refine = 0.0;
    for (double v : g.groups[pfm::kRefine2Weight]) refine += v * v;
    CHECK(refine > 0.0);
}

TEST_CASE("weights round-trip bit-exactly") {
    const auto dir = testsupport::scratch_dir("weights");
    const PfmWeights w = PfmWeights::initialize(11);
    save_weights(w, dir / "w.pfmw");
    const PfmWeights r = load_weights(dir / "w.pfmw");
    CHECK(r == w);
    save_weights(r, dir / "w2.pfmw");
    CHECK(read_bytes(dir / "w.pfmw") == read_bytes(dir / "w2.pfmw"));

    const PfmWeights small = PfmWeights::initialize(12, 4);
    save_weights(small, dir / "small.pfmw");
    CHECK(load_weights(dir / "small.pfmw") == small);
}

TEST_CASE("weight file header") {
    const auto dir = testsupport::scratch_dir("weights_header");
    save_weights(PfmWeights::zeros(16), dir / "w.pfmw");
    const auto bytes = read_bytes(dir / "w.pfmw");
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PFMW");
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 16);
    // First group: rank 2, dims 16 x 3.
    CHECK(bytes[12] == 2);
    CHECK(bytes[16] == 16);
    CHECK(bytes[20] == 3);
}

TEST_CASE("malformed weight files") {
    const auto dir = testsupport::scratch_dir("weights_bad");
    save_weights(PfmWeights::initialize(13), dir / "good.pfmw");
    const auto good = read_bytes(dir / "good.pfmw");

    auto expect = [&](const std::vector<char>& bytes, const char* message, auto tag) {
        write_bytes(dir / "bad.pfmw", bytes);
        using E = decltype(tag);
        try {
            load_weights(dir / "bad.pfmw");
            FAIL("expected an error");
        } catch (const E& e) {
            CHECK(std::string(e.what()).find(message) != std::string::npos);
        }
    };

    auto magic = good;
    magic[0] = 'X';
    expect(magic, "format error", FormatError{""});

    auto version = good;
    version[4] = 2;
    expect(version, "format error", FormatError{""});

    expect(std::vector<char>(good.begin(), good.end() - 3), "truncated", FormatError{""});

    // Header says d = 16, payload is laid out for d = 8.
    save_weights(PfmWeights::initialize(14, 8), dir / "eight.pfmw");
    auto mixed = read_bytes(dir / "eight.pfmw");
    mixed[8] = 16;
    expect(mixed, "shape mismatch", ShapeMismatch{""});

    auto trailing = good;
    trailing.push_back(0);
    expect(trailing, "format error", FormatError{""});

    CHECK_THROWS_AS(load_weights(dir / "missing.pfmw"), IoError);
}

TEST_CASE("identity radiance refiner") {
    const PlanarImage img = random_image(3, 3, 3, 110);
    CHECK(identity_refiner()(img) == img);
}

}
