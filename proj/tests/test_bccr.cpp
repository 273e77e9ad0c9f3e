#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "hazeforge/bccr.hpp"
#include "hazeforge/error.hpp"
#include "support.hpp"

using namespace hazeforge;
using testsupport::max_abs_diff;
using testsupport::random_image;

namespace {

PlanarImage filled_with(const Atmosphere& A, int w, int h) {
    PlanarImage img(w, h, 3);
    for (int c = 0; c < 3; ++c)
        for (double& v : img.plane(c)) v = A[c];
    return img;
}

FilterBank horizontal_difference() { return FilterBank({Kernel{3, {0, 0, 0, 0, -1, 1, 0, 0, 0}}}); }

std::vector<PlanarImage> random_weights(std::size_t count, int w, int h, std::uint64_t seed) {
    std::vector<PlanarImage> out;
    for (std::size_t j = 0; j < count; ++j) out.push_back(random_image(w, h, 1, seed + j));
    return out;
}

}  // namespace

TEST_SUITE("bccr") {

TEST_CASE("boundary bound when I equals A") {
    const Atmosphere A{{0.8, 0.75, 0.9}};
    const BccrConfig cfg;
    CHECK(boundary_transmission(filled_with(A, 10, 8), A, cfg) == PlanarImage(10, 8, 1, cfg.t_floor));
}

TEST_CASE("a pixel at the lower radiance bound needs full transmission") {
    const Atmosphere A{{0.8, 0.8, 0.8}};
    BccrConfig cfg;
    PlanarImage img = filled_with(A, 5, 5);
    img.at(1, 2, 3) = cfg.c0[1];
    const PlanarImage t = boundary_bound(img, A, cfg);
    CHECK(t.at(0, 2, 3) == 1.0);
    CHECK(t.at(0, 0, 0) == cfg.t_floor);
}

TEST_CASE("boundary bound hand example") {
    const Atmosphere A{{0.8, 0.8, 0.8}};
    const PlanarImage px(1, 1, 3, std::vector<double>{0.4, 0.5, 0.6});
    const double t = boundary_bound(px, A, BccrConfig{}).at(0, 0, 0);
    // Lower-bound ratios 0.4/0.722, 0.3/0.722, 0.2/0.722; upper ratios -2, -1.5, -1.
    CHECK(t == doctest::Approx(0.4 / 0.722).epsilon(1e-12));
    CHECK(t == doctest::Approx(0.554).epsilon(1e-3));
}

TEST_CASE("boundary bound with A below the upper bound uses both ratios") {
    const Atmosphere A{{0.6, 0.6, 0.6}};
    BccrConfig cfg;
    cfg.c1 = {0.9, 0.9, 0.9};
    // I above A: only the upper ratio (A - I)/(A - c1) is positive.
    const PlanarImage px(1, 1, 3, std::vector<double>{0.75, 0.6, 0.6});
    CHECK(boundary_bound(px, A, cfg).at(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("boundary transmission is invariant to a joint channel permutation") {
    const PlanarImage img = random_image(14, 11, 3, 40);
    const Atmosphere A{{0.9, 0.7, 0.8}};
    BccrConfig cfg;
    cfg.c0 = {0.05, 0.1, 0.02};
    cfg.c1 = {1.0, 0.95, 0.9};
    const PlanarImage base = boundary_transmission(img, A, cfg);

    const int perm[3] = {2, 0, 1};
    PlanarImage pimg(14, 11, 3);
    Atmosphere pA;
    BccrConfig pcfg = cfg;
    for (int c = 0; c < 3; ++c) {
        std::copy(img.plane(perm[c]).begin(), img.plane(perm[c]).end(), pimg.plane(c).begin());
        pA.rgb[c] = A[perm[c]];
        pcfg.c0[c] = cfg.c0[perm[c]];
        pcfg.c1[c] = cfg.c1[perm[c]];
    }
    CHECK(boundary_transmission(pimg, pA, pcfg) == base);
}

TEST_CASE("closing never lowers the bound") {
    const PlanarImage img = random_image(20, 20, 3, 41);
    const Atmosphere A{{0.95, 0.95, 0.95}};
    const BccrConfig cfg;
    const PlanarImage raw = boundary_bound(img, A, cfg), closed = boundary_transmission(img, A, cfg);
    for (std::size_t i = 0; i < raw.size(); ++i) CHECK(closed.data()[i] >= raw.data()[i]);
}

TEST_CASE("degenerate atmosphere is rejected") {
    const PlanarImage img = random_image(4, 4, 3, 42);
    CHECK_THROWS_AS(boundary_transmission(img, Atmosphere{{0.05, 0.5, 0.5}}, BccrConfig{}), DegenerateAtmosphere);
    BccrConfig cfg;
    cfg.c1 = {0.7, 0.7, 0.7};
    CHECK_THROWS_AS(boundary_transmission(img, Atmosphere{{0.8, 0.5, 0.5}}, cfg), DegenerateAtmosphere);
}

TEST_CASE("standard filter bank is zero-sum and unit-norm") {
    const FilterBank bank = FilterBank::standard();
    REQUIRE(bank.size() == 9);
    const PlanarImage flat(9, 7, 1, 0.42);
    for (const Kernel& k : bank.kernels()) {
        double sum = 0.0, sq = 0.0;
        for (double w : k.weights) {
            sum += w;
            sq += w * w;
        }
        CHECK(std::abs(sum) < 1e-15);
        CHECK(sq == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(apply_kernel(flat, k) == PlanarImage(9, 7, 1, 0.0));
    }
    CHECK_THROWS_AS(FilterBank({Kernel{3, {0, 0, 0, 0, 1, 1, 0, 0, 0}}}), InvalidArgument);
    CHECK_THROWS_AS(FilterBank({Kernel{2, {1, -1, 0, 0}}}), InvalidArgument);
}

TEST_CASE("kernel response and its adjoint") {
    const FilterBank bank = FilterBank::standard();
    const PlanarImage t = random_image(7, 6, 1, 43), y = random_image(7, 6, 1, 44);
    const auto taps = testsupport::taps_of(bank);
    for (std::size_t j = 0; j < bank.size(); ++j) {
        const PlanarImage r = apply_kernel(t, bank[j]);
        for (int yy = 0; yy < 6; ++yy)
            for (int xx = 0; xx < 7; ++xx) {
                double expect = 0.0;
                for (const auto& tp : taps[j]) expect += tp.w * t.data()[testsupport::tap_index(7, 6, yy, xx, tp)];
                CHECK(r.at(0, yy, xx) == doctest::Approx(expect).epsilon(1e-12));
            }
        const PlanarImage aty = apply_kernel_adjoint(y, bank[j]);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            lhs += r.data()[i] * y.data()[i];
            rhs += t.data()[i] * aty.data()[i];
        }
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("contextual weights") {
    const FilterBank bank = FilterBank::standard();
    for (const PlanarImage& w : contextual_weights(PlanarImage(8, 8, 3, 0.3), bank, 0.5))
        CHECK(w == PlanarImage(8, 8, 1, 1.0));

    // A unit step in luminance under an unnormalized 2-tap difference.
    PlanarImage step(4, 1, 3, 0.0);
    for (int c = 0; c < 3; ++c) step.at(c, 0, 2) = step.at(c, 0, 3) = 1.0;
    const auto w = contextual_weights(step, horizontal_difference(), 0.5);
    CHECK(w[0].at(0, 0, 1) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
    CHECK(w[0].at(0, 0, 0) == 1.0);
    CHECK_THROWS_AS(contextual_weights(step, bank, 0.0), InvalidArgument);
}

TEST_CASE("contextual weights decrease with response magnitude") {
    const PlanarImage img = random_image(16, 16, 3, 45);
    const FilterBank bank = FilterBank::standard();
    const auto w = contextual_weights(img, bank, 0.5);
    const PlanarImage gray = luminance(img);
    for (std::size_t j = 0; j < bank.size(); ++j) {
        const PlanarImage r = apply_kernel(gray, bank[j]);
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < r.size(); ++i) pts.emplace_back(std::abs(r.data()[i]), w[j].data()[i]);
        std::sort(pts.begin(), pts.end());
        for (std::size_t i = 1; i < pts.size(); ++i) CHECK(pts[i].second <= pts[i - 1].second);
    }
}

TEST_CASE("objective matches a direct evaluation") {
    const FilterBank bank = FilterBank::standard();
    const PlanarImage t = random_image(9, 8, 1, 46), tb = random_image(9, 8, 1, 47);
    const auto W = random_weights(bank.size(), 9, 8, 48);
    std::vector<std::vector<double>> Wv;
    for (const auto& w : W) Wv.emplace_back(w.data().begin(), w.data().end());
    const double expect = testsupport::brute_objective({t.data().begin(), t.data().end()},
                                                       {tb.data().begin(), tb.data().end()}, Wv,
                                                       testsupport::taps_of(bank), 9, 8, 2.0);
    CHECK(contextual_objective(t, tb, W, bank, 2.0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("zero weights leave the boundary map unchanged") {
    const PlanarImage tb = random_image(12, 12, 1, 49, 0.05, 1.0);
    const FilterBank bank = FilterBank::standard();
    std::vector<PlanarImage> W(bank.size(), PlanarImage(12, 12, 1, 0.0));
    CHECK(max_abs_diff(hqs_optimize(tb, W, bank, BccrConfig{}).transmission, tb) < 1e-4);
}

TEST_CASE("a dominant data term pins the solution") {
    const PlanarImage tb = random_image(12, 12, 1, 50, 0.05, 1.0);
    const FilterBank bank = FilterBank::standard();
    BccrConfig cfg;
    cfg.lambda_data = 1e6;
    CHECK(max_abs_diff(hqs_optimize(tb, random_weights(bank.size(), 12, 12, 51), bank, cfg).transmission, tb) < 1e-3);
}

TEST_CASE("objective is non-increasing over the beta schedule") {
    const FilterBank bank = FilterBank::standard();
    for (std::uint64_t s = 0; s < 5; ++s) {
        const PlanarImage tb = random_image(16, 16, 1, 200 + s, 0.05, 1.0);
        const auto res = hqs_optimize(tb, random_weights(bank.size(), 16, 16, 300 + 10 * s), bank, BccrConfig{});
        for (std::size_t k = 1; k < res.objective_trace.size(); ++k)
            CHECK(res.objective_trace[k] <= res.objective_trace[k - 1] * (1.0 + 1e-6));
    }
}

TEST_CASE("beta schedule runs from beta0 to exactly beta_max") {
    const FilterBank bank = FilterBank::standard();
    const PlanarImage tb = random_image(8, 8, 1, 52, 0.05, 1.0);
    const auto res = hqs_optimize(tb, random_weights(bank.size(), 8, 8, 53), bank, BccrConfig{});
    REQUIRE(res.betas.size() == res.objective_trace.size());
    CHECK(res.betas.front() == 1.0);
    CHECK(res.betas.back() == 256.0);
    for (std::size_t k = 1; k + 1 < res.betas.size(); ++k)
        CHECK(res.betas[k] == doctest::Approx(res.betas[k - 1] * 2.0 * std::sqrt(2.0)));
}

TEST_CASE("HQS agrees with a subgradient oracle on a small instance") {
    const FilterBank bank = horizontal_difference();
    const PlanarImage tb = random_image(8, 8, 1, 54, 0.05, 1.0);
    const auto W = random_weights(1, 8, 8, 55);
    BccrConfig cfg;
    // The splitting leaves an O(1/beta) bias; a long continuation brings it under the tolerance.
    cfg.beta_max = 65536.0;
    cfg.t_floor = 0.01;
    const auto res = hqs_optimize(tb, W, bank, cfg);
    const double hqs = contextual_objective(res.transmission, tb, W, bank, cfg.lambda_data);
    const double oracle = testsupport::subgradient_oracle(tb, W, bank, cfg.lambda_data, 2'000'000);
    CHECK(std::abs(hqs - oracle) < 1e-3);
}

TEST_CASE("solver stall reports its residual") {
    const FilterBank bank = FilterBank::standard();
    const PlanarImage tb = random_image(16, 16, 1, 56, 0.05, 1.0);
    BccrConfig cfg;
    cfg.cg_max_iterations = 1;
    cfg.cg_tolerance = 1e-14;
    try {
        hqs_optimize(tb, random_weights(bank.size(), 16, 16, 57), bank, cfg);
        FAIL("expected a stall");
    } catch (const SolverStall& e) {
        CHECK(e.residual > 1e-14);
        CHECK(e.iterations == 1);
        CHECK(std::string(e.what()).find("solver stall") != std::string::npos);
    }
}

TEST_CASE("dehaze of an image equal to its atmosphere") {
    const PlanarImage img(24, 20, 3, 0.7);
    const PriorResult r = dehaze_bccr(img);
    CHECK(r.atmosphere[0] == doctest::Approx(0.7));
    CHECK(max_abs_diff(r.transmission, PlanarImage(24, 20, 1, 0.05)) < 1e-12);
    CHECK(max_abs_diff(r.radiance, img) < 1e-12);
}

TEST_CASE("dehaze output transmission stays in range") {
    BccrConfig cfg;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const PriorResult r = dehaze_bccr(random_image(24, 18, 3, 400 + s, 0.2, 0.9), cfg);
        for (double v : r.transmission.data()) {
            CHECK(v >= cfg.t_floor);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("config validation") {
    BccrConfig cfg;
    cfg.c0 = {0.5, 0.5, 0.5};
    cfg.c1 = {0.5, 1.0, 1.0};
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = {};
    cfg.beta0 = 512.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = {};
    cfg.beta_scale = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

}
