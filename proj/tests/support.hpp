#pragma once

// Shared helpers for the unit and acceptance tests, including slow reference
// implementations that share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hazeforge/bccr.hpp"
#include "hazeforge/fusion.hpp"
#include "hazeforge/image.hpp"
#include "hazeforge/rng.hpp"

namespace testsupport {

using hazeforge::PlanarImage;

inline PlanarImage random_image(int w, int h, int ch, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    hazeforge::Rng rng(seed);
    PlanarImage img(w, h, ch);
    for (double& v : img.data()) v = rng.uniform(lo, hi);
    return img;
}

inline double max_abs_diff(const PlanarImage& a, const PlanarImage& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline std::filesystem::path asset_dir() { return std::filesystem::path(HAZEFORGE_TEST_ASSETS) / "clear"; }

// Fresh empty directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::path(HAZEFORGE_TEST_SCRATCH) / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// Direct enumeration of clipped windows.
inline PlanarImage brute_box(const PlanarImage& img, int r) {
    PlanarImage out(img.width(), img.height(), img.channels());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) {
                double s = 0.0;
                int n = 0;
                for (int yy = std::max(0, y - r); yy <= std::min(img.height() - 1, y + r); ++yy)
                    for (int xx = std::max(0, x - r); xx <= std::min(img.width() - 1, x + r); ++xx) {
                        s += img.at(c, yy, xx);
                        ++n;
                    }
                out.at(c, y, x) = s / n;
            }
    return out;
}

inline PlanarImage brute_extremum(const PlanarImage& img, int r, bool take_min) {
    PlanarImage out(img.width(), img.height(), img.channels());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) {
                double m = img.at(c, y, x);
                for (int yy = std::max(0, y - r); yy <= std::min(img.height() - 1, y + r); ++yy)
                    for (int xx = std::max(0, x - r); xx <= std::min(img.width() - 1, x + r); ++xx)
                        m = take_min ? std::min(m, img.at(c, yy, xx)) : std::max(m, img.at(c, yy, xx));
                out.at(c, y, x) = m;
            }
    return out;
}

inline PlanarImage brute_guided(const PlanarImage& p, const PlanarImage& g, int r, double eps) {
    const int w = p.width(), h = p.height();
    PlanarImage gp(w, h, 1), gg(w, h, 1);
    for (std::size_t i = 0; i < p.size(); ++i) {
        gp.data()[i] = g.data()[i] * p.data()[i];
        gg.data()[i] = g.data()[i] * g.data()[i];
    }
    const PlanarImage mg = brute_box(g, r), mp = brute_box(p, r), mgp = brute_box(gp, r), mgg = brute_box(gg, r);
    PlanarImage a(w, h, 1), b(w, h, 1);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double var = mgg.data()[i] - mg.data()[i] * mg.data()[i];
        const double cov = mgp.data()[i] - mg.data()[i] * mp.data()[i];
        a.data()[i] = var + eps > 1e-12 ? cov / (var + eps) : 0.0;
        b.data()[i] = mp.data()[i] - a.data()[i] * mg.data()[i];
    }
    const PlanarImage ma = brute_box(a, r), mb = brute_box(b, r);
    PlanarImage out(w, h, 1);
    for (std::size_t i = 0; i < p.size(); ++i) out.data()[i] = ma.data()[i] * g.data()[i] + mb.data()[i];
    return out;
}

// Reference SSIM with the full 2-D window evaluated at every valid position.
inline double brute_ssim(const PlanarImage& a, const PlanarImage& b) {
    double g1[11], sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        g1[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5);
        sum += g1[i];
    }
    for (double& v : g1) v /= sum;
    const double C1 = 1e-4, C2 = 9e-4;
    double total = 0.0;
    int count = 0;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = 0; y + 11 <= a.height(); ++y)
            for (int x = 0; x + 11 <= a.width(); ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int j = 0; j < 11; ++j)
                    for (int i = 0; i < 11; ++i) {
                        const double wgt = g1[j] * g1[i];
                        const double va = a.at(c, y + j, x + i), vb = b.at(c, y + j, x + i);
                        ma += wgt * va;
                        mb += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                ++count;
            }
    return total / count;
}

// Nonzero taps of a kernel as (dy, dx, weight).
struct Tap {
    int dy, dx;
    double w;
};

inline std::vector<std::vector<Tap>> taps_of(const hazeforge::FilterBank& bank) {
    std::vector<std::vector<Tap>> out;
    for (const auto& k : bank.kernels()) {
        std::vector<Tap> taps;
        for (int dy = -k.radius(); dy <= k.radius(); ++dy)
            for (int dx = -k.radius(); dx <= k.radius(); ++dx)
                if (k.at(dy, dx) != 0.0) taps.push_back({dy, dx, k.at(dy, dx)});
        out.push_back(std::move(taps));
    }
    return out;
}

// Index read by a tap: out-of-bounds taps read the center sample.
inline int tap_index(int w, int h, int y, int x, const Tap& t) {
    const int yy = y + t.dy, xx = x + t.dx;
    return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? yy * w + xx : y * w + x;
}

inline double brute_objective(const std::vector<double>& t, const std::vector<double>& tb,
                              const std::vector<std::vector<double>>& W, const std::vector<std::vector<Tap>>& taps,
                              int w, int h, double lambda) {
    double e = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) e += 0.5 * lambda * (t[i] - tb[i]) * (t[i] - tb[i]);
    for (std::size_t j = 0; j < taps.size(); ++j)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double r = 0.0;
                for (const Tap& tp : taps[j]) r += tp.w * t[tap_index(w, h, y, x, tp)];
                e += W[j][y * w + x] * std::abs(r);
            }
    return e;
}

// Subgradient descent on the weighted-L1 objective with steps 1/(lambda k); returns the best
// objective value seen.
inline double subgradient_oracle(const PlanarImage& tb_img, const std::vector<PlanarImage>& W_img,
                                 const hazeforge::FilterBank& bank, double lambda, long iterations) {
    const int w = tb_img.width(), h = tb_img.height();
    const std::vector<double> tb(tb_img.data().begin(), tb_img.data().end());
    std::vector<std::vector<double>> W;
    for (const auto& img : W_img) W.emplace_back(img.data().begin(), img.data().end());
    const auto taps = taps_of(bank);
    std::vector<double> t = tb, g(t.size());
    double best = brute_objective(t, tb, W, taps, w, h, lambda);
    for (long k = 1; k <= iterations; ++k) {
        double e = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double d = t[i] - tb[i];
            g[i] = lambda * d;
            e += 0.5 * lambda * d * d;
        }
        for (std::size_t j = 0; j < taps.size(); ++j)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double r = 0.0;
                    for (const Tap& tp : taps[j]) r += tp.w * t[tap_index(w, h, y, x, tp)];
                    const double wt = W[j][y * w + x];
                    e += wt * std::abs(r);
                    if (r == 0.0) continue;
                    const double s = r > 0.0 ? wt : -wt;
                    for (const Tap& tp : taps[j]) g[tap_index(w, h, y, x, tp)] += s * tp.w;
                }
        best = std::min(best, e);
        const double step = 1.0 / (lambda * static_cast<double>(k));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] -= step * g[i];
    }
    return std::min(best, brute_objective(t, tb, W, taps, w, h, lambda));
}

// Which side of every ReLU and of the transmission clamp each sample falls on.
inline void append_kinks(const hazeforge::PfmActivations& a, const hazeforge::FusionConfig& cfg, std::vector<char>& sig) {
    auto signs = [&](const std::vector<double>& v) {
        for (double x : v) sig.push_back(x > 0.0);
    };
    for (const auto& v : a.pre_in) signs(v);
    for (const auto& v : a.pre_mlp1) signs(v);
    for (const auto& v : a.pre_gate1) signs(v);
    signs(a.pre_global1);
    signs(a.pre_refine1);
    for (double t : a.t_smooth) sig.push_back(t < cfg.t_floor ? 0 : (t > 1.0 ? 2 : 1));
}

struct GroupCheck {
    std::string name;
    double rel = 0.0;  // ||fd - analytic|| / max(||fd||, ||analytic||)
    std::size_t refined = 0;  // entries that needed a step below h
    std::size_t skipped = 0;  // entries with a kink even at the smallest step
};

// Central differences over every entry of every parameter group. `f` evaluates the scalar and
// fills the kink signature of its evaluation point. A difference quotient whose interval holds a
// kink does not estimate the derivative, so for such entries the step is halved (at most
// `max_halvings` times) until both probes share the base signature.
using ProbeFn = std::function<double(const hazeforge::PfmWeights&, std::vector<char>&)>;

inline std::vector<GroupCheck> fd_check(const hazeforge::PfmWeights& w, const hazeforge::PfmGradients& grads,
                                        const ProbeFn& f, double h, int max_halvings = 10) {
    std::vector<char> base;
    f(w, base);
    std::vector<GroupCheck> out;
    for (std::size_t g = 0; g < w.groups().size(); ++g) {
        const int gi = static_cast<int>(g);
        GroupCheck c{w[gi].name};
        double diff = 0.0, an_norm = 0.0, fd_norm = 0.0;
        for (std::size_t k = 0; k < w[gi].values.size(); ++k) {
            bool done = false;
            double step = h;
            for (int halving = 0; halving <= max_halvings && !done; ++halving, step *= 0.5) {
                hazeforge::PfmWeights wp = w, wm = w;
                wp[gi].values[k] = static_cast<float>(w[gi].values[k] + step);
                wm[gi].values[k] = static_cast<float>(w[gi].values[k] - step);
                std::vector<char> sp, sm;
                const double fp = f(wp, sp), fm = f(wm, sm);
                if (sp != base || sm != base) continue;
                const double fd = (fp - fm) / (static_cast<double>(wp[gi].values[k]) - wm[gi].values[k]);
                const double an = grads.groups[g][k];
                diff += (fd - an) * (fd - an);
                an_norm += an * an;
                fd_norm += fd * fd;
                if (halving > 0) ++c.refined;
                done = true;
            }
            if (!done) ++c.skipped;
        }
        const double scale = std::sqrt(std::max(an_norm, fd_norm));
        c.rel = scale > 0.0 ? std::sqrt(diff) / scale : 0.0;
        out.push_back(c);
    }
    return out;
}

}  // namespace testsupport
