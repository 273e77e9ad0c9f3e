#include "hazeforge/bccr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "hazeforge/error.hpp"

namespace hazeforge {

void BccrConfig::validate() const {
    for (int c = 0; c < 3; ++c)
        if (!(c0[c] < c1[c])) throw InvalidArgument("bccr: c0 must be below c1 in every channel");
    if (closing_radius < 0) throw InvalidArgument("bccr.closing_radius must be >= 0");
    if (!(sigma > 0.0)) throw InvalidArgument("bccr.sigma must be > 0");
    if (!(lambda_data > 0.0)) throw InvalidArgument("bccr.lambda_data must be > 0");
    if (!(beta0 > 0.0 && beta0 <= beta_max)) throw InvalidArgument("bccr: need 0 < beta0 <= beta_max");
    if (!(beta_scale > 1.0)) throw InvalidArgument("bccr.beta_scale must be > 1");
    if (!(t_floor > 0.0 && t_floor < 1.0)) throw InvalidArgument("bccr.t_floor must be in (0,1)");
    if (dark_radius < 0) throw InvalidArgument("bccr.dark_radius must be >= 0");
    if (!(bright_fraction > 0.0 && bright_fraction <= 1.0))
        throw InvalidArgument("bccr.bright_fraction must be in (0,1]");
    if (!(cg_tolerance > 0.0) || cg_max_iterations < 1 || inner_iterations < 1 || !(inner_tolerance >= 0.0))
        throw InvalidArgument("bccr: bad inner solver settings");
}

FilterBank::FilterBank(std::vector<Kernel> kernels) : kernels_(std::move(kernels)) {
    if (kernels_.empty()) throw InvalidArgument("filter bank is empty");
    for (const Kernel& k : kernels_) {
        if (k.size < 1 || k.size % 2 == 0) throw InvalidArgument("kernel size must be odd");
        if (k.weights.size() != static_cast<std::size_t>(k.size) * k.size)
            throw ShapeMismatch("kernel weight count does not match its size");
        const double sum = std::accumulate(k.weights.begin(), k.weights.end(), 0.0);
        const double scale = std::accumulate(k.weights.begin(), k.weights.end(), 0.0,
                                             [](double a, double w) { return a + std::abs(w); });
        if (std::abs(sum) > 1e-12 * std::max(scale, 1.0)) throw InvalidArgument("kernel coefficients must sum to 0");
    }
}

FilterBank FilterBank::standard() {
    std::vector<Kernel> ks;
    constexpr int dirs[8][2] = {{0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}};
    const double s = 1.0 / std::sqrt(2.0);
    for (const auto& d : dirs) {
        Kernel k{3, std::vector<double>(9, 0.0)};
        k.weights[4] = -s;
        k.weights[(d[0] + 1) * 3 + d[1] + 1] = s;
        ks.push_back(std::move(k));
    }
    const double l = 1.0 / std::sqrt(20.0);
    ks.push_back(Kernel{3, {0, l, 0, l, -4 * l, l, 0, l, 0}});
    return FilterBank(std::move(ks));
}

PlanarImage apply_kernel(const PlanarImage& img, const Kernel& k) {
    require_valid(img);
    const int W = img.width(), H = img.height(), r = k.radius();
    PlanarImage out(W, H, img.channels());
    for (int c = 0; c < img.channels(); ++c) {
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                const double w = k.at(dy, dx);
                if (w == 0.0 || (dy == 0 && dx == 0)) continue;
                const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) out.at(c, y, x) += w * (img.at(c, y + dy, x + dx) - img.at(c, y, x));
            }
    }
    return out;
}

PlanarImage apply_kernel_adjoint(const PlanarImage& img, const Kernel& k) {
    require_valid(img);
    const int W = img.width(), H = img.height(), r = k.radius();
    PlanarImage out(W, H, img.channels());
    for (int c = 0; c < img.channels(); ++c) {
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                const double w = k.at(dy, dx);
                if (w == 0.0 || (dy == 0 && dx == 0)) continue;
                const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) {
                        const double v = w * img.at(c, y, x);
                        out.at(c, y + dy, x + dx) += v;
                        out.at(c, y, x) -= v;
                    }
            }
    }
    return out;
}

PlanarImage boundary_bound(const PlanarImage& rgb, const Atmosphere& A, const BccrConfig& cfg) {
    require_rgb(rgb, "boundary_transmission");
    bool use_upper[3];
    for (int c = 0; c < 3; ++c) {
        if (!(A[c] > cfg.c0[c]))
            throw DegenerateAtmosphere("degenerate atmosphere: A[" + std::to_string(c) + "]=" + std::to_string(A[c]) +
                                       " does not exceed the lower radiance bound");
        if (A[c] >= cfg.c1[c] + 1e-6)
            throw DegenerateAtmosphere("degenerate atmosphere: A[" + std::to_string(c) + "]=" + std::to_string(A[c]) +
                                       " exceeds the upper radiance bound");
        // A on the upper bound: the upper ratio is undefined and carries no constraint.
        use_upper[c] = std::abs(A[c] - cfg.c1[c]) >= 1e-6;
    }
    PlanarImage t(rgb.width(), rgb.height(), 1);
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        double best = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < 3; ++c) {
            const double diff = A[c] - rgb.plane(c)[i];
            best = std::max(best, diff / (A[c] - cfg.c0[c]));
            if (use_upper[c]) best = std::max(best, diff / (A[c] - cfg.c1[c]));
        }
        dst[i] = std::clamp(best, cfg.t_floor, 1.0);
    }
    return t;
}

PlanarImage boundary_transmission(const PlanarImage& rgb, const Atmosphere& A, const BccrConfig& cfg) {
    const WindowSpec w{cfg.closing_radius};
    return window_extremum(window_extremum(boundary_bound(rgb, A, cfg), w, Extremum::Max), w, Extremum::Min);
}

std::vector<PlanarImage> contextual_weights(const PlanarImage& rgb, const FilterBank& bank, double sigma) {
    if (!(sigma > 0.0)) throw InvalidArgument("contextual_weights: sigma must be > 0");
    const PlanarImage gray = luminance(rgb);
    std::vector<PlanarImage> weights;
    weights.reserve(bank.size());
    const double denom = 2.0 * sigma * sigma;
    for (const Kernel& k : bank.kernels()) {
        PlanarImage w = apply_kernel(gray, k);
        for (double& v : w.data()) v = std::exp(-v * v / denom);
        weights.push_back(std::move(w));
    }
    return weights;
}

namespace {

void check_weights(const PlanarImage& t_b, const std::vector<PlanarImage>& weights, const FilterBank& bank) {
    require_single(t_b, "hqs_optimize");
    if (weights.size() != bank.size()) throw ShapeMismatch("one weight map per kernel required");
    for (const PlanarImage& w : weights)
        if (!w.same_shape(t_b)) throw ShapeMismatch("weight map size differs from transmission");
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// y = lambda x + beta sum_j D_j^T D_j x
PlanarImage normal_operator(const PlanarImage& x, const FilterBank& bank, double lambda, double beta) {
    PlanarImage y = x;
    for (double& v : y.data()) v *= lambda;
    for (const Kernel& k : bank.kernels()) {
        const PlanarImage dtd = apply_kernel_adjoint(apply_kernel(x, k), k);
        auto out = y.data();
        auto in = dtd.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += beta * in[i];
    }
    return y;
}

// Conjugate gradients for the SPD normal equations, warm-started from x.
int solve_normal_equations(PlanarImage& x, const PlanarImage& rhs, const FilterBank& bank, double lambda, double beta,
                           double tolerance, int max_iterations) {
    const double rhs_norm = std::sqrt(dot(rhs.data(), rhs.data()));
    const double target = tolerance * std::max(rhs_norm, 1e-300);
    PlanarImage r = rhs;
    {
        const PlanarImage ax = normal_operator(x, bank, lambda, beta);
        for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] -= ax.data()[i];
    }
    double rr = dot(r.data(), r.data());
    if (std::sqrt(rr) <= target) return 0;
    PlanarImage p = r;
    for (int it = 1; it <= max_iterations; ++it) {
        const PlanarImage ap = normal_operator(p, bank, lambda, beta);
        const double alpha = rr / dot(p.data(), ap.data());
        for (std::size_t i = 0; i < x.size(); ++i) {
            x.data()[i] += alpha * p.data()[i];
            r.data()[i] -= alpha * ap.data()[i];
        }
        const double rr_next = dot(r.data(), r.data());
        if (std::sqrt(rr_next) <= target) return it;
        const double ratio = rr_next / rr;
        for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = r.data()[i] + ratio * p.data()[i];
        rr = rr_next;
    }
    const double relative = std::sqrt(rr) / std::max(rhs_norm, 1e-300);
    throw SolverStall("solver stall: relative residual " + std::to_string(relative) + " after " +
                          std::to_string(max_iterations) + " iterations",
                      relative, max_iterations);
}

}  // namespace

double contextual_objective(const PlanarImage& t, const PlanarImage& t_b, const std::vector<PlanarImage>& weights,
                            const FilterBank& bank, double lambda_data) {
    check_weights(t_b, weights, bank);
    if (!t.same_shape(t_b)) throw ShapeMismatch("transmission sizes differ");
    double data = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double d = t.data()[i] - t_b.data()[i];
        data += d * d;
    }
    double reg = 0.0;
    for (std::size_t j = 0; j < bank.size(); ++j) {
        const PlanarImage resp = apply_kernel(t, bank[j]);
        for (std::size_t i = 0; i < resp.size(); ++i) reg += weights[j].data()[i] * std::abs(resp.data()[i]);
    }
    return 0.5 * lambda_data * data + reg;
}

HqsResult hqs_optimize(const PlanarImage& t_b, const std::vector<PlanarImage>& weights, const FilterBank& bank,
                       const BccrConfig& cfg) {
    check_weights(t_b, weights, bank);
    cfg.validate();
    HqsResult res;
    PlanarImage t = t_b;
    const double lambda = cfg.lambda_data;
    double beta = cfg.beta0;
    for (;;) {
        for (int inner = 0; inner < cfg.inner_iterations; ++inner) {
            PlanarImage rhs = t_b;
            for (double& v : rhs.data()) v *= lambda;
            for (std::size_t j = 0; j < bank.size(); ++j) {
                PlanarImage u = apply_kernel(t, bank[j]);
                auto w = weights[j].data();
                for (std::size_t i = 0; i < u.size(); ++i) {
                    double& v = u.data()[i];
                    const double thr = w[i] / beta;
                    v = v > thr ? v - thr : (v < -thr ? v + thr : 0.0);
                }
                const PlanarImage back = apply_kernel_adjoint(u, bank[j]);
                for (std::size_t i = 0; i < rhs.size(); ++i) rhs.data()[i] += beta * back.data()[i];
            }
            const PlanarImage previous = t;
            res.cg_iterations +=
                solve_normal_equations(t, rhs, bank, lambda, beta, cfg.cg_tolerance, cfg.cg_max_iterations);
            double moved = 0.0;
            for (std::size_t i = 0; i < t.size(); ++i)
                moved = std::max(moved, std::abs(t.data()[i] - previous.data()[i]));
            if (moved <= cfg.inner_tolerance) break;
        }
        res.objective_trace.push_back(contextual_objective(t, t_b, weights, bank, lambda));
        res.betas.push_back(beta);
        if (beta >= cfg.beta_max) break;
        beta = std::min(beta * cfg.beta_scale, cfg.beta_max);
    }
    t.clamp(cfg.t_floor, 1.0);
    res.transmission = std::move(t);
    return res;
}

BccrTrace dehaze_bccr_traced(const PlanarImage& hazy, const BccrConfig& cfg, std::optional<Atmosphere> atmosphere) {
    require_rgb(hazy, "dehaze_bccr");
    cfg.validate();
    BccrTrace trace;
    const Atmosphere A = atmosphere ? *atmosphere
                                    : estimate_atmospheric_light(hazy, dark_channel(hazy, cfg.dark_radius),
                                                                 cfg.bright_fraction);
    const FilterBank bank = FilterBank::standard();
    trace.t_bound = boundary_transmission(hazy, A, cfg);
    trace.weights = contextual_weights(hazy, bank, cfg.sigma);
    trace.hqs = hqs_optimize(trace.t_bound, trace.weights, bank, cfg);
    trace.result.radiance = recover_radiance(hazy, trace.hqs.transmission, A, cfg.t_floor);
    trace.result.transmission = trace.hqs.transmission;
    trace.result.atmosphere = A;
    return trace;
}

PriorResult dehaze_bccr(const PlanarImage& hazy, const BccrConfig& cfg, std::optional<Atmosphere> atmosphere) {
    return dehaze_bccr_traced(hazy, cfg, atmosphere).result;
}

}  // namespace hazeforge
