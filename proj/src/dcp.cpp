#include "hazeforge/dcp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hazeforge/error.hpp"

namespace hazeforge {

void DcpConfig::validate() const {
    if (patch_radius < 0) throw InvalidArgument("dcp.patch_radius must be >= 0");
    if (!(omega > 0.0 && omega <= 1.0)) throw InvalidArgument("dcp.omega must be in (0,1]");
    if (!(t_floor > 0.0 && t_floor < 1.0)) throw InvalidArgument("dcp.t_floor must be in (0,1)");
    if (!(bright_fraction > 0.0 && bright_fraction <= 1.0))
        throw InvalidArgument("dcp.bright_fraction must be in (0,1]");
    if (!(guide_eps >= 0.0)) throw InvalidArgument("dcp.guide_eps must be >= 0");
}

PlanarImage dark_channel(const PlanarImage& rgb, int patch_radius) {
    return window_extremum(min_channel(rgb), WindowSpec{patch_radius}, Extremum::Min);
}

Atmosphere estimate_atmospheric_light(const PlanarImage& rgb, const PlanarImage& dark, double bright_fraction) {
    require_rgb(rgb, "estimate_atmospheric_light");
    require_single(dark, "estimate_atmospheric_light");
    if (!rgb.same_size(dark)) throw ShapeMismatch("dark channel size differs from image");
    if (!(bright_fraction > 0.0 && bright_fraction <= 1.0)) throw InvalidArgument("bright_fraction must be in (0,1]");

    const std::size_t n = dark.size();
    auto k = static_cast<std::size_t>(std::ceil(bright_fraction * static_cast<double>(n) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, n);

    auto d = dark.data();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto brighter = [&](std::size_t a, std::size_t b) { return d[a] > d[b] || (d[a] == d[b] && a < b); };
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), brighter);
    idx.resize(k);
    std::ranges::sort(idx);

    Atmosphere A;
    for (int c = 0; c < 3; ++c) {
        auto p = rgb.plane(c);
        double sum = 0.0;
        for (std::size_t i : idx) sum += p[i];
        A.rgb[c] = std::clamp(sum / static_cast<double>(k), kMinAtmosphere, 1.0);
    }
    return A;
}

PlanarImage estimate_transmission(const PlanarImage& rgb, const Atmosphere& A, const DcpConfig& cfg) {
    require_rgb(rgb, "estimate_transmission");
    if (!(cfg.omega >= 0.0 && cfg.omega <= 1.0)) throw InvalidArgument("omega must be in [0,1]");
    PlanarImage normalized = rgb;
    for (int c = 0; c < 3; ++c) {
        if (!(A[c] >= kMinAtmosphere)) throw InvalidArgument("atmospheric light below minimum");
        for (double& v : normalized.plane(c)) v = std::clamp(v / A[c], 0.0, 1.0);
    }
    PlanarImage t = dark_channel(normalized, cfg.patch_radius);
    for (double& v : t.data()) v = std::clamp(1.0 - cfg.omega * v, cfg.t_floor, 1.0);
    return t;
}

namespace {

struct GuideStats {
    PlanarImage mean;
    PlanarImage inv_denom;  // 1 / (var + eps), or 0 where the window is flat and eps == 0
};

GuideStats guide_stats(const PlanarImage& guide, int radius, double eps) {
    const WindowSpec w{radius};
    GuideStats s{box_filter(guide, w), PlanarImage(guide.width(), guide.height(), 1)};
    PlanarImage sq = guide;
    for (double& v : sq.data()) v *= v;
    const PlanarImage mean_sq = box_filter(sq, w);
    auto m = s.mean.data();
    auto m2 = mean_sq.data();
    auto inv = s.inv_denom.data();
    for (std::size_t i = 0; i < inv.size(); ++i) {
        const double denom = std::max(m2[i] - m[i] * m[i], 0.0) + eps;
        inv[i] = denom > 1e-12 ? 1.0 / denom : 0.0;
    }
    return s;
}

void check_guided_args(const PlanarImage& p, const PlanarImage& guide, int radius, double eps) {
    require_single(p, "guided_filter");
    require_single(guide, "guided_filter guide");
    if (!p.same_size(guide)) throw ShapeMismatch("guided_filter: input and guide differ in size");
    if (radius < 0) throw InvalidArgument("guided_filter: radius must be >= 0");
    if (!(eps >= 0.0)) throw InvalidArgument("guided_filter: eps must be >= 0");
}

}  // namespace

PlanarImage guided_filter(const PlanarImage& p, const PlanarImage& guide, int radius, double eps) {
    check_guided_args(p, guide, radius, eps);
    const WindowSpec w{radius};
    const GuideStats s = guide_stats(guide, radius, eps);

    PlanarImage gp = guide;
    {
        auto g = gp.data();
        auto pv = p.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pv[i];
    }
    const PlanarImage mean_p = box_filter(p, w);
    const PlanarImage mean_gp = box_filter(gp, w);

    PlanarImage a(p.width(), p.height(), 1), b(p.width(), p.height(), 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double mg = s.mean.data()[i];
        const double cov = mean_gp.data()[i] - mg * mean_p.data()[i];
        a.data()[i] = cov * s.inv_denom.data()[i];
        b.data()[i] = mean_p.data()[i] - a.data()[i] * mg;
    }
    const PlanarImage mean_a = box_filter(a, w);
    const PlanarImage mean_b = box_filter(b, w);
    PlanarImage out(p.width(), p.height(), 1);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = mean_a.data()[i] * guide.data()[i] + mean_b.data()[i];
    return out;
}

PlanarImage guided_filter_adjoint(const PlanarImage& grad_out, const PlanarImage& guide, int radius, double eps) {
    check_guided_args(grad_out, guide, radius, eps);
    const WindowSpec w{radius};
    const GuideStats s = guide_stats(guide, radius, eps);
    const std::size_t n = grad_out.size();
    auto g = grad_out.data();
    auto I = guide.data();
    auto mg = s.mean.data();

    PlanarImage gI(guide.width(), guide.height(), 1);
    for (std::size_t i = 0; i < n; ++i) gI.data()[i] = g[i] * I[i];
    const PlanarImage grad_a = box_filter_adjoint(gI, w);
    const PlanarImage grad_b = box_filter_adjoint(grad_out, w);

    PlanarImage grad_cov(guide.width(), guide.height(), 1), grad_mean_p(guide.width(), guide.height(), 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double ga = grad_a.data()[i] - mg[i] * grad_b.data()[i];
        const double gc = ga * s.inv_denom.data()[i];
        grad_cov.data()[i] = gc;
        grad_mean_p.data()[i] = grad_b.data()[i] - mg[i] * gc;
    }
    const PlanarImage from_gp = box_filter_adjoint(grad_cov, w);
    PlanarImage grad_p = box_filter_adjoint(grad_mean_p, w);
    for (std::size_t i = 0; i < n; ++i) grad_p.data()[i] += I[i] * from_gp.data()[i];
    return grad_p;
}

PlanarImage recover_radiance(const PlanarImage& hazy, const PlanarImage& t, const Atmosphere& A, double t_floor,
                             bool clamp_output) {
    require_valid(hazy);
    require_single(t, "recover_radiance transmission");
    if (!hazy.same_size(t)) throw ShapeMismatch("recover_radiance: transmission size differs from image");
    PlanarImage J(hazy.width(), hazy.height(), hazy.channels());
    auto tv = t.data();
    for (int c = 0; c < hazy.channels(); ++c) {
        auto src = hazy.plane(c);
        auto dst = J.plane(c);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (src[i] - A[c]) / std::max(tv[i], t_floor) + A[c];
    }
    if (clamp_output) J.clamp();
    return J;
}

DcpTrace dehaze_dcp_traced(const PlanarImage& hazy, const DcpConfig& cfg) {
    require_rgb(hazy, "dehaze_dcp");
    cfg.validate();
    DcpTrace trace;
    trace.dark = dark_channel(hazy, cfg.patch_radius);
    const Atmosphere A = estimate_atmospheric_light(hazy, trace.dark, cfg.bright_fraction);
    trace.t_raw = estimate_transmission(hazy, A, cfg);
    PlanarImage t = guided_filter(trace.t_raw, luminance(hazy), cfg.effective_guide_radius(), cfg.guide_eps);
    t.clamp(cfg.t_floor, 1.0);
    trace.result.radiance = recover_radiance(hazy, t, A, cfg.t_floor);
    trace.result.transmission = std::move(t);
    trace.result.atmosphere = A;
    return trace;
}

PriorResult dehaze_dcp(const PlanarImage& hazy, const DcpConfig& cfg) {
    return dehaze_dcp_traced(hazy, cfg).result;
}

}  // namespace hazeforge
