#include "hazeforge/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "hazeforge/dcp.hpp"
#include "hazeforge/error.hpp"

namespace hazeforge {

namespace {

constexpr int kWindow = 11;
constexpr int kHalf = kWindow / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_pair(const PlanarImage& a, const PlanarImage& b, const char* what) {
    require_valid(a);
    require_valid(b);
    if (!a.same_shape(b)) throw ShapeMismatch(std::string(what) + ": image dimensions differ");
}

const std::array<double, kWindow>& gaussian_taps() {
    static const std::array<double, kWindow> taps = [] {
        std::array<double, kWindow> t{};
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            const double x = i - kHalf;
            t[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
            sum += t[i];
        }
        for (double& v : t) v /= sum;
        return t;
    }();
    return taps;
}

// Separable Gaussian correlation over valid positions: W x H -> (W-10) x (H-10).
std::vector<double> gauss_valid(std::span<const double> src, int W, int H) {
    const auto& g = gaussian_taps();
    const int ow = W - kWindow + 1, oh = H - kWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWindow; ++k) s += g[k] * src[static_cast<std::size_t>(y) * W + x + k];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWindow; ++k) s += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

// Adjoint of gauss_valid: (W-10) x (H-10) -> W x H.
std::vector<double> gauss_valid_adjoint(const std::vector<double>& src, int W, int H) {
    const auto& g = gaussian_taps();
    const int ow = W - kWindow + 1, oh = H - kWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * H, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double v = src[static_cast<std::size_t>(y) * ow + x];
            for (int k = 0; k < kWindow; ++k) tmp[static_cast<std::size_t>(y + k) * ow + x] += g[k] * v;
        }
    std::vector<double> out(static_cast<std::size_t>(W) * H, 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < ow; ++x) {
            const double v = tmp[static_cast<std::size_t>(y) * ow + x];
            for (int k = 0; k < kWindow; ++k) out[static_cast<std::size_t>(y) * W + x + k] += g[k] * v;
        }
    return out;
}

std::vector<double> product(std::span<const double> a, std::span<const double> b) {
    std::vector<double> p(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) p[i] = a[i] * b[i];
    return p;
}

SsimWithGradient ssim_impl(const PlanarImage& a, const PlanarImage& b, bool want_gradient) {
    check_pair(a, b, "ssim");
    const int W = a.width(), H = a.height();
    if (W < kWindow || H < kWindow) throw InvalidArgument("ssim: image smaller than the 11x11 window");
    const std::size_t positions = static_cast<std::size_t>(W - kWindow + 1) * (H - kWindow + 1);
    const double scale = 1.0 / (static_cast<double>(positions) * a.channels());

    SsimWithGradient res;
    if (want_gradient) res.grad_a = PlanarImage(W, H, a.channels());
    double total = 0.0;
    for (int c = 0; c < a.channels(); ++c) {
        auto pa = a.plane(c), pb = b.plane(c);
        const auto mu_a = gauss_valid(pa, W, H), mu_b = gauss_valid(pb, W, H);
        const auto e_aa = gauss_valid(product(pa, pa), W, H);
        const auto e_bb = gauss_valid(product(pb, pb), W, H);
        const auto e_ab = gauss_valid(product(pa, pb), W, H);
        std::vector<double> m1, m2, m3;
        if (want_gradient) {
            m1.resize(positions);
            m2.resize(positions);
            m3.resize(positions);
        }
        double sum = 0.0;
        for (std::size_t p = 0; p < positions; ++p) {
            const double ma = mu_a[p], mb = mu_b[p];
            const double va = e_aa[p] - ma * ma, vb = e_bb[p] - mb * mb, cov = e_ab[p] - ma * mb;
            const double n1 = 2.0 * ma * mb + kC1, n2 = 2.0 * cov + kC2;
            const double d1 = ma * ma + mb * mb + kC1, d2 = va + vb + kC2;
            const double s = (n1 * n2) / (d1 * d2);
            sum += s;
            if (want_gradient) {
                const double ds_dmu = 2.0 * mb * n2 / (d1 * d2) - s * 2.0 * ma / d1;
                const double ds_dvar = -s / d2;
                const double ds_dcov = 2.0 * n1 / (d1 * d2);
                m1[p] = ds_dmu - 2.0 * ma * ds_dvar - mb * ds_dcov;
                m2[p] = ds_dvar;
                m3[p] = ds_dcov;
            }
        }
        total += sum;
        if (want_gradient) {
            const auto g1 = gauss_valid_adjoint(m1, W, H);
            const auto g2 = gauss_valid_adjoint(m2, W, H);
            const auto g3 = gauss_valid_adjoint(m3, W, H);
            auto dst = res.grad_a.plane(c);
            for (std::size_t i = 0; i < dst.size(); ++i)
                dst[i] = scale * (g1[i] + 2.0 * pa[i] * g2[i] + pb[i] * g3[i]);
        }
    }
    res.value = total / (static_cast<double>(positions) * a.channels());
    return res;
}

}  // namespace

double psnr(const PlanarImage& a, const PlanarImage& b) {
    check_pair(a, b, "psnr");
    double sse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const PlanarImage& a, const PlanarImage& b) { return ssim_impl(a, b, false).value; }

SsimWithGradient ssim_with_gradient(const PlanarImage& a, const PlanarImage& b) { return ssim_impl(a, b, true); }

double haziness(const PlanarImage& rgb) {
    require_valid(rgb);
    const PlanarImage dark = rgb.channels() == 3 ? dark_channel(rgb, 7)
                                                 : window_extremum(rgb, WindowSpec{7}, Extremum::Min);
    double sum = 0.0;
    for (double v : dark.data()) sum += v;
    return sum / static_cast<double>(dark.size());
}

MetricReport evaluate(const PlanarImage& pred, const PlanarImage& ref) {
    return MetricReport{psnr(pred, ref), ssim(pred, ref), haziness(pred)};
}

std::string format_psnr(double db) {
    if (std::isinf(db)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", db);
    return buf;
}

}  // namespace hazeforge
