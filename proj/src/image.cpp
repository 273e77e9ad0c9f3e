#include "hazeforge/image.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "hazeforge/error.hpp"

namespace hazeforge {

PlanarImage::PlanarImage(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0) throw InvalidArgument("image dimensions must be positive");
    if (channels != 1 && channels != 3) throw InvalidArgument("image must have 1 or 3 channels");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

PlanarImage::PlanarImage(int width, int height, int channels, std::vector<double> data)
    : PlanarImage(width, height, channels) {
    if (data.size() != data_.size()) throw InvalidArgument("sample count does not match width*height*channels");
    data_ = std::move(data);
}

std::span<double> PlanarImage::plane(int c) {
    return std::span<double>(data_).subspan(c * plane_size(), plane_size());
}

std::span<const double> PlanarImage::plane(int c) const {
    return std::span<const double>(data_).subspan(c * plane_size(), plane_size());
}

PlanarImage PlanarImage::channel(int c) const {
    if (c < 0 || c >= channels_) throw InvalidArgument("channel index out of range");
    PlanarImage out(width_, height_, 1);
    std::ranges::copy(plane(c), out.data().begin());
    return out;
}

PlanarImage PlanarImage::crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > width_ || y0 + h > height_)
        throw InvalidArgument("crop rectangle outside image");
    PlanarImage out(w, h, channels_);
    for (int c = 0; c < channels_; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = at(c, y0 + y, x0 + x);
    return out;
}

void PlanarImage::clamp(double lo, double hi) {
    for (double& v : data_) v = std::clamp(v, lo, hi);
}

void require_valid(const PlanarImage& img) {
    if (img.empty()) throw InvalidArgument("empty image");
    for (double v : img.data())
        if (!std::isfinite(v)) throw InvalidArgument("image contains a non-finite sample");
}

void require_rgb(const PlanarImage& img, const char* what) {
    require_valid(img);
    if (img.channels() != 3) throw InvalidArgument(std::string(what) + ": expected a 3-channel image");
}

void require_single(const PlanarImage& img, const char* what) {
    require_valid(img);
    if (img.channels() != 1) throw InvalidArgument(std::string(what) + ": expected a 1-channel image");
}

namespace {

void check_radius(WindowSpec w) {
    if (w.radius < 0) throw InvalidArgument("window radius must be >= 0");
}

// Unnormalized clipped-window sums of (src - offset) through a summed-area table.
void window_sums(std::span<const double> src, int width, int height, int r, double offset,
                 std::vector<double>& sat, std::span<double> out) {
    const std::size_t stride = width + 1;
    sat.assign(stride * (height + 1), 0.0);
    for (int y = 0; y < height; ++y) {
        double row = 0.0;
        for (int x = 0; x < width; ++x) {
            row += src[static_cast<std::size_t>(y) * width + x] - offset;
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    for (int y = 0; y < height; ++y) {
        const int y0 = std::max(0, y - r), y1 = std::min(height - 1, y + r) + 1;
        for (int x = 0; x < width; ++x) {
            const int x0 = std::max(0, x - r), x1 = std::min(width - 1, x + r) + 1;
            out[static_cast<std::size_t>(y) * width + x] =
                sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0] + sat[y0 * stride + x0];
        }
    }
}

double window_count(int x, int y, int width, int height, int r) {
    const int nx = std::min(width - 1, x + r) - std::max(0, x - r) + 1;
    const int ny = std::min(height - 1, y + r) - std::max(0, y - r) + 1;
    return static_cast<double>(nx) * ny;
}

// Sliding min/max over a strided 1-D line with a clipped window.
template <typename Better>
void extremum_line(const double* in, double* out, int n, std::ptrdiff_t stride, int r, Better better) {
    std::deque<int> q;
    int next = 0;
    for (int i = 0; i < n; ++i) {
        const int hi = std::min(n - 1, i + r);
        for (; next <= hi; ++next) {
            while (!q.empty() && !better(in[q.back() * stride], in[next * stride])) q.pop_back();
            q.push_back(next);
        }
        while (q.front() < i - r) q.pop_front();
        out[i * stride] = in[q.front() * stride];
    }
}

}  // namespace

PlanarImage box_filter(const PlanarImage& img, WindowSpec w) {
    require_valid(img);
    check_radius(w);
    if (w.radius == 0) return img;
    const int W = img.width(), H = img.height();
    PlanarImage out(W, H, img.channels());
    std::vector<double> sat;
    for (int c = 0; c < img.channels(); ++c) {
        auto src = img.plane(c);
        auto dst = out.plane(c);
        // Offsetting by a reference sample keeps constant planes exact.
        const double offset = src[0];
        window_sums(src, W, H, w.radius, offset, sat, dst);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double& v = dst[static_cast<std::size_t>(y) * W + x];
                v = offset + v / window_count(x, y, W, H, w.radius);
            }
    }
    return out;
}

PlanarImage box_filter_adjoint(const PlanarImage& img, WindowSpec w) {
    require_valid(img);
    check_radius(w);
    if (w.radius == 0) return img;
    const int W = img.width(), H = img.height();
    PlanarImage scaled(W, H, img.channels());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                scaled.at(c, y, x) = img.at(c, y, x) / window_count(x, y, W, H, w.radius);
    PlanarImage out(W, H, img.channels());
    std::vector<double> sat;
    for (int c = 0; c < img.channels(); ++c) window_sums(scaled.plane(c), W, H, w.radius, 0.0, sat, out.plane(c));
    return out;
}

PlanarImage window_extremum(const PlanarImage& img, WindowSpec w, Extremum mode) {
    require_valid(img);
    check_radius(w);
    if (w.radius == 0) return img;
    const int W = img.width(), H = img.height();
    PlanarImage tmp(W, H, img.channels()), out(W, H, img.channels());
    auto run = [&](auto better) {
        for (int c = 0; c < img.channels(); ++c) {
            const double* src = img.plane(c).data();
            double* mid = tmp.plane(c).data();
            double* dst = out.plane(c).data();
            for (int y = 0; y < H; ++y)
                extremum_line(src + static_cast<std::ptrdiff_t>(y) * W, mid + static_cast<std::ptrdiff_t>(y) * W, W, 1,
                              w.radius, better);
            for (int x = 0; x < W; ++x) extremum_line(mid + x, dst + x, H, W, w.radius, better);
        }
    };
    if (mode == Extremum::Min)
        run([](double a, double b) { return a < b; });
    else
        run([](double a, double b) { return a > b; });
    return out;
}

PlanarImage min_channel(const PlanarImage& rgb) {
    require_rgb(rgb, "min_channel");
    PlanarImage out(rgb.width(), rgb.height(), 1);
    auto r = rgb.plane(0), g = rgb.plane(1), b = rgb.plane(2);
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::min({r[i], g[i], b[i]});
    return out;
}

PlanarImage luminance(const PlanarImage& rgb) {
    require_rgb(rgb, "luminance");
    PlanarImage out(rgb.width(), rgb.height(), 1);
    auto r = rgb.plane(0), g = rgb.plane(1), b = rgb.plane(2);
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    return out;
}

}  // namespace hazeforge
