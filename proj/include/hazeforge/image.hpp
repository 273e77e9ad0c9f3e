#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hazeforge {

// Floating-point raster stored plane by plane: all of channel 0, then channel 1, ...
// Samples are nominally in [0,1]. Channel count is 1 or 3.
class PlanarImage {
public:
    PlanarImage() = default;
    PlanarImage(int width, int height, int channels, double fill = 0.0);
    PlanarImage(int width, int height, int channels, std::vector<double> data);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t plane_size() const { return static_cast<std::size_t>(width_) * height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> plane(int c);
    std::span<const double> plane(int c) const;
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    bool same_shape(const PlanarImage& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }
    bool same_size(const PlanarImage& o) const { return width_ == o.width_ && height_ == o.height_; }

    // Single-channel copy of channel c.
    PlanarImage channel(int c) const;
    // Crop of the rectangle [x0, x0+w) x [y0, y0+h).
    PlanarImage crop(int x0, int y0, int w, int h) const;
    // Clamps every sample into [lo, hi] in place.
    void clamp(double lo = 0.0, double hi = 1.0);

    bool operator==(const PlanarImage& o) const = default;

private:
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

// Square window of half-size `radius`, clipped at the image border. Normalization and
// extrema use only the in-bounds pixels.
struct WindowSpec {
    int radius = 0;
};

enum class Extremum { Min, Max };

// Throws InvalidArgument for an empty image or a bad channel count.
void require_valid(const PlanarImage& img);
void require_rgb(const PlanarImage& img, const char* what);
void require_single(const PlanarImage& img, const char* what);

// Per-channel mean over the clipped window; O(1) per pixel via integral images.
PlanarImage box_filter(const PlanarImage& img, WindowSpec w);
// Adjoint of box_filter as a linear map.
PlanarImage box_filter_adjoint(const PlanarImage& img, WindowSpec w);
// Per-channel min or max over the clipped window (separable monotone-deque passes).
PlanarImage window_extremum(const PlanarImage& img, WindowSpec w, Extremum mode);

PlanarImage min_channel(const PlanarImage& rgb);
// 0.299 R + 0.587 G + 0.114 B
PlanarImage luminance(const PlanarImage& rgb);

}  // namespace hazeforge
