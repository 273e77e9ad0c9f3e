#pragma once

#include <string>

#include "hazeforge/image.hpp"

namespace hazeforge {

struct MetricReport {
    double psnr = 0.0;  // dB, +infinity for identical inputs
    double ssim = 0.0;
    double haziness = 0.0;
};

// 10 log10(1 / MSE) with peak 1; +infinity when MSE == 0.
double psnr(const PlanarImage& a, const PlanarImage& b);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, peak 1,
// averaged over valid window positions and then over channels.
double ssim(const PlanarImage& a, const PlanarImage& b);

struct SsimWithGradient {
    double value = 0.0;
    PlanarImage grad_a;  // d ssim / d a
};
SsimWithGradient ssim_with_gradient(const PlanarImage& a, const PlanarImage& b);

// Mean dark channel (patch radius 7); a gray image is its own min channel.
double haziness(const PlanarImage& rgb);

// Reference metrics of a prediction against ground truth; haziness is that of the prediction.
MetricReport evaluate(const PlanarImage& pred, const PlanarImage& ref);

// "inf" for the infinite sentinel, fixed 4 decimals otherwise.
std::string format_psnr(double db);

}  // namespace hazeforge
