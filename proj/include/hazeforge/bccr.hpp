#pragma once

#include <array>
#include <optional>
#include <vector>

#include "hazeforge/dcp.hpp"
#include "hazeforge/image.hpp"

namespace hazeforge {

struct BccrConfig {
    std::array<double, 3> c0{0.078, 0.078, 0.078};
    std::array<double, 3> c1{1.0, 1.0, 1.0};
    int closing_radius = 3;
    double sigma = 0.5;
    double lambda_data = 2.0;
    double beta0 = 1.0;
    double beta_max = 256.0;
    double beta_scale = 2.0 * 1.4142135623730951;
    double t_floor = 0.05;
    // Atmosphere estimation shares the dark-channel estimator.
    int dark_radius = 7;
    double bright_fraction = 0.001;
    // Inner linear solve: relative normal-equation residual and iteration cap.
    double cg_tolerance = 1e-6;
    int cg_max_iterations = 500;
    // Alternations per beta: stop once no sample of t moves more than inner_tolerance.
    int inner_iterations = 100;
    double inner_tolerance = 1e-6;

    void validate() const;
};

// Odd-sized square convolution kernel, row-major.
struct Kernel {
    int size = 3;
    std::vector<double> weights;

    int radius() const { return size / 2; }
    double at(int dy, int dx) const { return weights[(dy + radius()) * size + dx + radius()]; }
};

// Ordered set of zero-sum kernels D_j.
class FilterBank {
public:
    explicit FilterBank(std::vector<Kernel> kernels);

    // Eight unit-norm first-order differences at 45 degree steps, then a unit-norm 3x3 Laplacian.
    static FilterBank standard();

    const std::vector<Kernel>& kernels() const { return kernels_; }
    std::size_t size() const { return kernels_.size(); }
    const Kernel& operator[](std::size_t j) const { return kernels_[j]; }

private:
    std::vector<Kernel> kernels_;
};

// Kernel response where out-of-bounds taps read the center sample, so zero-sum kernels give
// exactly zero on constant regions including the border.
PlanarImage apply_kernel(const PlanarImage& img, const Kernel& k);
PlanarImage apply_kernel_adjoint(const PlanarImage& img, const Kernel& k);

// Per-pixel boundary-constraint bound before the morphological closing.
PlanarImage boundary_bound(const PlanarImage& rgb, const Atmosphere& A, const BccrConfig& cfg);
// boundary_bound followed by a closing (windowed max, then windowed min) of radius closing_radius.
PlanarImage boundary_transmission(const PlanarImage& rgb, const Atmosphere& A, const BccrConfig& cfg);

// W_j = exp(-|D_j * luminance(I)|^2 / (2 sigma^2))
std::vector<PlanarImage> contextual_weights(const PlanarImage& rgb, const FilterBank& bank, double sigma);

// (lambda/2)||t - t_b||^2 + sum_j ||W_j o (D_j * t)||_1
double contextual_objective(const PlanarImage& t, const PlanarImage& t_b, const std::vector<PlanarImage>& weights,
                            const FilterBank& bank, double lambda_data);

struct HqsResult {
    PlanarImage transmission;
    // Objective after each outer (beta) iteration.
    std::vector<double> objective_trace;
    std::vector<double> betas;
    int cg_iterations = 0;
};

// Half-quadratic splitting with beta continuation; the quadratic subproblem is solved by
// conjugate gradients. Throws SolverStall if an inner solve misses its tolerance.
HqsResult hqs_optimize(const PlanarImage& t_b, const std::vector<PlanarImage>& weights, const FilterBank& bank,
                       const BccrConfig& cfg);

struct BccrTrace {
    PlanarImage t_bound;
    std::vector<PlanarImage> weights;
    HqsResult hqs;
    PriorResult result;
};

// When `atmosphere` is empty it is estimated with the dark-channel estimator.
BccrTrace dehaze_bccr_traced(const PlanarImage& hazy, const BccrConfig& cfg = {},
                             std::optional<Atmosphere> atmosphere = std::nullopt);
PriorResult dehaze_bccr(const PlanarImage& hazy, const BccrConfig& cfg = {},
                        std::optional<Atmosphere> atmosphere = std::nullopt);

}  // namespace hazeforge
