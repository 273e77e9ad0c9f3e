#pragma once

#include <array>

#include "hazeforge/image.hpp"

namespace hazeforge {

// Per-channel atmospheric light. Estimated values are clamped to [kMinAtmosphere, 1].
struct Atmosphere {
    std::array<double, 3> rgb{1.0, 1.0, 1.0};

    double operator[](int c) const { return rgb[c]; }
    bool operator==(const Atmosphere&) const = default;
};

inline constexpr double kMinAtmosphere = 0.05;

// Output of one prior dehazer: radiance J, transmission t, atmosphere A.
struct PriorResult {
    PlanarImage radiance;
    PlanarImage transmission;
    Atmosphere atmosphere;
};

struct DcpConfig {
    int patch_radius = 7;
    double omega = 0.95;
    double t_floor = 0.1;
    double bright_fraction = 0.001;
    // Negative means 4 * patch_radius.
    int guide_radius = -1;
    double guide_eps = 1e-3;

    int effective_guide_radius() const { return guide_radius < 0 ? 4 * patch_radius : guide_radius; }
    void validate() const;
};

PlanarImage dark_channel(const PlanarImage& rgb, int patch_radius);

// Mean color over the ceil(bright_fraction * N) pixels with the largest dark-channel value
// (ties go to the smaller row-major index), clamped to [kMinAtmosphere, 1].
Atmosphere estimate_atmospheric_light(const PlanarImage& rgb, const PlanarImage& dark, double bright_fraction);

// Raw transmission 1 - omega * dark(I / A), quotient clamped to [0,1], result clamped to [t_floor, 1].
PlanarImage estimate_transmission(const PlanarImage& rgb, const Atmosphere& A, const DcpConfig& cfg);

// Closed-form guided filter of p with a single-channel guide; all means are clipped box means.
PlanarImage guided_filter(const PlanarImage& p, const PlanarImage& guide, int radius, double eps);

// Adjoint of guided_filter as a linear map of p (the guide is held fixed).
PlanarImage guided_filter_adjoint(const PlanarImage& grad_out, const PlanarImage& guide, int radius, double eps);

// J = (I - A) / max(t, t_floor) + A, clamped to [0,1] unless `clamp_output` is false.
PlanarImage recover_radiance(const PlanarImage& hazy, const PlanarImage& t, const Atmosphere& A, double t_floor,
                             bool clamp_output = true);

// The full prior pipeline: dark channel, A, raw t, guided refinement on luminance(I), recovery.
PriorResult dehaze_dcp(const PlanarImage& hazy, const DcpConfig& cfg = {});

// Intermediate maps of dehaze_dcp for diagnostics.
struct DcpTrace {
    PlanarImage dark;
    PlanarImage t_raw;
    PriorResult result;
};
DcpTrace dehaze_dcp_traced(const PlanarImage& hazy, const DcpConfig& cfg = {});

}  // namespace hazeforge
