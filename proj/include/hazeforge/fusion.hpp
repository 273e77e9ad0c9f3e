#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hazeforge/dcp.hpp"
#include "hazeforge/image.hpp"

namespace hazeforge {

// Parameter groups of the fusion network and transmission refiner, in file order.
// Linear maps are stored row-major as [out][in].
namespace pfm {
enum Group : int {
    // Feature extractors, one block of six per input (dcp, bccr, hazy).
    kExtractDcp = 0,
    kExtractBccr = 6,
    kExtractHazy = 12,
    // Offsets inside an extractor block.
    kInWeight = 0,
    kInBias = 1,
    kMlp1Weight = 2,
    kMlp1Bias = 3,
    kMlp2Weight = 4,
    kMlp2Bias = 5,
    // Guidance blocks, four per fused branch (dcp, bccr).
    kGuideDcp = 18,
    kGuideBccr = 22,
    kGate1Weight = 0,
    kGate1Bias = 1,
    kGate2Weight = 2,
    kGate2Bias = 3,
    // Global re-weighting MLP 2d -> d -> 2.
    kGlobal1Weight = 26,
    kGlobal1Bias = 27,
    kGlobal2Weight = 28,
    kGlobal2Bias = 29,
    // Per-pixel gated fusion head 2d -> 2.
    kHeadWeight = 30,
    kHeadBias = 31,
    // Transmission refiner 6 -> d -> 1.
    kRefine1Weight = 32,
    kRefine1Bias = 33,
    kRefine2Weight = 34,
    kRefine2Bias = 35,
    kGroupCount = 36,
};
}  // namespace pfm

struct ParamTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

class PfmWeights {
public:
    static constexpr int kDefaultWidth = 16;

    // All-zero parameters of feature width d.
    static PfmWeights zeros(int d = kDefaultWidth);
    // Linear maps uniform in +-1/sqrt(fan_in), biases zero.
    static PfmWeights initialize(std::uint64_t seed, int d = kDefaultWidth);
    // Expected tensor shapes for width d, in group order.
    static std::vector<std::vector<std::uint32_t>> shapes(int d);
    static std::vector<std::string> names();

    int width() const { return d_; }
    std::vector<ParamTensor>& groups() { return groups_; }
    const std::vector<ParamTensor>& groups() const { return groups_; }
    ParamTensor& operator[](int g) { return groups_[g]; }
    const ParamTensor& operator[](int g) const { return groups_[g]; }
    std::size_t parameter_count() const;

    bool operator==(const PfmWeights& o) const;

private:
    int d_ = 0;
    std::vector<ParamTensor> groups_;
};

// Gradient buffers aligned with PfmWeights::groups().
struct PfmGradients {
    std::vector<std::vector<double>> groups;

    static PfmGradients zeros_like(const PfmWeights& w);
    void add(const PfmGradients& o, double scale = 1.0);
    double squared_norm() const;
};

// Little-endian "PFMW", u32 version, u32 d, then per group: u32 rank, u32 dims[rank], float32 data.
void save_weights(const PfmWeights& w, const std::filesystem::path& path);
PfmWeights load_weights(const std::filesystem::path& path);

struct FusionConfig {
    double t_floor = 0.1;
    // Guided smoothing of the refiner output, guided by luminance(I).
    int smooth_radius = 8;
    double smooth_eps = 1e-3;
    // Dark-channel input of the refiner.
    int dark_radius = 7;
};

struct FusionOutput {
    PlanarImage fused;       // J_fuse
    PlanarImage t_ref;       // after smoothing and clamping
    PlanarImage t_mlp;       // per-pixel refiner output before smoothing
    std::array<PlanarImage, 2> gates;  // per-pixel g1 (dcp) and g2 (bccr)
    std::array<double, 2> global_weights{0.5, 0.5};
};

// Everything the backward pass needs.
struct PfmActivations {
    int d = 0;
    std::size_t n = 0;
    FusionConfig cfg;
    PlanarImage hazy, j_dcp, j_bccr, t_dcp, t_bccr, dark, guide;
    // Per input (dcp, bccr, hazy), n x d each.
    std::array<std::vector<double>, 3> pre_in, pre_mlp1, features;
    // Per fused branch, n x d each: features after adding the hazy features, gate pre-activations, gates.
    std::array<std::vector<double>, 2> mixed, pre_gate1, gate;
    std::vector<double> concat;  // n x 2d
    std::vector<double> pooled, pre_global1;
    std::array<double, 2> global_weights{};
    std::vector<double> pixel_gates;  // n x 2
    std::vector<double> pre_refine1;  // n x d
    std::vector<double> refine_sigmoid;
    std::vector<double> t_smooth;
};

// Post-processing slot for the fused radiance. The identity keeps J_ref = J_fuse.
using RadianceRefiner = std::function<PlanarImage(const PlanarImage&)>;
RadianceRefiner identity_refiner();

// Fuses the two prior results. `retain` (optional) receives the activations for pfm_backward.
FusionOutput pfm_forward(const PlanarImage& hazy, const PriorResult& dcp, const PriorResult& bccr,
                         const PfmWeights& w, const FusionConfig& cfg = {}, PfmActivations* retain = nullptr);

// Exact parameter gradients for upstream gradients on J_fuse (3ch) and t_ref (1ch).
PfmGradients pfm_backward(const PfmActivations& act, const PfmWeights& w, const PlanarImage& grad_fused,
                          const PlanarImage& grad_t_ref);

}  // namespace hazeforge
