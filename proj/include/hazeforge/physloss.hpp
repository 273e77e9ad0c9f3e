#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hazeforge/bccr.hpp"
#include "hazeforge/dcp.hpp"
#include "hazeforge/fusion.hpp"
#include "hazeforge/image.hpp"

namespace hazeforge {

struct LossConfig {
    double lambda_ssim = 0.2;
    double lambda_phy = 1.0;

    void validate() const;
};

struct LossValue {
    double value = 0.0;
    PlanarImage grad;  // with respect to the first argument
};

// mean|a - b| + lambda_ssim (1 - SSIM(a, b)). SSIM is skipped when lambda_ssim == 0,
// which lets images smaller than the SSIM window through.
LossValue l_rec(const PlanarImage& a, const PlanarImage& b, const LossConfig& cfg);

struct PhysLoss {
    double value = 0.0;
    PlanarImage phy;     // J t + A (1 - t)
    PlanarImage grad_j;  // same shape as J
    PlanarImage grad_t;  // 1 channel
};

// lambda_phy * l_rec(I_phy, I), with I_phy rebuilt from (J, t, A).
PhysLoss l_phy(const PlanarImage& hazy, const PlanarImage& j_ref, const PlanarImage& t_ref, const Atmosphere& A,
               const LossConfig& cfg);

struct TrainConfig {
    int steps = 200;
    int batch = 4;
    double lr = 1e-3;
    double momentum = 0.9;
    int crop = 128;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainResult {
    PfmWeights weights;
    std::vector<double> loss_trace;  // mean batch loss before each update
};

struct PriorConfigs {
    DcpConfig dcp;
    BccrConfig bccr;
    FusionConfig fusion;
};

TrainResult train_fusion(const std::vector<PlanarImage>& hazy, const PfmWeights& init, const TrainConfig& tcfg,
                         const LossConfig& lcfg, const PriorConfigs& priors = {}, int threads = 1);
// Trains on the sorted *.png files of a directory.
TrainResult train_fusion(const std::filesystem::path& hazy_dir, const PfmWeights& init, const TrainConfig& tcfg,
                         const LossConfig& lcfg, const PriorConfigs& priors = {}, int threads = 1);

// "step,value" lines with a header.
std::string format_loss_trace(const std::vector<double>& trace);

}  // namespace hazeforge
