#include "hazeforge/physloss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hazeforge/bccr.hpp"
#include "hazeforge/error.hpp"
#include "hazeforge/hazesim.hpp"
#include "hazeforge/metrics.hpp"
#include "hazeforge/parallel.hpp"
#include "hazeforge/png_io.hpp"
#include "hazeforge/rng.hpp"

namespace hazeforge {

void LossConfig::validate() const {
    if (!(lambda_ssim >= 0.0) || !(lambda_phy >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

void TrainConfig::validate() const {
    if (steps < 1) throw ConfigError("train.steps must be >= 1");
    if (batch < 1) throw ConfigError("train.batch must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0,1)");
    if (crop < 11) throw ConfigError("train.crop must be >= 11");
}

LossValue l_rec(const PlanarImage& a, const PlanarImage& b, const LossConfig& cfg) {
    require_valid(a);
    require_valid(b);
    if (!a.same_shape(b)) throw ShapeMismatch("l_rec: image dimensions differ");
    LossValue out;
    out.grad = PlanarImage(a.width(), a.height(), a.channels());
    const double inv_n = 1.0 / static_cast<double>(a.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a.data()[i] - b.data()[i];
        sum += std::abs(diff);
        out.grad.data()[i] = diff > 0.0 ? inv_n : (diff < 0.0 ? -inv_n : 0.0);
    }
    out.value = sum * inv_n;
    if (cfg.lambda_ssim > 0.0) {
        const SsimWithGradient s = ssim_with_gradient(a, b);
        out.value += cfg.lambda_ssim * (1.0 - s.value);
        for (std::size_t i = 0; i < a.size(); ++i) out.grad.data()[i] -= cfg.lambda_ssim * s.grad_a.data()[i];
    }
    return out;
}

PhysLoss l_phy(const PlanarImage& hazy, const PlanarImage& j_ref, const PlanarImage& t_ref, const Atmosphere& A,
               const LossConfig& cfg) {
    require_valid(hazy);
    if (!hazy.same_shape(j_ref)) throw ShapeMismatch("l_phy: radiance and hazy image differ");
    require_single(t_ref, "l_phy transmission");
    if (!hazy.same_size(t_ref)) throw ShapeMismatch("l_phy: transmission size differs from image");

    PhysLoss out;
    out.phy = apply_haze(j_ref, t_ref, A);
    const LossValue rec = l_rec(out.phy, hazy, cfg);
    out.value = cfg.lambda_phy * rec.value;
    out.grad_j = PlanarImage(j_ref.width(), j_ref.height(), j_ref.channels());
    out.grad_t = PlanarImage(t_ref.width(), t_ref.height(), 1);
    for (int c = 0; c < hazy.channels(); ++c) {
        auto g = rec.grad.plane(c);
        auto j = j_ref.plane(c);
        auto gj = out.grad_j.plane(c);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double gi = cfg.lambda_phy * g[i];
            gj[i] = gi * t_ref.data()[i];
            out.grad_t.data()[i] += gi * (j[i] - A[c]);
        }
    }
    return out;
}

namespace {

struct CachedImage {
    PlanarImage hazy;
    PriorResult dcp;
    PriorResult bccr;
    Atmosphere atmosphere;
};

PriorResult crop_prior(const PriorResult& p, int x0, int y0, int size) {
    return PriorResult{p.radiance.crop(x0, y0, size, size), p.transmission.crop(x0, y0, size, size), p.atmosphere};
}

struct SampleGrad {
    double loss = 0.0;
    PfmGradients grad;
};

}  // namespace

TrainResult train_fusion(const std::vector<PlanarImage>& hazy, const PfmWeights& init, const TrainConfig& tcfg,
                         const LossConfig& lcfg, const PriorConfigs& priors, int threads) {
    tcfg.validate();
    lcfg.validate();
    if (hazy.empty()) throw InvalidArgument("train_fusion: no training images");
    for (const auto& img : hazy) {
        require_rgb(img, "train_fusion");
        if (img.width() < tcfg.crop || img.height() < tcfg.crop)
            throw InvalidArgument("train_fusion: crop larger than a training image");
    }

    std::vector<CachedImage> cache(hazy.size());
    parallel_for(hazy.size(), threads, [&](std::size_t i) {
        CachedImage& c = cache[i];
        c.hazy = hazy[i];
        c.dcp = dehaze_dcp(hazy[i], priors.dcp);
        c.bccr = dehaze_bccr(hazy[i], priors.bccr);
        for (int k = 0; k < 3; ++k) c.atmosphere.rgb[k] = 0.5 * (c.dcp.atmosphere[k] + c.bccr.atmosphere[k]);
    });

    TrainResult result{init, {}};
    PfmWeights& w = result.weights;
    PfmGradients velocity = PfmGradients::zeros_like(w);
    Rng rng(tcfg.seed);
    const int crop = tcfg.crop;

    struct Pick {
        std::size_t image;
        int x0, y0;
    };
    std::vector<Pick> picks(tcfg.batch);
    std::vector<SampleGrad> samples(tcfg.batch);

    for (int step = 0; step < tcfg.steps; ++step) {
        for (auto& p : picks) {
            p.image = rng.below(cache.size());
            const auto& img = cache[p.image].hazy;
            p.x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width() - crop + 1)));
            p.y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height() - crop + 1)));
        }
        parallel_for(picks.size(), threads, [&](std::size_t b) {
            const Pick& p = picks[b];
            const CachedImage& c = cache[p.image];
            const PlanarImage I = c.hazy.crop(p.x0, p.y0, crop, crop);
            PfmActivations act;
            const FusionOutput fo = pfm_forward(I, crop_prior(c.dcp, p.x0, p.y0, crop),
                                                crop_prior(c.bccr, p.x0, p.y0, crop), w, priors.fusion, &act);
            const PhysLoss loss = l_phy(I, fo.fused, fo.t_ref, c.atmosphere, lcfg);
            samples[b].loss = loss.value;
            samples[b].grad = pfm_backward(act, w, loss.grad_j, loss.grad_t);
        });

        // Reduction in batch order keeps the result independent of scheduling.
        PfmGradients grad = PfmGradients::zeros_like(w);
        double loss = 0.0;
        const double inv_batch = 1.0 / static_cast<double>(tcfg.batch);
        for (const auto& s : samples) {
            loss += s.loss * inv_batch;
            grad.add(s.grad, inv_batch);
        }
        result.loss_trace.push_back(loss);

        if (tcfg.lr == 0.0) continue;
        for (std::size_t g = 0; g < grad.groups.size(); ++g) {
            auto& v = velocity.groups[g];
            auto& values = w[static_cast<int>(g)].values;
            for (std::size_t k = 0; k < v.size(); ++k) {
                v[k] = tcfg.momentum * v[k] + grad.groups[g][k];
                values[k] = static_cast<float>(values[k] - tcfg.lr * v[k]);
            }
        }
    }
    return result;
}

TrainResult train_fusion(const std::filesystem::path& hazy_dir, const PfmWeights& init, const TrainConfig& tcfg,
                         const LossConfig& lcfg, const PriorConfigs& priors, int threads) {
    const auto files = list_png_files(hazy_dir);
    if (files.empty()) throw IoError("no PNG images in " + hazy_dir.string());
    std::vector<PlanarImage> images;
    images.reserve(files.size());
    for (const auto& f : files) images.push_back(read_png(f));
    return train_fusion(images, init, tcfg, lcfg, priors, threads);
}

std::string format_loss_trace(const std::vector<double>& trace) {
    std::string out = "step,value\n";
    char buf[64];
    for (std::size_t i = 0; i < trace.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, trace[i]);
        out += buf;
    }
    return out;
}

}  // namespace hazeforge
