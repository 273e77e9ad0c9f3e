#include "hazeforge/fusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hazeforge/error.hpp"
#include "hazeforge/rng.hpp"

namespace hazeforge {

namespace {

constexpr std::uint32_t kWeightsVersion = 1;
constexpr char kMagic[4] = {'P', 'F', 'M', 'W'};

bool is_weight_group(int g) { return g % 2 == 0; }

}  // namespace

std::vector<std::vector<std::uint32_t>> PfmWeights::shapes(int d) {
    const auto u = static_cast<std::uint32_t>(d);
    std::vector<std::vector<std::uint32_t>> s;
    for (int b = 0; b < 3; ++b) {
        s.push_back({u, 3});
        s.push_back({u});
        s.push_back({u, u});
        s.push_back({u});
        s.push_back({u, u});
        s.push_back({u});
    }
    for (int b = 0; b < 2; ++b) {
        s.push_back({u, u});
        s.push_back({u});
        s.push_back({u, u});
        s.push_back({u});
    }
    s.push_back({u, 2 * u});
    s.push_back({u});
    s.push_back({2, u});
    s.push_back({2});
    s.push_back({2, 2 * u});
    s.push_back({2});
    s.push_back({u, 6});
    s.push_back({u});
    s.push_back({1, u});
    s.push_back({1});
    return s;
}

std::vector<std::string> PfmWeights::names() {
    std::vector<std::string> n;
    for (const char* b : {"dcp", "bccr", "hazy"})
        for (const char* p : {"in.weight", "in.bias", "mlp1.weight", "mlp1.bias", "mlp2.weight", "mlp2.bias"})
            n.push_back(std::string("extract.") + b + "." + p);
    for (const char* b : {"dcp", "bccr"})
        for (const char* p : {"gate1.weight", "gate1.bias", "gate2.weight", "gate2.bias"})
            n.push_back(std::string("guide.") + b + "." + p);
    for (const char* p : {"global1.weight", "global1.bias", "global2.weight", "global2.bias", "head.weight",
                          "head.bias", "refine1.weight", "refine1.bias", "refine2.weight", "refine2.bias"})
        n.emplace_back(p);
    return n;
}

PfmWeights PfmWeights::zeros(int d) {
    if (d < 1) throw InvalidArgument("feature width must be >= 1");
    PfmWeights w;
    w.d_ = d;
    const auto s = shapes(d);
    const auto n = names();
    for (std::size_t g = 0; g < s.size(); ++g) {
        std::size_t count = 1;
        for (auto v : s[g]) count *= v;
        w.groups_.push_back(ParamTensor{n[g], s[g], std::vector<float>(count, 0.0f)});
    }
    return w;
}

PfmWeights PfmWeights::initialize(std::uint64_t seed, int d) {
    PfmWeights w = zeros(d);
    Rng rng(seed);
    for (int g = 0; g < pfm::kGroupCount; ++g) {
        if (!is_weight_group(g)) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.groups_[g].dims[1]));
        for (float& v : w.groups_[g].values) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    return w;
}

std::size_t PfmWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& g : groups_) n += g.values.size();
    return n;
}

bool PfmWeights::operator==(const PfmWeights& o) const {
    if (d_ != o.d_ || groups_.size() != o.groups_.size()) return false;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        const auto& a = groups_[g].values;
        const auto& b = o.groups_[g].values;
        if (groups_[g].dims != o.groups_[g].dims || a.size() != b.size()) return false;
        if (!a.empty() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) != 0) return false;
    }
    return true;
}

PfmGradients PfmGradients::zeros_like(const PfmWeights& w) {
    PfmGradients g;
    for (const auto& t : w.groups()) g.groups.emplace_back(t.values.size(), 0.0);
    return g;
}

void PfmGradients::add(const PfmGradients& o, double scale) {
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (std::size_t i = 0; i < groups[g].size(); ++i) groups[g][i] += scale * o.groups[g][i];
}

double PfmGradients::squared_norm() const {
    double s = 0.0;
    for (const auto& g : groups)
        for (double v : g) s += v * v;
    return s;
}

// ---------------------------------------------------------------------------
// Weight file

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    void raw(char* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError("format error: truncated weight file");
    }
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_weights(const PfmWeights& w, const std::filesystem::path& path) {
    std::vector<char> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kWeightsVersion);
    put_u32(out, static_cast<std::uint32_t>(w.width()));
    for (const auto& t : w.groups()) {
        put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) put_u32(out, d);
        for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("cannot write " + path.string());
}

PfmWeights load_weights(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    Reader r(std::vector<char>(std::istreambuf_iterator<char>(f), {}));

    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("format error: bad magic in " + path.string());
    const std::uint32_t version = r.u32();
    if (version != kWeightsVersion)
        throw FormatError("format error: unsupported weight file version " + std::to_string(version));
    const std::uint32_t d = r.u32();
    if (d < 1 || d > 4096) throw FormatError("format error: implausible feature width " + std::to_string(d));

    PfmWeights w = PfmWeights::zeros(static_cast<int>(d));
    for (auto& t : w.groups()) {
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw FormatError("format error: implausible rank in group " + t.name);
        std::vector<std::uint32_t> dims(rank);
        for (auto& v : dims) v = r.u32();
        if (dims != t.dims) throw ShapeMismatch("shape mismatch: group " + t.name + " does not match width " +
                                                std::to_string(d));
        for (float& v : t.values) {
            char b[4];
            r.raw(b, 4);
            std::uint32_t bits = 0;
            for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
            v = std::bit_cast<float>(bits);
            if (!std::isfinite(v)) throw FormatError("format error: non-finite parameter in group " + t.name);
        }
    }
    if (!r.done()) throw FormatError("format error: trailing bytes in " + path.string());
    return w;
}

RadianceRefiner identity_refiner() {
    return [](const PlanarImage& j) { return j; };
}

// ---------------------------------------------------------------------------
// Network

namespace {

struct Dense {
    int in = 0, out = 0;
    std::vector<double> weight, bias;

    void apply(const double* x, double* y) const {
        for (int o = 0; o < out; ++o) {
            double s = bias[o];
            const double* row = weight.data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) s += row[i] * x[i];
            y[o] = s;
        }
    }
    // gx += W^T gy
    void backprop_input(const double* gy, double* gx) const {
        for (int o = 0; o < out; ++o) {
            const double* row = weight.data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) gx[i] += row[i] * gy[o];
        }
    }
};

// dW += gy x^T, db += gy
void accumulate(std::vector<double>& gw, std::vector<double>& gb, const double* gy, const double* x, int out, int in) {
    for (int o = 0; o < out; ++o) {
        gb[o] += gy[o];
        double* row = gw.data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) row[i] += gy[o] * x[i];
    }
}

Dense dense(const PfmWeights& w, int g) {
    const ParamTensor& t = w[g];
    const ParamTensor& b = w[g + 1];
    Dense d;
    d.out = static_cast<int>(t.dims[0]);
    d.in = static_cast<int>(t.dims[1]);
    d.weight.assign(t.values.begin(), t.values.end());
    d.bias.assign(b.values.begin(), b.values.end());
    return d;
}

struct Net {
    int d = 0;
    std::array<Dense, 3> in, mlp1, mlp2;
    std::array<Dense, 2> gate1, gate2;
    Dense global1, global2, head, refine1, refine2;

    explicit Net(const PfmWeights& w) : d(w.width()) {
        constexpr int extract[3] = {pfm::kExtractDcp, pfm::kExtractBccr, pfm::kExtractHazy};
        for (int b = 0; b < 3; ++b) {
            in[b] = dense(w, extract[b] + pfm::kInWeight);
            mlp1[b] = dense(w, extract[b] + pfm::kMlp1Weight);
            mlp2[b] = dense(w, extract[b] + pfm::kMlp2Weight);
        }
        constexpr int guide[2] = {pfm::kGuideDcp, pfm::kGuideBccr};
        for (int b = 0; b < 2; ++b) {
            gate1[b] = dense(w, guide[b] + pfm::kGate1Weight);
            gate2[b] = dense(w, guide[b] + pfm::kGate2Weight);
        }
        global1 = dense(w, pfm::kGlobal1Weight);
        global2 = dense(w, pfm::kGlobal2Weight);
        head = dense(w, pfm::kHeadWeight);
        refine1 = dense(w, pfm::kRefine1Weight);
        refine2 = dense(w, pfm::kRefine2Weight);
    }
};

double relu(double v) { return v > 0.0 ? v : 0.0; }
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::array<double, 2> softmax2(double a, double b) {
    const double m = std::max(a, b);
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    return {ea / (ea + eb), eb / (ea + eb)};
}

// Per-pixel scratch for the feature pathway up to the concatenated guided features.
struct PixelScratch {
    explicit PixelScratch(int d)
        : pre_in(3 * d), pre_mlp1(3 * d), features(3 * d), mixed(2 * d), pre_gate1(2 * d), gate(2 * d), tmp(d),
          concat(2 * d) {}
    std::vector<double> pre_in, pre_mlp1, features, mixed, pre_gate1, gate, tmp, concat;
};

void pixel_features(const Net& net, const std::array<std::array<double, 3>, 3>& x, PixelScratch& s) {
    const int d = net.d;
    for (int b = 0; b < 3; ++b) {
        double* pre_in = s.pre_in.data() + b * d;
        double* pre_mlp1 = s.pre_mlp1.data() + b * d;
        net.in[b].apply(x[b].data(), pre_in);
        for (int k = 0; k < d; ++k) s.tmp[k] = relu(pre_in[k]);
        net.mlp1[b].apply(s.tmp.data(), pre_mlp1);
        for (int k = 0; k < d; ++k) s.tmp[k] = relu(pre_mlp1[k]);
        net.mlp2[b].apply(s.tmp.data(), s.features.data() + b * d);
    }
    const double* hazy_features = s.features.data() + 2 * d;
    for (int b = 0; b < 2; ++b) {
        double* mixed = s.mixed.data() + b * d;
        double* pre_gate1 = s.pre_gate1.data() + b * d;
        double* gate = s.gate.data() + b * d;
        for (int k = 0; k < d; ++k) mixed[k] = s.features[b * d + k] + hazy_features[k];
        net.gate1[b].apply(mixed, pre_gate1);
        for (int k = 0; k < d; ++k) s.tmp[k] = relu(pre_gate1[k]);
        net.gate2[b].apply(s.tmp.data(), gate);
        for (int k = 0; k < d; ++k) {
            gate[k] = sigmoid(gate[k]);
            s.concat[b * d + k] = mixed[k] * (1.0 + gate[k]);
        }
    }
}

void check_inputs(const PlanarImage& hazy, const PriorResult& dcp, const PriorResult& bccr) {
    require_rgb(hazy, "pfm_forward");
    require_rgb(dcp.radiance, "pfm_forward dcp radiance");
    require_rgb(bccr.radiance, "pfm_forward bccr radiance");
    require_single(dcp.transmission, "pfm_forward dcp transmission");
    require_single(bccr.transmission, "pfm_forward bccr transmission");
    if (!hazy.same_size(dcp.radiance) || !hazy.same_size(bccr.radiance) || !hazy.same_size(dcp.transmission) ||
        !hazy.same_size(bccr.transmission))
        throw ShapeMismatch("pfm_forward: input dimensions differ");
}

void copy_into(std::vector<double>& dst, std::size_t offset, const double* src, std::size_t n) {
    std::copy(src, src + n, dst.begin() + static_cast<std::ptrdiff_t>(offset));
}

}  // namespace

FusionOutput pfm_forward(const PlanarImage& hazy, const PriorResult& dcp, const PriorResult& bccr, const PfmWeights& w,
                         const FusionConfig& cfg, PfmActivations* retain) {
    check_inputs(hazy, dcp, bccr);
    const Net net(w);
    const int d = net.d;
    const std::size_t n = hazy.plane_size();
    const PlanarImage dark = dark_channel(hazy, cfg.dark_radius);
    const PlanarImage guide = luminance(hazy);
    const PlanarImage* images[3] = {&dcp.radiance, &bccr.radiance, &hazy};

    auto pixel_inputs = [&](std::size_t i) {
        std::array<std::array<double, 3>, 3> x{};
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) x[b][c] = images[b]->plane(c)[i];
        return x;
    };

    if (retain) {
        *retain = PfmActivations{};
        retain->d = d;
        retain->n = n;
        retain->cfg = cfg;
        retain->hazy = hazy;
        retain->j_dcp = dcp.radiance;
        retain->j_bccr = bccr.radiance;
        retain->t_dcp = dcp.transmission;
        retain->t_bccr = bccr.transmission;
        retain->dark = dark;
        retain->guide = guide;
        for (int b = 0; b < 3; ++b) {
            retain->pre_in[b].resize(n * d);
            retain->pre_mlp1[b].resize(n * d);
            retain->features[b].resize(n * d);
        }
        for (int b = 0; b < 2; ++b) {
            retain->mixed[b].resize(n * d);
            retain->pre_gate1[b].resize(n * d);
            retain->gate[b].resize(n * d);
        }
        retain->concat.resize(n * 2 * d);
        retain->pixel_gates.resize(n * 2);
        retain->pre_refine1.resize(n * d);
        retain->refine_sigmoid.resize(n);
    }

    // Pass 1: guided features and their global average.
    PixelScratch s(d);
    std::vector<double> pooled(2 * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        pixel_features(net, pixel_inputs(i), s);
        for (int k = 0; k < 2 * d; ++k) pooled[k] += s.concat[k];
        if (retain) {
            for (int b = 0; b < 3; ++b) {
                copy_into(retain->pre_in[b], i * d, s.pre_in.data() + b * d, d);
                copy_into(retain->pre_mlp1[b], i * d, s.pre_mlp1.data() + b * d, d);
                copy_into(retain->features[b], i * d, s.features.data() + b * d, d);
            }
            for (int b = 0; b < 2; ++b) {
                copy_into(retain->mixed[b], i * d, s.mixed.data() + b * d, d);
                copy_into(retain->pre_gate1[b], i * d, s.pre_gate1.data() + b * d, d);
                copy_into(retain->gate[b], i * d, s.gate.data() + b * d, d);
            }
            copy_into(retain->concat, i * 2 * d, s.concat.data(), 2 * d);
        }
    }
    for (double& v : pooled) v /= static_cast<double>(n);

    std::vector<double> pre_global1(d), hidden(d);
    net.global1.apply(pooled.data(), pre_global1.data());
    for (int k = 0; k < d; ++k) hidden[k] = relu(pre_global1[k]);
    double global_logits[2];
    net.global2.apply(hidden.data(), global_logits);
    const auto gw = softmax2(global_logits[0], global_logits[1]);

    // Pass 2: per-pixel gated fusion and transmission refiner.
    FusionOutput out;
    out.fused = PlanarImage(hazy.width(), hazy.height(), 3);
    out.t_mlp = PlanarImage(hazy.width(), hazy.height(), 1);
    out.gates = {PlanarImage(hazy.width(), hazy.height(), 1), PlanarImage(hazy.width(), hazy.height(), 1)};
    out.global_weights = gw;
    std::vector<double> coarse(2 * d), pre_refine1(d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* concat;
        if (retain) {
            concat = retain->concat.data() + i * 2 * d;
        } else {
            pixel_features(net, pixel_inputs(i), s);
            concat = s.concat.data();
        }
        for (int k = 0; k < 2 * d; ++k) coarse[k] = concat[k] * (1.0 + gw[k < d ? 0 : 1]);
        double logits[2];
        net.head.apply(coarse.data(), logits);
        const auto g = softmax2(logits[0], logits[1]);
        out.gates[0].data()[i] = g[0];
        out.gates[1].data()[i] = g[1];
        // g0 x_dcp + g1 x_bccr written so that equal inputs pass through exactly.
        for (int c = 0; c < 3; ++c) {
            const double xd = dcp.radiance.plane(c)[i], xb = bccr.radiance.plane(c)[i];
            out.fused.plane(c)[i] = xb + g[0] * (xd - xb);
        }

        const double v[6] = {dcp.transmission.data()[i], bccr.transmission.data()[i], hazy.plane(0)[i],
                             hazy.plane(1)[i],           hazy.plane(2)[i],            dark.data()[i]};
        net.refine1.apply(v, pre_refine1.data());
        for (int k = 0; k < d; ++k) hidden[k] = relu(pre_refine1[k]);
        double o;
        net.refine2.apply(hidden.data(), &o);
        const double t = sigmoid(o);
        out.t_mlp.data()[i] = t;
        if (retain) {
            retain->pixel_gates[2 * i] = g[0];
            retain->pixel_gates[2 * i + 1] = g[1];
            copy_into(retain->pre_refine1, i * d, pre_refine1.data(), d);
            retain->refine_sigmoid[i] = t;
        }
    }

    PlanarImage smooth = guided_filter(out.t_mlp, guide, cfg.smooth_radius, cfg.smooth_eps);
    if (retain) {
        retain->pooled = pooled;
        retain->pre_global1 = pre_global1;
        retain->global_weights = gw;
        retain->t_smooth.assign(smooth.data().begin(), smooth.data().end());
    }
    smooth.clamp(cfg.t_floor, 1.0);
    out.t_ref = std::move(smooth);
    return out;
}

PfmGradients pfm_backward(const PfmActivations& act, const PfmWeights& w, const PlanarImage& grad_fused,
                          const PlanarImage& grad_t_ref) {
    if (act.n == 0 || act.d != w.width()) throw InvalidArgument("pfm_backward: activations do not match weights");
    require_rgb(grad_fused, "pfm_backward fused gradient");
    require_single(grad_t_ref, "pfm_backward transmission gradient");
    if (!grad_fused.same_size(act.hazy) || !grad_t_ref.same_size(act.hazy))
        throw ShapeMismatch("pfm_backward: gradient dimensions differ from the forward pass");

    const Net net(w);
    const int d = act.d;
    const std::size_t n = act.n;
    PfmGradients grads = PfmGradients::zeros_like(w);
    auto G = [&](int g) -> std::vector<double>& { return grads.groups[g]; };

    // Transmission refiner: clamp mask, guided-filter adjoint, sigmoid, 6 -> d -> 1 MLP.
    PlanarImage grad_smooth(act.hazy.width(), act.hazy.height(), 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = act.t_smooth[i];
        grad_smooth.data()[i] = (t > act.cfg.t_floor && t < 1.0) ? grad_t_ref.data()[i] : 0.0;
    }
    const PlanarImage grad_mlp =
        guided_filter_adjoint(grad_smooth, act.guide, act.cfg.smooth_radius, act.cfg.smooth_eps);
    std::vector<double> hidden(d), grad_hidden(d);
    for (std::size_t i = 0; i < n; ++i) {
        const double sig = act.refine_sigmoid[i];
        const double g_out = grad_mlp.data()[i] * sig * (1.0 - sig);
        if (g_out == 0.0) continue;
        const double* pre = act.pre_refine1.data() + i * d;
        for (int k = 0; k < d; ++k) hidden[k] = relu(pre[k]);
        accumulate(G(pfm::kRefine2Weight), G(pfm::kRefine2Bias), &g_out, hidden.data(), 1, d);
        std::fill(grad_hidden.begin(), grad_hidden.end(), 0.0);
        net.refine2.backprop_input(&g_out, grad_hidden.data());
        for (int k = 0; k < d; ++k) grad_hidden[k] = pre[k] > 0.0 ? grad_hidden[k] : 0.0;
        const double v[6] = {act.t_dcp.data()[i], act.t_bccr.data()[i], act.hazy.plane(0)[i],
                             act.hazy.plane(1)[i], act.hazy.plane(2)[i], act.dark.data()[i]};
        accumulate(G(pfm::kRefine1Weight), G(pfm::kRefine1Bias), grad_hidden.data(), v, d, 6);
    }

    // Gated fusion head, per pixel; collects gradients of the concatenated features and global weights.
    const auto& gw = act.global_weights;
    std::vector<double> grad_concat(n * 2 * d, 0.0);
    std::vector<double> coarse(2 * d), grad_coarse(2 * d);
    double grad_gw[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
        double dg[2] = {0.0, 0.0};
        for (int c = 0; c < 3; ++c) {
            const double gj = grad_fused.plane(c)[i];
            dg[0] += gj * act.j_dcp.plane(c)[i];
            dg[1] += gj * act.j_bccr.plane(c)[i];
        }
        const double g0 = act.pixel_gates[2 * i], g1 = act.pixel_gates[2 * i + 1];
        const double mean = g0 * dg[0] + g1 * dg[1];
        const double grad_logits[2] = {g0 * (dg[0] - mean), g1 * (dg[1] - mean)};
        if (grad_logits[0] == 0.0 && grad_logits[1] == 0.0) continue;
        const double* concat = act.concat.data() + i * 2 * d;
        for (int k = 0; k < 2 * d; ++k) coarse[k] = concat[k] * (1.0 + gw[k < d ? 0 : 1]);
        accumulate(G(pfm::kHeadWeight), G(pfm::kHeadBias), grad_logits, coarse.data(), 2, 2 * d);
        std::fill(grad_coarse.begin(), grad_coarse.end(), 0.0);
        net.head.backprop_input(grad_logits, grad_coarse.data());
        double* gc = grad_concat.data() + i * 2 * d;
        for (int k = 0; k < 2 * d; ++k) {
            const int half = k < d ? 0 : 1;
            gc[k] += grad_coarse[k] * (1.0 + gw[half]);
            grad_gw[half] += grad_coarse[k] * concat[k];
        }
    }

    // Global re-weighting: softmax, 2d -> d -> 2 MLP, average pooling.
    {
        const double mean = gw[0] * grad_gw[0] + gw[1] * grad_gw[1];
        const double grad_logits[2] = {gw[0] * (grad_gw[0] - mean), gw[1] * (grad_gw[1] - mean)};
        for (int k = 0; k < d; ++k) hidden[k] = relu(act.pre_global1[k]);
        accumulate(G(pfm::kGlobal2Weight), G(pfm::kGlobal2Bias), grad_logits, hidden.data(), 2, d);
        std::fill(grad_hidden.begin(), grad_hidden.end(), 0.0);
        net.global2.backprop_input(grad_logits, grad_hidden.data());
        for (int k = 0; k < d; ++k) grad_hidden[k] = act.pre_global1[k] > 0.0 ? grad_hidden[k] : 0.0;
        accumulate(G(pfm::kGlobal1Weight), G(pfm::kGlobal1Bias), grad_hidden.data(), act.pooled.data(), d, 2 * d);
        std::vector<double> grad_pooled(2 * d, 0.0);
        net.global1.backprop_input(grad_hidden.data(), grad_pooled.data());
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (int k = 0; k < 2 * d; ++k) grad_concat[i * 2 * d + k] += grad_pooled[k] * inv_n;
    }

    // Guidance blocks and feature extractors, per pixel.
    constexpr int extract[3] = {pfm::kExtractDcp, pfm::kExtractBccr, pfm::kExtractHazy};
    constexpr int guide[2] = {pfm::kGuideDcp, pfm::kGuideBccr};
    std::vector<double> grad_mixed(d), grad_gate_pre(d), grad_features(3 * d), act_in(d), grad_act(d), grad_pre(d);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(grad_features.begin(), grad_features.end(), 0.0);
        for (int b = 0; b < 2; ++b) {
            const double* gc = grad_concat.data() + i * 2 * d + b * d;
            const double* mixed = act.mixed[b].data() + i * d;
            const double* gate = act.gate[b].data() + i * d;
            const double* pre_gate1 = act.pre_gate1[b].data() + i * d;
            for (int k = 0; k < d; ++k) {
                grad_mixed[k] = gc[k] * (1.0 + gate[k]);
                grad_gate_pre[k] = gc[k] * mixed[k] * gate[k] * (1.0 - gate[k]);
                hidden[k] = relu(pre_gate1[k]);
            }
            accumulate(G(guide[b] + pfm::kGate2Weight), G(guide[b] + pfm::kGate2Bias), grad_gate_pre.data(),
                       hidden.data(), d, d);
            std::fill(grad_hidden.begin(), grad_hidden.end(), 0.0);
            net.gate2[b].backprop_input(grad_gate_pre.data(), grad_hidden.data());
            for (int k = 0; k < d; ++k) grad_hidden[k] = pre_gate1[k] > 0.0 ? grad_hidden[k] : 0.0;
            accumulate(G(guide[b] + pfm::kGate1Weight), G(guide[b] + pfm::kGate1Bias), grad_hidden.data(), mixed, d,
                       d);
            net.gate1[b].backprop_input(grad_hidden.data(), grad_mixed.data());
            for (int k = 0; k < d; ++k) {
                grad_features[b * d + k] += grad_mixed[k];
                grad_features[2 * d + k] += grad_mixed[k];
            }
        }
        for (int b = 0; b < 3; ++b) {
            const PlanarImage& img = b == 0 ? act.j_dcp : (b == 1 ? act.j_bccr : act.hazy);
            const double x[3] = {img.plane(0)[i], img.plane(1)[i], img.plane(2)[i]};
            const double* pre_in = act.pre_in[b].data() + i * d;
            const double* pre_mlp1 = act.pre_mlp1[b].data() + i * d;
            const double* gf = grad_features.data() + b * d;
            for (int k = 0; k < d; ++k) hidden[k] = relu(pre_mlp1[k]);
            accumulate(G(extract[b] + pfm::kMlp2Weight), G(extract[b] + pfm::kMlp2Bias), gf, hidden.data(), d, d);
            std::fill(grad_hidden.begin(), grad_hidden.end(), 0.0);
            net.mlp2[b].backprop_input(gf, grad_hidden.data());
            for (int k = 0; k < d; ++k) {
                grad_hidden[k] = pre_mlp1[k] > 0.0 ? grad_hidden[k] : 0.0;
                act_in[k] = relu(pre_in[k]);
            }
            accumulate(G(extract[b] + pfm::kMlp1Weight), G(extract[b] + pfm::kMlp1Bias), grad_hidden.data(),
                       act_in.data(), d, d);
            std::fill(grad_act.begin(), grad_act.end(), 0.0);
            net.mlp1[b].backprop_input(grad_hidden.data(), grad_act.data());
            for (int k = 0; k < d; ++k) grad_pre[k] = pre_in[k] > 0.0 ? grad_act[k] : 0.0;
            accumulate(G(extract[b] + pfm::kInWeight), G(extract[b] + pfm::kInBias), grad_pre.data(), x, d, 3);
        }
    }
    return grads;
}

}  // namespace hazeforge
