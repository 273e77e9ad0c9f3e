#include "hazeforge/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hazeforge/error.hpp"

namespace hazeforge {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view s) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError("cannot parse '" + std::string(s) + "'");
    return v;
}

// "v" broadcasts to all channels; "r,g,b" sets them individually.
std::array<double, 3> parse_triple(std::string_view s) {
    std::array<double, 3> out{};
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        parts.push_back(trim(s.substr(start, comma == std::string_view::npos ? comma : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (parts.size() == 1) {
        out.fill(parse_number<double>(parts[0]));
    } else if (parts.size() == 3) {
        for (int i = 0; i < 3; ++i) out[i] = parse_number<double>(parts[i]);
    } else {
        throw ConfigError("expected one or three comma-separated values, got '" + std::string(s) + "'");
    }
    return out;
}

using Setter = std::function<void(RunSettings&, std::string_view)>;

template <typename T, typename Get>
Setter field(Get get) {
    return [get](RunSettings& s, std::string_view v) { get(s) = parse_number<T>(v); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
    static const std::map<std::string, Setter, std::less<>> table = [] {
        std::map<std::string, Setter, std::less<>> m;
#define HF_FIELD(key, T, expr) m[key] = field<T>([](RunSettings& s) -> T& { return expr; })
        HF_FIELD("dcp.patch_radius", int, s.priors.dcp.patch_radius);
        HF_FIELD("dcp.omega", double, s.priors.dcp.omega);
        HF_FIELD("dcp.t_floor", double, s.priors.dcp.t_floor);
        HF_FIELD("dcp.bright_fraction", double, s.priors.dcp.bright_fraction);
        HF_FIELD("dcp.guide_radius", int, s.priors.dcp.guide_radius);
        HF_FIELD("dcp.guide_eps", double, s.priors.dcp.guide_eps);

        m["bccr.c0"] = [](RunSettings& s, std::string_view v) { s.priors.bccr.c0 = parse_triple(v); };
        m["bccr.c1"] = [](RunSettings& s, std::string_view v) { s.priors.bccr.c1 = parse_triple(v); };
        HF_FIELD("bccr.closing_radius", int, s.priors.bccr.closing_radius);
        HF_FIELD("bccr.sigma", double, s.priors.bccr.sigma);
        HF_FIELD("bccr.lambda_data", double, s.priors.bccr.lambda_data);
        HF_FIELD("bccr.beta0", double, s.priors.bccr.beta0);
        HF_FIELD("bccr.beta_max", double, s.priors.bccr.beta_max);
        HF_FIELD("bccr.beta_scale", double, s.priors.bccr.beta_scale);
        HF_FIELD("bccr.t_floor", double, s.priors.bccr.t_floor);
        HF_FIELD("bccr.dark_radius", int, s.priors.bccr.dark_radius);
        HF_FIELD("bccr.bright_fraction", double, s.priors.bccr.bright_fraction);
        HF_FIELD("bccr.cg_tolerance", double, s.priors.bccr.cg_tolerance);
        HF_FIELD("bccr.cg_max_iterations", int, s.priors.bccr.cg_max_iterations);
        HF_FIELD("bccr.inner_iterations", int, s.priors.bccr.inner_iterations);
        HF_FIELD("bccr.inner_tolerance", double, s.priors.bccr.inner_tolerance);

        HF_FIELD("fusion.t_floor", double, s.priors.fusion.t_floor);
        HF_FIELD("fusion.smooth_radius", int, s.priors.fusion.smooth_radius);
        HF_FIELD("fusion.smooth_eps", double, s.priors.fusion.smooth_eps);
        HF_FIELD("fusion.dark_radius", int, s.priors.fusion.dark_radius);

        HF_FIELD("loss.lambda_ssim", double, s.loss.lambda_ssim);
        HF_FIELD("loss.lambda_phy", double, s.loss.lambda_phy);

        HF_FIELD("train.steps", int, s.train.steps);
        HF_FIELD("train.batch", int, s.train.batch);
        HF_FIELD("train.lr", double, s.train.lr);
        HF_FIELD("train.momentum", double, s.train.momentum);
        HF_FIELD("train.crop", int, s.train.crop);
        HF_FIELD("train.seed", std::uint64_t, s.train.seed);
#undef HF_FIELD
        return m;
    }();
    return table;
}

}  // namespace

void RunSettings::validate() const {
    try {
        priors.dcp.validate();
        priors.bccr.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    if (!(priors.fusion.t_floor > 0.0 && priors.fusion.t_floor < 1.0) || priors.fusion.smooth_radius < 0 ||
        !(priors.fusion.smooth_eps > 0.0) || priors.fusion.dark_radius < 0)
        throw ConfigError("invalid fusion settings");
    loss.validate();
    train.validate();
}

void apply_config_text(std::string_view text, RunSettings& settings) {
    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "config line " + std::to_string(line_no) + ": ";
        if (eq == std::string_view::npos) throw ConfigError(where + "expected key=value");
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
        try {
            it->second(settings, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + std::string(key) + ": " + e.what());
        }
    }
}

void apply_config_file(const std::filesystem::path& path, RunSettings& settings) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    apply_config_text(ss.str(), settings);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : setters()) keys.push_back(k);
    return keys;
}

}  // namespace hazeforge
