// hazeforge command-line front end: dehaze, synth, eval, train, inspect.
//
// Exit codes: 0 success, 1 unreadable input, 2 bad configuration or usage, 3 solver stall,
// 4 other failures (including any failed item of a multi-image batch).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hazeforge/bccr.hpp"
#include "hazeforge/config.hpp"
#include "hazeforge/dcp.hpp"
#include "hazeforge/error.hpp"
#include "hazeforge/fusion.hpp"
#include "hazeforge/hazesim.hpp"
#include "hazeforge/metrics.hpp"
#include "hazeforge/parallel.hpp"
#include "hazeforge/physloss.hpp"
#include "hazeforge/png_io.hpp"

namespace fs = std::filesystem;
using namespace hazeforge;

namespace {

enum Exit { kOk = 0, kUnreadable = 1, kBadConfig = 2, kStall = 3, kFailure = 4 };

int exit_code_for(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const IoError&) {
        return kUnreadable;
    } catch (const FormatError&) {
        return kUnreadable;
    } catch (const ConfigError&) {
        return kBadConfig;
    } catch (const SolverStall&) {
        return kStall;
    } catch (...) {
        return kFailure;
    }
}

std::string message_of(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const std::exception& ex) {
        return ex.what();
    } catch (...) {
        return "unknown error";
    }
}

// Options shared by every subcommand.
struct Common {
    int threads = 0;
    std::uint64_t seed = 0;
    std::string config_path;

    int thread_count() const { return threads > 0 ? threads : default_thread_count(); }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--threads", c.threads, "worker threads (default: HAZEFORGE_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--seed", c.seed, "random seed");
    cmd->add_option("--config", c.config_path, "key=value file overriding dcp.*, bccr.*, fusion.*, loss.*, train.*");
}

RunSettings load_settings(const Common& c) {
    RunSettings s;
    if (!c.config_path.empty()) apply_config_file(c.config_path, s);
    s.validate();
    return s;
}

// Expands directories into their sorted PNG files; plain files pass through.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            const auto files = list_png_files(in);
            out.insert(out.end(), files.begin(), files.end());
        } else {
            out.emplace_back(in);
        }
    }
    return out;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

// Per-item results of a batch, reported in input order.
int report_batch(const std::vector<fs::path>& items, const std::vector<std::exception_ptr>& errors) {
    int code = kOk, failures = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!errors[i]) continue;
        ++failures;
        code = exit_code_for(errors[i]);
        std::cerr << "error: " << items[i].string() << ": " << message_of(errors[i]) << "\n";
    }
    if (failures == 0) return kOk;
    return items.size() == 1 ? code : kFailure;
}

// ---------------------------------------------------------------------------

struct DehazeArgs {
    Common common;
    std::vector<std::string> inputs;
    std::string output;
    std::string method = "dcp";
    std::string weights;
    bool dump = false;
};

int cmd_dehaze(const DehazeArgs& a) {
    const RunSettings s = load_settings(a.common);
    const auto files = expand_inputs(a.inputs);
    if (files.empty()) throw IoError("no input images");
    ensure_dir(a.output);

    std::optional<PfmWeights> weights;
    if (a.method == "fused") {
        if (!a.weights.empty()) {
            weights = load_weights(a.weights);
        } else {
            std::cerr << "warning: no --weights given; using default-initialized fusion weights (seed "
                      << a.common.seed << ")\n";
            weights = PfmWeights::initialize(a.common.seed);
        }
    }
    const RadianceRefiner refine = identity_refiner();

    std::vector<std::exception_ptr> errors(files.size());
    parallel_for(files.size(), a.common.thread_count(), [&](std::size_t i) {
        try {
            const PlanarImage hazy = read_png(files[i]);
            require_rgb(hazy, "dehaze input");
            const fs::path out = fs::path(a.output);
            const std::string stem = files[i].stem().string();
            if (a.method == "dcp") {
                const PriorResult r = dehaze_dcp(hazy, s.priors.dcp);
                write_png(out / (stem + ".png"), r.radiance);
                if (a.dump) write_png(out / (stem + "_t_dcp.png"), r.transmission);
            } else if (a.method == "bccr") {
                const PriorResult r = dehaze_bccr(hazy, s.priors.bccr);
                write_png(out / (stem + ".png"), r.radiance);
                if (a.dump) write_png(out / (stem + "_t_bccr.png"), r.transmission);
            } else {
                const PriorResult dcp = dehaze_dcp(hazy, s.priors.dcp);
                const PriorResult bccr = dehaze_bccr(hazy, s.priors.bccr);
                const FusionOutput f = pfm_forward(hazy, dcp, bccr, *weights, s.priors.fusion);
                write_png(out / (stem + ".png"), refine(f.fused));
                if (a.dump) {
                    write_png(out / (stem + "_t_dcp.png"), dcp.transmission);
                    write_png(out / (stem + "_t_bccr.png"), bccr.transmission);
                    write_png(out / (stem + "_t_ref.png"), f.t_ref);
                    write_png(out / (stem + "_gate_dcp.png"), f.gates[0]);
                    write_png(out / (stem + "_gate_bccr.png"), f.gates[1]);
                }
            }
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    return report_batch(files, errors);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    Common common;
    std::string clear_dir, output;
    int variants = 1;
    std::vector<double> a_range{0.7, 1.0};
    std::vector<double> t_range{0.2, 0.9};
    std::string field = "mixed";
};

int cmd_synth(const SynthArgs& a) {
    load_settings(a.common);
    DatasetRanges r;
    r.a_lo = a.a_range[0];
    r.a_hi = a.a_range[1];
    r.t_lo = a.t_range[0];
    r.t_hi = a.t_range[1];
    r.kind = a.field == "constant" ? FieldKind::Constant : (a.field == "random" ? FieldKind::Random : FieldKind::Mixed);
    try {
        r.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    const auto rows = make_dataset(a.clear_dir, a.output, a.variants, r, a.common.seed, a.common.thread_count());
    std::cout << format_manifest(rows);
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    Common common;
    std::string pred, ref;
};

int cmd_eval(const EvalArgs& a) {
    load_settings(a.common);
    std::map<std::string, fs::path> pred, ref;
    for (const auto& f : list_png_files(a.pred)) pred[f.filename().string()] = f;
    for (const auto& f : list_png_files(a.ref)) ref[f.filename().string()] = f;

    std::vector<std::string> orphans;
    for (const auto& [name, _] : pred)
        if (!ref.count(name)) orphans.push_back("pred/" + name);
    for (const auto& [name, _] : ref)
        if (!pred.count(name)) orphans.push_back("ref/" + name);
    if (!orphans.empty()) {
        std::cerr << "error: unmatched file names:\n";
        for (const auto& o : orphans) std::cerr << "  " << o << "\n";
        return kBadConfig;
    }
    if (pred.empty()) throw IoError("no PNG images to evaluate");

    std::vector<std::string> names;
    for (const auto& [name, _] : pred) names.push_back(name);
    std::vector<MetricReport> reports(names.size());
    std::vector<std::exception_ptr> errors(names.size());
    parallel_for(names.size(), a.common.thread_count(), [&](std::size_t i) {
        try {
            reports[i] = evaluate(read_png(pred[names[i]]), read_png(ref[names[i]]));
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    std::vector<fs::path> items(names.begin(), names.end());
    if (const int code = report_batch(items, errors); code != kOk) return code;

    std::printf("name\tpsnr\tssim\thaziness\n");
    double sum_psnr = 0.0, sum_ssim = 0.0, sum_haze = 0.0;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& r = reports[i];
        std::printf("%s\t%s\t%.6f\t%.6f\n", names[i].c_str(), format_psnr(r.psnr).c_str(), r.ssim, r.haziness);
        sum_psnr += r.psnr;
        sum_ssim += r.ssim;
        sum_haze += r.haziness;
    }
    const double n = static_cast<double>(names.size());
    std::printf("mean\t%s\t%.6f\t%.6f\n", format_psnr(sum_psnr / n).c_str(), sum_ssim / n, sum_haze / n);
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string hazy_dir, output, init_weights, trace_path;
    std::optional<int> steps, batch, crop;
    std::optional<double> lr, momentum;
};

int cmd_train(const TrainArgs& a) {
    RunSettings s;
    if (!a.common.config_path.empty()) apply_config_file(a.common.config_path, s);
    s.train.seed = a.common.seed;
    if (a.steps) s.train.steps = *a.steps;
    if (a.batch) s.train.batch = *a.batch;
    if (a.crop) s.train.crop = *a.crop;
    if (a.lr) s.train.lr = *a.lr;
    if (a.momentum) s.train.momentum = *a.momentum;
    s.validate();

    PfmWeights init = a.init_weights.empty() ? PfmWeights::initialize(a.common.seed) : load_weights(a.init_weights);
    const TrainResult r = train_fusion(fs::path(a.hazy_dir), init, s.train, s.loss, s.priors, a.common.thread_count());
    save_weights(r.weights, a.output);
    const std::string trace = format_loss_trace(r.loss_trace);
    if (a.trace_path.empty()) {
        std::cout << trace;
    } else {
        std::ofstream f(a.trace_path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + a.trace_path);
        f << trace;
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct InspectArgs {
    Common common;
    std::vector<std::string> inputs;
    std::string output;
};

int cmd_inspect(const InspectArgs& a) {
    const RunSettings s = load_settings(a.common);
    const auto files = expand_inputs(a.inputs);
    if (files.empty()) throw IoError("no input images");
    ensure_dir(a.output);

    struct Row {
        Atmosphere dcp_a, bccr_a;
        double haze = 0.0;
    };
    std::vector<Row> rows(files.size());
    std::vector<std::exception_ptr> errors(files.size());
    parallel_for(files.size(), a.common.thread_count(), [&](std::size_t i) {
        try {
            const PlanarImage hazy = read_png(files[i]);
            require_rgb(hazy, "inspect input");
            const fs::path out = fs::path(a.output);
            const std::string stem = files[i].stem().string();
            const DcpTrace d = dehaze_dcp_traced(hazy, s.priors.dcp);
            write_png(out / (stem + "_dark.png"), d.dark);
            write_png(out / (stem + "_t_raw.png"), d.t_raw);
            write_png(out / (stem + "_t_dcp.png"), d.result.transmission);
            const BccrTrace b = dehaze_bccr_traced(hazy, s.priors.bccr);
            write_png(out / (stem + "_t_bound.png"), b.t_bound);
            write_png(out / (stem + "_t_bccr.png"), b.result.transmission);
            for (std::size_t j = 0; j < b.weights.size(); ++j)
                write_png(out / (stem + "_w" + std::to_string(j) + ".png"), b.weights[j]);
            rows[i] = {d.result.atmosphere, b.result.atmosphere, haziness(hazy)};
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    std::printf("name\tdcp_a_r\tdcp_a_g\tdcp_a_b\tbccr_a_r\tbccr_a_g\tbccr_a_b\thaziness\n");
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (errors[i]) continue;
        const Row& r = rows[i];
        std::printf("%s\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\n", files[i].filename().string().c_str(), r.dcp_a[0],
                    r.dcp_a[1], r.dcp_a[2], r.bccr_a[0], r.bccr_a[1], r.bccr_a[2], r.haze);
    }
    return report_batch(files, errors);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Physics-prior image dehazing toolkit"};
    app.require_subcommand(1);

    DehazeArgs dehaze;
    auto* c_dehaze = app.add_subcommand("dehaze", "dehaze images with DCP, BCCR or the fused model");
    add_common(c_dehaze, dehaze.common);
    c_dehaze->add_option("inputs", dehaze.inputs, "input PNG files or directories")->required();
    c_dehaze->add_option("-o,--output", dehaze.output, "output directory")->required();
    c_dehaze->add_option("--method", dehaze.method, "dcp, bccr or fused")
        ->check(CLI::IsMember({"dcp", "bccr", "fused"}));
    c_dehaze->add_option("--weights", dehaze.weights, "fusion weights (PFMW file)");
    c_dehaze->add_flag("--dump-intermediates", dehaze.dump, "also write transmission maps and gates");

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "synthesize hazy images from clear ones");
    add_common(c_synth, synth.common);
    c_synth->add_option("--clear", synth.clear_dir, "directory of clear PNGs")->required();
    c_synth->add_option("-o,--output", synth.output, "output directory")->required();
    c_synth->add_option("--variants", synth.variants, "hazy variants per image")->check(CLI::PositiveNumber);
    c_synth->add_option("--a-range", synth.a_range, "atmospheric light range lo hi")->expected(2);
    c_synth->add_option("--t-range", synth.t_range, "transmission range lo hi")->expected(2);
    c_synth->add_option("--field", synth.field, "constant, random or mixed")
        ->check(CLI::IsMember({"constant", "random", "mixed"}));

    EvalArgs eval;
    auto* c_eval = app.add_subcommand("eval", "full-reference metrics of predictions against references");
    add_common(c_eval, eval.common);
    c_eval->add_option("--pred", eval.pred, "directory of predicted PNGs")->required();
    c_eval->add_option("--ref", eval.ref, "directory of reference PNGs")->required();

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "fit the fusion network with the physical loss");
    add_common(c_train, train.common);
    c_train->add_option("--hazy", train.hazy_dir, "directory of hazy training PNGs")->required();
    c_train->add_option("-o,--output", train.output, "trained weights path")->required();
    c_train->add_option("--weights", train.init_weights, "initial weights (default: seeded initialization)");
    c_train->add_option("--trace", train.trace_path, "loss trace CSV path (default: stdout)");
    c_train->add_option("--steps", train.steps);
    c_train->add_option("--batch", train.batch);
    c_train->add_option("--crop", train.crop);
    c_train->add_option("--lr", train.lr);
    c_train->add_option("--momentum", train.momentum);

    InspectArgs inspect;
    auto* c_inspect = app.add_subcommand("inspect", "dump intermediate maps of both priors");
    add_common(c_inspect, inspect.common);
    c_inspect->add_option("inputs", inspect.inputs, "input PNG files or directories")->required();
    c_inspect->add_option("-o,--output", inspect.output, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kBadConfig;
    }

    try {
        if (c_dehaze->parsed()) return cmd_dehaze(dehaze);
        if (c_synth->parsed()) return cmd_synth(synth);
        if (c_eval->parsed()) return cmd_eval(eval);
        if (c_train->parsed()) return cmd_train(train);
        if (c_inspect->parsed()) return cmd_inspect(inspect);
    } catch (...) {
        const auto e = std::current_exception();
        std::cerr << "error: " << message_of(e) << "\n";
        return exit_code_for(e);
    }
    return kFailure;
}
