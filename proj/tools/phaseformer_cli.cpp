// Command-line front end: train | infer | eval | param-count | flops |
// grad-check | diagnose-phase | config show.
//
// Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numerical abort.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "phaseformer/phaseformer.hpp"

namespace fs = std::filesystem;
using namespace phaseformer;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numerical = 3 };

struct Common {
    std::string config_path;
    bool desk = false;
    std::optional<std::size_t> epochs;
    std::uint64_t seed = 0;
    std::string data_dir;
    std::string checkpoint;
    std::string out;
};

void add_config_flags(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "key = value configuration file");
    app->add_flag("--desk", c.desk, "start from the small CPU preset");
}

RunConfig resolve_config(const Common& c) {
    RunConfig base;
    if (c.desk) base = desk_run_config();
    RunConfig rc = c.config_path.empty() ? parse_config("", base) : load_config_file(c.config_path, base);
    if (c.epochs) rc.train.epochs = *c.epochs;
    return rc;
}

std::size_t worker_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("PHFM_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap > 0) n = std::min(n, static_cast<std::size_t>(cap));
    }
    return n;
}

/// Runs f(i) for i in [0, n) on up to worker_threads() threads; results land in
/// caller-owned slots so the outcome does not depend on scheduling.
template <typename F>
void parallel_for(std::size_t n, F f) {
    const std::size_t t = std::min(worker_threads(), n);
    if (t <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::exception_ptr> errors(t);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < t; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += t) f(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

int run_train(const Common& c, bool resume) {
    if (c.data_dir.empty()) throw UsageError("train: --data DIR is required");
    RunConfig rc = resolve_config(c);
    std::optional<Checkpoint> resumed;
    if (resume) {
        if (c.checkpoint.empty()) throw UsageError("train: --resume needs --checkpoint PATH");
        resumed = load_checkpoint(c.checkpoint);
        RunConfig stored = parse_config(resumed->config_text);
        if (c.epochs) stored.train.epochs = *c.epochs;
        rc = stored;
    }
    auto ds = load_paired_dataset(c.data_dir, rc.model.input_height, rc.model.input_width);
    Trainer trainer(rc, std::move(ds), c.seed);
    if (resumed) trainer.restore(*resumed);

    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!c.out.empty()) {
        log_file.open(c.out);
        if (!log_file) throw UsageError("train: cannot write log '" + c.out + "'");
        log = &log_file;
    }
    TrainHooks hooks;
    hooks.checkpoint_path = c.checkpoint;
    hooks.log = log;
    const auto result = trainer.run(hooks);
    std::fprintf(stderr, "trained %zu steps, final psnr %.4f dB\n", result.steps, result.final_psnr);
    return ok;
}

int run_infer(const Common& c, const std::vector<std::string>& inputs, bool x2) {
    if (c.checkpoint.empty()) throw UsageError("infer: --checkpoint PATH is required");
    if (inputs.empty()) throw UsageError("infer: no input images");
    if (c.out.empty()) throw UsageError("infer: --out PATH is required");
    RunConfig rc;
    const auto model = model_from_checkpoint(load_checkpoint(c.checkpoint), &rc);
    const bool to_dir = inputs.size() > 1 || fs::is_directory(c.out);
    if (to_dir) fs::create_directories(c.out);
    std::vector<Tensor<float>> images(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i)
        images[i] = load_image<float>(inputs[i], rc.model.input_height, rc.model.input_width);
    std::vector<Tensor<float>> outputs(inputs.size());
    parallel_for(inputs.size(), [&](std::size_t i) {
        const auto& img = images[i];
        auto out = infer(model, reshape(img, Shape{1, 3, img.dim(1), img.dim(2)}));
        outputs[i] = select_leading(x2 ? out.double_res : out.full_res, 0);
    });
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::string path = to_dir ? (fs::path(c.out) / fs::path(inputs[i]).filename()).string() : c.out;
        save_image(path, outputs[i]);
    }
    return ok;
}

int run_eval(const Common& c) {
    if (c.data_dir.empty()) throw UsageError("eval: --data DIR is required");
    RunConfig rc = resolve_config(c);
    std::optional<Phaseformer<float>> model;
    if (!c.checkpoint.empty()) model.emplace(model_from_checkpoint(load_checkpoint(c.checkpoint), &rc));
    const auto ds = load_paired_dataset(c.data_dir, rc.model.input_height, rc.model.input_width);
    MetricReport report;
    report.rows.resize(ds.size());
    parallel_for(ds.size(), [&](std::size_t i) {
        const auto& p = ds.pairs[i];
        Tensor<float> restored = p.degraded;
        if (model) restored = select_leading(infer(*model, reshape(p.degraded, Shape{1, 3, p.degraded.dim(1), p.degraded.dim(2)})).full_res, 0);
        report.rows[i] = evaluate_pair(ds.names[i], restored, p.clean);
    });
    std::ofstream file;
    std::ostream& os = c.out.empty() ? std::cout : (file.open(c.out), file);
    if (!os) throw UsageError("eval: cannot write '" + c.out + "'");
    auto line = [&os](const MetricRow& r) {
        char buf[512];
        std::snprintf(buf, sizeof buf, "%s\t%.4f\t%.4f\t%.4f\t%.4f", r.name.c_str(), r.psnr, r.ssim, r.uiqm, r.uism);
        os << buf << '\n';
    };
    os << "image\tpsnr\tssim\tuiqm\tuism\n";
    for (const auto& r : report.rows) line(r);
    line(report.mean());
    return ok;
}

int run_param_count(const Common& c) {
    const RunConfig rc = resolve_config(c);
    const auto rep = count_parameters(rc.model);
    std::cout << "total\t" << rep.total << '\n';
    for (const auto& [module, n] : rep.by_module) std::cout << module << '\t' << n << '\n';
    return ok;
}

int run_flops(const Common& c) {
    const RunConfig rc = resolve_config(c);
    const auto rep = estimate_flops(rc.model, rc.model.input_height, rc.model.input_width);
    char buf[128];
    std::snprintf(buf, sizeof buf, "input\t%zux%zu\nflops\t%.0f\ngflops\t%.3f\n", rc.model.input_height,
                  rc.model.input_width, rep.total, rep.total / 1e9);
    std::cout << buf;
    for (const auto& [part, f] : rep.by_module) {
        std::snprintf(buf, sizeof buf, "%s\t%.0f\n", part.c_str(), f);
        std::cout << buf;
    }
    return ok;
}

int run_grad_check(const Common& c, double fault, std::size_t sample) {
    const auto r = model_grad_check(micro_config(), c.seed, sample, fault);
    std::printf("checked\t%zu\nmax_rel_error\t%.3e\nmax_abs_diff\t%.3e\nworst\t%s\n", r.checked, r.max_rel_error,
                r.max_abs_diff, r.worst.c_str());
    if (!(r.max_rel_error < 1e-3)) {
        std::fprintf(stderr, "grad-check: relative error %.3e exceeds 1e-3 at %s\n", r.max_rel_error, r.worst.c_str());
        return numerical;
    }
    return ok;
}

int run_diagnose(const Common& c, std::size_t synthetic) {
    PairedDataset ds;
    if (!c.data_dir.empty()) {
        const RunConfig rc = resolve_config(c);
        ds = load_paired_dataset(c.data_dir, rc.model.input_height, rc.model.input_width);
    } else if (synthetic > 0) {
        ds = synthetic_haze_dataset(synthetic, 64, 64, c.seed);
    } else {
        throw UsageError("diagnose-phase: give --data DIR or --synthetic N");
    }
    const auto d = diagnose_phase(ds);
    std::printf("image\td_amp\td_phase\n");
    for (std::size_t i = 0; i < d.pairs.size(); ++i)
        std::printf("%s\t%.6f\t%.6f\n", ds.names[i].c_str(), d.pairs[i].amplitude, d.pairs[i].phase);
    std::printf("mean\t%.6f\t%.6f\namplitude_dominant\t%.4f\n", d.mean_amplitude, d.mean_phase,
                d.fraction_amplitude_dominant);
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Phase-aware transformer for underwater image enhancement"};
    app.require_subcommand(1);
    Common c;
    bool resume = false, x2 = false;
    double fault = 0.0;
    std::size_t sample = 20, synthetic = 0;
    std::vector<std::string> inputs;

    auto* train = app.add_subcommand("train", "train on a paired dataset");
    add_config_flags(train, c);
    train->add_option("--data", c.data_dir, "directory with degraded/ and clean/");
    train->add_option("--epochs", c.epochs, "override the configured epoch count");
    train->add_option("--seed", c.seed, "run seed");
    train->add_option("--checkpoint", c.checkpoint, "checkpoint written after every epoch");
    train->add_option("--out", c.out, "step log file (default stdout)");
    train->add_flag("--resume", resume, "continue from --checkpoint");

    auto* inf = app.add_subcommand("infer", "enhance images with a trained checkpoint");
    inf->add_option("--checkpoint", c.checkpoint, "trained checkpoint");
    inf->add_option("--out", c.out, "output image, or directory for several inputs");
    inf->add_flag("--x2", x2, "write the double-resolution output");
    inf->add_option("images", inputs, "input images (PPM or PNG)");

    auto* eval = app.add_subcommand("eval", "PSNR, SSIM, UIQM and UISM over a paired dataset");
    add_config_flags(eval, c);
    eval->add_option("--data", c.data_dir, "directory with degraded/ and clean/");
    eval->add_option("--checkpoint", c.checkpoint, "restore with this model (default: score degraded inputs)");
    eval->add_option("--out", c.out, "metrics table file (default stdout)");

    auto* pc = app.add_subcommand("param-count", "trainable parameter count");
    add_config_flags(pc, c);

    auto* fl = app.add_subcommand("flops", "forward-pass FLOPs at the configured input size");
    add_config_flags(fl, c);

    auto* gc = app.add_subcommand("grad-check", "finite-difference check of the micro model");
    gc->add_option("--seed", c.seed, "model seed");
    gc->add_option("--sample", sample, "number of parameter scalars to perturb");
    gc->add_option("--inject-fault", fault)->group("");

    auto* dp = app.add_subcommand("diagnose-phase", "amplitude vs phase distance of degraded pairs");
    add_config_flags(dp, c);
    dp->add_option("--data", c.data_dir, "directory with degraded/ and clean/");
    dp->add_option("--synthetic", synthetic, "use N generated haze pairs instead of --data");
    dp->add_option("--seed", c.seed, "seed for generated pairs");

    auto* cfg = app.add_subcommand("config", "configuration utilities");
    cfg->require_subcommand(1);
    auto* show = cfg->add_subcommand("show", "print the resolved configuration");
    add_config_flags(show, c);
    show->add_option("--epochs", c.epochs, "override the configured epoch count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : usage;
    }

    try {
        if (*train) return run_train(c, resume);
        if (*inf) return run_infer(c, inputs, x2);
        if (*eval) return run_eval(c);
        if (*pc) return run_param_count(c);
        if (*fl) return run_flops(c);
        if (*gc) return run_grad_check(c, fault, sample);
        if (*dp) return run_diagnose(c, synthetic);
        if (*show) {
            std::cout << format_config(resolve_config(c));
            return ok;
        }
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return numerical;
    } catch (const IngestionError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return data;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return data;
    } catch (const DomainError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return data;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return data;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return usage;
    }
    return usage;
}
