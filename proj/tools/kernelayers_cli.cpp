// kernelayers: train, evaluate and sweep kernelized CNNs; check gradients.

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "kernelayers/config.hpp"
#include "kernelayers/data.hpp"
#include "kernelayers/error.hpp"
#include "kernelayers/harness.hpp"
#include "kernelayers/verify.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { ok = 0, failed = 1, usage = 2, diverged = 3, data_error = 4 };

// Shortest text that reads back to the same double.
std::string exact(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw kl::Error("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct CommonFlags {
    std::string config;
    std::string data_root;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::vector<std::string> sets;
};

void add_run_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--data-root", f.data_root, "Dataset root (default: $KERNELAYERS_DATA)");
    cmd->add_option("--seed", f.seed, "Override train.seed");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--epochs", f.epochs, "Override train.epochs");
    cmd->add_option("--set", f.sets, "Override any key, e.g. --set model.n=3");
}

std::vector<std::string> overrides_of(const CommonFlags& f) {
    std::vector<std::string> o = f.sets;
    if (!f.data_root.empty()) o.push_back("data.root=" + f.data_root);
    if (f.seed) o.push_back("train.seed=" + std::to_string(*f.seed));
    if (f.epochs) o.push_back("train.epochs=" + std::to_string(*f.epochs));
    return o;
}

int cmd_train(const CommonFlags& f) {
    kl::ConfigSource src = f.config.empty() ? kl::ConfigSource{} : kl::ConfigSource::parse(slurp(f.config));
    for (const auto& o : overrides_of(f)) src.apply_override(o);
    if (!f.out.empty()) src.set("train.output_dir", f.out);
    const kl::ExperimentConfig cfg = src.resolve();

    const auto data = kl::load_dataset(cfg.run.dataset, kl::resolve_data_root(cfg.run.data_root));
    const kl::TrainResult r = kl::train(cfg, data, cfg.run.output_dir, &std::cerr);
    if (r.diverged) {
        std::cerr << "run diverged: " << r.divergence_reason << '\n';
        return diverged;
    }
    std::cout << "test_acc " << exact(r.test->accuracy) << "\ntest_loss " << exact(r.test->loss) << "\nparams "
              << r.param_count << '\n';
    return ok;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& data_root,
             std::size_t limit) {
    kl::LoadedModel m = kl::load_checkpoint(checkpoint);
    kl::DatasetId id = m.config.run.dataset;
    if (!dataset.empty()) {
        kl::ConfigSource probe;
        probe.set("data.dataset", dataset);
        id = probe.resolve().run.dataset;
    }
    const std::string root = data_root.empty() ? m.config.run.data_root : data_root;
    kl::DatasetFiles data = kl::load_dataset(id, kl::resolve_data_root(root));
    kl::require_compatible(m.config.model, data.test.image_shape());
    const std::size_t n = limit ? limit : (id == m.config.run.dataset ? m.config.run.test_limit : 0);
    const kl::EvalResult r = kl::evaluate(m.net, data.test.head(n), m.config.run.eval_batch_size);
    std::cout << "test_acc " << exact(r.accuracy) << "\ntest_loss " << exact(r.loss) << "\ncount " << r.count << '\n';
    return ok;
}

int cmd_sweep(const std::string& grid_path, const CommonFlags& f, unsigned jobs) {
    const auto grid = kl::parse_grid(slurp(grid_path));
    kl::SweepOptions opts;
    opts.grid_dir = fs::path(grid_path).parent_path();
    opts.out_dir = f.out.empty() ? fs::path("runs/sweep") : fs::path(f.out);
    opts.extra_overrides = overrides_of(f);
    opts.jobs = jobs;
    opts.log = &std::cerr;
    const auto rows = kl::run_sweep(grid, opts);
    std::cout << kl::sweep_markdown(rows);
    return ok;
}

int cmd_gradcheck(const std::string& scope, const std::string& report, std::uint64_t seed) {
    kl::GradCheckOptions opts;
    opts.seed = seed;
    const auto reports = kl::run_gradcheck(scope, opts);
    std::cout << kl::format_report_table(reports);
    if (!report.empty()) {
        std::ofstream out(report, std::ios::binary);
        out << kl::format_report_csv(reports);
    }
    bool all = true;
    for (const auto& r : reports) all = all && r.passed();
    std::cout << (all ? "all gradient checks passed\n" : "gradient check FAILED\n");
    return all ? ok : failed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kernelized convolution, pooling and dense layers: training and verification"};
    app.require_subcommand(1);

    CommonFlags train_flags;
    auto* train = app.add_subcommand("train", "Train one configuration");
    train->add_option("--config", train_flags.config, "Config file")->check(CLI::ExistingFile);
    add_run_flags(train, train_flags);

    std::string checkpoint, dataset, eval_root;
    std::size_t eval_limit = 0;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a test split");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--dataset", dataset, "mnist | fashion-mnist | cifar10 (default: the checkpoint's)");
    eval->add_option("--data-root", eval_root, "Dataset root");
    eval->add_option("--limit", eval_limit, "Evaluate only the first N test images");

    CommonFlags sweep_flags;
    std::string grid;
    unsigned jobs = 1;
    auto* sweep = app.add_subcommand("sweep", "Run a grid of configurations and tabulate results");
    sweep->add_option("--grid", grid, "Grid file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--jobs", jobs, "Concurrent runs (needs distinct seeds)")->check(CLI::PositiveNumber);
    add_run_flags(sweep, sweep_flags);

    std::string scope = "all", report;
    std::uint64_t gc_seed = 7;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    gradcheck->add_option("--scope", scope, "all or one layer scope")
        ->check(CLI::IsMember([] {
            auto s = kl::gradcheck_scopes();
            s.push_back("all");
            return s;
        }()));
    gradcheck->add_option("--report", report, "Write the CSV report here");
    gradcheck->add_option("--seed", gc_seed, "Random seed for shapes and probes");

    auto* schema = app.add_subcommand("print-schema", "Print the config schema with defaults");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : usage;
    }

    try {
        if (*train) return cmd_train(train_flags);
        if (*eval) return cmd_eval(checkpoint, dataset, eval_root, eval_limit);
        if (*sweep) {
            sweep_flags.config.clear();
            return cmd_sweep(grid, sweep_flags, jobs);
        }
        if (*gradcheck) return cmd_gradcheck(scope, report, gc_seed);
        if (*schema) {
            std::cout << kl::schema_text();
            return ok;
        }
    } catch (const kl::ParseError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return usage;
    } catch (const kl::FormatError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return data_error;
    } catch (const kl::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return data_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return failed;
    }
    return usage;
}
