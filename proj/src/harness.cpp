#include "kernelayers/harness.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <future>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "kernelayers/error.hpp"
#include "kernelayers/optim.hpp"

namespace kl {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'K', 'L', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class ByteReader {
public:
    ByteReader(std::string bytes, fs::path path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

    template <typename T>
    T get() {
        T v;
        need(sizeof(T));
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void doubles(double* out, std::size_t n) {
        need(n * sizeof(double));
        std::memcpy(out, bytes_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
    }

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw CheckpointError(path_.string() + ": truncated at offset " + std::to_string(pos_));
    }
    std::string bytes_;
    fs::path path_;
    std::size_t pos_ = 0;
};

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_summary_json(const fs::path& path, const TrainResult& r) {
    nlohmann::ordered_json j;
    j["test_acc"] = r.test ? nlohmann::json(r.test->accuracy) : nlohmann::json(nullptr);
    j["test_loss"] = r.test ? nlohmann::json(r.test->loss) : nlohmann::json(nullptr);
    j["param_count"] = r.param_count;
    j["completed_epochs"] = r.epochs.size();
    j["epochs_to_threshold"] = r.epochs_to_threshold >= 0 ? nlohmann::json(r.epochs_to_threshold) : nlohmann::json(nullptr);
    j["diverged"] = r.diverged;
    if (r.diverged) j["divergence_reason"] = r.divergence_reason;
    write_text(path, j.dump(2) + "\n");
}

std::string config_with_status(ExperimentConfig cfg, const TrainResult& r) {
    cfg.status.diverged = r.diverged;
    cfg.status.completed_epochs = static_cast<int>(r.epochs.size());
    return to_text(cfg);
}

} // namespace

EvalResult evaluate(Network& net, const Dataset& ds, std::size_t batch_size) {
    EvalResult r;
    r.count = ds.size();
    if (r.count == 0) return r;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, ds.size());
        idx.resize(end - start);
        for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
        auto [x, labels] = gather(ds, idx);
        const Tensor logits = net.forward(x, Mode::eval);
        const LossResult l = cross_entropy(logits, labels);
        loss_sum += l.loss * static_cast<double>(labels.size());
        const auto pred = argmax_last(logits);
        for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == static_cast<std::size_t>(labels[i]);
    }
    r.loss = loss_sum / static_cast<double>(r.count);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
    return r;
}

std::string metrics_header() { return "epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds"; }

std::string metrics_row(const EpochMetrics& m) {
    return std::to_string(m.epoch) + "," + fixed6(m.train_loss) + "," + fixed6(m.train_acc) + "," +
           fixed6(m.val_loss) + "," + fixed6(m.val_acc) + "," + fixed6(m.lr) + "," + fixed6(m.seconds);
}

PreparedData prepare_data(const ExperimentConfig& config, const DatasetFiles& data) {
    const RunConfig& run = config.run;
    require_compatible(config.model, data.train.image_shape());
    const Dataset train_all = data.train.head(run.train_limit);
    Split split = split_train_val(train_all, run.val_fraction, run.seed);
    return PreparedData{std::move(split.train), std::move(split.val), data.test.head(run.test_limit)};
}

TrainResult train(const ExperimentConfig& config, const DatasetFiles& data, const fs::path& out_dir,
                  std::ostream* log) {
    using Clock = std::chrono::steady_clock;
    const RunConfig& run = config.run;
    fs::create_directories(out_dir);

    const PreparedData prepared = prepare_data(config, data);
    Network net = build_model(config.model, run.seed);
    net.set_activation_guard(run.divergence_threshold);

    TrainResult result;
    result.param_count = net.parameter_count();
    write_text(out_dir / "config.resolved", config_with_status(config, result));

    Adam adam(net.parameters(), AdamOptions{run.lr});
    PlateauScheduler scheduler(run.lr, PlateauOptions{run.lr_factor, run.patience, run.min_lr});
    const BatchIterator batches(prepared.train.size(), run.batch_size, run.seed);

    std::ofstream metrics(out_dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    std::ofstream timing(out_dir / "timing.csv", std::ios::binary | std::ios::trunc);
    if (!metrics || !timing) throw Error("cannot write metrics into " + out_dir.string());
    metrics << metrics_header() << '\n' << std::flush;
    timing << "epoch,seconds\n" << std::flush;

    if (log) {
        *log << "model: " << result.param_count << " parameters, " << prepared.train.size() << " train / "
             << prepared.val.size() << " val / " << prepared.test.size() << " test\n";
    }

    for (int epoch = 1; epoch <= run.epochs && !result.diverged; ++epoch) {
        const auto t0 = Clock::now();
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = adam.lr();
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        try {
            for (const auto& idx : batches.epoch(static_cast<std::size_t>(epoch - 1))) {
                auto [x, labels] = gather(prepared.train, idx);
                net.zero_grad();
                const Tensor logits = net.forward(x, Mode::train);
                LossResult l = cross_entropy(logits, labels);
                if (!std::isfinite(l.loss)) throw DivergenceError("non-finite training loss");
                net.backward(l.grad);
                adam.step();
                loss_sum += l.loss * static_cast<double>(labels.size());
                const auto pred = argmax_last(logits);
                for (std::size_t i = 0; i < labels.size(); ++i)
                    correct += pred[i] == static_cast<std::size_t>(labels[i]);
                seen += labels.size();
            }
        } catch (const DivergenceError& e) {
            result.diverged = true;
            result.divergence_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
            if (log) *log << "diverged: " << result.divergence_reason << '\n';
            break;
        }
        m.train_loss = loss_sum / static_cast<double>(seen);
        m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        const EvalResult val = evaluate(net, prepared.val, run.eval_batch_size);
        if (!std::isfinite(val.loss)) {
            result.diverged = true;
            result.divergence_reason = "epoch " + std::to_string(epoch) + ": non-finite validation loss";
            break;
        }
        m.val_loss = val.loss;
        m.val_acc = val.accuracy;
        const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        m.seconds = run.record_wall_time ? seconds : 0.0;

        adam.set_lr(scheduler.epoch_end(m.val_acc));
        if (result.epochs_to_threshold < 0 && m.val_acc >= run.convergence_threshold) result.epochs_to_threshold = epoch;
        result.epochs.push_back(m);

        metrics << metrics_row(m) << '\n' << std::flush;
        timing << epoch << ',' << fixed6(seconds) << '\n' << std::flush;
        write_text(out_dir / "config.resolved", config_with_status(config, result));
        if (log) {
            *log << "epoch " << epoch << "/" << run.epochs << "  loss " << fixed6(m.train_loss) << "  acc "
                 << fixed6(m.train_acc) << "  val_loss " << fixed6(m.val_loss) << "  val_acc " << fixed6(m.val_acc)
                 << "  lr " << m.lr << "  " << fixed6(seconds) << "s\n"
                 << std::flush;
        }
    }

    if (!result.diverged) {
        result.test = evaluate(net, prepared.test, run.eval_batch_size);
        save_checkpoint(out_dir / "model.ckpt", config, net);
        if (log) *log << "test: loss " << fixed6(result.test->loss) << "  acc " << fixed6(result.test->accuracy) << '\n';
    }
    write_text(out_dir / "config.resolved", config_with_status(config, result));
    write_summary_json(out_dir / "summary.json", result);
    return result;
}

void save_checkpoint(const fs::path& path, const ExperimentConfig& config, Network& net) {
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    ExperimentConfig snapshot = config;
    snapshot.status = RunStatus{};
    const std::string text = to_text(snapshot);
    put<std::uint64_t>(out, text.size());
    out << text;
    const auto state = net.state();
    put<std::uint64_t>(out, state.size());
    for (const NamedTensor& t : state) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out << t.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value->rank()));
        for (std::size_t d : t.value->shape()) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.value->ptr()), static_cast<std::streamsize>(t.value->size() * 8));
    }
    write_text(path, out.str());
}

LoadedModel load_checkpoint(const fs::path& path) {
    std::string bytes;
    try {
        bytes = read_text(path);
    } catch (const Error&) {
        throw CheckpointError("cannot read checkpoint " + path.string());
    }
    ByteReader in(std::move(bytes), path);
    if (in.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
        throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const auto text_len = in.get<std::uint64_t>();
    LoadedModel loaded;
    try {
        loaded.config = parse_config(in.str(text_len));
        loaded.net = build_model(loaded.config.model, loaded.config.run.seed);
    } catch (const CheckpointError&) {
        throw;
    } catch (const Error& e) {
        throw CheckpointError(path.string() + ": embedded config invalid: " + e.what());
    }

    auto state = loaded.net.state();
    const auto count = in.get<std::uint64_t>();
    if (count != state.size()) {
        throw CheckpointError(path.string() + ": holds " + std::to_string(count) + " tensors, model expects " +
                              std::to_string(state.size()));
    }
    for (NamedTensor& t : state) {
        const std::string name = in.str(in.get<std::uint32_t>());
        if (name != t.name) throw CheckpointError(path.string() + ": tensor '" + name + "' where '" + t.name + "' expected");
        Shape shape(in.get<std::uint32_t>());
        for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
        if (shape != t.value->shape()) {
            throw CheckpointError(path.string() + ": tensor '" + name + "' has shape " + shape_str(shape) +
                                  ", model expects " + shape_str(t.value->shape()));
        }
        in.doubles(t.value->ptr(), t.value->size());
    }
    if (!in.done()) throw CheckpointError(path.string() + ": trailing bytes at offset " + std::to_string(in.pos()));
    return loaded;
}

void require_compatible(const ModelConfig& model, const Shape& image_shape) {
    if (image_shape != model.input_shape) {
        throw CheckpointError("model expects " + shape_str(model.input_shape) + " images, data has " +
                              shape_str(image_shape));
    }
}

std::vector<SweepEntry> parse_grid(std::string_view text) {
    std::vector<SweepEntry> grid;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        SweepEntry e;
        if (!(fields >> e.id)) continue;
        std::string path;
        if (!(fields >> path)) throw ParseError("grid entry '" + e.id + "' lacks a config path (use '-' for none)", line_no);
        if (path != "-") e.config_path = path;
        for (std::string o; fields >> o;) {
            if (o.find('=') == std::string::npos) throw ParseError("override '" + o + "' lacks '='", line_no);
            e.overrides.push_back(o);
        }
        grid.push_back(std::move(e));
    }
    return grid;
}

std::string kernel_label(const ModelConfig& m) {
    if (m.conv_placement != Placement::none || m.pool_placement != Placement::none) return kernel_name(m.layer_kernel());
    if (m.dense_kind != KernelType::linear) return kernel_name(m.dense_kernel());
    return "linear";
}

std::string placement_label(const ModelConfig& m) {
    const std::string base = m.baseline_pool == BaselinePool::max ? "max" : "avg";
    return "conv=" + to_string(m.conv_placement, false) +
           " pool=" + (m.pool_placement == Placement::none ? base : to_string(m.pool_placement, true)) +
           " dense=" + (m.dense_kind == KernelType::linear ? std::string("linear") : kernel_name(m.dense_kernel()));
}

std::vector<SweepRow> run_sweep(const std::vector<SweepEntry>& grid, const SweepOptions& opts) {
    if (grid.empty()) throw std::invalid_argument("sweep grid has no runs");
    std::set<std::string> ids;
    for (const auto& e : grid)
        if (!ids.insert(e.id).second) throw std::invalid_argument("duplicate run id '" + e.id + "' in sweep grid");

    // Resolve every config up front; resolution failures become error rows.
    std::vector<std::optional<ExperimentConfig>> configs(grid.size());
    std::vector<SweepRow> rows(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        rows[i].id = grid[i].id;
        try {
            ConfigSource src = grid[i].config_path.empty()
                                   ? ConfigSource{}
                                   : ConfigSource::parse(read_text(opts.grid_dir / grid[i].config_path));
            for (const auto& o : grid[i].overrides) src.apply_override(o);
            for (const auto& o : opts.extra_overrides) src.apply_override(o);
            configs[i] = src.resolve();
            configs[i]->run.output_dir = (opts.out_dir / grid[i].id).string();
            rows[i].kernel = kernel_label(configs[i]->model);
            rows[i].placement = placement_label(configs[i]->model);
        } catch (const std::exception& e) {
            rows[i].error = e.what();
        }
    }
    if (opts.jobs > 1) {
        std::set<std::uint64_t> seeds;
        for (const auto& c : configs)
            if (c && !seeds.insert(c->run.seed).second)
                throw std::invalid_argument("parallel sweeps need a distinct seed per run");
    }

    auto run_one = [&](std::size_t i, std::ostream* log) {
        if (!configs[i]) return;
        try {
            const ExperimentConfig& cfg = *configs[i];
            const DatasetFiles data = load_dataset(cfg.run.dataset, resolve_data_root(cfg.run.data_root));
            const TrainResult r = train(cfg, data, cfg.run.output_dir, log);
            rows[i].diverged = r.diverged;
            rows[i].epochs_to_threshold = r.epochs_to_threshold;
            if (r.test) rows[i].test_acc = r.test->accuracy;
        } catch (const std::exception& e) {
            rows[i].error = e.what();
        }
    };

    fs::create_directories(opts.out_dir);
    if (opts.jobs <= 1) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (opts.log) *opts.log << "== run " << grid[i].id << '\n';
            run_one(i, opts.log);
        }
    } else {
        std::vector<std::future<void>> pending;
        std::size_t next = 0;
        while (next < grid.size() || !pending.empty()) {
            while (next < grid.size() && pending.size() < opts.jobs) {
                pending.push_back(std::async(std::launch::async, run_one, next, nullptr));
                ++next;
            }
            pending.front().get();
            pending.erase(pending.begin());
        }
    }

    write_text(opts.out_dir / "summary.csv", sweep_csv(rows));
    write_text(opts.out_dir / "summary.md", sweep_markdown(rows));
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "run_id,kernel,placement,test_acc,epochs_to_threshold,diverged,error\n";
    for (const auto& r : rows) {
        std::string error = r.error;
        std::replace(error.begin(), error.end(), '"', '\'');
        os << r.id << ',' << r.kernel << ",\"" << r.placement << "\"," << (r.test_acc ? fixed6(*r.test_acc) : "")
           << ',' << (r.epochs_to_threshold >= 0 ? std::to_string(r.epochs_to_threshold) : "") << ','
           << (r.diverged ? "true" : "false") << ",\"" << error << "\"\n";
    }
    return os.str();
}

std::string sweep_markdown(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "| Run | Kernel | Placement | Test accuracy (%) | Epochs to val threshold | Diverged |\n"
       << "|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        char acc[32] = "n/a";
        if (r.test_acc) std::snprintf(acc, sizeof(acc), "%.2f", 100.0 * *r.test_acc);
        os << "| " << r.id << " | " << r.kernel << " | " << r.placement << " | "
           << (r.error.empty() ? std::string(acc) : "error: " + r.error) << " | "
           << (r.epochs_to_threshold >= 0 ? std::to_string(r.epochs_to_threshold) : "-") << " | "
           << (r.diverged ? "yes" : "no") << " |\n";
    }
    return os.str();
}

} // namespace kl
