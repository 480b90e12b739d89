#include "kernelayers/config.hpp"

#include <algorithm>
#include <charconv>
#include <optional>
#include <sstream>

#include "kernelayers/error.hpp"

namespace kl {

namespace {

struct KeySpec {
    const char* section;
    const char* key;
    const char* fallback;  // "auto" when derived from other keys
    const char* help;
};

// Order here is the order of the schema and of resolved snapshots.
constexpr KeySpec kKeys[] = {
    {"model", "architecture", "model1", "model1 | model2"},
    {"model", "conv", "conv", "conv | kerv-first | kerv-last | kerv-all"},
    {"model", "pool", "max", "max | avg | learnable-first | learnable-last | learnable-all"},
    {"model", "base_pool", "max", "max | avg; pooling used in blocks without a learnable pool"},
    {"model", "kernel", "linear", "linear | poly | rbf; kernel of kervolution and learnable pooling"},
    {"model", "dense_kind", "linear", "linear | poly | rbf; kernel of the hidden dense layer (KDL)"},
    {"model", "n", "2", "polynomial order, integer >= 1"},
    {"model", "c_init", "1.0", "initial polynomial constant c, >= 0 (learnable)"},
    {"model", "sigma", "0.9", "gaussian RBF width, > 0 (fixed)"},
    {"model", "poly_mode", "elementwise", "elementwise: sum (x w + c)^n | classical: (<x,w> + c)^n"},
    {"model", "pool_sharing", "per_location", "per_location | global; learnable pooling weight sharing"},
    {"model", "class_count", "auto", "output classes; auto: from dataset"},
    {"model", "input_shape", "auto", "CxHxW; auto: from dataset"},
    {"model", "conv_filters", "auto", "comma list, one per block; auto: 32,64 | 32,64,128,128,256"},
    {"model", "dense_units", "auto", "hidden dense width; auto: 320 (model1) | 128 (model2)"},
    {"model", "kernel_size", "3", "square convolution window"},
    {"model", "conv_stride", "1", ""},
    {"model", "conv_padding", "1", ""},
    {"model", "pool_size", "2", "square pooling window"},
    {"model", "pool_stride", "2", ""},
    {"model", "dropout_block", "0.25", "dropout rate inside blocks, [0,1)"},
    {"model", "dropout_dense", "0.5", "dropout rate before the classifier, [0,1)"},
    {"model", "bn_eps", "1e-05", ""},
    {"model", "bn_momentum", "0.9", "running = momentum * running + (1 - momentum) * batch"},
    {"train", "seed", "1", "seeds initialization, dropout, split and batch order"},
    {"train", "epochs", "auto", ">= 1; auto: 10 (mnist, fashion-mnist) | 20 (cifar10)"},
    {"train", "batch_size", "64", ">= 2"},
    {"train", "eval_batch_size", "256", ">= 1"},
    {"train", "lr", "0.001", "initial Adam learning rate"},
    {"train", "patience", "auto", "plateau epochs before halving; auto: 2 (model1) | 5 (model2)"},
    {"train", "lr_factor", "0.5", "plateau multiplier, (0,1)"},
    {"train", "min_lr", "1e-06", "learning-rate floor"},
    {"train", "val_fraction", "0.1", "validation carve-out of the training split, (0,1)"},
    {"train", "divergence_threshold", "1000000", "activation magnitude treated as divergence"},
    {"train", "convergence_threshold", "0.97", "val accuracy defining epochs-to-threshold"},
    {"train", "output_dir", "runs/default", ""},
    {"train", "record_wall_time", "false", "write measured seconds into metrics.csv (breaks byte-determinism)"},
    {"data", "dataset", "mnist", "mnist | fashion-mnist | cifar10"},
    {"data", "root", "", "dataset root; empty: $KERNELAYERS_DATA"},
    {"data", "train_limit", "0", "use only the first N training images (0: all)"},
    {"data", "test_limit", "0", "use only the first N test images (0: all)"},
    {"status", "diverged", "false", "snapshot only"},
    {"status", "completed_epochs", "0", "snapshot only"},
};

const KeySpec* find_key(const std::string& dotted) {
    for (const KeySpec& k : kKeys)
        if (dotted == std::string(k.section) + "." + k.key) return &k;
    return nullptr;
}

bool known_section(std::string_view s) { return s == "model" || s == "train" || s == "data" || s == "status"; }

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Typed reads of one entry; errors carry the entry's line.
class Reader {
public:
    Reader(std::string key, std::string value, int line)
        : key_(std::move(key)), value_(std::move(value)), line_(line) {}

    [[noreturn]] void fail(const std::string& why) const {
        throw ParseError(key_ + " = '" + value_ + "': " + why, line_);
    }

    template <typename E>
    E choice(std::initializer_list<std::pair<const char*, E>> options) const {
        std::string allowed;
        for (const auto& [name, e] : options) {
            if (value_ == name) return e;
            allowed += allowed.empty() ? name : std::string(" | ") + name;
        }
        fail("expected one of " + allowed);
    }

    long long integer() const {
        long long v = 0;
        auto [p, ec] = std::from_chars(value_.data(), value_.data() + value_.size(), v);
        if (ec != std::errc() || p != value_.data() + value_.size()) fail("not an integer");
        return v;
    }

    long long integer_at_least(long long lo) const {
        const long long v = integer();
        if (v < lo) fail("must be >= " + std::to_string(lo));
        return v;
    }

    double real() const {
        double v = 0.0;
        auto [p, ec] = std::from_chars(value_.data(), value_.data() + value_.size(), v);
        if (ec != std::errc() || p != value_.data() + value_.size()) fail("not a number");
        return v;
    }

    bool boolean() const {
        if (value_ == "true" || value_ == "1") return true;
        if (value_ == "false" || value_ == "0") return false;
        fail("expected true | false");
    }

    std::vector<std::size_t> size_list(char sep) const {
        std::vector<std::size_t> out;
        std::size_t start = 0;
        while (start <= value_.size()) {
            const std::size_t end = std::min(value_.find(sep, start), value_.size());
            const std::string part = trim(std::string_view(value_).substr(start, end - start));
            std::size_t v = 0;
            auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
            if (part.empty() || ec != std::errc() || p != part.data() + part.size() || v == 0)
                fail("expected positive integers separated by '" + std::string(1, sep) + "'");
            out.push_back(v);
            start = end + 1;
        }
        return out;
    }

    const std::string& text() const { return value_; }

private:
    std::string key_, value_;
    int line_;
};

} // namespace

ConfigSource ConfigSource::parse(std::string_view text) {
    ConfigSource src;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        std::string line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;

        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError("malformed section header", line_no);
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (!known_section(section)) throw ParseError("unknown section [" + section + "]", line_no);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
        if (section.empty()) throw ParseError("key outside of a section", line_no);
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        const std::string dotted = section + "." + key;
        if (!find_key(dotted)) throw ParseError("unknown key '" + key + "' in [" + section + "]", line_no);
        if (src.entries_.count(dotted)) throw ParseError("key '" + key + "' repeated in [" + section + "]", line_no);
        src.entries_[dotted] = Entry{value, line_no};
    }
    return src;
}

void ConfigSource::set(const std::string& dotted_key, const std::string& value) {
    if (!find_key(dotted_key)) throw ParseError("unknown key '" + dotted_key + "'", 0);
    entries_[dotted_key] = Entry{trim(value), 0};
}

void ConfigSource::apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ParseError("override '" + std::string(assignment) + "' lacks '='", 0);
    set(trim(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1)));
}

ExperimentConfig ConfigSource::resolve() const {
    auto reader = [this](const std::string& dotted) -> std::optional<Reader> {
        auto it = entries_.find(dotted);
        if (it == entries_.end()) return std::nullopt;
        return Reader(dotted, it->second.value, it->second.line);
    };
    // Entry if present, otherwise the schema fallback (never "auto" here).
    auto value_of = [&](const std::string& dotted) {
        if (auto r = reader(dotted)) return *r;
        const KeySpec* k = find_key(dotted);
        return Reader(dotted, k->fallback, 0);
    };
    auto explicit_value = [&](const std::string& dotted) -> std::optional<Reader> {
        auto r = reader(dotted);
        if (r && r->text() == "auto") return std::nullopt;
        return r;
    };

    ExperimentConfig cfg;
    ModelConfig& m = cfg.model;
    RunConfig& run = cfg.run;

    run.dataset = value_of("data.dataset").choice<DatasetId>(
        {{"mnist", DatasetId::mnist}, {"fashion-mnist", DatasetId::fashion_mnist}, {"cifar10", DatasetId::cifar10}});
    m.architecture = value_of("model.architecture")
                         .choice<Architecture>({{"model1", Architecture::model1}, {"model2", Architecture::model2}});
    const bool model1 = m.architecture == Architecture::model1;

    m.conv_placement = value_of("model.conv").choice<Placement>({{"conv", Placement::none},
                                                                 {"kerv-first", Placement::first},
                                                                 {"kerv-last", Placement::last},
                                                                 {"kerv-all", Placement::all}});
    m.baseline_pool = value_of("model.base_pool").choice<BaselinePool>({{"max", BaselinePool::max}, {"avg", BaselinePool::avg}});
    {
        const Reader r = value_of("model.pool");
        if (r.text() == "max" || r.text() == "avg") {
            m.pool_placement = Placement::none;
            if (!reader("model.base_pool")) m.baseline_pool = r.text() == "max" ? BaselinePool::max : BaselinePool::avg;
            else if (m.baseline_pool != (r.text() == "max" ? BaselinePool::max : BaselinePool::avg))
                r.fail("conflicts with base_pool");
        } else {
            m.pool_placement = r.choice<Placement>({{"learnable-first", Placement::first},
                                                    {"learnable-last", Placement::last},
                                                    {"learnable-all", Placement::all},
                                                    {"max", Placement::none},
                                                    {"avg", Placement::none}});
        }
    }
    const std::initializer_list<std::pair<const char*, KernelType>> kernel_types{
        {"linear", KernelType::linear}, {"poly", KernelType::poly}, {"rbf", KernelType::rbf}};
    m.kernel = value_of("model.kernel").choice<KernelType>(kernel_types);
    m.dense_kind = value_of("model.dense_kind").choice<KernelType>(kernel_types);
    m.poly_order = static_cast<int>(value_of("model.n").integer_at_least(1));
    {
        const Reader r = value_of("model.c_init");
        m.c_init = r.real();
        if (!(m.c_init >= 0.0)) r.fail("must be >= 0");
    }
    {
        const Reader r = value_of("model.sigma");
        m.sigma = r.real();
        if (!(m.sigma > 0.0)) r.fail("must be > 0");
    }
    m.poly_mode = value_of("model.poly_mode")
                      .choice<PolyMode>({{"elementwise", PolyMode::elementwise}, {"classical", PolyMode::classical}});
    m.pool_sharing = value_of("model.pool_sharing")
                         .choice<PoolSharing>({{"per_location", PoolSharing::per_location}, {"global", PoolSharing::global}});

    m.class_count = dataset_class_count(run.dataset);
    if (auto r = explicit_value("model.class_count")) m.class_count = static_cast<std::size_t>(r->integer_at_least(2));
    m.input_shape = dataset_input_shape(run.dataset);
    if (auto r = explicit_value("model.input_shape")) {
        m.input_shape = r->size_list('x');
        if (m.input_shape.size() != 3) r->fail("expected CxHxW");
    }
    m.conv_filters = model1 ? std::vector<std::size_t>{32, 64} : std::vector<std::size_t>{32, 64, 128, 128, 256};
    if (auto r = explicit_value("model.conv_filters")) {
        m.conv_filters = r->size_list(',');
        if (m.conv_filters.size() != m.block_count())
            r->fail("needs " + std::to_string(m.block_count()) + " entries for " + to_string(m.architecture));
    }
    m.dense_units = model1 ? 320 : 128;
    if (auto r = explicit_value("model.dense_units")) m.dense_units = static_cast<std::size_t>(r->integer_at_least(1));
    m.kernel_size = static_cast<std::size_t>(value_of("model.kernel_size").integer_at_least(1));
    m.conv_stride = static_cast<std::size_t>(value_of("model.conv_stride").integer_at_least(1));
    m.conv_padding = static_cast<std::size_t>(value_of("model.conv_padding").integer_at_least(0));
    m.pool_size = static_cast<std::size_t>(value_of("model.pool_size").integer_at_least(1));
    m.pool_stride = static_cast<std::size_t>(value_of("model.pool_stride").integer_at_least(1));
    auto rate = [&](const char* key) {
        const Reader r = value_of(key);
        const double v = r.real();
        if (!(v >= 0.0 && v < 1.0)) r.fail("must be in [0,1)");
        return v;
    };
    m.dropout_block = rate("model.dropout_block");
    m.dropout_dense = rate("model.dropout_dense");
    {
        const Reader r = value_of("model.bn_eps");
        m.bn_eps = r.real();
        if (!(m.bn_eps > 0.0)) r.fail("must be > 0");
    }
    m.bn_momentum = rate("model.bn_momentum");

    {
        const Reader r = value_of("train.seed");
        const long long s = r.integer_at_least(0);
        run.seed = static_cast<std::uint64_t>(s);
    }
    run.epochs = run.dataset == DatasetId::cifar10 ? 20 : 10;
    if (auto r = explicit_value("train.epochs")) run.epochs = static_cast<int>(r->integer_at_least(1));
    run.batch_size = static_cast<std::size_t>(value_of("train.batch_size").integer_at_least(2));
    run.eval_batch_size = static_cast<std::size_t>(value_of("train.eval_batch_size").integer_at_least(1));
    auto positive = [&](const char* key) {
        const Reader r = value_of(key);
        const double v = r.real();
        if (!(v > 0.0)) r.fail("must be > 0");
        return v;
    };
    run.lr = positive("train.lr");
    run.patience = model1 ? 2 : 5;
    if (auto r = explicit_value("train.patience")) run.patience = static_cast<int>(r->integer_at_least(1));
    {
        const Reader r = value_of("train.lr_factor");
        run.lr_factor = r.real();
        if (!(run.lr_factor > 0.0 && run.lr_factor < 1.0)) r.fail("must be in (0,1)");
    }
    run.min_lr = positive("train.min_lr");
    {
        const Reader r = value_of("train.val_fraction");
        run.val_fraction = r.real();
        if (!(run.val_fraction > 0.0 && run.val_fraction < 1.0)) r.fail("must be in (0,1)");
    }
    run.divergence_threshold = positive("train.divergence_threshold");
    {
        const Reader r = value_of("train.convergence_threshold");
        run.convergence_threshold = r.real();
        if (!(run.convergence_threshold > 0.0 && run.convergence_threshold <= 1.0)) r.fail("must be in (0,1]");
    }
    run.output_dir = value_of("train.output_dir").text();
    if (run.output_dir.empty()) value_of("train.output_dir").fail("must not be empty");
    run.record_wall_time = value_of("train.record_wall_time").boolean();
    run.data_root = value_of("data.root").text();
    run.train_limit = static_cast<std::size_t>(value_of("data.train_limit").integer_at_least(0));
    run.test_limit = static_cast<std::size_t>(value_of("data.test_limit").integer_at_least(0));

    cfg.status.diverged = value_of("status.diverged").boolean();
    cfg.status.completed_epochs = static_cast<int>(value_of("status.completed_epochs").integer_at_least(0));
    return cfg;
}

ExperimentConfig parse_config(std::string_view text) { return ConfigSource::parse(text).resolve(); }

std::string to_string(Architecture a) { return a == Architecture::model1 ? "model1" : "model2"; }

std::string to_string(Placement p, bool pool) {
    const std::string prefix = pool ? "learnable-" : "kerv-";
    switch (p) {
    case Placement::none: return pool ? "none" : "conv";
    case Placement::first: return prefix + "first";
    case Placement::last: return prefix + "last";
    case Placement::all: return prefix + "all";
    }
    return "?";
}

std::string to_string(KernelType k) {
    switch (k) {
    case KernelType::linear: return "linear";
    case KernelType::poly: return "poly";
    case KernelType::rbf: return "rbf";
    }
    return "?";
}

std::string to_string(DatasetId d) {
    switch (d) {
    case DatasetId::mnist: return "mnist";
    case DatasetId::fashion_mnist: return "fashion-mnist";
    case DatasetId::cifar10: return "cifar10";
    }
    return "?";
}

Shape dataset_input_shape(DatasetId d) { return d == DatasetId::cifar10 ? Shape{3, 32, 32} : Shape{1, 28, 28}; }

std::size_t dataset_class_count(DatasetId) { return 10; }

std::string to_text(const ExperimentConfig& c) {
    const ModelConfig& m = c.model;
    const RunConfig& r = c.run;
    auto join = [](const std::vector<std::size_t>& v, char sep) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + std::to_string(v[i]);
        return s;
    };
    const std::string base_pool = m.baseline_pool == BaselinePool::max ? "max" : "avg";
    const std::string pool = m.pool_placement == Placement::none ? base_pool : to_string(m.pool_placement, true);

    std::ostringstream os;
    os << "[model]\n"
       << "architecture = " << to_string(m.architecture) << '\n'
       << "conv = " << to_string(m.conv_placement, false) << '\n'
       << "pool = " << pool << '\n'
       << "base_pool = " << base_pool << '\n'
       << "kernel = " << to_string(m.kernel) << '\n'
       << "dense_kind = " << to_string(m.dense_kind) << '\n'
       << "n = " << m.poly_order << '\n'
       << "c_init = " << format_double(m.c_init) << '\n'
       << "sigma = " << format_double(m.sigma) << '\n'
       << "poly_mode = " << (m.poly_mode == PolyMode::elementwise ? "elementwise" : "classical") << '\n'
       << "pool_sharing = " << (m.pool_sharing == PoolSharing::per_location ? "per_location" : "global") << '\n'
       << "class_count = " << m.class_count << '\n'
       << "input_shape = " << join(m.input_shape, 'x') << '\n'
       << "conv_filters = " << join(m.conv_filters, ',') << '\n'
       << "dense_units = " << m.dense_units << '\n'
       << "kernel_size = " << m.kernel_size << '\n'
       << "conv_stride = " << m.conv_stride << '\n'
       << "conv_padding = " << m.conv_padding << '\n'
       << "pool_size = " << m.pool_size << '\n'
       << "pool_stride = " << m.pool_stride << '\n'
       << "dropout_block = " << format_double(m.dropout_block) << '\n'
       << "dropout_dense = " << format_double(m.dropout_dense) << '\n'
       << "bn_eps = " << format_double(m.bn_eps) << '\n'
       << "bn_momentum = " << format_double(m.bn_momentum) << '\n'
       << "\n[train]\n"
       << "seed = " << r.seed << '\n'
       << "epochs = " << r.epochs << '\n'
       << "batch_size = " << r.batch_size << '\n'
       << "eval_batch_size = " << r.eval_batch_size << '\n'
       << "lr = " << format_double(r.lr) << '\n'
       << "patience = " << r.patience << '\n'
       << "lr_factor = " << format_double(r.lr_factor) << '\n'
       << "min_lr = " << format_double(r.min_lr) << '\n'
       << "val_fraction = " << format_double(r.val_fraction) << '\n'
       << "divergence_threshold = " << format_double(r.divergence_threshold) << '\n'
       << "convergence_threshold = " << format_double(r.convergence_threshold) << '\n'
       << "output_dir = " << r.output_dir << '\n'
       << "record_wall_time = " << (r.record_wall_time ? "true" : "false") << '\n'
       << "\n[data]\n"
       << "dataset = " << to_string(r.dataset) << '\n'
       << "root = " << r.data_root << '\n'
       << "train_limit = " << r.train_limit << '\n'
       << "test_limit = " << r.test_limit << '\n'
       << "\n[status]\n"
       << "diverged = " << (c.status.diverged ? "true" : "false") << '\n'
       << "completed_epochs = " << c.status.completed_epochs << '\n';
    return os.str();
}

std::string schema_text() {
    std::ostringstream os;
    os << "# kernelayers experiment config schema\n"
       << "# Format: [section] headers followed by 'key = value' lines; '#' starts a comment.\n"
       << "# Unknown keys are errors. Values shown are defaults.\n";
    std::string section;
    for (const KeySpec& k : kKeys) {
        if (section != k.section) {
            section = k.section;
            os << "\n[" << section << "]\n";
        }
        os << k.key << " = " << k.fallback;
        if (*k.help) os << "    # " << k.help;
        os << '\n';
    }
    return os.str();
}

} // namespace kl
