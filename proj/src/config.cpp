#include "resmatch/config.hpp"

#include "resmatch/errors.hpp"
#include "resmatch/io.hpp"

#include <map>
#include <set>

namespace resmatch::config {
namespace {

using nlohmann::json;

/// Typed, key-tracking view of one JSON object. finish() rejects any key
/// that was never read.
class Section {
public:
    Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) {
            throw ConfigError(where("") + ": expected an object");
        }
    }

    bool has(const std::string& key) const { return node_.contains(key); }

    template <class T>
    T get(const std::string& key, const T& fallback) {
        seen_.insert(key);
        if (!node_.contains(key) || node_.at(key).is_null()) {
            return fallback;
        }
        return convert<T>(key);
    }

    template <class T>
    T require(const std::string& key) {
        seen_.insert(key);
        if (!node_.contains(key)) {
            throw ConfigError(where(key) + ": required key missing");
        }
        return convert<T>(key);
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(node_.contains(key) ? node_.at(key) : empty, where(key));
    }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return node_.at(key);
    }

    std::string where(const std::string& key) const {
        if (key.empty()) {
            return path_.empty() ? "<root>" : path_;
        }
        return path_.empty() ? key : path_ + "." + key;
    }

    void finish() const {
        for (const auto& [key, value] : node_.items()) {
            if (!seen_.contains(key)) {
                throw ConfigError(where(key) + ": unknown key");
            }
        }
    }

private:
    template <class T>
    T convert(const std::string& key) const {
        const json& v = node_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) {
                throw ConfigError(where(key) + ": expected a boolean");
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) {
                throw ConfigError(where(key) + ": expected an integer");
            }
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_integer() && !v.is_number_unsigned()) {
                    throw ConfigError(where(key) + ": expected a non-negative integer");
                }
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) {
                throw ConfigError(where(key) + ": expected a number");
            }
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) {
                throw ConfigError(where(key) + ": expected a string");
            }
        }
        return v.get<T>();
    }

    const json& node_;
    std::string path_;
    std::set<std::string> seen_;
};

datagen::DegradationSpec parse_degradation(Section s, const datagen::DegradationSpec& fallback) {
    datagen::DegradationSpec d;
    d.psf_sigma = s.get("psf_sigma", fallback.psf_sigma);
    d.gain = s.get("gain", fallback.gain);
    d.read_sigma = s.get("read_sigma", fallback.read_sigma);
    s.finish();
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(s.where("") + ": " + e.what());
    }
    return d;
}

model::OptimizerKind parse_optimizer(const std::string& name, const std::string& where) {
    if (name == "adam") {
        return model::OptimizerKind::adam;
    }
    if (name == "sgd") {
        return model::OptimizerKind::sgd;
    }
    throw ConfigError(where + ": unknown optimizer '" + name + "' (expected adam or sgd)");
}

template <class Fn>
void checked(const std::string& where, Fn&& fn) {
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

} // namespace

RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    cfg.base_dir = base_dir;
    Section root(doc, "");
    cfg.seed = root.get<std::uint64_t>("seed", 0);
    cfg.threads = root.get("threads", 1);
    if (cfg.threads < 1) {
        throw ConfigError("threads: must be >= 1");
    }

    // Dataset names double as path aliases in the other sections.
    std::map<std::string, std::filesystem::path> aliases;
    auto path_of = [&](const std::string& value) -> std::filesystem::path {
        if (const auto it = aliases.find(value); it != aliases.end()) {
            return it->second;
        }
        const std::filesystem::path p(value);
        return (p.is_absolute() ? p : base_dir / p).lexically_normal();
    };
    auto path_key = [&](Section& s, const std::string& key, const std::string& fallback) {
        const auto v = s.get<std::string>(key, fallback);
        return v.empty() ? std::filesystem::path{} : path_of(v);
    };

    if (root.has("datasets")) {
        Section ds = root.child("datasets");
        for (const auto& [name, node] : root.raw("datasets").items()) {
            Section s = ds.child(name);
            DatasetEntry e;
            e.name = name;
            e.out = path_of(s.get<std::string>("out", name));
            e.spec.n_pairs = s.require<int>("n_pairs");
            e.spec.patch = s.get("patch", 64);
            e.spec.seed = s.require<std::uint64_t>("seed");
            e.spec.structure_side = s.get("structure_side", 0);
            const auto kind = s.get<std::string>("kind", "filaments");
            checked(s.where("kind"), [&] { e.spec.kind = datagen::parse_structure_kind(kind); });
            e.spec.lr = parse_degradation(s.child("lr"), {3.0, 100.0, 0.01});
            e.spec.hr = parse_degradation(s.child("hr"), {1.0, 100.0, 0.01});
            s.finish();
            if (e.spec.n_pairs < 1) {
                throw ConfigError(s.where("n_pairs") + ": must be >= 1");
            }
            aliases[name] = e.out;
            cfg.datasets.push_back(std::move(e));
        }
        ds.finish();
    }

    {
        Section s = root.child("arch");
        cfg.arch.base_channels = s.get("base_channels", cfg.arch.base_channels);
        cfg.arch.n_res_blocks = s.get("n_res_blocks", cfg.arch.n_res_blocks);
        cfg.arch.kernel_size = s.get("kernel_size", cfg.arch.kernel_size);
        cfg.arch.time_embed_dim = s.get("time_embed_dim", cfg.arch.time_embed_dim);
        s.finish();
        checked("arch", [&] { cfg.arch.validate(); });
    }
    {
        Section s = root.child("train");
        auto& t = cfg.train;
        t.dataset = path_key(s, "dataset", "");
        if (const auto v = path_key(s, "validation", ""); !v.empty()) {
            t.validation = v;
        }
        t.out = path_key(s, "out", "run");
        if (const auto v = path_key(s, "resume", ""); !v.empty()) {
            t.resume = v;
        }
        auto& c = t.train;
        c.T = s.get("T", c.T);
        c.lr = s.get("lr", c.lr);
        c.batch_size = s.get("batch_size", c.batch_size);
        c.max_steps = s.get("max_steps", c.max_steps);
        c.patch = s.get("patch", c.patch);
        c.val_every = s.get("val_every", c.val_every);
        c.flips = s.get("flips", c.flips);
        c.optimizer = parse_optimizer(s.get<std::string>("optimizer", "adam"), s.where("optimizer"));
        c.seed = cfg.seed;
        c.threads = cfg.threads;
        s.finish();
        checked("train", [&] { c.validate(); });
    }
    const std::string default_ckpt = (cfg.train.out / "final.resm").string();
    {
        Section s = root.child("infer");
        auto& i = cfg.infer;
        i.checkpoint = path_key(s, "checkpoint", default_ckpt);
        i.input = path_key(s, "input", "");
        i.out = path_key(s, "out", "predictions");
        i.T = s.get("T", i.T);
        i.tile = s.get("tile", i.tile);
        i.core = s.get("core", i.core);
        i.png = s.get("png", i.png);
        s.finish();
    }
    {
        Section s = root.child("sample");
        auto& i = cfg.sample;
        i.checkpoint = path_key(s, "checkpoint", default_ckpt);
        i.input = path_key(s, "input", "");
        i.out = path_key(s, "out", "ensembles");
        i.T = s.get("T", i.T);
        i.K = s.get("K", i.K);
        i.tile = s.get("tile", i.tile);
        i.core = s.get("core", i.core);
        i.save_members = s.get("save_members", i.save_members);
        i.png = s.get("png", i.png);
        s.finish();
        if (i.K < 1) {
            throw ConfigError("sample.K: must be >= 1");
        }
    }
    {
        Section s = root.child("eval");
        auto& e = cfg.eval;
        e.predictions = path_key(s, "predictions", cfg.infer.out.string());
        e.ground_truth = path_key(s, "ground_truth", "");
        e.out = path_key(s, "out", "metrics.csv");
        if (s.has("data_range")) {
            e.data_range = s.require<double>("data_range");
            if (!(*e.data_range > 0.0)) {
                throw ConfigError("eval.data_range: must be > 0");
            }
        }
        e.ms_ssim_scales = s.get("ms_ssim_scales", e.ms_ssim_scales);
        s.finish();
    }
    {
        Section s = root.child("calibrate");
        auto& c = cfg.calibrate;
        c.ensembles = path_key(s, "ensembles", cfg.sample.out.string());
        c.ground_truth = path_key(s, "ground_truth", "");
        c.out = path_key(s, "out", "calibration.csv");
        s.finish();
    }
    root.finish();
    return cfg;
}

void apply_overrides(RunConfig& cfg, std::optional<std::uint64_t> seed, std::optional<int> threads) {
    if (seed) {
        cfg.seed = *seed;
        cfg.train.train.seed = *seed;
    }
    if (threads) {
        if (*threads < 1) {
            throw ConfigError("--threads: must be >= 1");
        }
        cfg.threads = *threads;
        cfg.train.train.threads = *threads;
    }
}

RunConfig load_config(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const std::size_t pos = std::min(e.byte == 0 ? 0 : e.byte - 1, text.size());
        std::size_t line = 1;
        std::size_t col = 1;
        for (std::size_t i = 0; i < pos; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                          ": invalid JSON");
    }
    return parse_config(doc, std::filesystem::absolute(path).parent_path());
}

} // namespace resmatch::config
