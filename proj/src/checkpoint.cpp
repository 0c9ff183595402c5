#include "resmatch/checkpoint.hpp"

#include "resmatch/errors.hpp"
#include "resmatch/io.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>

namespace resmatch::model {
namespace {

constexpr char kMagic[8] = {'R', 'E', 'S', 'M', 'A', 'T', 'C', 'H'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
}

void put_array(std::string& out, const ParamArray& a) {
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (int d : a.shape) {
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (float v : a.values) {
        put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
}

class Reader {
public:
    Reader(const std::filesystem::path& path, const std::string& raw) : path_(path), raw_(raw) {}

    std::uint32_t u32() {
        need(4);
        const auto* p = reinterpret_cast<const unsigned char*>(raw_.data() + pos_);
        pos_ += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = raw_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    ParamArray array() {
        ParamArray a;
        a.name = bytes(u32());
        const std::uint32_t rank = u32();
        if (rank > 8) {
            throw FormatError(path_, "implausible rank for array '" + a.name + "'");
        }
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            a.shape.push_back(static_cast<int>(u32()));
            n *= static_cast<std::size_t>(a.shape.back());
        }
        need(4 * n);
        a.values.resize(n);
        for (float& v : a.values) {
            v = std::bit_cast<float>(u32());
            if (!std::isfinite(v)) {
                throw FormatError(path_, "non-finite value in array '" + a.name + "'");
            }
        }
        return a;
    }

    bool at_end() const { return pos_ == raw_.size(); }

private:
    void need(std::size_t n) const {
        if (raw_.size() - pos_ < n) {
            throw FormatError(path_, "truncated checkpoint");
        }
    }

    const std::filesystem::path& path_;
    const std::string& raw_;
    std::size_t pos_ = 0;
};

nlohmann::json arch_to_json(const ArchConfig& a) {
    return {{"base_channels", a.base_channels},
            {"n_res_blocks", a.n_res_blocks},
            {"kernel_size", a.kernel_size},
            {"time_embed_dim", a.time_embed_dim}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
    ArchConfig a;
    a.base_channels = j.at("base_channels").get<int>();
    a.n_res_blocks = j.at("n_res_blocks").get<int>();
    a.kernel_size = j.at("kernel_size").get<int>();
    a.time_embed_dim = j.at("time_embed_dim").get<int>();
    return a;
}

void read_into(Reader& reader, const std::filesystem::path& path, ParamSet& dst,
               const std::string& prefix) {
    for (ParamArray& expected : dst.arrays()) {
        ParamArray got = reader.array();
        if (got.name != prefix + expected.name || got.shape != expected.shape) {
            throw FormatError(path, "array '" + got.name + "' does not match architecture (expected '" +
                                        prefix + expected.name + "')");
        }
        expected.values = std::move(got.values);
    }
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const bool has_state = ckpt.optimizer && ckpt.optimizer->kind == OptimizerKind::adam;
    nlohmann::json header = {
        {"arch", arch_to_json(ckpt.model.arch)},
        {"norm", {{"mean", ckpt.model.norm.mean}, {"std", ckpt.model.norm.std}}},
        {"optimizer",
         {{"kind", !ckpt.optimizer                                 ? "none"
                   : ckpt.optimizer->kind == OptimizerKind::adam ? "adam"
                                                                   : "sgd"},
          {"has_state", has_state},
          {"step", ckpt.optimizer ? ckpt.optimizer->step : 0}}},
        {"step", ckpt.step},
        {"train_seed", ckpt.train_seed},
    };
    const std::string header_text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out += header_text;
    for (const ParamArray& a : ckpt.model.params.arrays()) {
        put_array(out, a);
    }
    if (has_state) {
        for (const ParamArray& a : ckpt.optimizer->m.arrays()) {
            put_array(out, {"adam.m/" + a.name, a.shape, a.values});
        }
        for (const ParamArray& a : ckpt.optimizer->v.arrays()) {
            put_array(out, {"adam.v/" + a.name, a.shape, a.values});
        }
    }
    write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string raw = read_file(path);
    if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError(path, "not a checkpoint (bad magic)");
    }
    Reader reader(path, raw);
    reader.bytes(sizeof(kMagic));
    const std::uint32_t version = reader.u32();
    if (version != kCheckpointVersion) {
        throw FormatError(path, "unsupported checkpoint version " + std::to_string(version) +
                                    " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(reader.bytes(reader.u32()));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path, std::string("invalid checkpoint header: ") + e.what());
    }

    Checkpoint ckpt;
    std::string kind;
    bool has_state = false;
    std::int64_t opt_step = 0;
    try {
        ckpt.model.arch = arch_from_json(header.at("arch"));
        ckpt.model.norm.mean = header.at("norm").at("mean").get<double>();
        ckpt.model.norm.std = header.at("norm").at("std").get<double>();
        kind = header.at("optimizer").at("kind").get<std::string>();
        has_state = header.at("optimizer").at("has_state").get<bool>();
        opt_step = header.at("optimizer").at("step").get<std::int64_t>();
        ckpt.step = header.at("step").get<std::int64_t>();
        ckpt.train_seed = header.at("train_seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path, std::string("invalid checkpoint header: ") + e.what());
    }
    try {
        ckpt.model.arch.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(path, e.what());
    }

    ckpt.model.params = init_params(ckpt.model.arch, 0).params.zeros_like();
    read_into(reader, path, ckpt.model.params, "");
    if (kind == "adam" || kind == "sgd") {
        OptimizerState st = make_optimizer(kind == "adam" ? OptimizerKind::adam : OptimizerKind::sgd,
                                           ckpt.model.params);
        st.step = opt_step;
        if (has_state) {
            read_into(reader, path, st.m, "adam.m/");
            read_into(reader, path, st.v, "adam.v/");
        }
        ckpt.optimizer = std::move(st);
    } else if (kind != "none") {
        throw FormatError(path, "unknown optimizer kind '" + kind + "'");
    }
    if (!reader.at_end()) {
        throw FormatError(path, "trailing bytes after last array");
    }
    return ckpt;
}

} // namespace resmatch::model
