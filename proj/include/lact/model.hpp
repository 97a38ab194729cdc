#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lact/layers.hpp"
#include "lact/serialize.hpp"

namespace lact {

// How per-time-point encoder features are fused into one feature map per
// resolution level before decoding.
enum class Aggregation { convgru, concat };

inline std::string aggregation_name(Aggregation a) {
    return a == Aggregation::convgru ? "convgru" : "concat";
}

inline Aggregation parse_aggregation(const std::string& s) {
    if (s == "convgru") return Aggregation::convgru;
    if (s == "concat") return Aggregation::concat;
    throw UsageError("aggregation must be convgru or concat, got \"" + s + "\"");
}

struct ModelConfig {
    int levels = 3;
    int base_channels = 8;
    int input_channels = 1;
    Aggregation aggregation = Aggregation::convgru;
    int concat_t = 0;  // series length baked into concat models; unused for convgru
    uint64_t seed = 0;

    bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
    if (c.levels < 2)
        throw UsageError("model: levels must be >= 2, got " + std::to_string(c.levels));
    if (c.base_channels < 1)
        throw UsageError("model: base_channels must be >= 1, got " + std::to_string(c.base_channels));
    if (c.input_channels < 1)
        throw UsageError("model: input_channels must be >= 1, got " +
                         std::to_string(c.input_channels));
    if (c.aggregation == Aggregation::concat && c.concat_t < 1)
        throw UsageError("model: concat aggregation needs concat_t >= 1, got " +
                         std::to_string(c.concat_t));
}

inline nlohmann::json to_json(const ModelConfig& c) {
    return nlohmann::json{{"levels", c.levels},
                          {"base_channels", c.base_channels},
                          {"input_channels", c.input_channels},
                          {"aggregation", aggregation_name(c.aggregation)},
                          {"concat_t", c.concat_t},
                          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.levels = j.at("levels").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    c.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
    c.concat_t = j.at("concat_t").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

// dump() emits keys in sorted order, so this is a canonical byte encoding.
inline std::string canonical_config_json(const ModelConfig& c) { return to_json(c).dump(); }

// Recurrent multi-scale encoder-decoder over a time series of volumes.
//
// Per time point, a shared encoder produces features at `levels` resolutions
// (channel widths base, 2*base, 4*base, ... with 2x average pooling between
// levels). The per-level time series is fused either by a convolutional GRU
// (parameter count independent of series length) or by channel concatenation
// (the baseline; widths scale with concat_t). The decoder walks back up with
// nearest-neighbor upsampling, fusing the aggregated skip at each level, and a
// 1x1x1 convolution plus sigmoid yields a voxelwise probability map.
template <typename T>
class SegModel {
public:
    static SegModel build(const ModelConfig& cfg) {
        validate(cfg);
        SegModel m;
        m.cfg_ = cfg;
        Rng rng(derive_seed(cfg.seed, "model-init"));
        int prev = cfg.input_channels;
        for (int l = 0; l < cfg.levels; ++l) {
            const int c = cfg.base_channels << l;
            m.enc_blocks_.emplace_back(prev, c, rng);
            prev = c;
        }
        if (cfg.aggregation == Aggregation::convgru) {
            for (int l = 0; l < cfg.levels; ++l) {
                const int c = cfg.base_channels << l;
                m.grus_.emplace_back(c, c, rng);
            }
        }
        int carried = m.fused_channels(cfg.levels - 1);
        for (int l = cfg.levels - 2; l >= 0; --l) {
            const int c = cfg.base_channels << l;
            m.dec_blocks_.emplace_back(carried + m.fused_channels(l), c, rng);
            carried = c;
        }
        m.head_ = Conv3dLayer<T>(cfg.base_channels, 1, 1, 1, 0, rng);
        m.build_registry();
        return m;
    }

    const ModelConfig& config() const { return cfg_; }

    // Encoder features for every time point: result[t][l] has
    // base*2^l channels at 1/2^l of the input resolution.
    std::vector<std::vector<Tensor<T>>> encode(const std::vector<Tensor<T>>& series) const {
        validate_series(series);
        std::vector<std::vector<Tensor<T>>> feats(series.size());
        for (size_t t = 0; t < series.size(); ++t) {
            Tensor<T> cur = series[t];
            feats[t].reserve(cfg_.levels);
            for (int l = 0; l < cfg_.levels; ++l) {
                if (l > 0) cur = avgpool3d(cur, 2);
                cur = enc_blocks_[l].forward(cur);
                feats[t].push_back(cur);
            }
        }
        return feats;
    }

    Tensor<T> forward(const std::vector<Tensor<T>>& series) const {
        auto feats = encode(series);
        std::vector<Tensor<T>> fused(cfg_.levels);
        std::vector<Tensor<T>> xs(series.size());
        for (int l = 0; l < cfg_.levels; ++l) {
            for (size_t t = 0; t < series.size(); ++t) xs[t] = feats[t][l];
            fused[l] = cfg_.aggregation == Aggregation::convgru ? grus_[l].aggregate(xs)
                                                                : concat_channels(xs);
        }
        Tensor<T> d = fused[cfg_.levels - 1];
        int bi = 0;
        for (int l = cfg_.levels - 2; l >= 0; --l, ++bi) {
            d = upsample3d_nearest(d, 2);
            d = concat_channels(std::vector<Tensor<T>>{d, fused[l]});
            d = dec_blocks_[bi].forward(d);
        }
        return sigmoid(head_.forward(d));
    }

    ParamList<T>& params() { return registry_; }
    const ParamList<T>& params() const { return registry_; }
    int64_t param_count() const { return lact::param_count(registry_); }

    // Overwrite this model's encoder weights with another model's, matching
    // parameters by name. The aggregation variants share the encoder layout,
    // so a checkpointed encoder moves between them unchanged.
    void copy_encoder_from(const SegModel& other) {
        for (auto& p : registry_) {
            if (p.name.rfind("encoder.", 0) != 0) continue;
            bool found = false;
            for (const auto& q : other.registry_) {
                if (q.name == p.name) {
                    if (q.tensor.shape() != p.tensor.shape())
                        throw UsageError("encoder parameter " + p.name + " has shape " +
                                         shape_str(q.tensor.shape()) + ", expected " +
                                         shape_str(p.tensor.shape()));
                    p.tensor.values() = q.tensor.values();
                    found = true;
                    break;
                }
            }
            if (!found) throw UsageError("encoder parameter " + p.name + " missing from source model");
        }
    }

    // ---- checkpoint format -------------------------------------------------
    // "LACT" | u32 version=1 | u8 precision | length-prefixed config JSON |
    // per parameter (registry order): u32 ndims, u64 dims..., raw values.

    static constexpr uint32_t kCheckpointVersion = 1;

    void save(std::ostream& os) const {
        io::write_raw(os, "LACT", 4);
        io::write_u32(os, kCheckpointVersion);
        io::write_u8(os, sizeof(T) == 4 ? 0 : 1);
        io::write_string(os, canonical_config_json(cfg_));
        for (const auto& p : registry_) {
            const Shape& s = p.tensor.shape();
            io::write_u32(os, static_cast<uint32_t>(s.size()));
            for (int d : s) io::write_u64(os, static_cast<uint64_t>(d));
            io::write_array(os, p.tensor.values());
        }
    }

    // Reads one checkpoint section; the stream may continue afterwards.
    static SegModel load(std::istream& is) {
        io::expect_magic(is, "LACT", "checkpoint");
        const uint32_t version = io::read_u32(is, "checkpoint");
        if (version != kCheckpointVersion)
            throw DataError("unsupported checkpoint version " + std::to_string(version) +
                            " (expected " + std::to_string(kCheckpointVersion) + ")");
        const uint8_t prec = io::read_u8(is, "checkpoint");
        const uint8_t want = sizeof(T) == 4 ? 0 : 1;
        if (prec != want)
            throw DataError("checkpoint precision is " +
                            precision_name(static_cast<Precision>(prec)) + " but " +
                            precision_name(static_cast<Precision>(want)) + " was requested");
        const std::string cfg_json = io::read_string(is, "checkpoint");
        ModelConfig cfg;
        try {
            cfg = model_config_from_json(nlohmann::json::parse(cfg_json));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what());
        }
        SegModel m = build(cfg);
        for (auto& p : m.registry_) {
            const uint32_t nd = io::read_u32(is, "checkpoint");
            Shape s(nd);
            for (auto& d : s) {
                const uint64_t v = io::read_u64(is, "checkpoint");
                d = static_cast<int>(v);
            }
            if (s != p.tensor.shape())
                throw DataError("checkpoint parameter " + p.name + " has shape " + shape_str(s) +
                                ", expected " + shape_str(p.tensor.shape()));
            io::read_array(is, p.tensor.values(), "checkpoint");
        }
        return m;
    }

    static SegModel load(std::istream& is, const ModelConfig& expected) {
        SegModel m = load(is);
        if (canonical_config_json(m.cfg_) != canonical_config_json(expected))
            throw DataError("checkpoint config " + canonical_config_json(m.cfg_) +
                            " does not match requested config " + canonical_config_json(expected));
        return m;
    }

    void save_file(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("cannot open " + path + " for writing");
        save(os);
    }

    static SegModel load_file(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw DataError("cannot open checkpoint " + path);
        SegModel m = load(is);
        is.peek();
        if (!is.eof()) throw DataError("trailing bytes after checkpoint data in " + path);
        return m;
    }

private:
    SegModel() = default;

    int fused_channels(int level) const {
        const int c = cfg_.base_channels << level;
        return cfg_.aggregation == Aggregation::concat ? c * cfg_.concat_t : c;
    }

    void validate_series(const std::vector<Tensor<T>>& series) const {
        if (series.empty()) throw UsageError("model: input series is empty");
        if (cfg_.aggregation == Aggregation::concat &&
            static_cast<int>(series.size()) != cfg_.concat_t)
            throw UsageError("model: concat model was built for " + std::to_string(cfg_.concat_t) +
                             " time points, got " + std::to_string(series.size()));
        const int div = 1 << (cfg_.levels - 1);
        const Shape& first = series[0].shape();
        for (const auto& x : series) {
            const Shape& s = x.shape();
            if (s.size() != 4 || s[0] != cfg_.input_channels)
                throw UsageError("model: each time point must be [" +
                                 std::to_string(cfg_.input_channels) + ", D, H, W], got " +
                                 shape_str(s));
            if (s != first)
                throw UsageError("model: time points disagree in shape: " + shape_str(first) +
                                 " vs " + shape_str(s));
            for (int axis = 1; axis < 4; ++axis)
                if (s[axis] % div != 0)
                    throw UsageError("model: spatial extents must be divisible by " +
                                     std::to_string(div) + " (levels=" + std::to_string(cfg_.levels) +
                                     "), got " + shape_str(s));
        }
    }

    void build_registry() {
        registry_.clear();
        for (size_t l = 0; l < enc_blocks_.size(); ++l)
            enc_blocks_[l].register_params("encoder.block" + std::to_string(l), registry_);
        for (size_t l = 0; l < grus_.size(); ++l)
            grus_[l].register_params("aggregator.level" + std::to_string(l), registry_);
        for (size_t i = 0; i < dec_blocks_.size(); ++i)
            dec_blocks_[i].register_params("decoder.block" + std::to_string(i), registry_);
        head_.register_params("head", registry_);
    }

    ModelConfig cfg_;
    std::vector<ResBlock<T>> enc_blocks_;
    std::vector<ConvGRUCell<T>> grus_;
    std::vector<ResBlock<T>> dec_blocks_;  // deepest fusion first
    Conv3dLayer<T> head_;
    ParamList<T> registry_;
};

}  // namespace lact
