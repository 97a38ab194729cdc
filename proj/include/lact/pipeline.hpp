#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lact/data.hpp"
#include "lact/model.hpp"

namespace lact {

// ---- loss ------------------------------------------------------------------

// Soft Dice (smoothing 1) plus voxel-mean binary cross-entropy, fused into one
// op with a hand-derived backward. Probabilities are clamped only inside the
// logs so saturated sigmoid outputs cannot produce infinities.
template <typename T>
Tensor<T> soft_dice_bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::check_same_shape("soft_dice_bce_loss", pred, target);
    const auto& p = pred.values();
    const auto& t = target.values();
    const int64_t n = pred.size();
    constexpr double kSmooth = 1.0;
    constexpr double kClampLo = 1e-12;
    constexpr double kClampHi = 1.0 - 1e-12;

    double inter = 0.0, psum = 0.0, tsum = 0.0, bce = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double pi = static_cast<double>(p[i]);
        const double ti = static_cast<double>(t[i]);
        inter += pi * ti;
        psum += pi;
        tsum += ti;
        const double pc = std::min(std::max(pi, kClampLo), kClampHi);
        bce -= ti * std::log(pc) + (1.0 - ti) * std::log(1.0 - pc);
    }
    const double denom = psum + tsum + kSmooth;
    const double loss = (1.0 - (2.0 * inter + kSmooth) / denom) + bce / static_cast<double>(n);

    Tensor<T> res = Tensor<T>::from_values({1}, {static_cast<T>(loss)});
    detail::finish_op(res, "soft_dice_bce_loss", {pred.node(), target.node()},
                      [pn = pred.node(), tn = target.node(), on = res.node().get(),
                       inter, denom, n] {
                          if (!pn->requires_grad) return;
                          pn->ensure_grad();
                          const T g = on->grad[0];
                          const auto& p2 = pn->values;
                          const auto& t2 = tn->values;
                          const double inv_n = 1.0 / static_cast<double>(n);
                          for (int64_t i = 0; i < n; ++i) {
                              const double pi = static_cast<double>(p2[i]);
                              const double ti = static_cast<double>(t2[i]);
                              const double ddice =
                                  -(2.0 * ti * denom - (2.0 * inter + kSmooth)) / (denom * denom);
                              double dbce = 0.0;
                              if (pi > kClampLo && pi < kClampHi)
                                  dbce = (-ti / pi + (1.0 - ti) / (1.0 - pi)) * inv_n;
                              pn->grad[i] += g * static_cast<T>(ddice + dbce);
                          }
                      });
    return res;
}

// ---- optimizer -------------------------------------------------------------

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamParams&) const = default;
};

template <typename T>
class Adam {
public:
    Adam() = default;

    Adam(const ParamList<T>& params, AdamParams hp) : hp_(hp) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.emplace_back(p.tensor.values().size(), T(0));
            v_.emplace_back(p.tensor.values().size(), T(0));
        }
    }

    // One update with bias-corrected moments. Parameters without a gradient
    // this step decay their moments as if the gradient were zero.
    void step(ParamList<T>& params, double lr) {
        if (params.size() != m_.size())
            throw UsageError("Adam: parameter list changed size since construction");
        ++t_;
        const double c1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& vals = params[pi].tensor.values();
            const T* g = params[pi].tensor.has_grad() ? params[pi].tensor.grad().data() : nullptr;
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < vals.size(); ++i) {
                const double gi = g ? static_cast<double>(g[i]) : 0.0;
                const double mi = hp_.beta1 * static_cast<double>(m[i]) + (1.0 - hp_.beta1) * gi;
                const double vi = hp_.beta2 * static_cast<double>(v[i]) + (1.0 - hp_.beta2) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                vals[i] -= static_cast<T>(lr * (mi / c1) / (std::sqrt(vi / c2) + hp_.eps));
            }
        }
    }

    int64_t step_count() const { return t_; }
    const AdamParams& hyperparams() const { return hp_; }

    const std::vector<std::vector<T>>& moment1() const { return m_; }
    const std::vector<std::vector<T>>& moment2() const { return v_; }
    void restore(int64_t t, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v) {
        t_ = t;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    AdamParams hp_;
    int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// ---- training --------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 1e-4;
    double decay = 0.99;  // per-epoch multiplicative factor
    int epochs = 300;
    int batch_size = 1;
    std::array<int, 3> crop = {16, 16, 16};
    AdamParams adam;
    uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& c) {
    if (!(c.learning_rate > 0))
        throw UsageError("train: learning_rate must be positive");
    if (!(c.decay > 0) || c.decay > 1.0)
        throw UsageError("train: decay must be in (0, 1], got " + std::to_string(c.decay));
    if (c.epochs < 1) throw UsageError("train: epochs must be >= 1");
    if (c.batch_size != 1)
        throw UsageError("train: only batch_size 1 is supported, got " +
                         std::to_string(c.batch_size));
    for (int e : c.crop)
        if (e < 1) throw UsageError("train: crop extents must be >= 1");
}

// Exponential schedule: lr(e) = learning_rate * decay^e.
inline double lr_at(const TrainConfig& c, int epoch) {
    if (epoch < 0 || epoch >= c.epochs)
        throw UsageError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                         std::to_string(c.epochs) + ")");
    return c.learning_rate * std::pow(c.decay, static_cast<double>(epoch));
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return nlohmann::json{{"learning_rate", c.learning_rate},
                          {"decay", c.decay},
                          {"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"crop", c.crop},
                          {"adam_beta1", c.adam.beta1},
                          {"adam_beta2", c.adam.beta2},
                          {"adam_eps", c.adam.eps},
                          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.decay = j.at("decay").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    j.at("crop").get_to(c.crop);
    c.adam.beta1 = j.at("adam_beta1").get<double>();
    c.adam.beta2 = j.at("adam_beta2").get<double>();
    c.adam.eps = j.at("adam_eps").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

struct EpochRecord {
    int epoch;
    double lr;
    double mean_loss;
};

// Everything needed to continue a run exactly where it stopped: model,
// optimizer moments, RNG state, epoch counter, and the loss history.
template <typename T>
struct TrainState {
    SegModel<T> model;
    TrainConfig config;
    Adam<T> optimizer;
    Rng rng;
    int epoch = 0;  // next epoch to run
    std::vector<EpochRecord> history;
};

template <typename T>
TrainState<T> make_train_state(SegModel<T> model, const TrainConfig& cfg) {
    validate(cfg);
    TrainState<T> st{std::move(model), cfg, {}, Rng(derive_seed(cfg.seed, "train")), 0, {}};
    st.optimizer = Adam<T>(st.model.params(), cfg.adam);
    return st;
}

namespace detail {

template <typename T>
Tensor<T> series_tensor(const Volume& v) {
    std::vector<T> vals(v.voxels.size());
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<T>(v.voxels[i]);
    return Tensor<T>::from_values({1, v.dims[0], v.dims[1], v.dims[2]}, std::move(vals));
}

template <typename T>
Tensor<T> mask_tensor(const MaskVolume& m) {
    std::vector<T> vals(m.voxels.size());
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = m.voxels[i] ? T(1) : T(0);
    return Tensor<T>::from_values({1, m.dims[0], m.dims[1], m.dims[2]}, std::move(vals));
}

}  // namespace detail

// Run epochs [state.epoch, config.epochs). Cases are visited in a freshly
// shuffled order each epoch, one positive-biased crop per case per visit.
template <typename T>
void run_training(TrainState<T>& state, const std::vector<CaseSample>& cases,
                  const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    const TrainConfig& cfg = state.config;
    validate(cfg);
    if (cases.empty()) throw UsageError("train: no cases to train on");

    const ModelConfig& mc = state.model.config();
    for (const auto& c : cases) {
        if (mc.aggregation == Aggregation::concat && c.series.time_points() != mc.concat_t)
            throw UsageError("train: case " + c.id + " has " +
                             std::to_string(c.series.time_points()) +
                             " time points but the concat model was built for " +
                             std::to_string(mc.concat_t));
        for (int a = 0; a < 3; ++a)
            if (cfg.crop[a] > c.series.dims()[a])
                throw UsageError("train: crop " + dims_str(cfg.crop) + " exceeds case " + c.id +
                                 " volume " + dims_str(c.series.dims()));
    }

    std::vector<size_t> order(cases.size());

    for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        // Rebuilt from identity every epoch: the visiting order must be a pure
        // function of the stored RNG stream, or a resumed run would shuffle a
        // different starting permutation than the run it continues.
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        state.rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        for (size_t oi = 0; oi < order.size(); ++oi) {
            const CaseSample& sample = cases[order[oi]];
            const CropResult crop = random_crop(sample.series, sample.mask, cfg.crop, state.rng);

            std::vector<Tensor<T>> xs;
            xs.reserve(crop.series.volumes.size());
            for (const auto& v : crop.series.volumes) xs.push_back(detail::series_tensor<T>(v));
            const Tensor<T> target = detail::mask_tensor<T>(crop.mask);

            for (auto& p : state.model.params()) p.tensor.zero_grad();
            Graph<T>::active().clear();

            Tensor<T> loss;
            try {
                loss = soft_dice_bce_loss(state.model.forward(xs), target);
            } catch (const NumericError& e) {
                throw NumericError("training aborted at epoch " + std::to_string(epoch) +
                                   ", case " + sample.id + ": " + e.what());
            }
            const double lv = static_cast<double>(loss.scalar());
            if (!std::isfinite(lv))
                throw NumericError("training aborted: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", case " + sample.id);
            backward(loss);
            state.optimizer.step(state.model.params(), lr);
            loss_sum += lv;
        }
        const EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(cases.size())};
        state.history.push_back(rec);
        state.epoch = epoch + 1;
        if (on_epoch) on_epoch(rec);
    }
}

template <typename T>
TrainState<T> train(SegModel<T> model, const std::vector<CaseSample>& cases, const TrainConfig& cfg,
                    const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    TrainState<T> st = make_train_state(std::move(model), cfg);
    run_training(st, cases, on_epoch);
    return st;
}

// ---- train-state checkpoints ----------------------------------------------
// "LACT" v2: precision, train config JSON, embedded model checkpoint, Adam
// step count and moments, epoch counter, RNG state, loss history.

template <typename T>
void save_train_state(const TrainState<T>& state, std::ostream& os) {
    io::write_raw(os, "LACT", 4);
    io::write_u32(os, 2);
    io::write_u8(os, sizeof(T) == 4 ? 0 : 1);
    io::write_string(os, to_json(state.config).dump());
    state.model.save(os);
    io::write_u64(os, static_cast<uint64_t>(state.optimizer.step_count()));
    for (const auto& m : state.optimizer.moment1()) io::write_array(os, m);
    for (const auto& v : state.optimizer.moment2()) io::write_array(os, v);
    io::write_u64(os, static_cast<uint64_t>(state.epoch));
    for (uint64_t w : state.rng.state()) io::write_u64(os, w);
    io::write_u32(os, static_cast<uint32_t>(state.history.size()));
    for (const auto& r : state.history) {
        io::write_u32(os, static_cast<uint32_t>(r.epoch));
        io::write_f64(os, r.lr);
        io::write_f64(os, r.mean_loss);
    }
}

template <typename T>
TrainState<T> load_train_state(std::istream& is) {
    io::expect_magic(is, "LACT", "train state");
    const uint32_t version = io::read_u32(is, "train state");
    if (version != 2)
        throw DataError("unsupported train state version " + std::to_string(version) +
                        " (expected 2)");
    const uint8_t prec = io::read_u8(is, "train state");
    const uint8_t want = sizeof(T) == 4 ? 0 : 1;
    if (prec != want)
        throw DataError("train state precision is " + precision_name(static_cast<Precision>(prec)) +
                        " but " + precision_name(static_cast<Precision>(want)) + " was requested");
    TrainConfig cfg;
    try {
        cfg = train_config_from_json(nlohmann::json::parse(io::read_string(is, "train state")));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("train state config is not valid JSON: ") + e.what());
    }
    SegModel<T> model = SegModel<T>::load(is);

    TrainState<T> st{std::move(model), cfg, {}, Rng(0), 0, {}};
    st.optimizer = Adam<T>(st.model.params(), cfg.adam);
    const int64_t t = static_cast<int64_t>(io::read_u64(is, "train state"));
    std::vector<std::vector<T>> m, v;
    for (const auto& p : st.model.params()) m.emplace_back(p.tensor.values().size());
    for (const auto& p : st.model.params()) v.emplace_back(p.tensor.values().size());
    for (auto& arr : m) io::read_array(is, arr, "train state");
    for (auto& arr : v) io::read_array(is, arr, "train state");
    st.optimizer.restore(t, std::move(m), std::move(v));
    st.epoch = static_cast<int>(io::read_u64(is, "train state"));
    std::array<uint64_t, 4> rs;
    for (auto& w : rs) w = io::read_u64(is, "train state");
    st.rng.set_state(rs);
    const uint32_t nh = io::read_u32(is, "train state");
    for (uint32_t i = 0; i < nh; ++i) {
        EpochRecord r;
        r.epoch = static_cast<int>(io::read_u32(is, "train state"));
        r.lr = io::read_f64(is, "train state");
        r.mean_loss = io::read_f64(is, "train state");
        st.history.push_back(r);
    }
    return st;
}

template <typename T>
void save_train_state_file(const TrainState<T>& state, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    save_train_state(state, os);
}

template <typename T>
TrainState<T> load_train_state_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open train state " + path);
    TrainState<T> st = load_train_state<T>(is);
    is.peek();
    if (!is.eof()) throw DataError("trailing bytes after train state data in " + path);
    return st;
}

// ---- tiled inference -------------------------------------------------------

// Tile origins along one axis: multiples of the stride while they fit, plus a
// final origin clamped so the last tile ends exactly at the boundary.
inline std::vector<int> tile_origins(int extent, int tile, int stride) {
    if (tile < 1 || tile > extent)
        throw UsageError("tile extent " + std::to_string(tile) + " must be in [1, " +
                         std::to_string(extent) + "]");
    if (stride < 1 || stride > tile)
        throw UsageError("tile stride " + std::to_string(stride) + " must be in [1, " +
                         std::to_string(tile) + "] so tiles cover the volume");
    std::vector<int> origins;
    for (int o = 0; o + tile <= extent; o += stride) origins.push_back(o);
    if (origins.back() + tile < extent) origins.push_back(extent - tile);
    return origins;
}

// Computes one tile of probabilities for the given origin; returns tile-shaped
// voxels in row-major order.
using TileFn = std::function<std::vector<double>(const std::array<int, 3>& origin)>;

// Cover the volume with overlapping tiles, run fn on each, and average the
// contributions per voxel. With workers > 1 the tile computations run
// concurrently, but accumulation always happens in tile order, so the result
// is bit-identical for any worker count.
inline Volume tiled_average(const std::array<int, 3>& dims, const std::array<int, 3>& tile,
                            const std::array<int, 3>& stride, const TileFn& fn, int workers = 1) {
    if (workers < 1) throw UsageError("tiled_average: workers must be >= 1");
    std::array<std::vector<int>, 3> axis_origins;
    for (int a = 0; a < 3; ++a) axis_origins[a] = tile_origins(dims[a], tile[a], stride[a]);

    std::vector<std::array<int, 3>> origins;
    for (int od : axis_origins[0])
        for (int oh : axis_origins[1])
            for (int ow : axis_origins[2]) origins.push_back({od, oh, ow});

    std::vector<std::vector<double>> results(origins.size());
    const int64_t tile_n = voxel_count(tile);
    auto compute = [&](size_t i) {
        results[i] = fn(origins[i]);
        if (static_cast<int64_t>(results[i].size()) != tile_n)
            throw NumericError("tiled_average: tile function returned " +
                               std::to_string(results[i].size()) + " voxels, expected " +
                               std::to_string(tile_n));
    };

    if (workers == 1 || origins.size() < 2) {
        for (size_t i = 0; i < origins.size(); ++i) compute(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::exception_ptr> errors(origins.size());
        auto worker = [&] {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= origins.size()) return;
                try {
                    compute(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        const size_t n_threads = std::min<size_t>(workers, origins.size());
        pool.reserve(n_threads);
        for (size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    Volume sum = make_volume(dims);
    std::vector<int32_t> count(sum.voxels.size(), 0);
    for (size_t i = 0; i < origins.size(); ++i) {
        const auto& o = origins[i];
        const auto& r = results[i];
        int64_t src = 0;
        for (int d = 0; d < tile[0]; ++d)
            for (int h = 0; h < tile[1]; ++h) {
                const int64_t base =
                    ((static_cast<int64_t>(o[0] + d) * dims[1]) + o[1] + h) * dims[2] + o[2];
                for (int w = 0; w < tile[2]; ++w, ++src) {
                    sum.voxels[base + w] += r[src];
                    ++count[base + w];
                }
            }
    }
    for (size_t i = 0; i < sum.voxels.size(); ++i) {
        if (count[i] == 0)
            throw NumericError("tiled_average: internal error, uncovered voxel at index " +
                               std::to_string(i));
        sum.voxels[i] /= count[i];
    }
    return sum;
}

// Tiled inference for a full series: crop every time point at each tile
// origin, run the model without gradients, average overlapping probabilities.
template <typename T>
Volume tiled_infer(const SegModel<T>& model, const VolumeSeries& series,
                   const std::array<int, 3>& tile, const std::array<int, 3>& stride,
                   int workers = 1) {
    if (series.volumes.empty()) throw UsageError("tiled_infer: empty series");
    const auto& dims = series.dims();
    TileFn fn = [&](const std::array<int, 3>& origin) {
        autodiff::NoGradGuard no_grad;
        std::vector<Tensor<T>> xs;
        xs.reserve(series.volumes.size());
        for (const auto& v : series.volumes) {
            Volume c;
            c.dims = tile;
            c.voxels = detail::crop_voxels(v.voxels, dims, origin, tile);
            xs.push_back(detail::series_tensor<T>(c));
        }
        const Tensor<T> prob = model.forward(xs);
        std::vector<double> out(prob.values().size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(prob.values()[i]);
        return out;
    };
    return tiled_average(dims, tile, stride, fn, workers);
}

}  // namespace lact
