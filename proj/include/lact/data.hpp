#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lact/rng.hpp"
#include "lact/serialize.hpp"

namespace lact {

// Scalar volumes are stored as doubles in memory regardless of compute
// precision; training casts crops down when the engine runs in f32.
struct Volume {
    std::array<int, 3> dims{0, 0, 0};  // D, H, W, row-major with W contiguous
    std::vector<double> voxels;
};

struct MaskVolume {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<uint8_t> voxels;  // strictly 0/1
};

inline int64_t voxel_count(const std::array<int, 3>& dims) {
    return static_cast<int64_t>(dims[0]) * dims[1] * dims[2];
}

inline std::string dims_str(const std::array<int, 3>& d) {
    return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

inline Volume make_volume(std::array<int, 3> dims, double fill = 0.0) {
    Volume v;
    v.dims = dims;
    v.voxels.assign(static_cast<size_t>(voxel_count(dims)), fill);
    return v;
}

inline MaskVolume make_mask(std::array<int, 3> dims) {
    MaskVolume m;
    m.dims = dims;
    m.voxels.assign(static_cast<size_t>(voxel_count(dims)), 0);
    return m;
}

// A registered longitudinal series: T >= 2 scans of identical shape, oldest
// first. The last entry is the follow-up scan the activity mask refers to.
struct VolumeSeries {
    std::vector<Volume> volumes;

    int time_points() const { return static_cast<int>(volumes.size()); }
    const std::array<int, 3>& dims() const { return volumes.at(0).dims; }
};

struct CaseSample {
    std::string id;
    VolumeSeries series;
    MaskVolume mask;  // lesion activity: new-or-grown tissue at follow-up
};

// ---- volume files ----------------------------------------------------------
// "LSV1" | u32 version=1 | u32 ndims=3 | 3x u64 dims | u8 dtype | payload.
// dtype: 0 = f32, 1 = f64, 2 = u8.

enum class LsvDtype : uint8_t { f32 = 0, f64 = 1, u8 = 2 };

namespace detail {

inline void write_lsv_header(std::ostream& os, const std::array<int, 3>& dims, LsvDtype dtype) {
    io::write_raw(os, "LSV1", 4);
    io::write_u32(os, 1);
    io::write_u32(os, 3);
    for (int d : dims) io::write_u64(os, static_cast<uint64_t>(d));
    io::write_u8(os, static_cast<uint8_t>(dtype));
}

inline std::pair<std::array<int, 3>, LsvDtype> read_lsv_header(std::istream& is,
                                                               const std::string& path) {
    const std::string what = "volume file " + path;
    io::expect_magic(is, "LSV1", what.c_str());
    const uint32_t version = io::read_u32(is, what.c_str());
    if (version != 1)
        throw DataError("unsupported volume format version " + std::to_string(version) + " in " + path);
    const uint32_t ndims = io::read_u32(is, what.c_str());
    if (ndims != 3)
        throw DataError("expected 3 dimensions in " + path + ", found " + std::to_string(ndims));
    std::array<int, 3> dims;
    for (auto& d : dims) {
        const uint64_t v = io::read_u64(is, what.c_str());
        if (v == 0 || v > (1ull << 32))
            throw DataError("implausible dimension " + std::to_string(v) + " in " + path);
        d = static_cast<int>(v);
    }
    const uint8_t dt = io::read_u8(is, what.c_str());
    if (dt > 2) throw DataError("unknown dtype code " + std::to_string(dt) + " in " + path);
    return {dims, static_cast<LsvDtype>(dt)};
}

inline void check_no_trailing(std::istream& is, const std::string& path) {
    is.peek();
    if (!is.eof()) throw DataError("trailing bytes after voxel data in " + path);
}

}  // namespace detail

inline void write_volume(const std::filesystem::path& path, const Volume& v,
                         LsvDtype dtype = LsvDtype::f64) {
    if (dtype == LsvDtype::u8)
        throw UsageError("write_volume: use write_mask for u8 data");
    for (double x : v.voxels)
        if (!std::isfinite(x))
            throw DataError("refusing to write non-finite voxel values to " + path.string());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    detail::write_lsv_header(os, v.dims, dtype);
    if (dtype == LsvDtype::f64) {
        io::write_array(os, v.voxels);
    } else {
        std::vector<float> tmp(v.voxels.begin(), v.voxels.end());
        io::write_array(os, tmp);
    }
    if (!os) throw DataError("write failed for " + path.string());
}

inline void write_mask(const std::filesystem::path& path, const MaskVolume& m) {
    for (uint8_t x : m.voxels)
        if (x > 1)
            throw DataError("mask voxels must be 0 or 1, found " + std::to_string(x));
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    detail::write_lsv_header(os, m.dims, LsvDtype::u8);
    io::write_array(os, m.voxels);
    if (!os) throw DataError("write failed for " + path.string());
}

inline Volume read_volume(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open volume file " + path.string());
    auto [dims, dtype] = detail::read_lsv_header(is, path.string());
    Volume v = make_volume(dims);
    const std::string what = "volume file " + path.string();
    if (dtype == LsvDtype::f64) {
        io::read_array(is, v.voxels, what.c_str());
    } else if (dtype == LsvDtype::f32) {
        std::vector<float> tmp(v.voxels.size());
        io::read_array(is, tmp, what.c_str());
        std::copy(tmp.begin(), tmp.end(), v.voxels.begin());
    } else {
        throw DataError("expected a scalar volume in " + path.string() +
                        ", found u8 mask data (use read_mask)");
    }
    detail::check_no_trailing(is, path.string());
    return v;
}

inline MaskVolume read_mask(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open mask file " + path.string());
    auto [dims, dtype] = detail::read_lsv_header(is, path.string());
    if (dtype != LsvDtype::u8)
        throw DataError("expected u8 mask data in " + path.string());
    MaskVolume m = make_mask(dims);
    io::read_array(is, m.voxels, ("mask file " + path.string()).c_str());
    for (uint8_t x : m.voxels)
        if (x > 1)
            throw DataError("mask voxels must be 0 or 1 in " + path.string() + ", found " +
                            std::to_string(x));
    detail::check_no_trailing(is, path.string());
    return m;
}

// ---- synthetic longitudinal cases ------------------------------------------

struct SyntheticConfig {
    std::array<int, 3> shape = {24, 24, 24};
    int static_lesions = 2;     // present and unchanged at every time point
    int new_lesions = 2;        // appear at a random time point >= 1
    int enlarging_lesions = 1;  // present throughout, larger at follow-up
    double radius_min = 2.0;    // ellipsoid semi-axis range, in voxels
    double radius_max = 4.0;
    double growth_min = 1.25;   // follow-up semi-axis scale for enlarging lesions
    double growth_max = 1.6;
    double lesion_intensity_min = 0.7;
    double lesion_intensity_max = 0.9;
    double background_intensity = 0.2;
    double background_amplitude = 0.1;  // low-frequency field, +/- this around the base
    double noise_sigma = 0.02;
    uint64_t seed = 0;
};

inline void validate(const SyntheticConfig& c) {
    for (int d : c.shape)
        if (d < 2) throw UsageError("synthetic: volume extents must be >= 2, got " + dims_str(c.shape));
    if (c.static_lesions < 0 || c.new_lesions < 0 || c.enlarging_lesions < 0)
        throw UsageError("synthetic: lesion counts must be >= 0");
    if (c.radius_min < 1.0)
        throw UsageError("synthetic: radius_min must be >= 1 voxel, got " +
                         std::to_string(c.radius_min));
    if (c.radius_max < c.radius_min)
        throw UsageError("synthetic: radius_max must be >= radius_min");
    if (c.growth_min <= 1.0 || c.growth_max < c.growth_min)
        throw UsageError("synthetic: growth range must satisfy 1 < growth_min <= growth_max");
    if (c.lesion_intensity_max < c.lesion_intensity_min)
        throw UsageError("synthetic: lesion intensity range is inverted");
    if (c.noise_sigma < 0) throw UsageError("synthetic: noise_sigma must be >= 0");
    if (c.background_amplitude < 0)
        throw UsageError("synthetic: background_amplitude must be >= 0");
    // Separability guard: lesions must sit clearly above background plus noise,
    // otherwise the dataset is unlearnable and masks lose their meaning.
    const double ceiling = c.background_intensity + c.background_amplitude + 3.0 * c.noise_sigma;
    if (c.lesion_intensity_min <= ceiling)
        throw UsageError("synthetic: lesion_intensity_min (" + std::to_string(c.lesion_intensity_min) +
                         ") must exceed background + amplitude + 3*noise_sigma (" +
                         std::to_string(ceiling) + ")");
}

inline nlohmann::json to_json(const SyntheticConfig& c) {
    return nlohmann::json{{"shape", c.shape},
                          {"static_lesions", c.static_lesions},
                          {"new_lesions", c.new_lesions},
                          {"enlarging_lesions", c.enlarging_lesions},
                          {"radius_min", c.radius_min},
                          {"radius_max", c.radius_max},
                          {"growth_min", c.growth_min},
                          {"growth_max", c.growth_max},
                          {"lesion_intensity_min", c.lesion_intensity_min},
                          {"lesion_intensity_max", c.lesion_intensity_max},
                          {"background_intensity", c.background_intensity},
                          {"background_amplitude", c.background_amplitude},
                          {"noise_sigma", c.noise_sigma},
                          {"seed", c.seed}};
}

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
    SyntheticConfig c;
    j.at("shape").get_to(c.shape);
    c.static_lesions = j.at("static_lesions").get<int>();
    c.new_lesions = j.at("new_lesions").get<int>();
    c.enlarging_lesions = j.at("enlarging_lesions").get<int>();
    c.radius_min = j.at("radius_min").get<double>();
    c.radius_max = j.at("radius_max").get<double>();
    c.growth_min = j.at("growth_min").get<double>();
    c.growth_max = j.at("growth_max").get<double>();
    c.lesion_intensity_min = j.at("lesion_intensity_min").get<double>();
    c.lesion_intensity_max = j.at("lesion_intensity_max").get<double>();
    c.background_intensity = j.at("background_intensity").get<double>();
    c.background_amplitude = j.at("background_amplitude").get<double>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

struct Lesion {
    enum class Kind { Static, New, Enlarging };
    Kind kind;
    std::array<double, 3> center;
    std::array<double, 3> radii;  // semi-axes at baseline
    double intensity;
    int onset = 0;        // New only: first time point where the lesion exists
    double growth = 1.0;  // Enlarging only: follow-up semi-axis scale

    bool active_at(int t) const { return kind != Kind::New || t >= onset; }

    std::array<double, 3> radii_at(int t, int total) const {
        if (kind == Kind::Enlarging && t == total - 1)
            return {radii[0] * growth, radii[1] * growth, radii[2] * growth};
        return radii;
    }

    bool contains(int d, int h, int w, const std::array<double, 3>& r) const {
        const double a = (d - center[0]) / r[0];
        const double b = (h - center[1]) / r[1];
        const double c = (w - center[2]) / r[2];
        return a * a + b * b + c * c <= 1.0;
    }
};

inline std::string lesion_kind_name(Lesion::Kind k) {
    switch (k) {
        case Lesion::Kind::Static: return "static";
        case Lesion::Kind::New: return "new";
        case Lesion::Kind::Enlarging: return "enlarging";
    }
    return "?";
}

// A generated case plus the noise-free intermediates, so tests can assert on
// exact pre-noise values and on the lesion list itself.
struct GeneratedCase {
    VolumeSeries series;  // with noise; what training consumes
    MaskVolume mask;
    VolumeSeries clean;   // identical composition before noise was added
    std::vector<Lesion> lesions;
};

namespace detail {

// Low-frequency background: a coarse grid of random offsets, trilinearly
// interpolated to full resolution. Drawn once per case and shared by all time
// points, mimicking stable anatomy under a changing noise field.
inline Volume smooth_background(const SyntheticConfig& cfg, Rng& rng) {
    constexpr int G = 4;
    std::array<double, G * G * G> grid;
    for (auto& g : grid) g = rng.uniform(-1.0, 1.0) * cfg.background_amplitude;
    Volume v = make_volume(cfg.shape);
    const auto& dims = cfg.shape;
    int64_t idx = 0;
    for (int d = 0; d < dims[0]; ++d)
        for (int h = 0; h < dims[1]; ++h)
            for (int w = 0; w < dims[2]; ++w, ++idx) {
                double t[3], f[3];
                int i0[3];
                const int pos[3] = {d, h, w};
                for (int a = 0; a < 3; ++a) {
                    const double u = dims[a] > 1
                        ? static_cast<double>(pos[a]) / (dims[a] - 1) * (G - 1)
                        : 0.0;
                    i0[a] = std::min(static_cast<int>(u), G - 2);
                    f[a] = u - i0[a];
                    t[a] = f[a];
                }
                double acc = 0.0;
                for (int cd = 0; cd < 2; ++cd)
                    for (int ch = 0; ch < 2; ++ch)
                        for (int cw = 0; cw < 2; ++cw) {
                            const double wgt = (cd ? t[0] : 1 - t[0]) * (ch ? t[1] : 1 - t[1]) *
                                               (cw ? t[2] : 1 - t[2]);
                            acc += wgt * grid[((i0[0] + cd) * G + i0[1] + ch) * G + i0[2] + cw];
                        }
                v.voxels[idx] = cfg.background_intensity + acc;
            }
    return v;
}

inline Lesion place_lesion(const SyntheticConfig& cfg, Lesion::Kind kind, int total_t, Rng& rng) {
    constexpr int kAttempts = 64;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        Lesion les;
        les.kind = kind;
        les.growth = kind == Lesion::Kind::Enlarging ? rng.uniform(cfg.growth_min, cfg.growth_max) : 1.0;
        for (auto& r : les.radii) r = rng.uniform(cfg.radius_min, cfg.radius_max);
        bool fits = true;
        for (int a = 0; a < 3; ++a) {
            const double margin = les.radii[a] * les.growth;
            const double lo = margin, hi = cfg.shape[a] - 1 - margin;
            if (lo > hi) {
                fits = false;
                break;
            }
            les.center[a] = rng.uniform(lo, hi);
        }
        if (!fits) continue;  // retry with freshly drawn semi-axes
        les.intensity = rng.uniform(cfg.lesion_intensity_min, cfg.lesion_intensity_max);
        if (kind == Lesion::Kind::New) les.onset = 1 + static_cast<int>(rng.uniform_int(total_t - 1));
        return les;
    }
    throw DataError("synthetic: could not place a " + lesion_kind_name(kind) +
                    " lesion inside the volume after " + std::to_string(kAttempts) +
                    " attempts; config: " + to_json(cfg).dump());
}

inline void mark_members(const Lesion& les, const std::array<double, 3>& r,
                         const std::array<int, 3>& dims, std::vector<uint8_t>& out) {
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(0, static_cast<int>(std::floor(les.center[a] - r[a])));
        hi[a] = std::min(dims[a] - 1, static_cast<int>(std::ceil(les.center[a] + r[a])));
    }
    for (int d = lo[0]; d <= hi[0]; ++d)
        for (int h = lo[1]; h <= hi[1]; ++h)
            for (int w = lo[2]; w <= hi[2]; ++w)
                if (les.contains(d, h, w, r))
                    out[(static_cast<int64_t>(d) * dims[1] + h) * dims[2] + w] = 1;
}

}  // namespace detail

// Build one longitudinal case. Deterministic in (config, time_points): every
// random draw comes from streams derived from config.seed.
inline GeneratedCase generate_case(const SyntheticConfig& cfg, int time_points) {
    validate(cfg);
    if (time_points < 2)
        throw UsageError("generate_case: activity needs at least 2 time points, got " +
                         std::to_string(time_points));

    Rng bg_rng(derive_seed(cfg.seed, "background"));
    Rng lesion_rng(derive_seed(cfg.seed, "lesions"));

    GeneratedCase out;
    const Volume background = detail::smooth_background(cfg, bg_rng);

    for (int i = 0; i < cfg.static_lesions; ++i)
        out.lesions.push_back(detail::place_lesion(cfg, Lesion::Kind::Static, time_points, lesion_rng));
    for (int i = 0; i < cfg.new_lesions; ++i)
        out.lesions.push_back(detail::place_lesion(cfg, Lesion::Kind::New, time_points, lesion_rng));
    for (int i = 0; i < cfg.enlarging_lesions; ++i)
        out.lesions.push_back(detail::place_lesion(cfg, Lesion::Kind::Enlarging, time_points, lesion_rng));

    const auto& dims = cfg.shape;
    const int64_t n = voxel_count(dims);

    // Noise-free composition: background with lesions rendered on top via max,
    // so overlapping lesions keep the brighter value.
    for (int t = 0; t < time_points; ++t) {
        Volume v = background;
        for (const auto& les : out.lesions) {
            if (!les.active_at(t)) continue;
            const auto r = les.radii_at(t, time_points);
            int lo[3], hi[3];
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::max(0, static_cast<int>(std::floor(les.center[a] - r[a])));
                hi[a] = std::min(dims[a] - 1, static_cast<int>(std::ceil(les.center[a] + r[a])));
            }
            for (int d = lo[0]; d <= hi[0]; ++d)
                for (int h = lo[1]; h <= hi[1]; ++h)
                    for (int w = lo[2]; w <= hi[2]; ++w)
                        if (les.contains(d, h, w, r)) {
                            auto& dst = v.voxels[(static_cast<int64_t>(d) * dims[1] + h) * dims[2] + w];
                            dst = std::max(dst, les.intensity);
                        }
        }
        out.clean.volumes.push_back(std::move(v));
    }

    // Activity mask: lesion tissue present at follow-up (last scan) but not at
    // baseline (second-to-last scan; earlier scans are history context), from
    // exact ellipsoid membership, independent of rendered intensities. Because
    // the mask only involves the last two scans, dropping leading history
    // volumes from a stored series never invalidates it.
    std::vector<uint8_t> baseline_set(n, 0), followup_set(n, 0);
    for (const auto& les : out.lesions) {
        if (les.active_at(time_points - 2))
            detail::mark_members(les, les.radii_at(time_points - 2, time_points), dims, baseline_set);
        if (les.active_at(time_points - 1))
            detail::mark_members(les, les.radii_at(time_points - 1, time_points), dims, followup_set);
    }
    out.mask = make_mask(dims);
    for (int64_t i = 0; i < n; ++i)
        out.mask.voxels[i] = followup_set[i] && !baseline_set[i] ? 1 : 0;

    // Additive Gaussian noise, an independent stream per time point.
    for (int t = 0; t < time_points; ++t) {
        Rng noise_rng(derive_seed(cfg.seed, "noise", static_cast<uint64_t>(t)));
        Volume v = out.clean.volumes[t];
        for (auto& x : v.voxels) x += cfg.noise_sigma * noise_rng.normal();
        out.series.volumes.push_back(std::move(v));
    }
    return out;
}

// ---- crops -----------------------------------------------------------------

namespace detail {

inline bool window_has_positive(const MaskVolume& m, const std::array<int, 3>& origin,
                                const std::array<int, 3>& size) {
    for (int d = 0; d < size[0]; ++d)
        for (int h = 0; h < size[1]; ++h) {
            const uint8_t* row = m.voxels.data() +
                ((static_cast<int64_t>(origin[0] + d) * m.dims[1]) + origin[1] + h) * m.dims[2] +
                origin[2];
            for (int w = 0; w < size[2]; ++w)
                if (row[w]) return true;
        }
    return false;
}

template <typename Elem>
std::vector<Elem> crop_voxels(const std::vector<Elem>& src, const std::array<int, 3>& dims,
                              const std::array<int, 3>& origin, const std::array<int, 3>& size) {
    std::vector<Elem> out(static_cast<size_t>(voxel_count(size)));
    int64_t idx = 0;
    for (int d = 0; d < size[0]; ++d)
        for (int h = 0; h < size[1]; ++h) {
            const Elem* row = src.data() +
                ((static_cast<int64_t>(origin[0] + d) * dims[1]) + origin[1] + h) * dims[2] +
                origin[2];
            for (int w = 0; w < size[2]; ++w) out[idx++] = row[w];
        }
    return out;
}

}  // namespace detail

struct CropResult {
    VolumeSeries series;
    MaskVolume mask;
    std::array<int, 3> origin;
};

// Random crop with a positive bias: half the time (by coin flip) the draw is
// retried a bounded number of times until the window contains mask voxels.
// All volumes and the mask are cropped at the same origin.
inline CropResult random_crop(const VolumeSeries& series, const MaskVolume& mask,
                              const std::array<int, 3>& size, Rng& rng) {
    if (series.volumes.empty()) throw UsageError("random_crop: empty series");
    const auto& dims = series.dims();
    if (mask.dims != dims)
        throw UsageError("random_crop: mask shape " + dims_str(mask.dims) +
                         " does not match series shape " + dims_str(dims));
    for (int a = 0; a < 3; ++a) {
        if (size[a] < 1) throw UsageError("random_crop: crop extents must be >= 1");
        if (size[a] > dims[a])
            throw UsageError("random_crop: crop " + dims_str(size) + " exceeds volume " +
                             dims_str(dims));
    }

    auto draw = [&] {
        std::array<int, 3> o;
        for (int a = 0; a < 3; ++a)
            o[a] = static_cast<int>(rng.uniform_int(dims[a] - size[a] + 1));
        return o;
    };

    std::array<int, 3> origin;
    if (rng.bernoulli(0.5)) {
        constexpr int kAttempts = 32;
        origin = draw();
        for (int i = 1; i < kAttempts && !detail::window_has_positive(mask, origin, size); ++i)
            origin = draw();
    } else {
        origin = draw();
    }

    CropResult res;
    res.origin = origin;
    for (const auto& v : series.volumes) {
        Volume c;
        c.dims = size;
        c.voxels = detail::crop_voxels(v.voxels, dims, origin, size);
        res.series.volumes.push_back(std::move(c));
    }
    res.mask.dims = size;
    res.mask.voxels = detail::crop_voxels(mask.voxels, dims, origin, size);
    return res;
}

// ---- case directories and the dataset manifest -----------------------------
// A case lives in <root>/case_<id>/ as t0.lsv ... t<T-1>.lsv (f64 scans,
// oldest first), activity.lsv (u8), and meta.json.

inline std::string case_dir_name(const std::string& id) { return "case_" + id; }

inline void write_case(const std::filesystem::path& root, const std::string& id,
                       const GeneratedCase& c, const SyntheticConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path dir = root / case_dir_name(id);
    fs::create_directories(dir);
    for (int t = 0; t < c.series.time_points(); ++t)
        write_volume(dir / ("t" + std::to_string(t) + ".lsv"), c.series.volumes[t], LsvDtype::f64);
    write_mask(dir / "activity.lsv", c.mask);
    nlohmann::json meta{{"id", id}, {"time_points", c.series.time_points()}, {"config", to_json(cfg)}};
    std::ofstream os(dir / "meta.json");
    if (!os) throw DataError("cannot write " + (dir / "meta.json").string());
    os << meta.dump(2) << "\n";
}

inline CaseSample read_case(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("case directory " + dir.string() + " does not exist");
    CaseSample sample;
    std::string name = dir.filename().string();
    sample.id = name.rfind("case_", 0) == 0 ? name.substr(5) : name;
    for (int t = 0;; ++t) {
        const fs::path p = dir / ("t" + std::to_string(t) + ".lsv");
        if (!fs::exists(p)) break;
        sample.series.volumes.push_back(read_volume(p));
    }
    if (sample.series.time_points() < 2)
        throw DataError("case " + dir.string() + " has " +
                        std::to_string(sample.series.time_points()) +
                        " time point files (t0.lsv, t1.lsv, ...); at least 2 are required");
    sample.mask = read_mask(dir / "activity.lsv");
    const auto& dims = sample.series.dims();
    for (const auto& v : sample.series.volumes)
        if (v.dims != dims)
            throw DataError("case " + dir.string() + " mixes volume shapes " + dims_str(dims) +
                            " and " + dims_str(v.dims));
    if (sample.mask.dims != dims)
        throw DataError("case " + dir.string() + ": activity mask shape " + dims_str(sample.mask.dims) +
                        " does not match scans " + dims_str(dims));
    return sample;
}

struct ManifestEntry {
    std::string id;
    std::string split;  // train | val | test
    int time_points = 0;
};

inline void write_manifest(const std::filesystem::path& root,
                           const std::vector<ManifestEntry>& entries, uint64_t seed) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& e : entries)
        cases.push_back({{"id", e.id}, {"split", e.split}, {"time_points", e.time_points}});
    nlohmann::json j{{"cases", cases}, {"seed", seed}};
    std::ofstream os(root / "manifest.json");
    if (!os) throw DataError("cannot write " + (root / "manifest.json").string());
    os << j.dump(2) << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root) {
    std::ifstream is(root / "manifest.json");
    if (!is) throw DataError("no manifest.json in " + root.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest.json in " + root.string() + " is not valid JSON: " + e.what());
    }
    std::vector<ManifestEntry> entries;
    for (const auto& c : j.at("cases")) {
        ManifestEntry e;
        e.id = c.at("id").get<std::string>();
        e.split = c.at("split").get<std::string>();
        e.time_points = c.at("time_points").get<int>();
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace lact
