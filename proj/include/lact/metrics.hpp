#pragma once

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lact/data.hpp"

namespace lact {

namespace detail {

class DisjointSet {
public:
    // Labels are 1-based; 0 stays reserved for background.
    int32_t make_set() {
        parent_.push_back(static_cast<int32_t>(parent_.size()));
        return static_cast<int32_t>(parent_.size()) - 1 + 1;  // new label
    }

    int32_t find(int32_t x) {
        int32_t r = x - 1;
        while (parent_[r] != r) {
            parent_[r] = parent_[parent_[r]];
            r = parent_[r];
        }
        return r + 1;
    }

    void unite(int32_t a, int32_t b) {
        const int32_t ra = find(a) - 1, rb = find(b) - 1;
        if (ra != rb) parent_[std::max(ra, rb)] = std::min(ra, rb);
    }

    size_t size() const { return parent_.size(); }

private:
    std::vector<int32_t> parent_;
};

}  // namespace detail

struct LabeledComponents {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<int32_t> labels;  // 0 = background, components numbered from 1
    int count = 0;
};

// Connected components under 27-connectivity (full 3x3x3 neighborhood):
// classic two-pass labeling with a union-find over provisional labels. Final
// ids are dense and assigned in first-encounter scan order, so the labeling is
// deterministic.
inline LabeledComponents connected_components_27(const MaskVolume& mask) {
    const auto& dims = mask.dims;
    const int64_t n = voxel_count(dims);
    LabeledComponents out;
    out.dims = dims;
    out.labels.assign(static_cast<size_t>(n), 0);

    // Neighbors that precede the current voxel in scan order (13 of 26).
    std::array<std::array<int, 3>, 13> offsets;
    {
        int k = 0;
        for (int dd = -1; dd <= 1; ++dd)
            for (int dh = -1; dh <= 1; ++dh)
                for (int dw = -1; dw <= 1; ++dw) {
                    if (dd > 0 || (dd == 0 && (dh > 0 || (dh == 0 && dw >= 0)))) continue;
                    offsets[k++] = {dd, dh, dw};
                }
    }

    detail::DisjointSet ds;
    std::vector<int32_t> prov(static_cast<size_t>(n), 0);
    int64_t idx = 0;
    for (int d = 0; d < dims[0]; ++d)
        for (int h = 0; h < dims[1]; ++h)
            for (int w = 0; w < dims[2]; ++w, ++idx) {
                if (!mask.voxels[idx]) continue;
                int32_t label = 0;
                for (const auto& off : offsets) {
                    const int nd = d + off[0], nh = h + off[1], nw = w + off[2];
                    if (nd < 0 || nh < 0 || nw < 0 || nh >= dims[1] || nw >= dims[2]) continue;
                    const int64_t nidx = (static_cast<int64_t>(nd) * dims[1] + nh) * dims[2] + nw;
                    const int32_t nl = prov[nidx];
                    if (!nl) continue;
                    if (!label) {
                        label = nl;
                    } else {
                        ds.unite(label, nl);
                    }
                }
                if (!label) label = ds.make_set();
                prov[idx] = label;
            }

    std::vector<int32_t> dense(ds.size() + 1, 0);
    int32_t next_id = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (!prov[i]) continue;
        const int32_t root = ds.find(prov[i]);
        if (!dense[root]) dense[root] = ++next_id;
        out.labels[i] = dense[root];
    }
    out.count = next_id;
    return out;
}

// Voxelwise Dice overlap; two empty masks agree perfectly by convention.
inline double dice(const MaskVolume& a, const MaskVolume& b) {
    if (a.dims != b.dims)
        throw UsageError("dice: shape mismatch " + dims_str(a.dims) + " vs " + dims_str(b.dims));
    int64_t inter = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.voxels.size(); ++i) {
        na += a.voxels[i];
        nb += b.voxels[i];
        inter += a.voxels[i] & b.voxels[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

inline MaskVolume binarize(const Volume& prob, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw UsageError("threshold must be in (0, 1), got " + std::to_string(threshold));
    MaskVolume m = make_mask(prob.dims);
    for (size_t i = 0; i < prob.voxels.size(); ++i)
        m.voxels[i] = prob.voxels[i] > threshold ? 1 : 0;
    return m;
}

struct CaseMetrics {
    std::string case_id;
    double dice = 0.0;
    double ltpr = 0.0;  // fraction of true lesions touched by the prediction
    double lfpr = 0.0;  // fraction of predicted lesions touching no true lesion
    int fp_count = 0;   // absolute number of false-positive lesions
};

// Lesion-wise scores for one case. A true lesion counts as detected when at
// least one of its voxels is predicted positive; a predicted lesion is a false
// positive when it overlaps no true lesion voxel at all.
inline CaseMetrics lesion_metrics(const Volume& prob, const MaskVolume& truth,
                                  double threshold = 0.5) {
    if (prob.dims != truth.dims)
        throw UsageError("lesion_metrics: prediction shape " + dims_str(prob.dims) +
                         " does not match ground truth " + dims_str(truth.dims));
    const MaskVolume pred = binarize(prob, threshold);
    const LabeledComponents cp = connected_components_27(pred);
    const LabeledComponents cg = connected_components_27(truth);

    std::vector<uint8_t> truth_hit(cg.count + 1, 0), pred_hit(cp.count + 1, 0);
    for (size_t i = 0; i < pred.voxels.size(); ++i) {
        if (cg.labels[i] && pred.voxels[i]) truth_hit[cg.labels[i]] = 1;
        if (cp.labels[i] && truth.voxels[i]) pred_hit[cp.labels[i]] = 1;
    }
    const int detected = std::accumulate(truth_hit.begin() + 1, truth_hit.end(), 0);
    const int matched = std::accumulate(pred_hit.begin() + 1, pred_hit.end(), 0);

    CaseMetrics m;
    m.dice = dice(pred, truth);
    m.fp_count = cp.count - matched;
    m.ltpr = cg.count > 0 ? static_cast<double>(detected) / cg.count : 1.0;
    m.lfpr = cp.count > 0 ? static_cast<double>(m.fp_count) / cp.count : 0.0;
    return m;
}

struct AggregateMetrics {
    int n_cases = 0;
    double dice = 0.0;
    double ltpr = 0.0;
    double lfpr = 0.0;
    double fp_count = 0.0;  // mean false positives per case, hence fractional
};

inline AggregateMetrics aggregate(const std::vector<CaseMetrics>& cases) {
    if (cases.empty()) throw UsageError("aggregate: no case metrics to average");
    AggregateMetrics a;
    a.n_cases = static_cast<int>(cases.size());
    for (const auto& c : cases) {
        a.dice += c.dice;
        a.ltpr += c.ltpr;
        a.lfpr += c.lfpr;
        a.fp_count += c.fp_count;
    }
    a.dice /= a.n_cases;
    a.ltpr /= a.n_cases;
    a.lfpr /= a.n_cases;
    a.fp_count /= a.n_cases;
    return a;
}

// JSON-lines report: one record per case (caller fixes the order), then an
// aggregate record. nlohmann dumps keys sorted, so reruns are byte-identical.
inline void write_report(std::ostream& os, const std::vector<CaseMetrics>& cases,
                         const AggregateMetrics& agg) {
    for (const auto& c : cases) {
        nlohmann::json j{{"case_id", c.case_id},
                         {"dice", c.dice},
                         {"ltpr", c.ltpr},
                         {"lfpr", c.lfpr},
                         {"fp_count", c.fp_count}};
        os << j.dump() << "\n";
    }
    nlohmann::json j{{"case_id", "aggregate"},
                     {"n_cases", agg.n_cases},
                     {"dice", agg.dice},
                     {"ltpr", agg.ltpr},
                     {"lfpr", agg.lfpr},
                     {"fp_count", agg.fp_count}};
    os << j.dump() << "\n";
}

}  // namespace lact
