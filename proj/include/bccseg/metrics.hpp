#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bccseg/ops.hpp"

namespace bccseg {

// Pixel confusion counts for the tumor-positive class.
struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

inline ConfusionCounts confusion_counts(const LabelMap& pred, const LabelMap& gt) {
    if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w)
        throw std::invalid_argument("confusion_counts: mask dims differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const bool p = pred.v[i] != 0;
        const bool g = gt.v[i] != 0;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

// IOU = TP/(TP+FP+FN) per class; for the background class the roles invert
// (its TP are the tn pixels, its FP the tumor fn, its FN the tumor fp).
// An empty union (0/0) counts as 1.0: class absent and never predicted is
// perfect agreement, not a zero score.
inline std::pair<double, double> iou_per_class(const ConfusionCounts& c) {
    auto iou = [](std::uint64_t inter, std::uint64_t uni) {
        return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    };
    const double background = iou(c.tn, c.tn + c.fn + c.fp);
    const double tumor = iou(c.tp, c.tp + c.fp + c.fn);
    return {background, tumor};
}

inline double mean_iou(const ConfusionCounts& c) {
    auto [background, tumor] = iou_per_class(c);
    return 0.5 * (background + tumor);
}

struct CurvePoint {
    double threshold = 0.0;
    double x = 0.0;  // ROC: FPR, PR: recall
    double y = 0.0;  // ROC: TPR, PR: precision
};

struct CurveSeries {
    enum class Kind { Roc, Pr };
    Kind kind = Kind::Roc;
    std::vector<CurvePoint> points;
    double auc = 0.0;
};

// Above this many samples the curves quantize scores into kCurveBins uniform
// probability bins before construction.
inline constexpr std::size_t kCurveBinningThreshold = 10'000'000;
inline constexpr int kCurveBins = 4096;

namespace detail {

// One descending-threshold step: every sample whose score ties at `score`.
struct TieGroup {
    double score = 0.0;
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
};

inline void check_curve_input(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("curve input: scores and labels differ in length");
    if (scores.empty()) throw std::invalid_argument("curve input: empty");
}

inline std::vector<TieGroup> exact_groups(const std::vector<float>& scores,
                                          const std::vector<std::uint8_t>& labels) {
    std::vector<std::pair<float, std::uint8_t>> rows(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) rows[i] = {scores[i], labels[i] ? std::uint8_t(1) : std::uint8_t(0)};
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<TieGroup> groups;
    for (std::size_t i = 0; i < rows.size();) {
        TieGroup g;
        g.score = rows[i].first;
        std::size_t j = i;
        for (; j < rows.size() && rows[j].first == rows[i].first; ++j) {
            if (rows[j].second)
                ++g.pos;
            else
                ++g.neg;
        }
        groups.push_back(g);
        i = j;
    }
    return groups;
}

// Scores clamped into [0,1] and bucketed; the group threshold is the bin's
// lower edge. Equivalent to running the exact path on quantized scores.
inline std::vector<TieGroup> binned_groups(const std::vector<float>& scores,
                                           const std::vector<std::uint8_t>& labels, int bins) {
    std::vector<std::array<std::uint64_t, 2>> hist(static_cast<std::size_t>(bins), {0, 0});
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const float s = std::clamp(scores[i], 0.0f, 1.0f);
        const int b = std::min(bins - 1, static_cast<int>(s * static_cast<float>(bins)));
        ++hist[static_cast<std::size_t>(b)][labels[i] ? 1 : 0];
    }
    std::vector<TieGroup> groups;
    for (int b = bins - 1; b >= 0; --b) {
        const auto& h = hist[static_cast<std::size_t>(b)];
        if (h[0] + h[1] == 0) continue;
        groups.push_back(TieGroup{static_cast<double>(b) / bins, h[1], h[0]});
    }
    return groups;
}

inline CurveSeries roc_from_groups(const std::vector<TieGroup>& groups) {
    std::uint64_t total_pos = 0;
    std::uint64_t total_neg = 0;
    for (const auto& g : groups) {
        total_pos += g.pos;
        total_neg += g.neg;
    }
    if (total_pos == 0 || total_neg == 0)
        throw std::invalid_argument("roc_curve: degenerate labels (both classes required)");
    CurveSeries out;
    out.kind = CurveSeries::Kind::Roc;
    out.points.push_back(CurvePoint{std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    double auc = 0.0;
    for (const auto& g : groups) {
        const CurvePoint prev = out.points.back();
        tp += g.pos;
        fp += g.neg;
        const double fpr = static_cast<double>(fp) / static_cast<double>(total_neg);
        const double tpr = static_cast<double>(tp) / static_cast<double>(total_pos);
        auc += (fpr - prev.x) * (tpr + prev.y) * 0.5;
        out.points.push_back(CurvePoint{g.score, fpr, tpr});
    }
    out.auc = auc;
    return out;
}

inline CurveSeries pr_from_groups(const std::vector<TieGroup>& groups) {
    std::uint64_t total_pos = 0;
    for (const auto& g : groups) total_pos += g.pos;
    if (total_pos == 0) throw std::invalid_argument("pr_curve: no positive labels");
    CurveSeries out;
    out.kind = CurveSeries::Kind::Pr;
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    double prev_recall = 0.0;
    double ap = 0.0;
    for (const auto& g : groups) {
        tp += g.pos;
        fp += g.neg;
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        out.points.push_back(CurvePoint{g.score, recall, precision});
    }
    out.auc = ap;
    return out;
}

}  // namespace detail

// Tie-grouped ROC with trapezoidal AUC; equals the pairwise statistic
// P(s+ > s-) + 0.5 P(s+ = s-). Points run from (0,0) at threshold +inf to
// (1,1); "positive" means score >= threshold.
inline CurveSeries roc_curve_exact(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels) {
    detail::check_curve_input(scores, labels);
    return detail::roc_from_groups(detail::exact_groups(scores, labels));
}

inline CurveSeries roc_curve_binned(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels,
                                    int bins = kCurveBins) {
    detail::check_curve_input(scores, labels);
    if (bins < 2) throw std::invalid_argument("roc_curve_binned: bins must be >= 2");
    return detail::roc_from_groups(detail::binned_groups(scores, labels, bins));
}

inline CurveSeries roc_curve(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels) {
    detail::check_curve_input(scores, labels);
    return scores.size() > kCurveBinningThreshold ? roc_curve_binned(scores, labels)
                                                  : roc_curve_exact(scores, labels);
}

// PR curve with one point per distinct threshold, descending; AUC is
// step-interpolated average precision sum (R_i - R_{i-1}) * P_i.
inline CurveSeries pr_curve_exact(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels) {
    detail::check_curve_input(scores, labels);
    return detail::pr_from_groups(detail::exact_groups(scores, labels));
}

inline CurveSeries pr_curve_binned(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels,
                                   int bins = kCurveBins) {
    detail::check_curve_input(scores, labels);
    if (bins < 2) throw std::invalid_argument("pr_curve_binned: bins must be >= 2");
    return detail::pr_from_groups(detail::binned_groups(scores, labels, bins));
}

inline CurveSeries pr_curve(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels) {
    detail::check_curve_input(scores, labels);
    return scores.size() > kCurveBinningThreshold ? pr_curve_binned(scores, labels)
                                                  : pr_curve_exact(scores, labels);
}

// Points of the precision = f1*r / (2r - f1) locus. Grid entries at or below
// the f1/2 pole are omitted.
inline std::vector<std::pair<double, double>> iso_f1_points(double f1_level,
                                                            const std::vector<double>& recall_grid) {
    if (!(f1_level > 0.0 && f1_level < 1.0))
        throw std::invalid_argument("iso_f1_points: f1_level must be in (0, 1)");
    std::vector<std::pair<double, double>> out;
    for (double r : recall_grid) {
        if (!(r > f1_level / 2.0)) continue;
        out.emplace_back(r, f1_level * r / (2.0 * r - f1_level));
    }
    return out;
}

// Image-level call from a predicted mask: positive iff predicted tumor pixels
// exceed threshold_fraction of all pixels (strict inequality).
struct SlideVerdict {
    std::string id;
    std::uint64_t positive_pixel_count = 0;
    std::uint64_t total_pixels = 0;
    bool predicted = false;
    bool truth = false;
};

inline SlideVerdict slide_classify(const LabelMap& pred_mask, double threshold_fraction = 0.005) {
    if (!(threshold_fraction >= 0.0)) throw std::invalid_argument("slide_classify: negative threshold");
    SlideVerdict v;
    v.total_pixels = static_cast<std::uint64_t>(pred_mask.numel());
    for (std::uint8_t p : pred_mask.v) v.positive_pixel_count += p != 0 ? 1u : 0u;
    v.predicted = static_cast<double>(v.positive_pixel_count) >
                  threshold_fraction * static_cast<double>(v.total_pixels);
    return v;
}

struct SlideMetrics {
    double accuracy = 0.0;
    std::optional<double> sensitivity;  // absent when there are no true positives
    std::optional<double> specificity;  // absent when there are no true negatives
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;
};

inline SlideMetrics slide_metrics(const std::vector<SlideVerdict>& verdicts) {
    if (verdicts.empty()) throw std::invalid_argument("slide_metrics: empty verdict list");
    SlideMetrics m;
    for (const auto& v : verdicts) {
        if (v.truth && v.predicted)
            ++m.tp;
        else if (!v.truth && v.predicted)
            ++m.fp;
        else if (v.truth && !v.predicted)
            ++m.fn;
        else
            ++m.tn;
    }
    m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(verdicts.size());
    if (m.tp + m.fn > 0) m.sensitivity = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    if (m.tn + m.fp > 0) m.specificity = static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp);
    return m;
}

namespace detail {

inline std::string format_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace detail

inline void write_curve_csv(const std::string& path, const CurveSeries& series) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write curve CSV: " + path);
    out << (series.kind == CurveSeries::Kind::Roc ? "threshold,fpr,tpr" : "threshold,recall,precision") << '\n';
    for (const auto& p : series.points)
        out << detail::format_g(p.threshold) << ',' << detail::format_g(p.x) << ',' << detail::format_g(p.y)
            << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace bccseg
