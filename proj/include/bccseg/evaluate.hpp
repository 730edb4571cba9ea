#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "bccseg/dataset.hpp"
#include "bccseg/metrics.hpp"
#include "bccseg/model.hpp"
#include "bccseg/ops.hpp"

namespace bccseg {

struct EvalConfig {
    double threshold_fraction = 0.005;
    // When set, the prediction mask is p_tumor > prob_threshold instead of
    // channel argmax.
    std::optional<double> prob_threshold;
    int threads = 1;
};

struct EvalResult {
    ConfusionCounts pixel_counts;
    double iou_background = 0.0;
    double iou_tumor = 0.0;
    double miou = 0.0;
    // Absent when the pooled ground truth is single-class.
    std::optional<CurveSeries> roc;
    std::optional<CurveSeries> pr;
    std::vector<SlideVerdict> verdicts;
    SlideMetrics slide;
    double threshold_fraction = 0.005;
    std::uint64_t n_images = 0;
    std::uint64_t n_pixels = 0;
};

namespace detail {

struct RecordEval {
    std::vector<float> scores;  // p_tumor per pixel, row-major
    LabelMap pred;
    LabelMap gt;
};

template <typename T>
RecordEval eval_one(Model<T>& model, const ImageRecord& rec, const EvalConfig& cfg) {
    auto x = normalize(rec.image);
    auto logits = model.forward(x);
    auto probs = softmax_channels(logits);

    RecordEval out;
    const std::int64_t hw = logits->shape.h * logits->shape.w;
    const T* p1 = probs->data.data() + hw;  // channel 1 of the single batch row
    out.scores.assign(p1, p1 + hw);

    out.pred.n = 1;
    out.pred.h = logits->shape.h;
    out.pred.w = logits->shape.w;
    out.pred.v.resize(static_cast<std::size_t>(hw));
    if (cfg.prob_threshold) {
        const double thr = *cfg.prob_threshold;
        for (std::int64_t i = 0; i < hw; ++i) out.pred.v[i] = static_cast<double>(p1[i]) > thr ? 1 : 0;
    } else {
        const T* l0 = logits->data.data();
        const T* l1 = logits->data.data() + hw;
        for (std::int64_t i = 0; i < hw; ++i) out.pred.v[i] = l1[i] > l0[i] ? 1 : 0;
    }
    out.gt = mask_to_labels(rec.mask);
    return out;
}

// Pools per-record outputs into one EvalResult; order-independent sums plus
// deterministic by-index concatenation for the curves.
inline EvalResult pool_records(const std::vector<RecordEval>& evals, const std::vector<const ImageRecord*>& recs,
                               const EvalConfig& cfg) {
    EvalResult result;
    result.threshold_fraction = cfg.threshold_fraction;
    result.n_images = evals.size();

    std::size_t total_px = 0;
    for (const auto& e : evals) total_px += e.scores.size();
    std::vector<float> scores;
    std::vector<std::uint8_t> labels;
    scores.reserve(total_px);
    labels.reserve(total_px);

    for (std::size_t i = 0; i < evals.size(); ++i) {
        const auto& e = evals[i];
        result.pixel_counts += confusion_counts(e.pred, e.gt);
        scores.insert(scores.end(), e.scores.begin(), e.scores.end());
        labels.insert(labels.end(), e.gt.v.begin(), e.gt.v.end());
        SlideVerdict v = slide_classify(e.pred, cfg.threshold_fraction);
        v.id = recs[i]->id;
        v.truth = recs[i]->label;
        result.verdicts.push_back(std::move(v));
    }
    result.n_pixels = static_cast<std::uint64_t>(total_px);
    auto [bg, tumor] = iou_per_class(result.pixel_counts);
    result.iou_background = bg;
    result.iou_tumor = tumor;
    result.miou = mean_iou(result.pixel_counts);

    bool any_pos = false;
    bool any_neg = false;
    for (std::uint8_t l : labels) (l ? any_pos : any_neg) = true;
    if (any_pos && any_neg) {
        result.roc = roc_curve(scores, labels);
        result.pr = pr_curve(scores, labels);
    } else if (any_pos) {
        result.pr = pr_curve(scores, labels);
    }
    result.slide = slide_metrics(result.verdicts);
    return result;
}

}  // namespace detail

// Runs the model over every record of `dataset` (callers pass the test
// subset) and pools all pixels into one score population. threads > 1
// parallelizes per image; the pooled result does not depend on thread count.
inline EvalResult evaluate_model(Model<float>& model, const Dataset& dataset, const EvalConfig& cfg = {}) {
    if (dataset.records.empty()) throw std::invalid_argument("evaluate_model: dataset is empty");
    if (cfg.threads < 1) throw std::invalid_argument("evaluate_model: threads must be >= 1");
    for (const auto& r : dataset.records) {
        if (r.image.h % 16 != 0 || r.image.w % 16 != 0)
            throw std::invalid_argument("evaluate_model: image " + r.id + " size not divisible by 16");
    }
    model.set_training(false);

    const std::size_t n = dataset.records.size();
    std::vector<detail::RecordEval> evals(n);
    const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) evals[i] = detail::eval_one(model, dataset.records[i], cfg);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= n) return;
                    evals[i] = detail::eval_one(model, dataset.records[i], cfg);
                }
            });
        for (auto& th : pool) th.join();
    }

    std::vector<const ImageRecord*> recs;
    recs.reserve(n);
    for (const auto& r : dataset.records) recs.push_back(&r);
    return detail::pool_records(evals, recs, cfg);
}

// Evaluation stack over externally supplied prediction masks (no model, no
// probabilities): scores degenerate to {0,1}, so the curves collapse to the
// few points binary predictions admit.
struct MaskPair {
    std::string id;
    LabelMap pred;
    LabelMap gt;
    bool truth = false;
};

inline EvalResult evaluate_masks(const std::vector<MaskPair>& pairs, double threshold_fraction = 0.005) {
    if (pairs.empty()) throw std::invalid_argument("evaluate_masks: empty input");
    EvalConfig cfg;
    cfg.threshold_fraction = threshold_fraction;
    std::vector<detail::RecordEval> evals(pairs.size());
    std::vector<ImageRecord> holders(pairs.size());
    std::vector<const ImageRecord*> recs(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        evals[i].pred = pairs[i].pred;
        evals[i].gt = pairs[i].gt;
        evals[i].scores.resize(pairs[i].pred.v.size());
        for (std::size_t k = 0; k < evals[i].scores.size(); ++k)
            evals[i].scores[k] = pairs[i].pred.v[k] ? 1.0f : 0.0f;
        holders[i].id = pairs[i].id;
        holders[i].label = pairs[i].truth;
        recs[i] = &holders[i];
    }
    return detail::pool_records(evals, recs, cfg);
}

inline nlohmann::json report_json(const EvalResult& r) {
    nlohmann::json j;
    j["iou_background"] = r.iou_background;
    j["iou_tumor"] = r.iou_tumor;
    j["mean_iou"] = r.miou;
    j["roc_auc"] = r.roc ? nlohmann::json(r.roc->auc) : nlohmann::json(nullptr);
    j["pr_auc"] = r.pr ? nlohmann::json(r.pr->auc) : nlohmann::json(nullptr);
    j["slide_accuracy"] = r.slide.accuracy;
    j["slide_sensitivity"] =
        r.slide.sensitivity ? nlohmann::json(*r.slide.sensitivity) : nlohmann::json(nullptr);
    j["slide_specificity"] =
        r.slide.specificity ? nlohmann::json(*r.slide.specificity) : nlohmann::json(nullptr);
    j["threshold_fraction"] = r.threshold_fraction;
    j["n_test_images"] = r.n_images;
    j["n_test_pixels"] = r.n_pixels;
    return j;
}

}  // namespace bccseg
