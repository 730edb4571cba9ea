#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bccseg/adam.hpp"
#include "bccseg/checkpoint.hpp"
#include "bccseg/dataset.hpp"
#include "bccseg/model.hpp"
#include "bccseg/ops.hpp"
#include "bccseg/rng.hpp"

namespace bccseg {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 4;
    float lr = 1e-3f;  // initial rate; fit applies poly decay lr*(1 - step/total)^0.9
    std::optional<std::pair<float, float>> class_weights;
    std::uint64_t seed = 42;
    std::string checkpoint_path;  // rewritten after every epoch when nonempty
    std::string log_path;         // step CSV when nonempty
    int log_every = 1;
};

struct EpochStats {
    double loss = 0.0;            // pixel-weighted mean over the epoch
    double pixel_accuracy = 0.0;  // argmax accuracy on the training batches
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int steps = 0;
};

namespace detail {

// Stacks records [start, start+bs) of the given order into one batch.
template <typename T>
std::pair<TensorPtr<T>, LabelMap> make_batch(const std::vector<TensorPtr<T>>& xs,
                                             const std::vector<LabelMap>& ys,
                                             const std::vector<std::size_t>& order, std::size_t start,
                                             std::size_t bs) {
    const Shape one = xs[order[start]]->shape;
    auto x = make_tensor<T>(Shape{static_cast<std::int64_t>(bs), one.c, one.h, one.w});
    LabelMap y;
    y.n = static_cast<std::int64_t>(bs);
    y.h = one.h;
    y.w = one.w;
    y.v.resize(static_cast<std::size_t>(y.numel()));
    const std::size_t x_stride = static_cast<std::size_t>(one.numel());
    const std::size_t y_stride = static_cast<std::size_t>(one.h * one.w);
    for (std::size_t b = 0; b < bs; ++b) {
        const auto& src_x = xs[order[start + b]];
        const auto& src_y = ys[order[start + b]];
        std::copy(src_x->data.begin(), src_x->data.end(), x->data.begin() + b * x_stride);
        std::copy(src_y.v.begin(), src_y.v.end(), y.v.begin() + b * y_stride);
    }
    return {x, y};
}

// Count of pixels whose argmax over the 2 logit channels matches the labels.
template <typename T>
std::uint64_t correct_pixels(const Tensor<T>& logits, const LabelMap& y) {
    const std::int64_t hw = logits.shape.h * logits.shape.w;
    std::uint64_t correct = 0;
    for (std::int64_t n = 0; n < logits.shape.n; ++n) {
        const T* c0 = logits.data.data() + (n * logits.shape.c + 0) * hw;
        const T* c1 = logits.data.data() + (n * logits.shape.c + 1) * hw;
        const std::uint8_t* lab = y.v.data() + n * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            const std::uint8_t pred = c1[i] > c0[i] ? 1 : 0;
            correct += pred == lab[i] ? 1u : 0u;
        }
    }
    return correct;
}

}  // namespace detail

// Adam training loop over every record in `dataset` (callers pass the subset
// they mean to train on). Deterministic for a fixed seed in single-threaded
// use: one xoshiro stream drives the per-epoch shuffles. cfg.lr is the
// initial rate of the poly schedule lr*(1 - step/total_steps)^0.9.
inline TrainReport fit(Model<float>& model, const Dataset& dataset, const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw std::invalid_argument("fit: epochs must be >= 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("fit: batch_size must be >= 1");
    if (cfg.log_every < 1) throw std::invalid_argument("fit: log_every must be >= 1");
    if (!(cfg.lr > 0.0f)) throw std::invalid_argument("fit: lr must be > 0");
    if (dataset.records.empty()) throw std::invalid_argument("fit: dataset is empty");
    const int h = dataset.records[0].image.h;
    const int w = dataset.records[0].image.w;
    for (const auto& r : dataset.records) {
        if (r.image.h != h || r.image.w != w)
            throw std::invalid_argument("fit: images must share one size; " + r.id + " differs");
        if (r.image.channels != 3) throw std::invalid_argument("fit: image " + r.id + " is not RGB");
    }
    if (h % 16 != 0 || w % 16 != 0)
        throw std::invalid_argument("fit: image size must be divisible by 16");

    std::vector<TensorPtr<float>> xs;
    std::vector<LabelMap> ys;
    xs.reserve(dataset.records.size());
    ys.reserve(dataset.records.size());
    for (const auto& r : dataset.records) {
        xs.push_back(normalize(r.image));
        ys.push_back(mask_to_labels(r.mask));
    }

    auto params = model.trainable_tensors();
    AdamState<float> adam;
    adam.lr = cfg.lr;
    adam.init(params);
    const std::size_t steps_per_epoch =
        (dataset.records.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
        static_cast<std::size_t>(cfg.batch_size);
    const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path, std::ios::trunc);
        if (!log) throw std::runtime_error("fit: cannot write log: " + cfg.log_path);
        log << "step,epoch,loss,pixel_acc\n";
    }

    Xoshiro256StarStar rng(cfg.seed);
    std::vector<std::size_t> order(dataset.records.size());
    std::iota(order.begin(), order.end(), std::size_t(0));

    model.set_training(true);
    TrainReport report;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(order);
        double loss_weighted = 0.0;
        std::uint64_t pixels = 0;
        std::uint64_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t bs = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
            auto [x, y] = detail::make_batch(xs, ys, order, start, bs);
            Tape<float> tape;
            auto logits = model.forward(x, &tape);
            auto loss = cross_entropy_loss(logits, y, cfg.class_weights, &tape);
            const double loss_v = loss->data[0];
            if (!std::isfinite(loss_v))
                throw std::runtime_error("fit: non-finite loss at step " + std::to_string(report.steps + 1));
            tape.backward(loss);
            adam.lr = cfg.lr * static_cast<float>(
                                   std::pow(1.0 - static_cast<double>(report.steps) / total_steps, 0.9));
            adam_step(params, adam);
            ++report.steps;

            const auto batch_px = static_cast<std::uint64_t>(bs) * h * w;
            const std::uint64_t batch_correct = detail::correct_pixels(*logits, y);
            loss_weighted += loss_v * static_cast<double>(batch_px);
            pixels += batch_px;
            correct += batch_correct;
            if (log && report.steps % cfg.log_every == 0)
                log << report.steps << ',' << epoch << ',' << loss_v << ','
                    << static_cast<double>(batch_correct) / static_cast<double>(batch_px) << '\n';
        }
        if (!cfg.checkpoint_path.empty()) save_checkpoint(model, &adam, cfg.checkpoint_path);
        EpochStats st;
        st.loss = loss_weighted / static_cast<double>(pixels);
        st.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(pixels);
        st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(st);
    }
    if (log) log.flush();
    return report;
}

}  // namespace bccseg
