#pragma once

// Randomized gradient-check suite covering every differentiable op. The unit
// tests run a handful of cases per op; the acceptance runner uses the same
// builders for its >= 20-shapes-per-op sweep. Shapes stay within 2x4x9x9.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bccseg/ops.hpp"
#include "bccseg/rng.hpp"
#include "gradcheck.hpp"

namespace gradsuite {

using bccseg::Conv2dSpec;
using bccseg::LabelMap;
using bccseg::make_tensor;
using bccseg::Tape;
using bccseg::TensorPtr;
using bccseg::Xoshiro256StarStar;

struct OpResult {
    std::string op;
    double max_err = 0.0;
    std::int64_t checked = 0;  // gradient entries compared
    int cases = 0;
};

namespace detail {

using Graph = std::function<TensorPtr<double>(Tape<double>*)>;

// Reduces a graph's tensor output through a fixed random weighting and runs
// the finite-difference check on `inputs`.
inline void run_case(OpResult& res, const std::vector<TensorPtr<double>>& inputs, const Graph& graph,
                     Xoshiro256StarStar& rng) {
    auto probe = graph(nullptr);
    const auto wts = gradcheck::random_weights(probe->data.size(), rng);
    const auto rep = gradcheck::check(inputs, [graph, wts](Tape<double>* t) {
        return gradcheck::weighted_sum(graph(t), wts, t);
    });
    res.max_err = std::max(res.max_err, rep.max_err);
    res.checked += rep.checked;
    res.cases += 1;
}

// Already-scalar graphs (losses) skip the weighting.
inline void run_scalar_case(OpResult& res, const std::vector<TensorPtr<double>>& inputs, const Graph& graph) {
    const auto rep = gradcheck::check(inputs, graph);
    res.max_err = std::max(res.max_err, rep.max_err);
    res.checked += rep.checked;
    res.cases += 1;
}

inline LabelMap random_labels(std::int64_t n, std::int64_t h, std::int64_t w, Xoshiro256StarStar& rng) {
    LabelMap lm{n, h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(n * h * w))};
    for (auto& v : lm.v) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
    return lm;
}

}  // namespace detail

inline std::vector<OpResult> run(int cases_per_op, std::uint64_t seed = 20240913) {
    Xoshiro256StarStar rng(seed);
    std::vector<OpResult> results;

    auto rand_t = [&rng](std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        auto t = make_tensor<double>({n, c, h, w});
        gradcheck::fill_uniform(t, rng);
        return t;
    };

    {
        OpResult r{"conv2d"};
        for (int i = 0; i < cases_per_op; ++i) {
            const int g = rng.uniform_int(1, 2);
            const std::int64_t cin = g * rng.uniform_int(1, 2);
            const std::int64_t cout = g * rng.uniform_int(1, 2);
            const int k = rng.uniform_int(1, 3);
            const int dil = k > 1 ? rng.uniform_int(1, 2) : 1;
            const int stride = rng.uniform_int(1, 2);
            const int pad = rng.uniform_int(0, 2);
            const int keff = dil * (k - 1) + 1;
            const std::int64_t h = std::max<std::int64_t>(1, keff - 2 * pad) + rng.uniform_int(0, 5);
            const std::int64_t w = std::max<std::int64_t>(1, keff - 2 * pad) + rng.uniform_int(0, 5);
            auto x = rand_t(rng.uniform_int(1, 2), cin, std::min<std::int64_t>(h, 9), std::min<std::int64_t>(w, 9));
            auto wt = rand_t(cout, cin / g, k, k);
            auto b = rand_t(1, cout, 1, 1);
            const Conv2dSpec sp{stride, pad, dil, g};
            detail::run_case(r, {x, wt, b}, [x, wt, b, sp](Tape<double>* t) { return conv2d(x, wt, b, sp, t); },
                             rng);
        }
        results.push_back(r);
    }

    {
        OpResult r{"depthwise_separable_conv"};
        for (int i = 0; i < cases_per_op; ++i) {
            const std::int64_t c = rng.uniform_int(1, 4);
            const std::int64_t co = rng.uniform_int(1, 4);
            const int k = rng.uniform_int(1, 3);
            const int stride = rng.uniform_int(1, 2);
            const int pad = rng.uniform_int(0, k - 1 >= 0 ? 1 : 0);
            auto x = rand_t(rng.uniform_int(1, 2), c, rng.uniform_int(k + 1, 8), rng.uniform_int(k + 1, 8));
            auto dw = rand_t(c, 1, k, k);
            auto pw = rand_t(co, c, 1, 1);
            detail::run_case(r, {x, dw, pw},
                             [x, dw, pw, stride, pad](Tape<double>* t) {
                                 return depthwise_separable_conv(x, dw, pw, stride, pad, 1, t);
                             },
                             rng);
        }
        results.push_back(r);
    }

    {
        OpResult r{"relu"};
        for (int i = 0; i < cases_per_op; ++i) {
            auto x = make_tensor<double>({rng.uniform_int(1, 2), rng.uniform_int(1, 4), rng.uniform_int(1, 9),
                                          rng.uniform_int(1, 9)});
            gradcheck::fill_distinct(x, rng);  // keeps values away from the kink at 0
            detail::run_case(r, {x}, [x](Tape<double>* t) { return relu(x, t); }, rng);
        }
        results.push_back(r);
    }

    {
        OpResult r{"add"};
        for (int i = 0; i < cases_per_op; ++i) {
            const std::int64_t n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 4);
            const std::int64_t h = rng.uniform_int(1, 9), w = rng.uniform_int(1, 9);
            auto a = rand_t(n, c, h, w);
            auto b = rand_t(n, c, h, w);
            detail::run_case(r, {a, b}, [a, b](Tape<double>* t) { return add(a, b, t); }, rng);
        }
        results.push_back(r);
    }

    {
        OpResult r{"concat_channels"};
        for (int i = 0; i < cases_per_op; ++i) {
            const std::int64_t n = rng.uniform_int(1, 2), h = rng.uniform_int(1, 9), w = rng.uniform_int(1, 9);
            auto a = rand_t(n, rng.uniform_int(1, 2), h, w);
            auto b = rand_t(n, rng.uniform_int(1, 2), h, w);
            auto c = rand_t(n, rng.uniform_int(1, 2), h, w);
            detail::run_case(r, {a, b, c},
                             [a, b, c](Tape<double>* t) { return concat_channels<double>({a, b, c}, t); }, rng);
        }
        results.push_back(r);
    }

    {
        OpResult r{"global_avg_pool"};
        for (int i = 0; i < cases_per_op; ++i) {
            auto x = rand_t(rng.uniform_int(1, 2), rng.uniform_int(1, 4), rng.uniform_int(1, 9),
                            rng.uniform_int(1, 9));
            detail::run_case(r, {x}, [x](Tape<double>* t) { return global_avg_pool(x, t); }, rng);
        }
        results.push_back(r);
    }

    {
        OpResult r{"max_pool"};
        for (int i = 0; i < cases_per_op; ++i) {
            const int k = rng.uniform_int(1, 3);
            const int stride = rng.uniform_int(1, 2);
            const int pad = k > 1 ? rng.uniform_int(0, k - 1) : 0;
            auto x = make_tensor<double>({rng.uniform_int(1, 2), rng.uniform_int(1, 3), rng.uniform_int(k, 9),
                                          rng.uniform_int(k, 9)});
            gradcheck::fill_distinct(x, rng);  // no ties, so the argmax is FD-stable
            detail::run_case(r, {x}, [x, k, stride, pad](Tape<double>* t) { return max_pool(x, k, stride, pad, t); },
                             rng);
        }
        results.push_back(r);
    }

    for (const bool training : {true, false}) {
        OpResult r{training ? "batch_norm_train" : "batch_norm_eval"};
        for (int i = 0; i < cases_per_op; ++i) {
            const std::int64_t c = rng.uniform_int(1, 4);
            auto x = rand_t(2, c, rng.uniform_int(2, 9), rng.uniform_int(2, 9));
            auto gamma = make_tensor<double>({1, c, 1, 1});
            auto beta = make_tensor<double>({1, c, 1, 1});
            for (auto& v : gamma->data) v = rng.uniform(0.5, 1.5);
            for (auto& v : beta->data) v = rng.uniform(-0.5, 0.5);
            auto rm = make_tensor<double>({1, c, 1, 1});
            auto rv = make_tensor<double>({1, c, 1, 1});
            for (auto& v : rm->data) v = rng.uniform(-0.3, 0.3);
            for (auto& v : rv->data) v = rng.uniform(0.5, 2.0);
            detail::run_case(r, {x, gamma, beta},
                             [x, gamma, beta, rm, rv, training](Tape<double>* t) {
                                 return batch_norm(x, gamma, beta, rm, rv, training, 0.9, 1e-5, t);
                             },
                             rng);
        }
        results.push_back(r);
    }

    {
        OpResult r{"softmax_channels"};
        for (int i = 0; i < cases_per_op; ++i) {
            auto x = rand_t(rng.uniform_int(1, 2), rng.uniform_int(2, 4), rng.uniform_int(1, 9),
                            rng.uniform_int(1, 9));
            detail::run_case(r, {x}, [x](Tape<double>* t) { return softmax_channels(x, t); }, rng);
        }
        results.push_back(r);
    }

    {
        OpResult r{"bilinear_resize"};
        for (int i = 0; i < cases_per_op; ++i) {
            auto x = rand_t(rng.uniform_int(1, 2), rng.uniform_int(1, 3), rng.uniform_int(1, 9),
                            rng.uniform_int(1, 9));
            const std::int64_t oh = rng.uniform_int(1, 12), ow = rng.uniform_int(1, 12);
            detail::run_case(r, {x}, [x, oh, ow](Tape<double>* t) { return bilinear_resize(x, oh, ow, t); }, rng);
        }
        results.push_back(r);
    }

    {
        OpResult r{"cross_entropy_loss"};
        for (int i = 0; i < cases_per_op; ++i) {
            const std::int64_t n = rng.uniform_int(1, 2), h = rng.uniform_int(1, 9), w = rng.uniform_int(1, 9);
            auto logits = rand_t(n, 2, h, w);
            const auto labels = detail::random_labels(n, h, w, rng);
            std::optional<std::pair<double, double>> cw;
            if (i % 2 == 1) cw = std::make_pair(rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0));
            detail::run_scalar_case(r, {logits}, [logits, labels, cw](Tape<double>* t) {
                return cross_entropy_loss(logits, labels, cw, t);
            });
        }
        results.push_back(r);
    }

    {
        OpResult r{"sum_all"};
        for (int i = 0; i < cases_per_op; ++i) {
            auto x = rand_t(rng.uniform_int(1, 2), rng.uniform_int(1, 4), rng.uniform_int(1, 9),
                            rng.uniform_int(1, 9));
            detail::run_scalar_case(r, {x}, [x](Tape<double>* t) { return sum_all(x, t); });
        }
        results.push_back(r);
    }

    {
        // conv -> batch norm (training) -> relu -> resize -> cross entropy:
        // the same layer pattern the network trains through.
        OpResult r{"composite"};
        for (int i = 0; i < cases_per_op; ++i) {
            const std::int64_t h = rng.uniform_int(4, 8), w = rng.uniform_int(4, 8);
            auto x = rand_t(1, 3, h, w);
            auto wt = rand_t(2, 3, 3, 3);
            auto gamma = make_tensor<double>({1, 2, 1, 1});
            auto beta = make_tensor<double>({1, 2, 1, 1});
            for (auto& v : gamma->data) v = rng.uniform(0.5, 1.5);
            for (auto& v : beta->data) v = rng.uniform(-0.5, 0.5);
            auto rm = make_tensor<double>({1, 2, 1, 1});
            auto rv = bccseg::full_tensor<double>({1, 2, 1, 1}, 1.0);
            const std::int64_t oh = h + 2, ow = w + 1;
            const auto labels = detail::random_labels(1, oh, ow, rng);
            detail::run_scalar_case(r, {x, wt, gamma, beta}, [=](Tape<double>* t) {
                auto y = conv2d(x, wt, TensorPtr<double>{}, Conv2dSpec{1, 1, 1, 1}, t);
                y = relu(batch_norm(y, gamma, beta, rm, rv, true, 0.9, 1e-5, t), t);
                y = bilinear_resize(y, oh, ow, t);
                return cross_entropy_loss(y, labels, std::optional<std::pair<double, double>>{}, t);
            });
        }
        results.push_back(r);
    }

    return results;
}

}  // namespace gradsuite
