#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace bccseg {

// All network math runs on rank-4 arrays in (N, C, H, W) order, H before W.
struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t numel() const { return n * c * h * w; }

    bool operator==(const Shape& o) const = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

// Contiguous row-major tensor with an optional gradient buffer of the same
// shape. Shared ownership: autodiff closures alias the buffers they update.
template <typename T>
struct Tensor {
    Shape shape{};
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // zero-initialized when requires_grad is set

    Tensor() = default;
    explicit Tensor(Shape s, bool rg = false) : shape(s), data(static_cast<std::size_t>(s.numel()), T(0)) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw std::invalid_argument("tensor: negative dimension " + s.str());
        if (rg) set_requires_grad(true);
    }

    std::int64_t numel() const { return shape.numel(); }

    void set_requires_grad(bool rg) {
        requires_grad = rg;
        if (rg && grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), T(0));
    }

    std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return ((n * shape.c + c) * shape.h + h) * shape.w + w;
    }

    T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) { return data[static_cast<std::size_t>(index(n, c, h, w))]; }
    const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const { return data[static_cast<std::size_t>(index(n, c, h, w))]; }

    T* plane(std::int64_t n, std::int64_t c) { return data.data() + index(n, c, 0, 0); }
    const T* plane(std::int64_t n, std::int64_t c) const { return data.data() + index(n, c, 0, 0); }

    T* grad_plane(std::int64_t n, std::int64_t c) { return grad.data() + index(n, c, 0, 0); }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(Shape s, bool requires_grad = false) {
    return std::make_shared<Tensor<T>>(s, requires_grad);
}

template <typename T>
TensorPtr<T> full_tensor(Shape s, T value, bool requires_grad = false) {
    auto t = make_tensor<T>(s, requires_grad);
    t->data.assign(t->data.size(), value);
    return t;
}

// NaN/Inf anywhere in an op output is a contract violation, not something to
// propagate into later layers.
template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    for (const T v : t.data) {
        if (!std::isfinite(static_cast<double>(v)))
            throw std::runtime_error(std::string(op) + ": non-finite value in output tensor " + t.shape.str());
    }
}

// Ordered record of executed ops. Ops append their backward rule as they run,
// so inputs always precede consumers and one reverse sweep reaches every
// requires_grad tensor below the loss.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_rule) { nodes_.push_back(std::move(backward_rule)); }

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    void backward(const TensorPtr<T>& loss) {
        if (!loss || loss->numel() != 1)
            throw std::invalid_argument("backward: loss must be a scalar tensor");
        if (!loss->requires_grad)
            throw std::invalid_argument("backward: loss does not require grad (not produced on this tape?)");
        loss->grad[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

// Multiply-accumulate tally for the op-count report. Convolutions add their
// cost-model MAC count (padded taps included) when enabled.
namespace macs {

inline thread_local bool g_enabled = false;
inline thread_local std::uint64_t g_count = 0;

inline void enable(bool on) { g_enabled = on; }
inline bool enabled() { return g_enabled; }
inline void reset() { g_count = 0; }
inline std::uint64_t count() { return g_count; }
inline void add(std::uint64_t n) {
    if (g_enabled) g_count += n;
}

}  // namespace macs

}  // namespace bccseg
