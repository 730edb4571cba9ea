#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "bccseg/ops.hpp"
#include "bccseg/rng.hpp"
#include "bccseg/tensor.hpp"

namespace bccseg {

// Segmentation network configuration. The encoder always has a stride-2 stem
// plus exactly three stride-2 separable residual stages, so the output stride
// is fixed at 16; block_channels gives the per-stage widths and repeats its
// last entry when shorter than three.
struct ModelConfig {
    int num_classes = 2;
    int output_stride = 16;
    std::array<int, 3> aspp_rates{6, 12, 18};
    int stem_channels = 16;
    std::vector<int> block_channels{32, 64, 128};
    int middle_blocks = 2;
    int aspp_channels = 64;
    std::uint64_t seed = 42;

    static constexpr int kNumDownBlocks = 3;

    void validate() const {
        if (num_classes < 2) throw std::invalid_argument("model config: num_classes must be >= 2");
        if (output_stride != 16) throw std::invalid_argument("model config: output_stride 16 is the only supported value");
        if (aspp_rates[0] <= 0 || aspp_rates[0] >= aspp_rates[1] || aspp_rates[1] >= aspp_rates[2])
            throw std::invalid_argument("model config: aspp_rates must be strictly positive and strictly increasing");
        if (stem_channels < 1) throw std::invalid_argument("model config: stem_channels must be >= 1");
        if (block_channels.empty() || block_channels.size() > kNumDownBlocks)
            throw std::invalid_argument("model config: block_channels must have 1 to 3 entries");
        for (int c : block_channels)
            if (c < 1) throw std::invalid_argument("model config: block channel counts must be >= 1");
        if (middle_blocks < 0) throw std::invalid_argument("model config: middle_blocks must be >= 0");
        if (aspp_channels < 1) throw std::invalid_argument("model config: aspp_channels must be >= 1");
    }

    int stage_channels(int stage) const {
        const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(stage), block_channels.size() - 1);
        return block_channels[i];
    }

    int encoder_channels() const { return stage_channels(kNumDownBlocks - 1); }

    nlohmann::json to_json() const {
        return nlohmann::json{{"num_classes", num_classes},
                              {"output_stride", output_stride},
                              {"aspp_rates", aspp_rates},
                              {"stem_channels", stem_channels},
                              {"block_channels", block_channels},
                              {"middle_blocks", middle_blocks},
                              {"aspp_channels", aspp_channels},
                              {"seed", seed}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.num_classes = j.at("num_classes").get<int>();
        c.output_stride = j.at("output_stride").get<int>();
        c.aspp_rates = j.at("aspp_rates").get<std::array<int, 3>>();
        c.stem_channels = j.at("stem_channels").get<int>();
        c.block_channels = j.at("block_channels").get<std::vector<int>>();
        c.middle_blocks = j.at("middle_blocks").get<int>();
        c.aspp_channels = j.at("aspp_channels").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.validate();
        return c;
    }
};

template <typename T>
struct NamedTensor {
    std::string name;
    TensorPtr<T> tensor;
    bool trainable = false;
};

// Scaled-down DeepLab-v3 pattern: separable-residual encoder at output stride
// 16, five-branch ASPP head at rates (r1,r2,r3), 1x1 classifier, bilinear
// upsample back to the input size.
template <typename T>
class Model {
public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        build();
        init_parameters();
    }

    const ModelConfig& config() const { return cfg_; }

    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }

    const std::vector<NamedTensor<T>>& tensors() const { return tensors_; }

    std::vector<TensorPtr<T>> trainable_tensors() const {
        std::vector<TensorPtr<T>> out;
        for (const auto& nt : tensors_)
            if (nt.trainable) out.push_back(nt.tensor);
        return out;
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& nt : tensors_)
            if (nt.trainable) out.push_back(nt.name);
        return out;
    }

    TensorPtr<T> tensor(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("model: no tensor named " + name);
        return tensors_[it->second].tensor;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& nt : tensors_)
            if (nt.trainable) n += nt.tensor->numel();
        return n;
    }

    TensorPtr<T> encoder_forward(const TensorPtr<T>& x, Tape<T>* tape = nullptr) {
        if (x->shape.c != 3)
            throw std::invalid_argument("encoder: input must have 3 channels, got " + x->shape.str());
        if (x->shape.h % 16 != 0)
            throw std::invalid_argument("encoder: input height " + std::to_string(x->shape.h) +
                                        " is not divisible by 16");
        if (x->shape.w % 16 != 0)
            throw std::invalid_argument("encoder: input width " + std::to_string(x->shape.w) +
                                        " is not divisible by 16");
        auto t = conv_bn_relu(x, "stem.conv.weight", "stem.bn", Conv2dSpec{2, 1, 1, 1}, tape);
        int c_in = cfg_.stem_channels;
        for (int k = 0; k < ModelConfig::kNumDownBlocks; ++k) {
            const int c_out = cfg_.stage_channels(k);
            t = down_block(t, "block" + std::to_string(k + 1), tape);
            c_in = c_out;
        }
        (void)c_in;
        for (int j = 0; j < cfg_.middle_blocks; ++j) t = mid_block(t, "mid" + std::to_string(j + 1), tape);
        return t;
    }

    TensorPtr<T> aspp_forward(const TensorPtr<T>& features, Tape<T>* tape = nullptr) {
        std::vector<TensorPtr<T>> branches;
        branches.push_back(conv_bn_relu(features, "aspp.branch_1x1.weight", "aspp.branch_1x1.bn", Conv2dSpec{}, tape));
        for (const int r : cfg_.aspp_rates) {
            const std::string base = "aspp.branch_r" + std::to_string(r);
            branches.push_back(conv_bn_relu(features, base + ".weight", base + ".bn", Conv2dSpec{1, r, r, 1}, tape));
        }
        auto pooled = global_avg_pool(features, tape);
        pooled = conv_bn_relu(pooled, "aspp.branch_pool.weight", "aspp.branch_pool.bn", Conv2dSpec{}, tape);
        branches.push_back(bilinear_resize(pooled, features->shape.h, features->shape.w, tape));
        auto cat = concat_channels(branches, tape);
        return conv_bn_relu(cat, "aspp.fuse.weight", "aspp.fuse.bn", Conv2dSpec{}, tape);
    }

    TensorPtr<T> forward(const TensorPtr<T>& x, Tape<T>* tape = nullptr) {
        auto features = encoder_forward(x, tape);
        auto head = aspp_forward(features, tape);
        auto logits = conv2d(head, tensor("classifier.weight"), tensor("classifier.bias"), Conv2dSpec{}, tape);
        return bilinear_resize(logits, x->shape.h, x->shape.w, tape);
    }

private:
    void add_conv(const std::string& name, std::int64_t c_out, std::int64_t c_in, std::int64_t k) {
        register_tensor(name, make_tensor<T>({c_out, c_in, k, k}), true);
    }

    void add_bias(const std::string& name, std::int64_t c) {
        register_tensor(name, make_tensor<T>({1, c, 1, 1}), true);
    }

    void add_bn(const std::string& base, std::int64_t c) {
        register_tensor(base + ".gamma", make_tensor<T>({1, c, 1, 1}), true);
        register_tensor(base + ".beta", make_tensor<T>({1, c, 1, 1}), true);
        register_tensor(base + ".running_mean", make_tensor<T>({1, c, 1, 1}), false);
        register_tensor(base + ".running_var", make_tensor<T>({1, c, 1, 1}), false);
    }

    void add_separable(const std::string& base, std::int64_t c_in, std::int64_t c_out) {
        register_tensor(base + ".depthwise.weight", make_tensor<T>({c_in, 1, 3, 3}), true);
        register_tensor(base + ".pointwise.weight", make_tensor<T>({c_out, c_in, 1, 1}), true);
        add_bn(base + ".bn", c_out);
    }

    void register_tensor(const std::string& name, TensorPtr<T> t, bool trainable) {
        if (trainable) t->set_requires_grad(true);
        index_[name] = tensors_.size();
        tensors_.push_back(NamedTensor<T>{name, std::move(t), trainable});
    }

    void build() {
        add_conv("stem.conv.weight", cfg_.stem_channels, 3, 3);
        add_bn("stem.bn", cfg_.stem_channels);
        int c_in = cfg_.stem_channels;
        for (int k = 0; k < ModelConfig::kNumDownBlocks; ++k) {
            const std::string base = "block" + std::to_string(k + 1);
            const int c_out = cfg_.stage_channels(k);
            add_separable(base + ".sep1", c_in, c_out);
            add_separable(base + ".sep2", c_out, c_out);
            add_conv(base + ".skip.weight", c_out, c_in, 1);
            add_bn(base + ".skip.bn", c_out);
            c_in = c_out;
        }
        for (int j = 0; j < cfg_.middle_blocks; ++j) {
            const std::string base = "mid" + std::to_string(j + 1);
            add_separable(base + ".sep1", c_in, c_in);
            add_separable(base + ".sep2", c_in, c_in);
        }
        const int enc = cfg_.encoder_channels();
        const int a = cfg_.aspp_channels;
        add_conv("aspp.branch_1x1.weight", a, enc, 1);
        add_bn("aspp.branch_1x1.bn", a);
        for (const int r : cfg_.aspp_rates) {
            const std::string base = "aspp.branch_r" + std::to_string(r);
            add_conv(base + ".weight", a, enc, 3);
            add_bn(base + ".bn", a);
        }
        add_conv("aspp.branch_pool.weight", a, enc, 1);
        add_bn("aspp.branch_pool.bn", a);
        add_conv("aspp.fuse.weight", a, 5 * a, 1);
        add_bn("aspp.fuse.bn", a);
        add_conv("classifier.weight", cfg_.num_classes, a, 1);
        add_bias("classifier.bias", cfg_.num_classes);
    }

    // He-uniform conv weights (bound sqrt(6/fan_in)) drawn in registration
    // order from one seeded stream; BN gamma 1, beta 0, running stats (0, 1);
    // biases 0. Same config + seed always produces identical bytes.
    void init_parameters() {
        Xoshiro256StarStar rng(cfg_.seed);
        for (auto& nt : tensors_) {
            auto& t = *nt.tensor;
            if (nt.name.ends_with(".weight") && nt.trainable) {
                const double fan_in = static_cast<double>(t.shape.c * t.shape.h * t.shape.w);
                const double bound = std::sqrt(6.0 / fan_in);
                for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
            } else if (nt.name.ends_with(".gamma") || nt.name.ends_with(".running_var")) {
                t.data.assign(t.data.size(), T(1));
            }
            // beta, running_mean and biases stay zero.
        }
    }

    TensorPtr<T> bn(const TensorPtr<T>& x, const std::string& base, Tape<T>* tape) {
        return batch_norm(x, tensor(base + ".gamma"), tensor(base + ".beta"), tensor(base + ".running_mean"),
                          tensor(base + ".running_var"), training_, T(0.9), T(1e-5), tape);
    }

    TensorPtr<T> conv_bn_relu(const TensorPtr<T>& x, const std::string& weight, const std::string& bn_base,
                              const Conv2dSpec& sp, Tape<T>* tape) {
        return relu(bn(conv2d(x, tensor(weight), TensorPtr<T>{}, sp, tape), bn_base, tape), tape);
    }

    TensorPtr<T> separable(const TensorPtr<T>& x, const std::string& base, int stride, Tape<T>* tape) {
        return bn(depthwise_separable_conv(x, tensor(base + ".depthwise.weight"), tensor(base + ".pointwise.weight"),
                                           stride, 1, 1, tape),
                  base + ".bn", tape);
    }

    TensorPtr<T> down_block(const TensorPtr<T>& x, const std::string& base, Tape<T>* tape) {
        auto main = relu(separable(x, base + ".sep1", 1, tape), tape);
        main = separable(main, base + ".sep2", 2, tape);
        auto skip = bn(conv2d(x, tensor(base + ".skip.weight"), TensorPtr<T>{}, Conv2dSpec{2, 0, 1, 1}, tape),
                       base + ".skip.bn", tape);
        return relu(add(main, skip, tape), tape);
    }

    TensorPtr<T> mid_block(const TensorPtr<T>& x, const std::string& base, Tape<T>* tape) {
        auto main = relu(separable(x, base + ".sep1", 1, tape), tape);
        main = separable(main, base + ".sep2", 1, tape);
        return relu(add(x, main, tape), tape);
    }

    ModelConfig cfg_;
    std::vector<NamedTensor<T>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
    bool training_ = true;
};

template <typename T>
struct Prediction {
    TensorPtr<T> prob;  // (N,1,H,W) tumor-class probability
    LabelMap mask;      // argmax, ties resolved to background
};

// Eval-mode inference: softmax tumor probability plus the binary mask used by
// the slide-level rule. Tie logits map to background.
template <typename T>
Prediction<T> predict_mask(Model<T>& model, const TensorPtr<T>& input) {
    if (model.training()) throw std::logic_error("predict_mask: model must be in eval mode");
    auto logits = model.forward(input);
    if (logits->shape.c != 2) throw std::invalid_argument("predict_mask: expected 2-class logits");
    auto probs = softmax_channels(logits);
    const Shape s = logits->shape;
    Prediction<T> out;
    out.prob = make_tensor<T>({s.n, 1, s.h, s.w});
    out.mask = LabelMap{s.n, s.h, s.w, std::vector<std::uint8_t>(static_cast<std::size_t>(s.n * s.h * s.w))};
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        const T* l0 = logits->plane(n, 0);
        const T* l1 = logits->plane(n, 1);
        const T* p1 = probs->plane(n, 1);
        T* dst = out.prob->plane(n, 0);
        std::uint8_t* m = out.mask.v.data() + n * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            dst[i] = p1[i];
            m[i] = l1[i] > l0[i] ? 1 : 0;
        }
    }
    return out;
}

}  // namespace bccseg
