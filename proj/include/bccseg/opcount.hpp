#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bccseg/model.hpp"

namespace bccseg {

// MAC accounting covers convolutions only (the padded-tap cost model:
// H'*W'*k^2*(C_in/groups)*C_out); batch-norm rows carry parameters but no
// MACs. Dilation never changes the count at a fixed output size.
struct OpCountRow {
    std::string name;
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct SeparableComparisonRow {
    std::string name;
    std::int64_t separable_macs = 0;
    std::int64_t regular_macs = 0;  // a full kxk conv with the same in/out channels and output size
    double ratio = 0.0;
    double predicted_ratio = 0.0;  // 1/C_out + 1/k^2
};

struct OpCountReport {
    std::vector<OpCountRow> rows;
    std::vector<SeparableComparisonRow> separable_vs_regular;
    std::int64_t total_params = 0;
    std::int64_t total_macs = 0;

    std::string table() const {
        std::size_t name_w = 10;
        for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
        std::ostringstream os;
        os << std::left << std::setw(static_cast<int>(name_w) + 2) << "layer" << std::right << std::setw(12)
           << "params" << std::setw(16) << "macs" << "\n";
        for (const auto& r : rows)
            os << std::left << std::setw(static_cast<int>(name_w) + 2) << r.name << std::right << std::setw(12)
               << r.params << std::setw(16) << r.macs << "\n";
        os << std::left << std::setw(static_cast<int>(name_w) + 2) << "total" << std::right << std::setw(12)
           << total_params << std::setw(16) << total_macs << "\n";
        if (!separable_vs_regular.empty()) {
            os << "\nseparable vs regular 3x3 (same channels, same output size)\n";
            std::size_t w = 10;
            for (const auto& r : separable_vs_regular) w = std::max(w, r.name.size());
            os << std::left << std::setw(static_cast<int>(w) + 2) << "layer" << std::right << std::setw(16)
               << "separable" << std::setw(16) << "regular" << std::setw(10) << "ratio" << std::setw(12)
               << "predicted" << "\n";
            for (const auto& r : separable_vs_regular)
                os << std::left << std::setw(static_cast<int>(w) + 2) << r.name << std::right << std::setw(16)
                   << r.separable_macs << std::setw(16) << r.regular_macs << std::setw(10) << std::fixed
                   << std::setprecision(4) << r.ratio << std::setw(12) << r.predicted_ratio << "\n"
                   << std::defaultfloat << std::setprecision(6);
        }
        return os.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json rows_json = nlohmann::json::array();
        for (const auto& r : rows) rows_json.push_back({{"name", r.name}, {"params", r.params}, {"macs", r.macs}});
        nlohmann::json cmp = nlohmann::json::array();
        for (const auto& r : separable_vs_regular)
            cmp.push_back({{"name", r.name},
                           {"separable_macs", r.separable_macs},
                           {"regular_macs", r.regular_macs},
                           {"ratio", r.ratio},
                           {"predicted_ratio", r.predicted_ratio}});
        return nlohmann::json{{"rows", rows_json},
                              {"separable_vs_regular", cmp},
                              {"total_params", total_params},
                              {"total_macs", total_macs}};
    }
};

namespace detail {

struct OpCountBuilder {
    OpCountReport report;

    void conv(const std::string& name, std::int64_t c_out, std::int64_t c_in_per_group, std::int64_t k,
              std::int64_t oh, std::int64_t ow, std::int64_t bias = 0) {
        const std::int64_t params = c_out * c_in_per_group * k * k + bias;
        const std::int64_t macs = oh * ow * k * k * c_in_per_group * c_out;
        report.rows.push_back({name, params, macs});
        report.total_params += params;
        report.total_macs += macs;
    }

    void bn(const std::string& name, std::int64_t c) {
        report.rows.push_back({name, 2 * c, 0});
        report.total_params += 2 * c;
    }

    // depthwise kxk then pointwise 1x1, both at the depthwise output size
    void separable(const std::string& base, std::int64_t c_in, std::int64_t c_out, std::int64_t oh,
                   std::int64_t ow) {
        conv(base + ".depthwise", c_in, 1, 3, oh, ow);
        conv(base + ".pointwise", c_out, c_in, 1, oh, ow);
        bn(base + ".bn", c_out);
        const std::int64_t sep = oh * ow * 9 * c_in + oh * ow * c_in * c_out;
        const std::int64_t reg = oh * ow * 9 * c_in * c_out;
        report.separable_vs_regular.push_back({base, sep, reg, static_cast<double>(sep) / static_cast<double>(reg),
                                               1.0 / static_cast<double>(c_out) + 1.0 / 9.0});
    }
};

}  // namespace detail

// Static layer-by-layer parameter and MAC enumeration for a (1,3,H,W) input.
// Totals must agree exactly with an instrumented forward pass.
inline OpCountReport count_ops(const ModelConfig& cfg, std::int64_t input_h, std::int64_t input_w) {
    cfg.validate();
    if (input_h < 16 || input_w < 16 || input_h % 16 != 0 || input_w % 16 != 0)
        throw std::invalid_argument("count_ops: input dims must be positive multiples of 16");

    detail::OpCountBuilder b;
    std::int64_t h = input_h / 2, w = input_w / 2;
    b.conv("stem.conv", cfg.stem_channels, 3, 3, h, w);
    b.bn("stem.bn", cfg.stem_channels);

    std::int64_t c_in = cfg.stem_channels;
    for (int k = 0; k < ModelConfig::kNumDownBlocks; ++k) {
        const std::string base = "block" + std::to_string(k + 1);
        const std::int64_t c_out = cfg.stage_channels(k);
        b.separable(base + ".sep1", c_in, c_out, h, w);
        h /= 2;
        w /= 2;
        b.separable(base + ".sep2", c_out, c_out, h, w);
        b.conv(base + ".skip", c_out, c_in, 1, h, w);
        b.bn(base + ".skip.bn", c_out);
        c_in = c_out;
    }
    for (int j = 0; j < cfg.middle_blocks; ++j) {
        const std::string base = "mid" + std::to_string(j + 1);
        b.separable(base + ".sep1", c_in, c_in, h, w);
        b.separable(base + ".sep2", c_in, c_in, h, w);
    }

    const std::int64_t enc = cfg.encoder_channels();
    const std::int64_t a = cfg.aspp_channels;
    b.conv("aspp.branch_1x1", a, enc, 1, h, w);
    b.bn("aspp.branch_1x1.bn", a);
    for (const int r : cfg.aspp_rates) {
        const std::string base = "aspp.branch_r" + std::to_string(r);
        b.conv(base, a, enc, 3, h, w);
        b.bn(base + ".bn", a);
    }
    b.conv("aspp.branch_pool", a, enc, 1, 1, 1);  // operates on the 1x1 pooled map
    b.bn("aspp.branch_pool.bn", a);
    b.conv("aspp.fuse", a, 5 * a, 1, h, w);
    b.bn("aspp.fuse.bn", a);
    b.conv("classifier", cfg.num_classes, a, 1, h, w, cfg.num_classes);
    return b.report;
}

}  // namespace bccseg
