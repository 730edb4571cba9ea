#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "bccseg/dataset.hpp"
#include "bccseg/image.hpp"
#include "bccseg/rng.hpp"

namespace bccseg {

// Axis-rotated ellipse with semi-axes a, b. Coordinates are pixel centers.
struct Ellipse {
    double cx = 0.0;
    double cy = 0.0;
    double a = 1.0;
    double b = 1.0;
    double theta = 0.0;
};

// Shared membership predicate: the generator rasterizes masks with it and the
// tests re-evaluate it per pixel, so the two can agree exactly.
inline bool point_in_ellipse(const Ellipse& e, double x, double y) {
    const double dx = x - e.cx;
    const double dy = y - e.cy;
    const double c = std::cos(e.theta);
    const double s = std::sin(e.theta);
    const double u = dx * c + dy * s;
    const double v = -dx * s + dy * c;
    return (u * u) / (e.a * e.a) + (v * v) / (e.b * e.b) <= 1.0;
}

namespace detail {

// Smoothstep-interpolated lattice noise in [0,1]; `cell` pixels per lattice step.
class ValueNoise {
public:
    ValueNoise(int w, int h, int cell, Xoshiro256StarStar& rng) : cell_(cell), gw_(w / cell + 2) {
        const int gh = h / cell + 2;
        grid_.resize(static_cast<std::size_t>(gw_) * gh);
        for (auto& g : grid_) g = rng.next_double();
    }

    double at(int x, int y) const {
        const double fx = static_cast<double>(x) / cell_;
        const double fy = static_cast<double>(y) / cell_;
        const int x0 = static_cast<int>(fx);
        const int y0 = static_cast<int>(fy);
        double tx = fx - x0;
        double ty = fy - y0;
        tx = tx * tx * (3.0 - 2.0 * tx);
        ty = ty * ty * (3.0 - 2.0 * ty);
        auto g = [&](int gx, int gy) { return grid_[static_cast<std::size_t>(gy) * gw_ + gx]; };
        const double top = g(x0, y0) * (1.0 - tx) + g(x0 + 1, y0) * tx;
        const double bot = g(x0, y0 + 1) * (1.0 - tx) + g(x0 + 1, y0 + 1) * tx;
        return top * (1.0 - ty) + bot * ty;
    }

private:
    int cell_;
    int gw_;
    std::vector<double> grid_;
};

inline std::uint64_t synth_record_seed(std::uint64_t dataset_seed, std::uint64_t index) {
    SplitMix64 sm(dataset_seed + 0x9E3779B97F4A7C15ull * index);
    return sm.next();
}

inline std::uint8_t clamp_round(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace detail

// Draws the ellipse layout for one positive record, advancing `rng`.
inline std::vector<Ellipse> synth_ellipses(Xoshiro256StarStar& rng, int width, int height) {
    const int n = rng.uniform_int(1, 4);
    const double min_dim = std::min(width, height);
    std::vector<Ellipse> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Ellipse e;
        e.cx = rng.uniform(0.15 * width, 0.85 * width);
        e.cy = rng.uniform(0.15 * height, 0.85 * height);
        // "Axis length" is the full axis; semi-axes are half that. The 15%
        // placement margin exceeds the 12.5% max semi-axis, so ellipses never
        // clip at the border and every positive mask is nonempty.
        e.a = 0.5 * rng.uniform(0.08, 0.25) * min_dim;
        e.b = 0.5 * rng.uniform(0.08, 0.25) * min_dim;
        e.theta = rng.uniform(0.0, detail::kPi);
        out.push_back(e);
    }
    return out;
}

// Ellipse layout a positive record at `record_seed` gets. Exposed so tests
// can reconstruct the analytic mask independently of the renderer.
inline std::vector<Ellipse> synth_ellipses(std::uint64_t record_seed, int width, int height) {
    Xoshiro256StarStar rng(record_seed);
    return synth_ellipses(rng, width, height);
}

// Renders one record: eosin-like pink value-noise background with light
// speckle; tumor ellipses in a basophilic blue-violet palette with denser
// speckle; mask = exact union of ellipse interiors.
inline ImageRecord synth_record(const std::string& id, bool positive, int width, int height,
                                std::uint64_t record_seed) {
    Xoshiro256StarStar rng(record_seed);
    std::vector<Ellipse> ellipses;
    if (positive) ellipses = synth_ellipses(rng, width, height);

    detail::ValueNoise coarse(width, height, 48, rng);
    detail::ValueNoise fine(width, height, 12, rng);

    ImageRecord rec;
    rec.id = id;
    rec.image = Image(height, width, 3);
    rec.mask = Image(height, width, 1);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            bool inside = false;
            for (const auto& e : ellipses)
                if (point_in_ellipse(e, x, y)) {
                    inside = true;
                    break;
                }
            const double v = 0.7 * coarse.at(x, y) + 0.3 * fine.at(x, y);
            const double spk = rng.uniform(-1.0, 1.0);
            double r, g, b, amp;
            if (inside) {
                r = 88.0 + 50.0 * v;
                g = 70.0 + 45.0 * v;
                b = 150.0 + 60.0 * v;
                amp = 14.0;
            } else {
                r = 216.0 + 30.0 * v;
                g = 160.0 + 40.0 * v;
                b = 186.0 + 40.0 * v;
                amp = 6.0;
            }
            rec.image.at(y, x, 0) = detail::clamp_round(r + amp * spk);
            rec.image.at(y, x, 1) = detail::clamp_round(g + amp * spk);
            rec.image.at(y, x, 2) = detail::clamp_round(b + amp * spk);
            rec.mask.at(y, x, 0) = inside ? 255 : 0;
        }
    }
    rec.label = mask_has_positive(rec.mask);
    return rec;
}

// Generates `count` records under out_dir (images/, masks/, manifest.csv).
// round(count * positive_fraction) records are positive; splits are assigned
// stratified at train_fraction. Byte-deterministic for a given seed.
inline Dataset synth_generate(const std::string& out_dir, int count, double positive_fraction = 0.48,
                              int width = 192, int height = 144, std::uint64_t seed = 42,
                              double train_fraction = 0.8) {
    if (count < 1) throw std::invalid_argument("synth_generate: count must be >= 1");
    if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0))
        throw std::invalid_argument("synth_generate: positive_fraction must be in [0, 1]");
    if (width < 16 || height < 16 || width % 16 != 0 || height % 16 != 0)
        throw std::invalid_argument("synth_generate: width and height must be positive multiples of 16");
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
        throw std::invalid_argument("synth_generate: train_fraction must be in [0, 1]");

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    fs::create_directories(fs::path(out_dir) / "masks", ec);
    if (ec) throw DatasetError(DatasetError::Kind::Io, "cannot create " + out_dir + ": " + ec.message());

    const auto n_pos = static_cast<int>(std::llround(count * positive_fraction));
    std::vector<int> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    Xoshiro256StarStar top(seed);
    top.shuffle(order);
    std::vector<char> positive(static_cast<std::size_t>(count), 0);
    for (int k = 0; k < n_pos; ++k) positive[static_cast<std::size_t>(order[k])] = 1;

    int pad = 4;
    for (int c = count - 1; c >= 10000; c /= 10) ++pad;

    Dataset ds;
    ds.root = out_dir;
    ds.manifest_path = (fs::path(out_dir) / "manifest.csv").string();
    for (int i = 0; i < count; ++i) {
        std::string num = std::to_string(i);
        std::string id = "synth_" + std::string(static_cast<std::size_t>(pad) - num.size(), '0') + num;
        ImageRecord rec = synth_record(id, positive[static_cast<std::size_t>(i)] != 0, width, height,
                                       detail::synth_record_seed(seed, static_cast<std::uint64_t>(i)));
        write_png((fs::path(out_dir) / "images" / (id + ".png")).string(), rec.image);
        write_png((fs::path(out_dir) / "masks" / (id + ".png")).string(), rec.mask);
        ds.records.push_back(std::move(rec));
    }
    detail::assign_splits_per_class(ds.records, train_fraction, seed);
    write_manifest(ds.manifest_path, ds.records);
    return ds;
}

}  // namespace bccseg
