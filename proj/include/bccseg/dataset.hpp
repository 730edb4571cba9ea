#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "bccseg/image.hpp"
#include "bccseg/ops.hpp"
#include "bccseg/rng.hpp"
#include "bccseg/tensor.hpp"

namespace bccseg {

enum class Split { Train, Test };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

class DatasetError : public std::runtime_error {
public:
    enum class Kind { MissingFile, DimMismatch, NonBinaryMask, DuplicateId, LabelMismatch, BadManifest, Io };

    DatasetError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// One image/mask pair. Mask pixels are exactly 0 or 255; 255 marks tumor.
struct ImageRecord {
    std::string id;
    Image image;  // 8-bit RGB
    Image mask;   // 8-bit grayscale, values in {0, 255}
    bool label = false;
    Split split = Split::Train;
};

struct Dataset {
    std::vector<ImageRecord> records;
    std::string manifest_path;
    std::string root;

    // Records belonging to one split, same ordering.
    Dataset subset(Split s) const {
        Dataset out;
        out.manifest_path = manifest_path;
        out.root = root;
        for (const auto& r : records)
            if (r.split == s) out.records.push_back(r);
        return out;
    }
};

inline bool mask_has_positive(const Image& mask) {
    for (std::uint8_t p : mask.pix)
        if (p != 0) return true;
    return false;
}

inline void validate_mask_binary(const Image& mask, const std::string& what) {
    for (std::uint8_t p : mask.pix)
        if (p != 0 && p != 255)
            throw DatasetError(DatasetError::Kind::NonBinaryMask,
                               "non-binary mask: " + what + " contains value " + std::to_string(int(p)));
}

// Mask image {0,255} -> label grid {0,1}, shape (1,H,W).
inline LabelMap mask_to_labels(const Image& mask) {
    if (mask.channels != 1) throw std::invalid_argument("mask_to_labels: expected grayscale mask");
    LabelMap out;
    out.n = 1;
    out.h = mask.h;
    out.w = mask.w;
    out.v.resize(static_cast<std::size_t>(mask.h) * mask.w);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = mask.pix[i] != 0 ? 1 : 0;
    return out;
}

inline Image labels_to_mask(const LabelMap& labels, std::int64_t index = 0) {
    if (index < 0 || index >= labels.n) throw std::invalid_argument("labels_to_mask: index out of range");
    Image out(static_cast<int>(labels.h), static_cast<int>(labels.w), 1);
    const std::uint8_t* src = labels.v.data() + static_cast<std::size_t>(index) * labels.h * labels.w;
    for (std::size_t i = 0; i < out.pix.size(); ++i) out.pix[i] = src[i] ? 255 : 0;
    return out;
}

// x/127.5 - 1: maps [0,255] to [-1,1]. Returns (1,3,H,W).
inline TensorPtr<float> normalize(const Image& image) {
    if (image.channels != 3) throw std::invalid_argument("normalize: expected a 3-channel image");
    auto out = make_tensor<float>(Shape{1, 3, image.h, image.w});
    const std::int64_t hw = static_cast<std::int64_t>(image.h) * image.w;
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x)
            for (int c = 0; c < 3; ++c)
                out->data[static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(y) * image.w + x] =
                    static_cast<float>(image.at(y, x, c)) / 127.5f - 1.0f;
    return out;
}

namespace detail {

// Nearest-neighbor index map with the same half-pixel centering as
// bilinear_resize: src = floor((dst + 0.5) * in/out), clamped.
inline std::vector<int> nearest_index(int in_dim, int out_dim) {
    std::vector<int> idx(static_cast<std::size_t>(out_dim));
    const double scale = static_cast<double>(in_dim) / out_dim;
    for (int d = 0; d < out_dim; ++d) {
        int s = static_cast<int>(std::floor((d + 0.5) * scale));
        idx[d] = std::clamp(s, 0, in_dim - 1);
    }
    return idx;
}

inline std::uint8_t round_to_u8(float v) {
    long r = std::lround(v);
    return static_cast<std::uint8_t>(std::clamp(r, 0L, 255L));
}

}  // namespace detail

// Bilinear for the image (rounded back to 8-bit), nearest-neighbor for the
// mask so it stays binary; the label is recomputed from the resized mask.
inline ImageRecord resize_record(const ImageRecord& record, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_record: target dims must be >= 1");
    ImageRecord out;
    out.id = record.id;
    out.split = record.split;

    auto src = make_tensor<float>(Shape{1, record.image.channels, record.image.h, record.image.w});
    const std::int64_t hw = static_cast<std::int64_t>(record.image.h) * record.image.w;
    for (int y = 0; y < record.image.h; ++y)
        for (int x = 0; x < record.image.w; ++x)
            for (int c = 0; c < record.image.channels; ++c)
                src->data[static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(y) * record.image.w + x] =
                    static_cast<float>(record.image.at(y, x, c));
    auto resized = bilinear_resize(src, out_h, out_w);
    out.image = Image(out_h, out_w, record.image.channels);
    const std::int64_t ohw = static_cast<std::int64_t>(out_h) * out_w;
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < record.image.channels; ++c)
                out.image.at(y, x, c) = detail::round_to_u8(
                    resized->data[static_cast<std::size_t>(c) * ohw + static_cast<std::size_t>(y) * out_w + x]);

    const auto ys = detail::nearest_index(record.mask.h, out_h);
    const auto xs = detail::nearest_index(record.mask.w, out_w);
    out.mask = Image(out_h, out_w, 1);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) out.mask.at(y, x, 0) = record.mask.at(ys[y], xs[x], 0);

    out.label = mask_has_positive(out.mask);
    return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

struct ManifestRow {
    std::string id;
    bool label;
    Split split;
};

inline std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError(DatasetError::Kind::MissingFile, "missing manifest: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DatasetError(DatasetError::Kind::BadManifest, "empty manifest: " + path);
    if (split_csv_line(line) != std::vector<std::string>{"id", "label", "split"})
        throw DatasetError(DatasetError::Kind::BadManifest, "manifest header must be 'id,label,split': " + path);
    std::vector<ManifestRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 3)
            throw DatasetError(DatasetError::Kind::BadManifest,
                               "manifest line " + std::to_string(line_no) + ": expected 3 fields");
        ManifestRow row;
        row.id = fields[0];
        if (row.id.empty())
            throw DatasetError(DatasetError::Kind::BadManifest,
                               "manifest line " + std::to_string(line_no) + ": empty id");
        if (fields[1] == "0")
            row.label = false;
        else if (fields[1] == "1")
            row.label = true;
        else
            throw DatasetError(DatasetError::Kind::BadManifest,
                               "manifest line " + std::to_string(line_no) + ": label must be 0 or 1");
        if (fields[2] == "train")
            row.split = Split::Train;
        else if (fields[2] == "test")
            row.split = Split::Test;
        else
            throw DatasetError(DatasetError::Kind::BadManifest,
                               "manifest line " + std::to_string(line_no) + ": split must be train or test");
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace detail

inline void write_manifest(const std::string& path, const std::vector<ImageRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DatasetError(DatasetError::Kind::Io, "cannot write manifest: " + path);
    out << "id,label,split\n";
    for (const auto& r : records) out << r.id << ',' << (r.label ? 1 : 0) << ',' << split_name(r.split) << '\n';
    if (!out) throw DatasetError(DatasetError::Kind::Io, "write failed: " + path);
}

// Loads root/manifest.csv plus root/images/<id>.png and root/masks/<id>.png,
// validating every ImageRecord invariant. Records are ordered by id.
inline Dataset load_dataset(const std::string& root_dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.root = root_dir;
    ds.manifest_path = (fs::path(root_dir) / "manifest.csv").string();
    auto rows = detail::read_manifest(ds.manifest_path);

    std::unordered_set<std::string> seen;
    for (const auto& row : rows)
        if (!seen.insert(row.id).second)
            throw DatasetError(DatasetError::Kind::DuplicateId, "duplicate id in manifest: " + row.id);

    std::sort(rows.begin(), rows.end(),
              [](const detail::ManifestRow& a, const detail::ManifestRow& b) { return a.id < b.id; });

    for (const auto& row : rows) {
        const std::string image_path = (fs::path(root_dir) / "images" / (row.id + ".png")).string();
        const std::string mask_path = (fs::path(root_dir) / "masks" / (row.id + ".png")).string();
        if (!fs::exists(image_path))
            throw DatasetError(DatasetError::Kind::MissingFile, "missing image file: " + image_path);
        if (!fs::exists(mask_path))
            throw DatasetError(DatasetError::Kind::MissingFile, "missing mask file: " + mask_path);

        ImageRecord rec;
        rec.id = row.id;
        rec.split = row.split;
        try {
            rec.image = read_png(image_path);
            rec.mask = read_png(mask_path);
        } catch (const std::runtime_error& e) {
            throw DatasetError(DatasetError::Kind::Io, e.what());
        }
        if (rec.image.channels != 3)
            throw DatasetError(DatasetError::Kind::Io, "image is not RGB: " + image_path);
        if (rec.mask.channels != 1)
            throw DatasetError(DatasetError::Kind::Io, "mask is not grayscale: " + mask_path);
        if (rec.image.h != rec.mask.h || rec.image.w != rec.mask.w)
            throw DatasetError(DatasetError::Kind::DimMismatch,
                               "dim mismatch between " + image_path + " (" + std::to_string(rec.image.w) + "x" +
                                   std::to_string(rec.image.h) + ") and " + mask_path + " (" +
                                   std::to_string(rec.mask.w) + "x" + std::to_string(rec.mask.h) + ")");
        validate_mask_binary(rec.mask, mask_path);
        rec.label = mask_has_positive(rec.mask);
        if (rec.label != row.label)
            throw DatasetError(DatasetError::Kind::LabelMismatch,
                               "manifest label disagrees with mask content for id " + row.id);
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

namespace detail {

// Assigns llround(n_class * fraction) records of each present class to the
// train split, shuffling within class first. Used by both stratified_split
// (which additionally demands both classes) and the synthetic generator.
inline void assign_splits_per_class(std::vector<ImageRecord>& records, double train_fraction,
                                    std::uint64_t seed) {
    Xoshiro256StarStar rng(seed);
    for (bool cls : {true, false}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < records.size(); ++i)
            if (records[i].label == cls) idx.push_back(i);
        if (idx.empty()) continue;
        rng.shuffle(idx);
        const auto n_train = static_cast<std::size_t>(
            std::llround(static_cast<double>(idx.size()) * train_fraction));
        for (std::size_t k = 0; k < idx.size(); ++k)
            records[idx[k]].split = k < n_train ? Split::Train : Split::Test;
    }
}

}  // namespace detail

// Shuffles within each class and assigns round(n_class * train_fraction)
// records to train, so both splits keep the dataset's class proportions.
inline Dataset stratified_split(Dataset dataset, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("stratified_split: train_fraction must be in (0, 1)");
    std::size_t n_pos = 0;
    for (const auto& r : dataset.records) n_pos += r.label ? 1 : 0;
    if (n_pos == 0 || n_pos == dataset.records.size())
        throw std::invalid_argument("stratified_split: both classes must be present");
    detail::assign_splits_per_class(dataset.records, train_fraction, seed);
    return dataset;
}

}  // namespace bccseg
