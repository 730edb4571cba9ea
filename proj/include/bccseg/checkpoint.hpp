#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bccseg/adam.hpp"
#include "bccseg/model.hpp"

namespace bccseg {

struct CheckpointError : std::runtime_error {
    enum class Kind { Io, BadMagic, UnsupportedVersion, Truncated, TableMismatch };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// Checkpoint binary layout (little-endian):
//   magic "BCCM" | u32 version=1 | u32 config length | config JSON (UTF-8)
//   u32 tensor count | per tensor: u16 name length, name, u8 rank (=4),
//   4 x u64 dims, raw float32 data.
// Optimizer moments ride along as extra tensors named adam.m.<param> /
// adam.v.<param> plus an adam.t scalar.
namespace detail {

constexpr char kMagic[4] = {'B', 'C', 'C', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void write_pod(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
void read_pod(std::istream& is, V& v, const char* what) {
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw CheckpointError(CheckpointError::Kind::Truncated, std::string("checkpoint truncated reading ") + what);
}

inline void write_tensor(std::ostream& os, const std::string& name, const Shape& shape, const float* data) {
    const auto name_len = static_cast<std::uint16_t>(name.size());
    write_pod(os, name_len);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const std::uint8_t rank = 4;
    write_pod(os, rank);
    for (const std::int64_t d : {shape.n, shape.c, shape.h, shape.w}) write_pod(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(shape.numel() * sizeof(float)));
}

struct RawTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline RawTensor read_tensor(std::istream& is) {
    RawTensor t;
    std::uint16_t name_len = 0;
    read_pod(is, name_len, "tensor name length");
    t.name.resize(name_len);
    is.read(t.name.data(), name_len);
    if (!is) throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated reading tensor name");
    std::uint8_t rank = 0;
    read_pod(is, rank, "tensor rank");
    if (rank != 4)
        throw CheckpointError(CheckpointError::Kind::TableMismatch,
                              "tensor " + t.name + " has rank " + std::to_string(rank) + ", expected 4");
    std::uint64_t dims[4];
    for (auto& d : dims) read_pod(is, d, "tensor dims");
    t.shape = Shape{static_cast<std::int64_t>(dims[0]), static_cast<std::int64_t>(dims[1]),
                    static_cast<std::int64_t>(dims[2]), static_cast<std::int64_t>(dims[3])};
    t.data.resize(static_cast<std::size_t>(t.shape.numel()));
    is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated reading tensor " + t.name);
    return t;
}

}  // namespace detail

inline void save_checkpoint(const Model<float>& model, const AdamState<float>* state, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError(CheckpointError::Kind::Io, "cannot open checkpoint for writing: " + path);

    os.write(detail::kMagic, 4);
    detail::write_pod(os, detail::kVersion);
    const std::string config = model.config().to_json().dump();
    detail::write_pod(os, static_cast<std::uint32_t>(config.size()));
    os.write(config.data(), static_cast<std::streamsize>(config.size()));

    const auto& tensors = model.tensors();
    std::uint32_t count = static_cast<std::uint32_t>(tensors.size());
    std::vector<std::string> trainable_names = model.trainable_names();
    if (state) count += static_cast<std::uint32_t>(2 * trainable_names.size()) + 1;
    detail::write_pod(os, count);
    for (const auto& nt : tensors) detail::write_tensor(os, nt.name, nt.tensor->shape, nt.tensor->data.data());
    if (state) {
        auto params = model.trainable_tensors();
        if (state->m.size() != params.size())
            throw CheckpointError(CheckpointError::Kind::TableMismatch, "adam state does not match model parameters");
        for (std::size_t i = 0; i < params.size(); ++i) {
            detail::write_tensor(os, "adam.m." + trainable_names[i], params[i]->shape, state->m[i].data());
            detail::write_tensor(os, "adam.v." + trainable_names[i], params[i]->shape, state->v[i].data());
        }
        const float t = static_cast<float>(state->t);
        detail::write_tensor(os, "adam.t", Shape{1, 1, 1, 1}, &t);
    }
    os.flush();
    if (!os) throw CheckpointError(CheckpointError::Kind::Io, "write failure on checkpoint: " + path);
}

// Rebuilds the model from the embedded config, then requires the tensor
// table to cover the model exactly (same names, same shapes). Returns the
// Adam state when moment tensors are present, otherwise a fresh one.
inline std::pair<std::unique_ptr<Model<float>>, AdamState<float>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError(CheckpointError::Kind::Io, "cannot open checkpoint: " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is) throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated reading magic");
    if (std::memcmp(magic, detail::kMagic, 4) != 0)
        throw CheckpointError(CheckpointError::Kind::BadMagic, "bad magic in checkpoint: " + path);
    std::uint32_t version = 0;
    detail::read_pod(is, version, "version");
    if (version != detail::kVersion)
        throw CheckpointError(CheckpointError::Kind::UnsupportedVersion,
                              "unsupported checkpoint version " + std::to_string(version));
    std::uint32_t config_len = 0;
    detail::read_pod(is, config_len, "config length");
    std::string config_str(config_len, '\0');
    is.read(config_str.data(), config_len);
    if (!is) throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated reading config");
    ModelConfig cfg;
    try {
        cfg = ModelConfig::from_json(nlohmann::json::parse(config_str));
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointError::Kind::TableMismatch, std::string("invalid config blob: ") + e.what());
    }

    std::uint32_t count = 0;
    detail::read_pod(is, count, "tensor count");
    std::vector<detail::RawTensor> raw;
    raw.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) raw.push_back(detail::read_tensor(is));
    if (is.peek() != std::char_traits<char>::eof())
        throw CheckpointError(CheckpointError::Kind::TableMismatch, "trailing bytes after tensor table");

    auto model = std::make_unique<Model<float>>(cfg);
    AdamState<float> state;
    state.init(model->trainable_tensors());

    std::size_t next = 0;
    auto take = [&](const std::string& name, const Shape& shape) -> const detail::RawTensor& {
        if (next >= raw.size())
            throw CheckpointError(CheckpointError::Kind::TableMismatch, "missing tensor " + name);
        const auto& t = raw[next++];
        if (t.name != name)
            throw CheckpointError(CheckpointError::Kind::TableMismatch,
                                  "tensor table mismatch: expected " + name + ", found " + t.name);
        if (!(t.shape == shape))
            throw CheckpointError(CheckpointError::Kind::TableMismatch,
                                  "tensor " + name + " has shape " + t.shape.str() + ", expected " + shape.str());
        return t;
    };

    for (const auto& nt : model->tensors()) nt.tensor->data = take(nt.name, nt.tensor->shape).data;
    if (next < raw.size()) {
        auto params = model->trainable_tensors();
        auto names = model->trainable_names();
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i] = take("adam.m." + names[i], params[i]->shape).data;
            state.v[i] = take("adam.v." + names[i], params[i]->shape).data;
        }
        state.t = static_cast<std::int64_t>(take("adam.t", Shape{1, 1, 1, 1}).data[0]);
    }
    if (next != raw.size())
        throw CheckpointError(CheckpointError::Kind::TableMismatch,
                              "unexpected extra tensors in checkpoint (" + std::to_string(raw.size() - next) + ")");
    return {std::move(model), std::move(state)};
}

}  // namespace bccseg
