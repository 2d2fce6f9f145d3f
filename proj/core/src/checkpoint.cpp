#include "octofold/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "octofold/errors.hpp"
#include "octofold/rng.hpp"

namespace octofold {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'O', 'C', 'F', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeFloat32 = 0;

static_assert(sizeof(float) == 4, "float must be 4 bytes");

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename T>
void write_scalar(std::ofstream& out, T v) {
    write_bytes(out, &v, sizeof(T));
}

void read_bytes(std::ifstream& in, const std::string& path, void* data, std::size_t n) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw FormatError(path + ": truncated checkpoint");
    }
}

template <typename T>
T read_scalar(std::ifstream& in, const std::string& path) {
    T v{};
    read_bytes(in, path, &v, sizeof(T));
    return v;
}

void write_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
    if (name.size() > 0xffff) throw DimensionError("tensor name too long: " + name);
    write_scalar<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    write_bytes(out, name.data(), name.size());
    write_scalar<std::uint8_t>(out, kDtypeFloat32);
    write_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape().size()));
    for (std::int64_t d : t.shape()) write_scalar<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    write_bytes(out, t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
}

std::string format_shape(const std::vector<std::int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelGraph& model,
                     const std::optional<NormStats>& norm_stats, std::int64_t iteration,
                     double val_q8) {
    json meta;
    meta["architecture"] = json::parse(to_json_text(model.config));
    meta["norm_stats"] = norm_stats ? json::parse(to_json_text(*norm_stats)) : json();
    meta["iteration"] = iteration;
    meta["val_q8"] = val_q8;
    const std::string meta_text = meta.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFileError("cannot open for writing: " + path);
    write_bytes(out, kMagic, 4);
    write_scalar<std::uint32_t>(out, kVersion);
    write_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(meta_text.size()));
    write_bytes(out, meta_text.data(), meta_text.size());

    const std::uint32_t count =
        static_cast<std::uint32_t>(model.params.size() + model.state.size());
    write_scalar<std::uint32_t>(out, count);
    for (const auto& [name, value] : model.params) write_tensor(out, name, value);
    for (const auto& [name, value] : model.state) write_tensor(out, name, value);
    out.flush();
    if (!out) throw FormatError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open: " + path);

    char magic[4];
    read_bytes(in, path, magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError(path + ": bad magic, not a checkpoint file");
    }
    const auto version = read_scalar<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    }

    const auto meta_len = read_scalar<std::uint32_t>(in, path);
    std::string meta_text(meta_len, '\0');
    read_bytes(in, path, meta_text.data(), meta_len);

    json meta;
    try {
        meta = json::parse(meta_text);
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad metadata: " + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.model.config = architecture_from_json_text(meta.at("architecture").dump());
        if (!meta.at("norm_stats").is_null()) {
            ckpt.norm_stats = norm_stats_from_json_text(meta.at("norm_stats").dump());
        }
        ckpt.iteration = meta.at("iteration").get<std::int64_t>();
        ckpt.val_q8 = meta.at("val_q8").get<double>();
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad metadata: " + e.what());
    }

    // Materialize the schema from the architecture, then overwrite every
    // tensor from the file. Shapes and the name set must match exactly.
    RngStream scratch(0);
    ModelGraph built = build_model(ckpt.model.config, scratch);
    ckpt.model.params = std::move(built.params);
    ckpt.model.state = std::move(built.state);

    const auto tensor_count = read_scalar<std::uint32_t>(in, path);
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        const auto name_len = read_scalar<std::uint16_t>(in, path);
        std::string name(name_len, '\0');
        read_bytes(in, path, name.data(), name_len);
        const auto dtype = read_scalar<std::uint8_t>(in, path);
        if (dtype != kDtypeFloat32) {
            throw FormatError(path + ": unsupported dtype code " + std::to_string(dtype) +
                              " for tensor " + name);
        }
        const auto rank = read_scalar<std::uint8_t>(in, path);
        std::vector<std::int64_t> shape(rank);
        std::size_t count = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<std::int64_t>(read_scalar<std::uint64_t>(in, path));
            count *= static_cast<std::size_t>(shape[d]);
        }

        Tensor* dest = nullptr;
        if (ckpt.model.params.contains(name)) {
            dest = &ckpt.model.params.at(name);
        } else if (ckpt.model.state.contains(name)) {
            dest = &ckpt.model.state.at(name);
        } else {
            throw FormatError(path + ": tensor " + name + " not in architecture schema");
        }
        if (dest->shape() != shape) {
            throw FormatError(path + ": tensor " + name + " has shape " + format_shape(shape) +
                              ", architecture expects " + dest->shape_str());
        }
        if (!seen.insert(name).second) {
            throw FormatError(path + ": duplicate tensor " + name);
        }
        read_bytes(in, path, dest->data(), count * sizeof(float));
    }

    const std::size_t expected = ckpt.model.params.size() + ckpt.model.state.size();
    if (seen.size() != expected) {
        throw FormatError(path + ": checkpoint has " + std::to_string(seen.size()) +
                          " tensors, architecture expects " + std::to_string(expected));
    }
    return ckpt;
}

}  // namespace octofold
