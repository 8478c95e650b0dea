#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hetseg/errors.hpp"
#include "hetseg/network.hpp"
#include "hetseg/nifti.hpp"

namespace hetseg {

inline constexpr char kCheckpointMagic[8] = {'H', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A loaded checkpoint: the rebuilt model plus the context needed to feed it
/// (channel order and output label names).
struct Checkpoint {
    UNet3D model;
    std::vector<std::string> modalities;
    std::vector<std::string> label_names;  // index == class id
};

namespace detail {

template <typename T>
void put_raw(std::vector<std::uint8_t>& out, const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get_raw(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw TruncatedFile("checkpoint ends mid-field");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace detail

/// Writes the model as a little-endian container: magic, format version,
/// a JSON text block (model config, modalities, label names), then every
/// named parameter and batch-norm statistic as name, dims, float32 payload.
/// Optimizer state is deliberately excluded.
inline void save_checkpoint(const std::string& path, UNet3D& model,
                            const std::vector<std::string>& modalities,
                            const std::vector<std::string>& label_names) {
    const ModelConfig& cfg = model.config();
    nlohmann::ordered_json meta;
    meta["schema_version"] = 1;
    meta["model"] = {{"in_channels", cfg.in_channels},
                     {"num_classes", cfg.num_classes},
                     {"base_channels", cfg.base_channels},
                     {"depth", cfg.depth},
                     {"patch_size", {cfg.patch_size[0], cfg.patch_size[1], cfg.patch_size[2]}}};
    meta["modalities"] = modalities;
    meta["label_names"] = label_names;
    const std::string json = meta.dump();

    std::vector<std::uint8_t> bytes;
    bytes.insert(bytes.end(), kCheckpointMagic, kCheckpointMagic + 8);
    detail::put_raw(bytes, kCheckpointVersion);
    detail::put_raw(bytes, static_cast<std::uint32_t>(json.size()));
    bytes.insert(bytes.end(), json.begin(), json.end());

    const auto params = model.parameters();
    const auto bufs = model.buffers();
    detail::put_raw(bytes, static_cast<std::uint32_t>(params.size() + bufs.size()));
    const auto put_entry = [&](const std::string& name, const Tensor& t) {
        detail::put_raw(bytes, static_cast<std::uint16_t>(name.size()));
        bytes.insert(bytes.end(), name.begin(), name.end());
        detail::put_raw(bytes, static_cast<std::uint8_t>(t.ndim()));
        for (std::size_t d = 0; d < t.ndim(); ++d)
            detail::put_raw(bytes, t.dim(static_cast<std::int64_t>(d)));
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
        bytes.insert(bytes.end(), p, p + t.numel() * sizeof(float));
    };
    for (const auto& p : params) put_entry(p.name, *p.value);
    for (const auto& b : bufs) put_entry(b.name, *b.value);

    detail::write_file_bytes(path, bytes);
}

/// Rebuilds a model from a checkpoint file. Every parameter and statistic
/// recorded in the file must match a tensor of the same name and shape.
inline Checkpoint load_checkpoint(const std::string& path) {
    const std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
    std::size_t pos = 0;
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw FormatError(path + " is not a checkpoint file");
    pos = 8;
    const auto version = detail::get_raw<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    const auto json_len = detail::get_raw<std::uint32_t>(bytes, pos);
    if (pos + json_len > bytes.size()) throw TruncatedFile(path + " ends inside the header");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + json_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad checkpoint header: " + e.what());
    }
    pos += json_len;

    Checkpoint ckpt;
    try {
        ModelConfig cfg;
        cfg.in_channels = meta.at("model").at("in_channels").get<int>();
        cfg.num_classes = meta.at("model").at("num_classes").get<int>();
        cfg.base_channels = meta.at("model").at("base_channels").get<int>();
        cfg.depth = meta.at("model").at("depth").get<int>();
        const auto ps = meta.at("model").at("patch_size").get<std::vector<std::int64_t>>();
        if (ps.size() != 3) throw FormatError(path + ": patch_size must have 3 entries");
        cfg.patch_size = {ps[0], ps[1], ps[2]};
        ckpt.model = UNet3D(cfg, 0);
        ckpt.modalities = meta.at("modalities").get<std::vector<std::string>>();
        ckpt.label_names = meta.at("label_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad checkpoint header: " + e.what());
    }

    std::map<std::string, Tensor*> slots;
    for (auto& p : ckpt.model.parameters()) slots[p.name] = p.value;
    for (auto& b : ckpt.model.buffers()) slots[b.name] = b.value;

    const auto n_entries = detail::get_raw<std::uint32_t>(bytes, pos);
    if (n_entries != slots.size())
        throw FormatError(path + ": expected " + std::to_string(slots.size()) + " tensors, found " +
                          std::to_string(n_entries));
    for (std::uint32_t e = 0; e < n_entries; ++e) {
        const auto name_len = detail::get_raw<std::uint16_t>(bytes, pos);
        if (pos + name_len > bytes.size()) throw TruncatedFile(path + " ends inside a tensor name");
        const std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                               bytes.begin() + static_cast<std::ptrdiff_t>(pos + name_len));
        pos += name_len;
        const auto ndim = detail::get_raw<std::uint8_t>(bytes, pos);
        std::vector<std::int64_t> dims;
        std::int64_t numel = 1;
        for (int d = 0; d < ndim; ++d) {
            dims.push_back(detail::get_raw<std::int64_t>(bytes, pos));
            numel *= dims.back();
        }
        const auto it = slots.find(name);
        if (it == slots.end()) throw FormatError(path + ": unknown tensor '" + name + "'");
        Tensor& t = *it->second;
        if (dims != t.shape())
            throw FormatError(path + ": tensor '" + name + "' has unexpected shape");
        if (pos + static_cast<std::size_t>(numel) * sizeof(float) > bytes.size())
            throw TruncatedFile(path + " ends inside tensor '" + name + "'");
        std::memcpy(t.data(), bytes.data() + pos, static_cast<std::size_t>(numel) * sizeof(float));
        pos += static_cast<std::size_t>(numel) * sizeof(float);
        slots.erase(it);
    }
    if (!slots.empty())
        throw FormatError(path + ": missing tensor '" + slots.begin()->first + "'");
    return ckpt;
}

}  // namespace hetseg
