#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hetseg/errors.hpp"
#include "hetseg/labelspace.hpp"

namespace hetseg {

inline constexpr int kManifestSchemaVersion = 1;

/// Serializes a dataset description to `<dir>/dataset.json`. Entry paths
/// are stored as given (normally relative to the manifest directory).
inline std::filesystem::path write_dataset_manifest(const DatasetSpec& spec,
                                                    const std::filesystem::path& dir) {
    nlohmann::ordered_json j;
    j["schema_version"] = kManifestSchemaVersion;
    j["name"] = spec.name;
    j["role"] = to_string(spec.role);
    j["modalities"] = spec.modalities;
    j["labels"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < spec.labels.size(); ++i) {
        nlohmann::ordered_json l;
        l["name"] = spec.labels[i].name;
        l["kind"] = to_string(spec.labels[i].kind);
        l["id"] = spec.labels[i].id;
        l["file_id"] = spec.file_ids[i];
        j["labels"].push_back(l);
    }
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : spec.volume_entries) {
        nlohmann::ordered_json entry;
        entry["images"] = e.images;
        entry["mask"] = e.mask;
        j["entries"].push_back(entry);
    }

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const std::filesystem::path path = dir / "dataset.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path.string());
    return path;
}

/// Loads a dataset.json manifest into a declaration. The stored joint ids
/// are deliberately dropped (labels are matched across datasets by name;
/// ids are reassigned by build_label_space); file ids are kept for mask
/// remapping. Entry paths are resolved against the manifest directory.
inline DatasetDecl read_dataset_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }

    try {
        if (j.at("schema_version").get<int>() != kManifestSchemaVersion)
            throw ConfigError(path.string() + ": unsupported schema_version");
        DatasetDecl decl;
        decl.name = j.at("name").get<std::string>();
        decl.role = dataset_role_from_string(j.at("role").get<std::string>());
        decl.modalities = j.at("modalities").get<std::vector<std::string>>();
        for (const auto& l : j.at("labels")) {
            LabelDecl d;
            d.name = l.at("name").get<std::string>();
            d.kind = label_kind_from_string(l.at("kind").get<std::string>());
            if (l.contains("file_id")) d.file_id = l.at("file_id").get<int>();
            decl.labels.push_back(std::move(d));
        }
        const std::filesystem::path dir = path.parent_path();
        for (const auto& e : j.at("entries")) {
            VolumeEntry entry;
            for (const auto& [mod, img] : e.at("images").items())
                entry.images[mod] = (dir / img.get<std::string>()).string();
            entry.mask = (dir / e.at("mask").get<std::string>()).string();
            decl.volume_entries.push_back(std::move(entry));
        }
        return decl;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace hetseg
