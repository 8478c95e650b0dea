#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hetseg/errors.hpp"

namespace hetseg {

enum class LabelKind { background, anatomy, lesion };

inline std::string to_string(LabelKind k) {
    switch (k) {
        case LabelKind::background: return "background";
        case LabelKind::anatomy: return "anatomy";
        case LabelKind::lesion: return "lesion";
    }
    return "?";
}

inline LabelKind label_kind_from_string(const std::string& s) {
    if (s == "background") return LabelKind::background;
    if (s == "anatomy") return LabelKind::anatomy;
    if (s == "lesion") return LabelKind::lesion;
    throw ConfigError("unknown label kind: " + s);
}

struct LabelDef {
    int id = 0;       // index into the joint labelset, 0 = background
    std::string name;
    LabelKind kind = LabelKind::background;
};

enum class DatasetRole { anatomy, lesion };

inline std::string to_string(DatasetRole r) {
    return r == DatasetRole::anatomy ? "anatomy" : "lesion";
}

inline DatasetRole dataset_role_from_string(const std::string& s) {
    if (s == "anatomy") return DatasetRole::anatomy;
    if (s == "lesion") return DatasetRole::lesion;
    throw ConfigError("unknown dataset role: " + s);
}

/// One subject of a dataset: per-modality image files plus the mask file.
struct VolumeEntry {
    std::map<std::string, std::string> images;  // modality name -> path
    std::string mask;
};

/// Declaration of one non-background label of a dataset. `id` may be set
/// explicitly; unset ids are assigned deterministically at build time.
/// `file_id` is the value this label carries in the dataset's mask files
/// (defaults to the assigned joint id).
struct LabelDecl {
    std::string name;
    LabelKind kind = LabelKind::anatomy;
    std::optional<int> id;
    std::optional<int> file_id;
};

struct DatasetDecl {
    std::string name;
    std::vector<LabelDecl> labels;  // non-background only; background is implicit
    std::vector<std::string> modalities;
    DatasetRole role = DatasetRole::anatomy;
    std::vector<VolumeEntry> volume_entries;
};

/// A dataset with finalized joint-space label ids.
struct DatasetSpec {
    std::string name;
    std::vector<LabelDef> labels;   // non-background labels, joint ids
    std::vector<int> file_ids;      // mask-file value for labels[i]
    std::vector<std::string> modalities;
    DatasetRole role = DatasetRole::anatomy;
    std::vector<VolumeEntry> volume_entries;

    // {0} plus this dataset's non-background ids, ascending.
    std::vector<int> labelset() const {
        std::vector<int> ids{0};
        for (const auto& l : labels) ids.push_back(l.id);
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    std::vector<int> lesion_label_ids() const {
        std::vector<int> ids;
        for (const auto& l : labels)
            if (l.kind == LabelKind::lesion) ids.push_back(l.id);
        return ids;
    }
};

/// The joint labelset: union of all dataset labelsets plus background.
/// Immutable after build_label_space; safe for concurrent reads.
struct LabelSpace {
    std::string name = "labelspace";
    std::vector<LabelDef> labels;    // index == id, labels[0] is background
    std::vector<DatasetSpec> datasets;
    std::vector<std::string> shared_modalities;

    int num_classes() const { return static_cast<int>(labels.size()); }

    const DatasetSpec& dataset(const std::string& dataset_name) const {
        for (const auto& d : datasets)
            if (d.name == dataset_name) return d;
        throw NotFound("unknown dataset: " + dataset_name);
    }

    const LabelDef& label(int id) const {
        if (id < 0 || id >= num_classes())
            throw NotFound("label id out of range: " + std::to_string(id));
        return labels[static_cast<std::size_t>(id)];
    }

    std::optional<int> label_id_by_name(const std::string& label_name) const {
        for (const auto& l : labels)
            if (l.name == label_name) return l.id;
        return std::nullopt;
    }
};

enum class ChannelMode { single_model, per_dataset };

/// Builds the joint label space from dataset declarations.
///
/// Ids are assigned deterministically: background = 0, then non-background
/// labels in dataset-declaration order, then declaration order within a
/// dataset. Explicitly declared ids are honored and validated instead.
inline LabelSpace build_label_space(const std::vector<DatasetDecl>& decls) {
    if (decls.empty()) throw ConfigError("build_label_space requires at least one dataset");

    LabelSpace space;
    space.labels.push_back(LabelDef{0, "background", LabelKind::background});

    // First pass: collect explicit ids so auto-assignment can skip them.
    std::set<int> taken;
    for (const auto& d : decls) {
        for (const auto& l : d.labels) {
            if (l.kind == LabelKind::background)
                throw ConfigError("dataset '" + d.name +
                                  "': the background label is implicit and may not be declared");
            if (l.id) {
                if (*l.id <= 0)
                    throw ConfigError("dataset '" + d.name + "': explicit label id must be positive");
                if (!taken.insert(*l.id).second)
                    throw LabelCollision("label id " + std::to_string(*l.id) +
                                         " declared by more than one dataset");
            }
        }
    }

    std::set<std::string> names{"background"};
    int next_id = 1;
    auto next_free = [&]() {
        while (taken.count(next_id)) ++next_id;
        return next_id++;
    };

    for (const auto& d : decls) {
        DatasetSpec spec;
        spec.name = d.name;
        spec.modalities = d.modalities;
        spec.role = d.role;
        spec.volume_entries = d.volume_entries;
        for (const auto& l : d.labels) {
            if (!names.insert(l.name).second)
                throw LabelCollision("label name '" + l.name + "' declared by more than one dataset");
            if (d.role == DatasetRole::anatomy && l.kind == LabelKind::lesion)
                throw ConfigError("dataset '" + d.name +
                                  "' has role anatomy but declares lesion label '" + l.name + "'");
            LabelDef def{l.id ? *l.id : next_free(), l.name, l.kind};
            spec.labels.push_back(def);
            spec.file_ids.push_back(l.file_id ? *l.file_id : def.id);
            space.labels.push_back(def);
        }
        space.datasets.push_back(std::move(spec));
    }

    // Ids must cover 0..C-1 with no gaps; sort labels so index == id.
    std::sort(space.labels.begin(), space.labels.end(),
              [](const LabelDef& a, const LabelDef& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < space.labels.size(); ++i) {
        if (space.labels[i].id != static_cast<int>(i))
            throw ConfigError("label ids are not consecutive: expected " + std::to_string(i) +
                              ", got " + std::to_string(space.labels[i].id));
    }

    // Shared modalities: intersection of all lists, first dataset's order.
    for (const auto& m : decls.front().modalities) {
        bool everywhere = true;
        for (const auto& d : decls)
            if (std::find(d.modalities.begin(), d.modalities.end(), m) == d.modalities.end()) {
                everywhere = false;
                break;
            }
        if (everywhere) space.shared_modalities.push_back(m);
    }
    if (space.shared_modalities.empty())
        throw NoSharedModalities("datasets share no modality");

    return space;
}

/// The labels whose probability mass the adaptive loss sums for
/// lesion-background voxels: every label that is not a lesion label of the
/// named dataset. Always contains background and all anatomy labels.
inline std::vector<int> complement_set(const LabelSpace& space, const std::string& dataset_name) {
    const DatasetSpec& ds = space.dataset(dataset_name);
    std::set<int> lesioned;
    for (int id : ds.lesion_label_ids()) lesioned.insert(id);
    std::vector<int> out;
    for (const auto& l : space.labels)
        if (!lesioned.count(l.id)) out.push_back(l.id);
    return out;
}

/// Input channels for a model: the shared modality intersection for the
/// single joint model, or a dataset's full modality list for its own model.
inline std::vector<std::string> channel_plan(const LabelSpace& space, ChannelMode mode,
                                             const std::optional<std::string>& dataset_name = {}) {
    if (mode == ChannelMode::single_model) return space.shared_modalities;
    if (!dataset_name)
        throw ConfigError("channel_plan(per_dataset) requires a dataset name");
    return space.dataset(*dataset_name).modalities;
}

}  // namespace hetseg
