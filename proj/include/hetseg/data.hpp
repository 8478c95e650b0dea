#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "hetseg/errors.hpp"
#include "hetseg/labelspace.hpp"
#include "hetseg/nifti.hpp"
#include "hetseg/sampling.hpp"
#include "hetseg/volume.hpp"

namespace hetseg {

/// Reads one subject: per-modality single-channel NIfTI images stacked in
/// the given order, plus the mask with file values remapped to joint label
/// ids. Intensities are z-score normalized per channel unless disabled.
inline SubjectData load_subject(const VolumeEntry& entry, const std::vector<std::string>& modalities,
                                const DatasetSpec& spec, bool normalize = true) {
    SubjectData out;
    Tensor stacked;
    for (std::size_t c = 0; c < modalities.size(); ++c) {
        const auto it = entry.images.find(modalities[c]);
        if (it == entry.images.end())
            throw ConfigError("dataset '" + spec.name + "': entry lacks modality '" + modalities[c] +
                              "'");
        Volume v = read_volume(it->second);
        if (v.channels() != 1)
            throw FormatError(it->second + ": expected a single-channel image");
        if (c == 0) {
            stacked = Tensor({static_cast<std::int64_t>(modalities.size()), v.data.dim(1),
                              v.data.dim(2), v.data.dim(3)});
            out.volume.voxel_spacing = v.voxel_spacing;
        } else if (v.data.dim(1) != stacked.dim(1) || v.data.dim(2) != stacked.dim(2) ||
                   v.data.dim(3) != stacked.dim(3)) {
            throw ShapeError(it->second + ": modality dims differ within one subject");
        }
        std::copy(v.data.data(), v.data.data() + v.data.numel(),
                  stacked.data() + static_cast<std::int64_t>(c) * v.data.numel());
    }
    out.volume.data = std::move(stacked);
    out.volume.modality_names = modalities;
    out.volume.validate();
    if (normalize) normalize_zscore(out.volume);

    out.mask = read_mask(entry.mask);
    if (out.mask.size != out.volume.dims())
        throw ShapeError(entry.mask + ": mask dims differ from the images");
    out.mask.source_dataset = spec.name;

    // Remap mask file values to joint label ids.
    std::vector<int> to_joint(256, -1);
    to_joint[0] = 0;
    for (std::size_t i = 0; i < spec.labels.size(); ++i) {
        const int fid = spec.file_ids[i];
        if (fid < 0 || fid > 255)
            throw ConfigError("dataset '" + spec.name + "': file id " + std::to_string(fid) +
                              " out of mask range");
        to_joint[static_cast<std::size_t>(fid)] = spec.labels[i].id;
    }
    for (auto& v : out.mask.data) {
        const int mapped = to_joint[v];
        if (mapped < 0)
            throw ConfigError(entry.mask + ": mask value " + std::to_string(int(v)) +
                              " is not declared by dataset '" + spec.name + "'");
        v = static_cast<std::uint8_t>(mapped);
    }
    return out;
}

/// Loads every subject of a dataset with channels in the dataset's own
/// modality order.
inline DatasetData load_dataset(const DatasetSpec& spec, bool normalize = true) {
    DatasetData out;
    out.name = spec.name;
    for (const auto& entry : spec.volume_entries)
        out.subjects.push_back(load_subject(entry, spec.modalities, spec, normalize));
    return out;
}

/// Restricts a subject's channels to `modalities`, in that order.
inline Volume select_channels(const Volume& vol, const std::vector<std::string>& modalities) {
    Tensor data({static_cast<std::int64_t>(modalities.size()), vol.data.dim(1), vol.data.dim(2),
                 vol.data.dim(3)});
    const std::int64_t m = vol.data.dim(1) * vol.data.dim(2) * vol.data.dim(3);
    for (std::size_t c = 0; c < modalities.size(); ++c) {
        const auto it =
            std::find(vol.modality_names.begin(), vol.modality_names.end(), modalities[c]);
        if (it == vol.modality_names.end())
            throw ConfigError("volume lacks modality '" + modalities[c] + "'");
        const auto src = static_cast<std::int64_t>(it - vol.modality_names.begin());
        std::copy(vol.data.data() + src * m, vol.data.data() + (src + 1) * m,
                  data.data() + static_cast<std::int64_t>(c) * m);
    }
    Volume out;
    out.data = std::move(data);
    out.modality_names = modalities;
    out.voxel_spacing = vol.voxel_spacing;
    return out;
}

/// Maps a mask from one label space into another by label name. Background
/// stays background; a source label missing from the target space is an
/// error unless drop_missing sends it to background instead.
inline SegmentationMask remap_mask(const SegmentationMask& mask, const LabelSpace& from,
                                   const LabelSpace& to, bool drop_missing = false) {
    std::vector<int> table(static_cast<std::size_t>(from.num_classes()), -1);
    table[0] = 0;
    for (int id = 1; id < from.num_classes(); ++id) {
        const auto target = to.label_id_by_name(from.label(id).name);
        if (target) {
            table[static_cast<std::size_t>(id)] = *target;
        } else if (drop_missing) {
            table[static_cast<std::size_t>(id)] = 0;
        }
    }
    SegmentationMask out = mask;
    out.label_space_ref = to.name;
    for (auto& v : out.data) {
        if (v >= table.size())
            throw ShapeError("mask value " + std::to_string(int(v)) + " outside its label space");
        const int mapped = table[v];
        if (mapped < 0)
            throw NotFound("label '" + from.label(v).name + "' does not exist in space '" +
                           to.name + "'");
        v = static_cast<std::uint8_t>(mapped);
    }
    return out;
}

}  // namespace hetseg
