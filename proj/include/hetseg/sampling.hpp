#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hetseg/errors.hpp"
#include "hetseg/labelspace.hpp"
#include "hetseg/rng.hpp"
#include "hetseg/tensor.hpp"
#include "hetseg/volume.hpp"

namespace hetseg {

struct SubjectData {
    Volume volume;
    SegmentationMask mask;
};

struct DatasetData {
    std::string name;
    std::vector<SubjectData> subjects;
};

/// A balanced mini-batch. intensities is (batch, channel, x, y, z) float32;
/// labels holds one patch mask per item. Every item carries its source
/// dataset's complement and lesion label sets for the adaptive loss.
struct PatchBatch {
    Tensor intensities;
    std::vector<SegmentationMask> labels;
    std::vector<std::string> dataset_names;
    std::vector<std::vector<int>> complement_sets;
    std::vector<std::vector<int>> lesion_label_sets;
    std::vector<int> drawn_classes;
    std::vector<std::string> channel_names;

    std::int64_t batch_size() const { return intensities.ndim() == 5 ? intensities.dim(0) : 0; }
};

/// Candidate-voxel index over the training corpus plus the sampling stream.
/// Holds a pointer into the caller's data; the DatasetData list must outlive
/// the sampler. Single-writer: reproducibility holds only under serialized
/// next_batch calls.
struct SamplerState {
    struct PerDataset {
        std::string name;
        std::vector<int> labelset;  // {0} + non-background ids, ascending
        std::vector<int> complement;
        std::vector<int> lesion_labels;
        // candidates[slot] lists (subject, flat voxel) per labelset entry
        std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> candidates;
    };
    std::vector<PerDataset> datasets;
    std::vector<std::string> channel_names;
    const std::vector<DatasetData>* data = nullptr;
    CounterRng rng{0};
};

/// Indexes every (dataset, class) -> candidate center voxels and seeds the
/// sampling stream. Channels follow channel_plan: the shared modality
/// intersection for single_model, a lone dataset's full list for per_dataset.
inline SamplerState build_sampler(const std::vector<DatasetData>& datasets,
                                  const LabelSpace& space, std::uint64_t seed,
                                  ChannelMode mode = ChannelMode::single_model) {
    if (datasets.empty()) throw ConfigError("build_sampler needs at least one dataset");
    if (mode == ChannelMode::per_dataset && datasets.size() != 1)
        throw ConfigError("per-dataset channels require sampling a single dataset");

    SamplerState state;
    state.data = &datasets;
    state.rng = CounterRng(seed);
    state.channel_names =
        mode == ChannelMode::single_model
            ? channel_plan(space, ChannelMode::single_model)
            : channel_plan(space, ChannelMode::per_dataset, datasets.front().name);

    const int C = space.num_classes();
    for (const auto& d : datasets) {
        const DatasetSpec& spec = space.dataset(d.name);
        if (d.subjects.empty()) throw ConfigError("dataset '" + d.name + "' has no volumes");

        SamplerState::PerDataset per;
        per.name = d.name;
        per.labelset = spec.labelset();
        per.complement = complement_set(space, d.name);
        per.lesion_labels = spec.lesion_label_ids();
        per.candidates.resize(per.labelset.size());

        std::vector<int> slot_of(static_cast<std::size_t>(C), -1);
        for (std::size_t s = 0; s < per.labelset.size(); ++s)
            slot_of[static_cast<std::size_t>(per.labelset[s])] = static_cast<int>(s);

        for (std::size_t subject = 0; subject < d.subjects.size(); ++subject) {
            const SubjectData& sd = d.subjects[subject];
            if (sd.volume.dims() != sd.mask.size)
                throw ShapeError("dataset '" + d.name + "': volume and mask dims differ");
            for (const auto& ch : state.channel_names)
                if (std::find(sd.volume.modality_names.begin(), sd.volume.modality_names.end(),
                              ch) == sd.volume.modality_names.end())
                    throw ConfigError("dataset '" + d.name + "' volume lacks modality '" + ch + "'");
            const std::int64_t n = sd.mask.numel();
            for (std::int64_t i = 0; i < n; ++i) {
                const std::uint8_t v = sd.mask.data[static_cast<std::size_t>(i)];
                if (v >= C || slot_of[v] < 0)
                    throw ConfigError("dataset '" + d.name + "' mask value " +
                                      std::to_string(int(v)) + " is outside its labelset");
                per.candidates[static_cast<std::size_t>(slot_of[v])].emplace_back(
                    static_cast<std::uint32_t>(subject), static_cast<std::uint32_t>(i));
            }
        }

        for (std::size_t s = 0; s < per.labelset.size(); ++s)
            if (per.candidates[s].empty())
                throw EmptyClass("class '" + space.label(per.labelset[s]).name +
                                 "' has no voxels in dataset '" + d.name + "'");
        state.datasets.push_back(std::move(per));
    }
    return state;
}

/// Draws batch_size patches: dataset uniform, class uniform within that
/// dataset's labelset (background included), center voxel uniform among that
/// class's candidates. Patches are centered on the drawn voxel and
/// zero/background padded at borders. Advances the stream deterministically.
inline PatchBatch next_batch(SamplerState& state, int batch_size, Index3 patch_size) {
    if (!state.data) throw ConfigError("sampler is not initialized");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    for (std::int64_t d : patch_size)
        if (d < 1) throw ShapeError("patch dims must be >= 1");

    const std::int64_t n_ch = static_cast<std::int64_t>(state.channel_names.size());
    PatchBatch batch;
    batch.channel_names = state.channel_names;
    batch.intensities =
        Tensor({batch_size, n_ch, patch_size[0], patch_size[1], patch_size[2]});
    const std::int64_t patch_voxels = patch_size[0] * patch_size[1] * patch_size[2];

    for (int b = 0; b < batch_size; ++b) {
        const auto k = state.rng.uniform_int(state.datasets.size());
        auto& per = state.datasets[k];
        const auto slot = state.rng.uniform_int(per.labelset.size());
        const auto& cands = per.candidates[slot];
        const auto pick = cands[state.rng.uniform_int(cands.size())];

        const SubjectData& sd = (*state.data)[k].subjects[pick.first];
        const std::int64_t Y = sd.mask.size[1], Z = sd.mask.size[2];
        const std::int64_t flat = pick.second;
        const Index3 center{flat / (Y * Z), (flat / Z) % Y, flat % Z};

        auto [pvol, pmask] = extract_patch(sd.volume, sd.mask, center, patch_size);
        for (std::int64_t c = 0; c < n_ch; ++c) {
            const auto it = std::find(pvol.modality_names.begin(), pvol.modality_names.end(),
                                      state.channel_names[static_cast<std::size_t>(c)]);
            const auto src = static_cast<std::int64_t>(it - pvol.modality_names.begin());
            std::copy(pvol.data.data() + src * patch_voxels,
                      pvol.data.data() + (src + 1) * patch_voxels,
                      batch.intensities.data() + (b * n_ch + c) * patch_voxels);
        }
        batch.labels.push_back(std::move(pmask));
        batch.dataset_names.push_back(per.name);
        batch.complement_sets.push_back(per.complement);
        batch.lesion_label_sets.push_back(per.lesion_labels);
        batch.drawn_classes.push_back(per.labelset[slot]);
    }
    return batch;
}

}  // namespace hetseg
