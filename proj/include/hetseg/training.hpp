#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "hetseg/adam.hpp"
#include "hetseg/checkpoint.hpp"
#include "hetseg/data.hpp"
#include "hetseg/errors.hpp"
#include "hetseg/inference.hpp"
#include "hetseg/labelspace.hpp"
#include "hetseg/losses.hpp"
#include "hetseg/metrics.hpp"
#include "hetseg/network.hpp"
#include "hetseg/sampling.hpp"
#include "hetseg/volume.hpp"

namespace hetseg {

/// When to treat the complement of the lesion labels as fixed per dataset
/// versus recomputed from the labels present in each drawn patch. The patch
/// variant makes the loss collapse to -log(1) = 0 on lesion-sourced patches
/// that happen to contain no lesion voxels, so the dataset variant is the
/// default.
enum class ComplementMode { dataset, patch };

inline ComplementMode complement_mode_from_string(const std::string& s) {
    if (s == "dataset") return ComplementMode::dataset;
    if (s == "patch") return ComplementMode::patch;
    throw ConfigError("unknown complement mode '" + s + "' (expected dataset|patch)");
}

inline std::string to_string(ComplementMode m) {
    return m == ComplementMode::dataset ? "dataset" : "patch";
}

struct TrainConfig {
    LossKind loss = LossKind::ace;
    ComplementMode complement = ComplementMode::dataset;
    int batch_size = 7;
    Index3 patch_size{32, 32, 32};
    int iterations = 2000;
    int validation_every = 100;
    int early_stop_patience = 5;
    AdamConfig adam;
    std::uint64_t seed = 0;
    std::string checkpoint_path;
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (cfg.iterations < 1) throw ConfigError("iterations must be at least 1");
    if (cfg.validation_every < 1) throw ConfigError("validation_every must be at least 1");
    if (cfg.early_stop_patience < 1) throw ConfigError("early_stop_patience must be at least 1");
    for (auto d : cfg.patch_size)
        if (d < 1) throw ConfigError("patch_size entries must be positive");
    validate(cfg.adam);
}

struct TrainReport {
    std::vector<double> losses;
    std::vector<int> validation_iterations;
    std::vector<int> validation_class_ids;
    std::vector<std::vector<double>> validation_dice;
    std::vector<double> validation_mean_dice;
    int best_iteration = -1;
    double best_mean_dice = -1.0;
    bool early_stopped = false;
    std::string checkpoint_path;
    // Informational only; deterministic serializations must skip it.
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::unique_ptr<UNet3D> model;
    TrainReport report;
};

namespace detail {

/// Copies one batch item into its own (C, X, Y, Z) tensor.
inline Tensor batch_item(const Tensor& batch, std::int64_t b) {
    std::vector<std::int64_t> shape(batch.shape().begin() + 1, batch.shape().end());
    Tensor out(shape);
    const std::int64_t n = out.numel();
    std::copy(batch.data() + b * n, batch.data() + (b + 1) * n, out.data());
    return out;
}

/// Labels present in a patch, split into the complement (absent labels plus
/// background) and the present non-background labels.
inline std::pair<std::vector<int>, std::vector<int>> patch_complement(const SegmentationMask& mask,
                                                                      int num_classes) {
    std::vector<char> present(static_cast<std::size_t>(num_classes), 0);
    for (auto v : mask.data) present[v] = 1;
    std::vector<int> complement{0};
    std::vector<int> rest;
    for (int c = 1; c < num_classes; ++c)
        (present[static_cast<std::size_t>(c)] ? rest : complement).push_back(c);
    return {std::move(complement), std::move(rest)};
}

struct BatchLoss {
    double value = 0.0;
    Tensor dlogits;
};

/// Mean loss over the batch and its gradient with respect to the logits.
inline BatchLoss batch_loss_and_grad(LossKind loss, ComplementMode mode, const Tensor& probs,
                                     const PatchBatch& batch, int num_classes) {
    BatchLoss out;
    out.dlogits = Tensor(probs.shape());
    out.dlogits.zero();
    const std::int64_t bsz = probs.dim(0);
    const std::int64_t item = probs.numel() / bsz;
    const float inv_b = 1.0f / static_cast<float>(bsz);
    for (std::int64_t b = 0; b < bsz; ++b) {
        const Tensor pred = batch_item(probs, b);
        const auto& target = batch.labels[static_cast<std::size_t>(b)];
        LossValue lv;
        Tensor grad;
        switch (loss) {
            case LossKind::ce:
                lv = cross_entropy(pred, target);
                grad = cross_entropy_grad_logits(pred, target);
                break;
            case LossKind::dice:
                lv = soft_dice_loss(pred, target);
                grad = soft_dice_grad_logits(pred, target);
                break;
            case LossKind::ace: {
                std::vector<int> complement = batch.complement_sets[static_cast<std::size_t>(b)];
                std::vector<int> lesions = batch.lesion_label_sets[static_cast<std::size_t>(b)];
                const bool lesion_sourced = !lesions.empty();
                if (mode == ComplementMode::patch && lesion_sourced)
                    std::tie(complement, lesions) = patch_complement(target, num_classes);
                lv = adaptive_cross_entropy(pred, target, complement, lesions, false,
                                            lesion_sourced);
                grad = adaptive_cross_entropy_grad_logits(pred, target, complement, lesions,
                                                          lesion_sourced);
                break;
            }
        }
        out.value += lv.value;
        const float* g = grad.data();
        float* dst = out.dlogits.data() + b * item;
        for (std::int64_t i = 0; i < item; ++i) dst[i] = g[i] * inv_b;
    }
    out.value /= static_cast<double>(bsz);
    return out;
}

/// Snapshot of all trainable parameters, for restoring the best model.
inline std::vector<Tensor> snapshot_state(UNet3D& model) {
    std::vector<Tensor> out;
    for (const auto& p : model.parameters()) out.push_back(*p.value);
    for (const auto& b : model.buffers()) out.push_back(*b.value);
    return out;
}

inline void restore_state(UNet3D& model, const std::vector<Tensor>& snap) {
    std::size_t i = 0;
    for (auto& p : model.parameters()) *p.value = snap[i++];
    for (auto& b : model.buffers()) *b.value = snap[i++];
}

}  // namespace detail

/// Per-class Dice of sliding-window predictions over held-out subjects.
/// Class ids are the non-background labels of `space`; masks must already
/// use that space's ids.
inline std::vector<double> validation_dice(UNet3D& model, const std::vector<SubjectData>& subjects,
                                           const LabelSpace& space,
                                           std::optional<Index3> stride = std::nullopt) {
    if (subjects.empty()) throw InsufficientData("validation requires at least one subject");
    const int num_classes = space.num_classes();
    std::vector<double> sums(static_cast<std::size_t>(num_classes) - 1, 0.0);
    for (const auto& subject : subjects) {
        const auto pred = predict_volume(model, subject.volume, stride);
        for (int c = 1; c < num_classes; ++c)
            sums[static_cast<std::size_t>(c) - 1] += dice_coefficient(pred.mask, subject.mask, c);
    }
    for (auto& s : sums) s /= static_cast<double>(subjects.size());
    return sums;
}

/// Trains one model on the given datasets. Validation subjects carry masks
/// in the joint label space; the best validation mean-Dice state is restored
/// into the returned model and optionally written to cfg.checkpoint_path.
inline TrainResult train_single(const LabelSpace& space, const std::vector<DatasetData>& train_data,
                                const std::vector<SubjectData>& val_subjects, const TrainConfig& cfg,
                                const ModelConfig& model_cfg,
                                ChannelMode channel_mode = ChannelMode::single_model) {
    validate(cfg);
    validate(model_cfg);
    if (model_cfg.num_classes != space.num_classes())
        throw ConfigError("model classes differ from the label space");
    const auto t_start = std::chrono::steady_clock::now();

    SamplerState sampler = build_sampler(train_data, space, derive_seed(cfg.seed, "sampler"),
                                         channel_mode);
    if (static_cast<int>(sampler.channel_names.size()) != model_cfg.in_channels)
        throw ConfigError("model expects " + std::to_string(model_cfg.in_channels) +
                          " channels but the sampler provides " +
                          std::to_string(sampler.channel_names.size()));

    TrainResult result;
    result.model = std::make_unique<UNet3D>(model_cfg, derive_seed(cfg.seed, "init"));
    UNet3D& model = *result.model;
    auto params = model.parameters();
    Adam opt(params, cfg.adam);

    std::vector<Tensor> best_state = detail::snapshot_state(model);
    int stale = 0;
    auto& report = result.report;
    for (int c = 1; c < space.num_classes(); ++c) report.validation_class_ids.push_back(c);

    for (int it = 1; it <= cfg.iterations; ++it) {
        PatchBatch batch = next_batch(sampler, cfg.batch_size, cfg.patch_size);
        model.set_train(true);
        const Tensor logits = model.forward_logits(batch.intensities);
        const Tensor probs = ops::softmax_channels(logits);
        auto bl = detail::batch_loss_and_grad(cfg.loss, cfg.complement, probs, batch,
                                              space.num_classes());
        if (!std::isfinite(bl.value))
            throw DivergedError("loss became non-finite at iteration " + std::to_string(it));
        report.losses.push_back(bl.value);

        model.zero_grad();
        model.backward(bl.dlogits);
        opt.step(params);

        const bool last = it == cfg.iterations;
        if (!val_subjects.empty() && (it % cfg.validation_every == 0 || last)) {
            model.set_train(false);
            auto dice = validation_dice(model, val_subjects, space, cfg.patch_size);
            double mean = 0.0;
            for (auto d : dice) mean += d;
            mean /= static_cast<double>(dice.size());
            report.validation_iterations.push_back(it);
            report.validation_dice.push_back(std::move(dice));
            report.validation_mean_dice.push_back(mean);
            if (mean > report.best_mean_dice) {
                report.best_mean_dice = mean;
                report.best_iteration = it;
                best_state = detail::snapshot_state(model);
                stale = 0;
            } else if (++stale >= cfg.early_stop_patience) {
                report.early_stopped = true;
                break;
            }
        }
    }

    model.set_train(false);
    if (!val_subjects.empty()) {
        detail::restore_state(model, best_state);
    } else {
        report.best_iteration = cfg.iterations;
    }
    if (!cfg.checkpoint_path.empty()) {
        std::vector<std::string> label_names;
        for (const auto& l : space.labels) label_names.push_back(l.name);
        save_checkpoint(cfg.checkpoint_path, model, sampler.channel_names, label_names);
        report.checkpoint_path = cfg.checkpoint_path;
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

/// Convenience overload that sizes the model from the label space and the
/// channel plan.
inline TrainResult train_single(const LabelSpace& space, const std::vector<DatasetData>& train_data,
                                const std::vector<SubjectData>& val_subjects,
                                const TrainConfig& cfg,
                                ChannelMode channel_mode = ChannelMode::single_model) {
    validate(cfg);
    const auto plan = channel_plan(space, channel_mode,
                                   channel_mode == ChannelMode::per_dataset
                                       ? std::optional<std::string>(train_data.at(0).name)
                                       : std::nullopt);
    ModelConfig mc;
    mc.in_channels = static_cast<int>(plan.size());
    mc.num_classes = space.num_classes();
    mc.patch_size = cfg.patch_size;
    return train_single(space, train_data, val_subjects, cfg, mc, channel_mode);
}

/// One per-dataset model of the baseline that trains each dataset alone.
struct MultiModel {
    std::unique_ptr<UNet3D> model;
    TrainReport report;
    std::string dataset_name;
    DatasetRole role = DatasetRole::anatomy;
    std::vector<std::string> modalities;
    std::vector<std::string> label_names;
};

namespace detail {

/// A label space covering exactly one dataset, with its own contiguous ids.
inline LabelSpace local_label_space(const LabelSpace& space, const DatasetSpec& spec) {
    DatasetDecl decl;
    decl.name = spec.name;
    decl.modalities = spec.modalities;
    decl.role = spec.role;
    for (std::size_t i = 0; i < spec.labels.size(); ++i) {
        LabelDecl l;
        l.name = spec.labels[i].name;
        l.kind = spec.labels[i].kind;
        l.file_id = spec.file_ids[i];
        decl.labels.push_back(std::move(l));
    }
    decl.volume_entries = spec.volume_entries;
    LabelSpace local = build_label_space({decl});
    local.name = space.name + ":" + spec.name;
    return local;
}

}  // namespace detail

/// Trains one cross-entropy model per dataset on that dataset's own labels
/// and modalities. Validation masks are projected into each local space by
/// name, dropping labels the dataset does not annotate.
inline std::vector<MultiModel> train_multi(const LabelSpace& space,
                                           const std::vector<DatasetData>& train_data,
                                           const std::vector<SubjectData>& val_subjects,
                                           const TrainConfig& cfg, const ModelConfig& arch) {
    validate(cfg);
    if (train_data.size() != space.datasets.size())
        throw ConfigError("per-dataset training needs data for every dataset of the space");
    std::vector<MultiModel> out;
    for (std::size_t k = 0; k < space.datasets.size(); ++k) {
        const DatasetSpec& spec = space.dataset(train_data[k].name);
        LabelSpace local = detail::local_label_space(space, spec);

        DatasetData local_data;
        local_data.name = spec.name;
        for (const auto& subject : train_data[k].subjects) {
            SubjectData s;
            s.volume = select_channels(subject.volume, spec.modalities);
            s.mask = remap_mask(subject.mask, space, local);
            local_data.subjects.push_back(std::move(s));
        }

        std::vector<SubjectData> local_val;
        for (const auto& subject : val_subjects) {
            SubjectData s;
            s.volume = select_channels(subject.volume, spec.modalities);
            s.mask = remap_mask(subject.mask, space, local, true);
            local_val.push_back(std::move(s));
        }

        TrainConfig local_cfg = cfg;
        local_cfg.loss = LossKind::ce;
        local_cfg.seed = cfg.seed + k;
        if (!cfg.checkpoint_path.empty())
            local_cfg.checkpoint_path = cfg.checkpoint_path + "." + spec.name;

        ModelConfig mc = arch;
        mc.in_channels = static_cast<int>(spec.modalities.size());
        mc.num_classes = local.num_classes();
        mc.patch_size = cfg.patch_size;

        MultiModel mm;
        auto trained = train_single(local, {std::move(local_data)}, local_val, local_cfg, mc,
                                    ChannelMode::per_dataset);
        mm.model = std::move(trained.model);
        mm.report = std::move(trained.report);
        mm.dataset_name = spec.name;
        mm.role = spec.role;
        mm.modalities = spec.modalities;
        for (const auto& l : local.labels) mm.label_names.push_back(l.name);
        out.push_back(std::move(mm));
    }
    return out;
}

/// Overlays lesion predictions onto anatomy predictions: wherever the lesion
/// mask is non-background it wins, everywhere else the anatomy label stays.
inline SegmentationMask fuse_labels(const SegmentationMask& anatomy,
                                    const SegmentationMask& lesion) {
    if (anatomy.size != lesion.size)
        throw ShapeError("cannot fuse masks of different sizes");
    SegmentationMask out = anatomy;
    out.source_dataset.clear();
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (lesion.data[i] != 0) out.data[i] = lesion.data[i];
    return out;
}

/// Same, but checks both masks against the label space first.
inline SegmentationMask fuse_labels(const SegmentationMask& anatomy, const SegmentationMask& lesion,
                                    const LabelSpace& space) {
    const int num_classes = space.num_classes();
    if (anatomy.size != lesion.size)
        throw ShapeError("cannot fuse masks of different sizes");
    for (std::size_t i = 0; i < anatomy.data.size(); ++i)
        if (anatomy.data[i] >= num_classes || lesion.data[i] >= num_classes)
            throw ShapeError("mask value outside the label space");
    SegmentationMask out = fuse_labels(anatomy, lesion);
    out.label_space_ref = space.name;
    return out;
}

/// Runs every per-dataset model on one subject and fuses the results into a
/// joint-space mask: the anatomy model's output is the base layer and each
/// lesion model overwrites it where it predicts lesion.
inline SegmentationMask predict_multi(std::vector<MultiModel>& models, const Volume& volume,
                                      const LabelSpace& space,
                                      std::optional<Index3> stride = std::nullopt) {
    if (models.empty()) throw ConfigError("no models to fuse");
    SegmentationMask fused = make_mask(volume.dims());
    fused.label_space_ref = space.name;
    bool have_base = false;
    for (auto& mm : models) {
        if (mm.role != DatasetRole::anatomy) continue;
        if (have_base) throw ConfigError("fusion expects a single anatomy model");
        Volume in = select_channels(volume, mm.modalities);
        auto pred = predict_volume(*mm.model, in, stride);
        for (std::size_t i = 0; i < fused.data.size(); ++i) {
            const auto local = pred.mask.data[i];
            if (local == 0) continue;
            const auto joint = space.label_id_by_name(mm.label_names.at(local));
            if (!joint) throw NotFound("label '" + mm.label_names.at(local) + "' not in space");
            fused.data[i] = static_cast<std::uint8_t>(*joint);
        }
        have_base = true;
    }
    for (auto& mm : models) {
        if (mm.role != DatasetRole::lesion) continue;
        Volume in = select_channels(volume, mm.modalities);
        auto pred = predict_volume(*mm.model, in, stride);
        for (std::size_t i = 0; i < fused.data.size(); ++i) {
            const auto local = pred.mask.data[i];
            if (local == 0) continue;
            const auto joint = space.label_id_by_name(mm.label_names.at(local));
            if (!joint) throw NotFound("label '" + mm.label_names.at(local) + "' not in space");
            fused.data[i] = static_cast<std::uint8_t>(*joint);
        }
    }
    return fused;
}

}  // namespace hetseg
