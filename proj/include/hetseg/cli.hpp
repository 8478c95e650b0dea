#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hetseg/data.hpp"
#include "hetseg/errors.hpp"
#include "hetseg/experiment.hpp"
#include "hetseg/inference.hpp"
#include "hetseg/labelspace.hpp"
#include "hetseg/losses.hpp"
#include "hetseg/manifest.hpp"
#include "hetseg/nifti.hpp"
#include "hetseg/phantom.hpp"
#include "hetseg/rng.hpp"
#include "hetseg/training.hpp"

namespace hetseg {

inline constexpr const char* kToolName = "hetseg";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kRunSchemaVersion = 1;

namespace cli_detail {

/// Output paths resolve against HETSEG_OUT when set and the path is
/// relative.
inline std::filesystem::path resolve_out(const std::string& path) {
    std::filesystem::path p(path);
    const char* root = std::getenv("HETSEG_OUT");
    if (root && *root && p.is_relative()) return std::filesystem::path(root) / p;
    return p;
}

inline std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// Provenance record for one invocation: enough to rerun it bit-for-bit.
struct RunRecord {
    std::string command;
    std::vector<std::string> arguments;
    std::string config_hash;  // fnv1a64 over the config file, or the args
    std::vector<std::pair<std::string, std::uint64_t>> seeds;
};

inline void write_run_record(const std::filesystem::path& dir, const RunRecord& rec) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::ordered_json j;
    j["schema_version"] = kRunSchemaVersion;
    j["tool"] = kToolName;
    j["version"] = kToolVersion;
    j["command"] = rec.command;
    j["arguments"] = rec.arguments;
    j["config_hash"] = rec.config_hash;
    nlohmann::ordered_json seeds;
    for (const auto& [name, value] : rec.seeds) seeds[name] = value;
    j["seeds"] = std::move(seeds);
    detail::write_text_file(dir / "run.json", j.dump(2) + "\n");
}

inline std::string hash_args(const std::vector<std::string>& args) {
    std::string joined;
    for (const auto& a : args) {
        joined += a;
        joined += '\0';
    }
    return hex64(fnv1a64(joined));
}

inline std::string hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return hex64(fnv1a64(ss.str()));
}

inline std::vector<std::string> collect_args(int argc, const char* const* argv) {
    std::vector<std::string> out;
    for (int i = 1; i < argc; ++i) out.emplace_back(argv[i]);
    return out;
}

/// "modality=path" pairs from repeated --image flags.
inline std::vector<std::pair<std::string, std::string>> parse_image_args(
    const std::vector<std::string>& raw) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& item : raw) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
            throw ConfigError("--image expects modality=path, got '" + item + "'");
        out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    }
    return out;
}

inline SegmentationMask read_mask_checked(const std::string& path) {
    return read_mask(path);
}

struct TrainCliArgs {
    std::vector<std::string> manifests;
    std::string val_manifest;
    std::string loss = "ace";
    std::string complement = "dataset";
    std::string out_dir;
    std::string config_path;
    int iterations = 2000;
    int batch_size = 7;
    int patch = 32;
    int validation_every = 100;
    int patience = 5;
    int base_channels = 32;
    int depth = 4;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

inline void add_train_flags(CLI::App* cmd, TrainCliArgs& a, bool with_loss) {
    cmd->add_option("--manifest", a.manifests, "training dataset manifest (repeatable)")
        ->required();
    cmd->add_option("--val", a.val_manifest, "jointly annotated validation manifest");
    if (with_loss)
        cmd->add_option("--loss", a.loss, "loss function: ace|ce|dice")
            ->check(CLI::IsMember({"ace", "ce", "dice"}));
    cmd->add_option("--complement", a.complement, "ace complement mode: dataset|patch")
        ->check(CLI::IsMember({"dataset", "patch"}));
    cmd->add_option("--out", a.out_dir, "output directory")->required();
    cmd->add_option("--config", a.config_path, "JSON file with model/train blocks");
    cmd->add_option("--iterations", a.iterations, "training iterations");
    cmd->add_option("--batch-size", a.batch_size, "patches per batch");
    cmd->add_option("--patch", a.patch, "cubic patch edge length");
    cmd->add_option("--validation-every", a.validation_every, "iterations between validations");
    cmd->add_option("--patience", a.patience, "validation points without improvement");
    cmd->add_option("--base-channels", a.base_channels, "channels of the first level");
    cmd->add_option("--depth", a.depth, "contraction levels");
    cmd->add_option("--lr", a.lr, "Adam learning rate");
    cmd->add_option("--seed", a.seed, "training seed");
}

inline std::pair<TrainConfig, ModelConfig> train_configs_from_args(const TrainCliArgs& a) {
    TrainConfig tc;
    ModelConfig mc;
    if (!a.config_path.empty()) {
        const auto j = load_json_file(a.config_path);
        detail::json_check_keys(j, {"schema_version", "model", "train"}, "train config");
        if (j.contains("train")) tc = train_config_from_json(j.at("train"));
        if (j.contains("model")) mc = model_config_from_json(j.at("model"));
    } else {
        tc.loss = loss_kind_from_string(a.loss);
        tc.complement = complement_mode_from_string(a.complement);
        tc.iterations = a.iterations;
        tc.batch_size = a.batch_size;
        tc.patch_size = {a.patch, a.patch, a.patch};
        tc.validation_every = a.validation_every;
        tc.early_stop_patience = a.patience;
        tc.adam.lr = static_cast<float>(a.lr);
        tc.seed = a.seed;
        mc.base_channels = a.base_channels;
        mc.depth = a.depth;
    }
    mc.patch_size = tc.patch_size;
    return {tc, mc};
}

struct LoadedSpace {
    LabelSpace space;
    std::vector<DatasetData> train;
    std::vector<SubjectData> val;
};

inline LoadedSpace load_space(const std::vector<std::string>& manifest_paths,
                              const std::string& val_path) {
    std::vector<DatasetDecl> decls;
    for (const auto& p : manifest_paths) decls.push_back(read_dataset_manifest(p));
    LoadedSpace out{build_label_space(decls), {}, {}};
    for (const auto& d : decls) out.train.push_back(load_dataset(out.space.dataset(d.name)));
    if (!val_path.empty()) {
        DatasetDecl vd = read_dataset_manifest(val_path);
        out.val = detail::load_joint_subjects(vd, out.space, nullptr);
    }
    return out;
}

inline nlohmann::ordered_json space_json(const LabelSpace& space) {
    nlohmann::ordered_json j;
    j["name"] = space.name;
    nlohmann::ordered_json labels = nlohmann::ordered_json::array();
    for (const auto& l : space.labels) {
        nlohmann::ordered_json e;
        e["id"] = l.id;
        e["name"] = l.name;
        e["kind"] = to_string(l.kind);
        labels.push_back(std::move(e));
    }
    j["labels"] = std::move(labels);
    j["shared_modalities"] = space.shared_modalities;
    return j;
}

inline int cmd_synth(const std::string& params_path, const std::string& out_dir, int n,
                     const std::string& annotation, std::optional<std::uint64_t> seed,
                     const std::vector<std::string>& args) {
    PhantomParams params;
    std::string config_hash = hash_args(args);
    if (!params_path.empty()) {
        params = phantom_params_from_json(load_json_file(params_path));
        config_hash = hash_file(params_path);
    }
    if (seed) params.seed = *seed;
    const auto dir = resolve_out(out_dir);
    const DatasetSpec spec = generate_dataset(params, n, annotation_mode_from_string(annotation),
                                              dir);
    RunRecord rec{"synth", args, config_hash, {{"phantom", params.seed}}};
    write_run_record(dir, rec);
    std::cout << "wrote " << spec.volume_entries.size() << " volumes and "
              << (dir / "dataset.json").string() << "\n";
    return 0;
}

inline int cmd_train(const TrainCliArgs& a, const std::vector<std::string>& args) {
    auto [tc, mc] = train_configs_from_args(a);
    const auto out_dir = resolve_out(a.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    LoadedSpace loaded = load_space(a.manifests, a.val_manifest);
    mc.in_channels = static_cast<int>(loaded.space.shared_modalities.size());
    mc.num_classes = loaded.space.num_classes();
    tc.checkpoint_path = (out_dir / "model.hsegckpt").string();

    auto trained = train_single(loaded.space, loaded.train, loaded.val, tc, mc);

    nlohmann::ordered_json j;
    j["schema_version"] = kRunSchemaVersion;
    j["loss"] = to_string(tc.loss);
    j["label_space"] = space_json(loaded.space);
    j["report"] = detail::train_report_json(trained.report);
    j["checkpoint"] = trained.report.checkpoint_path;
    detail::write_text_file(out_dir / "train_report.json", j.dump(2) + "\n");

    RunRecord rec{"train", args,
                  a.config_path.empty() ? hash_args(args) : hash_file(a.config_path),
                  {{"train", tc.seed}}};
    write_run_record(out_dir, rec);
    std::cout << "final loss " << trained.report.losses.back() << " after "
              << trained.report.losses.size() << " iterations; checkpoint "
              << trained.report.checkpoint_path << "\n";
    return 0;
}

inline int cmd_train_multi(const TrainCliArgs& a, const std::vector<std::string>& args) {
    auto [tc, mc] = train_configs_from_args(a);
    const auto out_dir = resolve_out(a.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    LoadedSpace loaded = load_space(a.manifests, a.val_manifest);
    tc.checkpoint_path = (out_dir / "model.hsegckpt").string();

    auto models = train_multi(loaded.space, loaded.train, loaded.val, tc, mc);

    nlohmann::ordered_json j;
    j["schema_version"] = kRunSchemaVersion;
    j["label_space"] = space_json(loaded.space);
    nlohmann::ordered_json reports = nlohmann::ordered_json::array();
    RunRecord rec{"train-multi", args,
                  a.config_path.empty() ? hash_args(args) : hash_file(a.config_path), {}};
    for (std::size_t k = 0; k < models.size(); ++k) {
        nlohmann::ordered_json r = detail::train_report_json(models[k].report);
        r["dataset"] = models[k].dataset_name;
        r["checkpoint"] = models[k].report.checkpoint_path;
        reports.push_back(std::move(r));
        rec.seeds.emplace_back("train:" + models[k].dataset_name, tc.seed + k);
    }
    j["models"] = std::move(reports);
    detail::write_text_file(out_dir / "train_report.json", j.dump(2) + "\n");
    write_run_record(out_dir, rec);
    std::cout << "trained " << models.size() << " models into " << out_dir.string() << "\n";
    return 0;
}

inline int cmd_predict(const std::string& checkpoint_path,
                       const std::vector<std::string>& image_args, const std::string& out_path,
                       int stride, const std::vector<std::string>& args) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const auto images = parse_image_args(image_args);

    Volume vol;
    bool first = true;
    for (const auto& modality : ckpt.modalities) {
        const auto it = std::find_if(images.begin(), images.end(),
                                     [&](const auto& p) { return p.first == modality; });
        if (it == images.end())
            throw ConfigError("checkpoint needs modality '" + modality +
                              "' (pass --image " + modality + "=path)");
        Volume v = read_volume(it->second);
        if (v.channels() != 1) throw FormatError(it->second + ": expected a single-channel image");
        if (first) {
            vol.data = Tensor({static_cast<std::int64_t>(ckpt.modalities.size()), v.data.dim(1),
                               v.data.dim(2), v.data.dim(3)});
            vol.voxel_spacing = v.voxel_spacing;
            first = false;
        } else if (v.data.dim(1) != vol.data.dim(1) || v.data.dim(2) != vol.data.dim(2) ||
                   v.data.dim(3) != vol.data.dim(3)) {
            throw ShapeError(it->second + ": image dims differ between modalities");
        }
        const std::int64_t m = v.data.numel();
        std::copy(v.data.data(), v.data.data() + m,
                  vol.data.data() + static_cast<std::int64_t>(vol.modality_names.size()) * m);
        vol.modality_names.push_back(modality);
    }
    normalize_zscore(vol);

    std::optional<Index3> st;
    if (stride > 0) st = Index3{stride, stride, stride};
    const Prediction pred = predict_volume(ckpt.model, vol, st);

    const auto out = resolve_out(out_path);
    if (out.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(out.parent_path(), ec);
    }
    write_nifti(out.string(), pred.mask);
    write_run_record(out.has_parent_path() ? out.parent_path() : std::filesystem::path("."),
                     RunRecord{"predict", args, hash_args(args), {}});
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

inline int cmd_fuse(const std::string& anatomy_path, const std::string& lesion_path,
                    const std::string& out_path, const std::vector<std::string>& args) {
    const SegmentationMask anatomy = read_mask_checked(anatomy_path);
    const SegmentationMask lesion = read_mask_checked(lesion_path);
    const SegmentationMask fused = fuse_labels(anatomy, lesion);
    const auto out = resolve_out(out_path);
    if (out.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(out.parent_path(), ec);
    }
    write_nifti(out.string(), fused);
    write_run_record(out.has_parent_path() ? out.parent_path() : std::filesystem::path("."),
                     RunRecord{"fuse", args, hash_args(args), {}});
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

inline int cmd_evaluate(const std::string& pred_dir, const std::string& truth_manifest,
                        const std::string& out_dir, const std::vector<std::string>& args) {
    const DatasetDecl decl = read_dataset_manifest(truth_manifest);
    LabelSpace space = build_label_space({decl});
    const DatasetSpec& spec = space.dataset(decl.name);

    DiceScores scores;
    for (int c = 1; c < space.num_classes(); ++c) {
        scores.class_ids.push_back(c);
        scores.class_names.push_back(space.label(c).name);
    }

    const std::filesystem::path preds(pred_dir);
    for (const auto& entry : spec.volume_entries) {
        SubjectData truth = load_subject(entry, spec.modalities, spec, false);
        const std::filesystem::path mask_path(entry.mask);
        const auto pred_path = preds / mask_path.filename();
        if (!std::filesystem::exists(pred_path))
            throw NotFound("no prediction for " + mask_path.filename().string() + " in " +
                           preds.string());
        const SegmentationMask pred = read_mask_checked(pred_path.string());
        std::string stem = mask_path.filename().string();
        const auto pos = stem.find(".nii");
        if (pos != std::string::npos) stem.resize(pos);
        scores.subject_ids.push_back(stem);
        std::vector<double> row;
        std::vector<char> flags;
        for (int c : scores.class_ids) {
            row.push_back(dice_coefficient(pred, truth.mask, c));
            const auto cls = static_cast<std::uint8_t>(c);
            const bool in_pred =
                std::find(pred.data.begin(), pred.data.end(), cls) != pred.data.end();
            const bool in_truth = std::find(truth.mask.data.begin(), truth.mask.data.end(), cls) !=
                                  truth.mask.data.end();
            flags.push_back(!in_pred && !in_truth);
        }
        scores.values.push_back(std::move(row));
        scores.both_empty.push_back(std::move(flags));
    }
    if (scores.subject_ids.empty()) throw InsufficientData("truth manifest lists no subjects");

    const auto summaries = summarize(scores);
    std::string csv = "subject,class,dice\n";
    for (std::size_t s = 0; s < scores.subject_ids.size(); ++s)
        for (std::size_t c = 0; c < scores.class_names.size(); ++c)
            csv += scores.subject_ids[s] + "," + scores.class_names[c] + "," +
                   detail::format_double(scores.values[s][c], 9) + "\n";

    std::string table = "class        mean   std    n\n";
    for (const auto& s : summaries)
        table += s.class_name + std::string(s.class_name.size() < 12 ? 12 - s.class_name.size() : 1,
                                            ' ') +
                 detail::format_double(s.mean, 3) + "  " + detail::format_double(s.std_dev, 3) +
                 "  " + std::to_string(s.n) + (s.single_subject ? "  (single subject)" : "") + "\n";

    const auto out = resolve_out(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
    detail::write_text_file(out / "dice.csv", csv);
    detail::write_text_file(out / "table.txt", table);
    write_run_record(out, RunRecord{"evaluate", args, hash_args(args), {}});
    std::cout << table;
    return 0;
}

inline int cmd_gradcheck(const std::string& loss, std::uint64_t seed, double tol, int instances,
                         const std::vector<std::string>& args) {
    (void)args;
    const LossKind kind = loss_kind_from_string(loss);
    CounterRng rng(derive_seed(seed, "gradcheck"));
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
        const int C = 3 + static_cast<int>(rng.uniform_int(3));  // 3..5 classes
        const Index3 dims{3, 3, 3};
        const std::int64_t m = dims[0] * dims[1] * dims[2];
        Tensor logits({C, dims[0], dims[1], dims[2]});
        for (std::int64_t k = 0; k < logits.numel(); ++k)
            logits[k] = 2.0f * static_cast<float>(rng.uniform()) - 1.0f;
        SegmentationMask target = make_mask(dims);
        for (std::int64_t k = 0; k < m; ++k)
            target.data[static_cast<std::size_t>(k)] =
                static_cast<std::uint8_t>(rng.uniform_int(static_cast<std::uint64_t>(C)));
        std::vector<int> complement{0};
        std::vector<int> lesions;
        for (int c = 1; c < C; ++c) (c + 1 == C ? lesions : complement).push_back(c);
        const auto rep = numeric_gradient_check(kind, logits, target, complement, lesions, tol);
        worst = std::max(worst, rep.max_rel_error);
        if (!rep.passed) {
            std::cout << "gradcheck FAILED: instance " << i << " max relative error "
                      << rep.max_rel_error << " > " << tol << "\n";
            throw NonFiniteLoss("gradient check failed for loss " + loss);
        }
    }
    std::cout << "gradcheck ok: " << instances << " instances, max relative error " << worst
              << " (tolerance " << tol << ")\n";
    return 0;
}

inline int cmd_experiment(const std::string& config_path, const std::vector<std::string>& args) {
    const auto j = load_json_file(config_path);
    ExperimentConfig cfg = experiment_config_from_json(j);
    cfg.output_dir = resolve_out(cfg.output_dir).string();
    const ExperimentReport report = run_experiment(cfg);
    RunRecord rec{"experiment", args, hash_file(config_path), report.seeds};
    write_run_record(cfg.output_dir, rec);
    std::cout << render_dice_table(report);
    for (const auto& cmp : report.comparisons)
        std::cout << "wilcoxon " << cmp.system_a << " vs " << cmp.system_b << ": W="
                  << cmp.test.statistic << " p=" << cmp.test.p_value
                  << (cmp.test.exact ? " (exact)" : "") << "\n";
    return 0;
}

}  // namespace cli_detail

/// Entry point behind main(): parses argv, runs one subcommand, maps
/// exceptions to exit codes (1 validation, 2 runtime).
inline int cli_dispatch(int argc, const char* const* argv) {
    CLI::App app{"training and evaluation for segmentation across disjointly labeled datasets",
                 kToolName};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);
    const auto args = cli_detail::collect_args(argc, argv);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a phantom dataset");
    std::string synth_params, synth_out, synth_annotation = "joint";
    int synth_n = 1;
    std::uint64_t synth_seed = 0;
    bool synth_seed_set = false;
    synth->add_option("--params", synth_params, "phantom parameter JSON");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n", synth_n, "number of volumes")->required();
    synth->add_option("--annotation", synth_annotation, "anatomy|lesion|joint")
        ->check(CLI::IsMember({"anatomy", "lesion", "joint"}));
    synth->add_option("--seed", synth_seed, "base seed")->each([&](const std::string&) {
        synth_seed_set = true;
    });

    // train / train-multi
    cli_detail::TrainCliArgs train_args;
    auto* train = app.add_subcommand("train", "train one model on all datasets");
    cli_detail::add_train_flags(train, train_args, true);
    cli_detail::TrainCliArgs multi_args;
    auto* train_multi_cmd =
        app.add_subcommand("train-multi", "train one model per dataset");
    cli_detail::add_train_flags(train_multi_cmd, multi_args, false);

    // predict
    auto* predict = app.add_subcommand("predict", "segment a volume with a checkpoint");
    std::string pr_ckpt, pr_out;
    std::vector<std::string> pr_images;
    int pr_stride = 0;
    predict->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
    predict->add_option("--image", pr_images, "modality=path (repeatable)")->required();
    predict->add_option("--out", pr_out, "output mask path")->required();
    predict->add_option("--stride", pr_stride, "sliding window stride (default: half patch)");

    // fuse
    auto* fuse = app.add_subcommand("fuse", "overlay a lesion mask onto an anatomy mask");
    std::string fu_anatomy, fu_lesion, fu_out;
    fuse->add_option("--anatomy", fu_anatomy, "anatomy mask")->required();
    fuse->add_option("--lesion", fu_lesion, "lesion mask")->required();
    fuse->add_option("--out", fu_out, "output mask path")->required();

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Dice of predictions against a manifest");
    std::string ev_pred, ev_truth, ev_out;
    evaluate->add_option("--pred", ev_pred, "directory of predicted masks")->required();
    evaluate->add_option("--truth", ev_truth, "ground-truth dataset manifest")->required();
    evaluate->add_option("--out", ev_out, "output directory")->required();

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "verify loss gradients numerically");
    std::string gc_loss = "ace";
    std::uint64_t gc_seed = 0;
    double gc_tol = 1e-4;
    int gc_instances = 20;
    gradcheck->add_option("--loss", gc_loss, "ace|ce|dice")
        ->check(CLI::IsMember({"ace", "ce", "dice"}));
    gradcheck->add_option("--seed", gc_seed, "seed");
    gradcheck->add_option("--tol", gc_tol, "max relative error");
    gradcheck->add_option("--instances", gc_instances, "random instances to test");

    // experiment
    auto* experiment = app.add_subcommand("experiment", "run the full system comparison");
    std::string ex_config;
    experiment->add_option("--config", ex_config, "experiment config JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed())
            return cli_detail::cmd_synth(synth_params, synth_out, synth_n, synth_annotation,
                                         synth_seed_set ? std::optional<std::uint64_t>(synth_seed)
                                                        : std::nullopt,
                                         args);
        if (train->parsed()) return cli_detail::cmd_train(train_args, args);
        if (train_multi_cmd->parsed()) return cli_detail::cmd_train_multi(multi_args, args);
        if (predict->parsed())
            return cli_detail::cmd_predict(pr_ckpt, pr_images, pr_out, pr_stride, args);
        if (fuse->parsed()) return cli_detail::cmd_fuse(fu_anatomy, fu_lesion, fu_out, args);
        if (evaluate->parsed()) return cli_detail::cmd_evaluate(ev_pred, ev_truth, ev_out, args);
        if (gradcheck->parsed())
            return cli_detail::cmd_gradcheck(gc_loss, gc_seed, gc_tol, gc_instances, args);
        if (experiment->parsed()) return cli_detail::cmd_experiment(ex_config, args);
        std::cerr << app.help();
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << kToolName << ": " << e.what() << "\n";
        return 1;
    } catch (const RuntimeFailure& e) {
        std::cerr << kToolName << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << kToolName << ": unexpected error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace hetseg
