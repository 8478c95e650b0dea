#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hetseg/data.hpp"
#include "hetseg/errors.hpp"
#include "hetseg/labelspace.hpp"
#include "hetseg/manifest.hpp"
#include "hetseg/metrics.hpp"
#include "hetseg/nifti.hpp"
#include "hetseg/phantom.hpp"
#include "hetseg/training.hpp"

namespace hetseg {

inline constexpr int kExperimentSchemaVersion = 1;

/// The comparison systems: one shared model per loss, plus the baseline of
/// independent per-dataset models whose outputs are fused.
enum class SystemKind { ace, ce, dice, multi };

inline std::string to_string(SystemKind s) {
    switch (s) {
        case SystemKind::ace: return "ace";
        case SystemKind::ce: return "ce";
        case SystemKind::dice: return "dice";
        case SystemKind::multi: return "multi";
    }
    throw ConfigError("invalid system kind");
}

inline SystemKind system_kind_from_string(const std::string& s) {
    if (s == "ace") return SystemKind::ace;
    if (s == "ce") return SystemKind::ce;
    if (s == "dice") return SystemKind::dice;
    if (s == "multi") return SystemKind::multi;
    throw ConfigError("unknown system '" + s + "' (expected ace|ce|dice|multi)");
}

/// Phantom data generation plan: two disjointly annotated training datasets
/// plus jointly annotated validation and test sets.
struct PhantomPlan {
    PhantomParams params;
    int n_train_anatomy = 12;
    int n_train_lesion = 12;
    int n_val = 4;
    int n_test = 8;
};

inline void validate(const PhantomPlan& plan) {
    validate(plan.params);
    if (plan.n_train_anatomy < 1 || plan.n_train_lesion < 1)
        throw ConfigError("phantom plan needs at least one training volume per dataset");
    if (plan.n_val < 0 || plan.n_test < 1)
        throw ConfigError("phantom plan needs n_val >= 0 and n_test >= 1");
}

/// Pre-existing data given as dataset manifests instead of phantoms. All
/// masks of val/test manifests must be jointly annotated; their labels are
/// matched to the training label space by name.
struct ManifestPlan {
    std::vector<std::string> train;
    std::string val;
    std::string test;
};

inline void validate(const ManifestPlan& plan) {
    if (plan.train.empty()) throw ConfigError("manifest plan needs training datasets");
    if (plan.test.empty()) throw ConfigError("manifest plan needs a test manifest");
}

struct ExperimentConfig {
    int schema_version = kExperimentSchemaVersion;
    std::uint64_t master_seed = 0;
    std::string output_dir;
    std::vector<SystemKind> systems{SystemKind::ace, SystemKind::ce, SystemKind::dice,
                                    SystemKind::multi};
    std::optional<PhantomPlan> phantom;
    std::optional<ManifestPlan> manifests;
    ModelConfig model;
    TrainConfig train;
};

inline void validate(const ExperimentConfig& cfg) {
    if (cfg.schema_version != kExperimentSchemaVersion)
        throw ConfigError("unsupported experiment schema_version " +
                          std::to_string(cfg.schema_version));
    if (cfg.output_dir.empty()) throw ConfigError("experiment needs an output_dir");
    if (cfg.systems.empty()) throw ConfigError("experiment needs at least one system");
    if (cfg.phantom.has_value() == cfg.manifests.has_value())
        throw ConfigError("experiment needs exactly one of 'phantom' or 'datasets'");
    if (cfg.phantom) validate(*cfg.phantom);
    if (cfg.manifests) validate(*cfg.manifests);
    if (cfg.model.base_channels < 1) throw ConfigError("base_channels must be positive");
    if (cfg.model.depth < 2) throw ConfigError("depth must be at least 2");
    validate(cfg.train);
}

/// One evaluated system: per-subject per-class Dice on the test set plus the
/// training reports behind it.
struct SystemResult {
    SystemKind kind = SystemKind::ace;
    std::uint64_t seed = 0;
    DiceScores scores;
    std::vector<double> subject_mean_dice;
    std::vector<ClassSummary> summaries;
    std::vector<std::string> train_names;  // one per report; dataset names for multi
    std::vector<TrainReport> train_reports;
};

struct SystemComparison {
    std::string system_a;
    std::string system_b;
    WilcoxonResult test;
};

struct ExperimentReport {
    std::uint64_t master_seed = 0;
    std::vector<std::string> class_names;
    std::vector<int> class_ids;
    std::vector<std::string> class_kinds;
    std::vector<std::string> subject_ids;
    std::vector<SystemResult> systems;
    std::vector<SystemComparison> comparisons;
    std::vector<std::pair<std::string, std::uint64_t>> seeds;
};

namespace detail {

inline void json_check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                            const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* a) { return key == a; }) == allowed.end())
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
T json_get(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline Index3 json_index3(const nlohmann::json& j, const char* key, Index3 fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (v.is_number_integer()) {
        const auto n = v.get<std::int64_t>();
        return {n, n, n};
    }
    if (!v.is_array() || v.size() != 3)
        throw ConfigError(std::string("'") + key + "' must be an integer or a 3-element array");
    return {v.at(0).get<std::int64_t>(), v.at(1).get<std::int64_t>(), v.at(2).get<std::int64_t>()};
}

}  // namespace detail

inline PhantomParams phantom_params_from_json(const nlohmann::json& j) {
    detail::json_check_keys(j,
                            {"grid_size", "n_tissue_shells", "n_lesions_min", "n_lesions_max",
                             "lesion_radius_min", "lesion_radius_max", "modalities", "tissue_names",
                             "lesion_name", "intensity_means", "intensity_noise_sd",
                             "deformation_amplitude", "seed", "n_train_anatomy", "n_train_lesion",
                             "n_val", "n_test"},
                            "phantom block");
    PhantomParams p;
    p.grid_size = detail::json_index3(j, "grid_size", p.grid_size);
    p.n_tissue_shells = detail::json_get(j, "n_tissue_shells", p.n_tissue_shells);
    p.n_lesions_min = detail::json_get(j, "n_lesions_min", p.n_lesions_min);
    p.n_lesions_max = detail::json_get(j, "n_lesions_max", p.n_lesions_max);
    p.lesion_radius_min = detail::json_get(j, "lesion_radius_min", p.lesion_radius_min);
    p.lesion_radius_max = detail::json_get(j, "lesion_radius_max", p.lesion_radius_max);
    p.modalities = detail::json_get(j, "modalities", p.modalities);
    p.tissue_names = detail::json_get(j, "tissue_names", p.tissue_names);
    p.lesion_name = detail::json_get(j, "lesion_name", p.lesion_name);
    if (j.contains("intensity_means"))
        p.intensity_means = j.at("intensity_means").get<std::vector<std::vector<float>>>();
    else if (p.n_tissue_shells + 2 != static_cast<int>(p.intensity_means.size()))
        throw ConfigError("non-default n_tissue_shells requires explicit intensity_means");
    p.intensity_noise_sd = detail::json_get(j, "intensity_noise_sd", p.intensity_noise_sd);
    p.deformation_amplitude = detail::json_get(j, "deformation_amplitude", p.deformation_amplitude);
    p.seed = detail::json_get(j, "seed", p.seed);
    return p;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    detail::json_check_keys(j,
                            {"loss", "complement", "batch_size", "patch_size", "iterations",
                             "validation_every", "early_stop_patience", "adam", "seed"},
                            "train block");
    TrainConfig cfg;
    if (j.contains("loss")) cfg.loss = loss_kind_from_string(j.at("loss").get<std::string>());
    if (j.contains("complement"))
        cfg.complement = complement_mode_from_string(j.at("complement").get<std::string>());
    cfg.batch_size = detail::json_get(j, "batch_size", cfg.batch_size);
    cfg.patch_size = detail::json_index3(j, "patch_size", cfg.patch_size);
    cfg.iterations = detail::json_get(j, "iterations", cfg.iterations);
    cfg.validation_every = detail::json_get(j, "validation_every", cfg.validation_every);
    cfg.early_stop_patience = detail::json_get(j, "early_stop_patience", cfg.early_stop_patience);
    cfg.seed = detail::json_get(j, "seed", cfg.seed);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        detail::json_check_keys(a, {"lr", "beta1", "beta2", "eps"}, "adam block");
        cfg.adam.lr = detail::json_get(a, "lr", cfg.adam.lr);
        cfg.adam.beta1 = detail::json_get(a, "beta1", cfg.adam.beta1);
        cfg.adam.beta2 = detail::json_get(a, "beta2", cfg.adam.beta2);
        cfg.adam.eps = detail::json_get(a, "eps", cfg.adam.eps);
    }
    return cfg;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    detail::json_check_keys(j, {"base_channels", "depth"}, "model block");
    ModelConfig cfg;
    cfg.base_channels = detail::json_get(j, "base_channels", cfg.base_channels);
    cfg.depth = detail::json_get(j, "depth", cfg.depth);
    return cfg;
}

/// Parses and fully validates an experiment configuration before any
/// compute starts.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    detail::json_check_keys(j,
                            {"schema_version", "master_seed", "output_dir", "systems", "phantom",
                             "datasets", "model", "train"},
                            "experiment config");
    if (!j.contains("schema_version"))
        throw ConfigError("experiment config needs a schema_version");
    ExperimentConfig cfg;
    cfg.schema_version = j.at("schema_version").get<int>();
    cfg.master_seed = detail::json_get<std::uint64_t>(j, "master_seed", 0);
    cfg.output_dir = detail::json_get<std::string>(j, "output_dir", "");
    if (j.contains("systems")) {
        cfg.systems.clear();
        for (const auto& s : j.at("systems"))
            cfg.systems.push_back(system_kind_from_string(s.get<std::string>()));
        std::sort(cfg.systems.begin(), cfg.systems.end());
        cfg.systems.erase(std::unique(cfg.systems.begin(), cfg.systems.end()), cfg.systems.end());
    }
    if (j.contains("phantom")) {
        PhantomPlan plan;
        const auto& p = j.at("phantom");
        plan.params = phantom_params_from_json(p);
        plan.n_train_anatomy = detail::json_get(p, "n_train_anatomy", plan.n_train_anatomy);
        plan.n_train_lesion = detail::json_get(p, "n_train_lesion", plan.n_train_lesion);
        plan.n_val = detail::json_get(p, "n_val", plan.n_val);
        plan.n_test = detail::json_get(p, "n_test", plan.n_test);
        cfg.phantom = std::move(plan);
    }
    if (j.contains("datasets")) {
        const auto& d = j.at("datasets");
        detail::json_check_keys(d, {"train", "val", "test"}, "datasets block");
        ManifestPlan plan;
        plan.train = detail::json_get(d, "train", plan.train);
        plan.val = detail::json_get(d, "val", plan.val);
        plan.test = detail::json_get(d, "test", plan.test);
        cfg.manifests = std::move(plan);
    }
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    validate(cfg);
    return cfg;
}

namespace detail {

/// Subjects of a standalone jointly-annotated dataset, with masks remapped by
/// label name into the joint training space.
inline std::vector<SubjectData> load_joint_subjects(const DatasetDecl& decl,
                                                    const LabelSpace& space,
                                                    std::vector<std::string>* subject_ids) {
    LabelSpace own = build_label_space({decl});
    DatasetData data = load_dataset(own.dataset(decl.name));
    std::vector<SubjectData> out;
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
        SubjectData s = std::move(data.subjects[i]);
        s.mask = remap_mask(s.mask, own, space);
        if (subject_ids) {
            std::filesystem::path m(decl.volume_entries.at(i).mask);
            std::string stem = m.filename().string();
            const auto pos = stem.find(".nii");
            if (pos != std::string::npos) stem.resize(pos);
            subject_ids->push_back(stem);
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline std::string format_double(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed while writing " + path.string());
}

inline nlohmann::ordered_json train_report_json(const TrainReport& r) {
    nlohmann::ordered_json j;
    j["iterations_run"] = r.losses.size();
    j["first_loss"] = r.losses.empty() ? 0.0 : r.losses.front();
    j["final_loss"] = r.losses.empty() ? 0.0 : r.losses.back();
    j["best_iteration"] = r.best_iteration;
    j["best_mean_dice"] = r.best_mean_dice;
    j["early_stopped"] = r.early_stopped;
    j["validation_iterations"] = r.validation_iterations;
    j["validation_mean_dice"] = r.validation_mean_dice;
    return j;
}

inline nlohmann::ordered_json system_result_json(const SystemResult& sr) {
    nlohmann::ordered_json j;
    j["system"] = to_string(sr.kind);
    j["seed"] = sr.seed;
    nlohmann::ordered_json classes = nlohmann::ordered_json::array();
    for (const auto& s : sr.summaries) {
        nlohmann::ordered_json c;
        c["class"] = s.class_name;
        c["mean"] = s.mean;
        c["std"] = s.std_dev;
        c["n"] = s.n;
        if (s.single_subject) c["single_subject"] = true;
        classes.push_back(std::move(c));
    }
    j["per_class"] = std::move(classes);
    j["per_subject_mean_dice"] = sr.subject_mean_dice;
    nlohmann::ordered_json trains = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < sr.train_reports.size(); ++i) {
        nlohmann::ordered_json t = train_report_json(sr.train_reports[i]);
        t["name"] = sr.train_names[i];
        trains.push_back(std::move(t));
    }
    j["training"] = std::move(trains);
    return j;
}

}  // namespace detail

/// Renders the per-class mean/std table, classes as rows and systems as
/// column pairs.
inline std::string render_dice_table(const ExperimentReport& report) {
    std::string out;
    const int name_w = 12;
    auto pad = [](std::string s, int w) {
        if (static_cast<int>(s.size()) < w) s.resize(static_cast<std::size_t>(w), ' ');
        return s;
    };
    out += pad("class", name_w);
    for (const auto& sr : report.systems) out += "| " + pad(to_string(sr.kind), 14);
    out += "\n";
    out += pad("", name_w);
    for (std::size_t i = 0; i < report.systems.size(); ++i) out += "| " + pad("mean   std", 14);
    out += "\n";
    out += std::string(static_cast<std::size_t>(name_w) + report.systems.size() * 16, '-') + "\n";
    for (std::size_t c = 0; c < report.class_names.size(); ++c) {
        out += pad(report.class_names[c], name_w);
        for (const auto& sr : report.systems) {
            const auto& s = sr.summaries.at(c);
            out += "| " + pad(detail::format_double(s.mean, 3) + "  " +
                                  detail::format_double(s.std_dev, 3),
                              14);
        }
        out += "\n";
    }
    return out;
}

/// One CSV row per system, subject, and class.
inline std::string render_dice_csv(const ExperimentReport& report) {
    std::string out = "system,subject,class,dice\n";
    for (const auto& sr : report.systems)
        for (std::size_t s = 0; s < sr.scores.subject_ids.size(); ++s)
            for (std::size_t c = 0; c < sr.scores.class_names.size(); ++c)
                out += to_string(sr.kind) + "," + sr.scores.subject_ids[s] + "," +
                       sr.scores.class_names[c] + "," +
                       detail::format_double(sr.scores.values[s][c], 9) + "\n";
    return out;
}

inline nlohmann::ordered_json experiment_report_json(const ExperimentReport& report) {
    nlohmann::ordered_json j;
    j["schema_version"] = kExperimentSchemaVersion;
    j["master_seed"] = report.master_seed;
    nlohmann::ordered_json seeds;
    for (const auto& [name, value] : report.seeds) seeds[name] = value;
    j["seeds"] = std::move(seeds);
    nlohmann::ordered_json classes = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < report.class_names.size(); ++c) {
        nlohmann::ordered_json e;
        e["name"] = report.class_names[c];
        e["id"] = report.class_ids[c];
        e["kind"] = report.class_kinds[c];
        classes.push_back(std::move(e));
    }
    j["classes"] = std::move(classes);
    j["subjects"] = report.subject_ids;
    nlohmann::ordered_json systems = nlohmann::ordered_json::array();
    for (const auto& sr : report.systems) systems.push_back(detail::system_result_json(sr));
    j["systems"] = std::move(systems);
    nlohmann::ordered_json tests = nlohmann::ordered_json::array();
    for (const auto& cmp : report.comparisons) {
        nlohmann::ordered_json t;
        t["a"] = cmp.system_a;
        t["b"] = cmp.system_b;
        t["statistic"] = cmp.test.statistic;
        t["p_value"] = cmp.test.p_value;
        t["n_effective"] = cmp.test.n_effective;
        t["exact"] = cmp.test.exact;
        tests.push_back(std::move(t));
    }
    j["wilcoxon"] = std::move(tests);
    return j;
}

/// Runs the full comparison: data preparation, one training per system,
/// test-set prediction (the per-dataset baseline goes through label fusion),
/// Dice tables, and pairwise Wilcoxon tests. Everything written under
/// cfg.output_dir is a pure function of the config.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    namespace fs = std::filesystem;
    const fs::path out_dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    fs::create_directories(out_dir / "systems", ec);
    fs::create_directories(out_dir / "checkpoints", ec);

    ExperimentReport report;
    report.master_seed = cfg.master_seed;
    auto seed_for = [&](const std::string& component) {
        const std::uint64_t s = derive_seed(cfg.master_seed, component);
        report.seeds.emplace_back(component, s);
        return s;
    };

    // Data preparation.
    std::vector<DatasetDecl> train_decls;
    DatasetDecl val_decl;
    DatasetDecl test_decl;
    bool have_val = false;
    if (cfg.phantom) {
        const PhantomPlan& plan = *cfg.phantom;
        const fs::path data_dir = out_dir / "data";
        auto gen = [&](const std::string& name, int n, AnnotationMode mode) {
            PhantomParams p = plan.params;
            p.seed = seed_for("phantom:" + name);
            generate_dataset(p, n, mode, data_dir / name);
            return read_dataset_manifest(data_dir / name / "dataset.json");
        };
        train_decls.push_back(gen("tissue", plan.n_train_anatomy, AnnotationMode::anatomy_only));
        train_decls.push_back(gen("lesions", plan.n_train_lesion, AnnotationMode::lesion_only));
        if (plan.n_val > 0) {
            val_decl = gen("val", plan.n_val, AnnotationMode::joint);
            have_val = true;
        }
        test_decl = gen("test", plan.n_test, AnnotationMode::joint);
    } else {
        for (const auto& path : cfg.manifests->train)
            train_decls.push_back(read_dataset_manifest(path));
        if (!cfg.manifests->val.empty()) {
            val_decl = read_dataset_manifest(cfg.manifests->val);
            have_val = true;
        }
        test_decl = read_dataset_manifest(cfg.manifests->test);
    }

    LabelSpace space = build_label_space(train_decls);
    std::vector<DatasetData> train_data;
    for (const auto& decl : train_decls) train_data.push_back(load_dataset(space.dataset(decl.name)));
    std::vector<SubjectData> val_subjects;
    if (have_val) val_subjects = detail::load_joint_subjects(val_decl, space, nullptr);
    std::vector<SubjectData> test_subjects =
        detail::load_joint_subjects(test_decl, space, &report.subject_ids);

    for (int c = 1; c < space.num_classes(); ++c) {
        report.class_ids.push_back(c);
        report.class_names.push_back(space.label(c).name);
        report.class_kinds.push_back(to_string(space.label(c).kind));
    }

    // Train and evaluate each system.
    for (SystemKind kind : cfg.systems) {
        SystemResult sr;
        sr.kind = kind;
        sr.seed = seed_for("train:" + to_string(kind));
        sr.scores.class_ids = report.class_ids;
        sr.scores.class_names = report.class_names;
        sr.scores.subject_ids = report.subject_ids;

        TrainConfig tc = cfg.train;
        tc.seed = sr.seed;

        ModelConfig arch = cfg.model;
        arch.patch_size = tc.patch_size;

        std::vector<SegmentationMask> predictions;
        if (kind == SystemKind::multi) {
            tc.checkpoint_path = (out_dir / "checkpoints" / "multi.hsegckpt").string();
            auto models = train_multi(space, train_data, val_subjects, tc, arch);
            for (auto& mm : models) {
                sr.train_names.push_back(mm.dataset_name);
                sr.train_reports.push_back(mm.report);
            }
            for (const auto& subject : test_subjects)
                predictions.push_back(predict_multi(models, subject.volume, space));
        } else {
            tc.loss = kind == SystemKind::ace   ? LossKind::ace
                      : kind == SystemKind::ce  ? LossKind::ce
                                                : LossKind::dice;
            tc.checkpoint_path =
                (out_dir / "checkpoints" / (to_string(kind) + ".hsegckpt")).string();
            arch.in_channels = static_cast<int>(space.shared_modalities.size());
            arch.num_classes = space.num_classes();
            auto trained = train_single(space, train_data, val_subjects, tc, arch);
            sr.train_names.push_back("single");
            sr.train_reports.push_back(trained.report);
            for (const auto& subject : test_subjects)
                predictions.push_back(predict_volume(*trained.model, subject.volume).mask);
        }

        const fs::path pred_dir = out_dir / "predictions" / to_string(kind);
        fs::create_directories(pred_dir, ec);
        if (ec) throw IoError("cannot create " + pred_dir.string() + ": " + ec.message());
        for (std::size_t s = 0; s < test_subjects.size(); ++s) {
            write_nifti((pred_dir / (report.subject_ids[s] + ".nii.gz")).string(), predictions[s]);
            std::vector<double> row;
            std::vector<char> flags;
            for (int c : report.class_ids) {
                row.push_back(dice_coefficient(predictions[s], test_subjects[s].mask, c));
                const auto cls = static_cast<std::uint8_t>(c);
                const bool in_pred = std::find(predictions[s].data.begin(),
                                               predictions[s].data.end(), cls) !=
                                     predictions[s].data.end();
                const bool in_truth = std::find(test_subjects[s].mask.data.begin(),
                                                test_subjects[s].mask.data.end(), cls) !=
                                      test_subjects[s].mask.data.end();
                flags.push_back(!in_pred && !in_truth);
            }
            double mean = 0.0;
            for (double d : row) mean += d;
            sr.subject_mean_dice.push_back(mean / static_cast<double>(row.size()));
            sr.scores.values.push_back(std::move(row));
            sr.scores.both_empty.push_back(std::move(flags));
        }
        sr.summaries = summarize(sr.scores);

        detail::write_text_file(out_dir / "systems" / (to_string(kind) + ".json"),
                                detail::system_result_json(sr).dump(2) + "\n");
        report.systems.push_back(std::move(sr));
    }

    // Pairwise Wilcoxon over per-subject mean Dice.
    for (std::size_t a = 0; a < report.systems.size(); ++a)
        for (std::size_t b = a + 1; b < report.systems.size(); ++b) {
            SystemComparison cmp;
            cmp.system_a = to_string(report.systems[a].kind);
            cmp.system_b = to_string(report.systems[b].kind);
            try {
                cmp.test = wilcoxon_signed_rank(report.systems[a].subject_mean_dice,
                                                report.systems[b].subject_mean_dice);
            } catch (const InsufficientData&) {
                cmp.test.statistic = 0.0;
                cmp.test.p_value = 1.0;
                cmp.test.n_effective = 0;
                cmp.test.exact = false;
            }
            report.comparisons.push_back(std::move(cmp));
        }

    detail::write_text_file(out_dir / "dice.csv", render_dice_csv(report));
    detail::write_text_file(out_dir / "table.txt", render_dice_table(report));
    detail::write_text_file(out_dir / "experiment_report.json",
                            experiment_report_json(report).dump(2) + "\n");
    return report;
}

}  // namespace hetseg
