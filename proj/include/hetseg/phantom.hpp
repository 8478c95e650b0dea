#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hetseg/errors.hpp"
#include "hetseg/labelspace.hpp"
#include "hetseg/manifest.hpp"
#include "hetseg/nifti.hpp"
#include "hetseg/rng.hpp"
#include "hetseg/tensor.hpp"
#include "hetseg/volume.hpp"

namespace hetseg {

/// Geometry and appearance of one synthetic brain-like volume: concentric
/// smoothly-deformed ellipsoidal tissue shells plus bright lesion blobs.
/// intensity_means is indexed [label][channel] with labels ordered
/// background, tissue shells outside-in, lesion.
struct PhantomParams {
    Index3 grid_size{64, 64, 64};
    int n_tissue_shells = 3;
    int n_lesions_min = 2;
    int n_lesions_max = 4;
    float lesion_radius_min = 3.0f;
    float lesion_radius_max = 6.0f;
    std::vector<std::string> modalities{"t1", "flair"};
    std::vector<std::string> tissue_names{"csf", "gm", "wm"};
    std::string lesion_name = "lesion";
    std::vector<std::vector<float>> intensity_means{
        {0.05f, 0.05f},  // background
        {0.25f, 0.20f},  // csf
        {0.55f, 0.50f},  // gm
        {0.85f, 0.45f},  // wm
        {0.83f, 0.95f},  // lesion: near-isointense to wm in t1, hyperintense in flair
    };
    float intensity_noise_sd = 0.03f;
    float deformation_amplitude = 2.5f;
    std::uint64_t seed = 0;

    int lesion_label_id() const { return n_tissue_shells + 1; }
};

inline void validate(const PhantomParams& p) {
    if (p.n_tissue_shells < 1) throw ConfigError("phantom needs at least one tissue shell");
    for (int d = 0; d < 3; ++d)
        if (p.grid_size[static_cast<std::size_t>(d)] < 16)
            throw ConfigError("phantom grid must be at least 16 voxels per axis");
    const auto min_dim = *std::min_element(p.grid_size.begin(), p.grid_size.end());
    if (!(p.lesion_radius_min > 0.0f) || p.lesion_radius_max < p.lesion_radius_min)
        throw ConfigError("lesion radius range must satisfy 0 < min <= max");
    if (p.lesion_radius_max >= static_cast<float>(min_dim) / 2.0f)
        throw ConfigError("lesion radius must be smaller than half the grid");
    if (p.n_lesions_min < 0 || p.n_lesions_max < p.n_lesions_min)
        throw ConfigError("lesion count range must satisfy 0 <= min <= max");
    if (p.intensity_noise_sd < 0.0f) throw ConfigError("intensity noise sd must be >= 0");
    if (p.deformation_amplitude < 0.0f) throw ConfigError("deformation amplitude must be >= 0");
    if (p.modalities.empty()) throw ConfigError("phantom needs at least one modality");
    if (static_cast<int>(p.tissue_names.size()) != p.n_tissue_shells)
        throw ConfigError("tissue_names must name every shell");
    if (p.intensity_means.size() != static_cast<std::size_t>(p.n_tissue_shells + 2))
        throw ConfigError("intensity_means needs one row per label (background, shells, lesion)");
    for (const auto& row : p.intensity_means)
        if (row.size() != p.modalities.size())
            throw ConfigError("every intensity_means row needs one value per modality");
}

/// Label definitions matching generate_phantom's mask ids:
/// 0 background, 1..n tissue shells outside-in, n+1 lesion.
inline LabelSpace phantom_label_space(const PhantomParams& p) {
    validate(p);
    LabelSpace space;
    space.name = "phantom";
    space.labels.push_back(LabelDef{0, "background", LabelKind::background});
    for (int s = 0; s < p.n_tissue_shells; ++s)
        space.labels.push_back(
            LabelDef{s + 1, p.tissue_names[static_cast<std::size_t>(s)], LabelKind::anatomy});
    space.labels.push_back(LabelDef{p.lesion_label_id(), p.lesion_name, LabelKind::lesion});
    space.shared_modalities = p.modalities;
    return space;
}

namespace detail {

// One low-frequency sinusoidal displacement component per axis:
// amplitude * mean_h w_h * sin(2*pi*(kx x/X + ky y/Y + kz z/Z) + phase_h).
struct Harmonic {
    double kx, ky, kz, phase, weight;
};

struct DisplacementField {
    std::array<std::vector<Harmonic>, 3> axes;
    double amplitude = 0.0;
    Index3 grid{};

    double eval(int axis, std::int64_t x, std::int64_t y, std::int64_t z) const {
        const auto& hs = axes[static_cast<std::size_t>(axis)];
        double acc = 0.0;
        for (const auto& h : hs) {
            const double arg = 2.0 * M_PI *
                                   (h.kx * static_cast<double>(x) / static_cast<double>(grid[0]) +
                                    h.ky * static_cast<double>(y) / static_cast<double>(grid[1]) +
                                    h.kz * static_cast<double>(z) / static_cast<double>(grid[2])) +
                               h.phase;
            acc += h.weight * std::sin(arg);
        }
        return amplitude * acc / static_cast<double>(hs.size());
    }
};

inline DisplacementField draw_displacement(CounterRng& rng, const PhantomParams& p) {
    DisplacementField field;
    field.amplitude = p.deformation_amplitude;
    field.grid = p.grid_size;
    for (int axis = 0; axis < 3; ++axis) {
        for (int h = 0; h < 2; ++h) {
            Harmonic hm;
            hm.kx = static_cast<double>(1 + rng.uniform_int(2));
            hm.ky = static_cast<double>(1 + rng.uniform_int(2));
            hm.kz = static_cast<double>(1 + rng.uniform_int(2));
            hm.phase = rng.uniform() * 2.0 * M_PI;
            hm.weight = 0.5 + 0.5 * rng.uniform();
            field.axes[static_cast<std::size_t>(axis)].push_back(hm);
        }
    }
    return field;
}

// 3-point binomial smoothing ([0.25, 0.5, 0.25]) along each axis with
// replicated borders, applied in place to one channel.
inline void smooth_channel(Tensor& data, std::int64_t channel) {
    const std::int64_t X = data.dim(1), Y = data.dim(2), Z = data.dim(3);
    float* ch = data.data() + channel * X * Y * Z;
    const auto idx = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return (x * Y + y) * Z + z;
    };
    std::vector<float> buf(static_cast<std::size_t>(X * Y * Z));
    const auto pass = [&](int axis) {
        for (std::int64_t x = 0; x < X; ++x)
            for (std::int64_t y = 0; y < Y; ++y)
                for (std::int64_t z = 0; z < Z; ++z) {
                    std::int64_t lo[3] = {x, y, z}, hi[3] = {x, y, z};
                    const std::int64_t n = axis == 0 ? X : axis == 1 ? Y : Z;
                    std::int64_t& l = lo[axis];
                    std::int64_t& h = hi[axis];
                    l = std::max<std::int64_t>(l - 1, 0);
                    h = std::min<std::int64_t>(h + 1, n - 1);
                    buf[static_cast<std::size_t>(idx(x, y, z))] =
                        0.25f * ch[idx(lo[0], lo[1], lo[2])] + 0.5f * ch[idx(x, y, z)] +
                        0.25f * ch[idx(hi[0], hi[1], hi[2])];
                }
        std::copy(buf.begin(), buf.end(), ch);
    };
    pass(0);
    pass(1);
    pass(2);
}

inline std::string zero_padded(int v, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*d", width, v);
    return buf;
}

}  // namespace detail

/// Generates one phantom: tissue shells labeled 1..n outside-in under a
/// smooth sinusoidal deformation, lesion blobs strictly inside the innermost
/// two shells overwriting tissue, per-label intensity means plus Gaussian
/// noise followed by binomial smoothing. Bit-identical for equal params.
inline std::pair<Volume, SegmentationMask> generate_phantom(const PhantomParams& p) {
    validate(p);
    const std::int64_t X = p.grid_size[0], Y = p.grid_size[1], Z = p.grid_size[2];
    const std::int64_t n_vox = X * Y * Z;
    const int n = p.n_tissue_shells;
    CounterRng rng(p.seed);

    const detail::DisplacementField disp = detail::draw_displacement(rng, p);
    std::array<double, 3> center{(static_cast<double>(X) - 1) / 2.0,
                                 (static_cast<double>(Y) - 1) / 2.0,
                                 (static_cast<double>(Z) - 1) / 2.0};
    std::array<double, 3> semi_axes;
    for (int d = 0; d < 3; ++d)
        semi_axes[static_cast<std::size_t>(d)] =
            0.42 * static_cast<double>(p.grid_size[static_cast<std::size_t>(d)]) *
            (0.92 + 0.10 * rng.uniform());

    // Shell boundaries chosen for roughly equal shell volumes:
    // shell s occupies normalized radius (b[s], b[s-1]], b[0] = 1.
    std::vector<double> bounds(static_cast<std::size_t>(n) + 1);
    for (int s = 0; s <= n; ++s)
        bounds[static_cast<std::size_t>(s)] =
            std::cbrt(static_cast<double>(n - s) / static_cast<double>(n));

    std::vector<std::uint8_t> tissue(static_cast<std::size_t>(n_vox), 0);
    const auto vidx = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return (x * Y + y) * Z + z;
    };
    for (std::int64_t x = 0; x < X; ++x)
        for (std::int64_t y = 0; y < Y; ++y)
            for (std::int64_t z = 0; z < Z; ++z) {
                const double ux = (static_cast<double>(x) + disp.eval(0, x, y, z) - center[0]) / semi_axes[0];
                const double uy = (static_cast<double>(y) + disp.eval(1, x, y, z) - center[1]) / semi_axes[1];
                const double uz = (static_cast<double>(z) + disp.eval(2, x, y, z) - center[2]) / semi_axes[2];
                const double rho = std::sqrt(ux * ux + uy * uy + uz * uz);
                if (rho > 1.0) continue;
                int shell = n;
                for (int s = 1; s <= n; ++s)
                    if (rho > bounds[static_cast<std::size_t>(s)]) {
                        shell = s;
                        break;
                    }
                tissue[static_cast<std::size_t>(vidx(x, y, z))] = static_cast<std::uint8_t>(shell);
            }

    // Lesions must fit entirely inside the innermost two shells (or the
    // single shell when there is only one).
    const int inner_lo = std::max(1, n - 1);
    const auto inner_ok = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        if (x < 0 || x >= X || y < 0 || y >= Y || z < 0 || z >= Z) return false;
        const int t = tissue[static_cast<std::size_t>(vidx(x, y, z))];
        return t >= inner_lo && t <= n;
    };

    std::vector<std::uint8_t> labels = tissue;
    const std::uint8_t lesion_id = static_cast<std::uint8_t>(p.lesion_label_id());
    const int n_lesions =
        p.n_lesions_min +
        (p.n_lesions_max > p.n_lesions_min
             ? static_cast<int>(rng.uniform_int(
                   static_cast<std::uint64_t>(p.n_lesions_max - p.n_lesions_min + 1)))
             : 0);
    for (int lesion = 0; lesion < n_lesions; ++lesion) {
        const double r = p.lesion_radius_min +
                         (p.lesion_radius_max - p.lesion_radius_min) * rng.uniform();
        const std::int64_t ir = static_cast<std::int64_t>(std::ceil(r));
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            const std::int64_t cx = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(X)));
            const std::int64_t cy = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(Y)));
            const std::int64_t cz = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(Z)));
            if (!inner_ok(cx, cy, cz)) continue;
            bool fits = true;
            for (std::int64_t dx = -ir; dx <= ir && fits; ++dx)
                for (std::int64_t dy = -ir; dy <= ir && fits; ++dy)
                    for (std::int64_t dz = -ir; dz <= ir && fits; ++dz) {
                        if (static_cast<double>(dx * dx + dy * dy + dz * dz) > r * r) continue;
                        if (!inner_ok(cx + dx, cy + dy, cz + dz)) fits = false;
                    }
            if (!fits) continue;
            for (std::int64_t dx = -ir; dx <= ir; ++dx)
                for (std::int64_t dy = -ir; dy <= ir; ++dy)
                    for (std::int64_t dz = -ir; dz <= ir; ++dz) {
                        if (static_cast<double>(dx * dx + dy * dy + dz * dz) > r * r) continue;
                        labels[static_cast<std::size_t>(vidx(cx + dx, cy + dy, cz + dz))] = lesion_id;
                    }
            placed = true;
        }
        if (!placed)
            throw GeometryError("lesion of radius " + std::to_string(r) +
                                " does not fit inside the innermost two shells");
    }

    const std::int64_t n_ch = static_cast<std::int64_t>(p.modalities.size());
    Tensor data({n_ch, X, Y, Z});
    for (std::int64_t c = 0; c < n_ch; ++c) {
        float* ch = data.data() + c * n_vox;
        for (std::int64_t i = 0; i < n_vox; ++i) {
            const auto label = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
            ch[i] = p.intensity_means[label][static_cast<std::size_t>(c)] +
                    p.intensity_noise_sd * static_cast<float>(rng.normal());
        }
        detail::smooth_channel(data, c);
    }

    Volume vol;
    vol.data = std::move(data);
    vol.modality_names = p.modalities;
    vol.voxel_spacing = {1.0f, 1.0f, 1.0f};
    vol.validate();

    SegmentationMask mask = make_mask(p.grid_size);
    mask.label_space_ref = "phantom";
    mask.data = std::move(labels);
    return {std::move(vol), std::move(mask)};
}

/// Splits a jointly-annotated mask into the disjoint-annotation regime:
/// the anatomy mask replaces every lesion voxel by the most frequent tissue
/// label among its 6-neighbors (resolved outside-in, ties to the lowest id;
/// lesion components with no tissue contact fall back to background), the
/// lesion mask replaces every anatomy voxel by background.
inline std::pair<SegmentationMask, SegmentationMask> split_annotations(
    const SegmentationMask& joint, const LabelSpace& space) {
    const int C = space.num_classes();
    std::vector<char> is_lesion(static_cast<std::size_t>(C), 0);
    std::vector<char> is_anatomy(static_cast<std::size_t>(C), 0);
    for (const auto& l : space.labels) {
        if (l.kind == LabelKind::lesion) is_lesion[static_cast<std::size_t>(l.id)] = 1;
        if (l.kind == LabelKind::anatomy) is_anatomy[static_cast<std::size_t>(l.id)] = 1;
    }
    for (std::uint8_t v : joint.data)
        if (v >= C) throw ShapeError("joint mask value " + std::to_string(int(v)) + " >= C");

    SegmentationMask lesion = joint;
    for (auto& v : lesion.data)
        if (is_anatomy[v]) v = 0;

    SegmentationMask anatomy = joint;
    const std::int64_t X = joint.size[0], Y = joint.size[1], Z = joint.size[2];
    const auto vidx = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return (x * Y + y) * Z + z;
    };
    constexpr std::uint8_t kUnresolved = 0xFF;
    std::vector<std::int64_t> pending;
    for (std::int64_t i = 0; i < joint.numel(); ++i)
        if (is_lesion[joint.data[static_cast<std::size_t>(i)]]) {
            anatomy.data[static_cast<std::size_t>(i)] = kUnresolved;
            pending.push_back(i);
        }

    // Multi-pass onion peel; each pass reads the previous pass's state so
    // the result is independent of traversal order.
    std::vector<std::uint8_t> next = anatomy.data;
    while (!pending.empty()) {
        bool changed = false;
        std::vector<std::int64_t> still_pending;
        for (const std::int64_t i : pending) {
            const std::int64_t x = i / (Y * Z), y = (i / Z) % Y, z = i % Z;
            std::array<int, 256> freq{};
            const auto tally = [&](std::int64_t nx, std::int64_t ny, std::int64_t nz) {
                if (nx < 0 || nx >= X || ny < 0 || ny >= Y || nz < 0 || nz >= Z) return;
                const std::uint8_t l = anatomy.data[static_cast<std::size_t>(vidx(nx, ny, nz))];
                if (l != kUnresolved && is_anatomy[l]) ++freq[l];
            };
            tally(x - 1, y, z);
            tally(x + 1, y, z);
            tally(x, y - 1, z);
            tally(x, y + 1, z);
            tally(x, y, z - 1);
            tally(x, y, z + 1);
            int best = -1;
            for (int l = 0; l < C; ++l)
                if (freq[static_cast<std::size_t>(l)] > 0 &&
                    (best < 0 || freq[static_cast<std::size_t>(l)] > freq[static_cast<std::size_t>(best)]))
                    best = l;
            if (best >= 0) {
                next[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
                changed = true;
            } else {
                still_pending.push_back(i);
            }
        }
        anatomy.data = next;
        if (!changed) {
            for (const std::int64_t i : still_pending) anatomy.data[static_cast<std::size_t>(i)] = 0;
            break;
        }
        pending = std::move(still_pending);
    }
    return {std::move(anatomy), std::move(lesion)};
}

enum class AnnotationMode { anatomy_only, lesion_only, joint };

inline std::string to_string(AnnotationMode m) {
    switch (m) {
        case AnnotationMode::anatomy_only: return "anatomy_only";
        case AnnotationMode::lesion_only: return "lesion_only";
        case AnnotationMode::joint: return "joint";
    }
    return "?";
}

inline AnnotationMode annotation_mode_from_string(const std::string& s) {
    if (s == "anatomy_only" || s == "anatomy") return AnnotationMode::anatomy_only;
    if (s == "lesion_only" || s == "lesion") return AnnotationMode::lesion_only;
    if (s == "joint") return AnnotationMode::joint;
    throw ConfigError("unknown annotation mode: " + s);
}

/// Writes n_volumes phantom volume/mask NIfTI pairs (seeds seed+0..n-1) plus
/// a dataset.json manifest into out_dir and returns the dataset description.
/// anatomy_only and lesion_only datasets get split annotations.
inline DatasetSpec generate_dataset(const PhantomParams& params, int n_volumes,
                                    AnnotationMode annotation,
                                    const std::filesystem::path& out_dir) {
    validate(params);
    if (n_volumes < 1) throw ConfigError("generate_dataset needs n_volumes >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    const LabelSpace space = phantom_label_space(params);

    DatasetSpec spec;
    spec.name = out_dir.filename().string().empty() ? "dataset" : out_dir.filename().string();
    spec.modalities = params.modalities;
    spec.role = annotation == AnnotationMode::anatomy_only ? DatasetRole::anatomy
                                                           : DatasetRole::lesion;
    for (const auto& l : space.labels) {
        if (l.kind == LabelKind::background) continue;
        if (annotation == AnnotationMode::anatomy_only && l.kind != LabelKind::anatomy) continue;
        if (annotation == AnnotationMode::lesion_only && l.kind != LabelKind::lesion) continue;
        spec.labels.push_back(l);
        spec.file_ids.push_back(l.id);
    }

    for (int v = 0; v < n_volumes; ++v) {
        PhantomParams q = params;
        q.seed = params.seed + static_cast<std::uint64_t>(v);
        auto [vol, joint] = generate_phantom(q);

        SegmentationMask mask = joint;
        if (annotation != AnnotationMode::joint) {
            auto [anat, lesion] = split_annotations(joint, space);
            mask = annotation == AnnotationMode::anatomy_only ? std::move(anat) : std::move(lesion);
        }
        mask.source_dataset = spec.name;

        const std::string tag = detail::zero_padded(v, 3);
        const std::string vol_name = "vol_" + tag + ".nii.gz";
        const std::string mask_name = "mask_" + tag + ".nii.gz";
        write_nifti((out_dir / vol_name).string(), vol);
        write_nifti((out_dir / mask_name).string(), mask);

        VolumeEntry entry;
        for (const auto& mod : params.modalities)
            entry.images[mod] = nifti_channel_name(vol_name, mod, vol.channels());
        entry.mask = mask_name;
        spec.volume_entries.push_back(std::move(entry));
    }

    write_dataset_manifest(spec, out_dir);
    return spec;
}

}  // namespace hetseg
