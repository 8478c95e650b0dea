#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hetseg/errors.hpp"
#include "hetseg/tensor.hpp"

namespace hetseg {

using Index3 = std::array<std::int64_t, 3>;

/// Multi-channel 3D intensity grid, (channel, x, y, z), float32.
/// Immutable by convention after load.
struct Volume {
    Tensor data;                               // (C, X, Y, Z)
    std::vector<std::string> modality_names;   // size == C
    std::array<float, 3> voxel_spacing{1.0f, 1.0f, 1.0f};  // mm

    std::int64_t channels() const { return data.ndim() == 4 ? data.dim(0) : 0; }
    Index3 dims() const { return {data.dim(1), data.dim(2), data.dim(3)}; }

    float at(std::int64_t c, std::int64_t x, std::int64_t y, std::int64_t z) const {
        const auto [X, Y, Z] = dims();
        return data[((c * X + x) * Y + y) * Z + z];
    }
    float& at(std::int64_t c, std::int64_t x, std::int64_t y, std::int64_t z) {
        const auto [X, Y, Z] = dims();
        return data.storage()[static_cast<std::size_t>(((c * X + x) * Y + y) * Z + z)];
    }

    void validate() const {
        if (data.ndim() != 4) throw ShapeError("volume data must be 4-D (channel, x, y, z)");
        if (channels() < 1 || channels() != static_cast<std::int64_t>(modality_names.size()))
            throw ShapeError("volume channel count must match modality names");
        for (auto d : dims())
            if (d < 1) throw ShapeError("volume spatial dims must be >= 1");
        for (float s : voxel_spacing)
            if (!(s > 0.0f)) throw ShapeError("voxel spacing must be positive");
        for (float v : data.storage())
            if (!std::isfinite(v)) throw ShapeError("volume contains non-finite values");
    }
};

/// Integer label grid, (x, y, z), uint8, values < C of the governing space.
struct SegmentationMask {
    std::vector<std::uint8_t> data;
    Index3 size{0, 0, 0};
    std::string label_space_ref;
    std::string source_dataset;  // optional

    std::int64_t numel() const { return size[0] * size[1] * size[2]; }

    std::uint8_t at(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return data[static_cast<std::size_t>((x * size[1] + y) * size[2] + z)];
    }
    std::uint8_t& at(std::int64_t x, std::int64_t y, std::int64_t z) {
        return data[static_cast<std::size_t>((x * size[1] + y) * size[2] + z)];
    }

    bool same_dims(const SegmentationMask& other) const { return size == other.size; }
};

inline SegmentationMask make_mask(Index3 size, std::uint8_t fill = 0) {
    SegmentationMask m;
    m.size = size;
    m.data.assign(static_cast<std::size_t>(size[0] * size[1] * size[2]), fill);
    return m;
}

/// Axis-aligned patch of `size` centered at `center`. For even sizes the
/// center voxel is at index size/2 of the patch. Regions outside the volume
/// are zero-padded in intensities and background-padded in the mask.
/// The center itself must lie inside the grid.
inline std::pair<Volume, SegmentationMask> extract_patch(const Volume& vol,
                                                         const SegmentationMask& mask,
                                                         Index3 center, Index3 size) {
    const Index3 vd = vol.dims();
    if (mask.size != vd) throw ShapeError("extract_patch: volume and mask dims differ");
    for (int a = 0; a < 3; ++a) {
        if (size[a] < 1) throw ShapeError("extract_patch: size components must be >= 1");
        if (center[a] < 0 || center[a] >= vd[a])
            throw OutOfBounds("extract_patch: center outside the grid");
    }

    const std::int64_t C = vol.channels();
    Volume out;
    out.data = Tensor({C, size[0], size[1], size[2]});
    out.modality_names = vol.modality_names;
    out.voxel_spacing = vol.voxel_spacing;
    SegmentationMask mout = make_mask(size, 0);
    mout.label_space_ref = mask.label_space_ref;
    mout.source_dataset = mask.source_dataset;

    Index3 start{center[0] - size[0] / 2, center[1] - size[1] / 2, center[2] - size[2] / 2};

    // Clip to the in-volume overlap; padding stays zero/background.
    Index3 lo, hi;  // patch-space bounds of the copied region
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max<std::int64_t>(0, -start[a]);
        hi[a] = std::min<std::int64_t>(size[a], vd[a] - start[a]);
    }

    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t x = lo[0]; x < hi[0]; ++x)
            for (std::int64_t y = lo[1]; y < hi[1]; ++y) {
                const std::int64_t sx = start[0] + x, sy = start[1] + y, sz0 = start[2] + lo[2];
                const float* src = vol.data.data() +
                                   ((c * vd[0] + sx) * vd[1] + sy) * vd[2] + sz0;
                float* dst = out.data.data() +
                             ((c * size[0] + x) * size[1] + y) * size[2] + lo[2];
                std::copy(src, src + (hi[2] - lo[2]), dst);
            }
    for (std::int64_t x = lo[0]; x < hi[0]; ++x)
        for (std::int64_t y = lo[1]; y < hi[1]; ++y) {
            const std::int64_t sx = start[0] + x, sy = start[1] + y, sz0 = start[2] + lo[2];
            const std::uint8_t* src = mask.data.data() + (sx * vd[1] + sy) * vd[2] + sz0;
            std::uint8_t* dst = mout.data.data() + (x * size[1] + y) * size[2] + lo[2];
            std::copy(src, src + (hi[2] - lo[2]), dst);
        }

    return {std::move(out), std::move(mout)};
}

/// Per-channel z-score over nonzero voxels, in place. Channels that are
/// all-zero or constant are left centered with unit denominator.
inline void normalize_zscore(Volume& vol) {
    const auto [X, Y, Z] = vol.dims();
    const std::int64_t n = X * Y * Z;
    for (std::int64_t c = 0; c < vol.channels(); ++c) {
        float* p = vol.data.data() + c * n;
        double sum = 0.0, sum2 = 0.0;
        std::int64_t count = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            if (p[i] != 0.0f) {
                sum += p[i];
                sum2 += static_cast<double>(p[i]) * p[i];
                ++count;
            }
        }
        if (count == 0) continue;
        const double mean = sum / count;
        double var = sum2 / count - mean * mean;
        if (var < 1e-12) var = 1.0;
        const float m = static_cast<float>(mean);
        const float inv = static_cast<float>(1.0 / std::sqrt(var));
        for (std::int64_t i = 0; i < n; ++i)
            if (p[i] != 0.0f) p[i] = (p[i] - m) * inv;
    }
}

}  // namespace hetseg
