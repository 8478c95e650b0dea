#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "hetseg/errors.hpp"
#include "hetseg/network.hpp"
#include "hetseg/tensor.hpp"
#include "hetseg/volume.hpp"

namespace hetseg {

namespace detail {

inline std::vector<std::int64_t> window_starts(std::int64_t dim, std::int64_t patch,
                                               std::int64_t stride) {
    std::vector<std::int64_t> starts;
    const std::int64_t last = std::max<std::int64_t>(0, dim - patch);
    for (std::int64_t s = 0;; s += stride) {
        starts.push_back(std::min(s, last));
        if (s >= last) break;
    }
    return starts;
}

}  // namespace detail

/// Voxelwise class probabilities plus their argmax mask.
struct Prediction {
    Tensor probabilities;
    SegmentationMask mask;
};

/// Sliding-window full-volume inference over any forward function mapping
/// (1, ch, patch) intensities to (1, C, patch) probabilities. Overlapping
/// windows average their probability vectors; windows reaching past the
/// volume see zero padding; the mask is the voxelwise argmax with ties going
/// to the lowest label id.
template <typename ForwardFn>
Prediction sliding_window_predict(ForwardFn&& forward, int num_classes, Index3 patch,
                                  const Volume& vol, Index3 stride) {
    const Index3 dims = vol.dims();
    const std::int64_t ch = vol.channels();
    for (int d = 0; d < 3; ++d) {
        if (patch[d] < 1 || stride[d] < 1) throw ShapeError("patch and stride must be >= 1");
        if (stride[d] > patch[d]) throw ShapeError("stride must not exceed the patch size");
    }

    Tensor probs({num_classes, dims[0], dims[1], dims[2]});
    std::vector<float> counts(static_cast<std::size_t>(vol.data.numel() / ch), 0.0f);
    Tensor window({1, ch, patch[0], patch[1], patch[2]});
    const std::int64_t vol_m = dims[0] * dims[1] * dims[2];

    for (std::int64_t sx : detail::window_starts(dims[0], patch[0], stride[0]))
        for (std::int64_t sy : detail::window_starts(dims[1], patch[1], stride[1]))
            for (std::int64_t sz : detail::window_starts(dims[2], patch[2], stride[2])) {
                window.zero();
                const std::int64_t nx = std::min(patch[0], dims[0] - sx);
                const std::int64_t ny = std::min(patch[1], dims[1] - sy);
                const std::int64_t nz = std::min(patch[2], dims[2] - sz);
                for (std::int64_t c = 0; c < ch; ++c)
                    for (std::int64_t x = 0; x < nx; ++x)
                        for (std::int64_t y = 0; y < ny; ++y)
                            std::copy(vol.data.data() + ((c * dims[0] + sx + x) * dims[1] + sy + y) * dims[2] + sz,
                                      vol.data.data() + ((c * dims[0] + sx + x) * dims[1] + sy + y) * dims[2] + sz + nz,
                                      window.data() + ((c * patch[0] + x) * patch[1] + y) * patch[2]);

                const Tensor out = forward(window);
                if (out.ndim() != 5 || out.dim(0) != 1 || out.dim(1) != num_classes)
                    throw ShapeError("window forward returned an unexpected shape");
                for (std::int64_t c = 0; c < num_classes; ++c)
                    for (std::int64_t x = 0; x < nx; ++x)
                        for (std::int64_t y = 0; y < ny; ++y) {
                            const float* src = out.data() + ((c * patch[0] + x) * patch[1] + y) * patch[2];
                            float* dst = probs.data() + ((c * dims[0] + sx + x) * dims[1] + sy + y) * dims[2] + sz;
                            for (std::int64_t z = 0; z < nz; ++z) dst[z] += src[z];
                        }
                for (std::int64_t x = 0; x < nx; ++x)
                    for (std::int64_t y = 0; y < ny; ++y) {
                        float* cnt = counts.data() + ((sx + x) * dims[1] + sy + y) * dims[2] + sz;
                        for (std::int64_t z = 0; z < nz; ++z) cnt[z] += 1.0f;
                    }
            }

    for (std::int64_t c = 0; c < num_classes; ++c)
        for (std::int64_t i = 0; i < vol_m; ++i)
            probs[c * vol_m + i] /= counts[static_cast<std::size_t>(i)];

    SegmentationMask mask = make_mask(dims);
    for (std::int64_t i = 0; i < vol_m; ++i) {
        int best = 0;
        float best_p = probs[i];
        for (int c = 1; c < num_classes; ++c) {
            const float p = probs[c * vol_m + i];
            if (p > best_p) {
                best_p = p;
                best = c;
            }
        }
        mask.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
    }
    return {std::move(probs), std::move(mask)};
}

/// Full-volume inference with the model's configured patch size. Default
/// stride is half the patch. The model must be in eval mode.
inline Prediction predict_volume(UNet3D& model, const Volume& vol,
                                 std::optional<Index3> stride = {}) {
    if (model.is_train()) throw ConfigError("predict_volume requires eval mode");
    const ModelConfig& cfg = model.config();
    if (vol.channels() != cfg.in_channels)
        throw ShapeError("volume channel count does not match the model");
    Index3 st;
    for (int d = 0; d < 3; ++d)
        st[d] = stride ? (*stride)[d] : std::max<std::int64_t>(1, cfg.patch_size[d] / 2);
    return sliding_window_predict(
        [&model](const Tensor& window) { return model.forward(window); }, cfg.num_classes,
        cfg.patch_size, vol, st);
}

}  // namespace hetseg
