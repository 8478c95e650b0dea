#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "hetseg/errors.hpp"
#include "hetseg/rng.hpp"
#include "hetseg/tensor.hpp"
#include "hetseg/volume.hpp"

using namespace hetseg;

namespace {

Volume make_volume(Index3 dims, int channels, std::uint64_t seed) {
    Volume v;
    v.data = Tensor({channels, dims[0], dims[1], dims[2]});
    CounterRng rng(seed);
    for (std::int64_t i = 0; i < v.data.numel(); ++i)
        v.data[i] = static_cast<float>(rng.uniform());
    for (int c = 0; c < channels; ++c) v.modality_names.push_back("m" + std::to_string(c));
    return v;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3, 4});
    REQUIRE(t.numel() == 24);
    REQUIRE(t.ndim() == 3);
    REQUIRE(t.dim(2) == 4);
    t.fill(2.5f);
    REQUIRE(t[0] == 2.5f);
    REQUIRE(t[23] == 2.5f);
    t.zero();
    REQUIRE(t[11] == 0.0f);
}

TEST_CASE("extract_patch copies the interior exactly") {
    const Index3 dims{8, 9, 10};
    Volume vol = make_volume(dims, 2, 3);
    SegmentationMask mask = make_mask(dims);
    CounterRng rng(4);
    for (auto& m : mask.data) m = static_cast<std::uint8_t>(rng.uniform_int(4));

    const Index3 center{4, 4, 5};
    const Index3 size{3, 3, 3};
    auto [pv, pm] = extract_patch(vol, mask, center, size);
    REQUIRE(pv.data.dim(0) == 2);
    REQUIRE(pv.data.dim(1) == 3);
    for (int c = 0; c < 2; ++c)
        for (int x = 0; x < 3; ++x)
            for (int y = 0; y < 3; ++y)
                for (int z = 0; z < 3; ++z) {
                    const std::int64_t sx = center[0] - 1 + x, sy = center[1] - 1 + y,
                                       sz = center[2] - 1 + z;
                    const float want =
                        vol.data[((c * dims[0] + sx) * dims[1] + sy) * dims[2] + sz];
                    REQUIRE(pv.data[((c * 3 + x) * 3 + y) * 3 + z] == want);
                }
    REQUIRE(pm.data[(1 * 3 + 1) * 3 + 1] ==
            mask.data[static_cast<std::size_t>((center[0] * dims[1] + center[1]) * dims[2] +
                                               center[2])]);
}

TEST_CASE("extract_patch zero pads outside the grid") {
    const Index3 dims{4, 4, 4};
    Volume vol = make_volume(dims, 1, 5);
    vol.data.fill(1.0f);
    SegmentationMask mask = make_mask(dims, 2);

    auto [pv, pm] = extract_patch(vol, mask, {0, 0, 0}, {4, 4, 4});
    // Center (0,0,0) with size 4 reaches from -2 to 1 on each axis.
    REQUIRE(pv.data[0] == 0.0f);
    REQUIRE(pm.data[0] == 0);
    const std::int64_t inside = (2 * 4 + 2) * 4 + 2;
    REQUIRE(pv.data[inside] == 1.0f);
    REQUIRE(pm.data[static_cast<std::size_t>(inside)] == 2);
}

TEST_CASE("extract_patch validates center and dims") {
    const Index3 dims{4, 4, 4};
    Volume vol = make_volume(dims, 1, 6);
    SegmentationMask mask = make_mask(dims);
    REQUIRE_THROWS_AS(extract_patch(vol, mask, {4, 0, 0}, {2, 2, 2}), OutOfBounds);
    SegmentationMask wrong = make_mask({4, 4, 5});
    REQUIRE_THROWS_AS(extract_patch(vol, wrong, {1, 1, 1}, {2, 2, 2}), ShapeError);
}

TEST_CASE("z-score normalization ignores zero voxels and standardizes the rest") {
    const Index3 dims{6, 6, 6};
    Volume vol = make_volume(dims, 2, 7);
    // Channel 0: half the voxels zero (background), rest shifted.
    for (std::int64_t i = 0; i < 108; ++i) vol.data[i] = 0.0f;
    for (std::int64_t i = 108; i < 216; ++i) vol.data[i] = 5.0f + vol.data[i];
    normalize_zscore(vol);

    double sum = 0.0, sq = 0.0;
    int n = 0;
    for (std::int64_t i = 108; i < 216; ++i) {
        sum += vol.data[i];
        sq += vol.data[i] * vol.data[i];
        ++n;
    }
    const double mean = sum / n;
    REQUIRE(std::abs(mean) < 1e-4);
    REQUIRE(std::abs(sq / n - mean * mean - 1.0) < 1e-3);
}
