#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <zlib.h>

#include "hetseg/errors.hpp"
#include "hetseg/volume.hpp"

namespace hetseg {

// NIfTI-1 header, little-endian, 348 bytes. All fields naturally aligned.
struct NiftiHeader {
    std::int32_t sizeof_hdr;      // 348
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;        // 2 = uint8, 16 = float32
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

/// Orientation and scaling metadata echoed back verbatim on write.
/// Never used for resampling.
struct NiftiMeta {
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    float quatern[3] = {0, 0, 0};
    float qoffset[3] = {0, 0, 0};
    float srow[12] = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    float qfac = 1.0f;  // pixdim[0]
    char xyzt_units = 0;
};

struct NiftiData {
    std::optional<Volume> volume;           // set for datatype 16
    std::optional<SegmentationMask> mask;   // set for datatype 2
    NiftiMeta meta;
};

namespace detail {

inline bool is_gzip(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

inline std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) throw IoError("zlib inflateInit failed");
    std::vector<std::uint8_t> out;
    out.reserve(in.size() * 4);
    std::array<std::uint8_t, 1 << 16> buf;
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf.data();
        zs.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw TruncatedFile("gzip stream is corrupt or truncated");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw TruncatedFile("gzip stream ended early");
        }
    }
    inflateEnd(&zs);
    return out;
}

inline std::vector<std::uint8_t> gzip_bytes(const std::vector<std::uint8_t>& in) {
    z_stream zs{};
    if (deflateInit2(&zs, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw IoError("zlib deflateInit failed");
    std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())));
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw IoError("gzip compression failed");
    out.resize(zs.total_out);
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    if (path.empty()) throw IoError("empty path");
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    if (path.empty()) throw IoError("empty path");
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(parent, ec);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline NiftiHeader make_header(const Index3& dims, std::int64_t nt, std::int16_t datatype,
                               std::int16_t bitpix, const std::array<float, 3>& spacing,
                               const NiftiMeta& meta) {
    NiftiHeader h;
    std::memset(&h, 0, sizeof(h));
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = nt > 1 ? 4 : 3;
    h.dim[1] = static_cast<std::int16_t>(dims[0]);
    h.dim[2] = static_cast<std::int16_t>(dims[1]);
    h.dim[3] = static_cast<std::int16_t>(dims[2]);
    h.dim[4] = static_cast<std::int16_t>(nt > 1 ? nt : 1);
    for (int i = 5; i < 8; ++i) h.dim[i] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = meta.qfac;
    h.pixdim[1] = spacing[0];
    h.pixdim[2] = spacing[1];
    h.pixdim[3] = spacing[2];
    h.pixdim[4] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = meta.xyzt_units;
    h.qform_code = meta.qform_code;
    h.sform_code = meta.sform_code;
    h.quatern_b = meta.quatern[0];
    h.quatern_c = meta.quatern[1];
    h.quatern_d = meta.quatern[2];
    h.qoffset_x = meta.qoffset[0];
    h.qoffset_y = meta.qoffset[1];
    h.qoffset_z = meta.qoffset[2];
    std::memcpy(h.srow_x, meta.srow + 0, 4 * sizeof(float));
    std::memcpy(h.srow_y, meta.srow + 4, 4 * sizeof(float));
    std::memcpy(h.srow_z, meta.srow + 8, 4 * sizeof(float));
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

}  // namespace detail

/// Reads a single-file little-endian NIfTI-1 image. Intensity images
/// (datatype 16) come back as float32 volumes, label images (datatype 2)
/// as uint8 masks. Gzip-wrapped files are detected by their magic bytes.
/// scl_slope/scl_inter scaling is applied when slope != 0 (uint8 masks are
/// rounded back to uint8, so only identity scaling is lossless for them).
inline NiftiData read_nifti(const std::string& path) {
    std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
    if (detail::is_gzip(bytes)) bytes = detail::gunzip(bytes);
    if (bytes.size() < sizeof(NiftiHeader))
        throw TruncatedFile("file shorter than the 348-byte NIfTI-1 header: " + path);

    NiftiHeader h;
    std::memcpy(&h, bytes.data(), sizeof(h));
    if (h.sizeof_hdr != 348)
        throw FormatError("not a little-endian NIfTI-1 file (sizeof_hdr != 348): " + path);
    const bool magic_ok = std::memcmp(h.magic, "n+1", 4) == 0 || std::memcmp(h.magic, "ni1", 4) == 0;
    if (!magic_ok) throw FormatError("bad NIfTI magic in " + path);
    if (h.datatype != 2 && h.datatype != 16)
        throw UnsupportedDatatype("unsupported NIfTI datatype code " + std::to_string(h.datatype) +
                                  " in " + path);

    if (h.dim[0] < 1 || h.dim[0] > 7) throw FormatError("invalid dim[0] in " + path);
    std::int64_t nd[4] = {1, 1, 1, 1};
    for (int i = 1; i <= h.dim[0] && i <= 4; ++i) {
        if (h.dim[i] < 1) throw FormatError("non-positive dimension in " + path);
        nd[i - 1] = h.dim[i];
    }
    for (int i = 5; i <= h.dim[0]; ++i)
        if (h.dim[i] > 1) throw FormatError("more than 4 non-trivial dimensions in " + path);

    const std::int64_t nx = nd[0], ny = nd[1], nz = nd[2], nt = nd[3];
    const std::int64_t nvox = nx * ny * nz * nt;
    const std::size_t elem = h.datatype == 2 ? 1 : 4;
    const std::int64_t offset =
        std::max<std::int64_t>(static_cast<std::int64_t>(h.vox_offset), 348);
    if (static_cast<std::int64_t>(bytes.size()) < offset + nvox * static_cast<std::int64_t>(elem))
        throw TruncatedFile("NIfTI payload is truncated: " + path);

    NiftiData out;
    out.meta.qform_code = h.qform_code;
    out.meta.sform_code = h.sform_code;
    out.meta.quatern[0] = h.quatern_b;
    out.meta.quatern[1] = h.quatern_c;
    out.meta.quatern[2] = h.quatern_d;
    out.meta.qoffset[0] = h.qoffset_x;
    out.meta.qoffset[1] = h.qoffset_y;
    out.meta.qoffset[2] = h.qoffset_z;
    std::memcpy(out.meta.srow + 0, h.srow_x, 4 * sizeof(float));
    std::memcpy(out.meta.srow + 4, h.srow_y, 4 * sizeof(float));
    std::memcpy(out.meta.srow + 8, h.srow_z, 4 * sizeof(float));
    out.meta.qfac = h.pixdim[0];
    out.meta.xyzt_units = h.xyzt_units;

    std::array<float, 3> spacing;
    for (int i = 0; i < 3; ++i) spacing[i] = h.pixdim[i + 1] > 0.0f ? h.pixdim[i + 1] : 1.0f;

    const bool scale = h.scl_slope != 0.0f && (h.scl_slope != 1.0f || h.scl_inter != 0.0f);
    const std::uint8_t* payload = bytes.data() + offset;

    if (h.datatype == 16) {
        Volume v;
        v.data = Tensor({nt, nx, ny, nz});
        v.voxel_spacing = spacing;
        for (std::int64_t c = 0; c < nt; ++c) v.modality_names.push_back("channel" + std::to_string(c));
        // NIfTI stores x fastest: index = x + nx*(y + ny*(z + nz*t)).
        const float* src = reinterpret_cast<const float*>(payload);
        for (std::int64_t t = 0; t < nt; ++t)
            for (std::int64_t z = 0; z < nz; ++z)
                for (std::int64_t y = 0; y < ny; ++y)
                    for (std::int64_t x = 0; x < nx; ++x) {
                        float val;
                        std::memcpy(&val, &src[x + nx * (y + ny * (z + nz * t))], sizeof(float));
                        if (scale) val = val * h.scl_slope + h.scl_inter;
                        v.at(t, x, y, z) = val;
                    }
        out.volume = std::move(v);
    } else {
        if (nt > 1) throw FormatError("uint8 masks must be 3-D: " + path);
        SegmentationMask m = make_mask({nx, ny, nz});
        for (std::int64_t z = 0; z < nz; ++z)
            for (std::int64_t y = 0; y < ny; ++y)
                for (std::int64_t x = 0; x < nx; ++x) {
                    float val = payload[x + nx * (y + ny * z)];
                    if (scale) val = std::round(val * h.scl_slope + h.scl_inter);
                    m.at(x, y, z) = static_cast<std::uint8_t>(std::min(std::max(val, 0.0f), 255.0f));
                }
        out.mask = std::move(m);
    }
    return out;
}

inline Volume read_volume(const std::string& path) {
    NiftiData d = read_nifti(path);
    if (!d.volume) throw FormatError("expected a float32 intensity image: " + path);
    return std::move(*d.volume);
}

inline SegmentationMask read_mask(const std::string& path) {
    NiftiData d = read_nifti(path);
    if (!d.mask) throw FormatError("expected a uint8 label image: " + path);
    return std::move(*d.mask);
}

/// Writes a uint8 mask as single-file NIfTI-1 (vox_offset 352, magic "n+1",
/// scl identity). A ".gz" extension selects gzip wrapping.
inline void write_nifti(const std::string& path, const SegmentationMask& mask,
                        const NiftiMeta& meta = {},
                        const std::array<float, 3>& spacing = {1.0f, 1.0f, 1.0f}) {
    const auto [nx, ny, nz] = mask.size;
    NiftiHeader h = detail::make_header(mask.size, 1, 2, 8, spacing, meta);
    std::vector<std::uint8_t> bytes(352 + static_cast<std::size_t>(mask.numel()), 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    std::uint8_t* dst = bytes.data() + 352;
    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t x = 0; x < nx; ++x)
                dst[x + nx * (y + ny * z)] = mask.at(x, y, z);
    if (detail::ends_with(path, ".gz")) bytes = detail::gzip_bytes(bytes);
    detail::write_file_bytes(path, bytes);
}

namespace detail {

inline void write_single_channel(const std::string& path, const Volume& vol, std::int64_t channel,
                                 const NiftiMeta& meta) {
    const auto [nx, ny, nz] = vol.dims();
    NiftiHeader h = make_header(vol.dims(), 1, 16, 32, vol.voxel_spacing, meta);
    std::vector<std::uint8_t> bytes(352 + static_cast<std::size_t>(nx * ny * nz) * 4, 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    float* dst = reinterpret_cast<float*>(bytes.data() + 352);
    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t x = 0; x < nx; ++x)
                dst[x + nx * (y + ny * z)] = vol.at(channel, x, y, z);
    if (ends_with(path, ".gz")) bytes = gzip_bytes(bytes);
    write_file_bytes(path, bytes);
}

inline std::string channel_path(const std::string& path, const std::string& modality) {
    // insert _<modality> before the extension(s)
    std::string stem = path, ext;
    for (const char* e : {".nii.gz", ".nii"}) {
        if (ends_with(path, e)) {
            stem = path.substr(0, path.size() - std::strlen(e));
            ext = e;
            break;
        }
    }
    return stem + "_" + modality + ext;
}

}  // namespace detail

/// The on-disk name write_nifti uses for one channel of a volume:
/// unchanged for single-channel volumes, `_<modality>` suffix otherwise.
inline std::string nifti_channel_name(const std::string& path, const std::string& modality,
                                      std::int64_t n_channels) {
    return n_channels == 1 ? path : detail::channel_path(path, modality);
}

/// Writes a float32 volume. Single-channel volumes go to `path`;
/// multi-channel volumes are split into one file per channel with a
/// `_<modality>` suffix. Returns the written paths in channel order.
inline std::vector<std::string> write_nifti(const std::string& path, const Volume& vol,
                                            const NiftiMeta& meta = {}) {
    if (vol.channels() == 1) {
        detail::write_single_channel(path, vol, 0, meta);
        return {path};
    }
    std::vector<std::string> paths;
    for (std::int64_t c = 0; c < vol.channels(); ++c) {
        const std::string p = detail::channel_path(path, vol.modality_names[static_cast<std::size_t>(c)]);
        detail::write_single_channel(p, vol, c, meta);
        paths.push_back(p);
    }
    return paths;
}

}  // namespace hetseg
