#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <vector>

#include <cblas.h>

#include "hetseg/errors.hpp"
#include "hetseg/tensor.hpp"

namespace hetseg {

/// Shared scratch buffers for the gemm-based layers. One instance per model;
/// grows to the largest layer and is reused across calls.
struct Workspace {
    std::vector<float> col;
    std::vector<float> dcol;
    std::vector<float> packed;
    std::vector<float> gathered;

    static float* grown(std::vector<float>& v, std::size_t n) {
        if (v.size() < n) v.resize(n);
        return v.data();
    }
};

namespace ops {

inline void check_5d(const Tensor& t, const char* what) {
    if (t.ndim() != 5) throw ShapeError(std::string(what) + " must be (N, C, X, Y, Z)");
}

/// Per-voxel softmax over the channel dimension of (N, C, X, Y, Z).
inline Tensor softmax_channels(const Tensor& logits) {
    check_5d(logits, "softmax input");
    const std::int64_t N = logits.dim(0), C = logits.dim(1);
    const std::int64_t m = logits.dim(2) * logits.dim(3) * logits.dim(4);
    Tensor out(logits.shape());
    for (std::int64_t n = 0; n < N; ++n) {
        const float* in = logits.data() + n * C * m;
        float* o = out.data() + n * C * m;
        for (std::int64_t i = 0; i < m; ++i) {
            float mx = in[i];
            for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, in[c * m + i]);
            float sum = 0.0f;
            for (std::int64_t c = 0; c < C; ++c) {
                const float e = std::exp(in[c * m + i] - mx);
                o[c * m + i] = e;
                sum += e;
            }
            for (std::int64_t c = 0; c < C; ++c) o[c * m + i] /= sum;
        }
    }
    return out;
}

// im2col for 3x3x3 pad-1 convolution, one batch item.
// col is (cin*27) x (X*Y*Z); row (ci*27 + offset), offset = (dx*3+dy)*3+dz.
inline void im2col3(const float* in, std::int64_t cin, std::int64_t X, std::int64_t Y,
                    std::int64_t Z, float* col) {
    const std::int64_t m = X * Y * Z;
    for (std::int64_t ci = 0; ci < cin; ++ci) {
        const float* ch = in + ci * m;
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    float* row =
                        col + (ci * 27 + ((dx + 1) * 3 + (dy + 1)) * 3 + (dz + 1)) * m;
                    for (std::int64_t x = 0; x < X; ++x) {
                        const std::int64_t sx = x + dx;
                        if (sx < 0 || sx >= X) {
                            std::memset(row + x * Y * Z, 0, sizeof(float) * static_cast<std::size_t>(Y * Z));
                            continue;
                        }
                        for (std::int64_t y = 0; y < Y; ++y) {
                            const std::int64_t sy = y + dy;
                            float* dst = row + (x * Y + y) * Z;
                            if (sy < 0 || sy >= Y) {
                                std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(Z));
                                continue;
                            }
                            const float* src = ch + (sx * Y + sy) * Z + dz;
                            const std::int64_t z0 = std::max<std::int64_t>(0, -dz);
                            const std::int64_t z1 = std::min<std::int64_t>(Z, Z - dz);
                            if (z0 > 0) std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(z0));
                            std::memcpy(dst + z0, src + z0, sizeof(float) * static_cast<std::size_t>(z1 - z0));
                            if (z1 < Z)
                                std::memset(dst + z1, 0, sizeof(float) * static_cast<std::size_t>(Z - z1));
                        }
                    }
                }
    }
}

// Transpose of im2col3: scatter-adds col rows back into the input gradient.
inline void col2im3(const float* col, std::int64_t cin, std::int64_t X, std::int64_t Y,
                    std::int64_t Z, float* din) {
    const std::int64_t m = X * Y * Z;
    for (std::int64_t ci = 0; ci < cin; ++ci) {
        float* ch = din + ci * m;
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    const float* row =
                        col + (ci * 27 + ((dx + 1) * 3 + (dy + 1)) * 3 + (dz + 1)) * m;
                    for (std::int64_t x = 0; x < X; ++x) {
                        const std::int64_t sx = x + dx;
                        if (sx < 0 || sx >= X) continue;
                        for (std::int64_t y = 0; y < Y; ++y) {
                            const std::int64_t sy = y + dy;
                            if (sy < 0 || sy >= Y) continue;
                            float* dst = ch + (sx * Y + sy) * Z + dz;
                            const float* src = row + (x * Y + y) * Z;
                            const std::int64_t z0 = std::max<std::int64_t>(0, -dz);
                            const std::int64_t z1 = std::min<std::int64_t>(Z, Z - dz);
                            for (std::int64_t z = z0; z < z1; ++z) dst[z] += src[z];
                        }
                    }
                }
    }
}

}  // namespace ops

/// 3x3x3 convolution, stride 1, one voxel of padding, no bias (a batch-norm
/// follows every instance). Weight layout (cout, cin, 3, 3, 3).
struct Conv3 {
    std::int64_t cin = 0, cout = 0;
    Tensor w, dw;
    Tensor x_saved;
    bool save_input = false;

    Conv3() = default;
    Conv3(std::int64_t in, std::int64_t out)
        : cin(in), cout(out), w({out, in, 3, 3, 3}), dw({out, in, 3, 3, 3}) {}

    Tensor forward(const Tensor& x, Workspace& ws) {
        ops::check_5d(x, "conv3 input");
        if (x.dim(1) != cin) throw ShapeError("conv3 channel mismatch");
        const std::int64_t N = x.dim(0), X = x.dim(2), Y = x.dim(3), Z = x.dim(4);
        const std::int64_t m = X * Y * Z, K = cin * 27;
        Tensor y({N, cout, X, Y, Z});
        float* col = Workspace::grown(ws.col, static_cast<std::size_t>(K * m));
        for (std::int64_t n = 0; n < N; ++n) {
            ops::im2col3(x.data() + n * cin * m, cin, X, Y, Z, col);
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(cout),
                        static_cast<int>(m), static_cast<int>(K), 1.0f, w.data(),
                        static_cast<int>(K), col, static_cast<int>(m), 0.0f,
                        y.data() + n * cout * m, static_cast<int>(m));
        }
        if (save_input) x_saved = x;
        return y;
    }

    Tensor backward(const Tensor& dy, Workspace& ws) {
        const Tensor& x = x_saved;
        const std::int64_t N = x.dim(0), X = x.dim(2), Y = x.dim(3), Z = x.dim(4);
        const std::int64_t m = X * Y * Z, K = cin * 27;
        Tensor dx(x.shape());
        dx.zero();
        float* col = Workspace::grown(ws.col, static_cast<std::size_t>(K * m));
        float* dcol = Workspace::grown(ws.dcol, static_cast<std::size_t>(K * m));
        for (std::int64_t n = 0; n < N; ++n) {
            ops::im2col3(x.data() + n * cin * m, cin, X, Y, Z, col);
            const float* g = dy.data() + n * cout * m;
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(cout),
                        static_cast<int>(K), static_cast<int>(m), 1.0f, g, static_cast<int>(m),
                        col, static_cast<int>(m), 1.0f, dw.data(), static_cast<int>(K));
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(K),
                        static_cast<int>(m), static_cast<int>(cout), 1.0f, w.data(),
                        static_cast<int>(K), g, static_cast<int>(m), 0.0f, dcol,
                        static_cast<int>(m));
            ops::col2im3(dcol, cin, X, Y, Z, dx.data() + n * cin * m);
        }
        return dx;
    }
};

/// Per-channel batch normalization over (N, X, Y, Z). Batch statistics in
/// train mode; running averages (momentum 0.9, biased variance) in eval.
struct BatchNorm3 {
    static constexpr float kEps = 1e-5f;
    static constexpr float kMomentum = 0.9f;
    std::int64_t channels = 0;
    Tensor gamma, beta, dgamma, dbeta;
    Tensor running_mean, running_var;
    Tensor xhat_saved;
    std::vector<float> inv_std;
    bool save_input = false;

    BatchNorm3() = default;
    explicit BatchNorm3(std::int64_t c)
        : channels(c), gamma({c}), beta({c}), dgamma({c}), dbeta({c}), running_mean({c}),
          running_var({c}) {
        gamma.fill(1.0f);
        running_var.fill(1.0f);
    }

    Tensor forward(const Tensor& x, bool train_mode) {
        ops::check_5d(x, "batch-norm input");
        if (x.dim(1) != channels) throw ShapeError("batch-norm channel mismatch");
        const std::int64_t N = x.dim(0), C = channels;
        const std::int64_t m = x.dim(2) * x.dim(3) * x.dim(4);
        Tensor y(x.shape());
        if (train_mode) {
            if (save_input) {
                xhat_saved = Tensor(x.shape());
                inv_std.assign(static_cast<std::size_t>(C), 0.0f);
            }
            const double count = static_cast<double>(N * m);
            for (std::int64_t c = 0; c < C; ++c) {
                double sum = 0.0, sq = 0.0;
                for (std::int64_t n = 0; n < N; ++n) {
                    const float* p = x.data() + (n * C + c) * m;
                    for (std::int64_t i = 0; i < m; ++i) {
                        sum += p[i];
                        sq += static_cast<double>(p[i]) * p[i];
                    }
                }
                const float mean = static_cast<float>(sum / count);
                const float var =
                    std::max(0.0f, static_cast<float>(sq / count - static_cast<double>(mean) * mean));
                const float istd = 1.0f / std::sqrt(var + kEps);
                const float g = gamma[c], b = beta[c];
                for (std::int64_t n = 0; n < N; ++n) {
                    const float* p = x.data() + (n * C + c) * m;
                    float* q = y.data() + (n * C + c) * m;
                    float* xh = save_input ? xhat_saved.data() + (n * C + c) * m : nullptr;
                    for (std::int64_t i = 0; i < m; ++i) {
                        const float h = (p[i] - mean) * istd;
                        if (xh) xh[i] = h;
                        q[i] = g * h + b;
                    }
                }
                if (save_input) inv_std[static_cast<std::size_t>(c)] = istd;
                running_mean[c] = kMomentum * running_mean[c] + (1.0f - kMomentum) * mean;
                running_var[c] = kMomentum * running_var[c] + (1.0f - kMomentum) * var;
            }
        } else {
            for (std::int64_t c = 0; c < C; ++c) {
                const float istd = 1.0f / std::sqrt(running_var[c] + kEps);
                const float g = gamma[c], b = beta[c], mean = running_mean[c];
                for (std::int64_t n = 0; n < N; ++n) {
                    const float* p = x.data() + (n * C + c) * m;
                    float* q = y.data() + (n * C + c) * m;
                    for (std::int64_t i = 0; i < m; ++i) q[i] = g * (p[i] - mean) * istd + b;
                }
            }
        }
        return y;
    }

    Tensor backward(const Tensor& dy) {
        const std::int64_t N = dy.dim(0), C = channels;
        const std::int64_t m = dy.dim(2) * dy.dim(3) * dy.dim(4);
        const double count = static_cast<double>(N * m);
        Tensor dx(dy.shape());
        for (std::int64_t c = 0; c < C; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                const float* g = dy.data() + (n * C + c) * m;
                const float* xh = xhat_saved.data() + (n * C + c) * m;
                for (std::int64_t i = 0; i < m; ++i) {
                    sum_dy += g[i];
                    sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
                }
            }
            dbeta[c] += static_cast<float>(sum_dy);
            dgamma[c] += static_cast<float>(sum_dy_xhat);
            const float mean_dy = static_cast<float>(sum_dy / count);
            const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
            const float scale = gamma[c] * inv_std[static_cast<std::size_t>(c)];
            for (std::int64_t n = 0; n < N; ++n) {
                const float* g = dy.data() + (n * C + c) * m;
                const float* xh = xhat_saved.data() + (n * C + c) * m;
                float* out = dx.data() + (n * C + c) * m;
                for (std::int64_t i = 0; i < m; ++i)
                    out[i] = scale * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
            }
        }
        return dx;
    }
};

struct ReLU3 {
    Tensor y_saved;
    bool save_input = false;

    Tensor forward(const Tensor& x) {
        Tensor y(x.shape());
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
        if (save_input) y_saved = y;
        return y;
    }

    Tensor backward(const Tensor& dy) {
        Tensor dx(dy.shape());
        const std::int64_t n = dy.numel();
        for (std::int64_t i = 0; i < n; ++i) dx[i] = y_saved[i] > 0.0f ? dy[i] : 0.0f;
        return dx;
    }
};

/// 2x2x2 max pooling with stride 2. Remembers argmax positions for backward.
struct MaxPool2 {
    std::vector<std::int64_t> argmax;
    std::vector<std::int64_t> in_shape;
    bool save_input = false;

    Tensor forward(const Tensor& x) {
        ops::check_5d(x, "max-pool input");
        const std::int64_t N = x.dim(0), C = x.dim(1), X = x.dim(2), Y = x.dim(3), Z = x.dim(4);
        if (X % 2 || Y % 2 || Z % 2) throw ShapeError("max-pool needs even spatial dims");
        Tensor y({N, C, X / 2, Y / 2, Z / 2});
        if (save_input) {
            argmax.assign(static_cast<std::size_t>(y.numel()), 0);
            in_shape = x.shape();
        }
        std::int64_t j = 0;
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const float* ch = x.data() + (n * C + c) * X * Y * Z;
                for (std::int64_t ox = 0; ox < X / 2; ++ox)
                    for (std::int64_t oy = 0; oy < Y / 2; ++oy)
                        for (std::int64_t oz = 0; oz < Z / 2; ++oz, ++j) {
                            float best = -std::numeric_limits<float>::infinity();
                            std::int64_t best_idx = 0;
                            for (std::int64_t dx = 0; dx < 2; ++dx)
                                for (std::int64_t dy = 0; dy < 2; ++dy)
                                    for (std::int64_t dz = 0; dz < 2; ++dz) {
                                        const std::int64_t idx =
                                            ((2 * ox + dx) * Y + 2 * oy + dy) * Z + 2 * oz + dz;
                                        if (ch[idx] > best) {
                                            best = ch[idx];
                                            best_idx = idx;
                                        }
                                    }
                            y[j] = best;
                            if (save_input)
                                argmax[static_cast<std::size_t>(j)] = (n * C + c) * X * Y * Z + best_idx;
                        }
            }
        return y;
    }

    Tensor backward(const Tensor& dy) {
        Tensor dx(in_shape);
        dx.zero();
        const std::int64_t n = dy.numel();
        for (std::int64_t j = 0; j < n; ++j) dx[argmax[static_cast<std::size_t>(j)]] += dy[j];
        return dx;
    }
};

/// 2x2x2 transposed convolution with stride 2 (doubles every spatial dim).
/// Weight layout (cin, cout, 2, 2, 2); carries a bias. With kernel = stride
/// the output blocks never overlap, so each kernel offset is one gemm.
struct TConv2 {
    std::int64_t cin = 0, cout = 0;
    Tensor w, b, dw, db;
    Tensor x_saved;
    bool save_input = false;

    TConv2() = default;
    TConv2(std::int64_t in, std::int64_t out)
        : cin(in), cout(out), w({in, out, 2, 2, 2}), b({out}), dw({in, out, 2, 2, 2}), db({out}) {}

    Tensor forward(const Tensor& x, Workspace& ws) {
        ops::check_5d(x, "tconv input");
        if (x.dim(1) != cin) throw ShapeError("tconv channel mismatch");
        const std::int64_t N = x.dim(0), X = x.dim(2), Y = x.dim(3), Z = x.dim(4);
        const std::int64_t m = X * Y * Z;
        Tensor y({N, cout, 2 * X, 2 * Y, 2 * Z});
        float* a = Workspace::grown(ws.packed, static_cast<std::size_t>(cout * cin));
        float* out_off = Workspace::grown(ws.gathered, static_cast<std::size_t>(cout * m));
        for (std::int64_t off = 0; off < 8; ++off) {
            for (std::int64_t co = 0; co < cout; ++co)
                for (std::int64_t ci = 0; ci < cin; ++ci)
                    a[co * cin + ci] = w[(ci * cout + co) * 8 + off];
            const std::int64_t dx = off / 4, dy = (off / 2) % 2, dz = off % 2;
            for (std::int64_t n = 0; n < N; ++n) {
                cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(cout),
                            static_cast<int>(m), static_cast<int>(cin), 1.0f, a,
                            static_cast<int>(cin), x.data() + n * cin * m, static_cast<int>(m),
                            0.0f, out_off, static_cast<int>(m));
                for (std::int64_t co = 0; co < cout; ++co) {
                    const float bias = b[co];
                    float* ych = y.data() + (n * cout + co) * 8 * m;
                    const float* src = out_off + co * m;
                    for (std::int64_t ix = 0; ix < X; ++ix)
                        for (std::int64_t iy = 0; iy < Y; ++iy) {
                            float* dst = ych + ((2 * ix + dx) * 2 * Y + 2 * iy + dy) * 2 * Z + dz;
                            const float* s = src + (ix * Y + iy) * Z;
                            for (std::int64_t iz = 0; iz < Z; ++iz) dst[2 * iz] = s[iz] + bias;
                        }
                }
            }
        }
        if (save_input) x_saved = x;
        return y;
    }

    Tensor backward(const Tensor& dy, Workspace& ws) {
        const Tensor& x = x_saved;
        const std::int64_t N = x.dim(0), X = x.dim(2), Y = x.dim(3), Z = x.dim(4);
        const std::int64_t m = X * Y * Z;
        Tensor dx(x.shape());
        dx.zero();
        float* a = Workspace::grown(ws.packed, static_cast<std::size_t>(cout * cin));
        float* g_off = Workspace::grown(ws.gathered, static_cast<std::size_t>(cout * m));
        std::vector<float> dw_off(static_cast<std::size_t>(cin * cout));

        for (std::int64_t co = 0; co < cout; ++co) {
            double acc = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                const float* g = dy.data() + (n * cout + co) * 8 * m;
                for (std::int64_t i = 0; i < 8 * m; ++i) acc += g[i];
            }
            db[co] += static_cast<float>(acc);
        }

        for (std::int64_t off = 0; off < 8; ++off) {
            for (std::int64_t co = 0; co < cout; ++co)
                for (std::int64_t ci = 0; ci < cin; ++ci)
                    a[co * cin + ci] = w[(ci * cout + co) * 8 + off];
            const std::int64_t dxo = off / 4, dyo = (off / 2) % 2, dzo = off % 2;
            std::fill(dw_off.begin(), dw_off.end(), 0.0f);
            for (std::int64_t n = 0; n < N; ++n) {
                for (std::int64_t co = 0; co < cout; ++co) {
                    const float* gch = dy.data() + (n * cout + co) * 8 * m;
                    float* dst = g_off + co * m;
                    for (std::int64_t ix = 0; ix < X; ++ix)
                        for (std::int64_t iy = 0; iy < Y; ++iy) {
                            const float* s =
                                gch + ((2 * ix + dxo) * 2 * Y + 2 * iy + dyo) * 2 * Z + dzo;
                            float* d = dst + (ix * Y + iy) * Z;
                            for (std::int64_t iz = 0; iz < Z; ++iz) d[iz] = s[2 * iz];
                        }
                }
                cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(cin),
                            static_cast<int>(m), static_cast<int>(cout), 1.0f, a,
                            static_cast<int>(cin), g_off, static_cast<int>(m), 1.0f,
                            dx.data() + n * cin * m, static_cast<int>(m));
                cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(cin),
                            static_cast<int>(cout), static_cast<int>(m), 1.0f,
                            x.data() + n * cin * m, static_cast<int>(m), g_off,
                            static_cast<int>(m), 1.0f, dw_off.data(), static_cast<int>(cout));
            }
            for (std::int64_t ci = 0; ci < cin; ++ci)
                for (std::int64_t co = 0; co < cout; ++co)
                    dw[(ci * cout + co) * 8 + off] += dw_off[static_cast<std::size_t>(ci * cout + co)];
        }
        return dx;
    }
};

/// 1x1x1 convolution with bias: the classification head.
struct Conv1 {
    std::int64_t cin = 0, cout = 0;
    Tensor w, b, dw, db;
    Tensor x_saved;
    bool save_input = false;

    Conv1() = default;
    Conv1(std::int64_t in, std::int64_t out)
        : cin(in), cout(out), w({out, in}), b({out}), dw({out, in}), db({out}) {}

    Tensor forward(const Tensor& x) {
        ops::check_5d(x, "conv1 input");
        if (x.dim(1) != cin) throw ShapeError("conv1 channel mismatch");
        const std::int64_t N = x.dim(0), X = x.dim(2), Y = x.dim(3), Z = x.dim(4);
        const std::int64_t m = X * Y * Z;
        Tensor y({N, cout, X, Y, Z});
        for (std::int64_t n = 0; n < N; ++n) {
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(cout),
                        static_cast<int>(m), static_cast<int>(cin), 1.0f, w.data(),
                        static_cast<int>(cin), x.data() + n * cin * m, static_cast<int>(m), 0.0f,
                        y.data() + n * cout * m, static_cast<int>(m));
            for (std::int64_t co = 0; co < cout; ++co) {
                float* q = y.data() + (n * cout + co) * m;
                const float bias = b[co];
                for (std::int64_t i = 0; i < m; ++i) q[i] += bias;
            }
        }
        if (save_input) x_saved = x;
        return y;
    }

    Tensor backward(const Tensor& dy) {
        const Tensor& x = x_saved;
        const std::int64_t N = x.dim(0), X = x.dim(2), Y = x.dim(3), Z = x.dim(4);
        const std::int64_t m = X * Y * Z;
        Tensor dx(x.shape());
        for (std::int64_t n = 0; n < N; ++n) {
            const float* g = dy.data() + n * cout * m;
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(cout),
                        static_cast<int>(cin), static_cast<int>(m), 1.0f, g, static_cast<int>(m),
                        x.data() + n * cin * m, static_cast<int>(m), 1.0f, dw.data(),
                        static_cast<int>(cin));
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(cin),
                        static_cast<int>(m), static_cast<int>(cout), 1.0f, w.data(),
                        static_cast<int>(cin), g, static_cast<int>(m), 0.0f,
                        dx.data() + n * cin * m, static_cast<int>(m));
            for (std::int64_t co = 0; co < cout; ++co) {
                double acc = 0.0;
                const float* row = g + co * m;
                for (std::int64_t i = 0; i < m; ++i) acc += row[i];
                db[co] += static_cast<float>(acc);
            }
        }
        return dx;
    }
};

}  // namespace hetseg
