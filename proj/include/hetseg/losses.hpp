#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hetseg/errors.hpp"
#include "hetseg/tensor.hpp"
#include "hetseg/volume.hpp"

namespace hetseg {

/// Per-voxel class scores, shape (C, X, Y, Z), each voxel's vector
/// non-negative and summing to 1.
using ProbabilityField = Tensor;

// Lower clamp for every log argument. Bounds the loss near 16.1 without
// touching gradients in the operative range.
inline constexpr double kLogEps = 1e-7;

struct LossValue {
    double value = 0.0;
    std::optional<std::vector<float>> per_voxel;
};

inline void validate_probability_field(const Tensor& probs, double tol = 1e-5) {
    if (probs.ndim() != 4) throw ShapeError("probability field must be (C, X, Y, Z)");
    const std::int64_t C = probs.dim(0);
    const std::int64_t m = probs.numel() / C;
    for (std::int64_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
            const float p = probs[c * m + i];
            if (p < -static_cast<float>(tol)) throw ShapeError("negative probability");
            s += p;
        }
        if (std::abs(s - 1.0) > tol)
            throw ShapeError("voxel probabilities sum to " + std::to_string(s));
    }
}

namespace detail {

inline void check_pred_target(const Tensor& pred, const SegmentationMask& target) {
    if (pred.ndim() != 4) throw ShapeError("prediction must be (C, X, Y, Z)");
    const Index3 d{pred.dim(1), pred.dim(2), pred.dim(3)};
    if (d != target.size) throw ShapeError("prediction and target dims differ");
    const std::int64_t C = pred.dim(0);
    for (std::uint8_t v : target.data)
        if (v >= C) throw ShapeError("target label " + std::to_string(int(v)) + " >= C");
}

// ---- scalar-templated cores; S = float for training, double for checking ----

template <typename S>
S clamp_log_arg(S v) {
    return std::min(std::max(v, static_cast<S>(kLogEps)), static_cast<S>(1));
}

// probs layout: class c, voxel i at probs[c*m + i]
template <typename S>
S ce_eval(const S* probs, const std::uint8_t* y, std::int64_t C, std::int64_t m,
          S* per_voxel = nullptr) {
    (void)C;
    S acc = 0;
    for (std::int64_t i = 0; i < m; ++i) {
        const S term = -std::log(clamp_log_arg(probs[static_cast<std::int64_t>(y[i]) * m + i]));
        if (per_voxel) per_voxel[i] = term;
        acc += term;
    }
    return acc / static_cast<S>(m);
}

template <typename S>
void ce_grad(const S* probs, const std::uint8_t* y, std::int64_t C, std::int64_t m, S* grad) {
    const S inv_m = static_cast<S>(1) / static_cast<S>(m);
    for (std::int64_t i = 0; i < m; ++i) {
        const std::int64_t yi = y[i];
        if (probs[yi * m + i] < static_cast<S>(kLogEps)) {
            // clamped: the voxel term is constant
            for (std::int64_t c = 0; c < C; ++c) grad[c * m + i] = 0;
            continue;
        }
        for (std::int64_t c = 0; c < C; ++c)
            grad[c * m + i] = (probs[c * m + i] - (c == yi ? static_cast<S>(1) : static_cast<S>(0))) * inv_m;
    }
}

// comp[c] != 0 marks complement membership. lesion_sourced samples use the
// adaptive branch on background voxels; otherwise this is plain CE.
template <typename S>
S ace_eval(const S* probs, const std::uint8_t* y, std::int64_t C, std::int64_t m,
           const std::vector<char>& comp, bool lesion_sourced, S* per_voxel = nullptr) {
    S acc = 0;
    for (std::int64_t i = 0; i < m; ++i) {
        S term;
        if (!lesion_sourced || y[i] != 0) {
            term = -std::log(clamp_log_arg(probs[static_cast<std::int64_t>(y[i]) * m + i]));
        } else {
            S s = 0;
            for (std::int64_t c = 0; c < C; ++c)
                if (comp[static_cast<std::size_t>(c)]) s += probs[c * m + i];
            term = -std::log(clamp_log_arg(s));
        }
        if (per_voxel) per_voxel[i] = term;
        acc += term;
    }
    return acc / static_cast<S>(m);
}

template <typename S>
void ace_grad(const S* probs, const std::uint8_t* y, std::int64_t C, std::int64_t m,
              const std::vector<char>& comp, bool lesion_sourced, S* grad) {
    const S inv_m = static_cast<S>(1) / static_cast<S>(m);
    for (std::int64_t i = 0; i < m; ++i) {
        const std::int64_t yi = y[i];
        if (!lesion_sourced || yi != 0) {
            if (probs[yi * m + i] < static_cast<S>(kLogEps)) {
                for (std::int64_t c = 0; c < C; ++c) grad[c * m + i] = 0;
                continue;
            }
            for (std::int64_t c = 0; c < C; ++c)
                grad[c * m + i] =
                    (probs[c * m + i] - (c == yi ? static_cast<S>(1) : static_cast<S>(0))) * inv_m;
        } else {
            S s = 0;
            for (std::int64_t c = 0; c < C; ++c)
                if (comp[static_cast<std::size_t>(c)]) s += probs[c * m + i];
            if (s < static_cast<S>(kLogEps) || s >= static_cast<S>(1)) {
                // clamped on either side: flat term
                for (std::int64_t c = 0; c < C; ++c) grad[c * m + i] = 0;
                continue;
            }
            // d(-log s)/d logit_c through softmax: p_c * (1 - [c in comp]/s)
            for (std::int64_t c = 0; c < C; ++c) {
                const S pc = probs[c * m + i];
                grad[c * m + i] =
                    pc * (static_cast<S>(1) - (comp[static_cast<std::size_t>(c)] ? static_cast<S>(1) / s : static_cast<S>(0))) * inv_m;
            }
        }
    }
}

template <typename S>
S dice_eval(const S* probs, const std::uint8_t* y, std::int64_t C, std::int64_t m,
            S smooth = static_cast<S>(1)) {
    S acc = 0;
    for (std::int64_t c = 0; c < C; ++c) {
        S inter = 0, psum = 0;
        std::int64_t gsum = 0;
        for (std::int64_t i = 0; i < m; ++i) {
            const S p = probs[c * m + i];
            psum += p;
            if (y[i] == c) {
                inter += p;
                ++gsum;
            }
        }
        acc += (2 * inter + smooth) / (psum + static_cast<S>(gsum) + smooth);
    }
    return static_cast<S>(1) - acc / static_cast<S>(C);
}

template <typename S>
void dice_grad(const S* probs, const std::uint8_t* y, std::int64_t C, std::int64_t m, S* grad,
               S smooth = static_cast<S>(1)) {
    // dL/dp first, then the per-voxel softmax Jacobian.
    std::vector<S> dLdp(static_cast<std::size_t>(C * m));
    for (std::int64_t c = 0; c < C; ++c) {
        S inter = 0, psum = 0;
        std::int64_t gsum = 0;
        for (std::int64_t i = 0; i < m; ++i) {
            const S p = probs[c * m + i];
            psum += p;
            if (y[i] == c) {
                inter += p;
                ++gsum;
            }
        }
        const S denom = psum + static_cast<S>(gsum) + smooth;
        const S num = 2 * inter + smooth;
        for (std::int64_t i = 0; i < m; ++i) {
            const S g = (y[i] == c) ? static_cast<S>(1) : static_cast<S>(0);
            dLdp[static_cast<std::size_t>(c * m + i)] =
                -(2 * g * denom - num) / (denom * denom * static_cast<S>(C));
        }
    }
    for (std::int64_t i = 0; i < m; ++i) {
        S dot = 0;
        for (std::int64_t c = 0; c < C; ++c)
            dot += dLdp[static_cast<std::size_t>(c * m + i)] * probs[c * m + i];
        for (std::int64_t c = 0; c < C; ++c)
            grad[c * m + i] = probs[c * m + i] * (dLdp[static_cast<std::size_t>(c * m + i)] - dot);
    }
}

template <typename S>
void softmax_over_classes(const S* logits, S* probs, std::int64_t C, std::int64_t m) {
    for (std::int64_t i = 0; i < m; ++i) {
        S mx = logits[i];
        for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, logits[c * m + i]);
        S sum = 0;
        for (std::int64_t c = 0; c < C; ++c) {
            const S e = std::exp(logits[c * m + i] - mx);
            probs[c * m + i] = e;
            sum += e;
        }
        for (std::int64_t c = 0; c < C; ++c) probs[c * m + i] /= sum;
    }
}

inline std::vector<char> complement_flags(std::int64_t C, const std::vector<int>& complement) {
    std::vector<char> flags(static_cast<std::size_t>(C), 0);
    for (int id : complement) {
        if (id < 0 || id >= C) throw InvalidComplement("complement id out of range");
        flags[static_cast<std::size_t>(id)] = 1;
    }
    return flags;
}

}  // namespace detail

/// Voxel-wise categorical cross entropy, averaged over the patch:
/// mean_i -log(pred[y_i]).
inline LossValue cross_entropy(const ProbabilityField& pred, const SegmentationMask& target,
                               bool want_per_voxel = false) {
    detail::check_pred_target(pred, target);
    const std::int64_t C = pred.dim(0);
    const std::int64_t m = pred.numel() / C;
    LossValue out;
    std::vector<float> pv;
    if (want_per_voxel) pv.resize(static_cast<std::size_t>(m));
    out.value = detail::ce_eval<float>(pred.data(), target.data.data(), C, m,
                                       want_per_voxel ? pv.data() : nullptr);
    if (want_per_voxel) out.per_voxel = std::move(pv);
    return out;
}

/// Adaptive cross entropy: standard CE except on background voxels of
/// lesion-sourced samples, where the term is -log of the probability mass
/// summed over the complement set (the sum happens before the logarithm).
/// `complement` and `lesion_labels` must partition the labelset; the
/// complement must contain the background id. By default a sample counts as
/// lesion-sourced iff the complement is a proper subset of the labelset
/// (lesion_labels non-empty); `lesion_sourced` overrides that, which lets a
/// lesion-free patch under per-patch complements keep the adaptive branch
/// (where it degenerates to -log 1 = 0 on background voxels).
inline LossValue adaptive_cross_entropy(const ProbabilityField& pred,
                                        const SegmentationMask& target,
                                        const std::vector<int>& complement,
                                        const std::vector<int>& lesion_labels,
                                        bool want_per_voxel = false,
                                        std::optional<bool> lesion_sourced_override = std::nullopt) {
    detail::check_pred_target(pred, target);
    const std::int64_t C = pred.dim(0);
    const std::int64_t m = pred.numel() / C;

    std::vector<char> comp = detail::complement_flags(C, complement);
    if (!comp[0]) throw InvalidComplement("complement set must contain the background id 0");
    for (int id : lesion_labels) {
        if (id < 0 || id >= C) throw InvalidComplement("lesion label id out of range");
        if (comp[static_cast<std::size_t>(id)])
            throw InvalidComplement("complement and lesion labels must be disjoint");
    }
    if (complement.size() + lesion_labels.size() != static_cast<std::size_t>(C))
        throw InvalidComplement("complement and lesion labels must partition the labelset");

    const bool lesion_sourced = lesion_sourced_override.value_or(!lesion_labels.empty());
    LossValue out;
    std::vector<float> pv;
    if (want_per_voxel) pv.resize(static_cast<std::size_t>(m));
    out.value = detail::ace_eval<float>(pred.data(), target.data.data(), C, m, comp, lesion_sourced,
                                        want_per_voxel ? pv.data() : nullptr);
    if (want_per_voxel) out.per_voxel = std::move(pv);
    return out;
}

/// Multi-class soft Dice loss with smoothing 1, averaged over all C classes
/// (background included), one-hot ground truth.
inline LossValue soft_dice_loss(const ProbabilityField& pred, const SegmentationMask& target) {
    detail::check_pred_target(pred, target);
    const std::int64_t C = pred.dim(0);
    const std::int64_t m = pred.numel() / C;
    LossValue out;
    out.value = detail::dice_eval<float>(pred.data(), target.data.data(), C, m);
    return out;
}

// ---- fused softmax gradients (inputs are post-softmax probabilities) ----

inline Tensor cross_entropy_grad_logits(const ProbabilityField& probs,
                                        const SegmentationMask& target) {
    detail::check_pred_target(probs, target);
    const std::int64_t C = probs.dim(0);
    const std::int64_t m = probs.numel() / C;
    Tensor grad(probs.shape());
    detail::ce_grad<float>(probs.data(), target.data.data(), C, m, grad.data());
    return grad;
}

inline Tensor adaptive_cross_entropy_grad_logits(
    const ProbabilityField& probs, const SegmentationMask& target,
    const std::vector<int>& complement, const std::vector<int>& lesion_labels,
    std::optional<bool> lesion_sourced_override = std::nullopt) {
    detail::check_pred_target(probs, target);
    const std::int64_t C = probs.dim(0);
    const std::int64_t m = probs.numel() / C;
    std::vector<char> comp = detail::complement_flags(C, complement);
    Tensor grad(probs.shape());
    detail::ace_grad<float>(probs.data(), target.data.data(), C, m, comp,
                            lesion_sourced_override.value_or(!lesion_labels.empty()), grad.data());
    return grad;
}

inline Tensor soft_dice_grad_logits(const ProbabilityField& probs, const SegmentationMask& target) {
    detail::check_pred_target(probs, target);
    const std::int64_t C = probs.dim(0);
    const std::int64_t m = probs.numel() / C;
    Tensor grad(probs.shape());
    detail::dice_grad<float>(probs.data(), target.data.data(), C, m, grad.data());
    return grad;
}

// ---- finite-difference verification of the loss gradients ----

enum class LossKind { ce, ace, dice };

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "ce") return LossKind::ce;
    if (s == "ace") return LossKind::ace;
    if (s == "dice") return LossKind::dice;
    throw ConfigError("unknown loss: " + s);
}

inline std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::ce: return "ce";
        case LossKind::ace: return "ace";
        case LossKind::dice: return "dice";
    }
    return "?";
}

struct GradCheckReport {
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    double loss_value = 0.0;
};

/// Compares the analytic gradient of loss∘softmax w.r.t. logits against
/// central finite differences on a float64 shadow evaluation.
/// Relative error convention: |a - n| / max(|a|, |n|, 1).
inline GradCheckReport numeric_gradient_check(LossKind kind, const Tensor& logits,
                                              const SegmentationMask& target,
                                              const std::vector<int>& complement,
                                              const std::vector<int>& lesion_labels,
                                              double tolerance) {
    detail::check_pred_target(logits, target);
    const std::int64_t C = logits.dim(0);
    const std::int64_t m = logits.numel() / C;
    if (m > 216 || C > 5)
        throw ConfigError("numeric_gradient_check expects a small field (<= 6^3 voxels, C <= 5)");

    std::vector<char> comp;
    if (kind == LossKind::ace) comp = detail::complement_flags(C, complement);

    std::vector<double> x(logits.storage().begin(), logits.storage().end());
    std::vector<double> probs(x.size());

    auto eval = [&](const std::vector<double>& lg) -> double {
        std::vector<double> p(lg.size());
        detail::softmax_over_classes<double>(lg.data(), p.data(), C, m);
        switch (kind) {
            case LossKind::ce: return detail::ce_eval<double>(p.data(), target.data.data(), C, m);
            case LossKind::ace:
                return detail::ace_eval<double>(p.data(), target.data.data(), C, m, comp,
                                                !lesion_labels.empty());
            case LossKind::dice: return detail::dice_eval<double>(p.data(), target.data.data(), C, m);
        }
        return 0.0;
    };

    const double base = eval(x);
    if (!std::isfinite(base)) throw NonFiniteLoss("loss is non-finite at the evaluation point");

    detail::softmax_over_classes<double>(x.data(), probs.data(), C, m);
    std::vector<double> analytic(x.size());
    switch (kind) {
        case LossKind::ce:
            detail::ce_grad<double>(probs.data(), target.data.data(), C, m, analytic.data());
            break;
        case LossKind::ace:
            detail::ace_grad<double>(probs.data(), target.data.data(), C, m, comp,
                                     !lesion_labels.empty(), analytic.data());
            break;
        case LossKind::dice:
            detail::dice_grad<double>(probs.data(), target.data.data(), C, m, analytic.data());
            break;
    }

    const double h = 1e-3;
    GradCheckReport report;
    report.tolerance = tolerance;
    report.loss_value = base;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = eval(x);
        x[i] = keep - h;
        const double down = eval(x);
        x[i] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1.0});
        report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic[i] - numeric) / denom);
    }
    report.passed = report.max_rel_error <= tolerance;
    return report;
}

}  // namespace hetseg
