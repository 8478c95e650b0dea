#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "hetseg/errors.hpp"
#include "hetseg/volume.hpp"

namespace hetseg {

/// Dice similarity for one class: 2|A∩B| / (|A|+|B|). Two masks that both
/// lack the class agree perfectly on its absence (1.0); exactly one empty
/// gives 0.0. Symmetric in its mask arguments.
inline double dice_coefficient(const SegmentationMask& pred, const SegmentationMask& truth,
                               int class_id) {
    if (pred.size != truth.size) throw ShapeError("dice: mask dims differ");
    if (class_id < 0 || class_id > 255)
        throw NotFound("class id " + std::to_string(class_id) + " cannot appear in a mask");
    const auto cls = static_cast<std::uint8_t>(class_id);
    std::int64_t a = 0, b = 0, inter = 0;
    const std::int64_t n = pred.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const bool in_a = pred.data[static_cast<std::size_t>(i)] == cls;
        const bool in_b = truth.data[static_cast<std::size_t>(i)] == cls;
        a += in_a;
        b += in_b;
        inter += in_a && in_b;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

/// Per-class, per-subject Dice values. values[s][c] pairs with
/// both_empty[s][c], which flags scores produced by the both-empty
/// convention so summaries can exclude them.
struct DiceScores {
    std::vector<std::string> class_names;
    std::vector<int> class_ids;
    std::vector<std::string> subject_ids;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<char>> both_empty;

    void validate() const {
        if (values.size() != subject_ids.size() || both_empty.size() != subject_ids.size())
            throw ShapeError("dice scores: one row per subject required");
        for (std::size_t s = 0; s < values.size(); ++s)
            if (values[s].size() != class_names.size() || both_empty[s].size() != class_names.size())
                throw ShapeError("dice scores: one value per class required");
    }
};

struct ClassSummary {
    std::string class_name;
    double mean = 0.0;
    double std_dev = 0.0;  // n-1 denominator; 0 when only one subject
    int n = 0;
    bool single_subject = false;
};

/// Per-class mean and sample standard deviation across subjects.
inline std::vector<ClassSummary> summarize(const DiceScores& scores) {
    scores.validate();
    if (scores.subject_ids.empty()) throw InsufficientData("no subjects to summarize");
    std::vector<ClassSummary> out;
    for (std::size_t c = 0; c < scores.class_names.size(); ++c) {
        ClassSummary s;
        s.class_name = scores.class_names[c];
        s.n = static_cast<int>(scores.subject_ids.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < scores.values.size(); ++i) sum += scores.values[i][c];
        s.mean = sum / s.n;
        if (s.n == 1) {
            s.single_subject = true;
        } else {
            double acc = 0.0;
            for (std::size_t i = 0; i < scores.values.size(); ++i) {
                const double d = scores.values[i][c] - s.mean;
                acc += d * d;
            }
            s.std_dev = std::sqrt(acc / (s.n - 1));
        }
        out.push_back(std::move(s));
    }
    return out;
}

struct WilcoxonResult {
    double statistic = 0.0;  // min of the positive- and negative-rank sums
    double p_value = 1.0;
    int n_effective = 0;     // pairs left after dropping zero differences
    bool exact = false;
};

namespace detail {

// Midranks of |values|, doubled so ties stay integral. Also accumulates the
// tie-correction term sum(t^3 - t) over tie groups.
inline void scaled_midranks(const std::vector<double>& abs_diffs, std::vector<std::int64_t>& out,
                            double& tie_term) {
    const std::size_t n = abs_diffs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return abs_diffs[i] < abs_diffs[j]; });
    out.assign(n, 0);
    tie_term = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && abs_diffs[order[j + 1]] == abs_diffs[order[i]]) ++j;
        // positions i+1 .. j+1 (1-based) share midrank ((i+1)+(j+1))/2
        const std::int64_t scaled = static_cast<std::int64_t>(i + j + 2);
        for (std::size_t k = i; k <= j; ++k) out[order[k]] = scaled;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
}

}  // namespace detail

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; |differences| are ranked with midranks for ties. The null
/// distribution is enumerated exactly over sign assignments for up to 20
/// effective pairs, and approximated by a tie- and continuity-corrected
/// normal above that.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                           const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("wilcoxon: samples must pair up");
    std::vector<double> abs_diffs;
    std::vector<int> signs;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d == 0.0) continue;
        abs_diffs.push_back(std::abs(d));
        signs.push_back(d > 0.0 ? 1 : -1);
    }
    const int n = static_cast<int>(abs_diffs.size());
    if (n < 5)
        throw InsufficientData("wilcoxon needs at least 5 non-zero differences, got " +
                               std::to_string(n));

    std::vector<std::int64_t> scaled;  // 2 * midrank
    double tie_term = 0.0;
    detail::scaled_midranks(abs_diffs, scaled, tie_term);

    std::int64_t w_plus2 = 0, total2 = 0;
    for (int i = 0; i < n; ++i) {
        total2 += scaled[static_cast<std::size_t>(i)];
        if (signs[static_cast<std::size_t>(i)] > 0) w_plus2 += scaled[static_cast<std::size_t>(i)];
    }
    const std::int64_t w_min2 = std::min(w_plus2, total2 - w_plus2);

    WilcoxonResult res;
    res.statistic = static_cast<double>(w_min2) / 2.0;
    res.n_effective = n;

    if (n <= 20) {
        // Subset-sum counts over the scaled ranks; the sign distribution is
        // symmetric, so two-sided p = 2 P(W+ <= w_min).
        std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        for (int i = 0; i < n; ++i) {
            const std::int64_t r = scaled[static_cast<std::size_t>(i)];
            for (std::int64_t s = total2; s >= r; --s)
                count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r)];
        }
        double below = 0.0;
        for (std::int64_t s = 0; s <= w_min2; ++s) below += count[static_cast<std::size_t>(s)];
        res.p_value = std::min(1.0, 2.0 * below / std::pow(2.0, n));
        res.exact = true;
    } else {
        const double nn = static_cast<double>(n);
        const double mu = nn * (nn + 1.0) / 4.0;
        const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
        const double w = static_cast<double>(w_min2) / 2.0;
        const double z = (w - mu + 0.5) / std::sqrt(var);
        res.p_value = std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
        res.exact = false;
    }
    return res;
}

}  // namespace hetseg
