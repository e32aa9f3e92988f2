#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "qcpipe/error.hpp"

namespace qc {

struct McNemarResult {
    long b = 0;  // a correct, b wrong
    long c = 0;  // a wrong, b correct
    double statistic = 0.0;  // continuity-corrected chi-square, 1 df
    double p_chi2 = 1.0;
    double p_exact = 1.0;  // two-sided binomial
    double p_value = 1.0;  // p_exact when b + c < exact_below, else p_chi2
    bool exact = false;
};

inline double chi2_1df_survival(double x) { return x <= 0.0 ? 1.0 : std::erfc(std::sqrt(x / 2.0)); }

/// 2 * P(X <= min(b, c)) for X ~ Binomial(b + c, 1/2), capped at 1.
inline double mcnemar_exact_p(long b, long c) {
    const long n = b + c;
    if (n == 0) return 1.0;
    const long k = std::min(b, c);
    double tail = 0.0;
    for (long i = 0; i <= k; ++i)
        tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
    return std::min(1.0, 2.0 * tail);
}

inline McNemarResult mcnemar_from_counts(long b, long c, long exact_below = 25) {
    if (b < 0 || c < 0) fail(errc::invalid_argument, "discordant counts must be non-negative");
    McNemarResult r;
    r.b = b;
    r.c = c;
    if (b + c == 0) return r;  // no discordant pairs: p = 1
    const double d = std::abs(static_cast<double>(b - c)) - 1.0;
    r.statistic = std::max(d, 0.0) * std::max(d, 0.0) / static_cast<double>(b + c);
    r.p_chi2 = chi2_1df_survival(r.statistic);
    r.p_exact = mcnemar_exact_p(b, c);
    r.exact = b + c < exact_below;
    r.p_value = r.exact ? r.p_exact : r.p_chi2;
    return r;
}

inline McNemarResult mcnemar_test(std::span<const int> preds_a, std::span<const int> preds_b,
                                  std::span<const int> truth, long exact_below = 25) {
    if (preds_a.size() != truth.size() || preds_b.size() != truth.size())
        fail(errc::length_mismatch, "prediction and truth lengths differ");
    long b = 0, c = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool ok_a = preds_a[i] == truth[i], ok_b = preds_b[i] == truth[i];
        if (ok_a && !ok_b) ++b;
        if (!ok_a && ok_b) ++c;
    }
    return mcnemar_from_counts(b, c, exact_below);
}

}  // namespace qc
