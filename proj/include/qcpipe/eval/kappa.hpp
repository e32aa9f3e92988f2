#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "qcpipe/error.hpp"

namespace qc {

enum class KappaWeighting { linear, quadratic };

inline KappaWeighting parse_weighting(const std::string& s) {
    if (s == "linear") return KappaWeighting::linear;
    if (s == "quadratic") return KappaWeighting::quadratic;
    fail(errc::invalid_argument, "weighting must be linear or quadratic");
}

/// Weighted Cohen's kappa for ratings in [0, k). Returns 1 when chance disagreement is zero.
inline double weighted_cohens_kappa(std::span<const int> a, std::span<const int> b, int k,
                                    KappaWeighting weighting = KappaWeighting::linear) {
    if (a.size() != b.size()) fail(errc::length_mismatch, "rating vectors differ in length");
    if (a.size() < 2) fail(errc::invalid_argument, "kappa needs at least 2 items");
    if (k < 2) fail(errc::invalid_argument, "kappa needs at least 2 categories");
    const auto K = static_cast<std::size_t>(k);
    std::vector<double> obs(K * K, 0.0), ra(K, 0.0), rb(K, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < 0 || a[i] >= k || b[i] < 0 || b[i] >= k)
            fail(errc::invalid_argument, "rating outside [0, " + std::to_string(k) + ")");
        obs[static_cast<std::size_t>(a[i]) * K + static_cast<std::size_t>(b[i])] += 1.0;
        ra[static_cast<std::size_t>(a[i])] += 1.0;
        rb[static_cast<std::size_t>(b[i])] += 1.0;
    }
    const double n = static_cast<double>(a.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
            double w = std::abs(static_cast<double>(i) - static_cast<double>(j)) / static_cast<double>(k - 1);
            if (weighting == KappaWeighting::quadratic) w *= w;
            num += w * obs[i * K + j] / n;
            den += w * (ra[i] / n) * (rb[j] / n);
        }
    if (den == 0.0) return 1.0;
    return 1.0 - num / den;
}

}  // namespace qc
