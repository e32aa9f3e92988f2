#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "qcpipe/error.hpp"
#include "qcpipe/split.hpp"

namespace qc {

struct SplitItem {
    std::string image_id;
    std::string patient_id;
    std::string stratum;  // e.g. "tier2|SIEMENS"
};

struct StratumReport {
    std::size_t total = 0;
    double proportional = 0.0;  // n_test * total / N
    std::size_t target = 0;     // largest-remainder rounding of `proportional`
    std::size_t in_test = 0;
};

struct StratifiedSplit {
    DatasetSplit split;  // test filled; train/validation hold the remaining pool as a single entry
    std::map<std::string, StratumReport> strata;
    double max_deviation = 0.0;  // max |in_test - proportional|
    bool within_one() const { return max_deviation <= 1.0 + 1e-9; }
};

/// Largest-remainder integer allocation of `total` proportional to `weights`.
inline std::vector<std::size_t> largest_remainder(const std::vector<double>& weights, std::size_t total) {
    double sum = 0.0;
    for (double w : weights) sum += w;
    std::vector<std::size_t> out(weights.size(), 0);
    if (sum <= 0.0) return out;
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(total) * weights[i] / sum;
        out[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += out[i];
        rem.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < total && r < rem.size(); ++r, ++assigned) ++out[rem[r].second];
    return out;
}

namespace detail {

struct PatientGroup {
    std::string patient;
    std::vector<std::size_t> items;
    std::map<std::string, std::size_t> per_stratum;
};

inline std::vector<PatientGroup> group_by_patient(const std::vector<SplitItem>& items) {
    std::map<std::string, std::size_t> index;
    std::vector<PatientGroup> groups;
    std::set<std::string> seen_images;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!seen_images.insert(items[i].image_id).second)
            fail(errc::invalid_argument, "duplicate image id '" + items[i].image_id + "'");
        auto [it, fresh] = index.emplace(items[i].patient_id, groups.size());
        if (fresh) groups.push_back({items[i].patient_id, {}, {}});
        auto& g = groups[it->second];
        g.items.push_back(i);
        ++g.per_stratum[items[i].stratum];
    }
    return groups;
}

/// Strata outside +-1 of proportional dominate; then distance to the integer targets and to n_test.
inline double split_cost(const std::map<std::string, StratumReport>& strata, std::size_t placed, std::size_t n_test) {
    double cost = 0.0;
    for (const auto& [name, r] : strata) {
        const double in = static_cast<double>(r.in_test);
        cost += 1000.0 * std::max(0.0, std::abs(in - r.proportional) - 1.0) + std::abs(in - static_cast<double>(r.target));
    }
    return cost + std::abs(static_cast<double>(placed) - static_cast<double>(n_test));
}

/// Hill climbing over single additions, removals and swaps of patient groups.
inline void repair_split(const std::vector<PatientGroup>& groups, std::vector<bool>& in_test,
                         std::map<std::string, StratumReport>& strata, std::size_t& placed, std::size_t n_test) {
    auto apply = [&](std::size_t g, int sign) {
        for (const auto& [s, n] : groups[g].per_stratum)
            strata[s].in_test = static_cast<std::size_t>(static_cast<long>(strata[s].in_test) + sign * static_cast<long>(n));
        placed = static_cast<std::size_t>(static_cast<long>(placed) + sign * static_cast<long>(groups[g].items.size()));
        in_test[g] = sign > 0;
    };
    double best = split_cost(strata, placed, n_test);
    for (int iter = 0; iter < 500 && best > 0.0; ++iter) {
        bool improved = false;
        for (std::size_t a = 0; a < groups.size() && !improved; ++a) {
            const int sign_a = in_test[a] ? -1 : 1;
            apply(a, sign_a);
            double c = split_cost(strata, placed, n_test);
            if (c < best) {
                best = c;
                improved = true;
                break;
            }
            for (std::size_t b = 0; b < groups.size(); ++b) {
                const int sign_b = in_test[b] ? -1 : 1;
                if (b == a || sign_b == sign_a) continue;
                apply(b, sign_b);
                c = split_cost(strata, placed, n_test);
                if (c < best) {
                    best = c;
                    improved = true;
                    break;
                }
                apply(b, -sign_b);
            }
            if (!improved) apply(a, -sign_a);
        }
        if (!improved) break;
    }
}

}  // namespace detail

/// Patient-level test split whose stratum counts track proportional allocation. Larger patients
/// are placed first so single-image patients can fill the remaining per-stratum gaps; a local
/// search repairs the rare greedy result that still misses a stratum by more than one image.
inline StratifiedSplit stratified_test_split(const std::vector<SplitItem>& items, std::size_t n_test,
                                             std::uint64_t seed) {
    if (items.empty()) fail(errc::invalid_argument, "no items to split");
    if (n_test > items.size()) fail(errc::size_too_large, "n_test exceeds the number of images");
    auto groups = detail::group_by_patient(items);

    StratifiedSplit out;
    for (const auto& it : items) ++out.strata[it.stratum].total;
    std::vector<double> weights;
    for (const auto& [name, r] : out.strata) weights.push_back(static_cast<double>(r.total));
    const auto targets = largest_remainder(weights, n_test);
    {
        std::size_t k = 0;
        for (auto& [name, r] : out.strata) {
            r.proportional = static_cast<double>(n_test) * static_cast<double>(r.total) / static_cast<double>(items.size());
            r.target = targets[k++];
        }
    }

    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);
    std::stable_sort(groups.begin(), groups.end(),
                     [](const auto& a, const auto& b) { return a.items.size() > b.items.size(); });

    std::vector<bool> in_test(groups.size(), false);
    auto fits = [&](const detail::PatientGroup& g, std::size_t slack) {
        for (const auto& [s, n] : g.per_stratum)
            if (out.strata[s].in_test + n > out.strata[s].target + slack) return false;
        return true;
    };
    auto take = [&](std::size_t gi) {
        in_test[gi] = true;
        for (const auto& [s, n] : groups[gi].per_stratum) out.strata[s].in_test += n;
    };
    std::size_t placed = 0;
    for (std::size_t gi = 0; gi < groups.size() && placed < n_test; ++gi)
        if (fits(groups[gi], 0)) {
            take(gi);
            placed += groups[gi].items.size();
        }
    // Best effort for strata still short: allow one image of overshoot elsewhere.
    for (std::size_t gi = groups.size(); gi-- > 0 && placed < n_test;) {
        if (in_test[gi]) continue;
        bool helps = false;
        for (const auto& [s, n] : groups[gi].per_stratum)
            if (out.strata[s].in_test < out.strata[s].target) helps = true;
        if (helps && fits(groups[gi], 1)) {
            take(gi);
            placed += groups[gi].items.size();
        }
    }

    auto deviation = [&] {
        double d = 0.0;
        for (const auto& [name, r] : out.strata)
            d = std::max(d, std::abs(static_cast<double>(r.in_test) - r.proportional));
        return d;
    };
    if (deviation() > 1.0 + 1e-9) detail::repair_split(groups, in_test, out.strata, placed, n_test);

    std::vector<bool> item_test(items.size(), false);
    for (std::size_t gi = 0; gi < groups.size(); ++gi)
        if (in_test[gi])
            for (auto i : groups[gi].items) item_test[i] = true;
    std::vector<std::string> pool;
    for (std::size_t i = 0; i < items.size(); ++i)
        (item_test[i] ? out.split.test : pool).push_back(items[i].image_id);
    out.split.train = {pool};
    out.split.validation = {{}};
    out.split.n_folds = 1;
    for (const auto& [name, r] : out.strata)
        out.max_deviation = std::max(out.max_deviation, std::abs(static_cast<double>(r.in_test) - r.proportional));
    return out;
}

/// Throws InfeasibleStrata when the best-effort split misses proportional allocation by more than one image.
inline void require_stratified(const StratifiedSplit& s) {
    if (s.within_one()) return;
    std::string msg = "stratified split deviates by " + std::to_string(s.max_deviation) + " images:";
    for (const auto& [name, r] : s.strata)
        msg += " " + name + "=" + std::to_string(r.in_test) + "/" + std::to_string(r.proportional);
    fail(errc::infeasible_strata, msg);
}

/// Patients are shuffled and dealt round-robin into `n_folds` groups; fold i validates on group i.
inline DatasetSplit patient_kfold(const std::vector<SplitItem>& pool, int n_folds, std::uint64_t seed) {
    if (n_folds < 2) fail(errc::invalid_argument, "n_folds must be at least 2");
    auto groups = detail::group_by_patient(pool);
    if (groups.size() < static_cast<std::size_t>(n_folds))
        fail(errc::too_few_patients, std::to_string(groups.size()) + " patients for " + std::to_string(n_folds) + " folds");
    std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.patient < b.patient; });
    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);
    std::map<std::string, int> fold_of;
    for (std::size_t g = 0; g < groups.size(); ++g) fold_of[groups[g].patient] = static_cast<int>(g % static_cast<std::size_t>(n_folds));

    DatasetSplit s;
    s.n_folds = n_folds;
    s.train.assign(static_cast<std::size_t>(n_folds), {});
    s.validation.assign(static_cast<std::size_t>(n_folds), {});
    for (const auto& it : pool) {
        const int f = fold_of[it.patient_id];
        for (int k = 0; k < n_folds; ++k)
            (k == f ? s.validation : s.train)[static_cast<std::size_t>(k)].push_back(it.image_id);
    }
    return s;
}

/// Stratified test split followed by patient-level k-fold on the remaining pool.
inline StratifiedSplit make_dataset_split(const std::vector<SplitItem>& items, std::size_t n_test, int n_folds,
                                          std::uint64_t seed) {
    auto st = stratified_test_split(items, n_test, seed);
    const std::set<std::string> test(st.split.test.begin(), st.split.test.end());
    std::vector<SplitItem> pool;
    for (const auto& it : items)
        if (!test.count(it.image_id)) pool.push_back(it);
    auto cv = patient_kfold(pool, n_folds, seed ^ 0x9E3779B97F4A7C15ULL);
    cv.test = st.split.test;
    st.split = std::move(cv);
    return st;
}

}  // namespace qc
