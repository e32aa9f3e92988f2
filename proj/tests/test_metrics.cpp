#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qcpipe/eval/kappa.hpp"
#include "qcpipe/eval/mcnemar.hpp"
#include "qcpipe/eval/metrics.hpp"

using namespace qc;

namespace {

// Direct evaluation of 1 - sum(w o) / sum(w e) from per-item loops.
double brute_kappa(const std::vector<int>& a, const std::vector<int>& b, int k, bool quadratic) {
    const double n = static_cast<double>(a.size());
    double num = 0.0, den = 0.0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            double w = std::abs(i - j) / static_cast<double>(k - 1);
            if (quadratic) w *= w;
            double o = 0, ra = 0, rb = 0;
            for (std::size_t t = 0; t < a.size(); ++t) {
                o += (a[t] == i && b[t] == j);
                ra += (a[t] == i);
                rb += (b[t] == j);
            }
            num += w * o / n;
            den += w * (ra / n) * (rb / n);
        }
    return den == 0.0 ? 1.0 : 1.0 - num / den;
}

double pearson(const std::vector<int>& x, const std::vector<int>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST(Metrics, PublishedBalancedAccuracyConsistency) {
    const double rows[4][3] = {{91.83, 95.69, 93.76}, {96.45, 97.82, 97.14}, {79.88, 87.14, 83.51}, {77.39, 65.92, 71.65}};
    for (const auto& r : rows) EXPECT_NEAR((r[0] + r[1]) / 2.0, r[2], 0.01);
}

TEST(Metrics, ConfusionAndDefinitions) {
    const std::vector<int> pred = {1, 1, 0, 0, 1, 0, 1, 0, 0, 1};
    const std::vector<int> truth = {1, 0, 0, 1, 1, 0, 1, 0, 0, 0};
    const auto cm = confusion_matrix(pred, truth);
    EXPECT_EQ(cm, (ConfusionMatrix{3, 2, 4, 1}));
    const auto m = classification_metrics(cm);
    EXPECT_DOUBLE_EQ(*m.sensitivity, 0.75);
    EXPECT_NEAR(*m.specificity, 4.0 / 6.0, 1e-15);
    EXPECT_DOUBLE_EQ(*m.ppv, 0.6);
    EXPECT_DOUBLE_EQ(*m.npv, 0.8);
    EXPECT_NEAR(*m.ba, (0.75 + 4.0 / 6.0) / 2, 1e-15);
    EXPECT_NEAR(*m.f1, 2 * 0.6 * 0.75 / 1.35, 1e-15);
    EXPECT_NEAR(*m.mcc, pearson(pred, truth), 1e-12);
    EXPECT_DOUBLE_EQ(balanced_accuracy(pred, truth), *m.ba);
}

TEST(Metrics, MccEqualsCorrelationOnRandomVectors) {
    std::mt19937_64 rng(3);
    std::bernoulli_distribution coin(0.4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> p(30), t(30);
        for (int i = 0; i < 30; ++i) p[i] = coin(rng), t[i] = coin(rng);
        const auto m = classification_metrics(confusion_matrix(p, t));
        if (m.mcc) {
            EXPECT_NEAR(*m.mcc, pearson(p, t), 1e-12);
        }
        const double ba = balanced_accuracy(p, t);
        if (m.ba) {
            EXPECT_NEAR(ba, *m.ba, 1e-15);
        }
    }
}

TEST(Metrics, UndefinedRatiosAndErrors) {
    const auto m = classification_metrics({0, 0, 5, 0});
    EXPECT_FALSE(m.sensitivity);
    EXPECT_FALSE(m.ppv);
    EXPECT_FALSE(m.ba);
    EXPECT_FALSE(m.mcc);
    EXPECT_DOUBLE_EQ(*m.specificity, 1.0);
    EXPECT_THROW(classification_metrics({}), error);
    EXPECT_THROW(confusion_matrix(std::vector<int>{1}, std::vector<int>{1, 0}), error);
    EXPECT_THROW(confusion_matrix(std::vector<int>{2}, std::vector<int>{1}), error);
}

TEST(Auc, PairwiseFixtureAndInvariance) {
    const std::vector<double> s = {0.1, 0.4, 0.35, 0.8, 0.4, 0.9};
    const std::vector<int> y = {0, 0, 1, 1, 1, 0};
    // Pairs (pos, neg): 3x3 = 9; wins counted by hand: 0.35 beats 0.1; 0.8 beats 0.1, 0.4;
    // 0.4 beats 0.1 and ties 0.4. Total 1 + 2 + 1.5 = 4.5.
    EXPECT_NEAR(roc_auc(s, y), 4.5 / 9.0, 1e-15);
    std::vector<double> t;
    for (double v : s) t.push_back(std::exp(3 * v) - 7);
    EXPECT_NEAR(roc_auc(t, y), roc_auc(s, y), 1e-15);
    std::vector<double> flipped;
    for (double v : s) flipped.push_back(-v);
    EXPECT_NEAR(roc_auc(flipped, y), 1.0 - 4.5 / 9.0, 1e-15);
    EXPECT_THROW(roc_auc(s, std::vector<int>(6, 1)), error);
}

TEST(Auc, HardLabelEqualsBalancedAccuracy) {
    const std::vector<int> p = {1, 0, 1, 1, 0, 0}, t = {1, 0, 0, 1, 1, 0};
    EXPECT_DOUBLE_EQ(hard_label_auc(p, t), balanced_accuracy(p, t));
    std::vector<double> scores(p.begin(), p.end());
    EXPECT_DOUBLE_EQ(roc_auc(scores, t), hard_label_auc(p, t));
    const auto r = evaluate_predictions("sr", p, t, scores);
    EXPECT_EQ(r.auc_hard, r.metrics.ba);
    EXPECT_DOUBLE_EQ(*r.auc_rank, *r.auc_hard);
}

TEST(Kappa, MatchesBruteForce) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + trial % 4;
        std::uniform_int_distribution<int> cat(0, k - 1);
        std::bernoulli_distribution agree(0.6);
        std::vector<int> a(200), b(200);
        for (int i = 0; i < 200; ++i) {
            a[i] = cat(rng);
            b[i] = agree(rng) ? a[i] : cat(rng);
        }
        EXPECT_NEAR(weighted_cohens_kappa(a, b, k), brute_kappa(a, b, k, false), 1e-12);
        EXPECT_NEAR(weighted_cohens_kappa(a, b, k, KappaWeighting::quadratic), brute_kappa(a, b, k, true), 1e-12);
        EXPECT_NEAR(weighted_cohens_kappa(a, b, k), weighted_cohens_kappa(b, a, k), 1e-12);
    }
}

TEST(Kappa, IdenticalAndBinaryCases) {
    const std::vector<int> a = {0, 1, 2, 2, 1, 0, 2};
    EXPECT_EQ(weighted_cohens_kappa(a, a, 3), 1.0);
    const std::vector<int> c(5, 1);
    EXPECT_EQ(weighted_cohens_kappa(c, c, 3), 1.0);
    // k = 2: unweighted kappa (po - pe) / (1 - pe).
    const std::vector<int> x = {1, 1, 0, 0, 1, 0, 1, 1}, y = {1, 0, 0, 0, 1, 1, 1, 1};
    const double po = 6.0 / 8, pe = (5.0 / 8) * (5.0 / 8) + (3.0 / 8) * (3.0 / 8);
    EXPECT_NEAR(weighted_cohens_kappa(x, y, 2), (po - pe) / (1 - pe), 1e-15);
    EXPECT_NEAR(weighted_cohens_kappa(x, y, 2, KappaWeighting::quadratic), (po - pe) / (1 - pe), 1e-15);
    EXPECT_THROW(weighted_cohens_kappa(std::vector<int>{1}, std::vector<int>{1}, 3), error);
    EXPECT_THROW(weighted_cohens_kappa(x, std::vector<int>{1}, 3), error);
    EXPECT_THROW(weighted_cohens_kappa(x, y, 1), error);
    EXPECT_THROW(weighted_cohens_kappa(std::vector<int>{0, 3}, std::vector<int>{0, 1}, 3), error);
    EXPECT_EQ(parse_weighting("quadratic"), KappaWeighting::quadratic);
    EXPECT_THROW(parse_weighting("cubic"), error);
}

TEST(McNemar, Examples) {
    const auto small = mcnemar_from_counts(3, 1);
    EXPECT_TRUE(small.exact);
    EXPECT_NEAR(small.p_value, 0.625, 1e-12);
    const auto big = mcnemar_from_counts(15, 5);
    EXPECT_NEAR(big.statistic, 4.05, 1e-12);
    EXPECT_NEAR(big.p_chi2, 0.0441713, 1e-6);
    // 20 discordant pairs is below the exact threshold, so the reported p-value is binomial.
    EXPECT_TRUE(big.exact);
    EXPECT_NEAR(big.p_value, 0.0413895, 1e-6);
    const auto large = mcnemar_from_counts(30, 12);
    EXPECT_FALSE(large.exact);
    EXPECT_NEAR(large.statistic, 289.0 / 42.0, 1e-12);
    EXPECT_EQ(large.p_value, large.p_chi2);
    EXPECT_EQ(mcnemar_from_counts(0, 0).p_value, 1.0);
    EXPECT_EQ(mcnemar_from_counts(4, 4).p_value, 1.0);
}

TEST(McNemar, FromPredictions) {
    const std::vector<int> truth = {1, 1, 0, 0, 1, 0};
    EXPECT_EQ(mcnemar_test(truth, truth, truth).p_value, 1.0);
    const std::vector<int> a = {1, 1, 0, 0, 0, 0}, b = {0, 0, 0, 1, 1, 0};
    const auto r = mcnemar_test(a, b, truth);
    EXPECT_EQ(r.b, 3);
    EXPECT_EQ(r.c, 1);
    EXPECT_THROW(mcnemar_test(a, std::vector<int>{1}, truth), error);
}

TEST(AnnotatorBa, Fixtures) {
    const std::vector<int> cons = {0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0, 1, 1, 0, 0};
    std::vector<int> inv;
    for (int v : cons) inv.push_back(1 - v);
    EXPECT_DOUBLE_EQ(annotator_ba(cons, cons, cons), 1.0);
    EXPECT_DOUBLE_EQ(annotator_ba(cons, inv, cons), 0.5);
    // Rater 1 misses two positives; rater 2 flags three negatives. 10 positives, 10 negatives.
    std::vector<int> r1 = cons, r2 = cons;
    r1[1] = 0;
    r1[2] = 0;
    r2[0] = 1;
    r2[3] = 1;
    r2[5] = 1;
    const double ba1 = (8.0 / 10 + 10.0 / 10) / 2, ba2 = (10.0 / 10 + 7.0 / 10) / 2;
    EXPECT_NEAR(annotator_ba(r1, r2, cons), (ba1 + ba2) / 2, 1e-15);
    EXPECT_THROW(annotator_ba(r1, std::vector<int>{1}, cons), error);
}

TEST(Aggregate, MeanStdAndTable) {
    const std::vector<double> v = {0.9, 0.8, 1.0};
    const auto ms = mean_std(v);
    EXPECT_NEAR(ms.mean, 0.9, 1e-15);
    EXPECT_NEAR(ms.std, 0.1, 1e-15);
    std::vector<EvalReport> reports;
    reports.push_back(evaluate_predictions("sr", std::vector<int>{1, 0, 1, 0}, std::vector<int>{1, 0, 0, 0}, {}));
    reports.push_back(evaluate_predictions("sr", std::vector<int>{1, 0, 0, 0}, std::vector<int>{1, 0, 0, 0}, {}));
    const auto agg = aggregate_reports(reports);
    EXPECT_NEAR(agg.at("ba").mean, (5.0 / 6 + 1.0) / 2, 1e-15);
    EXPECT_EQ(agg.at("ba").count, 2u);
    EXPECT_EQ(agg.count("auc_rank"), 0u);
    const auto table = format_table({{"sr", agg}});
    EXPECT_NE(table.find("91.67 ± 11.79"), std::string::npos) << table;
    const auto j = report_to_json(reports[0]);
    EXPECT_TRUE(j.at("auc_rank").is_null());
}
