#include <set>

#include <gtest/gtest.h>

#include "qcpipe/eval/splitting.hpp"
#include "split_fixture.hpp"

using namespace qc;

TEST(LargestRemainder, Examples) {
    EXPECT_EQ(largest_remainder({1, 1, 1}, 10), (std::vector<std::size_t>{4, 3, 3}));
    EXPECT_EQ(largest_remainder({26, 16, 28, 30}, 100), (std::vector<std::size_t>{26, 16, 28, 30}));
    EXPECT_EQ(largest_remainder({2, 5}, 3), (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(largest_remainder({0, 0}, 3), (std::vector<std::size_t>{0, 0}));
}

TEST(StratifiedSplit, ProportionalAndPatientDisjoint) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto items = fixtures::synthetic_catalog(400, seed);
        const auto s = make_dataset_split(items, 80, 5, seed);
        EXPECT_TRUE(s.within_one()) << "seed " << seed << " deviation " << s.max_deviation;
        EXPECT_EQ(find_split_leak(s.split, fixtures::patient_map(items)), "") << "seed " << seed;
        std::size_t in_test = 0;
        for (const auto& [name, r] : s.strata) in_test += r.in_test;
        EXPECT_EQ(in_test, s.split.test.size());
        EXPECT_NEAR(static_cast<double>(s.split.test.size()), 80.0, 2.0);
    }
}

TEST(StratifiedSplit, CoversEveryImageOnce) {
    const auto items = fixtures::synthetic_catalog(300, 4);
    const auto s = make_dataset_split(items, 60, 5, 9).split;
    ASSERT_EQ(s.n_folds, 5);
    for (int f = 0; f < 5; ++f) {
        std::multiset<std::string> all(s.test.begin(), s.test.end());
        all.insert(s.train[f].begin(), s.train[f].end());
        all.insert(s.validation[f].begin(), s.validation[f].end());
        EXPECT_EQ(all.size(), items.size());
        EXPECT_EQ(std::set<std::string>(all.begin(), all.end()).size(), items.size());
    }
    // Validation folds partition the pool.
    std::set<std::string> val;
    for (const auto& v : s.validation) val.insert(v.begin(), v.end());
    EXPECT_EQ(val.size(), items.size() - s.test.size());
}

TEST(StratifiedSplit, Deterministic) {
    const auto items = fixtures::synthetic_catalog(200, 1);
    EXPECT_EQ(make_dataset_split(items, 40, 5, 3).split, make_dataset_split(items, 40, 5, 3).split);
    EXPECT_NE(make_dataset_split(items, 40, 5, 3).split.test, make_dataset_split(items, 40, 5, 4).split.test);
}

TEST(StratifiedSplit, Errors) {
    const auto items = fixtures::synthetic_catalog(20, 1);
    try {
        stratified_test_split(items, 21, 0);
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.code(), errc::size_too_large);
    }
    EXPECT_THROW(stratified_test_split({}, 0, 0), error);
    auto dup = items;
    dup.push_back(items[0]);
    EXPECT_THROW(stratified_test_split(dup, 5, 0), error);
}

TEST(StratifiedSplit, InfeasibleWhenOnePatientHoldsAStratum) {
    // 6 images of stratum "b" belong to one patient; a 50% test set targets 3 of them.
    std::vector<SplitItem> items;
    for (int i = 0; i < 6; ++i) items.push_back({"b" + std::to_string(i), "big", "b"});
    for (int i = 0; i < 6; ++i) items.push_back({"a" + std::to_string(i), "p" + std::to_string(i), "a"});
    const auto s = stratified_test_split(items, 6, 1);
    EXPECT_FALSE(s.within_one());
    try {
        require_stratified(s);
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.code(), errc::infeasible_strata);
    }
}

TEST(PatientKfold, RoundRobinAndErrors) {
    const auto items = fixtures::synthetic_catalog(100, 2);
    const auto s = patient_kfold(items, 5, 1);
    std::set<std::string> patients;
    for (const auto& it : items) patients.insert(it.patient_id);
    const auto pm = fixtures::patient_map(items);
    for (int f = 0; f < 5; ++f) {
        std::set<std::string> vp;
        for (const auto& id : s.validation[f]) vp.insert(pm.at(id));
        const double expect = static_cast<double>(patients.size()) / 5;
        EXPECT_NEAR(static_cast<double>(vp.size()), expect, 1.0);
    }
    EXPECT_EQ(find_split_leak(s, pm), "");
    EXPECT_THROW(patient_kfold(items, 1, 0), error);
    const std::vector<SplitItem> few = {{"a", "p1", "x"}, {"b", "p1", "x"}, {"c", "p2", "x"}};
    EXPECT_THROW(patient_kfold(few, 3, 0), error);
}
