#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "o4a/metrics.hpp"
#include "o4a/rng.hpp"

using namespace o4a;

namespace {

// Independent pair-counting oracle for the Mann-Whitney statistic.
double auroc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0;
    long pairs = 0;
    for (size_t i = 0; i < s.size(); ++i)
        for (size_t j = 0; j < s.size(); ++j) {
            if (!(y[i] == 1 && y[j] == 0)) continue;
            ++pairs;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    return wins / static_cast<double>(pairs);
}

// Sort-and-locate oracle: rank = position of the ground truth after sorting
// all candidates descending, resolving ties pessimistically.
int rank_oracle(const RankTrial& t) {
    std::vector<double> all = t.negative_scores;
    all.push_back(t.ground_truth_score);
    std::sort(all.begin(), all.end(), std::greater<double>());
    // pessimistic: ground truth goes after every equal-scored negative
    int r = 0;
    for (double v : all)
        if (v >= t.ground_truth_score) ++r;
    return r;
}

} // namespace

TEST_CASE("auroc matches hand example") {
    // scores 0.9/0.8 positive, 0.7/0.6 negative with one inversion
    std::vector<double> s{0.9, 0.4, 0.8, 0.6};
    std::vector<int> y{1, 1, 0, 0};
    // pairs: (0.9,0.8)+ (0.9,0.6)+ (0.4,0.8)- (0.4,0.6)- -> 2/4
    CHECK(auroc(s, y) == doctest::Approx(0.5).epsilon(1e-12));
    std::vector<double> s2{0.9, 0.7, 0.8, 0.6};
    // (0.9>0.8) (0.9>0.6) (0.7<0.8) (0.7>0.6) -> 3/4
    CHECK(auroc(s2, y) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("auroc tie handling counts half") {
    std::vector<double> s{0.5, 0.5};
    std::vector<int> y{1, 0};
    CHECK(auroc(s, y) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("auroc equals pair-counting oracle on random instances with ties") {
    Rng rng(20240811);
    for (int trial = 0; trial < 100; ++trial) {
        int n = 5 + static_cast<int>(rng.below(40));
        std::vector<double> s(n);
        std::vector<int> y(n);
        bool any_pos = false, any_neg = false;
        for (int i = 0; i < n; ++i) {
            // quantized scores force frequent ties
            s[i] = static_cast<double>(rng.below(8)) / 8.0;
            y[i] = rng.bernoulli(0.4) ? 1 : 0;
            (y[i] ? any_pos : any_neg) = true;
        }
        if (!any_pos) y[0] = 1;
        if (!any_neg) y[n - 1] = 0;
        CHECK(auroc(s, y) == doctest::Approx(auroc_oracle(s, y)).epsilon(1e-12));
    }
}

TEST_CASE("f1 and accuracy hand example") {
    // preds at 0.5: {1,1,1,0,0}; labels {1,1,0,0,1}
    std::vector<double> s{0.9, 0.8, 0.7, 0.2, 0.1};
    std::vector<int> y{1, 1, 0, 0, 1};
    auto r = f1_accuracy(s, y);
    // tp=2 fp=1 fn=1 -> precision 2/3, recall 2/3, f1 2/3; accuracy 3/5
    CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.accuracy == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("rank of ground truth is pessimistic under ties") {
    RankTrial t;
    t.ground_truth_score = 0.5;
    t.negative_scores = {0.9, 0.5, 0.5, 0.1};
    // 1 + 1 greater + 2 equal = 4
    CHECK(rank_of_ground_truth(t) == 4);
}

TEST_CASE("ndcg@10 of rank 4 equals 1/log2(5)") {
    auto m = metrics_of_rank(4, 10);
    CHECK(m.ndcg == doctest::Approx(1.0 / std::log2(5.0)).epsilon(1e-12));
    CHECK(m.hr == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.mrr == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("rank outside k zeroes the cutoff metrics; mrr stays uncapped") {
    auto m = metrics_of_rank(11, 10);
    CHECK(m.hr == 0.0);
    CHECK(m.ndcg == 0.0);
    CHECK(m.mrr == doctest::Approx(1.0 / 11.0).epsilon(1e-12));
}

TEST_CASE("ranking metrics equal the sort-and-locate oracle on random trials") {
    Rng rng(77001);
    const int kTrials = 10000;
    std::vector<RankTrial> trials;
    trials.reserve(kTrials);
    double hr = 0, ndcg = 0, mrr = 0;
    for (int i = 0; i < kTrials; ++i) {
        RankTrial t;
        t.ground_truth_score = static_cast<double>(rng.below(32)) / 32.0;
        int n = 20 + static_cast<int>(rng.below(80));
        for (int j = 0; j < n; ++j)
            t.negative_scores.push_back(static_cast<double>(rng.below(32)) / 32.0);
        int rank = rank_of_ground_truth(t);
        CHECK(rank == rank_oracle(t));
        auto m = metrics_of_rank(rank, 10);
        hr += m.hr;
        ndcg += m.ndcg;
        mrr += m.mrr;
        trials.push_back(std::move(t));
    }
    auto agg = hr_ndcg_mrr(trials, 10);
    CHECK(agg.hr == doctest::Approx(hr / kTrials).epsilon(1e-12));
    CHECK(agg.ndcg == doctest::Approx(ndcg / kTrials).epsilon(1e-12));
    CHECK(agg.mrr == doctest::Approx(mrr / kTrials).epsilon(1e-12));
}

TEST_CASE("cohort split takes bottom and top deciles by history length") {
    std::map<std::string, int> lens;
    for (int i = 0; i < 25; ++i) lens["u" + std::to_string(i)] = i + 1;
    auto c = cohort_split(lens);
    REQUIRE(c.cold.size() == 2);
    REQUIRE(c.heavy.size() == 2);
    CHECK(std::count(c.cold.begin(), c.cold.end(), "u0") == 1);
    CHECK(std::count(c.cold.begin(), c.cold.end(), "u1") == 1);
    CHECK(std::count(c.heavy.begin(), c.heavy.end(), "u24") == 1);
    CHECK(std::count(c.heavy.begin(), c.heavy.end(), "u23") == 1);
}

TEST_CASE("aggregate_runs computes mean and sample std") {
    std::vector<RunRecord> rs;
    for (int i = 1; i <= 3; ++i)
        rs.push_back({"t", "m", "MP", 1e-3, i, "test", "auroc", static_cast<double>(i), 1});
    auto rows = aggregate_runs(rs);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].n == 3);
    CHECK(rows[0].mean == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(rows[0].std == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("aggregate_runs keeps tasks, models and metrics separate") {
    std::vector<RunRecord> rs;
    rs.push_back({"a", "m1", "MP", 1e-3, 0, "test", "auroc", 0.7, 1});
    rs.push_back({"a", "m2", "MP", 1e-3, 0, "test", "auroc", 0.6, 1});
    rs.push_back({"b", "m1", "MP", 1e-3, 0, "test", "f1", 0.5, 1});
    auto rows = aggregate_runs(rs);
    CHECK(rows.size() == 3);
}

TEST_CASE("run record csv round trip") {
    std::vector<RunRecord> rs;
    rs.push_back({"task a", "U-MLP", "MP", 3e-4, 2, "val", "auroc", 0.123456789012, 42});
    rs.push_back({"rec_b", "T-Trans", "CLS", 1e-3, 0, "test", "ndcg@10_cold", 0.25, 7});
    auto text = run_records_csv(rs);
    auto back = parse_run_records_csv(text);
    REQUIRE(back.size() == rs.size());
    for (size_t i = 0; i < rs.size(); ++i) {
        CHECK(back[i].task == rs[i].task);
        CHECK(back[i].model == rs[i].model);
        CHECK(back[i].variant == rs[i].variant);
        CHECK(back[i].lr == doctest::Approx(rs[i].lr).epsilon(1e-9));
        CHECK(back[i].repeat == rs[i].repeat);
        CHECK(back[i].split == rs[i].split);
        CHECK(back[i].metric == rs[i].metric);
        CHECK(back[i].value == doctest::Approx(rs[i].value).epsilon(1e-9));
        CHECK(back[i].seed == rs[i].seed);
    }
}
