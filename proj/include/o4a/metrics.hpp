#pragma once

#include <map>
#include <string>
#include <vector>

namespace o4a {

// Mann-Whitney AUROC: (#(pos > neg) + 0.5 #(pos = neg)) / (n_pos n_neg).
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct F1Accuracy {
    double f1;
    double accuracy;
};
F1Accuracy f1_accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold = 0.5);

struct RankTrial {
    double ground_truth_score;
    std::vector<double> negative_scores;
};

// 1 + #(neg > gt) + #(neg == gt); ties count against the ground truth.
int rank_of_ground_truth(const RankTrial& trial);

struct RankingMetrics {
    double hr;
    double ndcg;
    double mrr;
};
RankingMetrics hr_ndcg_mrr(const std::vector<RankTrial>& trials, int k);
RankingMetrics metrics_of_rank(int rank, int k);

struct CohortSplit {
    std::vector<std::string> cold;  // bottom floor(0.1 n) by history length
    std::vector<std::string> heavy; // top floor(0.1 n)
};
CohortSplit cohort_split(const std::map<std::string, int>& history_lengths);

struct RunRecord {
    std::string task;
    std::string model;
    std::string variant;
    double lr = 0.0;
    int repeat = 0;
    std::string split;
    std::string metric;
    double value = 0.0;
    uint64_t seed = 0;
};

struct AggregateRow {
    std::string task;
    std::string model;
    std::string metric;
    double mean;
    double std; // sample standard deviation (n-1), 0 when n == 1
    int n;
};
std::vector<AggregateRow> aggregate_runs(const std::vector<RunRecord>& records);

std::string run_records_csv(const std::vector<RunRecord>& records);
std::vector<RunRecord> parse_run_records_csv(const std::string& text);
std::string aggregate_csv(const std::vector<AggregateRow>& rows);

} // namespace o4a
