#include "o4a/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace o4a {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::runtime_error("auroc: size mismatch or empty input");
    std::vector<double> pos, neg;
    for (size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos : neg).push_back(scores[i]);
    if (pos.empty() || neg.empty()) throw std::runtime_error("auroc: single-class input");
    double wins = 0.0;
    for (double p : pos)
        for (double n : neg) {
            if (p > n) wins += 1.0;
            else if (p == n) wins += 0.5;
        }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

F1Accuracy f1_accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::runtime_error("f1_accuracy: size mismatch or empty input");
    int tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= threshold;
        if (pred && labels[i]) ++tp;
        else if (pred && !labels[i]) ++fp;
        else if (!pred && labels[i]) ++fn;
        else ++tn;
    }
    double f1 = (2 * tp + fp + fn) > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
    double acc = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
    return {f1, acc};
}

int rank_of_ground_truth(const RankTrial& trial) {
    if (trial.negative_scores.empty())
        throw std::runtime_error("rank_of_ground_truth: no negatives");
    int rank = 1;
    for (double s : trial.negative_scores)
        if (s >= trial.ground_truth_score) ++rank;
    return rank;
}

RankingMetrics metrics_of_rank(int rank, int k) {
    RankingMetrics m{};
    m.hr = rank <= k ? 1.0 : 0.0;
    m.ndcg = rank <= k ? 1.0 / std::log2(rank + 1.0) : 0.0;
    m.mrr = 1.0 / rank;
    return m;
}

RankingMetrics hr_ndcg_mrr(const std::vector<RankTrial>& trials, int k) {
    if (k < 1) throw std::runtime_error("hr_ndcg_mrr: k must be >= 1");
    if (trials.empty()) throw std::runtime_error("hr_ndcg_mrr: no trials");
    RankingMetrics sum{};
    for (const auto& t : trials) {
        auto m = metrics_of_rank(rank_of_ground_truth(t), k);
        sum.hr += m.hr;
        sum.ndcg += m.ndcg;
        sum.mrr += m.mrr;
    }
    double n = static_cast<double>(trials.size());
    return {sum.hr / n, sum.ndcg / n, sum.mrr / n};
}

CohortSplit cohort_split(const std::map<std::string, int>& history_lengths) {
    if (history_lengths.empty()) throw std::runtime_error("cohort_split: empty input");
    std::vector<std::pair<int, std::string>> by_len;
    for (const auto& [id, len] : history_lengths) by_len.emplace_back(len, id);
    std::sort(by_len.begin(), by_len.end());
    size_t decile = by_len.size() / 10;
    CohortSplit out;
    for (size_t i = 0; i < decile; ++i) out.cold.push_back(by_len[i].second);
    for (size_t i = by_len.size() - decile; i < by_len.size(); ++i)
        out.heavy.push_back(by_len[i].second);
    return out;
}

std::vector<AggregateRow> aggregate_runs(const std::vector<RunRecord>& records) {
    if (records.empty()) throw std::runtime_error("aggregate_runs: no records");
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> groups;
    for (const auto& r : records)
        groups[{r.task, r.model, r.metric}].push_back(r.value);
    std::vector<AggregateRow> out;
    for (const auto& [key, vals] : groups) {
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= vals.size();
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        double sd = vals.size() > 1 ? std::sqrt(var / (vals.size() - 1)) : 0.0;
        out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), mean, sd,
                       static_cast<int>(vals.size())});
    }
    return out;
}

std::string run_records_csv(const std::vector<RunRecord>& records) {
    std::ostringstream os;
    os << "task,model,variant,lr,repeat,split,metric,value,seed\n";
    os.precision(12);
    for (const auto& r : records)
        os << r.task << ',' << r.model << ',' << r.variant << ',' << r.lr << ',' << r.repeat
           << ',' << r.split << ',' << r.metric << ',' << r.value << ',' << r.seed << "\n";
    return os.str();
}

std::vector<RunRecord> parse_run_records_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::vector<RunRecord> out;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("task,", 0) == 0) continue;
        }
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 9) throw std::runtime_error("run record csv: bad row: " + line);
        RunRecord r;
        r.task = fields[0];
        r.model = fields[1];
        r.variant = fields[2];
        r.lr = std::stod(fields[3]);
        r.repeat = std::stoi(fields[4]);
        r.split = fields[5];
        r.metric = fields[6];
        r.value = std::stod(fields[7]);
        r.seed = std::stoull(fields[8]);
        out.push_back(std::move(r));
    }
    return out;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
    std::ostringstream os;
    os << "task,model,metric,mean,std,n\n";
    os.precision(12);
    for (const auto& r : rows)
        os << r.task << ',' << r.model << ',' << r.metric << ',' << r.mean << ',' << r.std << ','
           << r.n << "\n";
    return os.str();
}

} // namespace o4a
