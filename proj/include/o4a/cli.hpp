#pragma once

#include <string>
#include <vector>

#include "o4a/config.hpp"

namespace o4a {

// Subcommand dispatch: synth, pretrain, extract, eval, ablate, cost, report.
// Returns the process exit status (0 ok, 1 runtime error, 2 usage error).
int run_command(const std::vector<std::string>& args);
int run_command(int argc, char** argv);

// --- time-window ablation ----------------------------------------------------

struct AblationResult {
    std::vector<int> windows;             // ascending months
    std::vector<std::vector<double>> raw; // [seed][window] probe metric
    std::vector<std::vector<double>> rel; // normalized to the longest window
    std::vector<double> spearman_per_seed; // diagnostics only
    std::vector<double> mean_rel;          // seed-averaged relative curve
    double mean_spearman = 0.0;            // spearman of mean_rel vs window
};

AblationResult ablate_time_window(const Config& cfg);
std::string ablation_csv(const AblationResult& r);

// Spearman rank correlation with average ranks for ties.
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);

// --- cost report ---------------------------------------------------------------

struct CostRow {
    std::string model;
    std::string input_kind;
    size_t params = 0;
    uint64_t input_bytes = 0;
    double items_per_sec = 0.0;
    double speedup = 1.0; // vs the slowest row
};

struct CostReport {
    std::vector<CostRow> rows;
    int batch = 128;
    std::string note;
};

// Self-provisions a small corpus, an initialized encoder, an embedding store
// and a feed-forward head under work_dir, then measures inference rates.
CostReport cost_report(const Config& cfg, const std::string& work_dir);
std::string cost_csv(const CostReport& r);

} // namespace o4a
