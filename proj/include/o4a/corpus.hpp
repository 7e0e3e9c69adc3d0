#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "o4a/rng.hpp"

namespace o4a {

// Calendar fields derived from a unix timestamp (UTC).
struct DateFields {
    int year;        // calendar year
    int month;       // 1..12
    int day;         // 1..31
    int day_of_week; // 0..6, 0 = Sunday
    int hour;        // 0..23
};

DateFields date_fields_of(int64_t ts);
int64_t make_ts(int year, int month, int day, int hour, int minute = 0, int second = 0);

// Days per month used for window arithmetic (avoids calendar edge cases).
constexpr double kDaysPerMonth = 30.44;
constexpr int64_t kSecondsPerDay = 86400;

struct PurchaseEvent {
    int c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    std::string text_key;
    int64_t ts = 0;

    bool operator==(const PurchaseEvent&) const = default;
};

enum class Split { train, val, test };

std::string split_name(Split s);

struct UserHistory {
    std::string user_id;
    std::vector<PurchaseEvent> events;
    Split split = Split::train;
    std::map<std::string, std::string> meta;
};

// Fan-out category tree; vocab size at level i is the product of fan-outs
// up to i. parent(c at level i) = c / fanout[i].
struct CategoryTree {
    int fanout[4] = {8, 2, 2, 2};

    int size(int level) const { // level 1..4
        int s = 1;
        for (int i = 0; i < level; ++i) s *= fanout[i];
        return s;
    }
    int parent(int level, int id) const { return id / fanout[level - 1]; }
    // leaf (level-4) id -> ids at all four levels
    void path_of_leaf(int leaf, int out[4]) const {
        out[3] = leaf;
        out[2] = leaf / fanout[3];
        out[1] = out[2] / fanout[2];
        out[0] = out[1] / fanout[1];
    }
};

struct WorldConfig {
    int n_users = 10000;
    int n_archetypes = 4;
    CategoryTree tree;
    int window_months = 24;
    double events_log_mean = 3.55; // lognormal location of per-user event count (~35)
    double events_log_std = 0.45;
    int max_events = 200;
    double label_noise = 0.10;
    double repeat_prob = 0.55; // chance the next purchase repeats the previous product
    int keys_per_leaf = 3;
    int rec_items_per_task = 200;
    uint64_t seed = 1;
    // end of the generated window; events fall in
    // [cutoff - window_months * 30.44 d, cutoff)
    int64_t cutoff_ts = 1601510400; // 2020-10-01 00:00:00 UTC

    void validate() const;
};

struct TaskRecord {
    std::string task_id;
    std::string user_id;
    std::string item_text_key; // empty for classification tasks
    int label = 0;
    int64_t ts = 0;
};

struct TaskBundle {
    std::vector<TaskRecord> records;
    // true latent mixture per user; test-and-diagnostics only, not serialized
    std::map<std::string, std::vector<double>> latents;

    std::vector<std::string> task_ids() const;
    std::vector<TaskRecord> records_of(const std::string& task_id) const;
};

inline const char* kEventsHeader = "#o4a-events v1";
inline const char* kTasksHeader = "#o4a-tasks v1";

// --- ingestion / serialization -------------------------------------------

struct VocabSizes {
    int cat[4];
};

std::vector<UserHistory> ingest_events(const std::string& path, const VocabSizes* schema = nullptr);
void write_events(const std::string& path, const std::vector<UserHistory>& hs);
std::string serialize_event_line(const std::string& user_id, const PurchaseEvent& e);

TaskBundle read_tasks(const std::string& path);
void write_tasks(const std::string& path, const TaskBundle& bundle);

// --- canonicalization & filtering ----------------------------------------

// Sort by ts; among same-day duplicates of the same product keep the earliest.
UserHistory canonicalize(const UserHistory& h);

// Frequency floor (>= ceil(window_months / 2) events) then drop the top
// `top_percentile` of remaining users by event count.
std::vector<UserHistory> filter_users(const std::vector<UserHistory>& hs, int window_months,
                                      double top_percentile = 0.01);

// Events in [cutoff - months_back * 30.44 d, cutoff); nullopt when no
// events survive.
std::optional<UserHistory> time_slice(const UserHistory& h, int64_t cutoff_ts, int months_back);

// Deterministic user-disjoint split; assignment is a pure function of
// (user_id, seed).
std::vector<UserHistory> split_users(std::vector<UserHistory> hs, double train_ratio,
                                     double val_ratio, double test_ratio, uint64_t seed);
Split split_of_user(const std::string& user_id, double train_ratio, double val_ratio,
                    double test_ratio, uint64_t seed);

// --- text vectors ----------------------------------------------------------

// Deterministic unit-norm vector for a text key. Keys share a topic anchor
// through their prefix up to ':', mixed with key-specific noise.
std::vector<double> text_vector_of(const std::string& text_key, int d_text, uint64_t seed,
                                   double topic_weight = 0.6);

// --- synthetic world --------------------------------------------------------

struct SyntheticWorld {
    std::vector<UserHistory> users;
    TaskBundle tasks;
};

SyntheticWorld generate_synthetic_world(const WorldConfig& cfg);

} // namespace o4a
