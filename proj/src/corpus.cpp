#include "o4a/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace o4a {

using ordered_json = nlohmann::ordered_json;

// --- calendar (proleptic Gregorian, UTC) ------------------------------------

static void civil_from_days(int64_t z, int& y, int& m, int& d) {
    z += 719468;
    int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    int64_t doe = z - era * 146097;
    int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    int64_t yy = yoe + era * 400;
    int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    int64_t mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = static_cast<int>(yy + (m <= 2));
}

static int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    int64_t era = (y >= 0 ? y : y - 399) / 400;
    int64_t yoe = y - era * 400;
    int64_t doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
    int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

DateFields date_fields_of(int64_t ts) {
    int64_t days = ts / kSecondsPerDay;
    int64_t secs = ts % kSecondsPerDay;
    if (secs < 0) {
        secs += kSecondsPerDay;
        days -= 1;
    }
    DateFields f;
    civil_from_days(days, f.year, f.month, f.day);
    f.day_of_week = static_cast<int>(((days % 7) + 7 + 4) % 7); // 1970-01-01 was Thursday
    f.hour = static_cast<int>(secs / 3600);
    return f;
}

int64_t make_ts(int year, int month, int day, int hour, int minute, int second) {
    return days_from_civil(year, month, day) * kSecondsPerDay + hour * 3600 + minute * 60 +
           second;
}

std::string split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
    }
}

void WorldConfig::validate() const {
    if (n_users < 1 || n_archetypes < 1) throw std::runtime_error("world config: counts must be >= 1");
    if (window_months < 1) throw std::runtime_error("world config: window_months must be >= 1");
    if (label_noise < 0.0 || label_noise >= 1.0)
        throw std::runtime_error("world config: label_noise must be in [0, 1)");
    for (int f : tree.fanout)
        if (f < 1) throw std::runtime_error("world config: fan-outs must be >= 1");
    if (keys_per_leaf < 1 || rec_items_per_task < 1 || max_events < 1)
        throw std::runtime_error("world config: counts must be >= 1");
    if (repeat_prob < 0.0 || repeat_prob >= 1.0)
        throw std::runtime_error("world config: repeat_prob must be in [0, 1)");
}

std::vector<std::string> TaskBundle::task_ids() const {
    std::vector<std::string> ids;
    for (const auto& r : records)
        if (std::find(ids.begin(), ids.end(), r.task_id) == ids.end()) ids.push_back(r.task_id);
    return ids;
}

std::vector<TaskRecord> TaskBundle::records_of(const std::string& task_id) const {
    std::vector<TaskRecord> out;
    for (const auto& r : records)
        if (r.task_id == task_id) out.push_back(r);
    return out;
}

// --- events file -------------------------------------------------------------

std::string serialize_event_line(const std::string& user_id, const PurchaseEvent& e) {
    ordered_json j;
    j["user_id"] = user_id;
    j["ts"] = e.ts;
    j["c1"] = e.c1;
    j["c2"] = e.c2;
    j["c3"] = e.c3;
    j["c4"] = e.c4;
    j["text_key"] = e.text_key;
    return j.dump();
}

std::vector<UserHistory> ingest_events(const std::string& path, const VocabSizes* schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open events file: " + path);
    std::string line;
    int lineno = 0;
    if (!std::getline(in, line) || line != kEventsHeader)
        throw std::runtime_error("events file missing header '" + std::string(kEventsHeader) +
                                 "': " + path);
    lineno = 1;
    std::vector<UserHistory> histories;
    std::map<std::string, size_t> index;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& ex) {
            throw std::runtime_error("parse error at line " + std::to_string(lineno) + ": " +
                                     ex.what());
        }
        PurchaseEvent e;
        std::string uid;
        try {
            uid = j.at("user_id").get<std::string>();
            e.ts = j.at("ts").get<int64_t>();
            e.c1 = j.at("c1").get<int>();
            e.c2 = j.at("c2").get<int>();
            e.c3 = j.at("c3").get<int>();
            e.c4 = j.at("c4").get<int>();
            e.text_key = j.at("text_key").get<std::string>();
        } catch (const std::exception& ex) {
            throw std::runtime_error("parse error at line " + std::to_string(lineno) + ": " +
                                     ex.what());
        }
        if (schema) {
            const int ids[4] = {e.c1, e.c2, e.c3, e.c4};
            for (int lv = 0; lv < 4; ++lv)
                if (ids[lv] < 0 || ids[lv] >= schema->cat[lv])
                    throw std::runtime_error("category id out of vocabulary at level " +
                                             std::to_string(lv + 1) + " (line " +
                                             std::to_string(lineno) + ")");
        }
        auto it = index.find(uid);
        if (it == index.end()) {
            index.emplace(uid, histories.size());
            histories.push_back(UserHistory{uid, {e}, Split::train, {}});
        } else {
            histories[it->second].events.push_back(e);
        }
    }
    return histories;
}

void write_events(const std::string& path, const std::vector<UserHistory>& hs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write events file: " + path);
    out << kEventsHeader << "\n";
    for (const auto& h : hs)
        for (const auto& e : h.events) out << serialize_event_line(h.user_id, e) << "\n";
}

TaskBundle read_tasks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open tasks file: " + path);
    std::string line;
    if (!std::getline(in, line) || line != kTasksHeader)
        throw std::runtime_error("tasks file missing header '" + std::string(kTasksHeader) +
                                 "': " + path);
    int lineno = 1;
    TaskBundle b;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            ordered_json j = ordered_json::parse(line);
            TaskRecord r;
            r.task_id = j.at("task_id").get<std::string>();
            r.user_id = j.at("user_id").get<std::string>();
            r.item_text_key = j.at("item_text_key").get<std::string>();
            r.label = j.at("label").get<int>();
            r.ts = j.at("ts").get<int64_t>();
            b.records.push_back(std::move(r));
        } catch (const std::exception& ex) {
            throw std::runtime_error("parse error at line " + std::to_string(lineno) + ": " +
                                     ex.what());
        }
    }
    return b;
}

void write_tasks(const std::string& path, const TaskBundle& bundle) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write tasks file: " + path);
    out << kTasksHeader << "\n";
    for (const auto& r : bundle.records) {
        ordered_json j;
        j["task_id"] = r.task_id;
        j["user_id"] = r.user_id;
        j["item_text_key"] = r.item_text_key;
        j["label"] = r.label;
        j["ts"] = r.ts;
        out << j.dump() << "\n";
    }
}

// --- canonicalization --------------------------------------------------------

UserHistory canonicalize(const UserHistory& h) {
    if (h.events.empty()) throw std::runtime_error("canonicalize: empty history " + h.user_id);
    // earliest occurrence per (product, calendar day)
    std::map<std::tuple<int, int, int, int, std::string, int64_t>, int64_t> earliest;
    for (const auto& e : h.events) {
        int64_t day = e.ts / kSecondsPerDay;
        auto key = std::make_tuple(e.c1, e.c2, e.c3, e.c4, e.text_key, day);
        auto it = earliest.find(key);
        if (it == earliest.end() || e.ts < it->second) earliest[key] = e.ts;
    }
    UserHistory out;
    out.user_id = h.user_id;
    out.split = h.split;
    out.meta = h.meta;
    for (const auto& [key, ts] : earliest) {
        PurchaseEvent e;
        e.c1 = std::get<0>(key);
        e.c2 = std::get<1>(key);
        e.c3 = std::get<2>(key);
        e.c4 = std::get<3>(key);
        e.text_key = std::get<4>(key);
        e.ts = ts;
        out.events.push_back(std::move(e));
    }
    std::sort(out.events.begin(), out.events.end(), [](const auto& a, const auto& b) {
        return std::tie(a.ts, a.c1, a.c2, a.c3, a.c4, a.text_key) <
               std::tie(b.ts, b.c1, b.c2, b.c3, b.c4, b.text_key);
    });
    return out;
}

std::vector<UserHistory> filter_users(const std::vector<UserHistory>& hs, int window_months,
                                      double top_percentile) {
    if (window_months < 2) throw std::runtime_error("filter_users: window_months must be >= 2");
    size_t floor_count = static_cast<size_t>((window_months + 1) / 2); // ceil(w/2)
    std::vector<const UserHistory*> kept;
    for (const auto& h : hs)
        if (h.events.size() >= floor_count) kept.push_back(&h);
    size_t n_drop = static_cast<size_t>(top_percentile * static_cast<double>(kept.size()));
    if (n_drop > 0) {
        std::vector<const UserHistory*> ranked = kept;
        std::sort(ranked.begin(), ranked.end(), [](const UserHistory* a, const UserHistory* b) {
            if (a->events.size() != b->events.size()) return a->events.size() > b->events.size();
            return a->user_id < b->user_id;
        });
        std::vector<const UserHistory*> dropped(ranked.begin(), ranked.begin() + n_drop);
        auto is_dropped = [&](const UserHistory* p) {
            return std::find(dropped.begin(), dropped.end(), p) != dropped.end();
        };
        std::vector<const UserHistory*> survivors;
        for (auto* p : kept)
            if (!is_dropped(p)) survivors.push_back(p);
        kept = std::move(survivors);
    }
    std::vector<UserHistory> out;
    out.reserve(kept.size());
    for (auto* p : kept) out.push_back(*p);
    return out;
}

std::optional<UserHistory> time_slice(const UserHistory& h, int64_t cutoff_ts, int months_back) {
    if (months_back < 1) throw std::runtime_error("time_slice: months_back must be >= 1");
    int64_t start = cutoff_ts - static_cast<int64_t>(
                                    std::llround(months_back * kDaysPerMonth * kSecondsPerDay));
    UserHistory out;
    out.user_id = h.user_id;
    out.split = h.split;
    out.meta = h.meta;
    for (const auto& e : h.events)
        if (e.ts >= start && e.ts < cutoff_ts) out.events.push_back(e);
    if (out.events.empty()) return std::nullopt;
    return out;
}

Split split_of_user(const std::string& user_id, double train_ratio, double val_ratio,
                    double test_ratio, uint64_t seed) {
    double sum = train_ratio + val_ratio + test_ratio;
    if (train_ratio <= 0 || val_ratio <= 0 || test_ratio <= 0 || std::abs(sum - 1.0) > 1e-9)
        throw std::runtime_error("split ratios must be positive and sum to 1");
    uint64_t state = fnv1a(user_id) ^ (seed * 0x9e3779b97f4a7c15ull);
    double u = (splitmix64(state) >> 11) * 0x1.0p-53;
    if (u < train_ratio) return Split::train;
    if (u < train_ratio + val_ratio) return Split::val;
    return Split::test;
}

std::vector<UserHistory> split_users(std::vector<UserHistory> hs, double train_ratio,
                                     double val_ratio, double test_ratio, uint64_t seed) {
    for (auto& h : hs)
        h.split = split_of_user(h.user_id, train_ratio, val_ratio, test_ratio, seed);
    return hs;
}

// --- text vectors --------------------------------------------------------------

static std::vector<double> unit_gauss(int d, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(d);
    double norm2 = 0.0;
    for (auto& x : v) {
        x = rng.gauss();
        norm2 += x * x;
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
}

std::vector<double> text_vector_of(const std::string& text_key, int d_text, uint64_t seed,
                                   double topic_weight) {
    if (d_text < 1) throw std::runtime_error("text_vector_of: d_text must be >= 1");
    std::string topic = text_key;
    if (auto pos = text_key.find(':'); pos != std::string::npos) topic = text_key.substr(0, pos);
    auto anchor = unit_gauss(d_text, derive_seed(seed, "text-topic:" + topic));
    auto noise = unit_gauss(d_text, derive_seed(seed, "text-key:" + text_key));
    std::vector<double> v(d_text);
    double norm2 = 0.0;
    for (int i = 0; i < d_text; ++i) {
        v[i] = topic_weight * anchor[i] + (1.0 - topic_weight) * noise[i];
        norm2 += v[i] * v[i];
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
}

// --- synthetic world -------------------------------------------------------------

namespace {

struct Archetype {
    std::vector<double> leaf_pref; // distribution over level-4 leaves
    std::vector<double> hour_pref; // 24
    std::vector<double> month_pref; // 12, index month-1
    int top_leaf = 0;
};

std::vector<double> softmax_of(const std::vector<double>& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (auto& x : p) x /= sum;
    return p;
}

size_t sample_cat(const std::vector<double>& p, Rng& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    return p.size() - 1;
}

std::vector<double> dirichlet(int k, double alpha, Rng& rng) {
    std::vector<double> v(k);
    double sum = 0.0;
    for (auto& x : v) {
        x = rng.gamma(alpha);
        sum += x;
    }
    for (auto& x : v) x /= sum;
    return v;
}

// Shared popularity skews: the corpus is Zipf-like per category level, with
// seasonal (December), payday (1st/15th/25th), weekend and evening biases.
// Archetypes modulate these shared profiles instead of replacing them.
struct GlobalProfile {
    std::vector<double> leaf_logits; // hierarchical popularity over leaves
    std::array<double, 7> dow_weight;
    std::array<double, 31> dom_weight;
    std::array<double, 12> month_weight;
};

GlobalProfile make_global_profile(const WorldConfig& cfg, uint64_t seed) {
    GlobalProfile g;
    int n_leaves = cfg.tree.size(4);
    g.leaf_logits.assign(n_leaves, 0.0);
    // per-level popularity ranks over a seeded shuffle of the children
    Rng rng(derive_seed(seed, "popularity"));
    for (int level = 1; level <= 4; ++level) {
        int fan = cfg.tree.fanout[level - 1];
        int groups = cfg.tree.size(level) / fan;
        const double skew = 2.2; // ln-rank popularity penalty per level
        for (int grp = 0; grp < groups; ++grp) {
            std::vector<int> order(fan);
            std::iota(order.begin(), order.end(), 0);
            for (int i = fan; i > 1; --i)
                std::swap(order[i - 1], order[static_cast<int>(rng.below(i))]);
            for (int child = 0; child < fan; ++child) {
                int id = grp * fan + child; // id at this level
                double logit = -skew * std::log(1.0 + order[child]);
                // spread the level-l contribution over its leaves
                int leaves_per = n_leaves / cfg.tree.size(level);
                for (int l = id * leaves_per; l < (id + 1) * leaves_per; ++l)
                    g.leaf_logits[l] += logit;
            }
        }
    }
    for (int d = 0; d < 7; ++d) // 0 = Sunday
        g.dow_weight[d] = std::exp(d == 0 || d == 6 ? 1.4 : 0.0);
    for (int d = 0; d < 31; ++d)
        g.dom_weight[d] = std::exp(d == 0 || d == 14 || d == 24 ? 4.0 : 0.0);
    for (int m = 0; m < 12; ++m)
        g.month_weight[m] = std::exp(2.5 * std::cos(2.0 * M_PI * (m - 11) / 12.0));
    return g;
}

Archetype make_archetype(const WorldConfig& cfg, const GlobalProfile& g, Rng& rng) {
    Archetype a;
    int n_leaves = cfg.tree.size(4);
    std::vector<double> logits(n_leaves);
    for (int i = 0; i < n_leaves; ++i) logits[i] = g.leaf_logits[i] + 1.5 * rng.gauss();
    a.leaf_pref = softmax_of(logits);
    a.top_leaf = static_cast<int>(
        std::max_element(a.leaf_pref.begin(), a.leaf_pref.end()) - a.leaf_pref.begin());
    int peak_hour = static_cast<int>(rng.below(24));
    a.hour_pref.resize(24);
    for (int h = 0; h < 24; ++h)
        a.hour_pref[h] = std::exp(3.5 * std::cos(2.0 * M_PI * (h - 19) / 24.0) +
                                  0.8 * std::cos(2.0 * M_PI * (h - peak_hour) / 24.0));
    double s = std::accumulate(a.hour_pref.begin(), a.hour_pref.end(), 0.0);
    for (auto& x : a.hour_pref) x /= s;
    int peak_month = static_cast<int>(rng.below(12));
    a.month_pref.resize(12);
    for (int m = 0; m < 12; ++m)
        a.month_pref[m] =
            g.month_weight[m] * std::exp(0.5 * std::cos(2.0 * M_PI * (m - peak_month) / 12.0));
    return a; // month_pref kept unnormalized; used via accept-reject
}

std::string product_key(const WorldConfig& cfg, int leaf, int k) {
    int path[4];
    cfg.tree.path_of_leaf(leaf, path);
    return "t" + std::to_string(path[1]) + ":p" + std::to_string(leaf) + "_" + std::to_string(k);
}

struct RecTask {
    std::string id;
    double log_len_mu; // lognormal location of per-user click-log length
    std::vector<std::vector<double>> item_affinity; // item -> archetype weights
    std::vector<std::string> item_keys;
};

} // namespace

SyntheticWorld generate_synthetic_world(const WorldConfig& cfg) {
    cfg.validate();
    Rng master(derive_seed(cfg.seed, "world"));

    GlobalProfile global = make_global_profile(cfg, cfg.seed);
    std::vector<Archetype> archetypes;
    for (int k = 0; k < cfg.n_archetypes; ++k) {
        Rng r(derive_seed(cfg.seed, "archetype", k));
        archetypes.push_back(make_archetype(cfg, global, r));
    }

    int64_t window_days =
        static_cast<int64_t>(std::llround(cfg.window_months * kDaysPerMonth));
    int64_t start_ts = cfg.cutoff_ts - window_days * kSecondsPerDay;

    SyntheticWorld world;
    std::vector<std::vector<double>> thetas(cfg.n_users);
    for (int u = 0; u < cfg.n_users; ++u) {
        Rng rng(derive_seed(cfg.seed, "user", u));
        std::string uid = "u" + std::to_string(u);
        auto theta = dirichlet(cfg.n_archetypes, 0.5, rng);
        thetas[u] = theta;

        int n_events = static_cast<int>(
            std::lround(std::exp(rng.gauss(cfg.events_log_mean, cfg.events_log_std))));
        n_events = std::clamp(n_events, 1, cfg.max_events);

        UserHistory h;
        h.user_id = uid;
        // timestamps first (archetype-profiled), then a chronological walk
        // with repeat-purchase momentum
        std::vector<std::pair<int64_t, int>> when; // (ts, archetype)
        for (int i = 0; i < n_events; ++i) {
            int z = static_cast<int>(sample_cat(theta, rng));
            const Archetype& a = archetypes[z];
            // day via accept-reject against the seasonal/payday/weekend profile
            int64_t day = 0;
            const double w_max = std::exp(3.0) * std::exp(1.4) * std::exp(4.0);
            for (int tries = 0; tries < 600; ++tries) {
                day = static_cast<int64_t>(rng.below(static_cast<uint64_t>(window_days)));
                auto f = date_fields_of(start_ts + day * kSecondsPerDay);
                double w = a.month_pref[f.month - 1] * global.dow_weight[f.day_of_week] *
                           global.dom_weight[f.day - 1] / w_max;
                if (rng.uniform() < w) break;
            }
            int hour = static_cast<int>(sample_cat(a.hour_pref, rng));
            int64_t ts = start_ts + day * kSecondsPerDay + hour * 3600 +
                         static_cast<int64_t>(rng.below(60)) * 60 +
                         static_cast<int64_t>(rng.below(60));
            when.emplace_back(ts, z);
        }
        std::sort(when.begin(), when.end());
        int prev_leaf = -1, prev_key = 0;
        for (auto [ts, z] : when) {
            const Archetype& a = archetypes[z];
            int leaf, key_ix;
            if (prev_leaf >= 0 && rng.bernoulli(cfg.repeat_prob)) {
                leaf = prev_leaf; // repeat purchase of the previous product
                key_ix = prev_key;
            } else {
                leaf = static_cast<int>(sample_cat(a.leaf_pref, rng));
                key_ix = static_cast<int>(rng.below(cfg.keys_per_leaf));
            }
            prev_leaf = leaf;
            prev_key = key_ix;
            PurchaseEvent e;
            int path[4];
            cfg.tree.path_of_leaf(leaf, path);
            e.c1 = path[0];
            e.c2 = path[1];
            e.c3 = path[2];
            e.c4 = path[3];
            e.text_key = product_key(cfg, leaf, key_ix);
            e.ts = ts;
            h.events.push_back(std::move(e));
        }
        int top = static_cast<int>(
            std::max_element(theta.begin(), theta.end()) - theta.begin());
        h.meta["archetype"] = std::to_string(top);
        world.users.push_back(std::move(h));
        world.tasks.latents["u" + std::to_string(u)] = theta;
    }

    // --- classification tasks ---
    auto balanced_labels = [&](const std::vector<double>& scores, Rng& rng) {
        // median split -> exact 1:1 balance; noise swaps pos/neg pairs so the
        // balance is preserved
        std::vector<int> order(scores.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return a < b;
        });
        std::vector<int> labels(scores.size(), 0);
        size_t n_pos = scores.size() / 2;
        for (size_t i = 0; i < n_pos; ++i) labels[order[i]] = 1;
        std::vector<int> pos, neg;
        for (size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back((int)i);
        size_t n_swap = static_cast<size_t>(cfg.label_noise * 0.5 * scores.size());
        for (size_t s = 0; s < n_swap && !pos.empty() && !neg.empty(); ++s) {
            size_t pi = rng.below(pos.size()), ni = rng.below(neg.size());
            std::swap(labels[pos[pi]], labels[neg[ni]]);
            std::swap(pos[pi], neg[ni]);
        }
        return labels;
    };

    struct ClsTask {
        std::string id;
        std::vector<double> weights; // over archetypes
    };
    std::vector<ClsTask> cls_tasks;
    {
        Rng r(derive_seed(cfg.seed, "task-attr"));
        ClsTask attr{"attr", {}};
        attr.weights.resize(cfg.n_archetypes);
        for (auto& w : attr.weights) w = r.gauss();
        cls_tasks.push_back(attr);
        for (int t = 0; t < 2; ++t) {
            ClsTask tgt{t == 0 ? "target_a" : "target_b",
                        std::vector<double>(cfg.n_archetypes, 0.0)};
            tgt.weights[t % cfg.n_archetypes] = 1.0;
            cls_tasks.push_back(tgt);
        }
    }
    for (const auto& task : cls_tasks) {
        Rng rng(derive_seed(cfg.seed, "task-labels:" + task.id));
        std::vector<double> scores(cfg.n_users);
        for (int u = 0; u < cfg.n_users; ++u) {
            double s = 0.0;
            for (int k = 0; k < cfg.n_archetypes; ++k) s += task.weights[k] * thetas[u][k];
            scores[u] = s;
        }
        auto labels = balanced_labels(scores, rng);
        for (int u = 0; u < cfg.n_users; ++u) {
            TaskRecord rec;
            rec.task_id = task.id;
            rec.user_id = "u" + std::to_string(u);
            rec.label = labels[u];
            rec.ts = cfg.cutoff_ts;
            world.tasks.records.push_back(std::move(rec));
            if (task.id == "attr")
                world.users[u].meta["attr"] = std::to_string(labels[u]);
        }
    }

    // --- recommendation tasks (click logs over a per-task item catalog) ---
    std::vector<RecTask> rec_tasks = {{"rec_a", 1.6, {}, {}},
                                      {"rec_b", 1.2, {}, {}},
                                      {"rec_c", 0.9, {}, {}}};
    for (auto& task : rec_tasks) {
        Rng rng(derive_seed(cfg.seed, "task-items:" + task.id));
        for (int i = 0; i < cfg.rec_items_per_task; ++i) {
            auto aff = dirichlet(cfg.n_archetypes, 0.5, rng);
            int top = static_cast<int>(std::max_element(aff.begin(), aff.end()) - aff.begin());
            int path[4];
            cfg.tree.path_of_leaf(archetypes[top].top_leaf, path);
            task.item_keys.push_back("t" + std::to_string(path[1]) + ":i_" + task.id + "_" +
                                     std::to_string(i));
            task.item_affinity.push_back(std::move(aff));
        }
        for (int u = 0; u < cfg.n_users; ++u) {
            Rng ur(derive_seed(cfg.seed, "task-clicks:" + task.id, u));
            int len = static_cast<int>(std::lround(std::exp(ur.gauss(task.log_len_mu, 1.0)))) - 1;
            len = std::clamp(len, 0, 40);
            if (len == 0) continue;
            std::vector<double> w(cfg.rec_items_per_task);
            for (int i = 0; i < cfg.rec_items_per_task; ++i) {
                double s = 0.0;
                for (int k = 0; k < cfg.n_archetypes; ++k)
                    s += thetas[u][k] * task.item_affinity[i][k];
                w[i] = std::exp(8.0 * s);
            }
            double sum = std::accumulate(w.begin(), w.end(), 0.0);
            for (auto& x : w) x /= sum;
            for (int c = 0; c < len; ++c) {
                int item = ur.bernoulli(cfg.label_noise)
                               ? static_cast<int>(ur.below(cfg.rec_items_per_task))
                               : static_cast<int>(sample_cat(w, ur));
                TaskRecord rec;
                rec.task_id = task.id;
                rec.user_id = "u" + std::to_string(u);
                rec.item_text_key = task.item_keys[item];
                rec.label = 1;
                rec.ts = start_ts + static_cast<int64_t>(
                                        ur.below(static_cast<uint64_t>(window_days) *
                                                 kSecondsPerDay));
                world.tasks.records.push_back(std::move(rec));
            }
        }
    }
    return world;
}

} // namespace o4a
