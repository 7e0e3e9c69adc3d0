#include "o4a/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "o4a/rng.hpp"

namespace o4a {

namespace {

struct KeyDefault {
    const char* key;
    const char* desk;
    const char* full;
};

// The full key universe with per-profile defaults. `desk` is sized for a
// single workstation CPU; `full` pins the full-scale reference hyperparameters.
const KeyDefault kDefaults[] = {
    {"seed", "1", "1"},
    // synthetic world
    {"world.users", "2000", "10000"},
    {"world.archetypes", "4", "8"},
    {"world.window_months", "24", "24"},
    {"world.max_events", "200", "200"},
    {"world.label_noise", "0.10", "0.10"},
    {"world.repeat_prob", "0.55", "0.55"},
    {"world.keys_per_leaf", "3", "3"},
    {"world.rec_items", "200", "200"},
    {"world.events_log_mean", "3.55", "3.55"},
    {"world.events_log_std", "0.45", "0.45"},
    // tokenization
    {"vocab.d_text", "16", "768"},
    {"vocab.topic_weight", "0.6", "0.6"},
    // pre-training encoder
    {"enc.hidden", "64", "550"},
    {"enc.layers", "2", "20"},
    {"enc.heads", "4", "10"},
    {"enc.seq", "64", "350"},
    {"enc.dropout", "0.1", "0.1"},
    {"enc.share_layers", "false", "false"},
    // pre-training schedule
    {"pretrain.variant", "MP", "MP"},
    {"pretrain.augment", "false", "false"},
    {"pretrain.users", "500", "0"}, // 0 = every training user
    {"pretrain.steps", "200", "300000"},
    {"pretrain.batch", "32", "128"},
    {"pretrain.lr", "0.001", "0.0001"},
    {"pretrain.warmup", "20", "30000"},
    {"pretrain.wd", "0.0001", "0.0001"},
    {"pretrain.checkpoint_every", "0", "0"},
    // masking
    {"mask.p_choose", "0.15", "0.15"},
    {"mask.p_mask", "0.8", "0.8"},
    {"mask.p_random", "0.1", "0.1"},
    // augmentation
    {"augment.p_select", "0.3", "0.3"},
    {"augment.p_crop", "0.5", "0.5"},
    {"augment.window_frac", "0.3", "0.3"},
    {"augment.keep_min_frac", "0.3", "0.3"},
    // corpus splits
    {"split.train", "0.8", "0.8"},
    {"split.val", "0.1", "0.1"},
    {"split.test", "0.1", "0.1"},
    // downstream protocol
    {"down.enc.hidden", "32", "128"},
    {"down.enc.layers", "2", "4"},
    {"down.enc.heads", "2", "4"},
    {"down.enc.seq", "32", "350"},
    {"down.enc.dropout", "0.1", "0.1"},
    {"down.enc.share_layers", "true", "true"},
    {"down.batch", "64", "256"},
    {"down.max_epochs", "10", "30"},
    {"down.patience", "3", "3"},
    {"down.repeats", "2", "10"},
    {"down.lr_sweep", "0.0001,0.0003,0.001", "0.0001,0.0003,0.001"},
    {"down.task_users", "300", "0"}, // 0 = every task user
    // cold-start: months of purchase log shipped with a task for from-scratch
    // models; 0 = the full log
    {"down.scratch_recent_months", "0", "0"},
    // time-window ablation
    {"ablate.windows", "1,3,6,12,24", "1,3,6,12,24"},
    {"ablate.seeds", "10", "10"},
    {"ablate.users", "600", "2000"},
    {"ablate.steps", "200", "2000"},
    {"ablate.epochs", "10", "30"},
    // cost report; the full profile honors the >= 1000-batch protocol,
    // desk shrinks the sample to fit the runtime budget
    {"cost.batch", "128", "128"},
    {"cost.batches", "50", "1000"},
    {"cost.enc_batches", "2", "1000"},
    {"cost.users", "500", "10000"},
};

} // namespace

Config Config::profile(const std::string& name) {
    Config c;
    bool full = name == "full";
    if (!full && name != "desk")
        throw std::runtime_error("unknown profile: " + name + " (expected desk or full)");
    for (const auto& d : kDefaults) c.kv_[d.key] = full ? d.full : d.desk;
    return c;
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::runtime_error("unknown config key: " + key);
    it->second = value;
}

void Config::set_pair(const std::string& key_eq_value) {
    auto eq = key_eq_value.find('=');
    if (eq == std::string::npos)
        throw std::runtime_error("expected key=value, got: " + key_eq_value);
    set(key_eq_value.substr(0, eq), key_eq_value.substr(eq + 1));
}

void Config::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        std::string t = trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

bool Config::has(const std::string& key) const { return kv_.count(key) != 0; }

const std::string& Config::str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::runtime_error("unknown config key: " + key);
    return it->second;
}

int64_t Config::i64(const std::string& key) const {
    try {
        return std::stoll(str(key));
    } catch (const std::logic_error&) {
        throw std::runtime_error("config key " + key + " is not an integer: " + str(key));
    }
}

double Config::dbl(const std::string& key) const {
    try {
        return std::stod(str(key));
    } catch (const std::logic_error&) {
        throw std::runtime_error("config key " + key + " is not a number: " + str(key));
    }
}

bool Config::flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("config key " + key + " is not a boolean: " + v);
}

std::vector<int> Config::int_list(const std::string& key) const {
    std::vector<int> out;
    std::istringstream is(str(key));
    std::string item;
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(std::stoi(item));
    if (out.empty()) throw std::runtime_error("config key " + key + " is an empty list");
    return out;
}

std::vector<double> Config::dbl_list(const std::string& key) const {
    std::vector<double> out;
    std::istringstream is(str(key));
    std::string item;
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    if (out.empty()) throw std::runtime_error("config key " + key + " is an empty list");
    return out;
}

std::string Config::resolved() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << "=" << v << "\n";
    return os.str();
}

uint64_t Config::digest() const { return fnv1a(resolved()); }

} // namespace o4a
