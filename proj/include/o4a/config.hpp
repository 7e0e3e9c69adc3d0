#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace o4a {

// Flat key=value configuration. The key universe is fixed by the built-in
// profiles; unknown keys are rejected at every layer. Resolution order:
// profile defaults < config file < command-line overrides.
class Config {
public:
    static Config profile(const std::string& name); // "desk" | "full"

    void set(const std::string& key, const std::string& value);
    void set_pair(const std::string& key_eq_value); // "key=value"
    void load_file(const std::string& path);        // key = value, '#' comments

    bool has(const std::string& key) const;
    const std::string& str(const std::string& key) const;
    int64_t i64(const std::string& key) const;
    double dbl(const std::string& key) const;
    bool flag(const std::string& key) const; // true/false/1/0
    std::vector<int> int_list(const std::string& key) const;    // comma-separated
    std::vector<double> dbl_list(const std::string& key) const; // comma-separated

    // Sorted key=value lines; logged for every run.
    std::string resolved() const;
    uint64_t digest() const;

private:
    std::map<std::string, std::string> kv_;
};

} // namespace o4a
