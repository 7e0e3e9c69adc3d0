#include "o4a/encoding.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace o4a {

const char* kTaskNames[kNumTasks] = {"c1",  "c2",    "c3",  "c4", "year",
                                     "month", "dom", "dow", "hour"};

VocabProfile VocabProfile::desk() { return VocabProfile{}; }

VocabProfile VocabProfile::full() {
    VocabProfile v;
    v.cat[0] = 12;
    v.cat[1] = 234;
    v.cat[2] = 2092;
    v.cat[3] = 3379;
    v.year_base = 2018;
    v.year_count = 3;
    v.d_text = 768;
    return v;
}

int VocabProfile::date_size(int f) const {
    switch (f) {
    case 0: return year_count;
    case 1: return 12;
    case 2: return 31;
    case 3: return 7;
    case 4: return 24;
    default: throw std::runtime_error("date_size: bad field");
    }
}

int VocabProfile::task_size(int t) const {
    if (t < 0 || t >= kNumTasks) throw std::runtime_error("task_size: bad task");
    return t < 4 ? cat[t] : date_size(t - 4);
}

std::string VocabProfile::serialize() const {
    std::ostringstream os;
    os << "o4a-vocab v1\n";
    for (int i = 0; i < 4; ++i) os << "c" << (i + 1) << "=" << cat[i] << "\n";
    os << "year_base=" << year_base << "\n";
    os << "year_count=" << year_count << "\n";
    os << "d_text=" << d_text << "\n";
    os << "text_seed=" << text_seed << "\n";
    os << "topic_weight=" << topic_weight << "\n";
    return os.str();
}

VocabProfile VocabProfile::deserialize(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "o4a-vocab v1")
        throw std::runtime_error("vocab profile: bad header");
    VocabProfile v;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("vocab profile: bad line " + line);
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "c1") v.cat[0] = std::stoi(val);
        else if (key == "c2") v.cat[1] = std::stoi(val);
        else if (key == "c3") v.cat[2] = std::stoi(val);
        else if (key == "c4") v.cat[3] = std::stoi(val);
        else if (key == "year_base") v.year_base = std::stoi(val);
        else if (key == "year_count") v.year_count = std::stoi(val);
        else if (key == "d_text") v.d_text = std::stoi(val);
        else if (key == "text_seed") v.text_seed = std::stoull(val);
        else if (key == "topic_weight") v.topic_weight = std::stod(val);
        else throw std::runtime_error("vocab profile: unknown key " + key);
    }
    return v;
}

uint64_t VocabProfile::digest() const { return fnv1a(serialize()); }

VocabProfile build_vocabs(const std::vector<UserHistory>& hs, int d_text, uint64_t text_seed,
                          double topic_weight) {
    bool any = false;
    VocabProfile v;
    v.cat[0] = v.cat[1] = v.cat[2] = v.cat[3] = 1;
    int ymin = 0, ymax = 0;
    for (const auto& h : hs)
        for (const auto& e : h.events) {
            v.cat[0] = std::max(v.cat[0], e.c1 + 1);
            v.cat[1] = std::max(v.cat[1], e.c2 + 1);
            v.cat[2] = std::max(v.cat[2], e.c3 + 1);
            v.cat[3] = std::max(v.cat[3], e.c4 + 1);
            int y = date_fields_of(e.ts).year;
            if (!any) {
                ymin = ymax = y;
                any = true;
            } else {
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
        }
    if (!any) throw std::runtime_error("build_vocabs: no events");
    v.year_base = ymin;
    v.year_count = ymax - ymin + 1;
    v.d_text = d_text;
    v.text_seed = text_seed;
    v.topic_weight = topic_weight;
    return v;
}

EncodedToken encode_event(const PurchaseEvent& e, const VocabProfile& vocab) {
    EncodedToken t;
    const int ids[4] = {e.c1, e.c2, e.c3, e.c4};
    for (int i = 0; i < 4; ++i) {
        if (ids[i] < 0 || ids[i] >= vocab.cat[i])
            throw std::runtime_error("encode_event: category id out of range at level " +
                                     std::to_string(i + 1));
        t.cat[i] = ids[i];
    }
    auto f = date_fields_of(e.ts);
    int year_ix = f.year - vocab.year_base;
    if (year_ix < 0 || year_ix >= vocab.year_count)
        throw std::runtime_error("encode_event: year " + std::to_string(f.year) +
                                 " outside vocab range");
    t.date = {year_ix, f.month - 1, f.day - 1, f.day_of_week, f.hour};
    t.text = text_vector_of(e.text_key, vocab.d_text, vocab.text_seed, vocab.topic_weight);
    return t;
}

std::vector<EncodedToken> encode_events(const std::vector<PurchaseEvent>& events,
                                        const VocabProfile& vocab) {
    std::vector<EncodedToken> out;
    out.reserve(events.size());
    for (const auto& e : events) out.push_back(encode_event(e, vocab));
    return out;
}

std::array<int, kNumTasks> labels_of(const EncodedToken& t) {
    return {t.cat[0], t.cat[1], t.cat[2], t.cat[3],
            t.date[0], t.date[1], t.date[2], t.date[3], t.date[4]};
}

int MaskedRow::chosen_count() const {
    int n = 0;
    for (auto s : plan)
        if (is_chosen(s)) ++n;
    return n;
}

int MaskedRow::real_count() const {
    int n = 0;
    for (auto s : plan)
        if (s != MaskState::pad && s != MaskState::cls) ++n;
    return n;
}

CorpusSampler CorpusSampler::from_histories(const std::vector<UserHistory>& hs,
                                            const VocabProfile& vocab, size_t cap) {
    std::vector<EncodedToken> pool;
    for (const auto& h : hs) {
        for (const auto& e : h.events) {
            if (pool.size() >= cap) break;
            pool.push_back(encode_event(e, vocab));
        }
        if (pool.size() >= cap) break;
    }
    return CorpusSampler(std::move(pool));
}

const EncodedToken& CorpusSampler::sample(Rng& rng) const {
    if (pool_.empty()) throw std::runtime_error("corpus sampler: empty pool");
    return pool_[rng.below(pool_.size())];
}

static const std::array<int, kNumTasks> kNoLabel = {-1, -1, -1, -1, -1, -1, -1, -1, -1};

MaskedRow apply_mpp_masking(const std::string& user_id, const std::vector<EncodedToken>& tokens,
                            Rng& rng, const CorpusSampler& sampler, const MaskingParams& mp) {
    if (tokens.empty()) throw std::runtime_error("apply_mpp_masking: empty sequence");
    MaskedRow row;
    row.user_id = user_id;
    row.tokens = tokens;
    row.plan.assign(tokens.size(), MaskState::untouched);
    row.labels.assign(tokens.size(), kNoLabel);
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (!rng.bernoulli(mp.p_choose)) continue;
        row.labels[i] = labels_of(tokens[i]);
        double u = rng.uniform();
        if (u < mp.p_mask) {
            row.plan[i] = MaskState::masked;
            row.tokens[i].cat.fill(-1);
            row.tokens[i].date.fill(-1);
            row.tokens[i].text.clear();
        } else if (u < mp.p_mask + mp.p_random) {
            row.plan[i] = MaskState::randomized;
            row.tokens[i] = sampler.sample(rng);
        } else {
            row.plan[i] = MaskState::kept;
        }
    }
    return row;
}

MaskedRow unmasked_row(const std::string& user_id, const std::vector<EncodedToken>& tokens) {
    if (tokens.empty()) throw std::runtime_error("unmasked_row: empty sequence");
    MaskedRow row;
    row.user_id = user_id;
    row.tokens = tokens;
    row.plan.assign(tokens.size(), MaskState::untouched);
    row.labels.assign(tokens.size(), kNoLabel);
    return row;
}

MaskedBatch pad_and_batch(std::vector<MaskedRow> rows, int max_seq_len, bool with_cls) {
    if (max_seq_len < 1 + (with_cls ? 1 : 0))
        throw std::runtime_error("pad_and_batch: max_seq_len too small");
    MaskedBatch batch;
    batch.seq_len = max_seq_len;
    batch.has_cls = with_cls;
    int budget = max_seq_len - (with_cls ? 1 : 0);
    for (auto& r : rows) {
        if (r.tokens.empty()) throw std::runtime_error("pad_and_batch: empty row");
        MaskedRow out;
        out.user_id = r.user_id;
        out.has_cls = with_cls;
        size_t n = r.tokens.size();
        size_t start = n > static_cast<size_t>(budget) ? n - budget : 0; // keep most recent
        if (with_cls) {
            out.tokens.push_back(EncodedToken{});
            out.tokens.back().cat.fill(-1);
            out.tokens.back().date.fill(-1);
            out.plan.push_back(MaskState::cls);
            out.labels.push_back(kNoLabel);
        }
        for (size_t i = start; i < n; ++i) {
            out.tokens.push_back(std::move(r.tokens[i]));
            out.plan.push_back(r.plan[i]);
            out.labels.push_back(r.labels[i]);
        }
        while (out.tokens.size() < static_cast<size_t>(max_seq_len)) {
            out.tokens.push_back(EncodedToken{});
            out.tokens.back().cat.fill(-1);
            out.tokens.back().date.fill(-1);
            out.plan.push_back(MaskState::pad);
            out.labels.push_back(kNoLabel);
        }
        batch.rows.push_back(std::move(out));
    }
    return batch;
}

} // namespace o4a
