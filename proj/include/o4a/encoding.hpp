#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "o4a/corpus.hpp"
#include "o4a/rng.hpp"

namespace o4a {

constexpr int kNumTasks = 9; // c1..c4, year, month, day-of-month, day-of-week, hour
extern const char* kTaskNames[kNumTasks];

struct VocabProfile {
    int cat[4] = {8, 16, 32, 64};
    int year_base = 2018;
    int year_count = 3;
    int d_text = 16;
    uint64_t text_seed = 1;
    double topic_weight = 0.6;

    static VocabProfile desk();
    static VocabProfile full(); // category sizes 12, 234, 2092, 3379; d_text 768

    // sizes of the nine sub-task vocabularies, task order as kTaskNames
    int task_size(int t) const;
    int date_size(int f) const; // f in [0,5): year, month, dom, dow, hour

    std::string serialize() const;
    static VocabProfile deserialize(const std::string& text);
    uint64_t digest() const;

    bool operator==(const VocabProfile&) const = default;
};

// Scan a corpus: per-level category size = max id + 1, years span the
// observed range.
VocabProfile build_vocabs(const std::vector<UserHistory>& hs, int d_text, uint64_t text_seed,
                          double topic_weight = 0.6);

struct EncodedToken {
    std::array<int, 4> cat{};
    std::array<int, 5> date{}; // year index, month-1, day-1, day-of-week, hour
    std::vector<double> text;  // d_text, empty at [MASK]/[PAD]/[CLS] positions
};

enum class MaskState : uint8_t {
    pad,
    cls,
    untouched,
    masked,     // chosen, replaced by [MASK]
    randomized, // chosen, replaced by a random corpus event
    kept        // chosen, left unchanged
};

inline bool is_chosen(MaskState s) {
    return s == MaskState::masked || s == MaskState::randomized || s == MaskState::kept;
}

struct MaskedRow {
    std::string user_id;
    std::vector<EncodedToken> tokens;
    std::vector<MaskState> plan;
    std::vector<std::array<int, kNumTasks>> labels; // original values at chosen positions
    bool has_cls = false;

    size_t size() const { return tokens.size(); }
    int chosen_count() const;
    int real_count() const; // non-pad, non-cls positions
};

struct MaskedBatch {
    std::vector<MaskedRow> rows;
    int seq_len = 0;
    bool has_cls = false;
};

EncodedToken encode_event(const PurchaseEvent& e, const VocabProfile& vocab);
std::vector<EncodedToken> encode_events(const std::vector<PurchaseEvent>& events,
                                        const VocabProfile& vocab);

std::array<int, kNumTasks> labels_of(const EncodedToken& t);

// Read-only snapshot of training tokens for the random-replacement branch.
class CorpusSampler {
public:
    CorpusSampler() = default;
    explicit CorpusSampler(std::vector<EncodedToken> pool) : pool_(std::move(pool)) {}
    static CorpusSampler from_histories(const std::vector<UserHistory>& hs,
                                        const VocabProfile& vocab, size_t cap = 200000);
    bool empty() const { return pool_.empty(); }
    const EncodedToken& sample(Rng& rng) const;

private:
    std::vector<EncodedToken> pool_;
};

struct MaskingParams {
    double p_choose = 0.15;
    double p_mask = 0.80;   // of chosen: replace by [MASK]
    double p_random = 0.10; // of chosen: replace by random event; remainder kept
};

// BERT-style masking plan over real tokens. Labels store the values
// before replacement. [MASK] hides categories and all five date fields.
MaskedRow apply_mpp_masking(const std::string& user_id, const std::vector<EncodedToken>& tokens,
                            Rng& rng, const CorpusSampler& sampler,
                            const MaskingParams& mp = {});

// Plain row with no masking (extraction path).
MaskedRow unmasked_row(const std::string& user_id, const std::vector<EncodedToken>& tokens);

// Truncate to the most recent events, prepend [CLS] when requested (counted
// inside max_seq_len), right-pad with [PAD].
MaskedBatch pad_and_batch(std::vector<MaskedRow> rows, int max_seq_len, bool with_cls);

} // namespace o4a
