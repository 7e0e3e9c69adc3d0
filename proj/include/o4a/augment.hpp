#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "o4a/corpus.hpp"
#include "o4a/rng.hpp"

namespace o4a {

struct AugmentPolicy {
    double p_select = 0.30;          // fraction of batch instances augmented
    double p_crop = 0.50;            // crop vs shuffle among selected
    double shuffle_window_frac = 0.30;
    double crop_keep_min_frac = 0.30;
    uint64_t seed = 0;

    void validate() const;
};

using EventSeq = std::vector<PurchaseEvent>;

// s[l:h)
EventSeq crop(const EventSeq& s, size_t l, size_t h);

// s with positions [l, h) uniformly permuted (Fisher-Yates on the window)
EventSeq shuffle_window(const EventSeq& s, size_t l, size_t h, Rng& rng);

// One pass of the crop-or-shuffle transform. Sequences shorter than 4
// events pass through unchanged.
EventSeq augment_sequence(const EventSeq& s, const AugmentPolicy& policy, Rng& rng);

// Each instance is independently selected with probability p_select using a
// per-instance sub-stream keyed by (policy.seed, instance tag), so batch
// order never changes an instance's outcome.
std::vector<EventSeq> augment_batch(const std::vector<EventSeq>& batch,
                                    const std::vector<std::string>& instance_tags,
                                    const AugmentPolicy& policy, uint64_t epoch);

} // namespace o4a
