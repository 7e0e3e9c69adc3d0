#include "o4a/augment.hpp"

#include <cmath>
#include <stdexcept>

namespace o4a {

void AugmentPolicy::validate() const {
    for (double f : {p_select, p_crop, shuffle_window_frac, crop_keep_min_frac})
        if (f < 0.0 || f > 1.0) throw std::runtime_error("augment policy: fractions must be in [0, 1]");
}

EventSeq crop(const EventSeq& s, size_t l, size_t h) {
    if (l >= h || h > s.size()) throw std::runtime_error("crop: bounds violation");
    return EventSeq(s.begin() + l, s.begin() + h);
}

EventSeq shuffle_window(const EventSeq& s, size_t l, size_t h, Rng& rng) {
    if (l >= h || h > s.size()) throw std::runtime_error("shuffle_window: bounds violation");
    EventSeq out = s;
    for (size_t i = h - 1; i > l; --i) {
        size_t j = l + static_cast<size_t>(rng.below(i - l + 1));
        std::swap(out[i], out[j]);
    }
    return out;
}

EventSeq augment_sequence(const EventSeq& s, const AugmentPolicy& policy, Rng& rng) {
    size_t n = s.size();
    if (n < 4) return s;
    size_t l_max = static_cast<size_t>(std::floor(n * (1.0 - policy.crop_keep_min_frac)));
    size_t keep_min = static_cast<size_t>(std::ceil(n * policy.crop_keep_min_frac));
    if (l_max == 0 || keep_min >= n) return s;
    size_t l = static_cast<size_t>(rng.below(l_max));
    if (rng.bernoulli(policy.p_crop)) {
        size_t h = l + keep_min + static_cast<size_t>(rng.below(n - (l + keep_min)));
        return crop(s, l, h);
    }
    size_t win = static_cast<size_t>(std::ceil(n * policy.shuffle_window_frac));
    size_t h = std::min(l + win, n);
    return shuffle_window(s, l, h, rng);
}

std::vector<EventSeq> augment_batch(const std::vector<EventSeq>& batch,
                                    const std::vector<std::string>& instance_tags,
                                    const AugmentPolicy& policy, uint64_t epoch) {
    if (batch.empty()) throw std::runtime_error("augment_batch: empty batch");
    if (batch.size() != instance_tags.size())
        throw std::runtime_error("augment_batch: tag count mismatch");
    policy.validate();
    std::vector<EventSeq> out;
    out.reserve(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        Rng rng(derive_seed(policy.seed, "augment:" + instance_tags[i], epoch));
        if (rng.bernoulli(policy.p_select))
            out.push_back(augment_sequence(batch[i], policy, rng));
        else
            out.push_back(batch[i]);
    }
    return out;
}

} // namespace o4a
