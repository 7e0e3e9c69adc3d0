#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "o4a/corpus.hpp"
#include "o4a/encoding.hpp"

using namespace o4a;

namespace {

PurchaseEvent ev(int leaf, const std::string& key, int64_t ts) {
    PurchaseEvent e;
    CategoryTree t;
    int path[4];
    t.path_of_leaf(leaf, path);
    e.c1 = path[0];
    e.c2 = path[1];
    e.c3 = path[2];
    e.c4 = path[3];
    e.text_key = key;
    e.ts = ts;
    return e;
}

std::vector<EncodedToken> toy_tokens(int n, const VocabProfile& vocab) {
    std::vector<PurchaseEvent> es;
    for (int i = 0; i < n; ++i)
        es.push_back(ev(i % vocab.cat[3], "t0:k" + std::to_string(i),
                        make_ts(2019, 1 + i % 12, 1 + i % 28, i % 24)));
    return encode_events(es, vocab);
}

} // namespace

TEST_CASE("desk and full vocab task sizes") {
    auto d = VocabProfile::desk();
    CHECK(d.cat[0] == 8);
    CHECK(d.cat[3] == 64);
    // order: c1..c4, year, month, day-of-month, day-of-week, hour
    int expect[kNumTasks] = {8, 16, 32, 64, d.year_count, 12, 31, 7, 24};
    for (int t = 0; t < kNumTasks; ++t) CHECK(d.task_size(t) == expect[t]);

    auto p = VocabProfile::full();
    CHECK(p.cat[0] == 12);
    CHECK(p.cat[1] == 234);
    CHECK(p.cat[2] == 2092);
    CHECK(p.cat[3] == 3379);
    CHECK(p.d_text == 768);
}

TEST_CASE("vocab serialize round trip and digest sensitivity") {
    auto d = VocabProfile::desk();
    auto back = VocabProfile::deserialize(d.serialize());
    CHECK(back == d);
    auto d2 = d;
    d2.year_count = 5;
    CHECK(d2.digest() != d.digest());
    CHECK(VocabProfile::deserialize(d2.serialize()) == d2);
}

TEST_CASE("build_vocabs scans category sizes and year span") {
    std::vector<UserHistory> hs(1);
    hs[0].user_id = "u";
    hs[0].events = {ev(5, "t0:a", make_ts(2018, 3, 1, 5)), ev(63, "t0:b", make_ts(2020, 9, 30, 23))};
    auto v = build_vocabs(hs, 16, 7);
    CHECK(v.cat[3] == 64);
    CHECK(v.year_base == 2018);
    CHECK(v.year_count == 3);
    CHECK(v.d_text == 16);
}

TEST_CASE("encode_event carries categories, date indices and the text vector") {
    auto vocab = VocabProfile::desk();
    auto e = ev(37, "t2:thing", make_ts(2019, 7, 20, 15));
    auto t = encode_event(e, vocab);
    CHECK(t.cat[3] == 37);
    CHECK(t.cat[0] == e.c1);
    CHECK(t.date[0] == 2019 - vocab.year_base);
    CHECK(t.date[1] == 6);  // month-1
    CHECK(t.date[2] == 19); // day-1
    CHECK(t.date[4] == 15);
    REQUIRE(static_cast<int>(t.text.size()) == vocab.d_text);
    CHECK(t.text == text_vector_of("t2:thing", vocab.d_text, vocab.text_seed, vocab.topic_weight));

    auto labels = labels_of(t);
    CHECK(labels[0] == e.c1);
    CHECK(labels[3] == 37);
    CHECK(labels[4] == t.date[0]);
    CHECK(labels[8] == 15);
}

TEST_CASE("masking hides the masked token and stores original labels") {
    auto vocab = VocabProfile::desk();
    auto tokens = toy_tokens(40, vocab);
    CorpusSampler sampler(tokens);
    Rng rng(4);
    MaskingParams mp;
    mp.p_choose = 1.0; // every token chosen
    mp.p_mask = 1.0;
    mp.p_random = 0.0;
    auto row = apply_mpp_masking("u", tokens, rng, sampler, mp);
    REQUIRE(row.tokens.size() == tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) {
        CHECK(row.plan[i] == MaskState::masked);
        CHECK(row.tokens[i].cat[0] == -1);
        CHECK(row.tokens[i].date[0] == -1);
        CHECK(row.tokens[i].text.empty());
        CHECK(row.labels[i] == labels_of(tokens[i])); // pre-replacement values
    }
    CHECK(row.chosen_count() == static_cast<int>(tokens.size()));
}

TEST_CASE("kept tokens stay unchanged, randomized tokens come from the pool") {
    auto vocab = VocabProfile::desk();
    auto tokens = toy_tokens(200, vocab);
    CorpusSampler sampler(toy_tokens(10, vocab));
    Rng rng(9);
    MaskingParams mp;
    mp.p_choose = 1.0;
    mp.p_mask = 0.0;
    mp.p_random = 0.5;
    auto row = apply_mpp_masking("u", tokens, rng, sampler, mp);
    int kept = 0, randomized = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (row.plan[i] == MaskState::kept) {
            ++kept;
            CHECK(row.tokens[i].cat == tokens[i].cat);
            CHECK(row.tokens[i].text == tokens[i].text);
        } else {
            REQUIRE(row.plan[i] == MaskState::randomized);
            ++randomized;
            CHECK(!row.tokens[i].text.empty());
        }
        CHECK(row.labels[i] == labels_of(tokens[i]));
    }
    CHECK(kept > 0);
    CHECK(randomized > 0);
}

TEST_CASE("masking branch statistics approach 15 percent and 80/10/10") {
    auto vocab = VocabProfile::desk();
    auto tokens = toy_tokens(64, vocab);
    CorpusSampler sampler(tokens);
    MaskingParams mp;
    long chosen = 0, masked = 0, randomized = 0, kept = 0, total = 0;
    Rng rng(31337);
    for (int rep = 0; rep < 2000; ++rep) {
        auto row = apply_mpp_masking("u", tokens, rng, sampler, mp);
        for (auto s : row.plan) {
            ++total;
            if (is_chosen(s)) ++chosen;
            if (s == MaskState::masked) ++masked;
            if (s == MaskState::randomized) ++randomized;
            if (s == MaskState::kept) ++kept;
        }
    }
    CHECK(std::abs(chosen / double(total) - 0.15) < 0.005);
    CHECK(std::abs(masked / double(chosen) - 0.80) < 0.02);
    CHECK(std::abs(randomized / double(chosen) - 0.10) < 0.02);
    CHECK(std::abs(kept / double(chosen) - 0.10) < 0.02);
}

TEST_CASE("pad_and_batch truncates to the most recent events and pads right") {
    auto vocab = VocabProfile::desk();
    auto tokens = toy_tokens(10, vocab);
    auto row = unmasked_row("u", tokens);
    auto short_row = unmasked_row("v", toy_tokens(3, vocab));
    auto batch = pad_and_batch({row, short_row}, 8, /*with_cls=*/true);
    CHECK(batch.seq_len == 8);
    REQUIRE(batch.rows.size() == 2);

    const auto& r0 = batch.rows[0];
    REQUIRE(r0.tokens.size() == 8);
    CHECK(r0.plan[0] == MaskState::cls);
    // budget 7 after [CLS]: keeps tokens 3..9
    for (int i = 0; i < 7; ++i) CHECK(r0.tokens[1 + i].cat == tokens[3 + i].cat);
    CHECK(r0.real_count() == 7);

    const auto& r1 = batch.rows[1];
    REQUIRE(r1.tokens.size() == 8);
    CHECK(r1.plan[0] == MaskState::cls);
    for (int i = 4; i < 8; ++i) CHECK(r1.plan[i] == MaskState::pad);
    CHECK(r1.real_count() == 3);
}

TEST_CASE("pad_and_batch without cls") {
    auto vocab = VocabProfile::desk();
    auto batch = pad_and_batch({unmasked_row("u", toy_tokens(5, vocab))}, 4, false);
    CHECK(!batch.has_cls);
    const auto& r = batch.rows[0];
    CHECK(r.tokens.size() == 4);
    CHECK(r.real_count() == 4);
    CHECK(!r.has_cls);
}

TEST_CASE("corpus sampler is deterministic under a fixed stream") {
    auto vocab = VocabProfile::desk();
    CorpusSampler s(toy_tokens(50, vocab));
    Rng a(5), b(5);
    for (int i = 0; i < 100; ++i) CHECK(s.sample(a).cat == s.sample(b).cat);
    CorpusSampler empty;
    Rng r(1);
    CHECK_THROWS(empty.sample(r));
}
