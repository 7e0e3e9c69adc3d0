#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "o4a/model.hpp"

using namespace o4a;

namespace {

std::vector<EncodedToken> toy_tokens(int n, const VocabProfile& vocab, int salt = 0) {
    std::vector<PurchaseEvent> es;
    CategoryTree tree;
    for (int i = 0; i < n; ++i) {
        PurchaseEvent e;
        int leaf = (salt * 13 + i * 7) % vocab.cat[3];
        int path[4];
        tree.path_of_leaf(leaf, path);
        e.c1 = path[0];
        e.c2 = path[1];
        e.c3 = path[2];
        e.c4 = path[3];
        e.text_key = "t" + std::to_string(i % 3) + ":k" + std::to_string(salt * 100 + i);
        e.ts = make_ts(2019, 1 + (salt + i) % 12, 1 + i % 28, (salt + i) % 24);
        es.push_back(e);
    }
    return encode_events(es, vocab);
}

// One row, first token masked, second chosen-but-kept: both contribute labels.
MaskedBatch two_token_batch(const VocabProfile& vocab, int seq_len, bool with_cls, int salt = 0) {
    auto tokens = toy_tokens(2, vocab, salt);
    MaskedRow row = unmasked_row("u" + std::to_string(salt), tokens);
    row.labels[0] = labels_of(tokens[0]);
    row.plan[0] = MaskState::masked;
    row.tokens[0].cat.fill(-1);
    row.tokens[0].date.fill(-1);
    row.tokens[0].text.clear();
    row.labels[1] = labels_of(tokens[1]);
    row.plan[1] = MaskState::kept;
    return pad_and_batch({row}, seq_len, with_cls);
}

double loss_value(const EncoderParams& p, const MaskedBatch& batch) {
    ag::Graph g;
    auto b = bind_params(g, p.ps);
    std::vector<ag::Var> hiddens;
    hiddens.reserve(batch.rows.size());
    for (const auto& row : batch.rows)
        hiddens.push_back(encode_row_hidden(g, b, p.cfg, p.vocab, row));
    return mpp_loss(g, b, p.cfg, p.vocab, hiddens, batch)->val.v[0];
}

GradSet loss_grads(const EncoderParams& p, const MaskedBatch& batch) {
    ag::Graph g;
    auto b = bind_params(g, p.ps);
    std::vector<ag::Var> hiddens;
    for (const auto& row : batch.rows)
        hiddens.push_back(encode_row_hidden(g, b, p.cfg, p.vocab, row));
    auto loss = mpp_loss(g, b, p.cfg, p.vocab, hiddens, batch);
    g.backward(loss);
    return collect_grads(b);
}

EncoderConfig tiny_cfg(bool cls_variant = false) {
    EncoderConfig cfg;
    cfg.hidden = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.max_seq_len = cls_variant ? 3 : 2;
    cfg.dropout = 0.0;
    cfg.cls_variant = cls_variant;
    return cfg;
}

struct TempDir {
    std::filesystem::path p;
    TempDir() {
        p = std::filesystem::temp_directory_path() /
            ("o4a-model-test-" + std::to_string(::getpid()));
        std::filesystem::create_directories(p);
    }
    ~TempDir() { std::filesystem::remove_all(p); }
    std::string file(const std::string& name) const { return (p / name).string(); }
};

} // namespace

TEST_CASE("gradients match central finite differences for every parameter group") {
    auto vocab = VocabProfile::desk();
    const double h = 1e-5;
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        auto cfg = tiny_cfg();
        auto params = init_params(cfg, vocab, seed);
        // zero-init output layers make many analytic gradients exactly zero at
        // the origin; nudge every tensor off it so the check is non-trivial
        Rng noise(derive_seed(seed, "fd-noise"));
        for (auto& [name, t] : params.ps.tensors)
            for (auto& x : t.v) x += noise.gauss(0.0, 0.02);
        auto batch = two_token_batch(vocab, 2, false, static_cast<int>(seed));
        auto grads = loss_grads(params, batch);
        REQUIRE(grads.size() == params.ps.tensors.size());
        double max_rel = 0.0;
        Rng pick(derive_seed(seed, "fd-pick"));
        for (auto& [name, t] : params.ps.tensors) {
            const Tensor& grad = grads.at(name);
            // probe the largest-gradient entry plus a handful of random ones
            std::vector<size_t> idx;
            size_t best = 0;
            for (size_t i = 0; i < grad.size(); ++i)
                if (std::abs(grad.v[i]) > std::abs(grad.v[best])) best = i;
            idx.push_back(best);
            for (int r = 0; r < 6; ++r) idx.push_back(pick.below(t.size()));
            for (size_t i : idx) {
                double keep = t.v[i];
                t.v[i] = keep + h;
                double up = loss_value(params, batch);
                t.v[i] = keep - h;
                double dn = loss_value(params, batch);
                t.v[i] = keep;
                double fd = (up - dn) / (2.0 * h);
                // the floor keeps double-precision FD noise (~1e-11 at this
                // loss scale) from dominating near-zero gradients
                double denom = std::max({std::abs(fd), std::abs(grad.v[i]), 1e-6});
                double rel = std::abs(fd - grad.v[i]) / denom;
                max_rel = std::max(max_rel, rel);
                CHECK_MESSAGE(rel < 1e-4, name << "[" << i << "]: analytic " << grad.v[i]
                                               << " vs fd " << fd);
            }
        }
        CHECK(max_rel < 1e-4);
    }
}

TEST_CASE("cls variant gradients also match finite differences") {
    auto vocab = VocabProfile::desk();
    auto cfg = tiny_cfg(/*cls_variant=*/true);
    auto params = init_params(cfg, vocab, 7);
    Rng noise(99);
    for (auto& [name, t] : params.ps.tensors)
        for (auto& x : t.v) x += noise.gauss(0.0, 0.02);
    auto batch = two_token_batch(vocab, 3, /*with_cls=*/true, 3);
    auto grads = loss_grads(params, batch);
    const double h = 1e-5;
    Rng pick(55);
    for (auto& [name, t] : params.ps.tensors) {
        for (int r = 0; r < 4; ++r) {
            size_t i = pick.below(t.size());
            double keep = t.v[i];
            t.v[i] = keep + h;
            double up = loss_value(params, batch);
            t.v[i] = keep - h;
            double dn = loss_value(params, batch);
            t.v[i] = keep;
            double fd = (up - dn) / (2.0 * h);
            double denom = std::max({std::abs(fd), std::abs(grads.at(name).v[i]), 1e-6});
            CHECK(std::abs(fd - grads.at(name).v[i]) / denom < 1e-4);
        }
    }
}

TEST_CASE("initial loss equals the uniform value") {
    auto vocab = VocabProfile::desk();
    double expect = 0.0;
    int sizes[kNumTasks] = {8, 16, 32, 64, vocab.year_count, 12, 31, 7, 24};
    for (int t = 0; t < kNumTasks; ++t) expect += std::log(static_cast<double>(sizes[t]));
    expect /= kNumTasks;
    CHECK(uniform_mpp_loss(vocab) == doctest::Approx(expect).epsilon(1e-12));

    auto params = init_params(tiny_cfg(), vocab, 11);
    auto batch = two_token_batch(vocab, 2, false, 1);
    CHECK(loss_value(params, batch) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("head logits are zero at initialization") {
    auto vocab = VocabProfile::desk();
    auto params = init_params(tiny_cfg(), vocab, 13);
    ag::Graph g;
    auto b = bind_params(g, params.ps);
    Tensor hid(3, params.cfg.head_input_width());
    Rng r(2);
    for (auto& x : hid.v) x = r.gauss();
    for (int t = 0; t < kNumTasks; ++t) {
        auto logits = head_forward(g, b, params.cfg, vocab, t, g.leaf(hid));
        CHECK(logits->val.rows == 3);
        CHECK(logits->val.cols == vocab.task_size(t));
        for (double v : logits->val.v) CHECK(v == 0.0);
    }
}

TEST_CASE("parameter count formula matches enumeration") {
    auto desk_vocab = VocabProfile::desk();
    auto cfg = EncoderConfig::desk();
    auto params = init_params(cfg, desk_vocab, 1);
    CHECK(param_count_formula(cfg, desk_vocab) == params.ps.param_count());

    auto tiny = tiny_cfg();
    CHECK(param_count_formula(tiny, desk_vocab) ==
          init_params(tiny, desk_vocab, 1).ps.param_count());

    auto down = EncoderConfig::full_downstream();
    CHECK(param_count_formula(down, desk_vocab) ==
          init_params(down, desk_vocab, 1).ps.param_count());
}

TEST_CASE("shared layers keep exactly one block of weights") {
    auto vocab = VocabProfile::desk();
    EncoderConfig one = tiny_cfg();
    one.layers = 1;
    EncoderConfig shared = tiny_cfg();
    shared.layers = 4;
    shared.share_layers = true;
    CHECK(param_count_formula(shared, vocab) == param_count_formula(one, vocab));
    EncoderConfig four = shared;
    four.share_layers = false;
    CHECK(param_count_formula(four, vocab) > param_count_formula(shared, vocab));
}

TEST_CASE("full-scale pretrain profile lands near the reference 79.2M parameters") {
    auto cfg = EncoderConfig::full_pretrain();
    auto vocab = VocabProfile::full();
    double count = static_cast<double>(param_count_formula(cfg, vocab));
    CHECK(count > 79.2e6 * 0.95);
    CHECK(count < 79.2e6 * 1.05);
}

TEST_CASE("warmup cosine schedule") {
    ScheduleConfig s;
    s.base_lr = 1e-3;
    s.warmup_steps = 10;
    s.total_steps = 110;
    CHECK(lr_at(s, 0) == 0.0);
    CHECK(lr_at(s, 5) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(s, 10) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(lr_at(s, 60) == doctest::Approx(5e-4).epsilon(1e-9)); // halfway through decay
    CHECK(lr_at(s, 110) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS(lr_at(s, -1));
}

TEST_CASE("exponential schedule decays per epoch") {
    ScheduleConfig s;
    s.kind = ScheduleConfig::Kind::exponential;
    s.base_lr = 1e-3;
    s.decay_rate = 0.995;
    CHECK(lr_at(s, 0) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(lr_at(s, 7) == doctest::Approx(1e-3 * std::pow(0.995, 7)).epsilon(1e-12));
}

TEST_CASE("adam first step moves weights by lr per unit gradient sign") {
    ParamSet ps;
    ps.tensors["w"] = Tensor(1, 3);
    ps.tensors["w"].v = {1.0, -2.0, 0.5};
    ps.opt_m["w"] = Tensor(1, 3);
    ps.opt_v["w"] = Tensor(1, 3);
    GradSet grads;
    grads["w"] = Tensor(1, 3);
    grads["w"].v = {0.3, -0.7, 0.0};
    adam_step(ps, grads, 0.01, 0.0);
    CHECK(ps.step == 1);
    // bias-corrected first step: mhat/(sqrt(vhat)+eps) ~ sign(g)
    CHECK(ps.tensors.at("w").v[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(ps.tensors.at("w").v[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
    CHECK(ps.tensors.at("w").v[2] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("adam with zero gradients and no decay is a fixed point") {
    auto vocab = VocabProfile::desk();
    auto params = init_params(tiny_cfg(), vocab, 3);
    auto before = params.ps.tensors;
    GradSet zeros;
    for (const auto& [name, t] : params.ps.tensors) zeros[name] = Tensor(t.rows, t.cols);
    adam_step(params.ps, zeros, 1e-3, 0.0);
    CHECK(params.ps.tensors == before);
}

TEST_CASE("decoupled weight decay shrinks weights even at zero gradient") {
    ParamSet ps;
    ps.tensors["w"] = Tensor(1, 1);
    ps.tensors["w"].v = {2.0};
    ps.opt_m["w"] = Tensor(1, 1);
    ps.opt_v["w"] = Tensor(1, 1);
    GradSet grads;
    grads["w"] = Tensor(1, 1);
    adam_step(ps, grads, 0.1, 0.01);
    CHECK(ps.tensors.at("w").v[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
}

TEST_CASE("same seed gives bit-identical init, different seed differs") {
    auto vocab = VocabProfile::desk();
    auto a = init_params(tiny_cfg(), vocab, 21);
    auto b = init_params(tiny_cfg(), vocab, 21);
    CHECK(a == b);
    auto c = init_params(tiny_cfg(), vocab, 22);
    CHECK(!(a.ps.tensors == c.ps.tensors));
}

TEST_CASE("checkpoint round trip is lossless") {
    TempDir tmp;
    auto vocab = VocabProfile::desk();
    auto params = init_params(tiny_cfg(), vocab, 17);
    // give the optimizer state non-trivial content
    GradSet grads;
    Rng r(5);
    for (const auto& [name, t] : params.ps.tensors) {
        grads[name] = Tensor(t.rows, t.cols);
        for (auto& x : grads[name].v) x = r.gauss();
    }
    adam_step(params.ps, grads, 1e-3, 0.01);
    auto path = tmp.file("ck.o4ac");
    save_checkpoint(path, params);
    auto back = load_checkpoint(path);
    CHECK(back == params);
    CHECK(back.ps.step == params.ps.step);
    CHECK_NOTHROW(load_checkpoint_checked(path, vocab.digest()));
    CHECK_THROWS(load_checkpoint_checked(path, vocab.digest() + 1));
    CHECK_THROWS(load_checkpoint(tmp.file("missing.o4ac")));
}

TEST_CASE("padding does not change real-token hidden states") {
    auto vocab = VocabProfile::desk();
    EncoderConfig cfg = tiny_cfg();
    cfg.max_seq_len = 6;
    auto params = init_params(cfg, vocab, 29);
    Rng noise(1);
    for (auto& [name, t] : params.ps.tensors)
        for (auto& x : t.v) x += noise.gauss(0.0, 0.02);
    auto tokens = toy_tokens(3, vocab);
    auto tight = pad_and_batch({unmasked_row("u", tokens)}, 3, false);
    auto loose = pad_and_batch({unmasked_row("u", tokens)}, 6, false);
    ag::Graph g;
    auto b = bind_params(g, params.ps);
    auto ht = encode_row_hidden(g, b, cfg, vocab, tight.rows[0]);
    auto hl = encode_row_hidden(g, b, cfg, vocab, loose.rows[0]);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < cfg.hidden; ++j)
            CHECK(ht->val.at(i, j) == doctest::Approx(hl->val.at(i, j)).epsilon(1e-9));
}

TEST_CASE("encoder config serialize round trip and validation") {
    auto cfg = EncoderConfig::full_pretrain();
    CHECK(cfg.hidden == 550);
    CHECK(cfg.layers == 20);
    CHECK(cfg.heads == 10);
    CHECK(cfg.max_seq_len == 350);
    auto back = EncoderConfig::deserialize(cfg.serialize());
    CHECK(back == cfg);

    EncoderConfig bad;
    bad.hidden = 10;
    bad.heads = 4; // hidden not divisible by heads
    CHECK_THROWS(bad.validate());
}
