#include "doctest.h"

#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "o4a/corpus.hpp"
#include "o4a/pretrain.hpp"

using namespace o4a;

namespace {

struct TempDir {
    std::filesystem::path p;
    TempDir() {
        p = std::filesystem::temp_directory_path() /
            ("o4a-pretrain-test-" + std::to_string(::getpid()));
        std::filesystem::create_directories(p);
    }
    ~TempDir() { std::filesystem::remove_all(p); }
    std::string file(const std::string& name) const { return (p / name).string(); }
};

std::vector<UserHistory> tiny_world(int users, uint64_t seed) {
    WorldConfig wc;
    wc.n_users = users;
    wc.seed = seed;
    auto w = generate_synthetic_world(wc);
    for (auto& h : w.users) h = canonicalize(h);
    return w.users;
}

PretrainRun tiny_run(int64_t steps = 4) {
    PretrainRun run;
    run.enc.hidden = 16;
    run.enc.layers = 1;
    run.enc.heads = 2;
    run.enc.max_seq_len = 12;
    run.enc.dropout = 0.1;
    run.enc.seed = 5;
    run.batch_size = 4;
    run.steps = steps;
    run.seed = 5;
    run.sched.base_lr = 1e-3;
    run.sched.warmup_steps = 2;
    run.sched.total_steps = steps;
    return run;
}

} // namespace

TEST_CASE("same-seed training runs are bit-identical") {
    auto users = tiny_world(12, 3);
    auto vocab = build_vocabs(users, 8, 3);
    auto run = tiny_run();
    auto a = train_pretext(run, users, vocab);
    auto b = train_pretext(run, users, vocab);
    CHECK(a.params == b.params);
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].total == b.log[i].total);
        CHECK(a.log[i].lr == b.log[i].lr);
    }
    run.seed = 6;
    auto c = train_pretext(run, users, vocab);
    CHECK(!(a.params.ps.tensors == c.params.ps.tensors));
}

TEST_CASE("augmented runs differ from plain runs but stay deterministic") {
    auto users = tiny_world(12, 3);
    auto vocab = build_vocabs(users, 8, 3);
    auto run = tiny_run();
    run.augment = true;
    auto a = train_pretext(run, users, vocab);
    auto b = train_pretext(run, users, vocab);
    CHECK(a.params == b.params);
    run.augment = false;
    auto c = train_pretext(run, users, vocab);
    CHECK(!(a.params.ps.tensors == c.params.ps.tensors));
}

TEST_CASE("resume from a mid-run checkpoint reproduces the unbroken run") {
    TempDir tmp;
    auto users = tiny_world(12, 7);
    auto vocab = build_vocabs(users, 8, 7);
    auto run = tiny_run(6);
    auto full = train_pretext(run, users, vocab);

    auto run_ck = run;
    run_ck.checkpoint_every = 3;
    run_ck.checkpoint_dir = tmp.p.string();
    auto chunked = train_pretext(run_ck, users, vocab);
    CHECK(chunked.params == full.params);
    REQUIRE(!chunked.checkpoint_paths.empty());

    // find the step-3 checkpoint and resume from it
    std::string mid;
    for (const auto& p : chunked.checkpoint_paths)
        if (load_checkpoint(p).ps.step == 3) mid = p;
    REQUIRE(!mid.empty());
    auto resumed = train_pretext_from(run, load_checkpoint(mid), users);
    CHECK(resumed.params == full.params);
}

TEST_CASE("loss log rows carry steps and the schedule lr") {
    auto users = tiny_world(10, 9);
    auto vocab = build_vocabs(users, 8, 9);
    auto run = tiny_run(3);
    auto r = train_pretext(run, users, vocab);
    REQUIRE(r.log.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(r.log[i].step == i);
        // the applied lr is the schedule after the step counter advances, so
        // warmup never multiplies the first update by zero
        CHECK(r.log[i].lr == lr_at(run.sched, i + 1));
        CHECK(r.log[i].total > 0.0);
    }
    auto csv = loss_log_csv(r.log);
    CHECK(csv.rfind("step,lr,total_loss", 0) == 0);
    // header + 3 rows
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("eval_pretext is deterministic and bounded") {
    auto users = tiny_world(12, 13);
    auto vocab = build_vocabs(users, 8, 13);
    auto run = tiny_run();
    auto r = train_pretext(run, users, vocab);
    auto e1 = eval_pretext(r.params, users, 99);
    auto e2 = eval_pretext(r.params, users, 99);
    CHECK(e1.loss == e2.loss);
    CHECK(e1.loss > 0.0);
    for (int t = 0; t < kNumTasks; ++t) {
        CHECK(e1.task_accuracy[t] >= 0.0);
        CHECK(e1.task_accuracy[t] <= 1.0);
        CHECK(e1.chosen_counts[t] > 0);
    }
    auto e3 = eval_pretext(r.params, users, 100);
    CHECK(e3.loss != e1.loss);
}

TEST_CASE("MP embedding equals the mean of final hiddens over real positions") {
    auto users = tiny_world(6, 17);
    auto vocab = build_vocabs(users, 8, 17);
    auto run = tiny_run(2);
    auto r = train_pretext(run, users, vocab);
    const auto& h = users[0];
    auto emb = extract_user_embedding(r.params, h, Variant::MP);
    CHECK(emb.user_id == h.user_id);
    REQUIRE(static_cast<int>(emb.vec.size()) == run.enc.hidden);

    // oracle: run the encoder directly on the unmasked padded row
    auto tokens = encode_events(h.events, r.params.vocab);
    auto batch = pad_and_batch({unmasked_row(h.user_id, tokens)}, run.enc.max_seq_len, false);
    ag::Graph g;
    auto b = bind_params(g, r.params.ps);
    auto hid = encode_row_hidden(g, b, r.params.cfg, r.params.vocab, batch.rows[0]);
    int real = batch.rows[0].real_count();
    for (int j = 0; j < run.enc.hidden; ++j) {
        double s = 0;
        for (int i = 0; i < real; ++i) s += hid->val.at(i, j);
        CHECK(emb.vec[j] == doctest::Approx(s / real).epsilon(1e-5));
    }
}

TEST_CASE("CLS variant embeds the class-token hidden state") {
    auto users = tiny_world(6, 19);
    auto vocab = build_vocabs(users, 8, 19);
    auto run = tiny_run(2);
    run.variant = Variant::CLS;
    run.enc.cls_variant = true;
    auto r = train_pretext(run, users, vocab);
    auto emb = extract_user_embedding(r.params, users[1], Variant::CLS);
    REQUIRE(static_cast<int>(emb.vec.size()) == run.enc.hidden);
    CHECK(emb.variant == Variant::CLS);

    auto tokens = encode_events(users[1].events, r.params.vocab);
    auto batch = pad_and_batch({unmasked_row(users[1].user_id, tokens)}, run.enc.max_seq_len,
                               true);
    ag::Graph g;
    auto b = bind_params(g, r.params.ps);
    auto hid = encode_row_hidden(g, b, r.params.cfg, r.params.vocab, batch.rows[0]);
    for (int j = 0; j < run.enc.hidden; ++j)
        CHECK(emb.vec[j] == doctest::Approx(hid->val.at(0, j)).epsilon(1e-5));
}

TEST_CASE("embedding store round trip and point lookup") {
    TempDir tmp;
    std::vector<UserEmbedding> rows;
    Rng r(21);
    for (int u = 0; u < 40; ++u) {
        UserEmbedding e;
        e.user_id = "user-" + std::to_string(u * 7);
        e.variant = Variant::MP;
        e.checkpoint_step = 200;
        for (int j = 0; j < 16; ++j) e.vec.push_back(static_cast<float>(r.gauss()));
        rows.push_back(std::move(e));
    }
    auto path = tmp.file("emb.o4al");
    write_embedding_store(path, rows);
    auto back = read_embedding_store(path);
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].user_id == rows[i].user_id);
        CHECK(back[i].vec == rows[i].vec);
        CHECK(back[i].variant == Variant::MP);
        CHECK(back[i].checkpoint_step == 200);
    }
    auto hit = lookup_embedding(path, "user-91");
    REQUIRE(hit.has_value());
    CHECK(*hit == rows[13].vec);
    CHECK(!lookup_embedding(path, "nobody").has_value());
    CHECK_THROWS(read_embedding_store(tmp.file("missing.o4al")));
}
