#include "o4a/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "o4a/corpus.hpp"
#include "o4a/downstream.hpp"
#include "o4a/metrics.hpp"
#include "o4a/model.hpp"
#include "o4a/pretrain.hpp"

namespace fs = std::filesystem;

namespace o4a {

namespace {

WorldConfig world_of(const Config& cfg) {
    WorldConfig wc;
    wc.n_users = static_cast<int>(cfg.i64("world.users"));
    wc.n_archetypes = static_cast<int>(cfg.i64("world.archetypes"));
    wc.window_months = static_cast<int>(cfg.i64("world.window_months"));
    wc.events_log_mean = cfg.dbl("world.events_log_mean");
    wc.events_log_std = cfg.dbl("world.events_log_std");
    wc.max_events = static_cast<int>(cfg.i64("world.max_events"));
    wc.label_noise = cfg.dbl("world.label_noise");
    wc.repeat_prob = cfg.dbl("world.repeat_prob");
    wc.keys_per_leaf = static_cast<int>(cfg.i64("world.keys_per_leaf"));
    wc.rec_items_per_task = static_cast<int>(cfg.i64("world.rec_items"));
    wc.seed = static_cast<uint64_t>(cfg.i64("seed"));
    return wc;
}

EncoderConfig enc_of(const Config& cfg, const std::string& prefix) {
    EncoderConfig e;
    e.hidden = static_cast<int>(cfg.i64(prefix + "hidden"));
    e.layers = static_cast<int>(cfg.i64(prefix + "layers"));
    e.heads = static_cast<int>(cfg.i64(prefix + "heads"));
    e.max_seq_len = static_cast<int>(cfg.i64(prefix + "seq"));
    e.dropout = cfg.dbl(prefix + "dropout");
    e.share_layers = cfg.flag(prefix + "share_layers");
    e.seed = static_cast<uint64_t>(cfg.i64("seed"));
    return e;
}

Variant variant_of(const std::string& s) {
    if (s == "MP") return Variant::MP;
    if (s == "CLS") return Variant::CLS;
    throw std::runtime_error("unknown pre-training variant: " + s + " (expected MP or CLS)");
}

std::string make_run_dir(const std::string& base, const Config& cfg) {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
#ifdef _WIN32
    gmtime_s(&tm, &now);
#else
    gmtime_r(&now, &tm);
#endif
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
    char digest[24];
    std::snprintf(digest, sizeof(digest), "%08llx",
                  static_cast<unsigned long long>(cfg.digest() & 0xffffffffull));
    fs::path dir = fs::path(base) / (std::string(stamp) + "-" + digest);
    fs::create_directories(dir);
    std::ofstream(dir / "config.txt") << cfg.resolved();
    return dir.string();
}

std::vector<UserHistory> load_corpus(const std::string& path, bool filter, const Config& cfg) {
    auto hs = ingest_events(path);
    for (auto& h : hs) h = canonicalize(h);
    if (filter) hs = filter_users(hs, static_cast<int>(cfg.i64("world.window_months")));
    return split_users(std::move(hs), cfg.dbl("split.train"), cfg.dbl("split.val"),
                       cfg.dbl("split.test"), static_cast<uint64_t>(cfg.i64("seed")));
}

AugmentPolicy augment_of(const Config& cfg) {
    AugmentPolicy p;
    p.p_select = cfg.dbl("augment.p_select");
    p.p_crop = cfg.dbl("augment.p_crop");
    p.shuffle_window_frac = cfg.dbl("augment.window_frac");
    p.crop_keep_min_frac = cfg.dbl("augment.keep_min_frac");
    p.seed = static_cast<uint64_t>(cfg.i64("seed"));
    return p;
}

MaskingParams masking_of(const Config& cfg) {
    MaskingParams m;
    m.p_choose = cfg.dbl("mask.p_choose");
    m.p_mask = cfg.dbl("mask.p_mask");
    m.p_random = cfg.dbl("mask.p_random");
    return m;
}

TrainPolicy policy_of(const Config& cfg) {
    TrainPolicy p;
    p.batch_size = static_cast<int>(cfg.i64("down.batch"));
    p.lr_sweep = cfg.dbl_list("down.lr_sweep");
    p.max_epochs = static_cast<int>(cfg.i64("down.max_epochs"));
    p.patience = static_cast<int>(cfg.i64("down.patience"));
    p.seed = static_cast<uint64_t>(cfg.i64("seed"));
    return p;
}

ModelKind kind_of(const std::string& name) {
    if (name == "U-MLP") return ModelKind::UMlp;
    if (name == "P-Trans") return ModelKind::PTrans;
    if (name == "UP-Trans") return ModelKind::UPTrans;
    if (name == "T-Trans") return ModelKind::TTrans;
    if (name == "FT-Encoder") return ModelKind::FtEncoder;
    throw std::runtime_error("unknown downstream model: " + name);
}

// Deterministic per-task user cap so every model sees the same cohort.
TaskBundle cap_task_users(const TaskBundle& bundle, const std::string& task_id, int cap,
                          uint64_t seed) {
    TaskBundle out;
    auto recs = bundle.records_of(task_id);
    if (cap <= 0) {
        out.records = std::move(recs);
        return out;
    }
    std::set<std::string> users;
    for (const auto& r : recs) users.insert(r.user_id);
    std::vector<std::string> ids(users.begin(), users.end());
    auto mix = [&](const std::string& id) {
        uint64_t s = fnv1a(task_id + "/" + id) ^ seed;
        return splitmix64(s);
    };
    std::sort(ids.begin(), ids.end(),
              [&](const std::string& a, const std::string& b) { return mix(a) < mix(b); });
    if (static_cast<int>(ids.size()) > cap) ids.resize(cap);
    std::set<std::string> keep(ids.begin(), ids.end());
    for (auto& r : recs)
        if (keep.count(r.user_id)) out.records.push_back(std::move(r));
    return out;
}

int cmd_synth(const Config& cfg, const std::string& run_dir, std::string out_events,
              std::string out_tasks) {
    if (out_events.empty()) out_events = (fs::path(run_dir) / "events.jsonl").string();
    if (out_tasks.empty()) out_tasks = (fs::path(run_dir) / "tasks.jsonl").string();
    auto world = generate_synthetic_world(world_of(cfg));
    write_events(out_events, world.users);
    write_tasks(out_tasks, world.tasks);
    std::cout << "synth: " << world.users.size() << " users -> " << out_events << ", "
              << world.tasks.records.size() << " task records -> " << out_tasks << "\n";
    return 0;
}

int cmd_pretrain(const Config& cfg, const std::string& run_dir, const std::string& events,
                 std::string out_ckpt) {
    if (events.empty())
        throw std::runtime_error("pretrain: missing --events (synthetic world event file)");
    if (out_ckpt.empty()) out_ckpt = (fs::path(run_dir) / "checkpoint.o4ac").string();
    auto hs = load_corpus(events, true, cfg);
    std::vector<UserHistory> train_users;
    for (auto& h : hs)
        if (h.split == Split::train) train_users.push_back(h);
    int cap = static_cast<int>(cfg.i64("pretrain.users"));
    if (cap > 0 && static_cast<int>(train_users.size()) > cap) train_users.resize(cap);
    if (train_users.empty()) throw std::runtime_error("pretrain: no training users after filtering");
    auto vocab = build_vocabs(hs, static_cast<int>(cfg.i64("vocab.d_text")),
                              static_cast<uint64_t>(cfg.i64("seed")),
                              cfg.dbl("vocab.topic_weight"));

    PretrainRun run;
    run.variant = variant_of(cfg.str("pretrain.variant"));
    run.augment = cfg.flag("pretrain.augment");
    run.policy = augment_of(cfg);
    run.enc = enc_of(cfg, "enc.");
    run.enc.cls_variant = run.variant == Variant::CLS;
    run.masking = masking_of(cfg);
    run.batch_size = static_cast<int>(cfg.i64("pretrain.batch"));
    run.steps = cfg.i64("pretrain.steps");
    run.seed = static_cast<uint64_t>(cfg.i64("seed"));
    run.checkpoint_every = cfg.i64("pretrain.checkpoint_every");
    run.checkpoint_dir = run.checkpoint_every > 0 ? run_dir : "";
    run.sched.kind = ScheduleConfig::Kind::warmup_cosine;
    run.sched.base_lr = cfg.dbl("pretrain.lr");
    run.sched.warmup_steps = cfg.i64("pretrain.warmup");
    run.sched.total_steps = run.steps;
    run.sched.weight_decay = cfg.dbl("pretrain.wd");

    auto result = train_pretext(run, train_users, vocab);
    save_checkpoint(out_ckpt, result.params);
    std::ofstream(fs::path(run_dir) / "loss.csv") << loss_log_csv(result.log);
    std::cout << "pretrain: " << train_users.size() << " users, " << run.steps
              << " steps, final loss " << result.log.back().total << " -> " << out_ckpt << "\n";
    return 0;
}

int cmd_extract(const Config& cfg, const std::string& run_dir, const std::string& ckpt,
                const std::string& events, std::string out_store) {
    if (ckpt.empty()) throw std::runtime_error("extract: missing --checkpoint");
    if (events.empty()) throw std::runtime_error("extract: missing --events");
    if (out_store.empty()) out_store = (fs::path(run_dir) / "embeddings.o4al").string();
    auto params = load_checkpoint(ckpt);
    Variant v = params.cfg.cls_variant ? Variant::CLS : Variant::MP;
    auto hs = ingest_events(events);
    for (auto& h : hs) h = canonicalize(h);
    auto embs = extract_embeddings(params, hs, v);
    write_embedding_store(out_store, embs);
    std::cout << "extract: " << embs.size() << " " << variant_name(v) << " embeddings -> "
              << out_store << "\n";
    (void)cfg;
    return 0;
}

int cmd_eval(const Config& cfg, const std::string& run_dir, const std::string& events,
             const std::string& tasks, const std::string& store, const std::string& ckpt,
             const std::vector<std::string>& model_names, const std::string& task_filter) {
    if (events.empty()) throw std::runtime_error("eval: missing --events (purchase-log file)");
    if (tasks.empty()) throw std::runtime_error("eval: missing --tasks (task bundle file)");

    std::vector<ModelKind> kinds;
    for (const auto& n : model_names) kinds.push_back(kind_of(n));
    bool need_emb = false, need_ckpt = false;
    for (auto k : kinds) {
        if (k == ModelKind::UMlp || k == ModelKind::UPTrans) need_emb = true;
        if (k == ModelKind::FtEncoder) need_ckpt = true;
    }
    if (need_emb && store.empty())
        throw std::runtime_error(
            "eval: U-MLP/UP-Trans require --embeddings (pre-trained embedding store)");
    if (need_ckpt && ckpt.empty())
        throw std::runtime_error("eval: FT-Encoder requires --checkpoint");

    auto hs = ingest_events(events);
    for (auto& h : hs) h = canonicalize(h);
    TaskBundle bundle = read_tasks(tasks);

    EmbeddingMap emb;
    std::string emb_variant = "-";
    if (!store.empty()) {
        for (auto& e : read_embedding_store(store)) {
            emb_variant = variant_name(e.variant);
            emb.emplace(std::move(e.user_id), std::move(e.vec));
        }
    }
    EncoderParams checkpoint;
    if (!ckpt.empty()) checkpoint = load_checkpoint(ckpt);

    DownstreamInputs inputs;
    inputs.purchase = &hs;
    if (!emb.empty()) inputs.embeddings = &emb;
    if (!ckpt.empty()) inputs.checkpoint = &checkpoint;
    inputs.vocab = !ckpt.empty()
                       ? checkpoint.vocab
                       : build_vocabs(hs, static_cast<int>(cfg.i64("vocab.d_text")),
                                      static_cast<uint64_t>(cfg.i64("seed")),
                                      cfg.dbl("vocab.topic_weight"));

    TrainPolicy policy = policy_of(cfg);
    int repeats = static_cast<int>(cfg.i64("down.repeats"));
    int cap = static_cast<int>(cfg.i64("down.task_users"));
    uint64_t seed = static_cast<uint64_t>(cfg.i64("seed"));

    std::vector<RunRecord> records;
    for (const auto& task_id : bundle.task_ids()) {
        if (!task_filter.empty() && task_id != task_filter) continue;
        TaskBundle capped = cap_task_users(bundle, task_id, cap, seed);
        TaskSpec spec;
        spec.task_id = task_id;
        spec.kind = capped.records.front().item_text_key.empty() ? TaskKind::classification
                                                                 : TaskKind::recommendation;
        spec.scratch_recent_months =
            static_cast<int>(cfg.i64("down.scratch_recent_months"));
        if (spec.kind == TaskKind::classification) {
            // small task populations need bigger val/test shares for a stable
            // early-stopping signal and test readout
            spec.train_ratio = 0.5;
            spec.val_ratio = 0.2;
            spec.test_ratio = 0.3;
        }
        for (size_t mi = 0; mi < kinds.size(); ++mi) {
            DownstreamModelSpec ms;
            ms.kind = kinds[mi];
            ms.enc = enc_of(cfg, "down.enc.");
            bool uses_u = kinds[mi] == ModelKind::UMlp || kinds[mi] == ModelKind::UPTrans ||
                          kinds[mi] == ModelKind::FtEncoder;
            ms.variant = uses_u ? emb_variant : "-";
            if (kinds[mi] == ModelKind::FtEncoder) ms.variant =
                checkpoint.cfg.cls_variant ? "CLS" : "MP";
            for (int r = 0; r < repeats; ++r) {
                auto res = train_downstream(ms, spec, policy, capped, inputs, r);
                records.insert(records.end(), res.records.begin(), res.records.end());
                std::cout << "eval: " << task_id << " " << model_names[mi] << " repeat " << r
                          << " lr " << res.best_lr << " test " << res.test_primary << "\n";
            }
        }
    }
    std::ofstream(fs::path(run_dir) / "records.csv") << run_records_csv(records);
    std::ofstream(fs::path(run_dir) / "aggregate.csv")
        << aggregate_csv(aggregate_runs(records));
    std::cout << "eval: wrote " << records.size() << " records to " << run_dir << "\n";
    return 0;
}

int cmd_report(const std::string& run_dir, const std::vector<std::string>& sources,
               const std::string& dump_store) {
    if (sources.empty() && dump_store.empty())
        throw std::runtime_error("report: no run directories or record files given");
    std::vector<RunRecord> records;
    for (const auto& src : sources) {
        fs::path p(src);
        if (fs::is_directory(p)) p /= "records.csv";
        std::ifstream is(p);
        if (!is) throw std::runtime_error("report: cannot open " + p.string());
        std::stringstream buf;
        buf << is.rdbuf();
        auto part = parse_run_records_csv(buf.str());
        records.insert(records.end(), part.begin(), part.end());
    }
    if (!records.empty()) {
        std::ofstream(fs::path(run_dir) / "records.csv") << run_records_csv(records);
        std::ofstream(fs::path(run_dir) / "report.csv")
            << aggregate_csv(aggregate_runs(records));
        std::cout << "report: merged " << records.size() << " records\n";
    }
    if (!dump_store.empty()) {
        auto embs = read_embedding_store(dump_store);
        std::ofstream os(fs::path(run_dir) / "embeddings.tsv");
        for (const auto& e : embs) {
            os << e.user_id << "\t" << variant_name(e.variant) << "\t";
            for (size_t i = 0; i < e.vec.size(); ++i) {
                if (i) os << ",";
                os << e.vec[i];
            }
            os << "\n";
        }
        std::cout << "report: dumped " << embs.size() << " embeddings\n";
    }
    return 0;
}

} // namespace

// --- time-window ablation ------------------------------------------------------

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::runtime_error("spearman_rho: need two same-length series");
    auto ranks = [](const std::vector<double>& v) {
        size_t n = v.size();
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    auto rx = ranks(xs), ry = ranks(ys);
    double mx = 0, my = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= rx.size();
    my /= ry.size();
    double num = 0, dx = 0, dy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0 || dy == 0) return 0.0;
    return num / std::sqrt(dx * dy);
}

AblationResult ablate_time_window(const Config& cfg) {
    AblationResult out;
    out.windows = cfg.int_list("ablate.windows");
    std::sort(out.windows.begin(), out.windows.end());
    int nseeds = static_cast<int>(cfg.i64("ablate.seeds"));
    uint64_t master = static_cast<uint64_t>(cfg.i64("seed"));

    for (int s = 0; s < nseeds; ++s) {
        uint64_t wseed = derive_seed(master, "ablate", s);
        WorldConfig wc = world_of(cfg);
        wc.n_users = static_cast<int>(cfg.i64("ablate.users"));
        // sparser histories than the main corpus: with ~20 events per user
        // over 24 months, every widening of the window still adds signal
        wc.events_log_mean = std::min(wc.events_log_mean, 3.0);
        wc.seed = wseed;
        auto world = generate_synthetic_world(wc);
        for (auto& h : world.users) h = canonicalize(h);

        std::vector<double> raw_row;
        int current_window = -1;
        try {
            for (int w : out.windows) {
                current_window = w;
                // slice; users with no events in the window stay in the task
                // population with a zero embedding (cold input)
                std::vector<UserHistory> sliced;
                for (const auto& h : world.users) {
                    auto sh = time_slice(h, wc.cutoff_ts, w);
                    if (sh) sliced.push_back(std::move(*sh));
                }
                if (sliced.empty()) throw std::runtime_error("no users survive the slice");
                sliced = split_users(std::move(sliced), 0.8, 0.1, 0.1, wseed);
                std::vector<UserHistory> train_users;
                for (const auto& h : sliced)
                    if (h.split == Split::train) train_users.push_back(h);
                auto vocab = build_vocabs(sliced, static_cast<int>(cfg.i64("vocab.d_text")),
                                          wseed, cfg.dbl("vocab.topic_weight"));

                PretrainRun run;
                run.variant = Variant::MP;
                run.enc.hidden = 32;
                run.enc.layers = 1;
                run.enc.heads = 2;
                run.enc.max_seq_len = 32;
                run.enc.dropout = 0.1;
                run.enc.seed = wseed;
                run.masking = masking_of(cfg);
                run.batch_size = 16;
                run.steps = cfg.i64("ablate.steps");
                run.seed = wseed;
                run.sched.base_lr = 1e-3;
                run.sched.warmup_steps = std::max<int64_t>(1, run.steps / 10);
                run.sched.total_steps = run.steps;
                run.sched.weight_decay = 1e-4;
                auto result = train_pretext(run, train_users, vocab);

                EmbeddingMap emb;
                for (auto& e : extract_embeddings(result.params, sliced, Variant::MP))
                    emb.emplace(std::move(e.user_id), std::move(e.vec));
                std::vector<float> zero(static_cast<size_t>(run.enc.hidden), 0.0f);
                for (const auto& h : world.users)
                    if (!emb.count(h.user_id)) emb.emplace(h.user_id, zero);

                DownstreamInputs inputs;
                inputs.purchase = &world.users;
                inputs.embeddings = &emb;
                inputs.vocab = vocab;
                TaskSpec spec;
                spec.task_id = "attr";
                spec.kind = TaskKind::classification;
                // a large test share keeps the per-window readout comparable
                // across windows (same users, so test noise cancels in ranks)
                spec.train_ratio = 0.6;
                spec.val_ratio = 0.1;
                spec.test_ratio = 0.3;
                TrainPolicy policy;
                policy.batch_size = 64;
                policy.lr_sweep = {3e-4, 1e-3};
                policy.max_epochs = static_cast<int>(cfg.i64("ablate.epochs"));
                policy.patience = 3;
                policy.seed = wseed;
                DownstreamModelSpec ms;
                ms.kind = ModelKind::UMlp;
                ms.variant = "MP";
                // average probe repeats to damp training stochasticity
                double sum = 0.0;
                const int kProbeReps = 3;
                for (int rep = 0; rep < kProbeReps; ++rep)
                    sum += train_downstream(ms, spec, policy, world.tasks, inputs, rep)
                               .test_primary;
                raw_row.push_back(sum / kProbeReps);
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("ablation failed at window " +
                                     std::to_string(current_window) + " months: " + e.what());
        }
        double base = raw_row.back();
        std::vector<double> rel_row;
        for (double v : raw_row) rel_row.push_back(base != 0.0 ? v / base : 0.0);
        std::vector<double> wd(out.windows.begin(), out.windows.end());
        out.spearman_per_seed.push_back(spearman_rho(wd, rel_row));
        out.raw.push_back(std::move(raw_row));
        out.rel.push_back(std::move(rel_row));
    }
    // the headline statistic is the rank correlation of the seed-averaged
    // relative curve; per-seed correlations are kept as diagnostics
    std::vector<double> mean_rel(out.windows.size(), 0.0);
    for (const auto& row : out.rel)
        for (size_t w = 0; w < row.size(); ++w) mean_rel[w] += row[w];
    for (auto& v : mean_rel) v /= static_cast<double>(out.rel.size());
    std::vector<double> wd(out.windows.begin(), out.windows.end());
    out.mean_rel = mean_rel;
    out.mean_spearman = spearman_rho(wd, mean_rel);
    return out;
}

std::string ablation_csv(const AblationResult& r) {
    std::ostringstream os;
    os << "seed_index,window_months,auroc,relative_auroc,spearman\n";
    for (size_t s = 0; s < r.raw.size(); ++s)
        for (size_t w = 0; w < r.windows.size(); ++w)
            os << s << "," << r.windows[w] << "," << r.raw[s][w] << "," << r.rel[s][w] << ","
               << r.spearman_per_seed[s] << "\n";
    for (size_t w = 0; w < r.windows.size(); ++w)
        os << "mean," << r.windows[w] << ",," << r.mean_rel[w] << "," << r.mean_spearman << "\n";
    return os.str();
}

// --- cost report -----------------------------------------------------------------

CostReport cost_report(const Config& cfg, const std::string& work_dir) {
    fs::create_directories(work_dir);
    CostReport report;
    report.batch = static_cast<int>(cfg.i64("cost.batch"));
    uint64_t seed = static_cast<uint64_t>(cfg.i64("seed"));

    WorldConfig wc = world_of(cfg);
    wc.n_users = static_cast<int>(cfg.i64("cost.users"));
    auto world = generate_synthetic_world(wc);
    for (auto& h : world.users) h = canonicalize(h);
    std::string events_path = (fs::path(work_dir) / "cost_events.jsonl").string();
    write_events(events_path, world.users);
    uint64_t event_bytes = fs::file_size(events_path);

    auto vocab = build_vocabs(world.users, static_cast<int>(cfg.i64("vocab.d_text")), seed,
                              cfg.dbl("vocab.topic_weight"));
    EncoderConfig enc_cfg = enc_of(cfg, "enc.");
    EncoderParams enc = init_params(enc_cfg, vocab, seed);

    auto embs = extract_embeddings(enc, world.users, Variant::MP);
    std::string store_path = (fs::path(work_dir) / "cost_embeddings.o4al").string();
    write_embedding_store(store_path, embs);
    uint64_t store_bytes = fs::file_size(store_path);
    EmbeddingMap emb;
    for (auto& e : embs) emb.emplace(std::move(e.user_id), std::move(e.vec));

    DownstreamModelSpec umlp_spec;
    umlp_spec.kind = ModelKind::UMlp;
    DownstreamModel umlp =
        make_model(umlp_spec, TaskKind::classification, vocab, enc_cfg.hidden, nullptr, seed);
    DownstreamModelSpec pt_spec;
    pt_spec.kind = ModelKind::PTrans;
    pt_spec.enc = enc_of(cfg, "down.enc.");
    DownstreamModel ptrans =
        make_model(pt_spec, TaskKind::classification, vocab, 0, nullptr, seed);

    DownstreamInputs inputs;
    inputs.purchase = &world.users;
    inputs.embeddings = &emb;
    inputs.vocab = vocab;

    std::vector<std::string> ids;
    for (const auto& h : world.users) ids.push_back(h.user_id);

    auto cycle_batch = [&](int batch, int index) {
        std::vector<std::string> out;
        out.reserve(batch);
        for (int i = 0; i < batch; ++i)
            out.push_back(ids[(static_cast<size_t>(index) * batch + i) % ids.size()]);
        return out;
    };
    auto timed = [&](int batches, auto&& fn) {
        auto t0 = std::chrono::steady_clock::now();
        for (int b = 0; b < batches; ++b) fn(cycle_batch(report.batch, b));
        auto t1 = std::chrono::steady_clock::now();
        double secs = std::chrono::duration<double>(t1 - t0).count();
        return static_cast<double>(batches) * report.batch / std::max(secs, 1e-9);
    };

    int fast_batches = static_cast<int>(cfg.i64("cost.batches"));
    int enc_batches = static_cast<int>(cfg.i64("cost.enc_batches"));

    std::map<std::string, const UserHistory*> by_user;
    for (const auto& h : world.users) by_user.emplace(h.user_id, &h);

    double umlp_rate = timed(fast_batches, [&](const std::vector<std::string>& batch) {
        predict_classification(umlp, batch, inputs);
    });
    double enc_rate = timed(enc_batches, [&](const std::vector<std::string>& batch) {
        for (const auto& uid : batch) extract_user_embedding(enc, *by_user.at(uid), Variant::MP);
    });
    double ptrans_rate = timed(enc_batches, [&](const std::vector<std::string>& batch) {
        predict_classification(ptrans, batch, inputs);
    });

    report.rows.push_back({"U-MLP", "embedding store", umlp.trainable_param_count(), store_bytes,
                           umlp_rate, 1.0});
    report.rows.push_back({"P-Trans", "purchase logs", ptrans.trainable_param_count(),
                           event_bytes, ptrans_rate, 1.0});
    report.rows.push_back({"pretrained-encoder", "purchase logs",
                           param_count_formula(enc_cfg, vocab), event_bytes, enc_rate, 1.0});
    double slowest = 1e300;
    for (const auto& r : report.rows) slowest = std::min(slowest, r.items_per_sec);
    for (auto& r : report.rows) r.speedup = r.items_per_sec / slowest;
    report.note = "batch=" + std::to_string(report.batch) +
                  "; single-thread CPU at desk scale; the reference full-scale 2458x "
                  "speedup needs the full corpus and model and is out of reach here";
    return report;
}

std::string cost_csv(const CostReport& r) {
    std::ostringstream os;
    os << "model,input_kind,params,input_bytes,items_per_sec,speedup,note\n";
    for (const auto& row : r.rows)
        os << row.model << "," << row.input_kind << "," << row.params << "," << row.input_bytes
           << "," << row.items_per_sec << "," << row.speedup << ",\"" << r.note << "\"\n";
    return os.str();
}

// --- dispatch ---------------------------------------------------------------------

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"one4all: user-representation pre-training workbench"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string profile = "desk", config_path, out_base = "runs", seed_str;
    std::vector<std::string> sets;
    app.add_option("--profile", profile, "configuration profile")
        ->check(CLI::IsMember({"desk", "full"}));
    app.add_option("--config", config_path, "key = value config file");
    app.add_option("--set", sets, "override: --set key=value");
    app.add_option("--seed", seed_str, "override the master seed");
    app.add_option("--out", out_base, "base directory for run outputs");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic world");
    std::string out_events, out_tasks, users_str;
    synth->add_option("--out-events", out_events);
    synth->add_option("--out-tasks", out_tasks);
    synth->add_option("--users", users_str, "override world.users");

    // pretrain
    auto* pretrain = app.add_subcommand("pretrain", "run masked-prediction pre-training");
    std::string events_path, out_ckpt;
    pretrain->add_option("--events", events_path);
    pretrain->add_option("--out-checkpoint", out_ckpt);

    // extract
    auto* extract = app.add_subcommand("extract", "extract user embeddings");
    std::string x_ckpt, x_events, x_out;
    extract->add_option("--checkpoint", x_ckpt);
    extract->add_option("--events", x_events);
    extract->add_option("--out-store", x_out);

    // eval
    auto* eval = app.add_subcommand("eval", "train and evaluate downstream models");
    std::string e_events, e_tasks, e_store, e_ckpt, e_task;
    std::vector<std::string> e_models = {"U-MLP"};
    eval->add_option("--events", e_events);
    eval->add_option("--tasks", e_tasks);
    eval->add_option("--embeddings", e_store);
    eval->add_option("--checkpoint", e_ckpt);
    eval->add_option("--models", e_models)->delimiter(',');
    eval->add_option("--task", e_task, "restrict to one task id");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "pre-training time-window ablation");

    // cost
    auto* cost = app.add_subcommand("cost", "inference cost report");

    // report
    auto* report = app.add_subcommand("report", "merge run records, dump embeddings");
    std::vector<std::string> r_sources;
    std::string r_dump;
    report->add_option("--records", r_sources, "run dirs or records.csv files");
    report->add_option("--dump-embeddings", r_dump, "embedding store to dump as TSV");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        Config cfg = Config::profile(profile);
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& s : sets) cfg.set_pair(s);
        if (!seed_str.empty()) cfg.set("seed", seed_str);
        if (!users_str.empty()) cfg.set("world.users", users_str);
        std::string run_dir = make_run_dir(out_base, cfg);
        std::cout << "run dir: " << run_dir << "\n";

        if (synth->parsed()) return cmd_synth(cfg, run_dir, out_events, out_tasks);
        if (pretrain->parsed()) return cmd_pretrain(cfg, run_dir, events_path, out_ckpt);
        if (extract->parsed()) return cmd_extract(cfg, run_dir, x_ckpt, x_events, x_out);
        if (eval->parsed())
            return cmd_eval(cfg, run_dir, e_events, e_tasks, e_store, e_ckpt, e_models, e_task);
        if (ablate->parsed()) {
            auto result = ablate_time_window(cfg);
            std::ofstream(fs::path(run_dir) / "ablation.csv") << ablation_csv(result);
            std::cout << "ablate: mean spearman " << result.mean_spearman << "\n";
            return 0;
        }
        if (cost->parsed()) {
            auto result = cost_report(cfg, run_dir);
            std::ofstream(fs::path(run_dir) / "cost.csv") << cost_csv(result);
            std::cout << cost_csv(result);
            return 0;
        }
        if (report->parsed()) return cmd_report(run_dir, r_sources, r_dump);
        std::cerr << "no subcommand\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_command(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_command(args);
}

} // namespace o4a
