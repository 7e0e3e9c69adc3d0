#include "o4a/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace o4a {

std::string model_kind_name(ModelKind k) {
    switch (k) {
    case ModelKind::UMlp: return "U-MLP";
    case ModelKind::PTrans: return "P-Trans";
    case ModelKind::UPTrans: return "UP-Trans";
    case ModelKind::TTrans: return "T-Trans";
    case ModelKind::FtEncoder: return "FT-Encoder";
    }
    throw std::runtime_error("model_kind_name: bad kind");
}

EncoderConfig desk_downstream_config() {
    EncoderConfig c;
    c.hidden = 32;
    c.layers = 2;
    c.heads = 2;
    c.max_seq_len = 32;
    c.dropout = 0.1;
    c.share_layers = true;
    return c;
}

// Head widths per the feed-forward contract: input -> 512 -> 256 -> 128 -> 64
// -> output, ReLU between layers. Recommendation models use the 64-wide
// layer as the user vector; classification adds a single-logit output layer.
static constexpr int kHeadWidths[4] = {512, 256, 128, 64};
static constexpr int kUserVecWidth = 64;

static void add_head_tensor(ParamSet& ps, const std::string& name, int rows, int cols,
                            bool zero, uint64_t seed) {
    Tensor t(rows, cols);
    if (!zero) {
        Rng rng(derive_seed(seed, "down:" + name));
        // He-style fan-in scaling: the five-layer ReLU stack has no
        // normalization, so a fixed small std starves the deeper layers
        t = Tensor::randn(rows, cols, std::sqrt(2.0 / rows), rng);
    }
    ps.tensors.emplace(name, std::move(t));
}

DownstreamModel make_model(const DownstreamModelSpec& spec, TaskKind task_kind,
                           const VocabProfile& vocab, int emb_width,
                           const EncoderParams* checkpoint, uint64_t seed) {
    DownstreamModel m;
    m.spec = spec;
    m.task_kind = task_kind;
    m.emb_width = emb_width;

    bool needs_emb = spec.kind == ModelKind::UMlp || spec.kind == ModelKind::UPTrans;
    if (needs_emb && emb_width <= 0)
        throw std::runtime_error(model_kind_name(spec.kind) +
                                 " requires a pre-trained embedding store");

    switch (spec.kind) {
    case ModelKind::UMlp:
        m.head_input = emb_width;
        break;
    case ModelKind::PTrans:
    case ModelKind::TTrans:
    case ModelKind::UPTrans:
        m.has_enc = true;
        m.enc = init_params(spec.enc, vocab, derive_seed(seed, "enc"));
        m.head_input = spec.enc.hidden;
        break;
    case ModelKind::FtEncoder:
        if (!checkpoint)
            throw std::runtime_error("fine-tuning requires a pre-trained checkpoint");
        m.has_enc = true;
        m.enc = *checkpoint;
        // fresh optimizer for the downstream phase
        m.enc.ps.step = 0;
        for (auto& [name, t] : m.enc.ps.opt_m) t.fill(0.0);
        for (auto& [name, t] : m.enc.ps.opt_v) t.fill(0.0);
        m.head_input = m.enc.cfg.hidden;
        break;
    }

    int in = m.head_input;
    for (int l = 0; l < 4; ++l) {
        std::string ix = std::to_string(l + 1);
        add_head_tensor(m.head, "mlp.w" + ix, in, kHeadWidths[l], false, seed);
        add_head_tensor(m.head, "mlp.b" + ix, 1, kHeadWidths[l], true, seed);
        in = kHeadWidths[l];
    }
    if (task_kind == TaskKind::classification) {
        add_head_tensor(m.head, "mlp.w5", kUserVecWidth, 1, false, seed);
        add_head_tensor(m.head, "mlp.b5", 1, 1, true, seed);
    } else {
        add_head_tensor(m.head, "item.w", vocab.d_text, kUserVecWidth, false, seed);
        add_head_tensor(m.head, "item.b", 1, kUserVecWidth, true, seed);
    }
    if (spec.kind == ModelKind::UPTrans) {
        add_head_tensor(m.head, "up.w", emb_width, spec.enc.hidden, false, seed);
        add_head_tensor(m.head, "up.b", 1, spec.enc.hidden, true, seed);
    }
    for (const auto& [name, t] : m.head.tensors) {
        m.head.opt_m.emplace(name, Tensor(t.rows, t.cols));
        m.head.opt_v.emplace(name, Tensor(t.rows, t.cols));
    }
    return m;
}

size_t DownstreamModel::trainable_param_count() const {
    size_t n = head.param_count();
    if (has_enc && !(spec.kind == ModelKind::FtEncoder && spec.freeze_encoder))
        n += enc.ps.param_count();
    return n;
}

double score_pair(const std::vector<double>& user_vec, const std::vector<double>& item_vec) {
    if (user_vec.size() != item_vec.size())
        throw std::runtime_error("score_pair: tower width mismatch");
    double dot = 0.0;
    for (size_t i = 0; i < user_vec.size(); ++i) dot += user_vec[i] * item_vec[i];
    return 1.0 / (1.0 + std::exp(-dot));
}

std::vector<std::pair<std::string, std::string>> sample_negatives(
    const std::vector<std::pair<std::string, std::string>>& positives,
    const std::vector<std::string>& users, const std::vector<std::string>& items, int ratio,
    Rng& rng) {
    if (users.empty() || items.empty())
        throw std::runtime_error("sample_negatives: empty pool");
    std::set<std::string> pos;
    for (const auto& [u, i] : positives) pos.insert(u + '\x1f' + i);
    size_t need = positives.size() * static_cast<size_t>(ratio);
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(need);
    size_t attempts = 0, cap = 100 * need + 1000;
    while (out.size() < need) {
        if (++attempts > cap) throw std::runtime_error("sample_negatives: pool exhausted");
        const std::string& u = users[rng.below(users.size())];
        const std::string& i = items[rng.below(items.size())];
        if (pos.count(u + '\x1f' + i)) continue;
        out.emplace_back(u, i);
    }
    return out;
}

// --- internal data plumbing --------------------------------------------------

namespace {

struct UserFeed {
    std::vector<double> emb; // U component (U-MLP input / UP-Trans position 0)
    MaskedRow row;           // tokens for transformer-backed kinds
    bool has_row = false;
};

struct Example {
    const UserFeed* feed;
    const std::vector<double>* item_vec; // null for classification
    double label;
};

bool uses_purchase_rows(const DownstreamModelSpec& spec, TaskKind task_kind) {
    switch (spec.kind) {
    case ModelKind::PTrans:
    case ModelKind::UPTrans:
    case ModelKind::FtEncoder: return true;
    case ModelKind::TTrans:
        // classification tasks carry no interaction logs, so the
        // from-scratch transformer falls back to the purchase log
        return task_kind == TaskKind::classification;
    default: return false;
    }
}

bool uses_embeddings(ModelKind k) { return k == ModelKind::UMlp || k == ModelKind::UPTrans; }

MaskedRow single_padded_row(const std::string& user_id, std::vector<EncodedToken> tokens,
                            int cap, bool with_cls) {
    int want = static_cast<int>(tokens.size()) + (with_cls ? 1 : 0);
    int seq = std::min(cap, want);
    auto batch = pad_and_batch({unmasked_row(user_id, std::move(tokens))}, seq, with_cls);
    return std::move(batch.rows[0]);
}

std::vector<int> real_positions(const MaskedRow& row) {
    std::vector<int> idx;
    for (size_t p = 0; p < row.plan.size(); ++p)
        if (row.plan[p] != MaskState::pad && row.plan[p] != MaskState::cls)
            idx.push_back(static_cast<int>(p));
    return idx;
}

// User representations, one row per feed.
ag::Var user_matrix(ag::Graph& g, const DownstreamModel& m, const ParamBinding* eb,
                    const ParamBinding& hb, const std::vector<const UserFeed*>& feeds,
                    const ForwardOptions& opt) {
    if (feeds.empty()) throw std::runtime_error("user_matrix: empty batch");
    auto standardized = [&](const UserFeed* f, int j) {
        double v = f->emb[j];
        if (!m.emb_shift.empty()) v = (v - m.emb_shift[j]) * m.emb_scale[j];
        return v;
    };
    if (m.spec.kind == ModelKind::UMlp) {
        Tensor x(static_cast<int>(feeds.size()), m.emb_width);
        for (size_t i = 0; i < feeds.size(); ++i)
            for (int j = 0; j < m.emb_width; ++j)
                x.at(static_cast<int>(i), j) = standardized(feeds[i], j);
        return g.leaf(std::move(x));
    }
    std::vector<ag::Var> reprs;
    reprs.reserve(feeds.size());
    for (const UserFeed* f : feeds) {
        ag::Var cls_override = nullptr;
        if (m.spec.kind == ModelKind::UPTrans) {
            Tensor u(1, m.emb_width);
            for (int j = 0; j < m.emb_width; ++j) u.at(0, j) = standardized(f, j);
            cls_override =
                ag::add_rowvec(g, ag::matmul(g, g.leaf(std::move(u)), hb.at("up.w")),
                               hb.at("up.b"));
        }
        ag::Var h = encode_row_hidden(g, *eb, m.enc.cfg, m.enc.vocab, f->row, opt, cls_override);
        if (f->row.has_cls)
            reprs.push_back(ag::slice_rows(g, h, 0, 1));
        else
            reprs.push_back(ag::mean_rows(g, h, real_positions(f->row)));
    }
    return reprs.size() == 1 ? reprs[0] : ag::concat_rows(g, reprs);
}

ag::Var head_tower(ag::Graph& g, const ParamBinding& hb, ag::Var x, bool to_logit) {
    auto lin = [&](ag::Var in, const std::string& ix) {
        return ag::add_rowvec(g, ag::matmul(g, in, hb.at("mlp.w" + ix)), hb.at("mlp.b" + ix));
    };
    x = ag::relu(g, lin(x, "1"));
    x = ag::relu(g, lin(x, "2"));
    x = ag::relu(g, lin(x, "3"));
    x = lin(x, "4");
    if (!to_logit) return x; // 64-wide user vector for the two-tower path
    x = ag::relu(g, x);
    return lin(x, "5");
}

ag::Var batch_logits(ag::Graph& g, const DownstreamModel& m, const ParamBinding* eb,
                     const ParamBinding& hb, const std::vector<Example>& batch,
                     const ForwardOptions& opt) {
    std::vector<const UserFeed*> feeds;
    feeds.reserve(batch.size());
    for (const auto& ex : batch) feeds.push_back(ex.feed);
    ag::Var u = user_matrix(g, m, eb, hb, feeds, opt);
    if (m.task_kind == TaskKind::classification) return head_tower(g, hb, u, true);
    ag::Var user_vecs = head_tower(g, hb, u, false);
    Tensor items(static_cast<int>(batch.size()), static_cast<int>(batch[0].item_vec->size()));
    for (size_t i = 0; i < batch.size(); ++i)
        for (size_t j = 0; j < batch[i].item_vec->size(); ++j)
            items.at(static_cast<int>(i), static_cast<int>(j)) = (*batch[i].item_vec)[j];
    ag::Var item_vecs =
        ag::add_rowvec(g, ag::matmul(g, g.leaf(std::move(items)), hb.at("item.w")),
                       hb.at("item.b"));
    return ag::rowwise_dot(g, user_vecs, item_vecs);
}

std::vector<double> batch_scores(const DownstreamModel& m, const std::vector<Example>& batch) {
    ag::Graph g;
    ParamBinding hb = bind_params(g, m.head);
    ParamBinding ebs;
    if (m.has_enc) ebs = bind_params(g, m.enc.ps);
    ForwardOptions opt; // inference: no dropout
    ag::Var logits = batch_logits(g, m, m.has_enc ? &ebs : nullptr, hb, batch, opt);
    std::vector<double> out(batch.size());
    for (size_t i = 0; i < batch.size(); ++i)
        out[i] = 1.0 / (1.0 + std::exp(-logits->val.at(static_cast<int>(i), 0)));
    return out;
}

std::vector<double> scores_of(const DownstreamModel& m, const std::vector<Example>& examples,
                              int chunk = 64) {
    std::vector<double> out;
    out.reserve(examples.size());
    for (size_t start = 0; start < examples.size(); start += chunk) {
        size_t end = std::min(examples.size(), start + chunk);
        std::vector<Example> slice(examples.begin() + start, examples.begin() + end);
        auto s = batch_scores(m, slice);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

// One optimizer step; returns the batch loss (may be non-finite on divergence).
double train_step(DownstreamModel& m, const std::vector<Example>& batch, double lr, Rng& drop) {
    ag::Graph g;
    ParamBinding hb = bind_params(g, m.head);
    ParamBinding ebs;
    bool enc_trainable =
        m.has_enc && !(m.spec.kind == ModelKind::FtEncoder && m.spec.freeze_encoder);
    if (m.has_enc) ebs = bind_params(g, m.enc.ps);
    ForwardOptions opt;
    opt.train = true;
    opt.dropout_rng = &drop;
    ag::Var logits = batch_logits(g, m, m.has_enc ? &ebs : nullptr, hb, batch, opt);
    std::vector<double> labels;
    labels.reserve(batch.size());
    for (const auto& ex : batch) labels.push_back(ex.label);
    ag::Var loss = ag::bce_with_logits(g, logits, std::move(labels));
    double value = loss->val.v[0];
    if (!std::isfinite(value)) return value;
    g.backward(loss);
    adam_step(m.head, collect_grads(hb), lr, 0.0);
    if (enc_trainable) adam_step(m.enc.ps, collect_grads(ebs), lr, 0.0);
    return value;
}

double validation_metric(const DownstreamModel& m, const std::vector<Example>& val) {
    auto scores = scores_of(m, val);
    std::vector<int> labels;
    labels.reserve(val.size());
    bool has_pos = false, has_neg = false;
    for (const auto& ex : val) {
        labels.push_back(ex.label > 0.5 ? 1 : 0);
        (labels.back() ? has_pos : has_neg) = true;
    }
    if (has_pos && has_neg) return auroc(scores, labels);
    // degenerate single-class validation set: score by (1 - BCE)
    double bce = 0.0;
    for (size_t i = 0; i < val.size(); ++i) {
        double p = std::min(std::max(scores[i], 1e-12), 1.0 - 1e-12);
        bce -= val[i].label > 0.5 ? std::log(p) : std::log(1.0 - p);
    }
    return 1.0 - bce / static_cast<double>(val.size());
}

struct LrOutcome {
    DownstreamModel model;
    SweepEntry entry;
};

LrOutcome train_one_lr(const DownstreamModel& init, const TrainPolicy& policy, double lr,
                       const std::vector<Example>& train, const std::vector<Example>& val,
                       uint64_t lr_seed) {
    LrOutcome out{init, {}};
    out.entry.lr = lr;
    DownstreamModel best = init;
    double best_val = -1e300;
    int since_best = 0;
    for (int epoch = 0; epoch < policy.max_epochs; ++epoch) {
        double lr_e = lr * std::pow(policy.decay_rate, epoch);
        std::vector<size_t> order(train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(lr_seed, "order", epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        Rng drop(derive_seed(lr_seed, "dropout", epoch));
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(policy.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(policy.batch_size));
            std::vector<Example> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
            double loss = train_step(out.model, batch, lr_e, drop);
            if (!std::isfinite(loss)) {
                out.entry.diverged = true;
                out.entry.val_metric = -1e300;
                out.entry.epochs = epoch;
                return out;
            }
        }
        out.entry.epochs = epoch + 1;
        double vm = validation_metric(out.model, val);
        if (vm > best_val) {
            best_val = vm;
            best = out.model;
            since_best = 0;
        } else if (++since_best >= policy.patience) {
            break;
        }
    }
    out.model = std::move(best);
    out.entry.val_metric = best_val;
    return out;
}

} // namespace

// --- protocol ----------------------------------------------------------------

DownstreamRunResult train_downstream(const DownstreamModelSpec& spec, const TaskSpec& task,
                                     const TrainPolicy& policy, const TaskBundle& bundle,
                                     const DownstreamInputs& inputs, int repeat) {
    auto recs = bundle.records_of(task.task_id);
    if (recs.empty()) throw std::runtime_error("train_downstream: no records for task " +
                                               task.task_id);
    std::sort(recs.begin(), recs.end(), [](const TaskRecord& a, const TaskRecord& b) {
        return std::tie(a.user_id, a.ts, a.item_text_key) <
               std::tie(b.user_id, b.ts, b.item_text_key);
    });

    uint64_t split_seed = derive_seed(policy.seed, "split:" + task.task_id, repeat);
    uint64_t run_seed = derive_seed(
        policy.seed, model_kind_name(spec.kind) + ":" + task.task_id + ":" + spec.variant,
        repeat);

    // purchase-log lookup
    std::map<std::string, const UserHistory*> by_user;
    if (inputs.purchase)
        for (const auto& h : *inputs.purchase) by_user.emplace(h.user_id, &h);

    // group records per user
    std::map<std::string, std::vector<const TaskRecord*>> per_user;
    for (const auto& r : recs) per_user[r.user_id].push_back(&r);

    auto split_of = [&](const std::string& uid) {
        return split_of_user(uid, task.train_ratio, task.val_ratio, task.test_ratio, split_seed);
    };

    // item catalog + cached item text vectors (recommendation tasks)
    std::vector<std::string> catalog;
    std::map<std::string, std::vector<double>> item_vecs;
    int64_t min_ts = recs.front().ts;
    if (task.kind == TaskKind::recommendation) {
        std::set<std::string> items;
        for (const auto& r : recs) {
            if (r.item_text_key.empty())
                throw std::runtime_error("recommendation record without item key in task " +
                                         task.task_id);
            items.insert(r.item_text_key);
            min_ts = std::min(min_ts, r.ts);
        }
        catalog.assign(items.begin(), items.end());
        for (const auto& k : catalog)
            item_vecs.emplace(k, text_vector_of(k, inputs.vocab.d_text, inputs.vocab.text_seed,
                                                inputs.vocab.topic_weight));
    }

    // backbone vocabulary: purchase tokens use the corpus vocabulary;
    // task-log tokens use a single-category item vocabulary over the task span
    VocabProfile backbone_vocab = inputs.vocab;
    bool t_rec = spec.kind == ModelKind::TTrans && task.kind == TaskKind::recommendation;
    if (t_rec) {
        backbone_vocab.cat[0] = backbone_vocab.cat[1] = backbone_vocab.cat[2] =
            backbone_vocab.cat[3] = 1;
        int ymin = date_fields_of(recs.front().ts).year, ymax = ymin;
        for (const auto& r : recs) {
            int y = date_fields_of(r.ts).year;
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
        backbone_vocab.year_base = ymin;
        backbone_vocab.year_count = ymax - ymin + 1;
    }
    if (spec.kind == ModelKind::FtEncoder && inputs.checkpoint)
        backbone_vocab = inputs.checkpoint->vocab;

    DownstreamModel init = make_model(spec, task.kind, backbone_vocab,
                                      inputs.embeddings && !inputs.embeddings->empty()
                                          ? static_cast<int>(
                                                inputs.embeddings->begin()->second.size())
                                          : 0,
                                      inputs.checkpoint, derive_seed(run_seed, "model"));

    bool want_rows = init.has_enc;
    bool purchase_rows = uses_purchase_rows(spec, task.kind);
    bool with_cls = init.has_enc && (spec.kind != ModelKind::FtEncoder
                                         ? true
                                         : init.enc.cfg.cls_variant);
    int cap = spec.input_cap > 0 ? std::min(spec.input_cap, init.enc.cfg.max_seq_len)
                                 : (init.has_enc ? init.enc.cfg.max_seq_len : 0);

    // held-out evaluation positive per test user (recommendation tasks)
    std::map<std::string, const TaskRecord*> heldout;
    if (task.kind == TaskKind::recommendation)
        for (auto& [uid, rs] : per_user)
            if (split_of(uid) == Split::test) {
                auto it = std::max_element(rs.begin(), rs.end(),
                                           [](const TaskRecord* a, const TaskRecord* b) {
                                               return std::tie(a->ts, a->item_text_key) <
                                                      std::tie(b->ts, b->item_text_key);
                                           });
                heldout.emplace(uid, *it);
            }

    // end of the observable log, used as the cold-start truncation anchor
    int64_t scratch_cutoff = 0;
    if (task.scratch_recent_months > 0 && inputs.purchase)
        for (const auto& h : *inputs.purchase)
            for (const auto& e : h.events) scratch_cutoff = std::max(scratch_cutoff, e.ts + 1);

    // per-user feeds
    std::map<std::string, UserFeed> feeds;
    for (const auto& [uid, rs] : per_user) {
        UserFeed f;
        if (uses_embeddings(spec.kind)) {
            auto it = inputs.embeddings ? inputs.embeddings->find(uid)
                                        : EmbeddingMap::const_iterator{};
            if (!inputs.embeddings || it == inputs.embeddings->end())
                throw std::runtime_error("no embedding for user " + uid);
            f.emb.assign(it->second.begin(), it->second.end());
        }
        if (want_rows) {
            std::vector<EncodedToken> tokens;
            if (purchase_rows) {
                auto it = by_user.find(uid);
                if (it == by_user.end())
                    throw std::runtime_error("no purchase log for user " + uid);
                bool scratch =
                    spec.kind == ModelKind::PTrans || spec.kind == ModelKind::TTrans;
                if (scratch && task.scratch_recent_months > 0) {
                    auto sliced = time_slice(*it->second, scratch_cutoff,
                                             task.scratch_recent_months);
                    std::vector<PurchaseEvent> ev =
                        sliced ? sliced->events : std::vector<PurchaseEvent>{};
                    if (ev.empty()) // cold user: a single neutral placeholder
                        ev.push_back(PurchaseEvent{0, 0, 0, 0, "cold:none",
                                                   scratch_cutoff - 1});
                    tokens = encode_events(ev, backbone_vocab);
                } else {
                    tokens = encode_events(it->second->events, backbone_vocab);
                }
            } else {
                // task-log tokens: item text + timestamp, oldest first, with
                // the held-out evaluation positive excluded
                std::vector<PurchaseEvent> ev;
                const TaskRecord* skip = nullptr;
                auto h = heldout.find(uid);
                if (h != heldout.end()) skip = h->second;
                for (const TaskRecord* r : rs) {
                    if (r == skip || r->label == 0) continue;
                    ev.push_back(PurchaseEvent{0, 0, 0, 0, r->item_text_key, r->ts});
                }
                std::sort(ev.begin(), ev.end(), [](const auto& a, const auto& b) {
                    return std::tie(a.ts, a.text_key) < std::tie(b.ts, b.text_key);
                });
                if (ev.empty()) // cold user: a single placeholder interaction
                    ev.push_back(PurchaseEvent{0, 0, 0, 0, "cold:none", min_ts});
                tokens = encode_events(ev, backbone_vocab);
            }
            f.row = single_padded_row(uid, std::move(tokens), cap, with_cls);
            f.has_row = true;
        }
        feeds.emplace(uid, std::move(f));
    }

    // examples per split
    std::vector<Example> train, val, test;
    std::map<std::string, int> test_input_len; // rec cohorts
    if (task.kind == TaskKind::classification) {
        for (const auto& [uid, rs] : per_user) {
            Example ex{&feeds.at(uid), nullptr, static_cast<double>(rs.front()->label)};
            switch (split_of(uid)) {
            case Split::train: train.push_back(ex); break;
            case Split::val: val.push_back(ex); break;
            case Split::test: test.push_back(ex); break;
            }
        }
    } else {
        std::vector<std::pair<std::string, std::string>> all_pos, train_pos, val_pos;
        std::vector<std::string> train_users, val_users;
        for (const auto& [uid, rs] : per_user) {
            Split sp = split_of(uid);
            for (const TaskRecord* r : rs) {
                if (r->label == 0) continue;
                all_pos.emplace_back(uid, r->item_text_key);
                if (sp == Split::train) train_pos.emplace_back(uid, r->item_text_key);
                if (sp == Split::val) val_pos.emplace_back(uid, r->item_text_key);
            }
            if (sp == Split::train) train_users.push_back(uid);
            if (sp == Split::val) val_users.push_back(uid);
            if (sp == Split::test) {
                int n = static_cast<int>(rs.size()) - (heldout.count(uid) ? 1 : 0);
                test_input_len[uid] = n;
            }
        }
        auto build = [&](const std::vector<std::pair<std::string, std::string>>& pos,
                         const std::vector<std::string>& users, const char* tag,
                         std::vector<Example>& out) {
            for (const auto& [u, i] : pos) out.push_back({&feeds.at(u), &item_vecs.at(i), 1.0});
            if (pos.empty()) return;
            Rng rng(derive_seed(run_seed, std::string("neg:") + tag));
            for (const auto& [u, i] :
                 sample_negatives(all_pos, users, catalog, task.negative_ratio, rng))
                out.push_back({&feeds.at(u), &item_vecs.at(i), 0.0});
        };
        build(train_pos, train_users, "train", train);
        build(val_pos, val_users, "val", val);
    }
    if (train.empty()) throw std::runtime_error("task " + task.task_id + ": no training users");
    if (val.empty()) throw std::runtime_error("task " + task.task_id + ": no validation users");

    if (uses_embeddings(spec.kind)) {
        // standardize embedding inputs with train-split statistics
        std::set<const UserFeed*> seen;
        for (const auto& ex : train) seen.insert(ex.feed);
        init.emb_shift.assign(static_cast<size_t>(init.emb_width), 0.0);
        init.emb_scale.assign(static_cast<size_t>(init.emb_width), 1.0);
        for (const UserFeed* f : seen)
            for (int j = 0; j < init.emb_width; ++j) init.emb_shift[j] += f->emb[j];
        double n = static_cast<double>(seen.size());
        for (auto& v : init.emb_shift) v /= n;
        std::vector<double> var(static_cast<size_t>(init.emb_width), 0.0);
        for (const UserFeed* f : seen)
            for (int j = 0; j < init.emb_width; ++j) {
                double d = f->emb[j] - init.emb_shift[j];
                var[j] += d * d;
            }
        for (int j = 0; j < init.emb_width; ++j)
            init.emb_scale[j] = 1.0 / (std::sqrt(var[j] / n) + 1e-6);
    }

    // LR sweep
    DownstreamRunResult result;
    result.model = init;
    std::vector<RunRecord> records;
    int best_ix = -1;
    double best_val = -1e300;
    std::vector<LrOutcome> outcomes;
    for (size_t li = 0; li < policy.lr_sweep.size(); ++li) {
        double lr = policy.lr_sweep[li];
        outcomes.push_back(train_one_lr(init, policy, lr, train, val,
                                        derive_seed(run_seed, "lr", static_cast<int>(li))));
        const SweepEntry& e = outcomes.back().entry;
        result.sweep.push_back(e);
        records.push_back({task.task_id, model_kind_name(spec.kind), spec.variant, lr, repeat,
                           "val", "auroc", e.diverged ? 0.0 : e.val_metric, run_seed});
        if (!e.diverged && e.val_metric > best_val) {
            best_val = e.val_metric;
            best_ix = static_cast<int>(li);
        }
    }
    if (best_ix < 0)
        throw std::runtime_error("task " + task.task_id + ": all learning rates diverged");
    result.model = std::move(outcomes[best_ix].model);
    result.best_lr = policy.lr_sweep[best_ix];
    result.trainable_params = result.model.trainable_param_count();

    auto rec = [&](const std::string& metric, double value) {
        records.push_back({task.task_id, model_kind_name(spec.kind), spec.variant,
                           result.best_lr, repeat, "test", metric, value, run_seed});
    };

    // single test evaluation
    if (task.kind == TaskKind::classification) {
        if (test.empty()) throw std::runtime_error("task " + task.task_id + ": no test users");
        auto scores = scores_of(result.model, test);
        std::vector<int> labels;
        for (const auto& ex : test) labels.push_back(ex.label > 0.5 ? 1 : 0);
        bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
        bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
        // single-class test sets leave AUROC undefined; report chance level
        double a = (has_pos && has_neg) ? auroc(scores, labels) : 0.5;
        auto fa = f1_accuracy(scores, labels, 0.5);
        rec("auroc", a);
        rec("f1", fa.f1);
        rec("accuracy", fa.accuracy);
        result.test_primary = a;
    } else {
        if (heldout.empty())
            throw std::runtime_error("task " + task.task_id + ": no test users with history");
        std::vector<RankTrial> trials;
        std::map<std::string, int> trial_rank; // per-user for cohort views
        for (const auto& [uid, gt] : heldout) {
            std::set<std::string> owned;
            for (const TaskRecord* r : per_user.at(uid))
                if (r->label != 0) owned.insert(r->item_text_key);
            Rng rng(derive_seed(run_seed, "evalneg:" + uid));
            std::vector<Example> batch;
            batch.push_back({&feeds.at(uid), &item_vecs.at(gt->item_text_key), 1.0});
            size_t attempts = 0;
            while (batch.size() < static_cast<size_t>(task.eval_negatives) + 1) {
                if (++attempts > 100000)
                    throw std::runtime_error("ranking negatives exhausted for user " + uid);
                const std::string& k = catalog[rng.below(catalog.size())];
                if (owned.count(k)) continue;
                batch.push_back({&feeds.at(uid), &item_vecs.at(k), 0.0});
            }
            auto scores = scores_of(result.model, batch, 128);
            RankTrial t;
            t.ground_truth_score = scores[0];
            t.negative_scores.assign(scores.begin() + 1, scores.end());
            trial_rank[uid] = rank_of_ground_truth(t);
            trials.push_back(std::move(t));
        }
        auto rm = hr_ndcg_mrr(trials, task.k);
        std::string kk = std::to_string(task.k);
        rec("hr@" + kk, rm.hr);
        rec("ndcg@" + kk, rm.ndcg);
        rec("mrr", rm.mrr);
        result.test_primary = rm.ndcg;
        auto cohorts = cohort_split(test_input_len);
        auto cohort_ndcg = [&](const std::vector<std::string>& ids) {
            double s = 0.0;
            int n = 0;
            for (const auto& uid : ids) {
                auto it = trial_rank.find(uid);
                if (it == trial_rank.end()) continue;
                s += metrics_of_rank(it->second, task.k).ndcg;
                ++n;
            }
            return n ? s / n : 0.0;
        };
        if (!cohorts.cold.empty()) rec("ndcg@" + kk + "_cold", cohort_ndcg(cohorts.cold));
        if (!cohorts.heavy.empty()) rec("ndcg@" + kk + "_heavy", cohort_ndcg(cohorts.heavy));
    }
    records.push_back({task.task_id, model_kind_name(spec.kind), spec.variant, result.best_lr,
                       repeat, "meta", "trainable_params",
                       static_cast<double>(result.trainable_params), run_seed});
    result.records = std::move(records);
    return result;
}

DownstreamRunResult finetune_pretrained(const EncoderParams& checkpoint, const TaskSpec& task,
                                        const TrainPolicy& policy, const TaskBundle& bundle,
                                        const std::vector<UserHistory>& purchase, int repeat,
                                        bool freeze_encoder, const std::string& variant) {
    DownstreamModelSpec spec;
    spec.kind = ModelKind::FtEncoder;
    spec.freeze_encoder = freeze_encoder;
    spec.variant = variant;
    DownstreamInputs inputs;
    inputs.purchase = &purchase;
    inputs.checkpoint = &checkpoint;
    inputs.vocab = checkpoint.vocab;
    return train_downstream(spec, task, policy, bundle, inputs, repeat);
}

std::vector<double> predict_classification(const DownstreamModel& model,
                                           const std::vector<std::string>& user_ids,
                                           const DownstreamInputs& inputs, const TaskBundle*,
                                           const std::string&) {
    if (model.task_kind != TaskKind::classification)
        throw std::runtime_error("predict_classification: recommendation model");
    std::map<std::string, const UserHistory*> by_user;
    if (inputs.purchase)
        for (const auto& h : *inputs.purchase) by_user.emplace(h.user_id, &h);
    bool purchase_rows = uses_purchase_rows(model.spec, model.task_kind);
    bool with_cls = model.has_enc && (model.spec.kind != ModelKind::FtEncoder
                                          ? true
                                          : model.enc.cfg.cls_variant);
    int cap = model.spec.input_cap > 0
                  ? std::min(model.spec.input_cap, model.enc.cfg.max_seq_len)
                  : (model.has_enc ? model.enc.cfg.max_seq_len : 0);
    std::vector<UserFeed> feeds;
    feeds.reserve(user_ids.size());
    for (const auto& uid : user_ids) {
        UserFeed f;
        if (uses_embeddings(model.spec.kind)) {
            auto it = inputs.embeddings ? inputs.embeddings->find(uid)
                                        : EmbeddingMap::const_iterator{};
            if (!inputs.embeddings || it == inputs.embeddings->end())
                throw std::runtime_error("no embedding for user " + uid);
            f.emb.assign(it->second.begin(), it->second.end());
        }
        if (model.has_enc && purchase_rows) {
            auto it = by_user.find(uid);
            if (it == by_user.end()) throw std::runtime_error("no purchase log for user " + uid);
            f.row = single_padded_row(uid, encode_events(it->second->events, model.enc.vocab),
                                      cap, with_cls);
            f.has_row = true;
        }
        feeds.push_back(std::move(f));
    }
    std::vector<Example> examples;
    examples.reserve(feeds.size());
    for (const auto& f : feeds) examples.push_back({&f, nullptr, 0.0});
    return scores_of(model, examples);
}

} // namespace o4a
