#include "o4a/pretrain.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace o4a {

std::string loss_log_csv(const std::vector<LossLogRow>& rows) {
    std::ostringstream os;
    os << "step,lr,total_loss";
    for (int t = 0; t < kNumTasks; ++t) os << ",loss_" << kTaskNames[t];
    os << "\n";
    os.precision(12);
    for (const auto& r : rows) {
        os << r.step << ',' << r.lr << ',' << r.total;
        for (int t = 0; t < kNumTasks; ++t) os << ',' << r.per_task[t];
        os << "\n";
    }
    return os.str();
}

namespace {

// Pure function of (seed, step): epoch order is a seeded shuffle, batches are
// consecutive slices of it.
std::vector<size_t> batch_user_indices(uint64_t seed, int64_t step, size_t n_users,
                                       int batch_size, int64_t* epoch_out) {
    size_t bpe = (n_users + batch_size - 1) / batch_size;
    int64_t epoch = step / static_cast<int64_t>(bpe);
    size_t batch_ix = static_cast<size_t>(step % static_cast<int64_t>(bpe));
    if (epoch_out) *epoch_out = epoch;
    std::vector<size_t> order(n_users);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "epoch-order", static_cast<uint64_t>(epoch)));
    for (size_t i = n_users - 1; i > 0; --i) {
        size_t j = rng.below(i + 1);
        std::swap(order[i], order[j]);
    }
    size_t lo = batch_ix * batch_size;
    size_t hi = std::min(lo + batch_size, n_users);
    return std::vector<size_t>(order.begin() + lo, order.begin() + hi);
}

MaskedBatch prepare_batch(const PretrainRun& run, const std::vector<UserHistory>& users,
                          const std::vector<size_t>& indices, const VocabProfile& vocab,
                          const CorpusSampler& sampler, int64_t step, int64_t epoch) {
    std::vector<EventSeq> seqs;
    std::vector<std::string> tags;
    for (size_t ix : indices) {
        seqs.push_back(users[ix].events);
        tags.push_back(users[ix].user_id);
    }
    if (run.augment) {
        AugmentPolicy policy = run.policy;
        policy.seed = run.seed;
        seqs = augment_batch(seqs, tags, policy, static_cast<uint64_t>(epoch));
    }
    // re-draw the whole batch's masking if no position was chosen
    for (uint64_t attempt = 0;; ++attempt) {
        std::vector<MaskedRow> rows;
        Rng mask_rng(derive_seed(run.seed, "mask", static_cast<uint64_t>(step) * 1000003 + attempt));
        for (size_t i = 0; i < seqs.size(); ++i) {
            auto tokens = encode_events(seqs[i], vocab);
            rows.push_back(apply_mpp_masking(tags[i], tokens, mask_rng, sampler, run.masking));
        }
        MaskedBatch batch =
            pad_and_batch(std::move(rows), run.enc.max_seq_len, run.variant == Variant::CLS);
        int chosen = 0;
        for (const auto& r : batch.rows) chosen += r.chosen_count();
        if (chosen > 0 || run.masking.p_choose == 0.0) return batch;
    }
}

PretrainResult run_training(const PretrainRun& run, EncoderParams params,
                            const std::vector<UserHistory>& train_users) {
    run.sched.validate();
    run.enc.validate();
    if (train_users.empty()) throw std::runtime_error("train_pretext: empty corpus");
    const VocabProfile& vocab = params.vocab;
    CorpusSampler sampler = CorpusSampler::from_histories(train_users, vocab);

    PretrainResult result;
    result.params = std::move(params);
    auto save = [&](int64_t step) {
        if (!run.checkpoint_dir.empty()) {
            std::filesystem::create_directories(run.checkpoint_dir);
            std::string path =
                run.checkpoint_dir + "/ckpt_" + std::to_string(step) + ".o4ac";
            save_checkpoint(path, result.params);
            result.checkpoint_paths.push_back(path);
        }
    };

    for (int64_t step = result.params.ps.step; step < run.steps; ++step) {
        int64_t epoch = 0;
        auto indices = batch_user_indices(run.seed, step, train_users.size(), run.batch_size,
                                          &epoch);
        MaskedBatch batch =
            prepare_batch(run, train_users, indices, vocab, sampler, step, epoch);

        ag::Graph g;
        ParamBinding b = bind_params(g, result.params.ps);
        Rng dropout_rng(derive_seed(run.seed, "dropout", static_cast<uint64_t>(step)));
        ForwardOptions opt;
        opt.train = true;
        opt.dropout_rng = &dropout_rng;
        std::vector<ag::Var> hiddens;
        for (const auto& row : batch.rows)
            hiddens.push_back(encode_row_hidden(g, b, run.enc, vocab, row, opt));
        LossBreakdown breakdown;
        ag::Var loss;
        try {
            loss = mpp_loss(g, b, run.enc, vocab, hiddens, batch, &breakdown);
        } catch (const std::exception& ex) {
            throw std::runtime_error("pretraining diverged at step " + std::to_string(step) +
                                     ": " + ex.what());
        }
        g.backward(loss);
        GradSet grads = collect_grads(b);
        double lr = lr_at(run.sched, step + 1);
        adam_step(result.params.ps, grads, lr, run.sched.weight_decay);

        LossLogRow log_row{step, lr, breakdown.total, breakdown.per_task};
        result.log.push_back(log_row);
        if (run.checkpoint_every > 0 && (step + 1) % run.checkpoint_every == 0 &&
            step + 1 < run.steps)
            save(step + 1);
    }
    save(run.steps);
    return result;
}

} // namespace

PretrainResult train_pretext(const PretrainRun& run, const std::vector<UserHistory>& train_users,
                             const VocabProfile& vocab) {
    EncoderConfig cfg = run.enc;
    cfg.cls_variant = run.variant == Variant::CLS;
    EncoderParams params = init_params(cfg, vocab, run.seed);
    PretrainRun r = run;
    r.enc = cfg;
    return run_training(r, std::move(params), train_users);
}

PretrainResult train_pretext_from(const PretrainRun& run, EncoderParams params,
                                  const std::vector<UserHistory>& train_users) {
    PretrainRun r = run;
    r.enc = params.cfg;
    return run_training(r, std::move(params), train_users);
}

PretextEval eval_pretext(const EncoderParams& params, const std::vector<UserHistory>& heldout,
                         uint64_t eval_seed, const MaskingParams& masking) {
    if (heldout.empty()) throw std::runtime_error("eval_pretext: empty corpus");
    const VocabProfile& vocab = params.vocab;
    CorpusSampler sampler = CorpusSampler::from_histories(heldout, vocab);
    bool cls = params.cfg.cls_variant;

    PretextEval out;
    std::array<double, kNumTasks> loss_sum{};
    std::array<int, kNumTasks> correct{};
    std::array<int, kNumTasks> counts{};

    const size_t batch_rows = 16;
    for (size_t start = 0; start < heldout.size(); start += batch_rows) {
        std::vector<MaskedRow> rows;
        for (size_t i = start; i < std::min(start + batch_rows, heldout.size()); ++i) {
            Rng rng(derive_seed(eval_seed, "eval-mask:" + heldout[i].user_id));
            auto tokens = encode_events(heldout[i].events, vocab);
            rows.push_back(
                apply_mpp_masking(heldout[i].user_id, tokens, rng, sampler, masking));
        }
        MaskedBatch batch = pad_and_batch(std::move(rows), params.cfg.max_seq_len, cls);
        int chosen = 0;
        for (const auto& r : batch.rows) chosen += r.chosen_count();
        if (chosen == 0) continue;

        ag::Graph g;
        ParamBinding b = bind_params(g, params.ps);
        std::vector<ag::Var> hiddens;
        std::vector<std::array<int, kNumTasks>> stacked_labels;
        std::vector<ag::Var> input_blocks;
        for (const auto& row : batch.rows) {
            ag::Var hidden = encode_row_hidden(g, b, params.cfg, vocab, row);
            std::vector<int> chosen_pos;
            for (int p = 0; p < static_cast<int>(row.size()); ++p)
                if (is_chosen(row.plan[p])) {
                    chosen_pos.push_back(p);
                    stacked_labels.push_back(row.labels[p]);
                }
            if (chosen_pos.empty()) continue;
            if (cls) {
                ag::Var cls_rows =
                    ag::gather_rows(g, hidden, std::vector<int>(chosen_pos.size(), 0));
                ag::Var pos_rows = ag::gather_rows(g, b.at("emb.pos"), chosen_pos);
                input_blocks.push_back(ag::concat_cols(g, {cls_rows, pos_rows}));
            } else {
                input_blocks.push_back(ag::gather_rows(g, hidden, chosen_pos));
            }
        }
        if (input_blocks.empty()) continue;
        ag::Var head_inputs =
            input_blocks.size() == 1 ? input_blocks[0] : ag::concat_rows(g, input_blocks);
        for (int t = 0; t < kNumTasks; ++t) {
            std::vector<std::pair<int, int>> targets;
            for (size_t i = 0; i < stacked_labels.size(); ++i)
                if (stacked_labels[i][t] >= 0)
                    targets.emplace_back(static_cast<int>(i), stacked_labels[i][t]);
            if (targets.empty()) continue;
            ag::Var logits = head_forward(g, b, params.cfg, vocab, t, head_inputs);
            for (auto [r, label] : targets) {
                int argmax = 0;
                for (int j = 1; j < logits->val.cols; ++j)
                    if (logits->val.at(r, j) > logits->val.at(r, argmax)) argmax = j;
                if (argmax == label) correct[t]++;
            }
            ag::Var ce = ag::cross_entropy_rows(g, logits, targets);
            loss_sum[t] += ce->val.v[0] * static_cast<double>(targets.size());
            counts[t] += static_cast<int>(targets.size());
        }
    }
    int active = 0;
    for (int t = 0; t < kNumTasks; ++t) {
        out.chosen_counts[t] = counts[t];
        if (counts[t] == 0) continue;
        out.task_loss[t] = loss_sum[t] / counts[t];
        out.task_accuracy[t] = static_cast<double>(correct[t]) / counts[t];
        out.loss += out.task_loss[t];
        ++active;
    }
    if (active == 0) throw std::runtime_error("eval_pretext: no chosen positions");
    out.loss /= active;
    return out;
}

UserEmbedding extract_user_embedding(const EncoderParams& params, const UserHistory& h,
                                     Variant variant) {
    if (h.events.empty()) throw std::runtime_error("extract_user_embedding: empty history");
    if (variant == Variant::CLS && !params.cfg.cls_variant)
        throw std::runtime_error("extract_user_embedding: checkpoint was not trained with [CLS]");
    const VocabProfile& vocab = params.vocab;
    auto tokens = encode_events(h.events, vocab);
    MaskedBatch batch = pad_and_batch({unmasked_row(h.user_id, tokens)}, params.cfg.max_seq_len,
                                      variant == Variant::CLS);
    const MaskedRow& row = batch.rows[0];
    ag::Graph g;
    ParamBinding b = bind_params(g, params.ps);
    ag::Var hidden = encode_row_hidden(g, b, params.cfg, vocab, row);
    UserEmbedding out;
    out.user_id = h.user_id;
    out.variant = variant;
    out.checkpoint_step = params.ps.step;
    out.vec.resize(params.cfg.hidden);
    if (variant == Variant::CLS) {
        for (int j = 0; j < params.cfg.hidden; ++j)
            out.vec[j] = static_cast<float>(hidden->val.at(0, j));
    } else {
        std::vector<int> real;
        for (int p = 0; p < static_cast<int>(row.size()); ++p)
            if (row.plan[p] != MaskState::pad && row.plan[p] != MaskState::cls)
                real.push_back(p);
        for (int j = 0; j < params.cfg.hidden; ++j) {
            double s = 0.0;
            for (int p : real) s += hidden->val.at(p, j);
            out.vec[j] = static_cast<float>(s / static_cast<double>(real.size()));
        }
    }
    return out;
}

std::vector<UserEmbedding> extract_embeddings(const EncoderParams& params,
                                              const std::vector<UserHistory>& users,
                                              Variant variant) {
    std::vector<UserEmbedding> out;
    out.reserve(users.size());
    for (const auto& h : users) out.push_back(extract_user_embedding(params, h, variant));
    return out;
}

// --- embedding store ----------------------------------------------------------

namespace {

void put_u16(std::ostream& os, uint16_t v) {
    char buf[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(buf, 2);
}

void put_u32(std::ostream& os, uint32_t v) {
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>(v >> (8 * i));
    os.write(buf, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>(v >> (8 * i));
    os.write(buf, 8);
}

void put_f32(std::ostream& os, float f) {
    uint32_t bits;
    static_assert(sizeof(float) == 4);
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
}

uint16_t get_u16(std::istream& is) {
    unsigned char buf[2];
    if (!is.read(reinterpret_cast<char*>(buf), 2))
        throw std::runtime_error("embedding store: truncated file");
    return static_cast<uint16_t>(buf[0] | (buf[1] << 8));
}

uint32_t get_u32(std::istream& is) {
    unsigned char buf[4];
    if (!is.read(reinterpret_cast<char*>(buf), 4))
        throw std::runtime_error("embedding store: truncated file");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8))
        throw std::runtime_error("embedding store: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

float get_f32(std::istream& is) {
    uint32_t bits = get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

constexpr size_t kStoreHeaderSize = 4 + 4 + 4 + 8 + 1 + 8;

} // namespace

void write_embedding_store(const std::string& path, const std::vector<UserEmbedding>& rows) {
    if (rows.empty()) throw std::runtime_error("write_embedding_store: no rows");
    size_t width = rows[0].vec.size();
    Variant variant = rows[0].variant;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write embedding store: " + path);
    os.write("O4AL", 4);
    put_u32(os, 1);
    put_u32(os, static_cast<uint32_t>(width));
    put_u64(os, rows.size());
    os.put(variant == Variant::MP ? 'M' : 'C');
    put_u64(os, static_cast<uint64_t>(rows[0].checkpoint_step));

    std::vector<std::pair<uint64_t, uint64_t>> index;
    std::vector<std::string> seen;
    uint64_t offset = kStoreHeaderSize;
    for (const auto& r : rows) {
        if (r.vec.size() != width)
            throw std::runtime_error("write_embedding_store: non-uniform width");
        if (std::find(seen.begin(), seen.end(), r.user_id) != seen.end())
            throw std::runtime_error("write_embedding_store: duplicate user " + r.user_id);
        seen.push_back(r.user_id);
        index.emplace_back(fnv1a(r.user_id), offset);
        put_u16(os, static_cast<uint16_t>(r.user_id.size()));
        os.write(r.user_id.data(), static_cast<std::streamsize>(r.user_id.size()));
        for (float f : r.vec) put_f32(os, f);
        offset += 2 + r.user_id.size() + 4 * width;
    }
    std::sort(index.begin(), index.end());
    for (const auto& [hash, off] : index) {
        put_u64(os, hash);
        put_u64(os, off);
    }
    put_u64(os, index.size());
    if (!os) throw std::runtime_error("embedding store write failed: " + path);
}

std::vector<UserEmbedding> read_embedding_store(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open embedding store: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "O4AL")
        throw std::runtime_error("embedding store: bad magic in " + path);
    if (get_u32(is) != 1) throw std::runtime_error("embedding store: unsupported version");
    uint32_t width = get_u32(is);
    uint64_t count = get_u64(is);
    int tag = is.get();
    if (tag != 'M' && tag != 'C') throw std::runtime_error("embedding store: bad variant tag");
    int64_t step = static_cast<int64_t>(get_u64(is));
    std::vector<UserEmbedding> rows;
    rows.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        UserEmbedding e;
        uint16_t idlen = get_u16(is);
        e.user_id.resize(idlen);
        if (!is.read(e.user_id.data(), idlen))
            throw std::runtime_error("embedding store: truncated file");
        e.vec.resize(width);
        for (auto& f : e.vec) f = get_f32(is);
        e.variant = tag == 'M' ? Variant::MP : Variant::CLS;
        e.checkpoint_step = step;
        rows.push_back(std::move(e));
    }
    return rows;
}

std::optional<std::vector<float>> lookup_embedding(const std::string& path,
                                                   const std::string& user_id) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open embedding store: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "O4AL")
        throw std::runtime_error("embedding store: bad magic in " + path);
    if (get_u32(is) != 1) throw std::runtime_error("embedding store: unsupported version");
    uint32_t width = get_u32(is);
    is.seekg(-8, std::ios::end);
    uint64_t index_len = get_u64(is);
    std::streamoff index_start = -8 - static_cast<std::streamoff>(index_len * 16);
    is.seekg(index_start, std::ios::end);
    uint64_t target = fnv1a(user_id);
    std::vector<std::pair<uint64_t, uint64_t>> index(index_len);
    for (auto& [h, off] : index) {
        h = get_u64(is);
        off = get_u64(is);
    }
    auto it = std::lower_bound(index.begin(), index.end(),
                               std::make_pair(target, static_cast<uint64_t>(0)));
    for (; it != index.end() && it->first == target; ++it) {
        is.clear();
        is.seekg(static_cast<std::streamoff>(it->second), std::ios::beg);
        uint16_t idlen = get_u16(is);
        std::string id(idlen, '\0');
        if (!is.read(id.data(), idlen))
            throw std::runtime_error("embedding store: truncated file");
        if (id != user_id) continue; // hash collision
        std::vector<float> vec(width);
        for (auto& f : vec) f = get_f32(is);
        return vec;
    }
    return std::nullopt;
}

} // namespace o4a
