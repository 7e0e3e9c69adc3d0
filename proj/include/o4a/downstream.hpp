#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "o4a/corpus.hpp"
#include "o4a/metrics.hpp"
#include "o4a/model.hpp"
#include "o4a/pretrain.hpp"

namespace o4a {

enum class ModelKind { UMlp, PTrans, UPTrans, TTrans, FtEncoder };

std::string model_kind_name(ModelKind k);

enum class TaskKind { classification, recommendation };

struct TaskSpec {
    std::string task_id;
    TaskKind kind = TaskKind::classification;
    int negative_ratio = 1;  // negatives per positive (training pairs)
    int eval_negatives = 100; // sampled items per ranking trial
    int k = 10;               // HR@k / NDCG@k cutoff
    double train_ratio = 0.70, val_ratio = 0.15, test_ratio = 0.15;
    // cold-start setting: the task dataset ships only this many recent months
    // of purchase logs, so from-scratch models (P-Trans, T-Trans) see the
    // truncated logs while pre-trained artifacts (embedding store, fine-tuned
    // checkpoint) still summarize the full pre-training window. 0 = full logs.
    int scratch_recent_months = 0;
};

struct TrainPolicy {
    int batch_size = 256;
    std::vector<double> lr_sweep = {1e-4, 3e-4, 1e-3};
    double decay_rate = 0.995; // per-epoch exponential LR decay
    int max_epochs = 30;
    int patience = 3; // early stopping on the validation metric
    uint64_t seed = 1;
};

// A small shared-layer transformer that trains from scratch in seconds.
EncoderConfig desk_downstream_config();

struct DownstreamModelSpec {
    ModelKind kind = ModelKind::UMlp;
    EncoderConfig enc = desk_downstream_config(); // P/T/UP-Trans backbone
    bool freeze_encoder = false;                  // FtEncoder only
    std::string variant = "-";                    // embedding provenance tag
    int input_cap = 0; // cap on events fed to a transformer backbone; 0 = max_seq_len
};

using EmbeddingMap = std::map<std::string, std::vector<float>>;

// One trainable downstream model. Transformer-backed kinds carry their
// encoder in `enc`; every kind carries the feed-forward head (and, for
// recommendation tasks, the item tower) in `head`.
struct DownstreamModel {
    DownstreamModelSpec spec;
    TaskKind task_kind = TaskKind::classification;
    bool has_enc = false;
    EncoderParams enc;  // backbone (fresh for P/T/UP-Trans, pre-trained for FT)
    ParamSet head;      // mlp.*, item.*, up.*
    int head_input = 0; // width fed to the first head layer
    int emb_width = 0;  // embedding-store width (U-MLP / UP-Trans)
    // train-split feature standardization for embedding inputs; stored
    // embeddings carry large constant per-dimension offsets that otherwise
    // drown the informative variation in the ReLU tower. Empty = identity.
    std::vector<double> emb_shift, emb_scale;

    size_t trainable_param_count() const;
};

// Wires a model per its input contract: U-MLP reads the embedding store
// only; P-Trans reads purchase logs; UP-Trans reads both; T-Trans reads
// task logs; FtEncoder reads purchase logs through a trainable pre-trained
// encoder. Kinds that consume embeddings need emb_width > 0; FtEncoder
// needs a checkpoint.
DownstreamModel make_model(const DownstreamModelSpec& spec, TaskKind task_kind,
                           const VocabProfile& vocab, int emb_width,
                           const EncoderParams* checkpoint, uint64_t seed);

// Two-tower probability for one user/item vector pair.
double score_pair(const std::vector<double>& user_vec, const std::vector<double>& item_vec);

// Uniform (user, item) pairs excluding known positives; ratio negatives per
// positive, deterministic under the rng stream.
std::vector<std::pair<std::string, std::string>> sample_negatives(
    const std::vector<std::pair<std::string, std::string>>& positives,
    const std::vector<std::string>& users, const std::vector<std::string>& items, int ratio,
    Rng& rng);

// Read-only inputs shared by every model kind.
struct DownstreamInputs {
    const std::vector<UserHistory>* purchase = nullptr; // full corpus
    const EmbeddingMap* embeddings = nullptr;           // extracted user vectors
    const EncoderParams* checkpoint = nullptr;          // FtEncoder backbone
    VocabProfile vocab = VocabProfile::desk();          // tokenization + text vectors
};

struct SweepEntry {
    double lr = 0.0;
    double val_metric = 0.0;
    int epochs = 0;
    bool diverged = false;
};

struct DownstreamRunResult {
    DownstreamModel model; // trained at the winning LR
    double best_lr = 0.0;
    std::vector<SweepEntry> sweep;
    std::vector<RunRecord> records;
    double test_primary = 0.0; // AUROC (classification) or NDCG@k (recommendation)
    size_t trainable_params = 0;
};

// Full protocol for one repeat: user-disjoint splits, 3-LR sweep selected on
// validation, one test evaluation, run records for aggregation. Per-LR
// divergence is recorded; only all-LRs-diverged is fatal.
DownstreamRunResult train_downstream(const DownstreamModelSpec& spec, const TaskSpec& task,
                                     const TrainPolicy& policy, const TaskBundle& bundle,
                                     const DownstreamInputs& inputs, int repeat);

// FtEncoder convenience wrapper; records carry the trainable-parameter count.
DownstreamRunResult finetune_pretrained(const EncoderParams& checkpoint, const TaskSpec& task,
                                        const TrainPolicy& policy, const TaskBundle& bundle,
                                        const std::vector<UserHistory>& purchase, int repeat,
                                        bool freeze_encoder = false,
                                        const std::string& variant = "MP");

// --- inference entry points (shared with the cost report) -------------------

// Classification probabilities for a batch of users, inputs resolved per the
// model's kind. Order follows `user_ids`.
std::vector<double> predict_classification(const DownstreamModel& model,
                                           const std::vector<std::string>& user_ids,
                                           const DownstreamInputs& inputs,
                                           const TaskBundle* bundle = nullptr,
                                           const std::string& task_id = "");

} // namespace o4a
