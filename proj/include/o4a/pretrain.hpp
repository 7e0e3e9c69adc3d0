#pragma once

#include <optional>
#include <string>
#include <vector>

#include "o4a/augment.hpp"
#include "o4a/corpus.hpp"
#include "o4a/model.hpp"

namespace o4a {

enum class Variant { MP, CLS };

inline std::string variant_name(Variant v) { return v == Variant::MP ? "MP" : "CLS"; }

struct PretrainRun {
    Variant variant = Variant::MP;
    bool augment = false;
    AugmentPolicy policy;
    EncoderConfig enc;
    ScheduleConfig sched;
    MaskingParams masking;
    int batch_size = 32;
    int64_t steps = 200;
    uint64_t seed = 1;
    int64_t checkpoint_every = 0;   // 0: only the final checkpoint
    std::string checkpoint_dir;     // empty: keep everything in memory
};

struct LossLogRow {
    int64_t step;
    double lr;
    double total;
    std::array<double, kNumTasks> per_task;
};

std::string loss_log_csv(const std::vector<LossLogRow>& rows);

struct PretrainResult {
    EncoderParams params;
    std::vector<LossLogRow> log;
    std::vector<std::string> checkpoint_paths;
};

// Full run from freshly initialized parameters. The batch schedule, masking,
// augmentation and dropout streams are all pure functions of (seed, step), so
// two same-seed runs produce bit-identical parameter trajectories.
PretrainResult train_pretext(const PretrainRun& run, const std::vector<UserHistory>& train_users,
                             const VocabProfile& vocab);

// Resume from a checkpoint at params.ps.step; reproduces the unbroken run.
PretrainResult train_pretext_from(const PretrainRun& run, EncoderParams params,
                                  const std::vector<UserHistory>& train_users);

struct PretextEval {
    double loss = 0.0;
    std::array<double, kNumTasks> task_loss{};
    std::array<double, kNumTasks> task_accuracy{};
    std::array<int, kNumTasks> chosen_counts{};
};

// Held-out masked-prediction quality under a fixed evaluation seed.
PretextEval eval_pretext(const EncoderParams& params, const std::vector<UserHistory>& heldout,
                         uint64_t eval_seed, const MaskingParams& masking = {});

struct UserEmbedding {
    std::string user_id;
    std::vector<float> vec;
    Variant variant = Variant::MP;
    int64_t checkpoint_step = 0;
};

// No masking, no augmentation, dropout off. MP: mean of final hidden vectors
// over real behavior positions; CLS: final hidden vector at position 0.
UserEmbedding extract_user_embedding(const EncoderParams& params, const UserHistory& h,
                                     Variant variant);
std::vector<UserEmbedding> extract_embeddings(const EncoderParams& params,
                                              const std::vector<UserHistory>& users,
                                              Variant variant);

// Binary store: magic "O4AL", version, width, count, variant tag, rows
// (u16 id length + id + width x float32 LE), footer (sorted id-hash -> offset
// index + index length).
void write_embedding_store(const std::string& path, const std::vector<UserEmbedding>& rows);
std::vector<UserEmbedding> read_embedding_store(const std::string& path);
std::optional<std::vector<float>> lookup_embedding(const std::string& path,
                                                   const std::string& user_id);

} // namespace o4a
