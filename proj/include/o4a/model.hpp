#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "o4a/autograd.hpp"
#include "o4a/encoding.hpp"
#include "o4a/tensor.hpp"

namespace o4a {

struct EncoderConfig {
    int hidden = 64;
    int layers = 2;
    int heads = 4;
    int max_seq_len = 64;
    double dropout = 0.1;
    bool share_layers = false;
    bool cls_variant = false; // CLS pretext: heads read [CLS] hidden ++ positional
    uint64_t seed = 1;

    int ffn_width() const { return 4 * hidden; }
    int head_dim() const { return hidden / heads; }
    int head_input_width() const { return cls_variant ? 2 * hidden : hidden; }
    // inner width of the two-layer prediction heads; capped so wide encoders
    // do not spend a disproportionate share of parameters on the pretext heads
    int head_inner_width() const { return hidden < 256 ? hidden : 256; }

    static EncoderConfig desk();            // H=64,  L=2,  A=4,  seq 64
    static EncoderConfig full_pretrain();  // H=550, L=20, A=10, seq 350
    static EncoderConfig full_downstream(); // H=128, L=4,  A=4, shared layers

    void validate() const;
    std::string serialize() const;
    static EncoderConfig deserialize(const std::string& text);
    uint64_t digest() const;
    bool operator==(const EncoderConfig&) const = default;
};

struct ScheduleConfig {
    enum class Kind { warmup_cosine, exponential };
    Kind kind = Kind::warmup_cosine;
    double base_lr = 1e-4;
    int64_t warmup_steps = 100;
    int64_t total_steps = 1000;
    double decay_rate = 0.995; // exponential kind, per epoch
    double weight_decay = 0.0;

    void validate() const;
};

double lr_at(const ScheduleConfig& s, int64_t step_or_epoch);

// Named tensors plus Adam state; shared by the encoder and the downstream
// models.
struct ParamSet {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, Tensor> opt_m, opt_v;
    int64_t step = 0;

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    size_t param_count() const;
    bool operator==(const ParamSet&) const = default;
};

using GradSet = std::map<std::string, Tensor>;

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam with decoupled weight decay.
void adam_step(ParamSet& params, const GradSet& grads, double lr, double weight_decay,
               const AdamConfig& adam = {});

struct EncoderParams {
    EncoderConfig cfg;
    VocabProfile vocab;
    ParamSet ps;

    bool operator==(const EncoderParams&) const = default;
};

EncoderParams init_params(const EncoderConfig& cfg, const VocabProfile& vocab, uint64_t seed);
size_t param_count_formula(const EncoderConfig& cfg, const VocabProfile& vocab);

// Leaf vars for every tensor of a ParamSet, tied to one graph.
struct ParamBinding {
    std::map<std::string, ag::Var> vars;
    ag::Var at(const std::string& name) const;
};
ParamBinding bind_params(ag::Graph& g, const ParamSet& ps);
GradSet collect_grads(const ParamBinding& b);

struct ForwardOptions {
    bool train = false;   // enables dropout
    Rng* dropout_rng = nullptr;
};

// Token composition: per real token mean(x_prod, mean-of-date-embeddings,
// positional); [MASK] -> mean(mask vector, positional); [CLS] -> class vector +
// positional (or cls_override + positional when given). Returns S x H.
ag::Var compose_token_inputs(ag::Graph& g, const ParamBinding& b, const EncoderConfig& cfg,
                             const VocabProfile& vocab, const MaskedRow& row,
                             ag::Var cls_override = nullptr);

// Pre-norm transformer stack over composed inputs; padded key positions are
// excluded from attention. Returns final hidden states, S x H.
ag::Var encoder_forward(ag::Graph& g, const ParamBinding& b, const EncoderConfig& cfg,
                        ag::Var inputs, const MaskedRow& row, const ForwardOptions& opt = {});

// Composition + encoder in one call.
ag::Var encode_row_hidden(ag::Graph& g, const ParamBinding& b, const EncoderConfig& cfg,
                          const VocabProfile& vocab, const MaskedRow& row,
                          const ForwardOptions& opt = {}, ag::Var cls_override = nullptr);

// Two-layer GeLU prediction head for one sub-task; rows x task vocab logits.
ag::Var head_forward(ag::Graph& g, const ParamBinding& b, const EncoderConfig& cfg,
                     const VocabProfile& vocab, int task, ag::Var inputs);

struct LossBreakdown {
    double total = 0.0;
    std::array<double, kNumTasks> per_task{};
    std::array<int, kNumTasks> chosen_counts{};
};

// Pretext loss: unweighted mean over sub-tasks (those with >= 1 chosen
// position) of the mean cross-entropy at chosen positions.
ag::Var mpp_loss(ag::Graph& g, const ParamBinding& b, const EncoderConfig& cfg,
                 const VocabProfile& vocab, const std::vector<ag::Var>& hiddens,
                 const MaskedBatch& batch, LossBreakdown* breakdown = nullptr);

// Loss of an untrained model with zero-initialized head output layers.
double uniform_mpp_loss(const VocabProfile& vocab);

// --- checkpoints -----------------------------------------------------------
// Binary: magic "O4AC", format version, config digest, vocab digest, step,
// embedded config/vocab text, then named tensors (optimizer state under
// the "opt." prefix).
void save_checkpoint(const std::string& path, const EncoderParams& params);
EncoderParams load_checkpoint(const std::string& path);
EncoderParams load_checkpoint_checked(const std::string& path, uint64_t expected_vocab_digest);

} // namespace o4a
