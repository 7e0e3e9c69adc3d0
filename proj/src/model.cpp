#include "o4a/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace o4a {

// --- config ------------------------------------------------------------------

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::full_pretrain() {
    EncoderConfig c;
    c.hidden = 550;
    c.layers = 20;
    c.heads = 10;
    c.max_seq_len = 350;
    return c;
}

EncoderConfig EncoderConfig::full_downstream() {
    EncoderConfig c;
    c.hidden = 128;
    c.layers = 4;
    c.heads = 4;
    c.max_seq_len = 64;
    c.share_layers = true;
    return c;
}

void EncoderConfig::validate() const {
    if (hidden < 1 || layers < 1 || heads < 1 || max_seq_len < 1)
        throw std::runtime_error("encoder config: sizes must be >= 1");
    if (hidden % heads != 0)
        throw std::runtime_error("encoder config: hidden must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::runtime_error("encoder config: dropout must be in [0, 1)");
}

std::string EncoderConfig::serialize() const {
    std::ostringstream os;
    os << "o4a-encoder v1\n";
    os << "hidden=" << hidden << "\nlayers=" << layers << "\nheads=" << heads
       << "\nmax_seq_len=" << max_seq_len << "\ndropout=" << dropout
       << "\nshare_layers=" << (share_layers ? 1 : 0) << "\ncls_variant=" << (cls_variant ? 1 : 0)
       << "\nseed=" << seed << "\n";
    return os.str();
}

EncoderConfig EncoderConfig::deserialize(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "o4a-encoder v1")
        throw std::runtime_error("encoder config: bad header");
    EncoderConfig c;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("encoder config: bad line " + line);
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "hidden") c.hidden = std::stoi(val);
        else if (key == "layers") c.layers = std::stoi(val);
        else if (key == "heads") c.heads = std::stoi(val);
        else if (key == "max_seq_len") c.max_seq_len = std::stoi(val);
        else if (key == "dropout") c.dropout = std::stod(val);
        else if (key == "share_layers") c.share_layers = val == "1";
        else if (key == "cls_variant") c.cls_variant = val == "1";
        else if (key == "seed") c.seed = std::stoull(val);
        else throw std::runtime_error("encoder config: unknown key " + key);
    }
    return c;
}

uint64_t EncoderConfig::digest() const { return fnv1a(serialize()); }

void ScheduleConfig::validate() const {
    if (warmup_steps > total_steps)
        throw std::runtime_error("schedule: warmup_steps must be <= total_steps");
    if (decay_rate <= 0.0 || decay_rate > 1.0)
        throw std::runtime_error("schedule: decay_rate must be in (0, 1]");
}

double lr_at(const ScheduleConfig& s, int64_t step) {
    if (step < 0) throw std::runtime_error("lr_at: negative step");
    if (s.kind == ScheduleConfig::Kind::exponential)
        return s.base_lr * std::pow(s.decay_rate, static_cast<double>(step));
    if (step < s.warmup_steps)
        return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    if (s.total_steps <= s.warmup_steps) return s.base_lr;
    double progress = static_cast<double>(step - s.warmup_steps) /
                      static_cast<double>(s.total_steps - s.warmup_steps);
    progress = std::min(progress, 1.0);
    return s.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// --- parameters ----------------------------------------------------------------

Tensor& ParamSet::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("no such parameter: " + name);
    return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("no such parameter: " + name);
    return it->second;
}

size_t ParamSet::param_count() const {
    size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

static std::string block_prefix(const EncoderConfig& cfg, int layer) {
    return "block" + std::to_string(cfg.share_layers ? 0 : layer) + ".";
}

static std::vector<std::pair<std::string, std::pair<int, int>>> encoder_tensor_shapes(
    const EncoderConfig& cfg, const VocabProfile& vocab) {
    int H = cfg.hidden;
    std::vector<std::pair<std::string, std::pair<int, int>>> shapes;
    for (int i = 0; i < 4; ++i)
        shapes.push_back({"emb.cat" + std::to_string(i + 1), {vocab.cat[i], H}});
    const char* date_names[5] = {"year", "month", "dom", "dow", "hour"};
    for (int f = 0; f < 5; ++f)
        shapes.push_back({std::string("emb.date.") + date_names[f], {vocab.date_size(f), H}});
    shapes.push_back({"emb.pos", {cfg.max_seq_len, H}});
    shapes.push_back({"emb.mask", {1, H}});
    shapes.push_back({"emb.cls", {1, H}});
    shapes.push_back({"proj.text.w", {vocab.d_text, H}});
    shapes.push_back({"proj.text.b", {1, H}});
    shapes.push_back({"proj.prod.w", {5 * H, H}});
    shapes.push_back({"proj.prod.b", {1, H}});
    int n_blocks = cfg.share_layers ? 1 : cfg.layers;
    for (int l = 0; l < n_blocks; ++l) {
        std::string p = "block" + std::to_string(l) + ".";
        for (const char* w : {"wq", "wk", "wv", "wo"})
            shapes.push_back({p + "attn." + w, {H, H}});
        for (const char* b : {"bq", "bk", "bv", "bo"})
            shapes.push_back({p + "attn." + b, {1, H}});
        for (const char* ln : {"ln1", "ln2"}) {
            shapes.push_back({p + ln + ".g", {1, H}});
            shapes.push_back({p + ln + ".b", {1, H}});
        }
        shapes.push_back({p + "ffn.w1", {H, cfg.ffn_width()}});
        shapes.push_back({p + "ffn.b1", {1, cfg.ffn_width()}});
        shapes.push_back({p + "ffn.w2", {cfg.ffn_width(), H}});
        shapes.push_back({p + "ffn.b2", {1, H}});
    }
    shapes.push_back({"final_ln.g", {1, H}});
    shapes.push_back({"final_ln.b", {1, H}});
    int head_in = cfg.head_input_width();
    int head_mid = cfg.head_inner_width();
    for (int t = 0; t < kNumTasks; ++t) {
        std::string p = std::string("head.") + kTaskNames[t] + ".";
        shapes.push_back({p + "w1", {head_in, head_mid}});
        shapes.push_back({p + "b1", {1, head_mid}});
        shapes.push_back({p + "w2", {head_mid, vocab.task_size(t)}});
        shapes.push_back({p + "b2", {1, vocab.task_size(t)}});
    }
    return shapes;
}

EncoderParams init_params(const EncoderConfig& cfg, const VocabProfile& vocab, uint64_t seed) {
    cfg.validate();
    EncoderParams params;
    params.cfg = cfg;
    params.vocab = vocab;
    for (const auto& [name, shape] : encoder_tensor_shapes(cfg, vocab)) {
        Tensor t(shape.first, shape.second);
        bool ln_gain = name.size() >= 2 && name.substr(name.size() - 2) == ".g" &&
                       name.find("ln") != std::string::npos;
        std::string leaf_name = name.substr(name.rfind('.') + 1);
        bool bias = !leaf_name.empty() && leaf_name[0] == 'b';
        bool head_out = name.rfind("head.", 0) == 0 &&
                        (name.substr(name.size() - 3) == ".w2" ||
                         name.substr(name.size() - 3) == ".b2");
        if (ln_gain) {
            t.fill(1.0);
        } else if (bias || head_out) {
            // zero; head output layers zeroed so the untrained model emits
            // uniform class probabilities
        } else {
            Rng rng(derive_seed(seed, "init:" + name));
            t = Tensor::randn(shape.first, shape.second, 0.02, rng);
        }
        params.ps.tensors.emplace(name, std::move(t));
    }
    for (const auto& [name, t] : params.ps.tensors) {
        params.ps.opt_m.emplace(name, Tensor(t.rows, t.cols));
        params.ps.opt_v.emplace(name, Tensor(t.rows, t.cols));
    }
    return params;
}

size_t param_count_formula(const EncoderConfig& cfg, const VocabProfile& vocab) {
    size_t H = cfg.hidden;
    size_t emb = 0;
    for (int i = 0; i < 4; ++i) emb += static_cast<size_t>(vocab.cat[i]) * H;
    for (int f = 0; f < 5; ++f) emb += static_cast<size_t>(vocab.date_size(f)) * H;
    emb += static_cast<size_t>(cfg.max_seq_len) * H + 2 * H; // positional + mask + cls
    size_t proj = static_cast<size_t>(vocab.d_text) * H + H + 5 * H * H + H;
    size_t per_block = 4 * (H * H + H)              // attention
                       + 4 * H                      // two layer norms
                       + H * (4 * H) + 4 * H        // ffn in
                       + (4 * H) * H + H;           // ffn out
    size_t blocks = per_block * (cfg.share_layers ? 1 : cfg.layers);
    size_t final_ln = 2 * H;
    size_t heads = 0;
    size_t head_in = cfg.head_input_width();
    size_t head_mid = cfg.head_inner_width();
    for (int t = 0; t < kNumTasks; ++t) {
        size_t v = vocab.task_size(t);
        heads += head_in * head_mid + head_mid + head_mid * v + v;
    }
    return emb + proj + blocks + final_ln + heads;
}

ag::Var ParamBinding::at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::runtime_error("no bound parameter: " + name);
    return it->second;
}

ParamBinding bind_params(ag::Graph& g, const ParamSet& ps) {
    ParamBinding b;
    for (const auto& [name, t] : ps.tensors) b.vars.emplace(name, g.leaf(t));
    return b;
}

GradSet collect_grads(const ParamBinding& b) {
    GradSet grads;
    for (const auto& [name, var] : b.vars) grads.emplace(name, var->grad);
    return grads;
}

void adam_step(ParamSet& params, const GradSet& grads, double lr, double weight_decay,
               const AdamConfig& adam) {
    params.step += 1;
    double t = static_cast<double>(params.step);
    double bc1 = 1.0 - std::pow(adam.beta1, t);
    double bc2 = 1.0 - std::pow(adam.beta2, t);
    for (auto& [name, w] : params.tensors) {
        auto git = grads.find(name);
        if (git == grads.end()) throw std::runtime_error("adam_step: missing gradient " + name);
        const Tensor& grad = git->second;
        Tensor& m = params.opt_m.at(name);
        Tensor& v = params.opt_v.at(name);
        for (size_t i = 0; i < w.size(); ++i) {
            double gi = grad.v[i];
            m.v[i] = adam.beta1 * m.v[i] + (1.0 - adam.beta1) * gi;
            v.v[i] = adam.beta2 * v.v[i] + (1.0 - adam.beta2) * gi * gi;
            double mhat = m.v[i] / bc1;
            double vhat = v.v[i] / bc2;
            if (weight_decay > 0.0) w.v[i] -= lr * weight_decay * w.v[i];
            w.v[i] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
        }
    }
}

// --- forward -------------------------------------------------------------------

ag::Var compose_token_inputs(ag::Graph& g, const ParamBinding& b, const EncoderConfig& cfg,
                             const VocabProfile& vocab, const MaskedRow& row,
                             ag::Var cls_override) {
    int S = static_cast<int>(row.size());
    if (S > cfg.max_seq_len)
        throw std::runtime_error("compose_token_inputs: row longer than max_seq_len");
    std::vector<int> real_pos, masked_pos, pad_pos;
    int cls_pos = -1;
    for (int p = 0; p < S; ++p) {
        switch (row.plan[p]) {
        case MaskState::pad: pad_pos.push_back(p); break;
        case MaskState::cls:
            if (p != 0) throw std::runtime_error("compose_token_inputs: [CLS] must be position 0");
            cls_pos = p;
            break;
        case MaskState::masked: masked_pos.push_back(p); break;
        default: real_pos.push_back(p); break;
        }
    }

    std::vector<ag::Var> parts;
    std::vector<int> part_pos; // output position of each concatenated row

    if (!real_pos.empty()) {
        int n = static_cast<int>(real_pos.size());
        std::vector<ag::Var> cat_blocks;
        for (int lv = 0; lv < 4; ++lv) {
            std::vector<int> ids(n);
            for (int i = 0; i < n; ++i) {
                int id = row.tokens[real_pos[i]].cat[lv];
                if (id < 0 || id >= vocab.cat[lv])
                    throw std::runtime_error("compose_token_inputs: category id out of range");
                ids[i] = id;
            }
            cat_blocks.push_back(
                ag::gather_rows(g, b.at("emb.cat" + std::to_string(lv + 1)), std::move(ids)));
        }
        Tensor text_mat(n, vocab.d_text);
        for (int i = 0; i < n; ++i) {
            const auto& tv = row.tokens[real_pos[i]].text;
            if (static_cast<int>(tv.size()) != vocab.d_text)
                throw std::runtime_error("compose_token_inputs: text vector width mismatch");
            for (int j = 0; j < vocab.d_text; ++j) text_mat.at(i, j) = tv[j];
        }
        ag::Var x_text = ag::add_rowvec(
            g, ag::matmul(g, g.leaf(std::move(text_mat)), b.at("proj.text.w")),
            b.at("proj.text.b"));
        cat_blocks.push_back(x_text);
        ag::Var x_prod = ag::add_rowvec(
            g, ag::matmul(g, ag::concat_cols(g, cat_blocks), b.at("proj.prod.w")),
            b.at("proj.prod.b"));

        const char* date_names[5] = {"year", "month", "dom", "dow", "hour"};
        std::vector<ag::Var> date_blocks;
        for (int f = 0; f < 5; ++f) {
            std::vector<int> ids(n);
            for (int i = 0; i < n; ++i) {
                int id = row.tokens[real_pos[i]].date[f];
                if (id < 0 || id >= vocab.date_size(f))
                    throw std::runtime_error("compose_token_inputs: date id out of range");
                ids[i] = id;
            }
            date_blocks.push_back(
                ag::gather_rows(g, b.at(std::string("emb.date.") + date_names[f]), std::move(ids)));
        }
        ag::Var date_mean = ag::mean_vars(g, date_blocks);
        ag::Var pos = ag::gather_rows(g, b.at("emb.pos"), real_pos);
        parts.push_back(ag::mean_vars(g, {x_prod, date_mean, pos}));
        for (int p : real_pos) part_pos.push_back(p);
    }

    if (!masked_pos.empty()) {
        int n = static_cast<int>(masked_pos.size());
        ag::Var mask_rows = ag::gather_rows(g, b.at("emb.mask"), std::vector<int>(n, 0));
        ag::Var pos = ag::gather_rows(g, b.at("emb.pos"), masked_pos);
        parts.push_back(ag::mean_vars(g, {mask_rows, pos}));
        for (int p : masked_pos) part_pos.push_back(p);
    }

    if (cls_pos >= 0) {
        ag::Var content = cls_override ? cls_override
                                       : ag::gather_rows(g, b.at("emb.cls"), {0});
        if (content->val.rows != 1 || content->val.cols != cfg.hidden)
            throw std::runtime_error("compose_token_inputs: cls override must be 1 x H");
        ag::Var pos = ag::gather_rows(g, b.at("emb.pos"), {cls_pos});
        parts.push_back(ag::add(g, content, pos));
        part_pos.push_back(cls_pos);
    }

    if (!pad_pos.empty()) {
        parts.push_back(g.leaf(Tensor(static_cast<int>(pad_pos.size()), cfg.hidden)));
        for (int p : pad_pos) part_pos.push_back(p);
    }

    ag::Var stacked = parts.size() == 1 ? parts[0] : ag::concat_rows(g, parts);
    std::vector<int> perm(S);
    for (int i = 0; i < S; ++i) perm[part_pos[i]] = i;
    return ag::gather_rows(g, stacked, perm);
}

ag::Var encoder_forward(ag::Graph& g, const ParamBinding& b, const EncoderConfig& cfg,
                        ag::Var inputs, const MaskedRow& row, const ForwardOptions& opt) {
    int S = inputs->val.rows;
    if (inputs->val.cols != cfg.hidden)
        throw std::runtime_error("encoder_forward: input width mismatch");
    // exclude padded key positions from every query's attention
    Tensor key_mask(S, S);
    for (int j = 0; j < S; ++j)
        if (row.plan[j] == MaskState::pad)
            for (int i = 0; i < S; ++i) key_mask.at(i, j) = -1e9;

    bool use_dropout = opt.train && cfg.dropout > 0.0 && opt.dropout_rng;
    auto maybe_dropout = [&](ag::Var x) {
        return use_dropout ? ag::dropout(g, x, cfg.dropout, *opt.dropout_rng) : x;
    };

    ag::Var x = maybe_dropout(inputs);
    int dh = cfg.head_dim();
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = block_prefix(cfg, l);
        ag::Var h1 = ag::layernorm(g, x, b.at(p + "ln1.g"), b.at(p + "ln1.b"));
        ag::Var q = ag::add_rowvec(g, ag::matmul(g, h1, b.at(p + "attn.wq")), b.at(p + "attn.bq"));
        ag::Var k = ag::add_rowvec(g, ag::matmul(g, h1, b.at(p + "attn.wk")), b.at(p + "attn.bk"));
        ag::Var v = ag::add_rowvec(g, ag::matmul(g, h1, b.at(p + "attn.wv")), b.at(p + "attn.bv"));
        std::vector<ag::Var> head_outs;
        for (int hix = 0; hix < cfg.heads; ++hix) {
            ag::Var qh = ag::slice_cols(g, q, hix * dh, dh);
            ag::Var kh = ag::slice_cols(g, k, hix * dh, dh);
            ag::Var vh = ag::slice_cols(g, v, hix * dh, dh);
            ag::Var scores =
                ag::scale(g, ag::matmul(g, qh, ag::transpose(g, kh)), inv_sqrt_dh);
            scores = ag::add_const(g, scores, key_mask);
            ag::Var attn = ag::softmax_rows(g, scores);
            head_outs.push_back(ag::matmul(g, attn, vh));
        }
        ag::Var attn_out = ag::add_rowvec(
            g, ag::matmul(g, ag::concat_cols(g, head_outs), b.at(p + "attn.wo")),
            b.at(p + "attn.bo"));
        x = ag::add(g, x, maybe_dropout(attn_out));
        ag::Var h2 = ag::layernorm(g, x, b.at(p + "ln2.g"), b.at(p + "ln2.b"));
        ag::Var f = ag::add_rowvec(g, ag::matmul(g, h2, b.at(p + "ffn.w1")), b.at(p + "ffn.b1"));
        f = ag::gelu(g, f);
        f = ag::add_rowvec(g, ag::matmul(g, f, b.at(p + "ffn.w2")), b.at(p + "ffn.b2"));
        x = ag::add(g, x, maybe_dropout(f));
    }
    return ag::layernorm(g, x, b.at("final_ln.g"), b.at("final_ln.b"));
}

ag::Var encode_row_hidden(ag::Graph& g, const ParamBinding& b, const EncoderConfig& cfg,
                          const VocabProfile& vocab, const MaskedRow& row,
                          const ForwardOptions& opt, ag::Var cls_override) {
    ag::Var inputs = compose_token_inputs(g, b, cfg, vocab, row, cls_override);
    return encoder_forward(g, b, cfg, inputs, row, opt);
}

ag::Var head_forward(ag::Graph& g, const ParamBinding& b, const EncoderConfig& cfg,
                     const VocabProfile& vocab, int task, ag::Var inputs) {
    if (task < 0 || task >= kNumTasks) throw std::runtime_error("head_forward: bad task");
    std::string p = std::string("head.") + kTaskNames[task] + ".";
    if (inputs->val.cols != cfg.head_input_width())
        throw std::runtime_error("head_forward: input width mismatch");
    ag::Var h = ag::add_rowvec(g, ag::matmul(g, inputs, b.at(p + "w1")), b.at(p + "b1"));
    h = ag::gelu(g, h);
    return ag::add_rowvec(g, ag::matmul(g, h, b.at(p + "w2")), b.at(p + "b2"));
}

ag::Var mpp_loss(ag::Graph& g, const ParamBinding& b, const EncoderConfig& cfg,
                 const VocabProfile& vocab, const std::vector<ag::Var>& hiddens,
                 const MaskedBatch& batch, LossBreakdown* breakdown) {
    if (hiddens.size() != batch.rows.size())
        throw std::runtime_error("mpp_loss: hidden count mismatch");
    // stack head inputs for all chosen positions across the batch
    std::vector<ag::Var> input_blocks;
    std::vector<std::array<int, kNumTasks>> stacked_labels;
    for (size_t r = 0; r < batch.rows.size(); ++r) {
        const MaskedRow& row = batch.rows[r];
        std::vector<int> chosen;
        for (int p = 0; p < static_cast<int>(row.size()); ++p)
            if (is_chosen(row.plan[p])) {
                chosen.push_back(p);
                stacked_labels.push_back(row.labels[p]);
            }
        if (chosen.empty()) continue;
        if (cfg.cls_variant) {
            if (!row.has_cls)
                throw std::runtime_error("mpp_loss: CLS variant requires a [CLS] token");
            ag::Var cls_rows = ag::gather_rows(
                g, hiddens[r], std::vector<int>(chosen.size(), 0));
            ag::Var pos_rows = ag::gather_rows(g, b.at("emb.pos"), chosen);
            input_blocks.push_back(ag::concat_cols(g, {cls_rows, pos_rows}));
        } else {
            input_blocks.push_back(ag::gather_rows(g, hiddens[r], chosen));
        }
    }
    if (input_blocks.empty())
        throw std::runtime_error("mpp_loss: no chosen positions in batch; re-draw masking");
    ag::Var head_inputs =
        input_blocks.size() == 1 ? input_blocks[0] : ag::concat_rows(g, input_blocks);

    std::vector<ag::Var> task_losses;
    for (int t = 0; t < kNumTasks; ++t) {
        std::vector<std::pair<int, int>> targets;
        for (size_t i = 0; i < stacked_labels.size(); ++i)
            if (stacked_labels[i][t] >= 0)
                targets.emplace_back(static_cast<int>(i), stacked_labels[i][t]);
        if (breakdown) breakdown->chosen_counts[t] = static_cast<int>(targets.size());
        if (targets.empty()) {
            if (breakdown) breakdown->per_task[t] = 0.0;
            continue;
        }
        ag::Var logits = head_forward(g, b, cfg, vocab, t, head_inputs);
        ag::Var ce = ag::cross_entropy_rows(g, logits, std::move(targets));
        if (breakdown) breakdown->per_task[t] = ce->val.v[0];
        task_losses.push_back(ce);
    }
    ag::Var total = ag::mean_vars(g, task_losses);
    ag::check_finite(total->val, "mpp_loss");
    if (breakdown) breakdown->total = total->val.v[0];
    return total;
}

double uniform_mpp_loss(const VocabProfile& vocab) {
    double sum = 0.0;
    for (int t = 0; t < kNumTasks; ++t) sum += std::log(static_cast<double>(vocab.task_size(t)));
    return sum / kNumTasks;
}

// --- checkpoints ----------------------------------------------------------------

namespace {

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(buf), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(buf), 8);
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& is) {
    unsigned char buf[4];
    if (!is.read(reinterpret_cast<char*>(buf), 4))
        throw std::runtime_error("checkpoint: truncated file");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
    return v;
}

uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8))
        throw std::runtime_error("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

std::string read_string(std::istream& is) {
    uint32_t len = read_u32(is);
    std::string s(len, '\0');
    if (len && !is.read(s.data(), len)) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_string(os, name);
    write_u32(os, 2); // rank
    write_u64(os, static_cast<uint64_t>(t.rows));
    write_u64(os, static_cast<uint64_t>(t.cols));
    for (double x : t.v) {
        uint64_t bits;
        std::memcpy(&bits, &x, 8);
        write_u64(os, bits);
    }
}

std::pair<std::string, Tensor> read_tensor(std::istream& is) {
    std::string name = read_string(is);
    uint32_t rank = read_u32(is);
    if (rank != 2) throw std::runtime_error("checkpoint: unsupported tensor rank");
    int rows = static_cast<int>(read_u64(is));
    int cols = static_cast<int>(read_u64(is));
    Tensor t(rows, cols);
    for (auto& x : t.v) {
        uint64_t bits = read_u64(is);
        std::memcpy(&x, &bits, 8);
    }
    return {std::move(name), std::move(t)};
}

} // namespace

void save_checkpoint(const std::string& path, const EncoderParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write("O4AC", 4);
    write_u32(os, 1);
    write_u64(os, params.cfg.digest());
    write_u64(os, params.vocab.digest());
    write_u64(os, static_cast<uint64_t>(params.ps.step));
    write_string(os, params.cfg.serialize());
    write_string(os, params.vocab.serialize());
    uint32_t count = static_cast<uint32_t>(params.ps.tensors.size() + params.ps.opt_m.size() +
                                           params.ps.opt_v.size());
    write_u32(os, count);
    for (const auto& [name, t] : params.ps.tensors) write_tensor(os, name, t);
    for (const auto& [name, t] : params.ps.opt_m) write_tensor(os, "opt.m." + name, t);
    for (const auto& [name, t] : params.ps.opt_v) write_tensor(os, "opt.v." + name, t);
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

EncoderParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "O4AC")
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = read_u32(is);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    uint64_t cfg_digest = read_u64(is);
    uint64_t vocab_digest = read_u64(is);
    uint64_t step = read_u64(is);
    EncoderParams params;
    params.cfg = EncoderConfig::deserialize(read_string(is));
    params.vocab = VocabProfile::deserialize(read_string(is));
    if (params.cfg.digest() != cfg_digest)
        throw std::runtime_error("checkpoint: config digest mismatch");
    if (params.vocab.digest() != vocab_digest)
        throw std::runtime_error("checkpoint: vocab digest mismatch");
    params.ps.step = static_cast<int64_t>(step);
    uint32_t count = read_u32(is);
    for (uint32_t i = 0; i < count; ++i) {
        auto [name, t] = read_tensor(is);
        if (name.rfind("opt.m.", 0) == 0) params.ps.opt_m.emplace(name.substr(6), std::move(t));
        else if (name.rfind("opt.v.", 0) == 0)
            params.ps.opt_v.emplace(name.substr(6), std::move(t));
        else params.ps.tensors.emplace(std::move(name), std::move(t));
    }
    return params;
}

EncoderParams load_checkpoint_checked(const std::string& path, uint64_t expected_vocab_digest) {
    EncoderParams p = load_checkpoint(path);
    if (p.vocab.digest() != expected_vocab_digest)
        throw std::runtime_error("checkpoint vocab digest does not match corpus vocab: " + path);
    return p;
}

} // namespace o4a
