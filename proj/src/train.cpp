#include "isrf/train.hpp"

#include "isrf/eval.hpp"
#include "isrf/io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

using nlohmann::json;

namespace isrf::train {

namespace {

using data::CandidateSet;
using data::PositiveSource;

constexpr double kNormFloor = 1e-8;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Canonical trainable-tensor walk; Adam moments, checkpoint sections and the
// grad norm all share this order.
template <typename State, typename Grads, typename F>
void for_each_trainable(State& s, Grads& g, F&& f) {
    f("e_u", s.e_u, g.e_u);
    f("h0", s.h0, g.h0);
    f("adapter_w1", s.adapter.w1, g.adapter.w1);
    f("adapter_b1", s.adapter.b1, g.adapter.b1);
    f("adapter_w2", s.adapter.w2, g.adapter.w2);
    f("adapter_b2", s.adapter.b2, g.adapter.b2);
    f("prompts", s.prompts, g.prompts);
    f("omega0", s.omega0, g.omega0);
    f("omega_s", s.omega_s, g.omega_s);
    f("tok_emb", s.backbone.tok_emb, g.backbone.tok_emb);
    f("wq_enc", s.backbone.wq_enc, g.backbone.wq_enc);
    f("wk_enc", s.backbone.wk_enc, g.backbone.wk_enc);
    f("wv_enc", s.backbone.wv_enc, g.backbone.wv_enc);
    f("wo_enc", s.backbone.wo_enc, g.backbone.wo_enc);
    f("wq_dec", s.backbone.wq_dec, g.backbone.wq_dec);
    f("wk_dec", s.backbone.wk_dec, g.backbone.wk_dec);
    f("wv_dec", s.backbone.wv_dec, g.backbone.wv_dec);
    f("wo_dec", s.backbone.wo_dec, g.backbone.wo_dec);
    f("wq_x", s.backbone.wq_x, g.backbone.wq_x);
    f("wk_x", s.backbone.wk_x, g.backbone.wk_x);
    f("wv_x", s.backbone.wv_x, g.backbone.wv_x);
    f("wo_x", s.backbone.wo_x, g.backbone.wo_x);
    f("w_out", s.backbone.w_out, g.backbone.w_out);
    f("b_out", s.backbone.b_out, g.backbone.b_out);
}

Mat gaussian_matrix(int rows, int cols, double scale, std::uint64_t seed) {
    Rng rng(seed);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.gaussian();
    return m;
}

std::uint64_t hash_matrix(const Mat& m, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
}

std::uint64_t frozen_hash(const ModelState& s) {
    return hash_matrix(s.fixed_projection, hash_matrix(s.s_v_reduced));
}

}  // namespace

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::UPos: return "uPos";
        case Variant::UNeg: return "uNeg";
        case Variant::VPos: return "vPos";
        case Variant::VNeg: return "vNeg";
    }
    throw Error("unknown variant");
}

Variant variant_from_name(const std::string& name) {
    if (name == "full") return Variant::Full;
    if (name == "uPos") return Variant::UPos;
    if (name == "uNeg") return Variant::UNeg;
    if (name == "vPos") return Variant::VPos;
    if (name == "vNeg") return Variant::VNeg;
    throw Error("unknown variant: " + name);
}

TrainConfig config_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    TrainConfig cfg;
    const std::string task = j.value("task", std::string("sr"));
    if (task == "sr") {
        cfg.task = genrec::Task::SR;
    } else if (task == "dr") {
        cfg.task = genrec::Task::DR;
    } else {
        throw Error("config: task must be \"sr\" or \"dr\", got \"" + task + "\"");
    }
    cfg.layers = j.value("layers", cfg.layers);
    cfg.layers_user = j.value("layers_user", cfg.layers_user);
    cfg.k = j.value("k", cfg.k);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.beta = j.value("beta", cfg.beta);
    cfg.d_m = j.value("d_m", cfg.d_m);
    cfg.d = j.value("d", cfg.d);
    cfg.n_prompt = j.value("n_prompt", cfg.n_prompt);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.patience = j.value("patience", cfg.patience);
    cfg.n_neg = j.value("n_neg", cfg.n_neg);
    cfg.max_history = j.value("max_history", cfg.max_history);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.eval_beam = j.value("eval_beam", cfg.eval_beam);
    cfg.no_distill = j.value("no_distill", cfg.no_distill);
    cfg.no_seq_loss = j.value("no_seq_loss", cfg.no_seq_loss);
    cfg.no_item_semantics = j.value("no_item_semantics", cfg.no_item_semantics);
    cfg.no_adapter = j.value("no_adapter", cfg.no_adapter);
    cfg.variant = variant_from_name(j.value("variant", std::string("full")));
    const std::string denom = j.value("distill_denominator", std::string("diagonal"));
    if (denom == "diagonal") {
        cfg.distill_denominator = align::DistillDenominator::Diagonal;
    } else if (denom == "cross") {
        cfg.distill_denominator = align::DistillDenominator::Cross;
    } else {
        throw Error("config: distill_denominator must be \"diagonal\" or \"cross\"");
    }
    const std::string sym = j.value("relation_symmetrize", std::string("union"));
    if (sym == "union") {
        cfg.relation_symmetrize = graphs::RelationSymmetrize::Union;
    } else if (sym == "none") {
        cfg.relation_symmetrize = graphs::RelationSymmetrize::None;
    } else {
        throw Error("config: relation_symmetrize must be \"union\" or \"none\"");
    }
    const std::string act = j.value("adapter_activation", std::string("none"));
    if (act == "none") {
        cfg.adapter_activation = embed::AdapterActivation::None;
    } else if (act == "relu") {
        cfg.adapter_activation = embed::AdapterActivation::Relu;
    } else {
        throw Error("config: adapter_activation must be \"none\" or \"relu\"");
    }
    cfg.gen_weight = j.value("gen_weight", cfg.gen_weight);
    cfg.align_weight = j.value("align_weight", cfg.align_weight);

    if (cfg.layers < 0 || cfg.layers_user < 0 || cfg.k < 0) {
        throw Error("config: layer counts and k must be nonnegative");
    }
    if (cfg.tau <= 0 || cfg.d_m <= 0 || cfg.d <= 0 || cfg.n_prompt <= 0 || cfg.batch_size <= 0 ||
        cfg.max_epochs <= 0 || cfg.patience <= 0 || cfg.n_neg <= 0 || cfg.max_history <= 0 ||
        cfg.eval_beam <= 0 || cfg.learning_rate < 0) {
        throw Error("config: numeric fields must be positive");
    }
    return cfg;
}

std::string config_to_json(const TrainConfig& cfg) {
    json j;
    j["task"] = cfg.task == genrec::Task::SR ? "sr" : "dr";
    j["layers"] = cfg.layers;
    j["layers_user"] = cfg.layers_user;
    j["k"] = cfg.k;
    j["tau"] = cfg.tau;
    j["beta"] = cfg.beta;
    j["d_m"] = cfg.d_m;
    j["d"] = cfg.d;
    j["n_prompt"] = cfg.n_prompt;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["max_epochs"] = cfg.max_epochs;
    j["patience"] = cfg.patience;
    j["n_neg"] = cfg.n_neg;
    j["max_history"] = cfg.max_history;
    j["seed"] = cfg.seed;
    j["eval_beam"] = cfg.eval_beam;
    j["no_distill"] = cfg.no_distill;
    j["no_seq_loss"] = cfg.no_seq_loss;
    j["no_item_semantics"] = cfg.no_item_semantics;
    j["no_adapter"] = cfg.no_adapter;
    j["variant"] = variant_name(cfg.variant);
    j["distill_denominator"] =
        cfg.distill_denominator == align::DistillDenominator::Diagonal ? "diagonal" : "cross";
    j["relation_symmetrize"] =
        cfg.relation_symmetrize == graphs::RelationSymmetrize::Union ? "union" : "none";
    j["adapter_activation"] =
        cfg.adapter_activation == embed::AdapterActivation::None ? "none" : "relu";
    j["gen_weight"] = cfg.gen_weight;
    j["align_weight"] = cfg.align_weight;
    return j.dump(2);
}

TrainData prepare_train_data(data::InteractionDataset dataset, const Mat& s_u_raw,
                             const Mat& s_v_raw, const TrainConfig& cfg) {
    TrainData td;
    td.dataset = std::move(dataset);
    td.splits = data::split_leave_one_out(td.dataset);
    td.interaction = graphs::build_interaction_graph(td.dataset, td.splits);
    if (s_u_raw.rows() != td.dataset.num_users()) {
        throw Error("prepare_train_data: S_u row count does not match user count");
    }
    if (s_v_raw.rows() != td.dataset.num_items()) {
        throw Error("prepare_train_data: S_v row count does not match item count");
    }
    td.relation_picks = graphs::topk_cosine_picks(s_u_raw, cfg.k);
    td.relation = graphs::build_user_relation(s_u_raw, cfg.k, cfg.relation_symmetrize);

    Mat s_v = s_v_raw;
    if (cfg.no_item_semantics) {
        // Ablation: item semantics replaced by seeded noise of the same shape.
        s_v = gaussian_matrix(static_cast<int>(s_v_raw.rows()), static_cast<int>(s_v_raw.cols()),
                              1.0, cfg.seed ^ 0x5eedULL);
    }
    EmbeddingMatrix raw{s_v, Space::Raw, false};
    const embed::PcaModel pca = embed::pca_fit(raw, cfg.d_m);
    td.s_v_reduced = embed::pca_transform(pca, raw).data;

    if (cfg.task == genrec::Task::DR) {
        td.train_candidates = data::sample_dr_candidates(td.dataset, td.splits, cfg.n_neg,
                                                         cfg.seed ^ 0xA11CEULL,
                                                         PositiveSource::TrainItem);
        td.valid_candidates = data::sample_dr_candidates(td.dataset, td.splits, cfg.n_neg,
                                                         cfg.seed ^ 0xB0BULL,
                                                         PositiveSource::ValidTarget);
        td.eval_candidates = data::sample_dr_candidates(td.dataset, td.splits, cfg.n_neg,
                                                        cfg.seed ^ 0xCAFEULL,
                                                        PositiveSource::TestTarget);
    }
    return td;
}

PromptSpace::PromptSpace(int n_users, int n_items) : tokenizer(n_users, n_items) {
    tokenizer.register_template("predict next item for user from history :");
    tokenizer.register_template("select target for user from candidates :");
}

std::string PromptSpace::sr_prompt(int user, const std::vector<int>& history, int max_history) {
    std::ostringstream os;
    os << "predict next item for user_" << user << " from history :";
    const int n = static_cast<int>(history.size());
    for (int i = std::max(0, n - max_history); i < n; ++i) os << " item_" << history[i];
    return os.str();
}

std::string PromptSpace::dr_prompt(int user, const std::vector<int>& candidates) {
    std::ostringstream os;
    os << "select target for user_" << user << " from candidates :";
    for (int v : candidates) os << " item_" << v;
    return os.str();
}

ModelState init_state(const TrainConfig& cfg, const TrainData& data) {
    const int n_users = data.dataset.num_users();
    const int n_items = data.dataset.num_items();
    if ((cfg.d + cfg.d_m) % 2 != 0) {
        throw Error("init_state: d + d_m must be even for the adapter hidden width");
    }
    ModelState s;
    s.e_u = gaussian_matrix(n_users, cfg.d, 0.1, cfg.seed ^ 1);
    s.h0 = gaussian_matrix(n_users, cfg.d, 0.1, cfg.seed ^ 2);
    s.adapter = embed::adapter_init(cfg.d_m, cfg.d, cfg.seed ^ 3);
    s.prompts = gaussian_matrix(cfg.n_prompt, cfg.d, 0.1, cfg.seed ^ 4);
    s.omega0 = gaussian_matrix(cfg.d, 1, 0.1, cfg.seed ^ 5).col(0);
    s.omega_s = gaussian_matrix(n_items + 1, cfg.d, 0.1, cfg.seed ^ 6);
    const PromptSpace ps(n_users, n_items);
    s.backbone = genrec::backbone_init(ps.tokenizer.vocab_size(), cfg.d, cfg.seed ^ 7);
    s.s_v_reduced = data.s_v_reduced;
    s.fixed_projection =
        gaussian_matrix(cfg.d_m, cfg.d, 1.0 / std::sqrt(static_cast<double>(cfg.d_m)),
                        cfg.seed ^ 8);
    BatchGrads g0 = batch_grads_zero(s);
    for_each_trainable(s, g0, [&](const char*, const auto& param, const auto&) {
        Moments mo;
        mo.m = Mat::Zero(param.rows(), param.cols());
        mo.v = mo.m;
        s.moments.push_back(std::move(mo));
    });
    return s;
}

BatchGrads batch_grads_zero(const ModelState& state) {
    BatchGrads g;
    g.e_u = Mat::Zero(state.e_u.rows(), state.e_u.cols());
    g.h0 = Mat::Zero(state.h0.rows(), state.h0.cols());
    g.adapter.w1 = Mat::Zero(state.adapter.w1.rows(), state.adapter.w1.cols());
    g.adapter.b1 = Vec::Zero(state.adapter.b1.size());
    g.adapter.w2 = Mat::Zero(state.adapter.w2.rows(), state.adapter.w2.cols());
    g.adapter.b2 = Vec::Zero(state.adapter.b2.size());
    g.prompts = Mat::Zero(state.prompts.rows(), state.prompts.cols());
    g.omega0 = Vec::Zero(state.omega0.size());
    g.omega_s = Mat::Zero(state.omega_s.rows(), state.omega_s.cols());
    g.backbone = genrec::backbone_grads_zero(state.backbone);
    return g;
}

EpochContext refresh_context(const ModelState& state, const TrainData& data,
                             const TrainConfig& cfg) {
    EpochContext ctx;
    ctx.h = graphs::propagate_user_graph(data.relation, state.h0, cfg.layers_user).averaged;
    ctx.tables.omega0 = state.omega0;
    ctx.tables.omega_s = state.omega_s;
    const int d = static_cast<int>(state.prompts.cols());
    if (cfg.task == genrec::Task::DR) {
        Mat e_v = cfg.no_adapter
                      ? Mat(state.s_v_reduced * state.fixed_projection)
                      : embed::adapter_forward(state.s_v_reduced, state.adapter,
                                               cfg.adapter_activation);
        Mat e0(state.e_u.rows() + e_v.rows(), d);
        e0 << state.e_u, e_v;
        ctx.e_tilde = graphs::lightgcn_propagate(data.interaction, e0, cfg.layers).averaged;
        ctx.tables.omega_t = ctx.e_tilde;
    } else {
        ctx.tables.omega_t = Mat::Zero(0, d);
    }
    return ctx;
}

BatchResult total_loss(const ModelState& state, const EpochContext& ctx, const TrainData& data,
                       const TrainConfig& cfg, const PromptSpace& prompts,
                       const std::vector<int>& batch_users) {
    BatchResult r;
    r.grads = batch_grads_zero(state);
    const auto& tok = prompts.tokenizer;
    const int d = static_cast<int>(state.prompts.cols());
    const int n_users = data.dataset.num_users();
    const int batch = static_cast<int>(batch_users.size());
    const bool dr = cfg.task == genrec::Task::DR;

    // ---- generation loss -------------------------------------------------
    std::vector<Mat> logits(batch);
    std::vector<std::vector<int>> targets(batch), token_lists(batch), zs(batch);
    std::vector<genrec::ForwardCache> caches(batch);
    for (int b = 0; b < batch; ++b) {
        const int u = batch_users[b];
        std::string text;
        int target_item;
        if (dr) {
            const CandidateSet& cs = data.train_candidates.at(u);
            std::vector<int> cands = cs.negatives;
            cands.push_back(cs.positive);
            Rng sh(cs.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(u + 1)));
            sh.shuffle(cands);
            target_item = cs.positive;
            text = PromptSpace::dr_prompt(u, cands);
        } else {
            const auto& tr = data.splits.train[u];
            std::vector<int> hist(tr.begin(), tr.end() - 1);
            target_item = tr.back();
            text = PromptSpace::sr_prompt(u, hist, cfg.max_history);
        }
        const genrec::TokenizedInput ti = tok.tokenize(text, cfg.task);
        Mat xemb(static_cast<int>(ti.tokens.size()), d);
        for (std::size_t i = 0; i < ti.tokens.size(); ++i)
            xemb.row(static_cast<int>(i)) = state.backbone.tok_emb.row(ti.tokens[i]);
        const Mat xtilde =
            genrec::inject_inputs(xemb, state.prompts, ti.indices, ctx.tables, cfg.beta, cfg.task);
        std::vector<int> y = tok.item_token_sequence(target_item);
        y.push_back(tok.eos());
        std::vector<int> dec_in;
        dec_in.push_back(tok.bos());
        dec_in.insert(dec_in.end(), y.begin(), y.end() - 1);
        logits[b] = genrec::seq_model_forward(state.backbone, xtilde, dec_in, &caches[b]);
        targets[b] = std::move(y);
        token_lists[b] = ti.tokens;
        zs[b] = ti.indices;
    }
    const genrec::GenerationLoss gl = genrec::generation_loss(logits, targets);
    r.gen = gl.loss;

    Mat d_e_tilde;
    if (dr) d_e_tilde = Mat::Zero(ctx.e_tilde.rows(), d);
    for (int b = 0; b < batch; ++b) {
        const Mat d_logits = cfg.gen_weight * gl.d_logits[b];
        const Mat d_xtilde =
            genrec::seq_model_backward(state.backbone, caches[b], d_logits, r.grads.backbone);
        const genrec::InjectGrads ig =
            genrec::inject_backward(d_xtilde, zs[b], ctx.tables, cfg.beta, cfg.task);
        r.grads.prompts += ig.d_prompts;
        r.grads.omega0 += ig.d_omega0;
        if (dr) {
            d_e_tilde += ig.d_table;
        } else {
            r.grads.omega_s += ig.d_table;
        }
        for (std::size_t i = 0; i < token_lists[b].size(); ++i)
            r.grads.backbone.tok_emb.row(token_lists[b][i]) +=
                ig.d_token_embeddings.row(static_cast<int>(i));
    }

    // ---- alignment loss --------------------------------------------------
    const bool use_align = dr ? !cfg.no_distill : !cfg.no_seq_loss;
    if (use_align) {
        align::AlignBatch ab;
        ab.tau = cfg.tau;
        ab.teacher.resize(batch, d);
        ab.student.resize(batch, d);
        for (int b = 0; b < batch; ++b) {
            const int u = batch_users[b];
            bool floored = false;
            ab.teacher.row(b) = align::floor_norm(ctx.h.row(u), kNormFloor, &floored);
            if (floored) ++r.norm_floor_hits;
            Vec student;
            if (dr) {
                student = ctx.e_tilde.row(u);
            } else {
                std::vector<int> rows;
                rows.reserve(data.splits.train[u].size());
                for (int v : data.splits.train[u]) rows.push_back(1 + v);
                student = align::user_interest_from_sequence(state.omega_s, rows);
            }
            ab.student.row(b) = align::floor_norm(student, kNormFloor, &floored);
            if (floored) ++r.norm_floor_hits;
        }
        const align::LossGrad lg = dr ? align::loss_distill(ab, cfg.distill_denominator)
                                      : align::loss_seq(ab);
        r.align = lg.loss;
        if (dr) {
            // Teacher side is stop-gradient; only the student path flows.
            for (int b = 0; b < batch; ++b)
                d_e_tilde.row(batch_users[b]) += cfg.align_weight * lg.d_student.row(b);
        } else {
            Mat d_h = Mat::Zero(n_users, d);
            for (int b = 0; b < batch; ++b) {
                const int u = batch_users[b];
                d_h.row(u) += cfg.align_weight * lg.d_teacher.row(b);
                const auto& tr = data.splits.train[u];
                const double inv = 1.0 / static_cast<double>(tr.size());
                for (int v : tr)
                    r.grads.omega_s.row(1 + v) += cfg.align_weight * inv * lg.d_student.row(b);
            }
            r.grads.h0 += graphs::propagate_backward(data.relation, d_h, cfg.layers_user);
        }
    }

    if (dr) {
        const Mat d_e0 = graphs::propagate_backward(data.interaction, d_e_tilde, cfg.layers);
        r.grads.e_u += d_e0.topRows(n_users);
        if (!cfg.no_adapter) {
            const embed::AdapterGrads ag =
                embed::adapter_gradient(state.s_v_reduced, state.adapter,
                                        d_e0.bottomRows(data.dataset.num_items()),
                                        cfg.adapter_activation);
            r.grads.adapter.w1 += ag.w1;
            r.grads.adapter.b1 += ag.b1;
            r.grads.adapter.w2 += ag.w2;
            r.grads.adapter.b2 += ag.b2;
        }
    }

    r.total = cfg.gen_weight * r.gen + cfg.align_weight * r.align;
    return r;
}

namespace {

void adam_update(ModelState& state, BatchGrads& grads, double lr) {
    ++state.adam_step;
    const double t = static_cast<double>(state.adam_step);
    const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
    int i = 0;
    for_each_trainable(state, grads, [&](const char*, auto& param, const auto& grad) {
        Moments& mo = state.moments[static_cast<std::size_t>(i++)];
        const Mat g = grad;
        mo.m = kAdamBeta1 * mo.m + (1.0 - kAdamBeta1) * g;
        mo.v = kAdamBeta2 * mo.v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
        const Mat step =
            (lr * (mo.m.array() / bc1) / ((mo.v.array() / bc2).sqrt() + kAdamEps)).matrix();
        param -= step;
    });
}

double grad_norm(const ModelState& state, BatchGrads& grads) {
    double sq = 0.0;
    for_each_trainable(const_cast<ModelState&>(state), grads,
                       [&](const char*, const auto&, const auto& grad) {
                           sq += grad.squaredNorm();
                       });
    return std::sqrt(sq);
}

}  // namespace

EpochMetrics train_epoch(ModelState& state, const TrainData& data, const TrainConfig& cfg,
                         const PromptSpace& prompts) {
    const EpochContext ctx = refresh_context(state, data, cfg);
    std::vector<int> order(static_cast<std::size_t>(data.dataset.num_users()));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffler(cfg.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(state.epoch + 1)));
    shuffler.shuffle(order);

    EpochMetrics em;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const std::vector<int> batch(order.begin() + start, order.begin() + end);
        BatchResult r = total_loss(state, ctx, data, cfg, prompts, batch);
        if (!std::isfinite(r.total)) {
            std::ostringstream os;
            os << "non-finite loss at epoch " << state.epoch + 1 << " batch " << n_batches
               << ": gen=" << r.gen << " align=" << r.align;
            throw Error(os.str());
        }
        em.mean_total += r.total;
        em.mean_gen += r.gen;
        em.mean_align += r.align;
        em.grad_norm += grad_norm(state, r.grads);
        em.norm_floor_hits += r.norm_floor_hits;
        if (cfg.learning_rate > 0) adam_update(state, r.grads, cfg.learning_rate);
        ++n_batches;
    }
    if (n_batches > 0) {
        em.mean_total /= n_batches;
        em.mean_gen /= n_batches;
        em.mean_align /= n_batches;
        em.grad_norm /= n_batches;
    }
    ++state.epoch;
    return em;
}

double validate_hit10(const ModelState& state, const TrainData& data, const TrainConfig& cfg,
                      const PromptSpace& prompts) {
    return eval::evaluate(state, data, cfg, prompts, eval::Phase::Valid).h10;
}

FitResult fit(const TrainConfig& cfg, const TrainData& data, const Validator& validator) {
    ModelState state = init_state(cfg, data);
    const PromptSpace prompts(data.dataset.num_users(), data.dataset.num_items());
    const std::uint64_t frozen_before = frozen_hash(state);

    FitResult fr;
    double best = -1.0;
    int stale = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const EpochMetrics m = train_epoch(state, data, cfg, prompts);
        const double val = validator ? validator(state, data, cfg, prompts)
                                     : validate_hit10(state, data, cfg, prompts);
        fr.history.push_back(HistoryRow{epoch, m, val});
        if (val > best) {
            best = val;
            fr.best = state;
            fr.best_epoch = epoch;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    if (frozen_hash(state) != frozen_before || frozen_hash(fr.best) != frozen_before) {
        throw Error("fit: frozen tensors changed during training");
    }
    return fr;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "epoch,total,gen,align,grad_norm,norm_floor_hits,val_h10\n";
    for (const auto& row : history) {
        os << row.epoch << ',' << row.metrics.mean_total << ',' << row.metrics.mean_gen << ','
           << row.metrics.mean_align << ',' << row.metrics.grad_norm << ','
           << row.metrics.norm_floor_hits << ',' << row.val_hit10 << '\n';
    }
    return os.str();
}

void save_checkpoint(const std::string& path, const ModelState& state) {
    std::vector<NamedTensor> sections;
    BatchGrads dummy = batch_grads_zero(state);
    auto& mut = const_cast<ModelState&>(state);
    int i = 0;
    for_each_trainable(mut, dummy, [&](const char* name, const auto& param, const auto&) {
        sections.push_back(NamedTensor{name, Mat(param)});
        const Moments& mo = state.moments.at(static_cast<std::size_t>(i++));
        sections.push_back(NamedTensor{std::string("adam_m_") + name, mo.m});
        sections.push_back(NamedTensor{std::string("adam_v_") + name, mo.v});
    });
    sections.push_back(NamedTensor{"s_v_reduced", state.s_v_reduced});
    sections.push_back(NamedTensor{"fixed_projection", state.fixed_projection});
    Mat meta(1, 2);
    meta(0, 0) = static_cast<double>(state.adam_step);
    meta(0, 1) = static_cast<double>(state.epoch);
    sections.push_back(NamedTensor{"meta", meta});
    write_sections(path, sections, "f64");
}

ModelState load_checkpoint(const std::string& path) {
    std::map<std::string, Mat> by_name;
    for (auto& t : read_sections(path)) by_name.emplace(t.name, std::move(t.data));
    auto take = [&](const std::string& name) -> Mat {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("checkpoint missing section: " + name);
        return it->second;
    };
    ModelState s;
    BatchGrads dummy;  // shapes irrelevant, only names are walked
    dummy.backbone = genrec::BackboneGrads{};
    for_each_trainable(s, dummy, [&](const char* name, auto& param, const auto&) {
        const Mat m = take(name);
        if constexpr (std::is_same_v<std::decay_t<decltype(param)>, Vec>) {
            param = m.col(0);
        } else {
            param = m;
        }
        Moments mo;
        mo.m = take(std::string("adam_m_") + name);
        mo.v = take(std::string("adam_v_") + name);
        s.moments.push_back(std::move(mo));
    });
    s.s_v_reduced = take("s_v_reduced");
    s.fixed_projection = take("fixed_projection");
    const Mat meta = take("meta");
    s.adam_step = static_cast<long>(meta(0, 0));
    s.epoch = static_cast<int>(meta(0, 1));
    return s;
}

}  // namespace isrf::train
