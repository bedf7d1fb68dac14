#pragma once

#include "isrf/align.hpp"
#include "isrf/data.hpp"
#include "isrf/embed.hpp"
#include "isrf/genrec.hpp"
#include "isrf/graphs.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace isrf::train {

enum class Variant { Full, UPos, UNeg, VPos, VNeg };
std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct TrainConfig {
    genrec::Task task = genrec::Task::SR;
    int layers = 2;         // L, interaction graph
    int layers_user = 3;    // L', user relation graph
    int k = 10;             // top-k similar users
    double tau = 0.2;
    double beta = 0.1;
    int d_m = 64;
    int d = 512;
    int n_prompt = 8;
    int batch_size = 64;
    double learning_rate = 1e-3;
    int max_epochs = 20;
    int patience = 5;
    int n_neg = 99;
    int max_history = 20;  // history tokens kept in SR prompts
    std::uint64_t seed = 1;
    int eval_beam = 20;

    // Ablations (reachable purely by config).
    bool no_distill = false;
    bool no_seq_loss = false;
    bool no_item_semantics = false;
    bool no_adapter = false;
    Variant variant = Variant::Full;

    align::DistillDenominator distill_denominator = align::DistillDenominator::Diagonal;
    graphs::RelationSymmetrize relation_symmetrize = graphs::RelationSymmetrize::Union;
    embed::AdapterActivation adapter_activation = embed::AdapterActivation::None;
    double gen_weight = 1.0;
    double align_weight = 1.0;
};

TrainConfig config_from_json(const std::string& json_text);
std::string config_to_json(const TrainConfig& cfg);

// Everything the trainer needs besides the parameters. Graphs are built once;
// the relation graph comes from the (possibly variant-swapped) S_u.
struct TrainData {
    data::InteractionDataset dataset;
    data::Splits splits;
    graphs::NormalizedGraph interaction;
    graphs::NormalizedGraph relation;
    std::vector<std::vector<int>> relation_picks;  // directed top-k picks per user
    Mat s_v_reduced;  // frozen PCA output (or its ablation replacement)
    std::vector<data::CandidateSet> train_candidates;  // DR training sets
    std::vector<data::CandidateSet> valid_candidates;  // DR validation (positive = valid_target)
    std::vector<data::CandidateSet> eval_candidates;   // DR test (positive = test_target)
};

// Applies PCA, the no_item_semantics / no_adapter ablations, and builds both
// graphs and DR candidate sets.
TrainData prepare_train_data(data::InteractionDataset dataset, const Mat& s_u_raw,
                             const Mat& s_v_raw, const TrainConfig& cfg);

// Adam moments for one tensor.
struct Moments {
    Mat m, v;
};

struct ModelState {
    Mat e_u;   // |U| x d, trainable user embeddings (DR path)
    Mat h0;    // |U| x d, initial user-graph representations
    embed::AdapterParams adapter;
    Mat prompts;                  // |P| x d
    Vec omega0;                   // d
    Mat omega_s;                  // (|V|+1) x d
    genrec::BackboneParams backbone;
    Mat s_v_reduced;              // frozen copy; hash-checked across fit
    // Fixed projection used instead of the adapter under no_adapter.
    Mat fixed_projection;         // d_m x d, frozen

    std::vector<Moments> moments;  // aligned with tensor_refs order
    long adam_step = 0;
    int epoch = 0;
};

ModelState init_state(const TrainConfig& cfg, const TrainData& data);

void save_checkpoint(const std::string& path, const ModelState& state);
ModelState load_checkpoint(const std::string& path);

// Tokenizer + prompt templates shared by training and evaluation.
struct PromptSpace {
    genrec::Tokenizer tokenizer;
    explicit PromptSpace(int n_users, int n_items);
    static std::string sr_prompt(int user, const std::vector<int>& history, int max_history);
    static std::string dr_prompt(int user, const std::vector<int>& candidates);
};

// Per-epoch refresh of the propagated representations (Algorithm-style outer
// loop granularity: once per epoch, not per batch).
struct EpochContext {
    Mat h;        // |U| x d
    Mat e_tilde;  // (|U|+|V|) x d, DR only
    genrec::WholeWordTables tables;
};
EpochContext refresh_context(const ModelState& state, const TrainData& data,
                             const TrainConfig& cfg);

struct BatchGrads {
    Mat e_u, h0;
    embed::AdapterGrads adapter;
    Mat prompts;
    Vec omega0;
    Mat omega_s;
    genrec::BackboneGrads backbone;
};
BatchGrads batch_grads_zero(const ModelState& state);

struct BatchResult {
    double total = 0.0;
    double gen = 0.0;
    double align = 0.0;
    BatchGrads grads;
    int norm_floor_hits = 0;
};

// Joint loss over one batch of users with exact gradients for every
// trainable tensor. Ablation flags zero the corresponding term.
BatchResult total_loss(const ModelState& state, const EpochContext& ctx, const TrainData& data,
                       const TrainConfig& cfg, const PromptSpace& prompts,
                       const std::vector<int>& batch_users);

struct EpochMetrics {
    double mean_total = 0.0;
    double mean_gen = 0.0;
    double mean_align = 0.0;
    double grad_norm = 0.0;
    int norm_floor_hits = 0;
};

EpochMetrics train_epoch(ModelState& state, const TrainData& data, const TrainConfig& cfg,
                         const PromptSpace& prompts);

struct HistoryRow {
    int epoch = 0;
    EpochMetrics metrics;
    double val_hit10 = 0.0;
};

struct FitResult {
    ModelState best;
    std::vector<HistoryRow> history;
    int best_epoch = 0;
};

// Validation metric evaluator; injected so tests can mock plateaus.
using Validator = std::function<double(const ModelState&, const TrainData&, const TrainConfig&,
                                       const PromptSpace&)>;

// Trains until validation H@10 fails to improve for `patience` consecutive
// epochs or max_epochs; returns the best-validation checkpoint.
FitResult fit(const TrainConfig& cfg, const TrainData& data,
              const Validator& validator = nullptr);

std::string history_csv(const std::vector<HistoryRow>& history);

// Default validator: task-appropriate H@10 against valid_target.
double validate_hit10(const ModelState& state, const TrainData& data, const TrainConfig& cfg,
                      const PromptSpace& prompts);

}  // namespace isrf::train
