#pragma once

#include "isrf/train.hpp"

#include <map>
#include <string>
#include <vector>

namespace isrf::eval {

// 1 iff target appears in the first k entries.
int hit_at_k(const std::vector<int>& ranked, int target, int k);

// Single relevant item: 1/log2(rank+1) if rank <= k else 0 (rank 1-based).
double ndcg_at_k(const std::vector<int>& ranked, int target, int k);

struct MetricRow {
    std::string task;
    std::string label;
    double h5 = 0.0, n5 = 0.0, h10 = 0.0, n10 = 0.0;
};

struct MetricTable {
    std::vector<MetricRow> rows;
    std::string to_csv() const;
    std::string to_text() const;  // aligned columns H@5 N@5 H@10 N@10
};

// Mean H@5/N@5/H@10/N@10 over per-user rankings; shared by both drivers.
MetricRow aggregate_ranked(const std::vector<std::vector<int>>& ranked,
                           const std::vector<int>& targets);

enum class Phase { Valid, Test };

// Per-user ranked item list from constrained beam search over the full item
// vocabulary (SR) or the candidate set (DR); beams decoding to the same item
// are merged keeping the best score.
std::vector<int> rank_items_sr(const train::ModelState& state, const train::PromptSpace& prompts,
                               const train::TrainConfig& cfg, int user,
                               const std::vector<int>& history, int beam,
                               const genrec::TokenTrie& item_trie);

std::vector<int> rank_items_dr(const train::ModelState& state, const train::EpochContext& ctx,
                               const train::PromptSpace& prompts, const train::TrainConfig& cfg,
                               const data::CandidateSet& candidates, int beam);

MetricRow evaluate_sr(const train::ModelState& state, const train::TrainData& data,
                      const train::TrainConfig& cfg, const train::PromptSpace& prompts,
                      Phase phase, int beam);

MetricRow evaluate_dr(const train::ModelState& state, const train::TrainData& data,
                      const train::TrainConfig& cfg, const train::PromptSpace& prompts,
                      Phase phase, int beam);

MetricRow evaluate(const train::ModelState& state, const train::TrainData& data,
                   const train::TrainConfig& cfg, const train::PromptSpace& prompts, Phase phase);

// Raw material for a full train+evaluate run; variants swap the embedding
// sources before graph construction.
struct EvalInputs {
    data::InteractionDataset dataset;
    Mat s_u, s_v;  // fused-description embeddings
    std::map<std::string, std::pair<Mat, Mat>> variant_embeddings;  // uPos/uNeg/vPos/vNeg
};

// Trains and evaluates one configuration end to end.
MetricRow run_single(const train::TrainConfig& cfg, const EvalInputs& in,
                     const std::string& label);

// Rows: full, w/o distill, w/o seq loss, w/o item semantics, w/o adapter.
MetricTable run_ablations(const train::TrainConfig& base, const EvalInputs& in);

// Rows: full plus the four semantic variants.
MetricTable run_variants(const train::TrainConfig& base, const EvalInputs& in);

// param is "Lprime" or "k"; one row per value, shared seed.
MetricTable sweep(const std::string& param, const std::vector<int>& values,
                  const train::TrainConfig& base, const EvalInputs& in);

// Neighbor case study: the user's semantic neighbors, their interacted-item
// category histograms, and the model's top-m recommendations. Categories
// default to the raw item ids when none are supplied.
std::string case_study(const train::ModelState& state, const train::TrainData& data,
                       const train::TrainConfig& cfg, const train::PromptSpace& prompts, int user,
                       int top_m, const std::vector<std::string>* item_categories = nullptr);

}  // namespace isrf::eval
