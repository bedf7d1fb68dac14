#pragma once

#include "isrf/common.hpp"
#include "isrf/data.hpp"
#include "isrf/graphs.hpp"

#include <vector>

namespace isrf::synth {

struct SynthConfig {
    int n_users = 200;
    int n_items = 100;
    int n_groups = 4;
    int items_per_user = 8;
    double noise = 0.2;  // mixing weight in [0, 1]
    int embed_dim = 16;
    std::uint64_t seed = 1;
};

struct PlantedData {
    data::InteractionDataset dataset;
    EmbeddingMatrix user_embeddings;  // S_u, raw space
    EmbeddingMatrix item_embeddings;  // S_v, raw space
    // Independent redraws standing in for positive-only / negative-only
    // encoder outputs, so the semantic-variant harness has distinct sources.
    EmbeddingMatrix user_pos, user_neg, item_pos, item_neg;
    std::vector<int> user_group;
    std::vector<int> item_group;
};

// Users and items belong to latent groups with orthogonal unit centroids;
// embeddings mix centroid and unit Gaussian noise; interactions are sampled
// proportional to softmax affinity. Deterministic per seed.
PlantedData generate_planted(const SynthConfig& cfg);

// Fraction of relation-graph edges whose endpoints share a group.
double group_recovery_score(const graphs::NormalizedGraph& relation,
                            const std::vector<int>& user_group);

}  // namespace isrf::synth
