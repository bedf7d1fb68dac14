#pragma once

#include "isrf/common.hpp"
#include "isrf/data.hpp"

#include <string>
#include <vector>

namespace isrf::graphs {

// Sparse adjacency in CSR form with D^{-1/2} A D^{-1/2} weights precomputed.
// Degree 0 is normalized as 0 (isolated nodes carry no weight).
struct NormalizedGraph {
    int n = 0;
    std::vector<int> row_ptr;       // size n+1
    std::vector<int> col_idx;       // size nnz
    std::vector<double> norm_values;  // size nnz
    std::vector<int> degree;        // per node
    bool symmetrized = true;

    int nnz() const { return static_cast<int>(col_idx.size()); }
};

struct PropagationResult {
    std::vector<Mat> layers;  // E^0 .. E^L
    Mat averaged;             // mean of all layers
};

// Bipartite user-item graph on |U|+|V| nodes (users first), one undirected
// edge per distinct user-item pair in the train split.
NormalizedGraph build_interaction_graph(const data::InteractionDataset& ds,
                                        const data::Splits& splits);

// E^{l+1} = Ahat E^l, averaged over layers 0..L.
PropagationResult lightgcn_propagate(const NormalizedGraph& g, const Mat& e0, int layers);

enum class RelationSymmetrize { Union, None };

struct RelationReport {
    std::vector<int> zero_norm_rows;  // rows treated as similarity 0 to all
};

// Per-user top-k cosine picks, self excluded, ties broken by smaller index.
std::vector<std::vector<int>> topk_cosine_picks(const Mat& user_embeddings, int k,
                                                RelationReport* report = nullptr);

// Top-k semantic user relation graph. Union mode symmetrizes the directed
// picks before D^{-1/2} R D^{-1/2}; None keeps the literal directed form with
// row/column degree normalization 1/sqrt(outdeg_i * indeg_j).
NormalizedGraph build_user_relation(const Mat& user_embeddings, int k,
                                    RelationSymmetrize mode = RelationSymmetrize::Union,
                                    RelationReport* report = nullptr);

// Same propagation kernel on the user-only node set.
inline PropagationResult propagate_user_graph(const NormalizedGraph& g, const Mat& h0,
                                              int layers) {
    return lightgcn_propagate(g, h0, layers);
}

// Backward of the averaged propagation output: the averaged operator is
// symmetric for symmetrized graphs, so the gradient is the same propagation
// applied to the upstream gradient. For directed graphs the transpose kernel
// is used.
Mat propagate_backward(const NormalizedGraph& g, const Mat& upstream, int layers);

void write_graph(const std::string& path, const NormalizedGraph& g);
NormalizedGraph read_graph(const std::string& path);

}  // namespace isrf::graphs
