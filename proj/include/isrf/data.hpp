#pragma once

#include "isrf/common.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace isrf::data {

struct InteractionDataset {
    std::vector<std::string> user_ids;  // dense index -> raw id
    std::vector<std::string> item_ids;
    std::unordered_map<std::string, int> user_index;  // raw id -> dense index
    std::unordered_map<std::string, int> item_index;
    std::vector<std::vector<int>> sequences;  // per user, chronological
    int rejected_users = 0;                   // dropped for having < 3 interactions

    int num_users() const { return static_cast<int>(sequences.size()); }
    int num_items() const { return static_cast<int>(item_ids.size()); }
};

struct Splits {
    std::vector<std::vector<int>> train;  // per user, all but the last two
    std::vector<int> valid_target;        // second-to-last interaction
    std::vector<int> test_target;         // last interaction
};

struct CandidateSet {
    int user = 0;
    int positive = 0;
    std::vector<int> negatives;
    std::uint64_t seed = 0;
};

// One user per line: "user_raw_id item_raw_id item_raw_id ...". Dense indices
// are assigned in first-appearance order. Users with fewer than 3 interactions
// are dropped and counted in rejected_users.
InteractionDataset load_interactions(const std::string& path);
InteractionDataset parse_interactions(const std::string& text, const std::string& source_name);

Splits split_leave_one_out(const InteractionDataset& ds);

// Which item plays the positive role in a candidate set.
enum class PositiveSource {
    TestTarget,   // evaluation protocol: held-out last interaction
    ValidTarget,  // validation protocol: second-to-last interaction
    TrainItem,    // training protocol: sampled from the user's history
};

// Negatives are drawn uniformly without replacement from V minus the user's
// full history; deterministic given the seed.
std::vector<CandidateSet> sample_dr_candidates(const InteractionDataset& ds, const Splits& splits,
                                               int n_neg, std::uint64_t seed,
                                               PositiveSource positive = PositiveSource::TestTarget);

// JSON lines exports, one record per user.
void export_splits(const std::string& path, const InteractionDataset& ds, const Splits& splits);
void export_candidates(const std::string& path, const InteractionDataset& ds,
                       const std::vector<CandidateSet>& candidates);

}  // namespace isrf::data
