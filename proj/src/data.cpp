#include "isrf/data.hpp"

#include "isrf/io.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

using nlohmann::json;

namespace isrf::data {

InteractionDataset parse_interactions(const std::string& text, const std::string& source_name) {
    InteractionDataset ds;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::string user_raw;
        ls >> user_raw;
        std::vector<std::string> items;
        std::string tok;
        while (ls >> tok) items.push_back(tok);
        if (items.empty()) {
            throw Error(source_name + ":" + std::to_string(line_no) +
                        ": malformed line, expected \"user item item ...\"");
        }
        if (ds.user_index.count(user_raw)) {
            throw Error(source_name + ":" + std::to_string(line_no) + ": duplicate user id " +
                        user_raw);
        }
        if (items.size() < 3) {
            ++ds.rejected_users;
            continue;
        }
        const int u = static_cast<int>(ds.user_ids.size());
        ds.user_index.emplace(user_raw, u);
        ds.user_ids.push_back(user_raw);
        std::vector<int> seq;
        seq.reserve(items.size());
        for (const auto& raw : items) {
            auto it = ds.item_index.find(raw);
            int v;
            if (it == ds.item_index.end()) {
                v = static_cast<int>(ds.item_ids.size());
                ds.item_index.emplace(raw, v);
                ds.item_ids.push_back(raw);
            } else {
                v = it->second;
            }
            seq.push_back(v);
        }
        ds.sequences.push_back(std::move(seq));
    }
    return ds;
}

InteractionDataset load_interactions(const std::string& path) {
    return parse_interactions(read_text_file(path), path);
}

Splits split_leave_one_out(const InteractionDataset& ds) {
    Splits sp;
    const int n = ds.num_users();
    sp.train.resize(n);
    sp.valid_target.resize(n);
    sp.test_target.resize(n);
    for (int u = 0; u < n; ++u) {
        const auto& seq = ds.sequences[u];
        if (seq.size() < 3) {
            throw Error("user " + ds.user_ids[u] + " has fewer than 3 interactions (" +
                        std::to_string(seq.size()) + ")");
        }
        sp.train[u].assign(seq.begin(), seq.end() - 2);
        sp.valid_target[u] = seq[seq.size() - 2];
        sp.test_target[u] = seq.back();
    }
    return sp;
}

std::vector<CandidateSet> sample_dr_candidates(const InteractionDataset& ds, const Splits& splits,
                                               int n_neg, std::uint64_t seed,
                                               PositiveSource positive) {
    std::vector<CandidateSet> out;
    out.reserve(ds.num_users());
    Rng rng(seed);
    const int n_items = ds.num_items();
    std::vector<char> in_history(n_items, 0);
    for (int u = 0; u < ds.num_users(); ++u) {
        const auto& seq = ds.sequences[u];
        for (int v : seq) in_history[v] = 1;
        std::vector<int> eligible;
        eligible.reserve(n_items - 1);
        for (int v = 0; v < n_items; ++v)
            if (!in_history[v]) eligible.push_back(v);
        if (static_cast<int>(eligible.size()) < n_neg) {
            throw Error("user " + ds.user_ids[u] + ": only " + std::to_string(eligible.size()) +
                        " items eligible as negatives, need " + std::to_string(n_neg));
        }
        CandidateSet cs;
        cs.user = u;
        cs.seed = seed;
        if (positive == PositiveSource::TestTarget) {
            cs.positive = splits.test_target[u];
        } else if (positive == PositiveSource::ValidTarget) {
            cs.positive = splits.valid_target[u];
        } else {
            const auto& train = splits.train[u];
            cs.positive = train[rng.below(train.size())];
        }
        cs.negatives = rng.sample_without_replacement(std::move(eligible),
                                                      static_cast<std::size_t>(n_neg));
        out.push_back(std::move(cs));
        for (int v : seq) in_history[v] = 0;
    }
    return out;
}

void export_splits(const std::string& path, const InteractionDataset& ds, const Splits& splits) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    for (int u = 0; u < ds.num_users(); ++u) {
        json rec = {{"user", u},
                    {"train", splits.train[u]},
                    {"valid", splits.valid_target[u]},
                    {"test", splits.test_target[u]}};
        out << rec.dump() << "\n";
    }
}

void export_candidates(const std::string& path, const InteractionDataset&,
                       const std::vector<CandidateSet>& candidates) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    for (const auto& cs : candidates) {
        json rec = {{"user", cs.user}, {"positive", cs.positive}, {"negatives", cs.negatives}};
        out << rec.dump() << "\n";
    }
}

}  // namespace isrf::data
