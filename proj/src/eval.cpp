#include "isrf/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

using nlohmann::json;

namespace isrf::eval {

namespace {

constexpr int kMaxMetricK = 10;  // largest K reported in MetricRow

// Longest item token sequence plus EOS; the beam length bound.
int max_decode_len(const genrec::Tokenizer& tok) {
    int longest = 0;
    for (int v = 0; v < tok.n_items(); ++v)
        longest = std::max(longest, static_cast<int>(tok.item_token_sequence(v).size()));
    return longest + 1;
}

genrec::TokenTrie item_trie_for(const genrec::Tokenizer& tok, const std::vector<int>& items) {
    genrec::TokenTrie trie;
    for (int v : items) {
        std::vector<int> seq = tok.item_token_sequence(v);
        seq.push_back(tok.eos());
        trie.insert(seq);
    }
    return trie;
}

// Beams that decode to the same item are merged keeping the best score; the
// incoming list is already sorted by score desc, ties lexicographic.
std::vector<int> dedup_to_items(const genrec::Tokenizer& tok,
                                const std::vector<genrec::BeamResult>& beams) {
    std::vector<int> ranked;
    std::vector<char> seen(static_cast<std::size_t>(tok.n_items()), 0);
    for (const auto& b : beams) {
        std::vector<int> body = b.tokens;
        if (!body.empty() && body.back() == tok.eos()) body.pop_back();
        const int item = tok.decode_item(body);
        if (item < 0 || seen[static_cast<std::size_t>(item)]) continue;
        seen[static_cast<std::size_t>(item)] = 1;
        ranked.push_back(item);
    }
    return ranked;
}

Mat encoder_input(const train::ModelState& state, const train::PromptSpace& prompts,
                  const train::TrainConfig& cfg, const genrec::WholeWordTables& tables,
                  const std::string& text) {
    const auto ti = prompts.tokenizer.tokenize(text, cfg.task);
    const int d = static_cast<int>(state.prompts.cols());
    Mat xemb(static_cast<int>(ti.tokens.size()), d);
    for (std::size_t i = 0; i < ti.tokens.size(); ++i)
        xemb.row(static_cast<int>(i)) = state.backbone.tok_emb.row(ti.tokens[i]);
    return genrec::inject_inputs(xemb, state.prompts, ti.indices, tables, cfg.beta, cfg.task);
}

genrec::WholeWordTables sr_tables(const train::ModelState& state) {
    genrec::WholeWordTables t;
    t.omega0 = state.omega0;
    t.omega_s = state.omega_s;
    t.omega_t = Mat::Zero(0, state.prompts.cols());
    return t;
}

}  // namespace

int hit_at_k(const std::vector<int>& ranked, int target, int k) {
    const int limit = std::min<int>(k, static_cast<int>(ranked.size()));
    for (int i = 0; i < limit; ++i)
        if (ranked[i] == target) return 1;
    return 0;
}

double ndcg_at_k(const std::vector<int>& ranked, int target, int k) {
    const int limit = std::min<int>(k, static_cast<int>(ranked.size()));
    for (int i = 0; i < limit; ++i)
        if (ranked[i] == target) return 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return 0.0;
}

MetricRow aggregate_ranked(const std::vector<std::vector<int>>& ranked,
                           const std::vector<int>& targets) {
    if (ranked.size() != targets.size()) throw Error("aggregate_ranked: size mismatch");
    if (ranked.empty()) throw Error("aggregate_ranked: no users");
    MetricRow row;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        row.h5 += hit_at_k(ranked[i], targets[i], 5);
        row.n5 += ndcg_at_k(ranked[i], targets[i], 5);
        row.h10 += hit_at_k(ranked[i], targets[i], 10);
        row.n10 += ndcg_at_k(ranked[i], targets[i], 10);
    }
    const double n = static_cast<double>(ranked.size());
    row.h5 /= n;
    row.n5 /= n;
    row.h10 /= n;
    row.n10 /= n;
    return row;
}

std::string MetricTable::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "task,label,H@5,N@5,H@10,N@10\n";
    for (const auto& r : rows) {
        os << r.task << ',' << r.label << ',' << r.h5 << ',' << r.n5 << ',' << r.h10 << ','
           << r.n10 << '\n';
    }
    return os.str();
}

std::string MetricTable::to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(6) << "task" << std::setw(24) << "label" << std::right
       << std::setw(9) << "H@5" << std::setw(9) << "N@5" << std::setw(9) << "H@10" << std::setw(9)
       << "N@10" << '\n';
    os << std::fixed << std::setprecision(4);
    for (const auto& r : rows) {
        os << std::left << std::setw(6) << r.task << std::setw(24) << r.label << std::right
           << std::setw(9) << r.h5 << std::setw(9) << r.n5 << std::setw(9) << r.h10 << std::setw(9)
           << r.n10 << '\n';
    }
    return os.str();
}

std::vector<int> rank_items_sr(const train::ModelState& state, const train::PromptSpace& prompts,
                               const train::TrainConfig& cfg, int user,
                               const std::vector<int>& history, int beam,
                               const genrec::TokenTrie& item_trie) {
    const auto& tok = prompts.tokenizer;
    const genrec::WholeWordTables tables = sr_tables(state);
    const Mat xtilde = encoder_input(state, prompts, cfg, tables,
                                     train::PromptSpace::sr_prompt(user, history, cfg.max_history));
    const auto beams = genrec::beam_search(state.backbone, xtilde, beam, max_decode_len(tok),
                                           tok.bos(), tok.eos(), &item_trie);
    return dedup_to_items(tok, beams);
}

std::vector<int> rank_items_dr(const train::ModelState& state, const train::EpochContext& ctx,
                               const train::PromptSpace& prompts, const train::TrainConfig& cfg,
                               const data::CandidateSet& candidates, int beam) {
    const auto& tok = prompts.tokenizer;
    std::vector<int> cands = candidates.negatives;
    cands.push_back(candidates.positive);
    Rng sh(candidates.seed ^
           (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(candidates.user + 1)));
    sh.shuffle(cands);
    const genrec::TokenTrie trie = item_trie_for(tok, cands);
    const Mat xtilde = encoder_input(state, prompts, cfg, ctx.tables,
                                     train::PromptSpace::dr_prompt(candidates.user, cands));
    const auto beams = genrec::beam_search(state.backbone, xtilde, beam, max_decode_len(tok),
                                           tok.bos(), tok.eos(), &trie);
    return dedup_to_items(tok, beams);
}

MetricRow evaluate_sr(const train::ModelState& state, const train::TrainData& data,
                      const train::TrainConfig& cfg, const train::PromptSpace& prompts,
                      Phase phase, int beam) {
    if (beam < kMaxMetricK) {
        throw Error("evaluate_sr: beam width " + std::to_string(beam) + " is below max K " +
                    std::to_string(kMaxMetricK));
    }
    const auto& tok = prompts.tokenizer;
    std::vector<int> all_items(static_cast<std::size_t>(tok.n_items()));
    std::iota(all_items.begin(), all_items.end(), 0);
    const genrec::TokenTrie trie = item_trie_for(tok, all_items);
    std::vector<std::vector<int>> ranked;
    std::vector<int> targets;
    for (int u = 0; u < data.dataset.num_users(); ++u) {
        std::vector<int> history = data.splits.train[u];
        int target;
        if (phase == Phase::Valid) {
            target = data.splits.valid_target[u];
        } else {
            history.push_back(data.splits.valid_target[u]);
            target = data.splits.test_target[u];
        }
        ranked.push_back(rank_items_sr(state, prompts, cfg, u, history, beam, trie));
        targets.push_back(target);
    }
    MetricRow row = aggregate_ranked(ranked, targets);
    row.task = "SR";
    return row;
}

MetricRow evaluate_dr(const train::ModelState& state, const train::TrainData& data,
                      const train::TrainConfig& cfg, const train::PromptSpace& prompts,
                      Phase phase, int beam) {
    if (beam < kMaxMetricK) {
        throw Error("evaluate_dr: beam width " + std::to_string(beam) + " is below max K " +
                    std::to_string(kMaxMetricK));
    }
    const auto& sets = phase == Phase::Valid ? data.valid_candidates : data.eval_candidates;
    if (sets.empty()) throw Error("evaluate_dr: no candidate sets prepared");
    const train::EpochContext ctx = train::refresh_context(state, data, cfg);
    std::vector<std::vector<int>> ranked;
    std::vector<int> targets;
    for (const auto& cs : sets) {
        ranked.push_back(rank_items_dr(state, ctx, prompts, cfg, cs, beam));
        targets.push_back(cs.positive);
    }
    MetricRow row = aggregate_ranked(ranked, targets);
    row.task = "DR";
    return row;
}

MetricRow evaluate(const train::ModelState& state, const train::TrainData& data,
                   const train::TrainConfig& cfg, const train::PromptSpace& prompts, Phase phase) {
    return cfg.task == genrec::Task::SR
               ? evaluate_sr(state, data, cfg, prompts, phase, cfg.eval_beam)
               : evaluate_dr(state, data, cfg, prompts, phase, cfg.eval_beam);
}

MetricRow run_single(const train::TrainConfig& cfg, const EvalInputs& in,
                     const std::string& label) {
    const Mat* s_u = &in.s_u;
    const Mat* s_v = &in.s_v;
    if (cfg.variant != train::Variant::Full) {
        const std::string name = train::variant_name(cfg.variant);
        auto it = in.variant_embeddings.find(name);
        if (it == in.variant_embeddings.end()) {
            throw Error("run_single: missing variant embeddings for " + name);
        }
        s_u = &it->second.first;
        s_v = &it->second.second;
    }
    const train::TrainData data = train::prepare_train_data(in.dataset, *s_u, *s_v, cfg);
    const train::FitResult fr = train::fit(cfg, data);
    const train::PromptSpace prompts(data.dataset.num_users(), data.dataset.num_items());
    MetricRow row = evaluate(fr.best, data, cfg, prompts, Phase::Test);
    row.label = label;
    return row;
}

MetricTable run_ablations(const train::TrainConfig& base, const EvalInputs& in) {
    MetricTable table;
    table.rows.push_back(run_single(base, in, "full"));
    {
        train::TrainConfig c = base;
        c.no_distill = true;
        table.rows.push_back(run_single(c, in, "w/o distill"));
    }
    {
        train::TrainConfig c = base;
        c.no_seq_loss = true;
        table.rows.push_back(run_single(c, in, "w/o seq-loss"));
    }
    {
        train::TrainConfig c = base;
        c.no_item_semantics = true;
        table.rows.push_back(run_single(c, in, "w/o item-semantics"));
    }
    {
        train::TrainConfig c = base;
        c.no_adapter = true;
        table.rows.push_back(run_single(c, in, "w/o adapter"));
    }
    return table;
}

MetricTable run_variants(const train::TrainConfig& base, const EvalInputs& in) {
    MetricTable table;
    table.rows.push_back(run_single(base, in, "full"));
    for (train::Variant v : {train::Variant::UPos, train::Variant::UNeg, train::Variant::VPos,
                             train::Variant::VNeg}) {
        train::TrainConfig c = base;
        c.variant = v;
        table.rows.push_back(run_single(c, in, train::variant_name(v)));
    }
    return table;
}

MetricTable sweep(const std::string& param, const std::vector<int>& values,
                  const train::TrainConfig& base, const EvalInputs& in) {
    if (param != "Lprime" && param != "k") {
        throw Error("sweep: unknown parameter \"" + param + "\", expected Lprime or k");
    }
    MetricTable table;
    for (int v : values) {
        train::TrainConfig c = base;
        if (param == "Lprime") {
            c.layers_user = v;
        } else {
            c.k = v;
        }
        table.rows.push_back(run_single(c, in, param + "=" + std::to_string(v)));
    }
    return table;
}

std::string case_study(const train::ModelState& state, const train::TrainData& data,
                       const train::TrainConfig& cfg, const train::PromptSpace& prompts, int user,
                       int top_m, const std::vector<std::string>* item_categories) {
    if (user < 0 || user >= data.dataset.num_users()) throw Error("case_study: bad user index");
    auto category_of = [&](int item) -> std::string {
        return item_categories ? item_categories->at(static_cast<std::size_t>(item))
                               : data.dataset.item_ids[static_cast<std::size_t>(item)];
    };

    json report;
    report["user"] = user;
    report["neighbors"] = json::array();
    for (int nb : data.relation_picks.at(static_cast<std::size_t>(user))) {
        std::map<std::string, int> hist;
        for (int v : data.dataset.sequences[static_cast<std::size_t>(nb)]) ++hist[category_of(v)];
        json entry;
        entry["user"] = nb;
        entry["category_histogram"] = hist;
        report["neighbors"].push_back(entry);
    }

    std::vector<int> ranked;
    if (cfg.task == genrec::Task::SR) {
        const auto& tok = prompts.tokenizer;
        std::vector<int> all_items(static_cast<std::size_t>(tok.n_items()));
        std::iota(all_items.begin(), all_items.end(), 0);
        const genrec::TokenTrie trie = item_trie_for(tok, all_items);
        std::vector<int> history = data.splits.train[static_cast<std::size_t>(user)];
        history.push_back(data.splits.valid_target[static_cast<std::size_t>(user)]);
        ranked = rank_items_sr(state, prompts, cfg, user, history,
                               std::max(cfg.eval_beam, top_m), trie);
    } else {
        const train::EpochContext ctx = train::refresh_context(state, data, cfg);
        ranked = rank_items_dr(state, ctx, prompts, cfg,
                               data.eval_candidates.at(static_cast<std::size_t>(user)),
                               std::max(cfg.eval_beam, top_m));
    }
    report["recommendations"] = json::array();
    for (int i = 0; i < std::min<int>(top_m, static_cast<int>(ranked.size())); ++i) {
        json rec;
        rec["item"] = ranked[i];
        rec["category"] = category_of(ranked[i]);
        report["recommendations"].push_back(rec);
    }
    return report.dump(2);
}

}  // namespace isrf::eval
