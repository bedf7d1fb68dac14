#include "isrf/synth.hpp"

#include <algorithm>

namespace isrf::synth {

namespace {

Mat group_embeddings(int n, int dim, double noise, const std::vector<int>& group, Rng& rng) {
    Mat s(n, dim);
    for (int i = 0; i < n; ++i) {
        Vec centroid = Vec::Zero(dim);
        centroid(group[i]) = 1.0;  // orthogonal unit centroids = basis vectors
        Vec r(dim);
        for (int j = 0; j < dim; ++j) r(j) = rng.gaussian();
        r.normalize();
        Vec v = (1.0 - noise) * centroid + noise * r;
        const double norm = v.norm();
        // A zero mix can only happen at noise 1 with a degenerate draw.
        s.row(i) = (norm > 0.0 ? (v / norm).eval() : centroid).transpose();
    }
    return s;
}

}  // namespace

PlantedData generate_planted(const SynthConfig& cfg) {
    if (cfg.n_groups > std::min(cfg.n_users, cfg.n_items))
        throw Error("generate_planted: n_groups exceeds min(n_users, n_items)");
    if (cfg.n_groups > cfg.embed_dim)
        throw Error("generate_planted: embed_dim must be >= n_groups for orthogonal centroids");
    if (cfg.noise < 0.0 || cfg.noise > 1.0) throw Error("generate_planted: noise must be in [0,1]");
    if (cfg.items_per_user < 3)
        throw Error("generate_planted: items_per_user must be >= 3 for leave-one-out");

    PlantedData out;
    out.user_group.resize(cfg.n_users);
    out.item_group.resize(cfg.n_items);
    for (int u = 0; u < cfg.n_users; ++u) out.user_group[u] = u % cfg.n_groups;
    for (int v = 0; v < cfg.n_items; ++v) out.item_group[v] = v % cfg.n_groups;

    Rng rng(cfg.seed);
    auto make = [&](int n, const std::vector<int>& group, double noise, std::uint64_t salt) {
        Rng local(cfg.seed ^ salt);
        EmbeddingMatrix m;
        m.data = group_embeddings(n, cfg.embed_dim, noise, group, local);
        m.space = Space::Raw;
        return m;
    };
    out.user_embeddings = make(cfg.n_users, out.user_group, cfg.noise, 0x5u);
    out.item_embeddings = make(cfg.n_items, out.item_group, cfg.noise, 0x6u);
    out.user_pos = make(cfg.n_users, out.user_group, cfg.noise, 0x7u);
    out.user_neg = make(cfg.n_users, out.user_group, cfg.noise, 0x8u);
    out.item_pos = make(cfg.n_items, out.item_group, cfg.noise, 0x9u);
    out.item_neg = make(cfg.n_items, out.item_group, cfg.noise, 0xau);

    auto& ds = out.dataset;
    ds.user_ids.reserve(cfg.n_users);
    ds.item_ids.reserve(cfg.n_items);
    for (int u = 0; u < cfg.n_users; ++u) {
        ds.user_ids.push_back("u" + std::to_string(u));
        ds.user_index.emplace(ds.user_ids.back(), u);
    }
    for (int v = 0; v < cfg.n_items; ++v) {
        ds.item_ids.push_back("i" + std::to_string(v));
        ds.item_index.emplace(ds.item_ids.back(), v);
    }

    // Interaction probability proportional to softmax of embedding affinity;
    // the scale sharpens group preference without making it deterministic.
    const double scale = 6.0;
    ds.sequences.resize(cfg.n_users);
    for (int u = 0; u < cfg.n_users; ++u) {
        Vec logits = scale * (out.item_embeddings.data * out.user_embeddings.data.row(u).transpose());
        const double m = logits.maxCoeff();
        Vec probs = (logits.array() - m).exp();
        probs /= probs.sum();
        std::vector<double> cdf(cfg.n_items);
        double acc = 0.0;
        for (int v = 0; v < cfg.n_items; ++v) {
            acc += probs(v);
            cdf[v] = acc;
        }
        auto& seq = ds.sequences[u];
        seq.reserve(cfg.items_per_user);
        for (int t = 0; t < cfg.items_per_user; ++t) {
            const double x = rng.unit() * acc;
            const int v = static_cast<int>(
                std::lower_bound(cdf.begin(), cdf.end(), x) - cdf.begin());
            seq.push_back(std::min(v, cfg.n_items - 1));
        }
    }
    return out;
}

double group_recovery_score(const graphs::NormalizedGraph& relation,
                            const std::vector<int>& user_group) {
    long total = 0;
    long same = 0;
    for (int i = 0; i < relation.n; ++i) {
        for (int p = relation.row_ptr[i]; p < relation.row_ptr[i + 1]; ++p) {
            ++total;
            if (user_group[i] == user_group[relation.col_idx[p]]) ++same;
        }
    }
    if (total == 0) return 1.0;  // vacuously pure
    return static_cast<double>(same) / static_cast<double>(total);
}

}  // namespace isrf::synth
