#include "isrf/graphs.hpp"

#include "isrf/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>

using nlohmann::json;

namespace isrf::graphs {

namespace {

NormalizedGraph csr_from_edges(int n, std::vector<std::pair<int, int>> edges, bool symmetrized) {
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    NormalizedGraph g;
    g.n = n;
    g.symmetrized = symmetrized;
    g.row_ptr.assign(n + 1, 0);
    g.degree.assign(n, 0);
    std::vector<int> in_degree(n, 0);
    for (const auto& [i, j] : edges) {
        ++g.degree[i];
        ++in_degree[j];
    }
    for (int i = 0; i < n; ++i) g.row_ptr[i + 1] = g.row_ptr[i] + g.degree[i];
    g.col_idx.resize(edges.size());
    g.norm_values.resize(edges.size());
    std::vector<int> cursor(g.row_ptr.begin(), g.row_ptr.end() - 1);
    // Symmetric graphs have out-degree == in-degree, so the same formula
    // covers both normalization modes.
    for (const auto& [i, j] : edges) {
        const int pos = cursor[i]++;
        g.col_idx[pos] = j;
        g.norm_values[pos] = 1.0 / std::sqrt(static_cast<double>(g.degree[i]) *
                                             static_cast<double>(in_degree[j]));
    }
    return g;
}

Mat spmm(const NormalizedGraph& g, const Mat& x, bool transpose) {
    Mat y = Mat::Zero(g.n, x.cols());
    for (int i = 0; i < g.n; ++i) {
        for (int p = g.row_ptr[i]; p < g.row_ptr[i + 1]; ++p) {
            const int j = g.col_idx[p];
            const double w = g.norm_values[p];
            if (transpose)
                y.row(j) += w * x.row(i);
            else
                y.row(i) += w * x.row(j);
        }
    }
    return y;
}

}  // namespace

NormalizedGraph build_interaction_graph(const data::InteractionDataset& ds,
                                        const data::Splits& splits) {
    if (ds.num_users() == 0) throw Error("build_interaction_graph: empty dataset");
    const int n_users = ds.num_users();
    const int n = n_users + ds.num_items();
    std::vector<std::pair<int, int>> edges;
    for (int u = 0; u < n_users; ++u) {
        for (int v : splits.train[u]) {
            edges.emplace_back(u, n_users + v);
            edges.emplace_back(n_users + v, u);
        }
    }
    return csr_from_edges(n, std::move(edges), true);
}

PropagationResult lightgcn_propagate(const NormalizedGraph& g, const Mat& e0, int layers) {
    if (e0.rows() != g.n) {
        throw Error("lightgcn_propagate: embedding rows " + std::to_string(e0.rows()) +
                    " != node count " + std::to_string(g.n));
    }
    PropagationResult res;
    res.layers.reserve(layers + 1);
    res.layers.push_back(e0);
    for (int l = 0; l < layers; ++l) res.layers.push_back(spmm(g, res.layers.back(), false));
    res.averaged = Mat::Zero(e0.rows(), e0.cols());
    for (const auto& m : res.layers) res.averaged += m;
    res.averaged /= static_cast<double>(layers + 1);
    return res;
}

Mat propagate_backward(const NormalizedGraph& g, const Mat& upstream, int layers) {
    if (upstream.rows() != g.n) throw Error("propagate_backward: row mismatch");
    Mat cur = upstream;
    Mat acc = upstream;
    for (int l = 0; l < layers; ++l) {
        cur = spmm(g, cur, true);
        acc += cur;
    }
    return acc / static_cast<double>(layers + 1);
}

std::vector<std::vector<int>> topk_cosine_picks(const Mat& user_embeddings, int k,
                                                RelationReport* report) {
    const int n = static_cast<int>(user_embeddings.rows());
    if (k >= n) throw Error("topk_cosine_picks: k must be smaller than the user count");
    Vec norms(n);
    for (int i = 0; i < n; ++i) norms(i) = user_embeddings.row(i).norm();
    if (report) report->zero_norm_rows.clear();
    for (int i = 0; i < n; ++i) {
        if (norms(i) == 0.0 && report) report->zero_norm_rows.push_back(i);
    }

    std::vector<std::vector<int>> picks(n);
    std::vector<std::pair<double, int>> scored;
    scored.reserve(n - 1);
    for (int i = 0; i < n; ++i) {
        scored.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double sim = 0.0;
            if (norms(i) > 0.0 && norms(j) > 0.0)
                sim = user_embeddings.row(i).dot(user_embeddings.row(j)) / (norms(i) * norms(j));
            // Negated index makes the default pair ordering break ties toward
            // the smaller index when sorting by descending score.
            scored.emplace_back(sim, -j);
        }
        std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second > b.second;
                          });
        picks[i].reserve(k);
        for (int t = 0; t < k; ++t) picks[i].push_back(-scored[t].second);
        std::sort(picks[i].begin(), picks[i].end());
    }
    return picks;
}

NormalizedGraph build_user_relation(const Mat& user_embeddings, int k, RelationSymmetrize mode,
                                    RelationReport* report) {
    const auto picks = topk_cosine_picks(user_embeddings, k, report);
    const int n = static_cast<int>(user_embeddings.rows());
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i) {
        for (int j : picks[i]) {
            edges.emplace_back(i, j);
            if (mode == RelationSymmetrize::Union) edges.emplace_back(j, i);
        }
    }
    return csr_from_edges(n, std::move(edges), mode == RelationSymmetrize::Union);
}

void write_graph(const std::string& path, const NormalizedGraph& g) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    out << json{{"n", g.n}, {"nnz", g.nnz()}, {"symmetrized", g.symmetrized}}.dump() << "\n";
    auto write_ints = [&](const std::vector<int>& v) {
        std::vector<std::int64_t> buf(v.begin(), v.end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(std::int64_t)));
    };
    write_ints(g.row_ptr);
    write_ints(g.col_idx);
    out.write(reinterpret_cast<const char*>(g.norm_values.data()),
              static_cast<std::streamsize>(g.norm_values.size() * sizeof(double)));
    write_ints(g.degree);
}

NormalizedGraph read_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error("missing header in " + path);
    const json header = json::parse(line);
    NormalizedGraph g;
    g.n = header.at("n").get<int>();
    const int nnz = header.at("nnz").get<int>();
    g.symmetrized = header.at("symmetrized").get<bool>();
    auto read_ints = [&](std::vector<int>& v, int count) {
        std::vector<std::int64_t> buf(count);
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(std::int64_t)));
        if (!in) throw Error("truncated graph file: " + path);
        v.assign(buf.begin(), buf.end());
    };
    read_ints(g.row_ptr, g.n + 1);
    read_ints(g.col_idx, nnz);
    g.norm_values.resize(nnz);
    in.read(reinterpret_cast<char*>(g.norm_values.data()),
            static_cast<std::streamsize>(nnz * sizeof(double)));
    read_ints(g.degree, g.n);
    return g;
}

}  // namespace isrf::graphs
