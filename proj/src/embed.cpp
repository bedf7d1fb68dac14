#include "isrf/embed.hpp"

#include "isrf/io.hpp"

#include <Eigen/Eigenvalues>

namespace isrf::embed {

namespace {

void fix_component_signs(Mat& components) {
    for (Eigen::Index i = 0; i < components.rows(); ++i) {
        Eigen::Index argmax = 0;
        double best = 0.0;
        for (Eigen::Index j = 0; j < components.cols(); ++j) {
            const double a = std::abs(components(i, j));
            if (a > best) {
                best = a;
                argmax = j;
            }
        }
        if (components(i, argmax) < 0.0) components.row(i) = -components.row(i);
    }
}

}  // namespace

PcaModel pca_fit(const EmbeddingMatrix& raw, int d_m) {
    const Mat& s = raw.data;
    const auto rows = s.rows();
    const auto cols = s.cols();
    if (rows < 2) throw Error("pca_fit: need at least 2 rows");
    if (d_m > std::min(rows, cols)) {
        throw Error("pca_fit: d_m = " + std::to_string(d_m) + " exceeds min(rows, dims) = " +
                    std::to_string(std::min(rows, cols)));
    }
    PcaModel model;
    model.mean = s.colwise().mean().transpose();
    const Mat centered = s.rowwise() - model.mean.transpose();
    const Mat cov = centered.transpose() * centered / static_cast<double>(rows - 1);

    Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
    if (solver.info() != Eigen::Success) throw Error("pca_fit: eigendecomposition failed");
    // Eigen returns ascending eigenvalues; take the top d_m in descending order.
    model.components.resize(d_m, cols);
    model.explained_variance.resize(d_m);
    for (int i = 0; i < d_m; ++i) {
        const auto src = cols - 1 - i;
        model.components.row(i) = solver.eigenvectors().col(src).transpose();
        model.explained_variance(i) = solver.eigenvalues()(src);
    }
    fix_component_signs(model.components);
    return model;
}

EmbeddingMatrix pca_transform(const PcaModel& model, const EmbeddingMatrix& raw) {
    if (raw.data.cols() != model.mean.size()) {
        throw Error("pca_transform: input dimension " + std::to_string(raw.data.cols()) +
                    " != model dimension " + std::to_string(model.mean.size()));
    }
    EmbeddingMatrix out;
    out.data = (raw.data.rowwise() - model.mean.transpose()) * model.components.transpose();
    out.space = Space::Reduced;
    out.trainable = false;
    return out;
}

Mat pca_inverse_transform(const PcaModel& model, const Mat& reduced) {
    if (reduced.cols() != model.components.rows())
        throw Error("pca_inverse_transform: dimension mismatch");
    return (reduced * model.components).rowwise() + model.mean.transpose();
}

void write_pca(const std::string& path, const PcaModel& model) {
    write_sections(path, {{"mean", model.mean.transpose()},
                          {"components", model.components},
                          {"explained_variance", model.explained_variance.transpose()}});
}

PcaModel read_pca(const std::string& path) {
    const auto sections = read_sections(path);
    PcaModel model;
    for (const auto& t : sections) {
        if (t.name == "mean")
            model.mean = t.data.row(0).transpose();
        else if (t.name == "components")
            model.components = t.data;
        else if (t.name == "explained_variance")
            model.explained_variance = t.data.row(0).transpose();
    }
    if (model.mean.size() == 0 || model.components.size() == 0)
        throw Error("read_pca: incomplete model in " + path);
    return model;
}

AdapterParams adapter_init(int d_m, int d, std::uint64_t seed) {
    if ((d + d_m) % 2 != 0)
        throw Error("adapter_init: d + d_m must be even, got d=" + std::to_string(d) +
                    " d_m=" + std::to_string(d_m));
    const int hidden = (d + d_m) / 2;
    Rng rng(seed);
    auto uniform = [&](Eigen::Index r, Eigen::Index c, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Mat m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = (2.0 * rng.unit() - 1.0) * bound;
        return m;
    };
    AdapterParams p;
    p.w1 = uniform(hidden, d_m, d_m);
    p.b1 = uniform(hidden, 1, d_m).col(0);
    p.w2 = uniform(d, hidden, hidden);
    p.b2 = uniform(d, 1, hidden).col(0);
    return p;
}

Mat adapter_forward(const Mat& reduced, const AdapterParams& p, AdapterActivation act) {
    if (reduced.cols() != p.w1.cols())
        throw Error("adapter_forward: input dim " + std::to_string(reduced.cols()) +
                    " != W1 columns " + std::to_string(p.w1.cols()));
    Mat hidden = (reduced * p.w1.transpose()).rowwise() + p.b1.transpose();
    if (act == AdapterActivation::Relu) hidden = hidden.cwiseMax(0.0);
    return (hidden * p.w2.transpose()).rowwise() + p.b2.transpose();
}

AdapterGrads adapter_gradient(const Mat& reduced, const AdapterParams& p, const Mat& upstream,
                              AdapterActivation act) {
    const Mat pre = (reduced * p.w1.transpose()).rowwise() + p.b1.transpose();
    const Mat hidden = act == AdapterActivation::Relu ? pre.cwiseMax(0.0).eval() : pre;
    if (upstream.rows() != reduced.rows() || upstream.cols() != p.w2.rows())
        throw Error("adapter_gradient: upstream shape mismatch");

    AdapterGrads g;
    g.w2 = upstream.transpose() * hidden;
    g.b2 = upstream.colwise().sum().transpose();
    Mat d_hidden = upstream * p.w2;
    if (act == AdapterActivation::Relu)
        d_hidden = d_hidden.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    g.w1 = d_hidden.transpose() * reduced;
    g.b1 = d_hidden.colwise().sum().transpose();
    return g;
}

}  // namespace isrf::embed
