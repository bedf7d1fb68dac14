#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "isrf/embed.hpp"

#include <cmath>
#include <cstdio>

using namespace isrf;

namespace {

Mat random_matrix(int rows, int cols, std::uint64_t seed) {
    Rng rng(seed);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.gaussian();
    return m;
}

// ---------------------------------------------------------------------------
// Independent PCA oracle: cyclic Jacobi eigendecomposition of the covariance,
// written without Eigen's solvers.
// ---------------------------------------------------------------------------
struct JacobiEig {
    Mat vectors;  // columns are eigenvectors
    Vec values;
};

JacobiEig jacobi_eig(Mat a) {
    const int n = static_cast<int>(a.rows());
    Mat v = Mat::Identity(n, n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-30) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    JacobiEig out;
    out.vectors = v;
    out.values = a.diagonal();
    return out;
}

// Oracle PCA with the same documented sign convention applied.
embed::PcaModel oracle_pca(const Mat& s, int d_m) {
    embed::PcaModel model;
    model.mean = s.colwise().mean().transpose();
    const Mat centered = s.rowwise() - model.mean.transpose();
    const Mat cov = centered.transpose() * centered / static_cast<double>(s.rows() - 1);
    const JacobiEig eig = jacobi_eig(cov);
    std::vector<int> order(static_cast<std::size_t>(cov.rows()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return eig.values(a) > eig.values(b); });
    model.components.resize(d_m, s.cols());
    model.explained_variance.resize(d_m);
    for (int i = 0; i < d_m; ++i) {
        Vec comp = eig.vectors.col(order[static_cast<std::size_t>(i)]);
        int argmax = 0;
        for (int j = 1; j < comp.size(); ++j)
            if (std::abs(comp(j)) > std::abs(comp(argmax))) argmax = j;
        if (comp(argmax) < 0) comp = -comp;
        model.components.row(i) = comp.transpose();
        model.explained_variance(i) = eig.values(order[static_cast<std::size_t>(i)]);
    }
    return model;
}

EmbeddingMatrix raw(const Mat& m) { return EmbeddingMatrix{m, Space::Raw, false}; }

}  // namespace

TEST_CASE("points on y=x give the sign-fixed diagonal component") {
    Mat s(4, 2);
    s << -2, -2, -1, -1, 1, 1, 2, 2;
    const auto model = embed::pca_fit(raw(s), 1);
    const double r = 1.0 / std::sqrt(2.0);
    CHECK(model.components(0, 0) == doctest::Approx(r).epsilon(1e-12));
    CHECK(model.components(0, 1) == doctest::Approx(r).epsilon(1e-12));
}

TEST_CASE("data in a d_m-dimensional subspace reconstructs exactly") {
    // 20 points spanning a 3-dim subspace of R^8
    const Mat basis = random_matrix(3, 8, 1);
    const Mat coeff = random_matrix(20, 3, 2);
    const Mat s = coeff * basis;
    const auto model = embed::pca_fit(raw(s), 3);
    const auto reduced = embed::pca_transform(model, raw(s));
    const Mat back = embed::pca_inverse_transform(model, reduced.data);
    CHECK((back - s).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("components match the Jacobi eigendecomposition oracle") {
    for (int trial = 0; trial < 5; ++trial) {
        const Mat s = random_matrix(30, 16, 100 + static_cast<std::uint64_t>(trial));
        const int d_m = 6;
        const auto got = embed::pca_fit(raw(s), d_m);
        const auto want = oracle_pca(s, d_m);
        CHECK((got.components - want.components).cwiseAbs().maxCoeff() < 1e-8);
        CHECK((got.explained_variance - want.explained_variance).cwiseAbs().maxCoeff() < 1e-8);
        // Gram matrix of projections equals the oracle's
        const Mat pg = embed::pca_transform(got, raw(s)).data;
        const Mat po = (s.rowwise() - want.mean.transpose()) * want.components.transpose();
        CHECK((pg * pg.transpose() - po * po.transpose()).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("components are orthonormal and variance nonincreasing") {
    const Mat s = random_matrix(25, 10, 9);
    const auto model = embed::pca_fit(raw(s), 5);
    const Mat gram = model.components * model.components.transpose();
    CHECK((gram - Mat::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-8);
    for (int i = 1; i < 5; ++i)
        CHECK(model.explained_variance(i) <= model.explained_variance(i - 1) + 1e-12);
}

TEST_CASE("transforming the mean row yields zero and output is frozen") {
    const Mat s = random_matrix(12, 6, 4);
    const auto model = embed::pca_fit(raw(s), 3);
    Mat mean_row = model.mean.transpose();
    const auto t = embed::pca_transform(model, raw(mean_row));
    CHECK(t.data.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(t.space == Space::Reduced);
    CHECK(!t.trainable);
}

TEST_CASE("pca_fit validates d_m and transform validates dimensions") {
    const Mat s = random_matrix(5, 4, 8);
    CHECK_THROWS_AS(embed::pca_fit(raw(s), 5), Error);
    CHECK_THROWS_AS(embed::pca_fit(raw(Mat(random_matrix(1, 4, 8))), 1), Error);
    const auto model = embed::pca_fit(raw(s), 2);
    CHECK_THROWS_AS(embed::pca_transform(model, raw(Mat(random_matrix(3, 7, 8)))), Error);
}

TEST_CASE("pca model round-trips through the sectioned file") {
    const Mat s = random_matrix(15, 8, 21);
    const auto model = embed::pca_fit(raw(s), 4);
    const std::string path = "test_embed_pca.bin";
    embed::write_pca(path, model);
    const auto back = embed::read_pca(path);
    CHECK((back.mean - model.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.components - model.components).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.explained_variance - model.explained_variance).cwiseAbs().maxCoeff() == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("zero adapter weights pass b2 through") {
    embed::AdapterParams p;
    p.w1 = Mat::Zero(3, 2);
    p.b1 = Vec::Zero(3);
    p.w2 = Mat::Zero(4, 3);
    p.b2 = Vec::LinSpaced(4, 1.0, 4.0);
    const Mat in = random_matrix(5, 2, 7);
    const Mat out = embed::adapter_forward(in, p);
    REQUIRE(out.rows() == 5);
    REQUIRE(out.cols() == 4);
    for (int i = 0; i < 5; ++i) CHECK((out.row(i).transpose() - p.b2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hand-computed adapter output for all-ones parameters") {
    // d_m = 2, hidden = 2, d = 2, all weights/biases 1; input (1, 1):
    // hidden = (1+1) + 1 = 3 per unit; out = (3+3) + 1 = 7 per unit.
    embed::AdapterParams p;
    p.w1 = Mat::Ones(2, 2);
    p.b1 = Vec::Ones(2);
    p.w2 = Mat::Ones(2, 2);
    p.b2 = Vec::Ones(2);
    Mat in(1, 2);
    in << 1, 1;
    const Mat out = embed::adapter_forward(in, p);
    CHECK(out(0, 0) == doctest::Approx(7.0));
    CHECK(out(0, 1) == doctest::Approx(7.0));
}

TEST_CASE("adapter output shape and init bounds") {
    const int d_m = 4, d = 8;
    const auto p = embed::adapter_init(d_m, d, 3);
    CHECK(p.w1.rows() == (d + d_m) / 2);
    CHECK(p.w1.cols() == d_m);
    CHECK(p.w2.rows() == d);
    CHECK(p.w2.cols() == (d + d_m) / 2);
    CHECK(p.w1.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(static_cast<double>(d_m)));
    const Mat in = random_matrix(9, d_m, 5);
    CHECK(embed::adapter_forward(in, p).rows() == 9);
    CHECK(embed::adapter_forward(in, p).cols() == d);
    CHECK_THROWS_AS(embed::adapter_init(3, 8, 1), Error);  // odd d + d_m
}

TEST_CASE("zero upstream gives zero gradients; b2 gradient is the column sum") {
    const auto p = embed::adapter_init(4, 8, 11);
    const Mat in = random_matrix(6, 4, 12);
    const auto zg = embed::adapter_gradient(in, p, Mat::Zero(6, 8));
    CHECK(zg.w1.cwiseAbs().maxCoeff() == 0.0);
    CHECK(zg.b1.cwiseAbs().maxCoeff() == 0.0);
    CHECK(zg.w2.cwiseAbs().maxCoeff() == 0.0);
    CHECK(zg.b2.cwiseAbs().maxCoeff() == 0.0);
    const Mat up = random_matrix(6, 8, 13);
    const auto g = embed::adapter_gradient(in, p, up);
    CHECK((g.b2.transpose() - up.colwise().sum()).cwiseAbs().maxCoeff() < 1e-12);
}

namespace {

// Central finite differences of sum(upstream .* forward(in)) wrt one scalar.
double fd_loss(const Mat& in, const embed::AdapterParams& p, const Mat& up,
               embed::AdapterActivation act) {
    return (up.cwiseProduct(embed::adapter_forward(in, p, act))).sum();
}

template <typename P>
void check_fd(P& param, const Mat& grad, const Mat& in, embed::AdapterParams& p, const Mat& up,
              embed::AdapterActivation act) {
    const double eps = 1e-4;
    for (int i = 0; i < param.rows(); ++i) {
        for (int j = 0; j < param.cols(); ++j) {
            const double save = param(i, j);
            param(i, j) = save + eps;
            const double lp = fd_loss(in, p, up, act);
            param(i, j) = save - eps;
            const double lm = fd_loss(in, p, up, act);
            param(i, j) = save;
            const double fd = (lp - lm) / (2.0 * eps);
            const double denom = std::max({std::abs(fd), std::abs(grad(i, j)), 1e-8});
            CHECK(std::abs(fd - grad(i, j)) / denom < 1e-4);
        }
    }
}

}  // namespace

TEST_CASE("adapter gradients match central finite differences") {
    for (auto act : {embed::AdapterActivation::None, embed::AdapterActivation::Relu}) {
        auto p = embed::adapter_init(3, 5, 17);
        const Mat in = random_matrix(4, 3, 18);
        const Mat up = random_matrix(4, 5, 19);
        const auto g = embed::adapter_gradient(in, p, up, act);
        check_fd(p.w1, g.w1, in, p, up, act);
        check_fd(p.w2, g.w2, in, p, up, act);
        check_fd(p.b1, Mat(g.b1), in, p, up, act);
        check_fd(p.b2, Mat(g.b2), in, p, up, act);
    }
}

TEST_CASE("adapter is affine in its input") {
    const auto p = embed::adapter_init(4, 6, 23);
    const Mat x = random_matrix(1, 4, 24);
    const Mat y = random_matrix(1, 4, 25);
    const double a = 0.7, b = -1.3;
    const Mat lhs = embed::adapter_forward(a * x + b * y, p);
    const Mat rhs = a * embed::adapter_forward(x, p) + b * embed::adapter_forward(y, p) -
                    (a + b - 1.0) * embed::adapter_forward(Mat(Mat::Zero(1, 4)), p);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
}
