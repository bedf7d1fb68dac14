#pragma once

#include "isrf/common.hpp"

#include <string>

namespace isrf::embed {

struct PcaModel {
    Vec mean;                 // d_llm
    Mat components;           // d_m x d_llm, orthonormal rows
    Vec explained_variance;   // d_m, nonincreasing
};

// Covariance eigendecomposition PCA. Sign convention: the largest-magnitude
// entry of each component is positive (ties resolved by the first such entry).
PcaModel pca_fit(const EmbeddingMatrix& raw, int d_m);

// Rows = (S - mean) components^T; output flagged frozen (non-trainable).
EmbeddingMatrix pca_transform(const PcaModel& model, const EmbeddingMatrix& raw);

Mat pca_inverse_transform(const PcaModel& model, const Mat& reduced);

void write_pca(const std::string& path, const PcaModel& model);
PcaModel read_pca(const std::string& path);

struct AdapterParams {
    Mat w1;  // hidden x d_m, hidden = (d + d_m) / 2
    Vec b1;  // hidden
    Mat w2;  // d x hidden
    Vec b2;  // d
};

enum class AdapterActivation { None, Relu };

struct AdapterGrads {
    Mat w1;
    Vec b1;
    Mat w2;
    Vec b2;
};

// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], seeded. (d + d_m) must
// be even.
AdapterParams adapter_init(int d_m, int d, std::uint64_t seed);

// Row-wise E_v = W2 (W1 s + b1) + b2; affine by default, optional relu on the
// hidden layer.
Mat adapter_forward(const Mat& reduced, const AdapterParams& p,
                    AdapterActivation act = AdapterActivation::None);

// Exact chain-rule gradients wrt the adapter parameters only; the reduced
// input is frozen and receives none.
AdapterGrads adapter_gradient(const Mat& reduced, const AdapterParams& p, const Mat& upstream,
                              AdapterActivation act = AdapterActivation::None);

}  // namespace isrf::embed
