#pragma once

#include "isrf/common.hpp"

#include <vector>

namespace isrf::align {

struct AlignBatch {
    Mat teacher;  // B x d, h_u rows
    Mat student;  // B x d
    double tau = 0.2;
};

// Which denominator the distillation loss uses: the sum of the B diagonal
// pair scores, or the standard in-batch cross form.
enum class DistillDenominator { Diagonal, Cross };

struct LossGrad {
    double loss = 0.0;
    Mat d_teacher;
    Mat d_student;
};

// exp(cos(a, b) / tau). Both vectors must be nonzero.
double temperature_similarity(const Vec& a, const Vec& b, double tau);

// Distillation loss with stop-gradient on the teacher side: d_teacher is
// identically zero.
LossGrad loss_distill(const AlignBatch& batch,
                      DistillDenominator mode = DistillDenominator::Diagonal);

// Sequential alignment loss with an in-batch denominator over student rows;
// gradients flow to both sides.
LossGrad loss_seq(const AlignBatch& batch);

// e_u = mean of the whole-word rows of the user's train-split items.
// item_rows maps item index -> row in omega_s.
Vec user_interest_from_sequence(const Mat& omega_s, const std::vector<int>& item_rows);

// Norm floor applied by training callers before the kernel; returns the
// floored copy and reports whether flooring happened.
Vec floor_norm(const Vec& v, double eps, bool* floored = nullptr);

}  // namespace isrf::align
