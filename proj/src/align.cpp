#include "isrf/align.hpp"

namespace isrf::align {

namespace {

double cosine(const Vec& a, const Vec& b, double na, double nb) { return a.dot(b) / (na * nb); }

Vec d_cosine_da(const Vec& a, const Vec& b, double na, double nb, double cos_ab) {
    return b / (na * nb) - cos_ab * a / (na * na);
}

void check_batch(const AlignBatch& batch) {
    if (batch.teacher.rows() == 0) throw Error("align: empty batch");
    if (batch.teacher.rows() != batch.student.rows() ||
        batch.teacher.cols() != batch.student.cols())
        throw Error("align: teacher/student shape mismatch");
    if (!(batch.tau > 0.0)) throw Error("align: tau must be positive");
}

}  // namespace

double temperature_similarity(const Vec& a, const Vec& b, double tau) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw Error("temperature_similarity: zero-norm vector");
    if (!(tau > 0.0)) throw Error("temperature_similarity: tau must be positive");
    return std::exp(cosine(a, b, na, nb) / tau);
}

LossGrad loss_distill(const AlignBatch& batch, DistillDenominator mode) {
    check_batch(batch);
    const int b = static_cast<int>(batch.teacher.rows());
    const double inv_tau = 1.0 / batch.tau;

    Vec tn(b), sn(b);
    for (int i = 0; i < b; ++i) {
        tn(i) = batch.teacher.row(i).norm();
        sn(i) = batch.student.row(i).norm();
        if (tn(i) == 0.0 || sn(i) == 0.0) throw Error("loss_distill: zero-norm row");
    }

    LossGrad out;
    out.d_teacher = Mat::Zero(b, batch.teacher.cols());  // stop-gradient contract
    out.d_student = Mat::Zero(b, batch.student.cols());

    if (mode == DistillDenominator::Diagonal) {
        // Denominator is the sum of the B diagonal pair scores.
        Vec s(b);
        for (int u = 0; u < b; ++u)
            s(u) = cosine(batch.teacher.row(u).transpose(), batch.student.row(u).transpose(),
                          tn(u), sn(u)) *
                   inv_tau;
        const double m = s.maxCoeff();
        const double logz = m + std::log((s.array() - m).exp().sum());
        out.loss = -(s.sum() / b - logz);
        for (int w = 0; w < b; ++w) {
            const double p = std::exp(s(w) - logz);
            const double ds = p - 1.0 / b;
            const Vec h = batch.teacher.row(w).transpose();
            const Vec e = batch.student.row(w).transpose();
            const double c = cosine(h, e, tn(w), sn(w));
            out.d_student.row(w) = ds * inv_tau * d_cosine_da(e, h, sn(w), tn(w), c).transpose();
        }
        return out;
    }

    // Cross form: standard in-batch denominator over student rows.
    Mat scores(b, b);
    for (int u = 0; u < b; ++u)
        for (int w = 0; w < b; ++w)
            scores(u, w) = cosine(batch.teacher.row(u).transpose(),
                                  batch.student.row(w).transpose(), tn(u), sn(w)) *
                           inv_tau;
    double loss = 0.0;
    for (int u = 0; u < b; ++u) {
        const double m = scores.row(u).maxCoeff();
        const double logz = m + std::log((scores.row(u).array() - m).exp().sum());
        loss -= scores(u, u) - logz;
        for (int w = 0; w < b; ++w) {
            const double p = std::exp(scores(u, w) - logz);
            const double ds = (p - (u == w ? 1.0 : 0.0)) / b;
            const Vec h = batch.teacher.row(u).transpose();
            const Vec e = batch.student.row(w).transpose();
            const double c = scores(u, w) * batch.tau;
            out.d_student.row(w) +=
                ds * inv_tau * d_cosine_da(e, h, sn(w), tn(u), c).transpose();
        }
    }
    out.loss = loss / b;
    return out;
}

LossGrad loss_seq(const AlignBatch& batch) {
    check_batch(batch);
    const int b = static_cast<int>(batch.teacher.rows());
    const double inv_tau = 1.0 / batch.tau;

    Vec tn(b), sn(b);
    for (int i = 0; i < b; ++i) {
        tn(i) = batch.teacher.row(i).norm();
        sn(i) = batch.student.row(i).norm();
        if (tn(i) == 0.0 || sn(i) == 0.0) throw Error("loss_seq: zero-norm row");
    }

    Mat scores(b, b);
    for (int u = 0; u < b; ++u)
        for (int w = 0; w < b; ++w)
            scores(u, w) = cosine(batch.teacher.row(u).transpose(),
                                  batch.student.row(w).transpose(), tn(u), sn(w)) *
                           inv_tau;

    LossGrad out;
    out.d_teacher = Mat::Zero(b, batch.teacher.cols());
    out.d_student = Mat::Zero(b, batch.student.cols());
    double loss = 0.0;
    for (int u = 0; u < b; ++u) {
        const double m = scores.row(u).maxCoeff();
        const double logz = m + std::log((scores.row(u).array() - m).exp().sum());
        loss -= scores(u, u) - logz;
        for (int w = 0; w < b; ++w) {
            const double p = std::exp(scores(u, w) - logz);
            const double ds = (p - (u == w ? 1.0 : 0.0)) / b;
            const Vec h = batch.teacher.row(u).transpose();
            const Vec e = batch.student.row(w).transpose();
            const double c = scores(u, w) * batch.tau;
            out.d_teacher.row(u) +=
                ds * inv_tau * d_cosine_da(h, e, tn(u), sn(w), c).transpose();
            out.d_student.row(w) +=
                ds * inv_tau * d_cosine_da(e, h, sn(w), tn(u), c).transpose();
        }
    }
    out.loss = loss / b;
    return out;
}

Vec user_interest_from_sequence(const Mat& omega_s, const std::vector<int>& item_rows) {
    if (item_rows.empty()) throw Error("user_interest_from_sequence: empty sequence");
    Vec e = Vec::Zero(omega_s.cols());
    for (int r : item_rows) {
        if (r < 0 || r >= omega_s.rows())
            throw Error("user_interest_from_sequence: row out of range");
        e += omega_s.row(r).transpose();
    }
    return e / static_cast<double>(item_rows.size());
}

Vec floor_norm(const Vec& v, double eps, bool* floored) {
    if (floored) *floored = false;
    if (v.norm() >= eps) return v;
    if (floored) *floored = true;
    Vec out = v;
    out(0) += eps;
    return out;
}

}  // namespace isrf::align
