#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

#include "semcorr/consistency.hpp"
#include "semcorr/io.hpp"

namespace semcorr {

struct LossParams {
    double gamma = 0.1;     // softmax temperature
    double lambda_c = 0.5;  // weight of the raw-cost loss pair
    double lambda_a = 0.5;  // weight of the aggregated-cost loss pair
};

/// The four contrastive terms, their weighted total, and the mask popcounts
/// they were normalized by.
struct LossReport {
    double l_cc = 0.0;  // raw volume, raw pseudo-labels
    double l_ac = 0.0;  // raw volume, aggregated pseudo-labels
    double l_aa = 0.0;  // aggregated volume, aggregated pseudo-labels
    double l_ca = 0.0;  // aggregated volume, raw pseudo-labels
    double total = 0.0;
    int n_c = 0;
    int n_a = 0;
};

inline std::string loss_report_csv_header() { return "step,l_cc,l_ac,l_aa,l_ca,total,n_c,n_a"; }

inline std::string loss_report_csv_row(int step, const LossReport& r) {
    return std::to_string(step) + "," + format_double(r.l_cc) + "," + format_double(r.l_ac) + "," +
           format_double(r.l_aa) + "," + format_double(r.l_ca) + "," + format_double(r.total) + "," +
           std::to_string(r.n_c) + "," + std::to_string(r.n_a);
}

/// Which of the four terms participate; rows (a)-(d) of the loss ablation.
struct LossSelection {
    bool cc = true;
    bool ac = true;
    bool aa = true;
    bool ca = true;

    bool any() const { return cc || ac || aa || ca; }

    static LossSelection table_row(char row) {
        switch (row) {
            case 'a': return {false, false, true, false};
            case 'b': return {false, false, true, true};
            case 'c': return {true, false, true, false};
            case 'd': return {true, true, true, true};
            default: throw std::invalid_argument("loss selection row must be one of a,b,c,d");
        }
    }
};

template <class Scalar>
struct CclResult {
    Scalar loss = Scalar(0);
    MatrixX<Scalar> grad;
};

/// Temperature softmax of every row; debug hook for checking row sums.
template <class Scalar>
MatrixX<Scalar> softmax_rows(const CostVolumeT<Scalar>& vol, double gamma) {
    if (gamma <= 0.0) throw std::invalid_argument("gamma must be positive");
    MatrixX<Scalar> out(vol.values.rows(), vol.values.cols());
    for (Eigen::Index i = 0; i < vol.values.rows(); ++i) {
        const Scalar m = vol.values.row(i).maxCoeff();
        out.row(i) = ((vol.values.row(i).array() - m) / static_cast<Scalar>(gamma)).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

/// Confidence-aware contrastive term: masked softmax cross-entropy over
/// similarity rows at temperature gamma, averaged over the N masked cells.
/// Labels and mask enter as constants; no gradient flows through them.
/// N = 0 yields zero loss and gradient.
template <class Scalar>
CclResult<Scalar> ccl_term(const CostVolumeT<Scalar>& vol, const FlowField& labels, const ConfidenceMask& mask,
                           double gamma) {
    if (gamma <= 0.0) throw std::invalid_argument("gamma must be positive");
    if (labels.shape != vol.shape_s || labels.to_shape != vol.shape_t)
        throw std::invalid_argument("ccl_term: label grid mismatch");
    if (mask.shape != vol.shape_s) throw std::invalid_argument("ccl_term: mask grid mismatch");
    if (!vol.values.allFinite()) throw std::invalid_argument("ccl_term: non-finite cost volume entries");

    CclResult<Scalar> out;
    out.grad = MatrixX<Scalar>::Zero(vol.values.rows(), vol.values.cols());
    const int n_masked = mask.count;
    if (n_masked == 0) return out;

    const Scalar g = static_cast<Scalar>(gamma);
    const Scalar inv_gn = Scalar(1) / (g * static_cast<Scalar>(n_masked));
    Scalar loss_sum = Scalar(0);
    VectorX<Scalar> ex(vol.values.cols());
    for (int i = 0; i < vol.shape_s.size(); ++i) {
        if (!mask(i)) continue;
        const int p = apply_displacement(i, labels(i), labels.shape, labels.to_shape);
        if (p == kOutOfGrid) throw std::out_of_range("ccl_term: label displacement leaves the target grid");
        const auto row = vol.values.row(i);
        const Scalar m = row.maxCoeff();
        ex = ((row.array() - m) / g).exp();
        const Scalar denom = ex.sum();
        loss_sum += -((row(p) - m) / g - std::log(denom));
        out.grad.row(i) = (ex * (inv_gn / denom)).transpose();
        out.grad(i, p) -= inv_gn;
    }
    out.loss = loss_sum / static_cast<Scalar>(n_masked);
    return out;
}

template <class Scalar>
struct JointLossResult {
    LossReport report;
    MatrixX<Scalar> grad_raw;
    MatrixX<Scalar> grad_agg;
    FlowsAndMask raw_fm;  // pseudo-labels and mask derived from the raw volume
    FlowsAndMask agg_fm;  // same, from the aggregated volume
};

/// Weighted sum of the selected contrastive terms. Pseudo-labels and masks
/// come from each volume's own forward-backward check; cross terms apply one
/// volume's labels to the other volume's rows. Non-selected terms are zero
/// and contribute no gradient.
template <class Scalar>
JointLossResult<Scalar> ablation_loss(const CostVolumeT<Scalar>& c_raw, const CostVolumeT<Scalar>& c_agg,
                                      const ConsistencyParams& cons, const LossParams& params,
                                      const LossSelection& sel) {
    if (!sel.any()) throw std::invalid_argument("ablation_loss: empty loss selection");
    if (c_raw.shape_s != c_agg.shape_s || c_raw.shape_t != c_agg.shape_t)
        throw std::invalid_argument("ablation_loss: volume shape mismatch");

    JointLossResult<Scalar> out;
    out.raw_fm = mask_and_flows(c_raw, cons);
    out.agg_fm = mask_and_flows(c_agg, cons);
    out.grad_raw = MatrixX<Scalar>::Zero(c_raw.values.rows(), c_raw.values.cols());
    out.grad_agg = MatrixX<Scalar>::Zero(c_agg.values.rows(), c_agg.values.cols());

    const Scalar lc = static_cast<Scalar>(params.lambda_c);
    const Scalar la = static_cast<Scalar>(params.lambda_a);
    if (sel.cc) {
        auto r = ccl_term(c_raw, out.raw_fm.fwd, out.raw_fm.mask, params.gamma);
        out.report.l_cc = static_cast<double>(r.loss);
        out.grad_raw += lc * r.grad;
    }
    if (sel.ac) {
        auto r = ccl_term(c_raw, out.agg_fm.fwd, out.agg_fm.mask, params.gamma);
        out.report.l_ac = static_cast<double>(r.loss);
        out.grad_raw += lc * r.grad;
    }
    if (sel.aa) {
        auto r = ccl_term(c_agg, out.agg_fm.fwd, out.agg_fm.mask, params.gamma);
        out.report.l_aa = static_cast<double>(r.loss);
        out.grad_agg += la * r.grad;
    }
    if (sel.ca) {
        auto r = ccl_term(c_agg, out.raw_fm.fwd, out.raw_fm.mask, params.gamma);
        out.report.l_ca = static_cast<double>(r.loss);
        out.grad_agg += la * r.grad;
    }
    out.report.n_c = out.raw_fm.mask.count;
    out.report.n_a = out.agg_fm.mask.count;
    out.report.total = params.lambda_c * (out.report.l_cc + out.report.l_ac) +
                       params.lambda_a * (out.report.l_aa + out.report.l_ca);
    return out;
}

/// Full four-term loss (ablation row d).
template <class Scalar>
JointLossResult<Scalar> joint_loss(const CostVolumeT<Scalar>& c_raw, const CostVolumeT<Scalar>& c_agg,
                                   const ConsistencyParams& cons, const LossParams& params) {
    return ablation_loss(c_raw, c_agg, cons, params, LossSelection{});
}

}  // namespace semcorr
