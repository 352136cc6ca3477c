#pragma once

#include <cmath>

#include "ertte/core.hpp"
#include "ertte/errors.hpp"

namespace ertte {

struct TripleGrad {
    double lower = 0.0;
    double point = 0.0;
    double upper = 0.0;

    TripleGrad& operator+=(const TripleGrad& o) {
        lower += o.lower;
        point += o.point;
        upper += o.upper;
        return *this;
    }
    TripleGrad operator*(double c) const { return {lower * c, point * c, upper * c}; }
};

struct LossValue {
    double value = 0.0;
    TripleGrad grad;
};

// Quantile (check) loss. Underestimates (pred <= label) are weighted by
// alpha, overestimates by 1 - alpha, so the minimizer over a sample is the
// empirical alpha-quantile. The subgradient at pred == label takes the
// underestimate branch.
struct ScalarLoss {
    double value = 0.0;
    double grad = 0.0;  // d value / d pred
};

inline ScalarLoss pinball(double pred, double label, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("pinball alpha must be in (0,1)");
    if (label < 0.0) throw DataError("pinball label must be >= 0");
    double r = label - pred;
    if (r >= 0.0) return {alpha * r, -alpha};
    return {(1.0 - alpha) * (-r), 1.0 - alpha};
}

inline LossValue quantile_triple_loss(const IntervalTriple& t, double label,
                                      const QuantileConfig& cfg) {
    cfg.validate();
    ScalarLoss lo = pinball(t.lower, label, cfg.alpha_lower);
    ScalarLoss pt = pinball(t.point, label, cfg.alpha_point);
    ScalarLoss up = pinball(t.upper, label, cfg.alpha_upper);
    return {lo.value + pt.value + up.value, {lo.grad, pt.grad, up.grad}};
}

// Interval width; the tightness penalty added to the traveled-route term.
inline LossValue mpiw(const IntervalTriple& t) {
    return {t.upper - t.lower, {-1.0, 0.0, 1.0}};
}

struct PretrainLoss {
    double value = 0.0;
    TripleGrad entire_grad;
    TripleGrad traveled_grad;
};

// Entire-route quantile loss + traveled-route quantile loss + weighted
// width penalty on the traveled interval.
inline PretrainLoss pretrain_loss(const IntervalTriple& entire, double y,
                                  const IntervalTriple& traveled, double y_tr,
                                  const QuantileConfig& cfg) {
    LossValue en = quantile_triple_loss(entire, y, cfg);
    LossValue tr = quantile_triple_loss(traveled, y_tr, cfg);
    LossValue w = mpiw(traveled);
    PretrainLoss out;
    out.value = en.value + tr.value + cfg.mpiw_weight * w.value;
    out.entire_grad = en.grad;
    out.traveled_grad = tr.grad;
    out.traveled_grad += w.grad * cfg.mpiw_weight;
    return out;
}

// Remaining-route objective: pure quantile loss, no width penalty.
inline LossValue finetune_loss(const IntervalTriple& remaining, double y_re,
                               const QuantileConfig& cfg) {
    return quantile_triple_loss(remaining, y_re, cfg);
}

// Interval score plus absolute error on the point estimate; the
// alternative objective used by the loss ablation.
inline LossValue mis_loss(const IntervalTriple& t, double label, double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("mis rho must be in (0,1)");
    if (label < 0.0) throw DataError("mis label must be >= 0");
    double scale = 2.0 / (1.0 - rho);
    LossValue out;
    out.value = t.upper - t.lower;
    out.grad = {-1.0, 0.0, 1.0};
    if (t.lower > label) {
        out.value += scale * (t.lower - label);
        out.grad.lower += scale;
    }
    if (label > t.upper) {
        out.value += scale * (label - t.upper);
        out.grad.upper -= scale;
    }
    out.value += std::abs(label - t.point);
    out.grad.point = t.point > label ? 1.0 : (t.point < label ? -1.0 : 0.0);
    return out;
}

}  // namespace ertte
