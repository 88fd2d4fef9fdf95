#pragma once

// Link functions (return gap -> preference probability) and the composed
// link-loss functions F = L o f used by every preference objective.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "brl/errors.hpp"

namespace brl {

inline double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) noexcept { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

struct LinkValue {
    double p;
    bool clamped;
};

/// Monotone map from a return gap to a preference probability.
/// sigmoid: f(x) = 1 / (1 + exp(-scale x)).
/// linear:  f(x) = clamp(slope x + offset, 0, 1).
struct LinkFunction {
    enum class Kind { sigmoid, linear };

    Kind kind = Kind::sigmoid;
    double slope = 1.0;   // sigmoid scale, or the linear slope
    double offset = 0.5;  // linear only

    static LinkFunction make_sigmoid(double scale = 1.0) {
        if (!(scale > 0.0)) throw ParameterError("sigmoid scale must be positive");
        return {Kind::sigmoid, scale, 0.0};
    }

    static LinkFunction make_linear(double slope, double offset = 0.5) {
        if (!(slope > 0.0)) throw ParameterError("linear link slope must be positive");
        return {Kind::linear, slope, offset};
    }

    LinkValue eval(double x) const noexcept {
        if (kind == Kind::sigmoid) return {sigmoid(slope * x), false};
        const double raw = slope * x + offset;
        if (raw < 0.0) return {0.0, true};
        if (raw > 1.0) return {1.0, true};
        return {raw, false};
    }

    double operator()(double x) const noexcept { return eval(x).p; }

    double derivative(double x) const noexcept {
        if (kind == Kind::sigmoid) {
            const double p = sigmoid(slope * x);
            return slope * p * (1.0 - p);
        }
        return eval(x).clamped ? 0.0 : slope;
    }

    /// Inverse on the open unit interval (linear: on the unclamped range).
    double inverse(double p) const {
        if (!(p > 0.0 && p < 1.0)) throw ParameterError("link inverse needs p in (0,1)");
        if (kind == Kind::sigmoid) return logit(p) / slope;
        return (p - offset) / slope;
    }

    std::string kind_name() const { return kind == Kind::sigmoid ? "sigmoid" : "linear"; }

    bool operator==(const LinkFunction&) const = default;
};

inline double link_eval(const LinkFunction& link, double x) noexcept { return link(x); }

inline LinkFunction link_from_name(const std::string& kind, double slope = 1.0, double offset = 0.5) {
    if (kind == "sigmoid") return LinkFunction::make_sigmoid(slope);
    if (kind == "linear") return LinkFunction::make_linear(slope, offset);
    throw ParameterError("unknown link kind '" + kind + "'");
}

/// F(x) = L(f(x)). `negative_log` is L(p) = -log p, `one_minus` is
/// L(p) = 1 - p. `identity` (L(p) = p) is increasing and therefore not a
/// valid loss; it exists for negative controls. The `affine` kind skips the
/// probability step entirely: F(x) = intercept - slope x.
struct LinkLossFunction {
    enum class Loss { negative_log, one_minus, identity, affine };

    LinkFunction link;
    Loss loss = Loss::negative_log;
    double affine_intercept = 0.0;
    double affine_slope = 1.0;
    std::string name = "sigmoid+nll";

    static LinkLossFunction sigmoid_nll(double scale = 1.0) {
        return {LinkFunction::make_sigmoid(scale), Loss::negative_log, 0.0, 1.0, "sigmoid+nll"};
    }
    static LinkLossFunction sigmoid_one_minus(double scale = 1.0) {
        return {LinkFunction::make_sigmoid(scale), Loss::one_minus, 0.0, 1.0, "sigmoid+(1-p)"};
    }
    static LinkLossFunction linear_one_minus(double slope = 1.0 / 80.0, double offset = 0.5) {
        return {LinkFunction::make_linear(slope, offset), Loss::one_minus, 0.0, 1.0, "linear+(1-p)"};
    }
    static LinkLossFunction affine(double slope = 1.0, double intercept = 0.0) {
        return {LinkFunction::make_sigmoid(), Loss::affine, intercept, slope, "affine"};
    }
    /// Increasing in x; violates the link-loss contract.
    static LinkLossFunction increasing(double scale = 1.0) {
        return {LinkFunction::make_sigmoid(scale), Loss::identity, 0.0, 1.0, "sigmoid+identity"};
    }

    double operator()(double x) const noexcept {
        switch (loss) {
        case Loss::affine: return affine_intercept - affine_slope * x;
        case Loss::negative_log:
            if (link.kind == LinkFunction::Kind::sigmoid) return softplus(-link.slope * x);
            {
                const double p = link(x);
                return p > 0.0 ? -std::log(p) : std::numeric_limits<double>::infinity();
            }
        case Loss::one_minus: return 1.0 - link(x);
        case Loss::identity: return link(x);
        }
        return 0.0;
    }

    double derivative(double x) const noexcept {
        switch (loss) {
        case Loss::affine: return -affine_slope;
        case Loss::negative_log:
            if (link.kind == LinkFunction::Kind::sigmoid) return -link.slope * sigmoid(-link.slope * x);
            {
                const auto v = link.eval(x);
                if (v.clamped) return 0.0;
                return -link.slope / v.p;
            }
        case Loss::one_minus: return -link.derivative(x);
        case Loss::identity: return link.derivative(x);
        }
        return 0.0;
    }

    /// Non-increasing on a uniform sample of [lo, hi].
    bool is_decreasing_on(double lo, double hi, std::size_t samples = 1001) const {
        double prev = (*this)(lo);
        for (std::size_t i = 1; i < samples; ++i) {
            const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(samples - 1);
            const double v = (*this)(x);
            if (v > prev) return false;
            prev = v;
        }
        return true;
    }
};

/// The valid link-loss functions exercised by the verification suite.
inline std::vector<LinkLossFunction> link_loss_registry() {
    return {LinkLossFunction::sigmoid_nll(), LinkLossFunction::linear_one_minus(),
            LinkLossFunction::sigmoid_one_minus()};
}

} // namespace brl
