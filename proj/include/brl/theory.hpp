#pragma once

// Numerical checks of the equivalences between binary reward labelling and
// learning directly from preferences, on small random instances:
//   binary_labels_optimal  exact grid minimiser of the labelling objective is binary
//   *_same_minimiser       minimisers of the label loss and the preference loss agree
//   *_affine               with an affine link-loss the two losses are affine in each other
//   *_direction            per-pair gradients of the two losses point the same way
// "reward" checks use reward models (L1 vs L2); "bellman" checks use
// tabular Q functions through their derived rewards (L3 vs L4).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "brl/bellman.hpp"
#include "brl/errors.hpp"
#include "brl/gradcheck.hpp"
#include "brl/labeling.hpp"
#include "brl/link.hpp"
#include "brl/preference.hpp"
#include "brl/random.hpp"
#include "brl/reward_model.hpp"

namespace brl {

struct CheckReport {
    std::string name;
    std::size_t instances_run = 0;
    /// Instances excluded (non-convergence, degenerate fits, zero gradients).
    std::size_t skipped = 0;
    double max_violation = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    /// Expected to fail; guards the positive checks against vacuity.
    bool negative_control = false;
    /// Range of the raw per-instance statistic (cosine, residual, label gap).
    double stat_min = std::numeric_limits<double>::infinity();
    double stat_max = -std::numeric_limits<double>::infinity();

    void record(double violation, double statistic) {
        ++instances_run;
        max_violation = std::max(max_violation, violation);
        stat_min = std::min(stat_min, statistic);
        stat_max = std::max(stat_max, statistic);
    }

    CheckReport& finish() {
        pass = max_violation <= tolerance;
        return *this;
    }

    bool as_expected() const { return negative_control ? !pass : pass; }
};

inline nlohmann::json report_to_json(const CheckReport& r) {
    auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"check", r.name},
            {"instances_run", r.instances_run},
            {"skipped", r.skipped},
            {"max_violation", finite_or_null(r.max_violation)},
            {"tolerance", r.tolerance},
            {"pass", r.pass},
            {"negative_control", r.negative_control},
            {"as_expected", r.as_expected()},
            {"stat_min", finite_or_null(r.stat_min)},
            {"stat_max", finite_or_null(r.stat_max)}};
}

namespace detail {

/// A chained clip of T steps over states [0, S) and actions [0, A). With
/// `used` non-null, every (s, a) is fresh and gets added to it.
inline std::optional<TrajectoryClip> random_clip(Rng& rng, std::size_t S, std::size_t A, std::size_t T,
                                                 std::unordered_set<std::uint64_t>* used, std::uint64_t id) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        TrajectoryClip clip;
        clip.id = id;
        std::unordered_set<std::uint64_t> local;
        StateId s = rng.index(S);
        bool ok = true;
        for (std::size_t t = 0; t < T && ok; ++t) {
            std::vector<ActionId> free;
            for (ActionId a = 0; a < A; ++a) {
                const auto k = sa_key(s, a);
                if (!used || (!used->count(k) && !local.count(k))) free.push_back(a);
            }
            if (free.empty()) {
                ok = false;
                break;
            }
            const ActionId a = free[rng.index(free.size())];
            local.insert(sa_key(s, a));
            const StateId s2 = rng.index(S);
            clip.steps.push_back({s, a, s2});
            s = s2;
        }
        if (!ok) continue;
        if (used) used->insert(local.begin(), local.end());
        return clip;
    }
    return std::nullopt;
}

/// N single-label pairs of length T; `unique` forbids repeated (s, a).
inline PreferenceDataset micro_dataset(Rng& rng, std::size_t N, std::size_t T, std::size_t S, std::size_t A,
                                       bool unique) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        PreferenceDataset ds;
        ds.clip_length = T;
        std::unordered_set<std::uint64_t> used;
        bool ok = true;
        for (std::size_t i = 0; i < N && ok; ++i) {
            auto c1 = random_clip(rng, S, A, T, unique ? &used : nullptr, 2 * i);
            auto c2 = random_clip(rng, S, A, T, unique ? &used : nullptr, 2 * i + 1);
            if (!c1 || !c2) {
                ok = false;
                break;
            }
            ds.pairs.push_back({i, std::move(*c1), std::move(*c2), {rng.bernoulli(0.5) ? 1 : 2}});
        }
        if (!ok) continue;
        ds.refresh_metadata();
        return ds;
    }
    throw InternalError("could not build a random micro-dataset");
}

inline PreferenceDataset single_pair_dataset(const PreferencePair& p, std::size_t T) {
    PreferenceDataset ds;
    ds.clip_length = T;
    ds.pairs.push_back(p);
    ds.refresh_metadata();
    return ds;
}

/// Random table-feature reward model with `dim` parameters.
inline ParametricRewardModel random_reward_model(Rng& rng, std::size_t S, std::size_t A, std::size_t dim,
                                                 double weight_scale) {
    std::vector<double> rows(S * A * dim);
    const double fscale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (auto& v : rows) v = fscale * rng.normal();
    std::vector<double> w(dim);
    for (auto& v : w) v = weight_scale * rng.normal();
    return {FeatureMap::table(S, A, dim, std::move(rows)), std::move(w)};
}

/// Q table whose derived rewards stay inside (-1, 1) on every transition.
inline QTable random_bounded_q(Rng& rng, std::size_t S, std::size_t A, double gamma, double scale = 0.45) {
    QTable q(S, A, gamma);
    for (auto& v : q.values) v = rng.uniform(-scale, scale);
    return q;
}

inline bool model_saturated(const ParametricRewardModel& m, const PreferencePair& p, double limit) {
    for (const auto* clip : {&p.clip_1, &p.clip_2})
        for (const auto& st : clip->steps)
            if (std::abs(m(st.s, st.a)) > limit) return true;
    return false;
}

/// True when the pair's derived rewards keep clear of the L3 kinks and
/// every argmax at a successor state wins by more than `margin`.
inline bool q_well_posed(const QTable& q, const PreferencePair& p, double margin) {
    for (const auto* clip : {&p.clip_1, &p.clip_2})
        for (const auto& st : clip->steps) {
            if (std::abs(q.derived_reward(st)) > 1.0 - margin) return false;
            const ActionId best = q.argmax(st.s2);
            for (ActionId a = 0; a < q.actions; ++a)
                if (a != best && q(st.s2, best) - q(st.s2, a) < margin) return false;
        }
    return true;
}

/// Both clips visit the same multiset of state-actions, so every per-pair
/// loss is constant and its gradient vanishes.
inline bool clips_cancel(const PreferencePair& p) {
    auto keys = [](const TrajectoryClip& c) {
        std::vector<std::pair<StateId, ActionId>> k;
        for (const auto& st : c.steps) k.emplace_back(st.s, st.a);
        std::sort(k.begin(), k.end());
        return k;
    };
    return keys(p.clip_1) == keys(p.clip_2);
}

inline double pair_label_l1_value(const ParametricRewardModel& m, const PreferencePair& p) {
    double v = 0.0;
    for (const auto& st : p.chosen().steps) v += std::abs(1.0 - m(st.s, st.a));
    for (const auto& st : p.rejected().steps) v += std::abs(m(st.s, st.a) + 1.0);
    return v;
}

inline double pair_bellman_label_value(const QTable& q, const PreferencePair& p) {
    double v = 0.0;
    for (const auto& st : p.chosen().steps) v += std::abs(q.derived_reward(st) - 1.0);
    for (const auto& st : p.rejected().steps) v += std::abs(q.derived_reward(st) + 1.0);
    return v;
}

} // namespace detail

// --------------------------------------------------------------------------
// Binary labels are optimal

/// Exact grid minimiser of the labelling objective versus binary labels on
/// random no-overlap datasets (N <= 3, T <= 3), for every F given. Each pair
/// is searched on the grid of step 0.5; whole instances are also searched
/// jointly when the grid has at most 1e6 points (step 0.5, else step 1).
inline CheckReport check_binary_label_optimality(std::size_t n_instances, std::uint64_t seed,
                                const std::vector<LinkLossFunction>& losses = link_loss_registry()) {
    if (n_instances == 0) throw ParameterError("n_instances must be >= 1");
    CheckReport rep;
    rep.name = "binary_labels_optimal";
    rep.tolerance = 0.0;
    OptimalLabelOptions opt;
    opt.max_distinct = 18;
    opt.enumeration_limit = 1e6;
    for (std::size_t i = 0; i < n_instances; ++i) {
        Rng rng(mix_seed(seed, {0x1e44aULL, i}));
        const std::size_t N = 1 + rng.index(3), T = 1 + rng.index(3);
        const auto ds = detail::micro_dataset(rng, N, T, 2 * N * T + 2, 2, true);
        const auto expected = binary_label(ds);
        double worst = 0.0;
        for (const auto& F : losses) {
            for (std::size_t k = 0; k < ds.size(); ++k) {
                const auto sol = solve_optimal_labels(detail::single_pair_dataset(ds.pairs[k], T), F, 0.5, opt);
                if (!sol.exhaustive) throw InternalError("per-pair grid search was not exhaustive");
                for (std::size_t j = 0; j < sol.step_labels.size(); ++j)
                    worst = std::max(worst, std::abs(sol.step_labels[j] - expected.tuples[k * 2 * T + j].r));
            }
            const double D = static_cast<double>(2 * N * T);
            const double step = std::pow(5.0, D) <= 1e6 ? 0.5 : (std::pow(3.0, D) <= 1e6 ? 1.0 : 0.0);
            if (step > 0.0) {
                const auto sol = solve_optimal_labels(ds, F, step, opt);
                if (!sol.exhaustive) throw InternalError("joint grid search was not exhaustive");
                for (std::size_t j = 0; j < sol.step_labels.size(); ++j)
                    worst = std::max(worst, std::abs(sol.step_labels[j] - expected.tuples[j].r));
            }
        }
        rep.record(worst, worst);
    }
    return rep.finish();
}

// --------------------------------------------------------------------------
// Agreement of minimisers on no-overlap data

struct MinimiserOptions {
    double learning_rate = 0.5;
    std::size_t max_iterations = 20000;
    /// Converged once an iteration moves no variable by more than this.
    double stall = 1e-12;
};

namespace detail {

/// Projected gradient descent on per-(s,a) rewards boxed to [-1, 1].
/// Returns nullopt when the iteration budget runs out.
template <class Grad>
std::optional<std::vector<double>> boxed_descent(std::vector<double> x, Grad&& grad, const MinimiserOptions& opt) {
    std::vector<double> g(x.size());
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
        std::fill(g.begin(), g.end(), 0.0);
        grad(x, g);
        double moved = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double nx = std::clamp(x[i] - opt.learning_rate * g[i], -1.0, 1.0);
            moved = std::max(moved, std::abs(nx - x[i]));
            x[i] = nx;
        }
        if (moved <= opt.stall) return x;
    }
    return std::nullopt;
}

} // namespace detail

/// Minimises the label loss and the preference loss independently over a
/// fully expressive bounded tabular reward (one value in [-1, 1] per
/// distinct state-action) and compares the resulting labels.
inline CheckReport check_reward_same_minimiser(std::size_t n_instances, std::uint64_t seed,
                                        const LinkLossFunction& F = LinkLossFunction::sigmoid_nll(),
                                        const MinimiserOptions& opt = {}) {
    CheckReport rep;
    rep.name = "reward_same_minimiser";
    rep.tolerance = 1e-3;
    for (std::size_t i = 0; i < n_instances; ++i) {
        Rng rng(mix_seed(seed, {0xca5e1ULL, i}));
        const std::size_t N = 1 + rng.index(3), T = 1 + rng.index(3);
        const auto ds = detail::micro_dataset(rng, N, T, 2 * N * T + 2, 2, true);
        // Variables in binary_label tuple order (no-overlap: one per tuple).
        const std::size_t n = 2 * N * T;
        std::vector<double> x0(n);
        for (auto& v : x0) v = rng.uniform(-0.5, 0.5);
        std::vector<double> sign(n);
        const auto labels = binary_label(ds);
        for (std::size_t j = 0; j < n; ++j) sign[j] = labels.tuples[j].r;
        auto l1_grad = [&](const std::vector<double>& x, std::vector<double>& g) {
            for (std::size_t j = 0; j < n; ++j) g[j] = sign0(x[j] - sign[j]);
        };
        auto l2_grad = [&](const std::vector<double>& x, std::vector<double>& g) {
            for (std::size_t k = 0; k < N; ++k) {
                double gap = 0.0;
                for (std::size_t j = 2 * T * k; j < 2 * T * (k + 1); ++j) gap += sign[j] * x[j];
                const double d = F.derivative(gap);
                for (std::size_t j = 2 * T * k; j < 2 * T * (k + 1); ++j) g[j] = d * sign[j];
            }
        };
        const auto a = detail::boxed_descent(x0, l1_grad, opt);
        const auto b = detail::boxed_descent(x0, l2_grad, opt);
        if (!a || !b) {
            ++rep.skipped;
            continue;
        }
        double gap = 0.0;
        for (std::size_t j = 0; j < n; ++j) gap = std::max(gap, std::abs((*a)[j] - (*b)[j]));
        rep.record(gap, gap);
    }
    return rep.finish();
}

/// Same comparison for tabular Q. Both Bellman losses depend on Q only
/// through the derived rewards on the data, so each is minimised in those
/// coordinates (boxed to [-1, 1]) and Q is rebuilt from them by
/// re-telescoping; the check compares the derived rewards of the two
/// resulting Q tables. Projected descent directly on Q entries can stall
/// where the max couples transitions, so it is not used here.
inline CheckReport check_bellman_same_minimiser(std::size_t n_instances, std::uint64_t seed,
                                        const LinkLossFunction& F = LinkLossFunction::sigmoid_nll(),
                                        const MinimiserOptions& opt = {}) {
    CheckReport rep;
    rep.name = "bellman_same_minimiser";
    rep.tolerance = 1e-3;
    for (std::size_t i = 0; i < n_instances; ++i) {
        Rng rng(mix_seed(seed, {0xca5e2ULL, i}));
        const std::size_t N = 1 + rng.index(2), T = 1 + rng.index(3);
        const std::size_t S = 2 * N * T + 2, A = 2;
        const double gamma = rng.uniform(0.5, 0.95);
        const auto ds = detail::micro_dataset(rng, N, T, S, A, true);
        const auto transitions = dataset_transitions(ds);
        const auto labels = binary_label(ds);
        const auto q0 = detail::random_bounded_q(rng, S, A, gamma);
        const std::size_t n = transitions.size();
        std::vector<double> r0(n), sign(n);
        for (std::size_t j = 0; j < n; ++j) {
            r0[j] = q0.derived_reward(transitions[j]);
            sign[j] = labels.tuples[j].r;
        }
        // Gradients of the Bellman losses with respect to the derived rewards.
        auto l3_grad = [&](const std::vector<double>& r, std::vector<double>& g) {
            for (std::size_t j = 0; j < n; ++j) g[j] = sign0(r[j] - sign[j]);
        };
        auto l4_grad = [&](const std::vector<double>& r, std::vector<double>& g) {
            for (std::size_t k = 0; k < N; ++k) {
                double gap = 0.0;
                for (std::size_t j = 2 * T * k; j < 2 * T * (k + 1); ++j) gap += sign[j] * r[j];
                const double d = F.derivative(gap);
                for (std::size_t j = 2 * T * k; j < 2 * T * (k + 1); ++j) g[j] = d * sign[j];
            }
        };
        const auto ra = detail::boxed_descent(r0, l3_grad, opt);
        const auto rb = detail::boxed_descent(r0, l4_grad, opt);
        if (!ra || !rb) {
            ++rep.skipped;
            continue;
        }
        QTable qa = q0, qb = q0;
        const double mismatch = std::max(retelescope(qa, transitions, *ra), retelescope(qb, transitions, *rb));
        double gap = 0.0;
        for (const auto& st : transitions) gap = std::max(gap, std::abs(qa.derived_reward(st) - qb.derived_reward(st)));
        rep.record(std::max(gap, mismatch), gap);
    }
    return rep.finish();
}

// --------------------------------------------------------------------------
// Affine relation under a linear link-loss

namespace detail {

/// Fits sum_label = C1 sum_pref + C2 from the two points furthest apart in
/// sum_pref and returns the largest residual over all points, or nullopt
/// when sum_pref does not vary (C1 undetermined).
inline std::optional<double> affine_residual(const std::vector<double>& label_sums,
                                             const std::vector<double>& pref_sums) {
    const auto [lo, hi] = std::minmax_element(pref_sums.begin(), pref_sums.end());
    const auto i = static_cast<std::size_t>(lo - pref_sums.begin()), j = static_cast<std::size_t>(hi - pref_sums.begin());
    const double spread = pref_sums[j] - pref_sums[i];
    if (!(spread > 1e-9 * std::max(1.0, std::abs(pref_sums[j])))) return std::nullopt;
    const double c1 = (label_sums[j] - label_sums[i]) / spread;
    if (c1 == 0.0) return std::nullopt;
    const double c2 = label_sums[i] - c1 * pref_sums[i];
    double worst = 0.0;
    for (std::size_t k = 0; k < pref_sums.size(); ++k)
        worst = std::max(worst, std::abs(label_sums[k] - (c1 * pref_sums[k] + c2)));
    return worst;
}

} // namespace detail

/// Sum of L1 versus sum of L2 over a random dataset at `points` random
/// parameter vectors of a bounded reward model (L1 vs L2) or over random
/// bounded Q tables (L3 vs L4). With a linear F the residual of the affine
/// fit is at rounding level; any nonlinear F is a negative control.
inline CheckReport check_affine_relation(std::size_t n_instances, std::uint64_t seed, bool bellman,
                                      const LinkLossFunction& F = LinkLossFunction::linear_one_minus(),
                                      std::size_t points = 20, bool negative_control = false) {
    CheckReport rep;
    rep.name = std::string(bellman ? "bellman" : "reward") + "_affine" + (negative_control ? "_control" : "");
    rep.tolerance = negative_control ? 1e-3 : 1e-9;
    rep.negative_control = negative_control;
    for (std::size_t i = 0; i < n_instances; ++i) {
        Rng rng(mix_seed(seed, {0xca5e3ULL, bellman ? 1ULL : 0ULL, i}));
        const std::size_t N = 1 + rng.index(5), T = 1 + rng.index(5);
        const std::size_t S = 3 + rng.index(6), A = 1 + rng.index(3);
        const auto ds = detail::micro_dataset(rng, N, T, S, A, false);
        std::vector<double> label_sums, pref_sums;
        if (!bellman) {
            const std::size_t dim = 3 + rng.index(18);
            auto model = detail::random_reward_model(rng, S, A, dim, 1.0);
            for (std::size_t k = 0; k < points; ++k) {
                const double scale = rng.uniform(0.1, 3.0);
                for (auto& w : model.mutable_parameters()) w = scale * rng.normal();
                double l1 = 0.0, l2 = 0.0;
                for (const auto& p : ds.pairs) {
                    l1 += detail::pair_label_l1_value(model, p);
                    l2 += accumulate_pair_preference(model, p, F, nullptr);
                }
                label_sums.push_back(l1);
                pref_sums.push_back(l2);
            }
        } else {
            const double gamma = rng.uniform(0.5, 0.99);
            for (std::size_t k = 0; k < points; ++k) {
                const auto q = detail::random_bounded_q(rng, S, A, gamma, rng.uniform(0.05, 0.5));
                double l3 = 0.0, l4 = 0.0;
                for (const auto& p : ds.pairs) {
                    l3 += detail::pair_bellman_label_value(q, p);
                    l4 += accumulate_pair_bellman_preference(q, p, F, nullptr);
                }
                label_sums.push_back(l3);
                pref_sums.push_back(l4);
            }
        }
        const auto residual = detail::affine_residual(label_sums, pref_sums);
        if (!residual) {
            ++rep.skipped;
            continue;
        }
        rep.record(*residual, *residual);
    }
    return rep.finish();
}

// --------------------------------------------------------------------------
// Per-pair gradient direction

struct GradientDirectionReports {
    CheckReport analytic;           // both gradients analytic
    CheckReport finite_difference;  // one side replaced by central differences
};

struct DirectionOptions {
    double fd_step = 1e-5;
    double analytic_tolerance = 1e-6;
    double fd_tolerance = 1e-3;
};

/// For each random pair: cosine between the gradients of the label loss and
/// the preference loss, for a random table-feature reward model (L1 vs L2)
/// or a random tabular Q with a locally constant argmax (L3 vs L4). `losses`
/// are cycled over instances. An increasing F is the negative control and
/// should give cosine -1.
inline GradientDirectionReports check_gradient_direction(
    std::size_t n_instances, std::uint64_t seed, bool bellman,
    const std::vector<LinkLossFunction>& losses = link_loss_registry(), bool negative_control = false,
    const DirectionOptions& opt = {}) {
    const std::string base = std::string(bellman ? "bellman" : "reward") + "_direction";
    GradientDirectionReports out;
    out.analytic.name = base + (negative_control ? "_control" : "");
    out.finite_difference.name = base + "_vs_fd" + (negative_control ? "_control" : "");
    out.analytic.tolerance = opt.analytic_tolerance;
    out.finite_difference.tolerance = opt.fd_tolerance;
    out.analytic.negative_control = out.finite_difference.negative_control = negative_control;
    if (losses.empty()) throw ParameterError("need at least one link-loss function");

    for (std::size_t i = 0; i < n_instances; ++i) {
        const auto& F = losses[i % losses.size()];
        std::vector<double> g_label, g_pref, fd_label, fd_pref;
        bool ready = false;
        for (std::uint64_t attempt = 0; attempt < 1000 && !ready; ++attempt) {
            Rng rng(mix_seed(seed, {0xca5e4ULL, bellman ? 1ULL : 0ULL, i, attempt}));
            const std::size_t T = 1 + rng.index(5);
            if (!bellman) {
                const std::size_t S = 2 + rng.index(5), A = 1 + rng.index(3), dim = 3 + rng.index(18);
                const auto ds = detail::micro_dataset(rng, 1, T, S, A, false);
                const auto& pair = ds.pairs[0];
                const auto model = detail::random_reward_model(rng, S, A, dim, 1.0);
                if (detail::model_saturated(model, pair, 0.999)) continue;
                g_label = pair_label_l1_loss(model, pair).gradient;
                g_pref = pair_preference_loss(model, pair, F).gradient;
                const auto features = model.features();
                fd_label = finite_difference_gradient(
                    [&](std::span<const double> w) {
                        return detail::pair_label_l1_value(
                            ParametricRewardModel(features, std::vector<double>(w.begin(), w.end())), pair);
                    },
                    model.parameters(), opt.fd_step);
                fd_pref = finite_difference_gradient(
                    [&](std::span<const double> w) {
                        return accumulate_pair_preference(
                            ParametricRewardModel(features, std::vector<double>(w.begin(), w.end())), pair, F,
                            nullptr);
                    },
                    model.parameters(), opt.fd_step);
            } else {
                std::size_t S = 2 + rng.index(4), A = 1 + rng.index(4);
                if (S * A < 3) A = 2;
                const double gamma = rng.uniform(0.5, 0.99);
                const auto ds = detail::micro_dataset(rng, 1, T, S, A, false);
                const auto& pair = ds.pairs[0];
                const auto q = detail::random_bounded_q(rng, S, A, gamma);
                if (!detail::q_well_posed(q, pair, 1e-3)) continue;
                g_label = pair_bellman_label_loss(q, pair).gradient;
                g_pref = pair_bellman_preference_loss(q, pair, F).gradient;
                auto with = [&](std::span<const double> v) {
                    QTable probe = q;
                    probe.values.assign(v.begin(), v.end());
                    return probe;
                };
                fd_label = finite_difference_gradient(
                    [&](std::span<const double> v) { return detail::pair_bellman_label_value(with(v), pair); },
                    q.values, opt.fd_step);
                fd_pref = finite_difference_gradient(
                    [&](std::span<const double> v) {
                        return accumulate_pair_bellman_preference(with(v), pair, F, nullptr);
                    },
                    q.values, opt.fd_step);
            }
            // Identical clips cancel and leave both gradients zero; draw again.
            ready = norm2(g_label) >= 1e-14 || norm2(g_pref) >= 1e-14;
        }
        if (!ready) throw InternalError("could not sample a well-posed gradient instance");

        const double cos_a = cosine_similarity(g_label, g_pref);
        const double cos_fd = std::min(cosine_similarity(g_label, fd_pref), cosine_similarity(fd_label, g_pref));
        out.analytic.record(1.0 - cos_a, cos_a);
        out.finite_difference.record(1.0 - cos_fd, cos_fd);
    }
    out.analytic.finish();
    out.finite_difference.finish();
    return out;
}

// --------------------------------------------------------------------------
// Gradient oracle for the four per-pair losses

/// Analytic gradient versus central differences at `points` random
/// instances per loss; reports the largest relative error for L1..L4.
inline std::vector<CheckReport> check_gradients(std::size_t points, std::uint64_t seed, double step = 1e-5,
                                                double tolerance = 1e-4) {
    const auto registry = link_loss_registry();
    std::vector<CheckReport> reps(4);
    const char* names[4] = {"gradient_L1_label", "gradient_L2_preference", "gradient_L3_bellman_label",
                            "gradient_L4_bellman_preference"};
    for (int k = 0; k < 4; ++k) {
        reps[k].name = names[k];
        reps[k].tolerance = tolerance;
    }
    for (std::size_t i = 0; i < points; ++i) {
        const auto& F = registry[i % registry.size()];
        for (std::uint64_t attempt = 0;; ++attempt) {
            Rng rng(mix_seed(seed, {0x9dULL, i, attempt}));
            const std::size_t T = 1 + rng.index(5), S = 2 + rng.index(5), A = 1 + rng.index(3);
            const auto ds = detail::micro_dataset(rng, 1, T, S, A, false);
            const auto& pair = ds.pairs[0];
            const auto model = detail::random_reward_model(rng, S, A, 3 + rng.index(18), 1.0);
            const auto q = detail::random_bounded_q(rng, S, std::max<std::size_t>(A, 2), rng.uniform(0.5, 0.99));
            if (detail::clips_cancel(pair) || detail::model_saturated(model, pair, 0.999) ||
                !detail::q_well_posed(q, pair, 1e-3))
                continue;
            const auto& features = model.features();
            auto at_w = [&](std::span<const double> w) {
                return ParametricRewardModel(features, std::vector<double>(w.begin(), w.end()));
            };
            auto at_q = [&](std::span<const double> v) {
                QTable probe = q;
                probe.values.assign(v.begin(), v.end());
                return probe;
            };
            const auto fd1 = finite_difference_gradient(
                [&](std::span<const double> w) { return detail::pair_label_l1_value(at_w(w), pair); },
                model.parameters(), step);
            const auto fd2 = finite_difference_gradient(
                [&](std::span<const double> w) { return accumulate_pair_preference(at_w(w), pair, F, nullptr); },
                model.parameters(), step);
            const auto fd3 = finite_difference_gradient(
                [&](std::span<const double> v) { return detail::pair_bellman_label_value(at_q(v), pair); }, q.values,
                step);
            const auto fd4 = finite_difference_gradient(
                [&](std::span<const double> v) {
                    return accumulate_pair_bellman_preference(at_q(v), pair, F, nullptr);
                },
                q.values, step);
            const double e1 = relative_error(pair_label_l1_loss(model, pair).gradient, fd1);
            const double e2 = relative_error(pair_preference_loss(model, pair, F).gradient, fd2);
            const double e3 = relative_error(pair_bellman_label_loss(q, pair).gradient, fd3);
            const double e4 = relative_error(pair_bellman_preference_loss(q, pair, F).gradient, fd4);
            reps[0].record(e1, e1);
            reps[1].record(e2, e2);
            reps[2].record(e3, e3);
            reps[3].record(e4, e4);
            break;
        }
    }
    for (auto& r : reps) r.finish();
    return reps;
}

// --------------------------------------------------------------------------

/// Every check at `instances` instances; with `include_controls` the
/// negative controls are appended (each expected to fail).
inline std::vector<CheckReport> run_all_checks(std::size_t instances, std::uint64_t seed, bool include_controls) {
    std::vector<CheckReport> out;
    out.push_back(check_binary_label_optimality(instances, seed));
    out.push_back(check_reward_same_minimiser(instances, seed));
    out.push_back(check_bellman_same_minimiser(instances, seed));
    out.push_back(check_affine_relation(instances, seed, false));
    out.push_back(check_affine_relation(instances, seed, true));
    for (bool bellman : {false, true}) {
        auto r = check_gradient_direction(instances, seed, bellman);
        out.push_back(r.analytic);
        out.push_back(r.finite_difference);
    }
    for (auto& r : check_gradients(std::max<std::size_t>(20, instances / 5), seed)) out.push_back(r);
    if (include_controls) {
        out.push_back(check_affine_relation(instances, seed, false, LinkLossFunction::sigmoid_nll(), 20, true));
        out.push_back(check_affine_relation(instances, seed, true, LinkLossFunction::sigmoid_nll(), 20, true));
        for (bool bellman : {false, true})
            out.push_back(
                check_gradient_direction(instances, seed, bellman, {LinkLossFunction::increasing()}, true)
                    .analytic);
    }
    return out;
}

} // namespace brl
