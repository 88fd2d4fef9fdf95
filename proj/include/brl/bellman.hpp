#pragma once

// Tabular Q functions, the rewards they imply on transitions, and the two
// per-pair Bellman objectives: against binary labels and against the
// preference itself.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "brl/errors.hpp"
#include "brl/labeling.hpp"
#include "brl/link.hpp"
#include "brl/mdp.hpp"
#include "brl/preference.hpp"
#include "brl/reward_model.hpp"

namespace brl {

/// Actions seen in the data. A state with no data at all allows every action.
class ActionSupport {
public:
    ActionSupport() = default;
    ActionSupport(std::size_t states, std::size_t actions)
        : states_(states), actions_(actions), seen_(states * actions, 0), state_seen_(states, 0) {}

    void mark(StateId s, ActionId a) {
        if (s >= states_ || a >= actions_) throw ParameterError("data references a state-action outside the task");
        seen_[s * actions_ + a] = 1;
        state_seen_[s] = 1;
    }

    static ActionSupport all(std::size_t states, std::size_t actions) { return ActionSupport(states, actions); }

    static ActionSupport of(const RewardLabeledDataset& data, std::size_t states, std::size_t actions) {
        ActionSupport sup(states, actions);
        for (const auto& t : data.tuples) sup.mark(t.s, t.a);
        return sup;
    }

    static ActionSupport of(const PreferenceDataset& ds, std::size_t states, std::size_t actions) {
        ActionSupport sup(states, actions);
        for (const auto& p : ds.pairs) {
            for (const auto& st : p.clip_1.steps) sup.mark(st.s, st.a);
            for (const auto& st : p.clip_2.steps) sup.mark(st.s, st.a);
        }
        return sup;
    }

    bool seen(StateId s, ActionId a) const noexcept { return seen_[s * actions_ + a] != 0; }
    bool has_data(StateId s) const noexcept { return state_seen_[s] != 0; }
    bool allowed(StateId s, ActionId a) const noexcept { return !has_data(s) || seen(s, a); }
    std::size_t state_count() const noexcept { return states_; }
    std::size_t action_count() const noexcept { return actions_; }

private:
    std::size_t states_ = 0;
    std::size_t actions_ = 0;
    std::vector<std::uint8_t> seen_;
    std::vector<std::uint8_t> state_seen_;
};

struct QTable {
    std::size_t states = 0;
    std::size_t actions = 0;
    double discount = 0.99;
    std::vector<double> values;  // state-major

    QTable() = default;
    QTable(std::size_t s, std::size_t a, double gamma, double init = 0.0)
        : states(s), actions(a), discount(gamma), values(s * a, init) {
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ParameterError("discount must lie in [0,1)");
    }

    double operator()(StateId s, ActionId a) const { return values[s * actions + a]; }
    double& at(StateId s, ActionId a) { return values[s * actions + a]; }

    /// Lowest-index maximiser over the allowed actions (all when mask is null).
    ActionId argmax(StateId s, const ActionSupport* mask = nullptr) const {
        ActionId best = actions;
        for (ActionId a = 0; a < actions; ++a) {
            if (mask && !mask->allowed(s, a)) continue;
            if (best == actions || values[s * actions + a] > values[s * actions + best]) best = a;
        }
        return best;
    }

    double max_value(StateId s, const ActionSupport* mask = nullptr) const { return (*this)(s, argmax(s, mask)); }

    /// r(s,a,s') = Q(s,a) - gamma max_a' Q(s',a').
    double derived_reward(const Step& st, const ActionSupport* mask = nullptr) const {
        return (*this)(st.s, st.a) - discount * max_value(st.s2, mask);
    }

    bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }

    bool operator==(const QTable&) const = default;
};

inline nlohmann::json qtable_to_json(const QTable& q) {
    return {{"states", q.states}, {"actions", q.actions}, {"gamma", q.discount}, {"q", q.values}};
}

inline QTable qtable_from_json(const nlohmann::json& j) {
    try {
        QTable q(j.at("states").get<std::size_t>(), j.at("actions").get<std::size_t>(), j.at("gamma").get<double>());
        q.values = j.at("q").get<std::vector<double>>();
        if (q.values.size() != q.states * q.actions) throw ValidationError("Q table has wrong size");
        return q;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad Q table: ") + e.what());
    }
}

/// grad += scale * d r(s,a,s') / dQ with the argmax at s' held fixed.
inline void accumulate_derived_gradient(const QTable& q, const Step& st, double scale, std::vector<double>& grad,
                                        const ActionSupport* mask = nullptr) {
    grad[st.s * q.actions + st.a] += scale;
    grad[st.s2 * q.actions + q.argmax(st.s2, mask)] -= scale * q.discount;
}

inline double clip_derived_return(const QTable& q, const TrajectoryClip& clip, const ActionSupport* mask = nullptr) {
    double total = 0.0;
    for (const auto& st : clip.steps) total += q.derived_reward(st, mask);
    return total;
}

/// Bellman loss against binary labels for one single-label pair:
/// sum_chosen |r - 1| + sum_rejected |r + 1| over derived rewards r.
inline LossWithGradient pair_bellman_label_loss(const QTable& q, const PreferencePair& pair,
                                                const ActionSupport* mask = nullptr) {
    LossWithGradient out{0.0, std::vector<double>(q.values.size(), 0.0)};
    auto add = [&](const TrajectoryClip& clip, double label) {
        for (const auto& st : clip.steps) {
            const double diff = q.derived_reward(st, mask) - label;
            out.value += std::abs(diff);
            const double g = sign0(diff);
            if (g != 0.0) accumulate_derived_gradient(q, st, g, out.gradient, mask);
        }
    };
    add(pair.chosen(), 1.0);
    add(pair.rejected(), -1.0);
    return out;
}

/// Bellman loss on the preference: n1 F(G1 - G2) + n2 F(G2 - G1) over
/// derived-reward returns G. Adds the gradient to *grad when non-null.
inline double accumulate_pair_bellman_preference(const QTable& q, const PreferencePair& pair,
                                                 const LinkLossFunction& F, std::vector<double>* grad,
                                                 const ActionSupport* mask = nullptr) {
    const double n1 = static_cast<double>(pair.count(1)), n2 = static_cast<double>(pair.count(2));
    const double gap = clip_derived_return(q, pair.clip_1, mask) - clip_derived_return(q, pair.clip_2, mask);
    double value = 0.0, coef = 0.0;
    if (n1 > 0.0) {
        value += n1 * F(gap);
        coef += n1 * F.derivative(gap);
    }
    if (n2 > 0.0) {
        value += n2 * F(-gap);
        coef -= n2 * F.derivative(-gap);
    }
    if (grad && coef != 0.0) {
        for (const auto& st : pair.clip_1.steps) accumulate_derived_gradient(q, st, coef, *grad, mask);
        for (const auto& st : pair.clip_2.steps) accumulate_derived_gradient(q, st, -coef, *grad, mask);
    }
    return value;
}

inline LossWithGradient pair_bellman_preference_loss(const QTable& q, const PreferencePair& pair,
                                                     const LinkLossFunction& F,
                                                     const ActionSupport* mask = nullptr) {
    LossWithGradient out{0.0, std::vector<double>(q.values.size(), 0.0)};
    out.value = accumulate_pair_bellman_preference(q, pair, F, &out.gradient, mask);
    return out;
}

/// Linear form of the binary-label Bellman loss, valid when every derived
/// reward lies in [-1, 1]: (#steps) - sum_chosen r + sum_rejected r.
inline double pair_bellman_label_loss_linear(const QTable& q, const PreferencePair& pair,
                                             const ActionSupport* mask = nullptr) {
    return static_cast<double>(pair.clip_1.length() + pair.clip_2.length()) -
           clip_derived_return(q, pair.chosen(), mask) + clip_derived_return(q, pair.rejected(), mask);
}

inline std::vector<Step> dataset_transitions(const PreferenceDataset& ds) {
    std::vector<Step> out;
    for (const auto& p : ds.pairs) {
        out.insert(out.end(), p.clip_1.steps.begin(), p.clip_1.steps.end());
        out.insert(out.end(), p.clip_2.steps.begin(), p.clip_2.steps.end());
    }
    return out;
}

/// Largest amount by which a derived reward leaves [-1, 1].
inline double derived_reward_violation(const QTable& q, std::span<const Step> transitions,
                                       const ActionSupport* mask = nullptr) {
    double worst = 0.0;
    for (const auto& st : transitions) worst = std::max(worst, std::abs(q.derived_reward(st, mask)) - 1.0);
    return worst;
}

/// Moves Q(s,a) so each offending derived reward sits on the nearest bound,
/// sweeping until no transition violates or `max_sweeps` is reached. Returns
/// the remaining violation (stochastic transitions can make the bound
/// infeasible for a tabular Q).
inline double project_derived_rewards(QTable& q, std::span<const Step> transitions, std::size_t max_sweeps = 100,
                                      const ActionSupport* mask = nullptr) {
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        bool changed = false;
        for (const auto& st : transitions) {
            const double r = q.derived_reward(st, mask);
            if (r > 1.0 + 1e-12) {
                q.at(st.s, st.a) -= r - 1.0;
                changed = true;
            } else if (r < -1.0 - 1e-12) {
                q.at(st.s, st.a) += -1.0 - r;
                changed = true;
            }
        }
        if (!changed) break;
    }
    return std::max(0.0, derived_reward_violation(q, transitions, mask));
}

/// Rebuilds Q on the transitions' own (s, a) entries so that each derived
/// reward equals the given target: Q(s,a) = r + gamma max Q(s',.), iterated
/// to its fixed point. Entries outside the data stay put. Needs distinct
/// (s, a) across transitions; returns the largest remaining mismatch.
inline double retelescope(QTable& q, std::span<const Step> transitions, std::span<const double> targets,
                          double tolerance = 1e-14, std::size_t max_sweeps = 100000,
                          const ActionSupport* mask = nullptr) {
    if (targets.size() != transitions.size()) throw ParameterError("one target reward per transition needed");
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double moved = 0.0;
        for (std::size_t j = 0; j < transitions.size(); ++j) {
            const auto& st = transitions[j];
            const double v = targets[j] + q.discount * q.max_value(st.s2, mask);
            moved = std::max(moved, std::abs(v - q(st.s, st.a)));
            q.at(st.s, st.a) = v;
        }
        if (moved <= tolerance) break;
    }
    double worst = 0.0;
    for (std::size_t j = 0; j < transitions.size(); ++j)
        worst = std::max(worst, std::abs(q.derived_reward(transitions[j], mask) - targets[j]));
    return worst;
}

} // namespace brl
