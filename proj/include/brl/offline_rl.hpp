#pragma once

// Tabular offline RL learners over reward-labelled data. Every learner
// restricts greedy choices (and the Bellman max) to actions present in the
// data at states that have data.

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "brl/bellman.hpp"
#include "brl/errors.hpp"
#include "brl/labeling.hpp"
#include "brl/link.hpp"
#include "brl/mdp.hpp"
#include "brl/planning.hpp"
#include "brl/preference.hpp"

namespace brl {

/// State/action counts and discount of the task a dataset was drawn from.
struct TaskShape {
    std::size_t states = 0;
    std::size_t actions = 0;
    double discount = 0.99;

    static TaskShape of(const Mdp& mdp) { return {mdp.state_count(), mdp.action_count(), mdp.discount()}; }
};

struct LearnerConfig {
    enum class Algorithm { pessimistic_fqi, conservative_q, model_based_pessimistic, preference_bellman };

    Algorithm algorithm = Algorithm::pessimistic_fqi;
    /// Conservative-Q penalty weight.
    double alpha = 1.0;
    /// Model-based count penalty weight: r - lambda / sqrt(n).
    double lambda = 1.0;
    std::size_t iterations = 2000;
    double tolerance = 1e-9;
    std::uint64_t seed = 0;
    // preference_bellman only
    LinkLossFunction F = LinkLossFunction::sigmoid_nll();
    double learning_rate = 0.5;
    std::size_t projection_sweeps = 50;

    void validate() const {
        if (alpha < 0.0 || lambda < 0.0) throw ParameterError("penalty weights must be non-negative");
        if (iterations == 0) throw ParameterError("iterations must be >= 1");
        if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
    }
};

inline std::string algorithm_name(LearnerConfig::Algorithm a) {
    switch (a) {
    case LearnerConfig::Algorithm::pessimistic_fqi: return "pessimistic_fqi";
    case LearnerConfig::Algorithm::conservative_q: return "conservative_q";
    case LearnerConfig::Algorithm::model_based_pessimistic: return "model_based";
    case LearnerConfig::Algorithm::preference_bellman: return "preference_bellman";
    }
    return "";
}

inline LearnerConfig::Algorithm algorithm_from_name(const std::string& name) {
    if (name == "pessimistic_fqi" || name == "fqi") return LearnerConfig::Algorithm::pessimistic_fqi;
    if (name == "conservative_q" || name == "cql") return LearnerConfig::Algorithm::conservative_q;
    if (name == "model_based" || name == "model_based_pessimistic" || name == "mb")
        return LearnerConfig::Algorithm::model_based_pessimistic;
    if (name == "preference_bellman") return LearnerConfig::Algorithm::preference_bellman;
    throw ParameterError("unknown learner '" + name + "'");
}

/// Per-(s,a) statistics of a reward-labelled dataset.
struct EmpiricalModel {
    TaskShape shape;
    ActionSupport support;
    std::vector<std::size_t> counts;
    std::vector<double> mean_reward;
    /// Sorted (next state, probability) per (s,a); empty when unseen.
    std::vector<std::vector<Transition>> next;

    std::size_t index(StateId s, ActionId a) const { return s * shape.actions + a; }
};

inline EmpiricalModel estimate_model(const RewardLabeledDataset& data, const TaskShape& shape) {
    if (data.tuples.empty()) throw ParameterError("offline learner needs non-empty data");
    EmpiricalModel m;
    m.shape = shape;
    m.support = ActionSupport::of(data, shape.states, shape.actions);
    const std::size_t n = shape.states * shape.actions;
    m.counts.assign(n, 0);
    m.mean_reward.assign(n, 0.0);
    m.next.assign(n, {});
    std::vector<std::map<StateId, std::size_t>> succ(n);
    for (const auto& t : data.tuples) {
        if (t.s2 >= shape.states) throw ParameterError("data references a state outside the task");
        const auto i = m.index(t.s, t.a);
        ++m.counts[i];
        m.mean_reward[i] += t.r;
        ++succ[i][t.s2];
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (m.counts[i] == 0) continue;
        const double c = static_cast<double>(m.counts[i]);
        m.mean_reward[i] /= c;
        for (const auto& [s2, k] : succ[i]) m.next[i].push_back({s2, static_cast<double>(k) / c});
    }
    return m;
}

/// Value assigned to state-actions without data under count-based
/// pessimism; strictly below any return reachable with |r| <= 1.
inline double pessimistic_floor(double discount) { return -1.0 / (1.0 - discount) - 1.0; }

/// Greedy over supported actions; states without data get a uniform row.
inline Policy greedy_supported(const QTable& q, const ActionSupport& support) {
    std::vector<double> table(q.states * q.actions, 0.0);
    for (StateId s = 0; s < q.states; ++s) {
        if (!support.has_data(s)) {
            for (ActionId a = 0; a < q.actions; ++a) table[s * q.actions + a] = 1.0 / static_cast<double>(q.actions);
            continue;
        }
        table[s * q.actions + q.argmax(s, &support)] = 1.0;
    }
    return Policy(q.states, q.actions, std::move(table));
}

enum class UnvisitedRule {
    /// Unsupported (s,a) stay at the pessimistic floor.
    floor,
    /// Unsupported (s,a) keep their initial value 0 and take part in the max.
    keep_initial,
};

namespace detail {

inline double next_value(const QTable& q, const EmpiricalModel& m, StateId s2, UnvisitedRule rule) {
    if (rule == UnvisitedRule::keep_initial) return q.max_value(s2);
    if (!m.support.has_data(s2)) return pessimistic_floor(q.discount);
    return q.max_value(s2, &m.support);
}

inline std::vector<double> backup_targets(const QTable& q, const EmpiricalModel& m, UnvisitedRule rule) {
    std::vector<double> y(q.values.size(), 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (m.counts[i] == 0) continue;
        double v = m.mean_reward[i];
        for (const auto& t : m.next[i]) v += q.discount * t.prob * next_value(q, m, t.next, rule);
        y[i] = v;
    }
    return y;
}

/// Minimises sum_a mu_a (Q_a - y_a)^2 / 2 + alpha (logsumexp Q - sum_a mu_a Q_a)
/// over the supported actions of one state by damped Newton steps.
inline Eigen::VectorXd conservative_state_solve(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double alpha) {
    Eigen::VectorXd q = y;
    auto objective = [&](const Eigen::VectorXd& x) {
        const double mx = x.maxCoeff();
        const double lse = mx + std::log((x.array() - mx).exp().sum());
        return 0.5 * (mu.array() * (x - y).array().square()).sum() + alpha * (lse - mu.dot(x));
    };
    for (int it = 0; it < 100; ++it) {
        const double mx = q.maxCoeff();
        Eigen::VectorXd sm = (q.array() - mx).exp();
        sm /= sm.sum();
        const Eigen::VectorXd grad = mu.cwiseProduct(q - y) + alpha * (sm - mu);
        if (grad.lpNorm<Eigen::Infinity>() < 1e-13) break;
        const Eigen::MatrixXd h =
            Eigen::MatrixXd(mu.asDiagonal()) + alpha * (Eigen::MatrixXd(sm.asDiagonal()) - sm * sm.transpose());
        const Eigen::VectorXd step = h.ldlt().solve(grad);
        const double f0 = objective(q);
        double t = 1.0;
        Eigen::VectorXd cand = q - step;
        while (objective(cand) > f0 - 1e-4 * t * grad.dot(step) && t > 1e-10) {
            t *= 0.5;
            cand = q - t * step;
        }
        q = cand;
        if ((t * step).lpNorm<Eigen::Infinity>() < 1e-15) break;
    }
    return q;
}

} // namespace detail

/// Fitted Q iteration on the empirical model: Q(s,a) = mean r + gamma E max Q.
inline QTable fitted_q_values(const RewardLabeledDataset& data, const TaskShape& shape, const LearnerConfig& cfg,
                              UnvisitedRule rule = UnvisitedRule::floor) {
    cfg.validate();
    const auto m = estimate_model(data, shape);
    const double init = rule == UnvisitedRule::floor ? pessimistic_floor(shape.discount) : 0.0;
    QTable q(shape.states, shape.actions, shape.discount, init);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto y = detail::backup_targets(q, m, rule);
        double delta = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (m.counts[i] == 0) continue;
            delta = std::max(delta, std::abs(y[i] - q.values[i]));
            q.values[i] = y[i];
        }
        if (delta <= cfg.tolerance) break;
    }
    return q;
}

inline Policy fit_pessimistic_fqi(const RewardLabeledDataset& data, const TaskShape& shape, const LearnerConfig& cfg) {
    const auto q = fitted_q_values(data, shape, cfg, UnvisitedRule::floor);
    return greedy_supported(q, ActionSupport::of(data, shape.states, shape.actions));
}

/// Fitted iteration where each state's supported Q values additionally pay
/// alpha (logsumexp_a Q(s,a) - E_data Q(s,a)). Unsupported actions sit at the
/// pessimistic floor; alpha = 0 gives exactly fitted_q_values.
inline QTable conservative_q_values(const RewardLabeledDataset& data, const TaskShape& shape,
                                    const LearnerConfig& cfg) {
    cfg.validate();
    const auto m = estimate_model(data, shape);
    QTable q(shape.states, shape.actions, shape.discount, pessimistic_floor(shape.discount));
    const std::size_t A = shape.actions;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto y = detail::backup_targets(q, m, UnvisitedRule::floor);
        double delta = 0.0;
        for (StateId s = 0; s < shape.states; ++s) {
            if (!m.support.has_data(s)) continue;
            std::vector<ActionId> acts;
            std::size_t total = 0;
            for (ActionId a = 0; a < A; ++a)
                if (m.counts[s * A + a] > 0) {
                    acts.push_back(a);
                    total += m.counts[s * A + a];
                }
            const auto k = static_cast<Eigen::Index>(acts.size());
            Eigen::VectorXd ys(k), mu(k);
            for (Eigen::Index j = 0; j < k; ++j) {
                ys[j] = y[s * A + acts[j]];
                mu[j] = static_cast<double>(m.counts[s * A + acts[j]]) / static_cast<double>(total);
            }
            const Eigen::VectorXd qs = cfg.alpha == 0.0 ? ys : detail::conservative_state_solve(ys, mu, cfg.alpha);
            for (Eigen::Index j = 0; j < k; ++j) {
                double& cell = q.at(s, acts[j]);
                delta = std::max(delta, std::abs(qs[j] - cell));
                cell = qs[j];
            }
        }
        if (delta <= cfg.tolerance) break;
    }
    return q;
}

inline Policy fit_conservative_q(const RewardLabeledDataset& data, const TaskShape& shape, const LearnerConfig& cfg) {
    return greedy_supported(conservative_q_values(data, shape, cfg), ActionSupport::of(data, shape.states, shape.actions));
}

/// Maximum-likelihood dynamics with pessimistic rewards r - lambda/sqrt(n).
/// Unseen (s,a) become absorbing self-loops paying -1.
struct LearnedDynamics {
    TaskShape shape;
    std::vector<std::vector<Transition>> rows;  // state-major
    std::vector<double> reward;
};

inline LearnedDynamics learned_dynamics(const RewardLabeledDataset& data, const TaskShape& shape, double lambda) {
    if (lambda < 0.0) throw ParameterError("lambda must be non-negative");
    const auto m = estimate_model(data, shape);
    const std::size_t S = shape.states, A = shape.actions;
    LearnedDynamics out{shape, std::vector<std::vector<Transition>>(S * A), std::vector<double>(S * A, -1.0)};
    for (StateId s = 0; s < S; ++s) {
        for (ActionId a = 0; a < A; ++a) {
            const auto i = s * A + a;
            if (m.counts[i] == 0) {
                out.rows[i] = {{s, 1.0}};
                continue;
            }
            out.rows[i] = m.next[i];
            out.reward[i] = m.mean_reward[i] - lambda / std::sqrt(static_cast<double>(m.counts[i]));
        }
    }
    return out;
}

inline QTable model_based_values(const RewardLabeledDataset& data, const TaskShape& shape, const LearnerConfig& cfg) {
    cfg.validate();
    const auto model = learned_dynamics(data, shape, cfg.lambda);
    const auto support = ActionSupport::of(data, shape.states, shape.actions);
    const std::size_t A = shape.actions;
    QTable q(shape.states, A, shape.discount, 0.0);
    std::vector<double> v(shape.states, 0.0);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        for (std::size_t i = 0; i < q.values.size(); ++i) {
            double x = model.reward[i];
            for (const auto& t : model.rows[i]) x += shape.discount * t.prob * v[t.next];
            q.values[i] = x;
        }
        double delta = 0.0;
        for (StateId s = 0; s < shape.states; ++s) {
            const double nv = q.max_value(s, &support);
            delta = std::max(delta, std::abs(nv - v[s]));
            v[s] = nv;
        }
        if (delta <= cfg.tolerance) break;
    }
    return q;
}

inline Policy fit_model_based(const RewardLabeledDataset& data, const TaskShape& shape, const LearnerConfig& cfg) {
    return greedy_supported(model_based_values(data, shape, cfg), ActionSupport::of(data, shape.states, shape.actions));
}

struct PreferenceBellmanResult {
    QTable q;
    std::vector<double> loss_curve;  // mean loss per pair, before and after each step
    double bound_violation = 0.0;    // left after the final projection
};

/// Gradient descent on the mean preference Bellman loss over tabular Q,
/// projecting derived rewards on dataset transitions back into [-1, 1]
/// after every step. The max inside derived rewards ranges over supported
/// actions.
inline PreferenceBellmanResult train_preference_bellman(const PreferenceDataset& ds, const TaskShape& shape,
                                                        const LearnerConfig& cfg) {
    cfg.validate();
    if (ds.pairs.empty()) throw ParameterError("offline learner needs non-empty data");
    if (!ds.single_label()) throw ParameterError("preference_bellman needs a single-label dataset");
    const auto support = ActionSupport::of(ds, shape.states, shape.actions);
    const auto transitions = dataset_transitions(ds);
    PreferenceBellmanResult res;
    res.q = QTable(shape.states, shape.actions, shape.discount, 0.0);
    auto& q = res.q;
    const double n = static_cast<double>(ds.size());
    auto mean_loss = [&] {
        double total = 0.0;
        for (const auto& p : ds.pairs) total += accumulate_pair_bellman_preference(q, p, cfg.F, nullptr, &support);
        return total / n;
    };
    res.loss_curve.push_back(mean_loss());
    std::vector<double> grad(q.values.size(), 0.0);
    for (std::size_t step = 1; step <= cfg.iterations; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const auto& p : ds.pairs) accumulate_pair_bellman_preference(q, p, cfg.F, &grad, &support);
        for (std::size_t i = 0; i < grad.size(); ++i) q.values[i] -= cfg.learning_rate * grad[i] / n;
        res.bound_violation = project_derived_rewards(q, transitions, cfg.projection_sweeps, &support);
        const double loss = mean_loss();
        if (!std::isfinite(loss) || !q.all_finite()) throw TrainingError("preference Bellman loss diverged", step);
        res.loss_curve.push_back(loss);
    }
    return res;
}

inline Policy fit_preference_bellman(const PreferenceDataset& ds, const TaskShape& shape, const LearnerConfig& cfg) {
    return greedy_supported(train_preference_bellman(ds, shape, cfg).q, ActionSupport::of(ds, shape.states, shape.actions));
}

/// Runs the configured reward-based learner.
inline Policy fit(const RewardLabeledDataset& data, const TaskShape& shape, const LearnerConfig& cfg) {
    switch (cfg.algorithm) {
    case LearnerConfig::Algorithm::pessimistic_fqi: return fit_pessimistic_fqi(data, shape, cfg);
    case LearnerConfig::Algorithm::conservative_q: return fit_conservative_q(data, shape, cfg);
    case LearnerConfig::Algorithm::model_based_pessimistic: return fit_model_based(data, shape, cfg);
    case LearnerConfig::Algorithm::preference_bellman:
        throw ParameterError("preference_bellman consumes preference pairs, not reward labels");
    }
    throw InternalError("unhandled learner");
}

/// Same tuples with the environment's true rewards.
inline RewardLabeledDataset relabel_with_true_reward(const Mdp& mdp, const RewardLabeledDataset& data) {
    RewardLabeledDataset out = data;
    for (auto& t : out.tuples) t.r = mdp.reward(t.s, t.a);
    out.saturated = false;
    return out;
}

/// Oracle baseline: the configured learner on true rewards over the same
/// state-actions. preference_bellman falls back to pessimistic FQI.
inline Policy fit_oracle(const Mdp& mdp, const RewardLabeledDataset& data, const LearnerConfig& cfg) {
    LearnerConfig c = cfg;
    if (c.algorithm == LearnerConfig::Algorithm::preference_bellman)
        c.algorithm = LearnerConfig::Algorithm::pessimistic_fqi;
    return fit(relabel_with_true_reward(mdp, data), TaskShape::of(mdp), c);
}

inline nlohmann::json policy_to_json(const Policy& p) {
    return {{"states", p.state_count()}, {"actions", p.action_count()}, {"pi", p.table()}};
}

} // namespace brl
