#pragma once

// Exact planning and evaluation on tabular MDPs, plus sampling utilities.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

#include "brl/errors.hpp"
#include "brl/mdp.hpp"
#include "brl/random.hpp"

namespace brl {

struct ValueIterationResult {
    std::vector<double> values;
    std::vector<double> q;  // state-major, S*A
    std::size_t iterations = 0;
    double residual = 0.0;
};

/// Bellman optimality iteration until the sup-norm residual drops to `tolerance`.
inline ValueIterationResult value_iteration(const Mdp& mdp, double tolerance, std::size_t max_iterations = 1000000) {
    if (!(tolerance > 0.0)) throw ParameterError("value_iteration: tolerance must be positive");
    const std::size_t S = mdp.state_count(), A = mdp.action_count();
    const double gamma = mdp.discount();
    ValueIterationResult out;
    out.values.assign(S, 0.0);
    out.q.assign(S * A, 0.0);
    std::vector<double> next(S);
    for (std::size_t it = 0; it < max_iterations; ++it) {
        double residual = 0.0;
        for (StateId s = 0; s < S; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (ActionId a = 0; a < A; ++a) {
                double q = mdp.reward(s, a);
                for (const auto& t : mdp.transitions(s, a)) q += gamma * t.prob * out.values[t.next];
                out.q[s * A + a] = q;
                best = std::max(best, q);
            }
            next[s] = best;
            residual = std::max(residual, std::abs(best - out.values[s]));
        }
        out.values.swap(next);
        out.iterations = it + 1;
        out.residual = residual;
        if (residual <= tolerance) break;
    }
    return out;
}

/// Deterministic greedy policy; the lowest action index wins within a
/// relative tie window of 1e-12.
inline Policy greedy_policy(std::span<const double> q, std::size_t states, std::size_t actions) {
    std::vector<ActionId> choice(states, 0);
    for (StateId s = 0; s < states; ++s) {
        double best = q[s * actions];
        for (ActionId a = 1; a < actions; ++a) {
            const double v = q[s * actions + a];
            if (v > best + 1e-12 * std::max(1.0, std::abs(best))) {
                best = v;
                choice[s] = a;
            }
        }
    }
    return Policy::deterministic(choice, actions);
}

inline Policy solve_optimal(const Mdp& mdp, double tolerance = 1e-10) {
    const auto vi = value_iteration(mdp, tolerance);
    return greedy_policy(vi.q, mdp.state_count(), mdp.action_count());
}

/// Above this many states policy evaluation switches from sparse LU to BiCGSTAB.
inline constexpr std::size_t kDirectSolveLimit = 4096;

enum class LinearSolver { automatic, direct, iterative };

/// Solves (I - gamma P_pi) V = r_pi with a sparse LU factorisation, or
/// iteratively to 1e-14 relative residual on large state spaces.
inline std::vector<double> policy_values(const Mdp& mdp, const Policy& policy,
                                         LinearSolver solver = LinearSolver::automatic) {
    const std::size_t S = mdp.state_count(), A = mdp.action_count();
    if (policy.state_count() != S || policy.action_count() != A)
        throw ParameterError("policy does not match the Mdp's spaces");
    const double gamma = mdp.discount();
    std::vector<Eigen::Triplet<double>> entries;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(S));
    for (StateId s = 0; s < S; ++s) {
        const auto si = static_cast<Eigen::Index>(s);
        entries.emplace_back(si, si, 1.0);
        for (ActionId a = 0; a < A; ++a) {
            const double pa = policy.prob(s, a);
            if (pa == 0.0) continue;
            rhs[si] += pa * mdp.reward(s, a);
            for (const auto& t : mdp.transitions(s, a))
                entries.emplace_back(si, static_cast<Eigen::Index>(t.next), -gamma * pa * t.prob);
        }
    }
    Eigen::SparseMatrix<double> m(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
    m.setFromTriplets(entries.begin(), entries.end());
    if (solver == LinearSolver::iterative || (solver == LinearSolver::automatic && S > kDirectSolveLimit)) {
        // LU fill-in on large random graphs is prohibitive; the system is
        // strictly diagonally dominant so BiCGSTAB converges quickly.
        Eigen::BiCGSTAB<Eigen::SparseMatrix<double>> it;
        it.setTolerance(1e-14);
        it.setMaxIterations(10000);
        it.compute(m);
        const Eigen::VectorXd v = it.solve(rhs);
        if (it.info() != Eigen::Success) throw InternalError("iterative policy evaluation did not converge");
        return std::vector<double>(v.data(), v.data() + v.size());
    }
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(m);
    if (lu.info() != Eigen::Success) throw InternalError("policy evaluation system is singular");
    const Eigen::VectorXd v = lu.solve(rhs);
    if (lu.info() != Eigen::Success) throw InternalError("policy evaluation solve failed");
    return std::vector<double>(v.data(), v.data() + v.size());
}

/// J(pi) = sum_s init(s) V_pi(s).
inline double policy_return(const Mdp& mdp, const Policy& policy) {
    const auto v = policy_values(mdp, policy);
    double j = 0.0;
    for (StateId s = 0; s < mdp.state_count(); ++s) j += mdp.initial_distribution()[s] * v[s];
    return j;
}

struct ScoreBaselines {
    double random_return = 0.0;
    double expert_return = 0.0;
};

inline ScoreBaselines compute_baselines(const Mdp& mdp, double tolerance = 1e-10) {
    return {policy_return(mdp, Policy::uniform(mdp.state_count(), mdp.action_count())),
            policy_return(mdp, solve_optimal(mdp, tolerance))};
}

inline double normalized_score(double value, const ScoreBaselines& b) {
    const double span = b.expert_return - b.random_return;
    if (std::abs(span) < 1e-12) return 0.0;
    return 100.0 * (value - b.random_return) / span;
}

struct EvalReport {
    double mean_return = 0.0;
    /// Spread of V_pi over start states (exact evaluation) or over episodes
    /// (Monte Carlo).
    double std_return = 0.0;
    double normalized_score = 0.0;
    /// 0 for exact evaluation.
    std::size_t episodes = 0;
};

inline EvalReport evaluate_policy(const Mdp& mdp, const Policy& policy, const ScoreBaselines& baselines) {
    const auto v = policy_values(mdp, policy);
    const auto init = mdp.initial_distribution();
    double mean = 0.0, second = 0.0;
    for (StateId s = 0; s < mdp.state_count(); ++s) {
        mean += init[s] * v[s];
        second += init[s] * v[s] * v[s];
    }
    EvalReport r;
    r.mean_return = mean;
    r.std_return = std::sqrt(std::max(0.0, second - mean * mean));
    r.normalized_score = normalized_score(mean, baselines);
    return r;
}

inline EvalReport evaluate_policy(const Mdp& mdp, const Policy& policy) {
    return evaluate_policy(mdp, policy, compute_baselines(mdp));
}

// --------------------------------------------------------------------------
// Sampling

inline StateId sample_initial(const Mdp& mdp, Rng& rng) { return rng.categorical(mdp.initial_distribution()); }

inline StateId sample_next(const Mdp& mdp, StateId s, ActionId a, Rng& rng) {
    const auto row = mdp.transitions(s, a);
    double u = rng.uniform();
    for (const auto& t : row) {
        if (u < t.prob) return t.next;
        u -= t.prob;
    }
    return row.back().next;
}

inline std::vector<Step> rollout(const Mdp& mdp, const Policy& policy, std::size_t horizon, Rng& rng) {
    if (horizon == 0) throw ParameterError("rollout horizon must be >= 1");
    std::vector<Step> steps;
    steps.reserve(horizon);
    StateId s = sample_initial(mdp, rng);
    for (std::size_t t = 0; t < horizon; ++t) {
        const ActionId a = rng.categorical(policy.row(s));
        const StateId s2 = sample_next(mdp, s, a, rng);
        steps.push_back({s, a, s2});
        s = s2;
    }
    return steps;
}

/// One episode of `horizon` steps from the initial distribution.
inline std::vector<Step> rollout(const Mdp& mdp, const Policy& policy, std::size_t horizon, std::uint64_t seed) {
    Rng rng(seed);
    return rollout(mdp, policy, horizon, rng);
}

/// Truncated discounted return averaged over sampled episodes.
inline EvalReport evaluate_monte_carlo(const Mdp& mdp, const Policy& policy, std::size_t episodes,
                                       std::size_t horizon, std::uint64_t seed) {
    if (episodes == 0) throw ParameterError("need at least one episode");
    Rng rng(seed);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
        StateId s = sample_initial(mdp, rng);
        double g = 0.0, disc = 1.0;
        for (std::size_t t = 0; t < horizon; ++t) {
            const ActionId a = rng.categorical(policy.row(s));
            g += disc * mdp.reward(s, a);
            disc *= mdp.discount();
            s = sample_next(mdp, s, a, rng);
        }
        sum += g;
        sumsq += g * g;
    }
    const double n = static_cast<double>(episodes);
    EvalReport r;
    r.mean_return = sum / n;
    r.std_return = episodes > 1 ? std::sqrt(std::max(0.0, (sumsq - sum * sum / n) / (n - 1.0))) : 0.0;
    r.episodes = episodes;
    return r;
}

// --------------------------------------------------------------------------
// Behaviour policies

/// Episode-level mixture: each rollout draws one component by weight.
struct BehaviorMix {
    std::vector<Policy> components;
    std::vector<double> weights;

    BehaviorMix() = default;
    BehaviorMix(Policy p) : components{std::move(p)}, weights{1.0} {}  // NOLINT: implicit on purpose
    BehaviorMix(std::vector<Policy> c, std::vector<double> w) : components(std::move(c)), weights(std::move(w)) {
        if (components.empty() || components.size() != weights.size())
            throw ParameterError("behaviour mixture needs one weight per component");
    }

    const Policy& pick(Rng& rng) const {
        return components.size() == 1 ? components.front() : components[rng.categorical(weights)];
    }
};

/// Presets: "optimal", "random", "medium" (epsilon-greedy optimal, eps 0.5),
/// "medium-expert" (50/50 optimal and medium), "medium-replay" (equal mix of
/// eps in {0.2, 0.5, 0.8, 1.0}).
inline BehaviorMix make_behavior(const Mdp& mdp, const std::string& preset) {
    const Policy optimal = solve_optimal(mdp, 1e-10);
    if (preset == "optimal" || preset == "expert") return optimal;
    if (preset == "random") return Policy::uniform(mdp.state_count(), mdp.action_count());
    if (preset == "medium") return epsilon_greedy(optimal, 0.5);
    if (preset == "medium-expert") return BehaviorMix({optimal, epsilon_greedy(optimal, 0.5)}, {0.5, 0.5});
    if (preset == "medium-replay")
        return BehaviorMix({epsilon_greedy(optimal, 0.2), epsilon_greedy(optimal, 0.5), epsilon_greedy(optimal, 0.8),
                            epsilon_greedy(optimal, 1.0)},
                           {0.25, 0.25, 0.25, 0.25});
    throw ParameterError("unknown behaviour preset '" + preset + "'");
}

} // namespace brl
