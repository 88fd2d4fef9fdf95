#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "brl/mdp.hpp"
#include "brl/planning.hpp"

using namespace brl;

namespace {

// Three states in a line with one start state; action 0 stays, action 1
// moves right. Fully deterministic.
Mdp deterministic_line() {
    std::vector<std::vector<Transition>> trans(6);
    std::vector<double> reward(6, 0.0);
    for (StateId s = 0; s < 3; ++s) {
        trans[s * 2 + 0] = {{s, 1.0}};
        trans[s * 2 + 1] = {{std::min<StateId>(s + 1, 2), 1.0}};
    }
    reward[2 * 2 + 0] = 1.0;
    return Mdp(3, 2, trans, reward, {1.0, 0.0, 0.0}, 0.9);
}

// Dense transition matrix of the chain a policy induces.
Eigen::MatrixXd chain_matrix(const Mdp& mdp, const Policy& pi) {
    const auto S = static_cast<Eigen::Index>(mdp.state_count());
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(S, S);
    for (StateId s = 0; s < mdp.state_count(); ++s)
        for (ActionId a = 0; a < mdp.action_count(); ++a)
            for (const auto& t : mdp.transitions(s, a))
                P(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t.next)) += pi.prob(s, a) * t.prob;
    return P;
}

Eigen::VectorXd reward_vector(const Mdp& mdp, const Policy& pi) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mdp.state_count()));
    for (StateId s = 0; s < mdp.state_count(); ++s)
        for (ActionId a = 0; a < mdp.action_count(); ++a) r[static_cast<Eigen::Index>(s)] += pi.prob(s, a) * mdp.reward(s, a);
    return r;
}

} // namespace

TEST(Gridworld, DeterministicRowsAreOneHot) {
    const Mdp mdp = make_gridworld(5, 5, 1.0, -0.01, 0.0, 7);
    EXPECT_EQ(mdp.state_count(), 25u);
    for (StateId s = 0; s < 25; ++s)
        for (ActionId a = 0; a < 4; ++a) {
            const auto row = mdp.transitions(s, a);
            ASSERT_EQ(row.size(), 1u);
            EXPECT_EQ(row[0].prob, 1.0);
        }
}

TEST(Gridworld, SlipRowsSumToOne) {
    const Mdp mdp = make_gridworld(5, 5, 1.0, -0.01, 0.3, 0);
    for (StateId s = 0; s < 25; ++s)
        for (ActionId a = 0; a < 4; ++a) {
            double sum = 0.0;
            for (const auto& t : mdp.transitions(s, a)) sum += t.prob;
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
}

TEST(Gridworld, GoalIsAbsorbing) {
    const Mdp mdp = make_gridworld(4, 3, 1.0, -0.01, 0.2, 0);
    const StateId goal = mdp.state_count() - 1;
    for (ActionId a = 0; a < 4; ++a) EXPECT_EQ(mdp.probability(goal, a, goal), 1.0);
}

TEST(Gridworld, RejectsOutOfBoundRewards) {
    EXPECT_THROW(make_gridworld(5, 5, 1.5, 0.0, 0.0, 0), ParameterError);
    EXPECT_THROW(make_gridworld(5, 5, 1.0, -1.01, 0.0, 0), ParameterError);
    EXPECT_THROW(make_gridworld(1, 1, 1.0, 0.0, 0.0, 0), ParameterError);
}

TEST(Gridworld, TwoStateChainOptimalReturn) {
    const Mdp mdp = make_gridworld(2, 1, 1.0, 0.0, 0.0, 0);
    const double g = mdp.discount();
    // Start at 0, one step right (reward 0), then +1 forever at the goal.
    const double expected = g / (1.0 - g);
    const auto pi = solve_optimal(mdp, 1e-12);
    EXPECT_EQ(pi.mode(0), 1u);
    EXPECT_NEAR(policy_return(mdp, pi), expected, 1e-8);
}

TEST(Gridworld, DeterministicShortestPathValues) {
    const Mdp mdp = make_gridworld(5, 5, 1.0, -0.01, 0.0, 0);
    const double g = mdp.discount();
    const auto v = policy_values(mdp, solve_optimal(mdp, 1e-12));
    for (StateId s = 0; s + 1 < 25; ++s) {
        const std::size_t d = (4 - s % 5) + (4 - s / 5);
        // d penalised steps, then the goal's geometric tail.
        const double closed = -0.01 * (1.0 - std::pow(g, static_cast<double>(d))) / (1.0 - g) +
                              std::pow(g, static_cast<double>(d)) / (1.0 - g);
        EXPECT_NEAR(v[s], closed, 1e-8) << "state " << s;
    }
}

TEST(Planning, ToleranceDoesNotChangeGreedyPolicy) {
    const Mdp mdp = make_gridworld(5, 5, 1.0, -0.05, 0.1, 0);
    EXPECT_EQ(solve_optimal(mdp, 1e-10), solve_optimal(mdp, 1e-6));
}

TEST(Planning, ExactEvaluationMatchesDenseSolve) {
    const Mdp mdp = make_garnet(40, 3, 3, 11, 0.95);
    const Policy pi = epsilon_greedy(solve_optimal(mdp), 0.3);
    const auto v = policy_values(mdp, pi);
    const Eigen::MatrixXd P = chain_matrix(mdp, pi);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(P.rows(), P.cols());
    const Eigen::VectorXd dense = (I - mdp.discount() * P).fullPivLu().solve(reward_vector(mdp, pi));
    for (StateId s = 0; s < 40; ++s) EXPECT_NEAR(v[s], dense[static_cast<Eigen::Index>(s)], 1e-9);
}

TEST(Planning, IterativeSolverAgreesWithDirect) {
    const Mdp mdp = make_garnet(300, 4, 3, 2, 0.99);
    const Policy pi = Policy::uniform(300, 4);
    const auto direct = policy_values(mdp, pi, LinearSolver::direct);
    const auto iterative = policy_values(mdp, pi, LinearSolver::iterative);
    for (StateId s = 0; s < 300; ++s) EXPECT_NEAR(direct[s], iterative[s], 1e-8);
}

TEST(Evaluate, OptimalScoresHundredRandomScoresZero) {
    const Mdp mdp = make_gridworld(5, 5, 1.0, -0.01, 0.1, 0);
    const auto base = compute_baselines(mdp);
    EXPECT_NEAR(evaluate_policy(mdp, solve_optimal(mdp), base).normalized_score, 100.0, 1e-6);
    EXPECT_NEAR(evaluate_policy(mdp, Policy::uniform(25, 4), base).normalized_score, 0.0, 1e-6);
    const double mid = evaluate_policy(mdp, epsilon_greedy(solve_optimal(mdp), 0.5), base).normalized_score;
    EXPECT_GT(mid, 0.0);
    EXPECT_LT(mid, 100.0);
}

TEST(Evaluate, NormalizedScoreFormula) {
    const ScoreBaselines b{-3.0, 5.0};
    EXPECT_DOUBLE_EQ(normalized_score(1.0, b), 50.0);
    EXPECT_DOUBLE_EQ(normalized_score(-3.0, b), 0.0);
    EXPECT_DOUBLE_EQ(normalized_score(7.0, b), 125.0);
}

TEST(Evaluate, ExactAgreesWithMonteCarlo) {
    const Mdp mdp = make_garnet(30, 3, 3, 5, 0.9);
    const Policy pi = epsilon_greedy(solve_optimal(mdp), 0.4);
    const auto exact = evaluate_policy(mdp, pi);
    // 0.9^400 / 0.1 is far below the standard error.
    const auto mc = evaluate_monte_carlo(mdp, pi, 100000, 400, 3);
    const double se = mc.std_return / std::sqrt(static_cast<double>(mc.episodes));
    EXPECT_LT(std::abs(exact.mean_return - mc.mean_return), 3.0 * se);
}

TEST(Rollout, DeterministicMdpIgnoresSeed) {
    const Mdp mdp = deterministic_line();
    const std::vector<ActionId> choice{1, 1, 0};
    const Policy pi = Policy::deterministic(choice, 2);
    const auto a = rollout(mdp, pi, 15, 1);
    const auto b = rollout(mdp, pi, 15, 99);
    EXPECT_EQ(a, b);
}

TEST(Rollout, SameSeedSameSteps) {
    const Mdp mdp = make_gridworld(5, 5, 1.0, -0.01, 0.3, 0);
    const Policy pi = Policy::uniform(25, 4);
    EXPECT_EQ(rollout(mdp, pi, 50, 8), rollout(mdp, pi, 50, 8));
}

TEST(Rollout, StepsChain) {
    const Mdp mdp = make_gridworld(5, 5, 1.0, -0.01, 0.3, 0);
    const Policy pi = Policy::uniform(25, 4);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        TrajectoryClip clip;
        clip.steps = rollout(mdp, pi, 20, seed);
        ASSERT_EQ(clip.length(), 20u);
        EXPECT_TRUE(clip.chains());
    }
    EXPECT_THROW(rollout(mdp, pi, 0, 0), ParameterError);
}

TEST(Rollout, VisitFrequenciesMatchStationaryDistribution) {
    const Mdp mdp = make_garnet(8, 2, 3, 4, 0.9);
    const Policy pi = Policy::uniform(8, 2);
    // Stationary distribution: left null vector of P - I, normalised.
    const Eigen::MatrixXd P = chain_matrix(mdp, pi);
    Eigen::MatrixXd M = P.transpose() - Eigen::MatrixXd::Identity(8, 8);
    M.row(7).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(8);
    rhs[7] = 1.0;
    const Eigen::VectorXd stationary = M.fullPivLu().solve(rhs);

    const std::size_t horizon = 10000, batches = 50, batch = horizon / batches;
    const auto steps = rollout(mdp, pi, horizon, 21);
    for (StateId s = 0; s < 8; ++s) {
        // Batch means give a standard error that accounts for correlation.
        std::vector<double> means(batches, 0.0);
        for (std::size_t t = 0; t < horizon; ++t)
            if (steps[t].s == s) means[t / batch] += 1.0 / static_cast<double>(batch);
        double m = 0.0, ss = 0.0;
        for (double x : means) m += x / batches;
        for (double x : means) ss += (x - m) * (x - m);
        const double se = std::sqrt(ss / (batches - 1) / batches);
        EXPECT_LT(std::abs(m - stationary[static_cast<Eigen::Index>(s)]), 3.0 * se + 1e-12) << "state " << s;
    }
}

TEST(Mdp, ValidationRejectsBadTables) {
    std::vector<std::vector<Transition>> trans{{{0, 0.5}}, {{0, 1.0}}};
    EXPECT_THROW(Mdp(1, 2, trans, {0.0, 0.0}, {1.0}, 0.9), ValidationError);
    trans[0] = {{0, 1.0}};
    EXPECT_THROW(Mdp(1, 2, trans, {0.0, 2.0}, {1.0}, 0.9), ValidationError);
    EXPECT_THROW(Mdp(1, 2, trans, {0.0, 0.0}, {0.5}, 0.9), ValidationError);
    EXPECT_NO_THROW(Mdp(1, 2, trans, {0.0, 0.0}, {1.0}, 0.9));
}

TEST(Mdp, JsonRoundTrip) {
    const Mdp mdp = make_gridworld(3, 2, 1.0, -0.1, 0.2, 0);
    const Mdp back = mdp_from_json(mdp_to_json(mdp));
    ASSERT_EQ(back.state_count(), mdp.state_count());
    ASSERT_EQ(back.action_count(), mdp.action_count());
    EXPECT_EQ(back.discount(), mdp.discount());
    for (StateId s = 0; s < mdp.state_count(); ++s)
        for (ActionId a = 0; a < mdp.action_count(); ++a) {
            EXPECT_EQ(back.reward(s, a), mdp.reward(s, a));
            for (StateId n = 0; n < mdp.state_count(); ++n)
                EXPECT_EQ(back.probability(s, a, n), mdp.probability(s, a, n));
        }
}
