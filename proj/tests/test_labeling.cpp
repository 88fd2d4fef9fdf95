#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "brl/labeling.hpp"

using namespace brl;

namespace {

TrajectoryClip clip_of(std::vector<std::pair<StateId, ActionId>> sa, std::uint64_t id) {
    TrajectoryClip c;
    c.id = id;
    for (std::size_t t = 0; t < sa.size(); ++t) {
        const StateId next = t + 1 < sa.size() ? sa[t + 1].first : sa[t].first;
        c.steps.push_back({sa[t].first, sa[t].second, next});
    }
    return c;
}

PreferencePair pair_of(std::uint64_t id, TrajectoryClip c1, TrajectoryClip c2, std::vector<int> labels) {
    PreferencePair p;
    p.pair_id = id;
    p.clip_1 = std::move(c1);
    p.clip_2 = std::move(c2);
    p.labels = std::move(labels);
    return p;
}

PreferenceDataset dataset_of(std::vector<PreferencePair> pairs, std::size_t T) {
    PreferenceDataset ds;
    ds.clip_length = T;
    ds.pairs = std::move(pairs);
    ds.refresh_metadata();
    return ds;
}

std::vector<double> rewards(const RewardLabeledDataset& d) {
    std::vector<double> r;
    for (const auto& t : d.tuples) r.push_back(t.r);
    return r;
}

} // namespace

TEST(BinaryLabel, FirstClipPreferred) {
    const auto ds = dataset_of({pair_of(0, clip_of({{0, 0}, {1, 0}}, 0), clip_of({{2, 0}, {3, 0}}, 1), {1})}, 2);
    const auto out = binary_label(ds);
    EXPECT_EQ(rewards(out), (std::vector<double>{1, 1, -1, -1}));
    EXPECT_EQ(out.provenance[0].side, Side::chosen);
    EXPECT_EQ(out.provenance[3].side, Side::rejected);
    EXPECT_EQ(out.tuples[1].s2, 1u);
}

TEST(BinaryLabel, SecondClipPreferred) {
    const auto ds = dataset_of({pair_of(0, clip_of({{0, 0}, {1, 0}}, 0), clip_of({{2, 0}, {3, 0}}, 1), {2})}, 2);
    EXPECT_EQ(rewards(binary_label(ds)), (std::vector<double>{-1, -1, 1, 1}));
}

TEST(BinaryLabel, OrientationSymmetry) {
    const auto a = clip_of({{0, 0}, {1, 1}}, 0), b = clip_of({{4, 0}, {5, 1}}, 1);
    const auto x = binary_label(dataset_of({pair_of(0, a, b, {1})}, 2));
    const auto y = binary_label(dataset_of({pair_of(0, b, a, {2})}, 2));
    std::map<std::pair<StateId, ActionId>, double> mx, my;
    for (const auto& t : x.tuples) mx[{t.s, t.a}] = t.r;
    for (const auto& t : y.tuples) my[{t.s, t.a}] = t.r;
    EXPECT_EQ(mx, my);
    EXPECT_DOUBLE_EQ(reward_gap(x).gap, reward_gap(y).gap);
}

TEST(BinaryLabel, SharedStateActionAveragesToZero) {
    // (7,0) is chosen in the first pair and rejected in the second.
    const auto ds = dataset_of({pair_of(0, clip_of({{7, 0}}, 0), clip_of({{1, 0}}, 1), {1}),
                                pair_of(1, clip_of({{2, 0}}, 2), clip_of({{7, 0}}, 3), {1})},
                               1);
    const auto means = state_action_means(binary_label(ds));
    EXPECT_EQ(means.at(detail::sa_key(7, 0)), 0.0);
    EXPECT_EQ(means.at(detail::sa_key(1, 0)), -1.0);
}

TEST(BinaryLabel, RejectsMultiLabelPairs) {
    const auto ds = dataset_of({pair_of(0, clip_of({{0, 0}}, 0), clip_of({{1, 0}}, 1), {1, 2})}, 1);
    EXPECT_THROW(binary_label(ds), ParameterError);
}

TEST(RewardGap, NoOverlapIsExactlyTwo) {
    const Mdp mdp = make_garnet(5000, 4, 3, 0);
    const auto ds = generate_dataset(mdp, make_behavior(mdp, "random"), 50, 20, LinkFunction::make_sigmoid(), 1);
    ASSERT_TRUE(ds.no_overlap);
    EXPECT_EQ(reward_gap(binary_label(ds)).gap, 2.0);
}

TEST(RewardGap, BalancedOverlapIsZero) {
    const auto a = clip_of({{0, 0}, {1, 0}}, 0), b = clip_of({{2, 0}, {3, 0}}, 1);
    const auto ds = dataset_of({pair_of(0, a, b, {1}), pair_of(1, a, b, {2})}, 2);
    EXPECT_EQ(reward_gap(binary_label(ds)).gap, 0.0);
}

TEST(RewardGap, NeedsProvenance) {
    RewardLabeledDataset d;
    d.tuples.push_back({0, 0, 1.0, 0});
    EXPECT_THROW(reward_gap(d), ParameterError);
}

TEST(OptimalLabels, MatchesBruteForceOnOverlappingChain) {
    // Pair 0 prefers (0,0) over (1,0); pair 1 prefers (1,0) over (2,0).
    const auto ds = dataset_of({pair_of(0, clip_of({{0, 0}}, 0), clip_of({{1, 0}}, 1), {1}),
                                pair_of(1, clip_of({{1, 0}}, 2), clip_of({{2, 0}}, 3), {1})},
                               1);
    const auto F = LinkLossFunction::sigmoid_nll();
    const double step = 0.25;
    const auto sol = solve_optimal_labels(ds, F, step);
    ASSERT_TRUE(sol.exhaustive);
    ASSERT_EQ(sol.keys.size(), 3u);

    double best = std::numeric_limits<double>::infinity();
    double r0 = 0, r1 = 0, r2 = 0;
    for (int i = 0; i <= 8; ++i)
        for (int j = 0; j <= 8; ++j)
            for (int k = 0; k <= 8; ++k) {
                const double a = -1 + step * i, b = -1 + step * j, c = -1 + step * k;
                const double v = std::log1p(std::exp(-(a - b))) + std::log1p(std::exp(-(b - c)));
                if (v < best - 1e-12) {
                    best = v;
                    r0 = a;
                    r1 = b;
                    r2 = c;
                }
            }
    EXPECT_NEAR(sol.objective, best, 1e-12);
    EXPECT_EQ(sol.values, (std::vector<double>{r0, r1, r2}));
    EXPECT_EQ(sol.values, (std::vector<double>{1.0, 0.0, -1.0}));
}

TEST(OptimalLabels, FlatObjectiveReturnsSmallestGridPoint) {
    // The same state-action on both sides cancels, so every label is optimal.
    const auto ds = dataset_of({pair_of(0, clip_of({{3, 1}}, 0), clip_of({{3, 1}}, 1), {1})}, 1);
    const auto sol = solve_optimal_labels(ds, LinkLossFunction::sigmoid_nll(), 0.5);
    ASSERT_EQ(sol.values.size(), 1u);
    EXPECT_EQ(sol.values[0], -1.0);
    EXPECT_NEAR(sol.objective, std::log(2.0), 1e-15);
}

TEST(OptimalLabels, BinaryLabelsOptimalWithoutOverlap) {
    const auto ds = dataset_of({pair_of(0, clip_of({{0, 0}, {1, 0}}, 0), clip_of({{2, 0}, {3, 0}}, 1), {2}),
                                pair_of(1, clip_of({{4, 0}, {5, 1}}, 2), clip_of({{6, 0}, {7, 1}}, 3), {1})},
                               2);
    ASSERT_TRUE(ds.no_overlap);
    for (const auto& F : {LinkLossFunction::sigmoid_nll(), LinkLossFunction::sigmoid_one_minus(),
                          LinkLossFunction::linear_one_minus(1.0 / 8.0)}) {
        const auto sol = solve_optimal_labels(ds, F, 0.5);
        EXPECT_EQ(sol.step_labels, rewards(binary_label(ds))) << F.name;
    }
}

TEST(OptimalLabels, Guards) {
    const auto ds = dataset_of({pair_of(0, clip_of({{0, 0}}, 0), clip_of({{1, 0}}, 1), {1})}, 1);
    EXPECT_THROW(solve_optimal_labels(ds, LinkLossFunction::sigmoid_nll(), 0.3), ParameterError);
    EXPECT_THROW(solve_optimal_labels(ds, LinkLossFunction::sigmoid_nll(), 0.0), ParameterError);
    OptimalLabelOptions opt;
    opt.max_distinct = 1;
    EXPECT_THROW(solve_optimal_labels(ds, LinkLossFunction::sigmoid_nll(), 0.5, opt), SizeError);
}

TEST(OptimalLabels, CoordinateDescentAgreesOnSmallProblem) {
    const auto ds = dataset_of({pair_of(0, clip_of({{0, 0}}, 0), clip_of({{1, 0}}, 1), {1}),
                                pair_of(1, clip_of({{1, 0}}, 2), clip_of({{2, 0}}, 3), {1})},
                               1);
    OptimalLabelOptions opt;
    opt.enumeration_limit = 1;
    const auto approx = solve_optimal_labels(ds, LinkLossFunction::sigmoid_nll(), 0.25, opt);
    const auto exact = solve_optimal_labels(ds, LinkLossFunction::sigmoid_nll(), 0.25);
    EXPECT_FALSE(approx.exhaustive);
    EXPECT_NEAR(approx.objective, exact.objective, 1e-12);
}

TEST(MultiLabel, EvenSplitGivesZeroRewards) {
    const auto ds = dataset_of(
        {pair_of(0, clip_of(std::vector<std::pair<StateId, ActionId>>(20, {0, 0}), 0),
                 clip_of(std::vector<std::pair<StateId, ActionId>>(20, {1, 0}), 1), {1, 2, 1, 2, 1, 2, 1, 2, 1, 2})},
        20);
    for (double r : rewards(multilabel_label(ds, LinkFunction::make_sigmoid()))) EXPECT_EQ(r, 0.0);
}

TEST(MultiLabel, UnanimousUsesClampedFrequency) {
    const auto ds = dataset_of(
        {pair_of(0, clip_of(std::vector<std::pair<StateId, ActionId>>(20, {0, 0}), 0),
                 clip_of(std::vector<std::pair<StateId, ActionId>>(20, {1, 0}), 1), std::vector<int>(10, 1))},
        20);
    const auto out = multilabel_label(ds, LinkFunction::make_sigmoid());
    const double expected = std::log(0.95 / 0.05) / 40.0;
    const auto r = rewards(out);
    ASSERT_EQ(r.size(), 40u);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(r[i], expected, 1e-12);
    for (std::size_t i = 20; i < 40; ++i) EXPECT_NEAR(r[i], -expected, 1e-12);
    EXPECT_NEAR(expected, 0.0736, 1e-4);
    EXPECT_FALSE(out.saturated);
}

TEST(MultiLabel, LinearLinkSaturates) {
    // Linear link with a steep slope: f^-1(0.95) = 0.45 / slope exceeds 2T.
    const auto ds = dataset_of({pair_of(0, clip_of({{0, 0}}, 0), clip_of({{1, 0}}, 1), std::vector<int>(10, 1))}, 1);
    const auto out = multilabel_label(ds, LinkFunction::make_linear(0.1));
    EXPECT_TRUE(out.saturated);
    EXPECT_EQ(rewards(out), (std::vector<double>{1.0, -1.0}));
}

TEST(MultiLabel, RejectsNonPositiveRegularization) {
    const auto ds = dataset_of({pair_of(0, clip_of({{0, 0}}, 0), clip_of({{1, 0}}, 1), {1})}, 1);
    EXPECT_THROW(multilabel_label(ds, LinkFunction::make_sigmoid(), 0.0), ParameterError);
}

TEST(LabeledStorage, RoundTrip) {
    const Mdp mdp = make_gridworld(5, 5, 1.0, -0.01, 0.1, 0);
    const auto ds = generate_dataset(mdp, make_behavior(mdp, "medium"), 10, 20, LinkFunction::make_sigmoid(), 2);
    const auto lab = binary_label(ds);
    std::stringstream buf;
    write_labeled(lab, buf);
    EXPECT_EQ(read_labeled(buf), lab);
}

TEST(LabeledStorage, OutOfRangeRewardRejected) {
    std::istringstream in("{\"s\":0,\"a\":0,\"r\":1.5,\"s2\":0}\n");
    EXPECT_THROW(read_labeled(in), ValidationError);
}
