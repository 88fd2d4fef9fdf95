#pragma once

// Tabular Markov decision processes, policies and trajectory clips.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "brl/errors.hpp"
#include "brl/random.hpp"

namespace brl {

using StateId = std::size_t;
using ActionId = std::size_t;

inline constexpr double kProbabilityTolerance = 1e-9;

struct Transition {
    StateId next;
    double prob;
};

/// Finite MDP with sparse transition rows and rewards bounded in [-1, 1].
///
/// Every state also carries a small coordinate vector; together with a
/// one-hot encoding it gives parametric models a low-dimensional view of
/// the state space.
class Mdp {
public:
    Mdp(std::size_t states, std::size_t actions, std::vector<std::vector<Transition>> transitions,
        std::vector<double> reward, std::vector<double> initial, double discount)
        : states_(states),
          actions_(actions),
          transitions_(std::move(transitions)),
          reward_(std::move(reward)),
          initial_(std::move(initial)),
          discount_(discount) {
        validate();
        coord_dim_ = 1;
        coordinates_.resize(states_);
        for (StateId s = 0; s < states_; ++s)
            coordinates_[s] = states_ > 1 ? static_cast<double>(s) / static_cast<double>(states_ - 1) : 0.0;
    }

    std::size_t state_count() const noexcept { return states_; }
    std::size_t action_count() const noexcept { return actions_; }
    std::size_t pair_count() const noexcept { return states_ * actions_; }
    double discount() const noexcept { return discount_; }

    std::size_t index(StateId s, ActionId a) const noexcept { return s * actions_ + a; }

    std::span<const Transition> transitions(StateId s, ActionId a) const { return transitions_[index(s, a)]; }

    double reward(StateId s, ActionId a) const { return reward_[index(s, a)]; }
    const std::vector<double>& rewards() const noexcept { return reward_; }

    double probability(StateId s, ActionId a, StateId next) const {
        double p = 0.0;
        for (const auto& t : transitions(s, a))
            if (t.next == next) p += t.prob;
        return p;
    }

    std::span<const double> initial_distribution() const noexcept { return initial_; }

    std::size_t coordinate_dim() const noexcept { return coord_dim_; }
    std::span<const double> coordinates(StateId s) const {
        return {coordinates_.data() + s * coord_dim_, coord_dim_};
    }

    /// Replaces the coordinate embedding; `table` is row-major states x dim.
    void set_coordinates(std::vector<double> table, std::size_t dim) {
        if (dim == 0 || table.size() != states_ * dim)
            throw ParameterError("coordinate table has wrong shape");
        coordinates_ = std::move(table);
        coord_dim_ = dim;
    }

    const std::string& name() const noexcept { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }

    /// Checks all structural invariants; throws ValidationError.
    void validate() const {
        if (states_ == 0 || actions_ == 0) throw ValidationError("Mdp needs at least one state and one action");
        if (!(discount_ > 0.0 && discount_ < 1.0)) throw ValidationError("Mdp discount must lie in (0,1)");
        if (transitions_.size() != pair_count() || reward_.size() != pair_count())
            throw ValidationError("Mdp tables have wrong size");
        if (initial_.size() != states_) throw ValidationError("initial distribution has wrong size");
        for (StateId s = 0; s < states_; ++s) {
            for (ActionId a = 0; a < actions_; ++a) {
                double sum = 0.0;
                for (const auto& t : transitions_[index(s, a)]) {
                    if (t.next >= states_) throw ValidationError("transition to unknown state");
                    if (!(t.prob >= 0.0)) throw ValidationError("negative transition probability");
                    sum += t.prob;
                }
                if (std::abs(sum - 1.0) > kProbabilityTolerance)
                    throw ValidationError("transition row (" + std::to_string(s) + "," + std::to_string(a) +
                                          ") sums to " + std::to_string(sum));
                const double r = reward_[index(s, a)];
                if (!(r >= -1.0 && r <= 1.0))
                    throw ValidationError("reward (" + std::to_string(s) + "," + std::to_string(a) +
                                          ") outside [-1,1]");
            }
        }
        double sum = 0.0;
        for (double p : initial_) {
            if (!(p >= 0.0)) throw ValidationError("negative initial probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > kProbabilityTolerance)
            throw ValidationError("initial distribution sums to " + std::to_string(sum));
    }

private:
    std::size_t states_;
    std::size_t actions_;
    std::vector<std::vector<Transition>> transitions_;
    std::vector<double> reward_;
    std::vector<double> initial_;
    double discount_;
    std::vector<double> coordinates_;
    std::size_t coord_dim_ = 1;
    std::string name_;
};

/// Stochastic policy: one action distribution per state.
class Policy {
public:
    Policy() = default;

    Policy(std::size_t states, std::size_t actions, std::vector<double> table)
        : states_(states), actions_(actions), table_(std::move(table)) {
        if (table_.size() != states_ * actions_) throw ValidationError("policy table has wrong size");
        for (StateId s = 0; s < states_; ++s) {
            double sum = 0.0;
            for (ActionId a = 0; a < actions_; ++a) {
                const double p = table_[s * actions_ + a];
                if (!(p >= 0.0)) throw ValidationError("negative policy probability");
                sum += p;
            }
            if (std::abs(sum - 1.0) > kProbabilityTolerance)
                throw ValidationError("policy row " + std::to_string(s) + " sums to " + std::to_string(sum));
        }
    }

    static Policy uniform(std::size_t states, std::size_t actions) {
        return Policy(states, actions, std::vector<double>(states * actions, 1.0 / static_cast<double>(actions)));
    }

    static Policy deterministic(std::span<const ActionId> choice, std::size_t actions) {
        std::vector<double> table(choice.size() * actions, 0.0);
        for (StateId s = 0; s < choice.size(); ++s) {
            if (choice[s] >= actions) throw ParameterError("deterministic policy action out of range");
            table[s * actions + choice[s]] = 1.0;
        }
        return Policy(choice.size(), actions, std::move(table));
    }

    std::size_t state_count() const noexcept { return states_; }
    std::size_t action_count() const noexcept { return actions_; }

    double prob(StateId s, ActionId a) const { return table_[s * actions_ + a]; }
    std::span<const double> row(StateId s) const { return {table_.data() + s * actions_, actions_}; }
    const std::vector<double>& table() const noexcept { return table_; }

    /// Most probable action, lowest index on ties.
    ActionId mode(StateId s) const {
        const auto r = row(s);
        return static_cast<ActionId>(std::max_element(r.begin(), r.end()) - r.begin());
    }

    bool operator==(const Policy&) const = default;

private:
    std::size_t states_ = 0;
    std::size_t actions_ = 0;
    std::vector<double> table_;
};

/// With probability `epsilon` a uniformly random action, otherwise the
/// mode of `base`.
inline Policy epsilon_greedy(const Policy& base, double epsilon) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ParameterError("epsilon must lie in [0,1]");
    const std::size_t S = base.state_count(), A = base.action_count();
    std::vector<double> table(S * A, epsilon / static_cast<double>(A));
    for (StateId s = 0; s < S; ++s) table[s * A + base.mode(s)] += 1.0 - epsilon;
    return Policy(S, A, std::move(table));
}

struct Step {
    StateId s;
    ActionId a;
    StateId s2;

    bool operator==(const Step&) const = default;
};

struct TrajectoryClip {
    std::uint64_t id = 0;
    std::vector<Step> steps;

    std::size_t length() const noexcept { return steps.size(); }

    /// Consecutive steps chain: steps[t].s2 == steps[t+1].s.
    bool chains() const noexcept {
        for (std::size_t t = 0; t + 1 < steps.size(); ++t)
            if (steps[t].s2 != steps[t + 1].s) return false;
        return true;
    }

    bool operator==(const TrajectoryClip&) const = default;
};

inline double clip_return(const Mdp& mdp, const TrajectoryClip& clip) {
    double total = 0.0;
    for (const auto& st : clip.steps) total += mdp.reward(st.s, st.a);
    return total;
}

// --------------------------------------------------------------------------
// Environments

struct GridworldSpec {
    std::size_t width = 5;
    std::size_t height = 5;
    double goal_reward = 1.0;
    double step_penalty = -0.01;
    double slip_probability = 0.0;
    double discount = 0.99;
};

/// Grid with actions up/right/down/left. The goal sits in the far corner
/// (width-1, height-1), is absorbing and pays `goal_reward` per step; every
/// other state-action pays `step_penalty`. A move slips to one of the two
/// perpendicular directions with total probability `slip_probability`.
/// Episodes start uniformly over the non-goal states.
///
/// The layout is fully determined by the parameters; `seed` is recorded in the
/// name only.
inline Mdp make_gridworld(const GridworldSpec& spec, std::uint64_t seed = 0) {
    const std::size_t W = spec.width, H = spec.height;
    if (W == 0 || H == 0 || W * H < 2) throw ParameterError("gridworld needs at least two cells");
    if (!(std::abs(spec.goal_reward) <= 1.0)) throw ParameterError("goal_reward outside [-1,1]");
    if (!(std::abs(spec.step_penalty) <= 1.0)) throw ParameterError("step_penalty outside [-1,1]");
    if (!(spec.slip_probability >= 0.0 && spec.slip_probability <= 1.0))
        throw ParameterError("slip_probability outside [0,1]");
    if (!(spec.discount > 0.0 && spec.discount < 1.0)) throw ParameterError("discount outside (0,1)");

    const std::size_t S = W * H, A = 4;
    const StateId goal = S - 1;
    const int dx[4] = {0, 1, 0, -1};
    const int dy[4] = {-1, 0, 1, 0};
    auto move = [&](StateId s, int dir) -> StateId {
        const long x = static_cast<long>(s % W) + dx[dir];
        const long y = static_cast<long>(s / W) + dy[dir];
        if (x < 0 || y < 0 || x >= static_cast<long>(W) || y >= static_cast<long>(H)) return s;
        return static_cast<StateId>(y) * W + static_cast<StateId>(x);
    };

    std::vector<std::vector<Transition>> trans(S * A);
    std::vector<double> reward(S * A);
    for (StateId s = 0; s < S; ++s) {
        for (ActionId a = 0; a < A; ++a) {
            auto& row = trans[s * A + a];
            if (s == goal) {
                row.push_back({goal, 1.0});
                reward[s * A + a] = spec.goal_reward;
                continue;
            }
            reward[s * A + a] = spec.step_penalty;
            auto add = [&](StateId to, double p) {
                if (p <= 0.0) return;
                for (auto& t : row)
                    if (t.next == to) {
                        t.prob += p;
                        return;
                    }
                row.push_back({to, p});
            };
            add(move(s, static_cast<int>(a)), 1.0 - spec.slip_probability);
            add(move(s, static_cast<int>((a + 1) % 4)), 0.5 * spec.slip_probability);
            add(move(s, static_cast<int>((a + 3) % 4)), 0.5 * spec.slip_probability);
        }
    }
    std::vector<double> init(S, 1.0 / static_cast<double>(S - 1));
    init[goal] = 0.0;

    Mdp mdp(S, A, std::move(trans), std::move(reward), std::move(init), spec.discount);
    std::vector<double> coords(S * 2);
    for (StateId s = 0; s < S; ++s) {
        coords[2 * s] = W > 1 ? static_cast<double>(s % W) / static_cast<double>(W - 1) : 0.0;
        coords[2 * s + 1] = H > 1 ? static_cast<double>(s / W) / static_cast<double>(H - 1) : 0.0;
    }
    mdp.set_coordinates(std::move(coords), 2);
    mdp.set_name("grid" + std::to_string(W) + "x" + std::to_string(H) + "-seed" + std::to_string(seed));
    return mdp;
}

inline Mdp make_gridworld(std::size_t width, std::size_t height, double goal_reward, double step_penalty,
                          double slip_probability, std::uint64_t seed, double discount = 0.99) {
    return make_gridworld(GridworldSpec{width, height, goal_reward, step_penalty, slip_probability, discount},
                          seed);
}

/// Random "garnet" MDP: each state-action pair moves to `branching` distinct
/// random successors with random probabilities; rewards are uniform on
/// [-1,1]; start states are uniform. Large garnets have so many
/// state-action pairs that independently sampled clips rarely collide.
inline Mdp make_garnet(std::size_t states, std::size_t actions, std::size_t branching, std::uint64_t seed,
                       double discount = 0.99) {
    if (states < 2 || actions < 1) throw ParameterError("garnet needs >= 2 states and >= 1 action");
    if (branching < 1 || branching > states) throw ParameterError("garnet branching out of range");
    Rng rng(mix_seed(seed, {0x6a72ULL}));
    const std::size_t S = states, A = actions;
    std::vector<std::vector<Transition>> trans(S * A);
    std::vector<double> reward(S * A);
    for (std::size_t i = 0; i < S * A; ++i) {
        std::vector<StateId> next;
        while (next.size() < branching) {
            const StateId cand = rng.index(S);
            if (std::find(next.begin(), next.end(), cand) == next.end()) next.push_back(cand);
        }
        std::vector<double> cuts(branching - 1);
        for (auto& c : cuts) c = rng.uniform();
        std::sort(cuts.begin(), cuts.end());
        double prev = 0.0;
        for (std::size_t k = 0; k < branching; ++k) {
            const double edge = k + 1 < branching ? cuts[k] : 1.0;
            trans[i].push_back({next[k], edge - prev});
            prev = edge;
        }
        reward[i] = rng.uniform(-1.0, 1.0);
    }
    Mdp mdp(S, A, std::move(trans), std::move(reward), std::vector<double>(S, 1.0 / static_cast<double>(S)),
            discount);
    std::vector<double> coords(S * 2);
    for (auto& c : coords) c = rng.uniform();
    mdp.set_coordinates(std::move(coords), 2);
    mdp.set_name("garnet" + std::to_string(S) + "x" + std::to_string(A) + "-seed" + std::to_string(seed));
    return mdp;
}

// --------------------------------------------------------------------------
// JSON: {states, actions, transition[[..]], reward[[..]], init[..], gamma}
// transition has one dense row of length `states` per (s, a), ordered s*A+a.

inline nlohmann::json mdp_to_json(const Mdp& mdp) {
    const std::size_t S = mdp.state_count(), A = mdp.action_count();
    nlohmann::json j;
    j["states"] = S;
    j["actions"] = A;
    auto trans = nlohmann::json::array();
    for (StateId s = 0; s < S; ++s)
        for (ActionId a = 0; a < A; ++a) {
            std::vector<double> row(S, 0.0);
            for (const auto& t : mdp.transitions(s, a)) row[t.next] += t.prob;
            trans.push_back(row);
        }
    j["transition"] = std::move(trans);
    auto rew = nlohmann::json::array();
    for (StateId s = 0; s < S; ++s) {
        std::vector<double> row(A);
        for (ActionId a = 0; a < A; ++a) row[a] = mdp.reward(s, a);
        rew.push_back(row);
    }
    j["reward"] = std::move(rew);
    j["init"] = std::vector<double>(mdp.initial_distribution().begin(), mdp.initial_distribution().end());
    j["gamma"] = mdp.discount();
    auto coords = nlohmann::json::array();
    for (StateId s = 0; s < S; ++s) {
        auto c = mdp.coordinates(s);
        coords.push_back(std::vector<double>(c.begin(), c.end()));
    }
    j["coordinates"] = std::move(coords);
    if (!mdp.name().empty()) j["name"] = mdp.name();
    return j;
}

inline Mdp mdp_from_json(const nlohmann::json& j) {
    try {
        const std::size_t S = j.at("states").get<std::size_t>();
        const std::size_t A = j.at("actions").get<std::size_t>();
        const auto& trans = j.at("transition");
        const auto& rew = j.at("reward");
        if (trans.size() != S * A) throw ValidationError("transition must have states*actions rows");
        if (rew.size() != S) throw ValidationError("reward must have one row per state");
        std::vector<std::vector<Transition>> rows(S * A);
        for (std::size_t i = 0; i < S * A; ++i) {
            const auto dense = trans[i].get<std::vector<double>>();
            if (dense.size() != S) throw ValidationError("transition row has wrong length");
            for (StateId n = 0; n < S; ++n)
                if (dense[n] != 0.0) rows[i].push_back({n, dense[n]});
        }
        std::vector<double> reward(S * A);
        for (StateId s = 0; s < S; ++s) {
            const auto row = rew[s].get<std::vector<double>>();
            if (row.size() != A) throw ValidationError("reward row has wrong length");
            for (ActionId a = 0; a < A; ++a) reward[s * A + a] = row[a];
        }
        Mdp mdp(S, A, std::move(rows), std::move(reward), j.at("init").get<std::vector<double>>(),
                j.at("gamma").get<double>());
        if (j.contains("coordinates")) {
            const auto& c = j["coordinates"];
            if (c.size() != S) throw ValidationError("coordinates must have one row per state");
            const std::size_t dim = c[0].size();
            std::vector<double> table;
            for (const auto& row : c) {
                auto v = row.get<std::vector<double>>();
                if (v.size() != dim) throw ValidationError("ragged coordinates");
                table.insert(table.end(), v.begin(), v.end());
            }
            mdp.set_coordinates(std::move(table), dim);
        }
        if (j.contains("name")) mdp.set_name(j["name"].get<std::string>());
        return mdp;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad Mdp document: ") + e.what());
    }
}

inline void save_mdp(const Mdp& mdp, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParameterError("cannot write " + path);
    out << mdp_to_json(mdp).dump() << '\n';
}

inline Mdp load_mdp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot read " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(e.what(), 1);
    }
    return mdp_from_json(j);
}

} // namespace brl
