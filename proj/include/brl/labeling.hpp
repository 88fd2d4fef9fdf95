#pragma once

// Turning preference datasets into reward-labelled transition datasets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "brl/errors.hpp"
#include "brl/link.hpp"
#include "brl/preference.hpp"
#include "brl/random.hpp"

namespace brl {

enum class Side { chosen, rejected };

inline const char* side_name(Side s) { return s == Side::chosen ? "chosen" : "rejected"; }

struct LabeledTuple {
    StateId s;
    ActionId a;
    double r;
    StateId s2;

    bool operator==(const LabeledTuple&) const = default;
};

struct Provenance {
    std::uint64_t pair_id;
    Side side;
    std::size_t t;

    bool operator==(const Provenance&) const = default;
};

/// Flat (s, a, r, s2) tuples consumable by any offline RL learner. Tuples
/// follow pair order, clip_1 steps before clip_2 steps.
struct RewardLabeledDataset {
    std::vector<LabeledTuple> tuples;
    std::vector<Provenance> provenance;  // empty, or one entry per tuple
    /// Set when a target return gap had to be clipped (multi-label labelling).
    bool saturated = false;

    std::size_t size() const noexcept { return tuples.size(); }

    void validate() const {
        for (std::size_t i = 0; i < tuples.size(); ++i)
            if (!(tuples[i].r >= -1.0 && tuples[i].r <= 1.0))
                throw ValidationError("tuple " + std::to_string(i) + " reward outside [-1,1]");
        if (!provenance.empty() && provenance.size() != tuples.size())
            throw ValidationError("provenance must cover every tuple");
    }

    bool operator==(const RewardLabeledDataset&) const = default;
};

namespace detail {

inline void append_clip(RewardLabeledDataset& out, const PreferencePair& p, const TrajectoryClip& clip, double r,
                        Side side) {
    for (std::size_t t = 0; t < clip.steps.size(); ++t) {
        const auto& st = clip.steps[t];
        out.tuples.push_back({st.s, st.a, r, st.s2});
        out.provenance.push_back({p.pair_id, side, t});
    }
}

inline std::uint64_t sa_key(StateId s, ActionId a) { return (static_cast<std::uint64_t>(s) << 24) ^ a; }

} // namespace detail

/// Binary reward labelling: every step of the preferred clip gets +1, every
/// step of the other clip -1.
inline RewardLabeledDataset binary_label(const PreferenceDataset& ds) {
    RewardLabeledDataset out;
    out.tuples.reserve(ds.size() * 2 * ds.clip_length);
    out.provenance.reserve(out.tuples.capacity());
    for (const auto& p : ds.pairs) {
        if (p.labels.size() != 1)
            throw ParameterError("pair " + std::to_string(p.pair_id) +
                                 " has several labels; use multilabel_label for multi-label datasets");
        const bool first = p.labels[0] == 1;
        detail::append_clip(out, p, p.clip_1, first ? 1.0 : -1.0, first ? Side::chosen : Side::rejected);
        detail::append_clip(out, p, p.clip_2, first ? -1.0 : 1.0, first ? Side::rejected : Side::chosen);
    }
    return out;
}

// --------------------------------------------------------------------------
// Exact optimal labels on a grid

struct OptimalLabelOptions {
    std::size_t max_distinct = 12;
    /// Full enumeration is used up to this many grid points.
    double enumeration_limit = 1e8;
    std::size_t restarts = 16;
    std::uint64_t seed = 0;
};

struct OptimalLabels {
    /// Distinct state-actions in order of first appearance.
    std::vector<std::pair<StateId, ActionId>> keys;
    /// One label per key.
    std::vector<double> values;
    /// Per-step labels in binary_label tuple order.
    std::vector<double> step_labels;
    double objective = 0.0;
    bool exhaustive = true;
};

/// Minimises sum_i F(sum_t r(chosen_t) - sum_t r(rejected_t)) over labels
/// shared by identical state-actions, each label on the grid
/// {-1, -1 + step, ..., 1}. Exhaustive search returns the lexicographically
/// smallest exact minimiser; beyond `enumeration_limit` points a multi-start
/// coordinate descent is used instead.
inline OptimalLabels solve_optimal_labels(const PreferenceDataset& ds, const LinkLossFunction& F, double grid_step,
                                          const OptimalLabelOptions& opt = {}) {
    if (!(grid_step > 0.0 && grid_step <= 2.0)) throw ParameterError("grid_step must lie in (0,2]");
    const double cells = 2.0 / grid_step;
    if (std::abs(cells - std::round(cells)) > 1e-9) throw ParameterError("grid_step must divide 2 evenly");
    const std::size_t K = static_cast<std::size_t>(std::llround(cells)) + 1;

    OptimalLabels out;
    std::unordered_map<std::uint64_t, std::size_t> index;
    auto key_of = [&](const Step& st) {
        auto [it, inserted] = index.emplace(detail::sa_key(st.s, st.a), out.keys.size());
        if (inserted) out.keys.emplace_back(st.s, st.a);
        return it->second;
    };
    // coeff[d] lists (pair, signed multiplicity) for distinct state-action d.
    std::vector<std::vector<std::pair<std::size_t, double>>> coeff;
    std::vector<std::vector<std::size_t>> step_keys;
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        const auto& p = ds.pairs[i];
        if (p.labels.size() != 1) throw ParameterError("solve_optimal_labels needs single-label pairs");
        std::map<std::size_t, double> local;
        std::vector<std::size_t> keys;
        for (int side = 0; side < 2; ++side) {
            const auto& clip = side == 0 ? p.clip_1 : p.clip_2;
            const bool is_chosen = (side == 0) == (p.labels[0] == 1);
            for (const auto& st : clip.steps) {
                const std::size_t d = key_of(st);
                keys.push_back(d);
                local[d] += is_chosen ? 1.0 : -1.0;
            }
        }
        if (coeff.size() < out.keys.size()) coeff.resize(out.keys.size());
        for (auto [d, c] : local)
            if (c != 0.0) coeff[d].emplace_back(i, c);
        step_keys.push_back(std::move(keys));
    }
    const std::size_t D = out.keys.size();
    if (D > opt.max_distinct)
        throw SizeError(std::to_string(D) + " distinct state-actions exceed the exact solver cap of " +
                        std::to_string(opt.max_distinct) + "; approximate with a reward model instead");

    const std::size_t N = ds.pairs.size();
    auto grid = [&](std::size_t k) { return -1.0 + grid_step * static_cast<double>(k); };
    auto better = [](double cand, double best) {
        if (!std::isfinite(best)) return cand < best;
        return cand < best - 1e-12 * std::max(1.0, std::abs(best));
    };

    std::vector<std::size_t> digits(D, 0);
    std::vector<double> gap(N, 0.0);
    auto set_digit = [&](std::size_t d, std::size_t k) {
        const double delta = grid(k) - grid(digits[d]);
        for (auto [i, c] : coeff[d]) gap[i] += c * delta;
        digits[d] = k;
    };
    auto objective = [&] {
        double total = 0.0;
        for (double g : gap) total += F(g);
        return total;
    };
    auto reset = [&](const std::vector<std::size_t>& start) {
        std::fill(digits.begin(), digits.end(), 0);
        std::fill(gap.begin(), gap.end(), 0.0);
        for (std::size_t d = 0; d < D; ++d)
            for (auto [i, c] : coeff[d]) gap[i] += c * grid(0);
        for (std::size_t d = 0; d < D; ++d) set_digit(d, start[d]);
    };

    std::vector<std::size_t> best_digits(D, 0);
    double best = std::numeric_limits<double>::infinity();
    const double points = std::pow(static_cast<double>(K), static_cast<double>(D));
    out.exhaustive = points <= opt.enumeration_limit;

    if (out.exhaustive) {
        reset(std::vector<std::size_t>(D, 0));
        // Odometer in lexicographic order: the last coordinate moves fastest.
        while (true) {
            const double v = objective();
            if (better(v, best)) {
                best = v;
                best_digits = digits;
            }
            bool done = true;
            std::size_t d = D;
            while (d-- > 0) {
                if (digits[d] + 1 < K) {
                    set_digit(d, digits[d] + 1);
                    done = false;
                    break;
                }
                set_digit(d, 0);
            }
            if (done) break;
        }
    } else {
        Rng rng(mix_seed(opt.seed, {0x0b71ULL}));
        for (std::size_t restart = 0; restart < std::max<std::size_t>(opt.restarts, 1); ++restart) {
            std::vector<std::size_t> start(D, 0);
            if (restart > 0)
                for (auto& k : start) k = rng.index(K);
            reset(start);
            double current = objective();
            bool improved = true;
            while (improved) {
                improved = false;
                for (std::size_t d = 0; d < D; ++d) {
                    std::size_t arg = 0;
                    double val = std::numeric_limits<double>::infinity();
                    for (std::size_t k = 0; k < K; ++k) {
                        set_digit(d, k);
                        const double v = objective();
                        if (better(v, val)) {
                            val = v;
                            arg = k;
                        }
                    }
                    if (better(val, current)) improved = true;
                    set_digit(d, arg);
                    current = val;
                }
            }
            if (better(current, best) || (!better(best, current) && digits < best_digits)) {
                best = current;
                best_digits = digits;
            }
        }
    }

    out.objective = D == 0 ? objective() : best;
    out.values.resize(D);
    for (std::size_t d = 0; d < D; ++d) out.values[d] = grid(best_digits[d]);
    for (const auto& keys : step_keys)
        for (auto d : keys) out.step_labels.push_back(out.values[d]);
    return out;
}

// --------------------------------------------------------------------------
// Multi-label labelling

struct MultiLabelTarget {
    double empirical_p;  // after clamping
    double gap;          // target return difference clip_1 - clip_2
    bool saturated;
};

/// Target return gap for one pair: p = n1/n clamped to [delta, 1-delta] with
/// delta = min(1/(2n), 1/4), gap = f^-1(p) clipped to [-2T, 2T]. With an L2
/// penalty lambda on the labels, the gap is shrunk until
/// f'(gap) = lambda |gap| / T if the kink at f(gap) = p no longer dominates.
inline MultiLabelTarget multilabel_target(const PreferencePair& p, std::size_t T, const LinkFunction& link,
                                          double lambda) {
    const double n = static_cast<double>(p.labels.size());
    const double delta = std::min(1.0 / (2.0 * n), 0.25);
    const double raw = static_cast<double>(p.count(1)) / n;
    const double pbar = std::clamp(raw, delta, 1.0 - delta);
    const double bound = 2.0 * static_cast<double>(T);
    double gap = link.inverse(pbar);
    bool saturated = false;
    if (std::abs(gap) > bound) {
        gap = std::copysign(bound, gap);
        saturated = true;
    }
    const double Td = static_cast<double>(T);
    auto slack = [&](double g) { return link.derivative(g) - lambda * std::abs(g) / Td; };
    if (gap != 0.0 && slack(gap) < 0.0) {
        double lo = 0.0, hi = gap;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (slack(mid) >= 0.0 ? lo : hi) = mid;
        }
        gap = lo;
    }
    return {pbar, gap, saturated};
}

/// The regularised per-pair objective |p - f(sum r1 - sum r2)| + lambda |r|^2.
inline double multilabel_objective(std::span<const double> r1, std::span<const double> r2, double pbar,
                                   const LinkFunction& link, double lambda) {
    double gap = 0.0, norm = 0.0;
    for (double v : r1) {
        gap += v;
        norm += v * v;
    }
    for (double v : r2) {
        gap -= v;
        norm += v * v;
    }
    return std::abs(pbar - link(gap)) + lambda * norm;
}

/// Spreads each pair's target gap uniformly: clip_1 steps get +gap/(2T),
/// clip_2 steps -gap/(2T). The clip with the majority of labels (clip_1 on a
/// tie) is recorded as chosen.
inline RewardLabeledDataset multilabel_label(const PreferenceDataset& ds, const LinkFunction& link,
                                             double lambda = 1e-6) {
    if (!(lambda > 0.0)) throw ParameterError("regularization must be positive");
    RewardLabeledDataset out;
    const double twoT = 2.0 * static_cast<double>(ds.clip_length);
    for (const auto& p : ds.pairs) {
        if (p.labels.empty()) throw ParameterError("pair " + std::to_string(p.pair_id) + " has no labels");
        const auto target = multilabel_target(p, ds.clip_length, link, lambda);
        out.saturated = out.saturated || target.saturated;
        const double r = std::clamp(target.gap / twoT, -1.0, 1.0);
        const bool first = p.count(1) >= p.count(2);
        detail::append_clip(out, p, p.clip_1, r, first ? Side::chosen : Side::rejected);
        detail::append_clip(out, p, p.clip_2, -r, first ? Side::rejected : Side::chosen);
    }
    return out;
}

// --------------------------------------------------------------------------
// Reward gap

struct RewardGapReport {
    double mean_chosen = 0.0;
    double mean_rejected = 0.0;
    double gap = 0.0;
};

/// Mean reward of every (s, a) over all its tuples, keyed by s * A + a
/// style hash.
inline std::unordered_map<std::uint64_t, double> state_action_means(const RewardLabeledDataset& labeled) {
    std::unordered_map<std::uint64_t, std::pair<double, double>> acc;
    for (const auto& t : labeled.tuples) {
        auto& [sum, n] = acc[detail::sa_key(t.s, t.a)];
        sum += t.r;
        n += 1.0;
    }
    std::unordered_map<std::uint64_t, double> means;
    for (const auto& [k, v] : acc) means[k] = v.first / v.second;
    return means;
}

/// Chosen-side minus rejected-side mean of the effective labels, where a
/// repeated state-action's effective label is the mean over its
/// occurrences (what an averaging learner sees).
inline RewardGapReport reward_gap(const RewardLabeledDataset& labeled) {
    if (labeled.provenance.size() != labeled.tuples.size())
        throw ParameterError("reward_gap needs provenance for every tuple");
    const auto means = state_action_means(labeled);
    double sc = 0.0, sr = 0.0;
    std::size_t nc = 0, nr = 0;
    for (std::size_t i = 0; i < labeled.tuples.size(); ++i) {
        const double v = means.at(detail::sa_key(labeled.tuples[i].s, labeled.tuples[i].a));
        if (labeled.provenance[i].side == Side::chosen) {
            sc += v;
            ++nc;
        } else {
            sr += v;
            ++nr;
        }
    }
    if (nc == 0 || nr == 0) throw ParameterError("reward_gap: one side has no tuples");
    RewardGapReport rep;
    rep.mean_chosen = sc / static_cast<double>(nc);
    rep.mean_rejected = sr / static_cast<double>(nr);
    rep.gap = rep.mean_chosen - rep.mean_rejected;
    return rep;
}

// --------------------------------------------------------------------------
// JSON Lines: one {s, a, r, s2, pair_id, side, t} record per tuple.

inline void write_labeled(const RewardLabeledDataset& ds, std::ostream& out) {
    for (std::size_t i = 0; i < ds.tuples.size(); ++i) {
        const auto& t = ds.tuples[i];
        nlohmann::json rec = {{"s", t.s}, {"a", t.a}, {"r", t.r}, {"s2", t.s2}};
        if (!ds.provenance.empty()) {
            rec["pair_id"] = ds.provenance[i].pair_id;
            rec["side"] = side_name(ds.provenance[i].side);
            rec["t"] = ds.provenance[i].t;
        }
        out << rec.dump() << '\n';
    }
}

inline void save_labeled(const RewardLabeledDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParameterError("cannot write " + path);
    write_labeled(ds, out);
}

inline RewardLabeledDataset read_labeled(std::istream& in) {
    RewardLabeledDataset ds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ds.tuples.push_back(
                {j.at("s").get<StateId>(), j.at("a").get<ActionId>(), j.at("r").get<double>(), j.at("s2").get<StateId>()});
            if (j.contains("side")) {
                const auto side = j["side"].get<std::string>();
                if (side != "chosen" && side != "rejected") throw ParseError("bad side '" + side + "'", line_no);
                ds.provenance.push_back({j.at("pair_id").get<std::uint64_t>(),
                                         side == "chosen" ? Side::chosen : Side::rejected, j.at("t").get<std::size_t>()});
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("malformed tuple: ") + e.what(), line_no);
        }
    }
    ds.validate();
    return ds;
}

inline RewardLabeledDataset load_labeled(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParameterError("cannot read " + path);
    return read_labeled(in);
}

} // namespace brl
