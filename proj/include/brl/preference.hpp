#pragma once

// Synthetic preference datasets: clip sampling, Bernoulli labelling under a
// link function, overlap and multi-label variants, JSON Lines storage.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "brl/errors.hpp"
#include "brl/link.hpp"
#include "brl/mdp.hpp"
#include "brl/planning.hpp"
#include "brl/random.hpp"

namespace brl {

struct PreferencePair {
    std::uint64_t pair_id = 0;
    TrajectoryClip clip_1;
    TrajectoryClip clip_2;
    /// Values in {1, 2}: index of the preferred clip, one entry per trial.
    std::vector<int> labels;

    std::size_t count(int label) const {
        return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
    }

    const TrajectoryClip& chosen() const { return labels.at(0) == 1 ? clip_1 : clip_2; }
    const TrajectoryClip& rejected() const { return labels.at(0) == 1 ? clip_2 : clip_1; }

    bool operator==(const PreferencePair&) const = default;
};

struct PreferenceDataset {
    std::vector<PreferencePair> pairs;
    std::size_t clip_length = 20;
    LinkFunction link;
    /// clip id -> number of pairs the clip takes part in.
    std::map<std::uint64_t, std::size_t> overlap_manifest;
    /// True iff no (state, action) occurs twice anywhere in the dataset.
    bool no_overlap = false;

    std::size_t size() const noexcept { return pairs.size(); }

    bool single_label() const {
        return std::all_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.labels.size() == 1; });
    }

    void rebuild_manifest() {
        overlap_manifest.clear();
        for (const auto& p : pairs) {
            ++overlap_manifest[p.clip_1.id];
            if (p.clip_2.id != p.clip_1.id) ++overlap_manifest[p.clip_2.id];
        }
    }

    /// Exhaustive scan for a repeated (state, action).
    std::optional<Step> first_repeated_state_action() const {
        std::unordered_set<std::uint64_t> seen;
        for (const auto& p : pairs)
            for (const auto* clip : {&p.clip_1, &p.clip_2})
                for (const auto& st : clip->steps) {
                    const std::uint64_t key = (static_cast<std::uint64_t>(st.s) << 20) ^ st.a;
                    if (!seen.insert(key).second) return st;
                }
        return std::nullopt;
    }

    void refresh_metadata() {
        rebuild_manifest();
        no_overlap = !first_repeated_state_action().has_value();
    }

    void validate() const {
        std::unordered_set<std::uint64_t> ids;
        for (const auto& p : pairs) {
            const std::string tag = "pair " + std::to_string(p.pair_id);
            if (!ids.insert(p.pair_id).second) throw ValidationError(tag + ": duplicate pair_id");
            if (p.labels.empty()) throw ValidationError(tag + ": no labels");
            for (int l : p.labels)
                if (l != 1 && l != 2) throw ValidationError(tag + ": label " + std::to_string(l) + " not in {1,2}");
            for (const auto* clip : {&p.clip_1, &p.clip_2}) {
                if (clip->length() != clip_length)
                    throw ValidationError(tag + ": clip length " + std::to_string(clip->length()) + " != " +
                                          std::to_string(clip_length));
                if (!clip->chains()) throw ValidationError(tag + ": clip steps do not chain");
            }
        }
        PreferenceDataset copy;
        copy.pairs = pairs;
        copy.rebuild_manifest();
        if (copy.overlap_manifest != overlap_manifest) throw ValidationError("overlap manifest does not match clips");
        if (no_overlap && first_repeated_state_action())
            throw ValidationError("dataset declared no-overlap repeats a state-action");
    }

    bool operator==(const PreferenceDataset&) const = default;
};

inline double preference_probability(const Mdp& mdp, const TrajectoryClip& c1, const TrajectoryClip& c2,
                                     const LinkFunction& link) {
    return link(clip_return(mdp, c1) - clip_return(mdp, c2));
}

/// Bernoulli trial: 1 with probability p, else 2.
inline int draw_label(double p, Rng& rng) { return rng.uniform() < p ? 1 : 2; }

struct GenerationOptions {
    /// Length of the rollout a clip window is cut from; 0 means 2T.
    std::size_t episode_length = 0;
    /// Resampling attempts per clip when avoiding repeated state-actions.
    std::size_t retry_budget = 64;
    /// Fail instead of accepting an overlapping clip once the budget is spent.
    bool require_unique = false;
};

/// Number of (state, action) pairs reachable from the start distribution.
inline std::size_t reachable_state_actions(const Mdp& mdp) {
    std::vector<char> seen(mdp.state_count(), 0);
    std::queue<StateId> frontier;
    for (StateId s = 0; s < mdp.state_count(); ++s)
        if (mdp.initial_distribution()[s] > 0.0) {
            seen[s] = 1;
            frontier.push(s);
        }
    std::size_t count = 0;
    while (!frontier.empty()) {
        const StateId s = frontier.front();
        frontier.pop();
        ++count;
        for (ActionId a = 0; a < mdp.action_count(); ++a)
            for (const auto& t : mdp.transitions(s, a))
                if (t.prob > 0.0 && !seen[t.next]) {
                    seen[t.next] = 1;
                    frontier.push(t.next);
                }
    }
    return count * mdp.action_count();
}

namespace detail {

/// Draws contiguous clip windows from fresh behaviour rollouts, avoiding
/// state-actions already used when the reachable space is large enough.
class ClipSampler {
public:
    ClipSampler(const Mdp& mdp, const BehaviorMix& behavior, std::size_t clip_length, std::size_t expected_clips,
                std::uint64_t seed, const GenerationOptions& opt)
        : mdp_(mdp), behavior_(behavior), T_(clip_length), seed_(seed), opt_(opt) {
        if (T_ == 0) throw ParameterError("clip_length must be >= 1");
        L_ = opt_.episode_length == 0 ? 2 * T_ : opt_.episode_length;
        if (L_ < T_) throw ParameterError("episode_length shorter than clip_length");
        avoid_overlap_ = expected_clips * T_ <= reachable_state_actions(mdp_);
        if (opt_.require_unique && !avoid_overlap_)
            throw GenerationError("unique state-actions requested but only " +
                                  std::to_string(reachable_state_actions(mdp_)) + " are reachable");
    }

    TrajectoryClip sample(std::uint64_t stream) {
        TrajectoryClip clip;
        const std::size_t attempts = avoid_overlap_ ? std::max<std::size_t>(opt_.retry_budget, 1) : 1;
        std::optional<Step> collision;
        for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
            Rng rng(mix_seed(seed_, {0xc11bULL, stream, attempt}));
            const auto episode = rollout(mdp_, behavior_.pick(rng), L_, rng);
            const std::size_t start = rng.index(L_ - T_ + 1);
            clip.steps.assign(episode.begin() + static_cast<std::ptrdiff_t>(start),
                              episode.begin() + static_cast<std::ptrdiff_t>(start + T_));
            collision = avoid_overlap_ ? find_collision(clip) : std::nullopt;
            if (!collision) break;
        }
        if (collision && opt_.require_unique)
            throw GenerationError("retry budget exhausted: state-action (" + std::to_string(collision->s) + "," +
                                  std::to_string(collision->a) + ") keeps colliding");
        for (const auto& st : clip.steps) used_.insert(key(st));
        clip.id = next_id_++;
        return clip;
    }

private:
    std::uint64_t key(const Step& st) const { return st.s * mdp_.action_count() + st.a; }

    std::optional<Step> find_collision(const TrajectoryClip& clip) const {
        std::unordered_set<std::uint64_t> local;
        for (const auto& st : clip.steps)
            if (used_.count(key(st)) || !local.insert(key(st)).second) return st;
        return std::nullopt;
    }

    const Mdp& mdp_;
    const BehaviorMix& behavior_;
    std::size_t T_;
    std::size_t L_ = 0;
    std::uint64_t seed_;
    GenerationOptions opt_;
    bool avoid_overlap_ = false;
    std::unordered_set<std::uint64_t> used_;
    std::uint64_t next_id_ = 0;
};

inline std::vector<int> draw_labels(const Mdp& mdp, const PreferencePair& pair, const LinkFunction& link,
                                    std::size_t count, std::uint64_t seed) {
    const double p = preference_probability(mdp, pair.clip_1, pair.clip_2, link);
    Rng rng(mix_seed(seed, {0x1abe1ULL, pair.pair_id}));
    std::vector<int> labels(count);
    for (auto& l : labels) l = draw_label(p, rng);
    return labels;
}

} // namespace detail

/// Each pair carries `labels_per_pair` independent Bernoulli draws with
/// p = link(return(clip_1) - return(clip_2)).
inline PreferenceDataset generate_multilabel_dataset(const Mdp& mdp, const BehaviorMix& behavior, std::size_t n_pairs,
                                                     std::size_t labels_per_pair, std::size_t clip_length,
                                                     const LinkFunction& link, std::uint64_t seed,
                                                     const GenerationOptions& opt = {}) {
    if (n_pairs == 0) throw ParameterError("n_pairs must be >= 1");
    if (labels_per_pair == 0) throw ParameterError("labels_per_pair must be >= 1");
    detail::ClipSampler sampler(mdp, behavior, clip_length, 2 * n_pairs, seed, opt);
    PreferenceDataset ds;
    ds.clip_length = clip_length;
    ds.link = link;
    ds.pairs.reserve(n_pairs);
    for (std::size_t i = 0; i < n_pairs; ++i) {
        PreferencePair p;
        p.pair_id = i;
        p.clip_1 = sampler.sample(2 * i);
        p.clip_2 = sampler.sample(2 * i + 1);
        p.labels = detail::draw_labels(mdp, p, link, labels_per_pair, seed);
        ds.pairs.push_back(std::move(p));
    }
    ds.refresh_metadata();
    return ds;
}

inline PreferenceDataset generate_dataset(const Mdp& mdp, const BehaviorMix& behavior, std::size_t n_pairs,
                                          std::size_t clip_length, const LinkFunction& link, std::uint64_t seed,
                                          const GenerationOptions& opt = {}) {
    return generate_multilabel_dataset(mdp, behavior, n_pairs, 1, clip_length, link, seed, opt);
}

/// Builds `pool_size` comparisons in which round(reuse_fraction * pool_size)
/// clips are each compared against `reuse_multiplier` distinct fresh
/// partners; the remaining comparisons pair fresh clips. With 20% x 4, 80%
/// of the pairs contain a clip that is compared several times.
inline PreferenceDataset generate_overlap_dataset(const Mdp& mdp, const BehaviorMix& behavior, std::size_t pool_size,
                                                  double reuse_fraction, std::size_t reuse_multiplier,
                                                  std::size_t clip_length, const LinkFunction& link,
                                                  std::uint64_t seed, const GenerationOptions& opt = {}) {
    if (!(reuse_fraction >= 0.0 && reuse_fraction <= 1.0)) throw ParameterError("reuse_fraction outside [0,1]");
    if (reuse_multiplier < 2) throw ParameterError("reuse_multiplier must be >= 2");
    if (pool_size == 0) throw ParameterError("pool_size must be >= 1");
    const auto reused =
        static_cast<std::size_t>(std::llround(reuse_fraction * static_cast<double>(pool_size)));
    if (reused * reuse_multiplier > pool_size)
        throw ParameterError("pool of " + std::to_string(pool_size) + " comparisons too small for " +
                             std::to_string(reused) + " clips x " + std::to_string(reuse_multiplier));
    if (reuse_fraction > 0.0 && reused == 0) throw ParameterError("pool too small: no clip would be reused");

    const std::size_t fresh_pairs = pool_size - reused * reuse_multiplier;
    const std::size_t clips = reused * (1 + reuse_multiplier) + 2 * fresh_pairs;
    detail::ClipSampler sampler(mdp, behavior, clip_length, clips, seed, opt);
    Rng side_rng(mix_seed(seed, {0x51deULL}));

    std::vector<PreferencePair> pairs;
    pairs.reserve(pool_size);
    std::uint64_t stream = 0;
    for (std::size_t r = 0; r < reused; ++r) {
        const TrajectoryClip anchor = sampler.sample(stream++);
        for (std::size_t k = 0; k < reuse_multiplier; ++k) {
            PreferencePair p;
            TrajectoryClip partner = sampler.sample(stream++);
            if (side_rng.bernoulli(0.5)) {
                p.clip_1 = anchor;
                p.clip_2 = std::move(partner);
            } else {
                p.clip_1 = std::move(partner);
                p.clip_2 = anchor;
            }
            pairs.push_back(std::move(p));
        }
    }
    for (std::size_t i = 0; i < fresh_pairs; ++i) {
        PreferencePair p;
        p.clip_1 = sampler.sample(stream++);
        p.clip_2 = sampler.sample(stream++);
        pairs.push_back(std::move(p));
    }
    Rng shuffle_rng(mix_seed(seed, {0x5f1eULL}));
    for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[shuffle_rng.index(i)]);

    PreferenceDataset ds;
    ds.clip_length = clip_length;
    ds.link = link;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        pairs[i].pair_id = i;
        pairs[i].labels = detail::draw_labels(mdp, pairs[i], link, 1, seed);
    }
    ds.pairs = std::move(pairs);
    ds.refresh_metadata();
    return ds;
}

/// Keeps round(fraction * N) pairs chosen uniformly without replacement, in
/// their original order. fraction == 1 returns the dataset unchanged.
inline PreferenceDataset subsample_pairs(const PreferenceDataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("fraction must lie in (0,1]");
    const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
    if (keep == 0) throw ParameterError("fraction " + std::to_string(fraction) + " leaves no pairs");
    if (keep == ds.size()) return ds;
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(mix_seed(seed, {0x5ab5ULL}));
    for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    PreferenceDataset out;
    out.clip_length = ds.clip_length;
    out.link = ds.link;
    for (auto i : idx) out.pairs.push_back(ds.pairs[i]);
    out.refresh_metadata();
    return out;
}

// --------------------------------------------------------------------------
// JSON Lines: header {version, T, link_kind, ...}, then one pair per line
// {pair_id, c1, c2, t1:[{s,a,s2}...], t2:[...], labels:[...]}.

inline constexpr int kDatasetVersion = 1;

namespace detail {

inline nlohmann::json steps_to_json(const TrajectoryClip& c) {
    auto arr = nlohmann::json::array();
    for (const auto& st : c.steps) arr.push_back({{"s", st.s}, {"a", st.a}, {"s2", st.s2}});
    return arr;
}

inline TrajectoryClip steps_from_json(const nlohmann::json& arr, std::uint64_t id) {
    TrajectoryClip c;
    c.id = id;
    for (const auto& st : arr)
        c.steps.push_back({st.at("s").get<StateId>(), st.at("a").get<ActionId>(), st.at("s2").get<StateId>()});
    return c;
}

} // namespace detail

inline void write_dataset(const PreferenceDataset& ds, std::ostream& out) {
    nlohmann::json header = {{"version", kDatasetVersion},
                             {"T", ds.clip_length},
                             {"link_kind", ds.link.kind_name()},
                             {"link_slope", ds.link.slope},
                             {"link_offset", ds.link.offset},
                             {"pairs", ds.size()},
                             {"no_overlap", ds.no_overlap}};
    out << header.dump() << '\n';
    for (const auto& p : ds.pairs) {
        nlohmann::json rec = {{"pair_id", p.pair_id},
                              {"c1", p.clip_1.id},
                              {"c2", p.clip_2.id},
                              {"t1", detail::steps_to_json(p.clip_1)},
                              {"t2", detail::steps_to_json(p.clip_2)},
                              {"labels", p.labels}};
        out << rec.dump() << '\n';
    }
}

inline void save_dataset(const PreferenceDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParameterError("cannot write " + path);
    write_dataset(ds, out);
}

inline PreferenceDataset read_dataset(std::istream& in) {
    PreferenceDataset ds;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    bool declared_no_overlap = false;
    std::uint64_t next_free_id = 0;
    std::vector<std::pair<std::size_t, bool>> implicit_ids;  // (pair index, second clip)
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("malformed record: ") + e.what(), line_no);
        }
        try {
            if (!have_header) {
                const int version = j.at("version").get<int>();
                if (version != kDatasetVersion)
                    throw ParseError("unsupported dataset version " + std::to_string(version), line_no);
                ds.clip_length = j.at("T").get<std::size_t>();
                ds.link = link_from_name(j.at("link_kind").get<std::string>(), j.value("link_slope", 1.0),
                                         j.value("link_offset", 0.5));
                declared_no_overlap = j.value("no_overlap", false);
                have_header = true;
                continue;
            }
            PreferencePair p;
            p.pair_id = j.at("pair_id").get<std::uint64_t>();
            const bool has1 = j.contains("c1"), has2 = j.contains("c2");
            p.clip_1 = detail::steps_from_json(j.at("t1"), has1 ? j["c1"].get<std::uint64_t>() : 0);
            p.clip_2 = detail::steps_from_json(j.at("t2"), has2 ? j["c2"].get<std::uint64_t>() : 0);
            if (!has1) implicit_ids.emplace_back(ds.pairs.size(), false);
            if (!has2) implicit_ids.emplace_back(ds.pairs.size(), true);
            if (has1) next_free_id = std::max(next_free_id, p.clip_1.id + 1);
            if (has2) next_free_id = std::max(next_free_id, p.clip_2.id + 1);
            p.labels = j.at("labels").get<std::vector<int>>();
            ds.pairs.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad record: ") + e.what(), line_no);
        }
    }
    if (!have_header) throw ParseError("missing header line", std::max<std::size_t>(line_no, 1));
    for (const auto& [idx, second] : implicit_ids)
        (second ? ds.pairs[idx].clip_2 : ds.pairs[idx].clip_1).id = next_free_id++;
    ds.refresh_metadata();
    if (declared_no_overlap && !ds.no_overlap)
        throw ValidationError("dataset declared no-overlap repeats a state-action");
    ds.validate();
    return ds;
}

inline PreferenceDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParameterError("cannot read " + path);
    return read_dataset(in);
}

} // namespace brl
