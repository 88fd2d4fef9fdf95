#pragma once

// Parametric reward models R(s,a; w) = tanh(w . phi(s,a)) and their
// training objectives: the L1 loss against reward labels and the link-loss
// on preference pairs.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brl/errors.hpp"
#include "brl/labeling.hpp"
#include "brl/link.hpp"
#include "brl/mdp.hpp"
#include "brl/preference.hpp"
#include "brl/random.hpp"

namespace brl {

/// Sparse feature map over (state, action).
///   tabular:     one-hot(s) x one-hot(a), dim S*A
///   coordinates: (coords(s), 1) x one-hot(a), dim (d+1)*A
///   table:       explicit dense row per (s, a)
class FeatureMap {
public:
    enum class Kind { tabular, coordinates, table };

    static FeatureMap tabular(std::size_t states, std::size_t actions) {
        FeatureMap f;
        f.kind_ = Kind::tabular;
        f.states_ = states;
        f.actions_ = actions;
        f.dim_ = states * actions;
        return f;
    }

    static FeatureMap coordinates(const Mdp& mdp) {
        FeatureMap f;
        f.kind_ = Kind::coordinates;
        f.states_ = mdp.state_count();
        f.actions_ = mdp.action_count();
        f.row_dim_ = mdp.coordinate_dim() + 1;
        f.dim_ = f.row_dim_ * f.actions_;
        f.values_.reserve(f.states_ * f.row_dim_);
        for (StateId s = 0; s < f.states_; ++s) {
            for (double c : mdp.coordinates(s)) f.values_.push_back(c);
            f.values_.push_back(1.0);
        }
        return f;
    }

    static FeatureMap table(std::size_t states, std::size_t actions, std::size_t dim, std::vector<double> rows) {
        if (rows.size() != states * actions * dim) throw ParameterError("feature table has wrong shape");
        FeatureMap f;
        f.kind_ = Kind::table;
        f.states_ = states;
        f.actions_ = actions;
        f.row_dim_ = dim;
        f.dim_ = dim;
        f.values_ = std::move(rows);
        return f;
    }

    Kind kind() const noexcept { return kind_; }
    std::string kind_name() const {
        switch (kind_) {
        case Kind::tabular: return "tabular";
        case Kind::coordinates: return "coordinates";
        case Kind::table: return "table";
        }
        return "";
    }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t state_count() const noexcept { return states_; }
    std::size_t action_count() const noexcept { return actions_; }
    std::size_t row_dim() const noexcept { return row_dim_; }
    const std::vector<double>& values() const noexcept { return values_; }

    /// Calls fn(index, value) for every non-zero feature of (s, a).
    template <class Fn>
    void for_each(StateId s, ActionId a, Fn&& fn) const {
        if (s >= states_ || a >= actions_) throw ParameterError("feature lookup out of range");
        switch (kind_) {
        case Kind::tabular: fn(s * actions_ + a, 1.0); return;
        case Kind::coordinates: {
            const double* row = values_.data() + s * row_dim_;
            for (std::size_t k = 0; k < row_dim_; ++k) fn(a * row_dim_ + k, row[k]);
            return;
        }
        case Kind::table: {
            const double* row = values_.data() + (s * actions_ + a) * row_dim_;
            for (std::size_t k = 0; k < row_dim_; ++k) fn(k, row[k]);
            return;
        }
        }
    }

    bool operator==(const FeatureMap&) const = default;

private:
    Kind kind_ = Kind::tabular;
    std::size_t states_ = 0;
    std::size_t actions_ = 0;
    std::size_t row_dim_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> values_;
};

/// Bounded reward model; the tanh squashing keeps every output in (-1, 1).
class ParametricRewardModel {
public:
    ParametricRewardModel() = default;
    explicit ParametricRewardModel(FeatureMap features)
        : features_(std::move(features)), w_(features_.dim(), 0.0) {}
    ParametricRewardModel(FeatureMap features, std::vector<double> w) : features_(std::move(features)), w_(std::move(w)) {
        if (w_.size() != features_.dim()) throw ParameterError("parameter vector does not match feature dimension");
    }

    const FeatureMap& features() const noexcept { return features_; }
    std::span<const double> parameters() const noexcept { return w_; }
    std::vector<double>& mutable_parameters() noexcept { return w_; }
    std::size_t parameter_count() const noexcept { return w_.size(); }

    double preactivation(StateId s, ActionId a) const {
        double z = 0.0;
        features_.for_each(s, a, [&](std::size_t i, double v) { z += w_[i] * v; });
        return z;
    }

    double operator()(StateId s, ActionId a) const { return std::tanh(preactivation(s, a)); }

    /// grad += scale * dR(s,a)/dw.
    void accumulate_gradient(StateId s, ActionId a, double scale, std::vector<double>& grad) const {
        const double y = std::tanh(preactivation(s, a));
        const double k = scale * (1.0 - y * y);
        if (k == 0.0) return;
        features_.for_each(s, a, [&](std::size_t i, double v) { grad[i] += k * v; });
    }

    bool operator==(const ParametricRewardModel&) const = default;

private:
    FeatureMap features_;
    std::vector<double> w_;
};

struct LossWithGradient {
    double value = 0.0;
    std::vector<double> gradient;
};

inline double sign0(double x) noexcept { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// sum over tuples of |R(s,a) - r|; the subgradient (sign(0) = 0) is added
/// to *grad when grad is non-null.
inline double accumulate_label_l1(const ParametricRewardModel& model, std::span<const LabeledTuple> tuples,
                                  std::vector<double>* grad) {
    double value = 0.0;
    for (const auto& t : tuples) {
        const double diff = model(t.s, t.a) - t.r;
        value += std::abs(diff);
        if (grad) model.accumulate_gradient(t.s, t.a, sign0(diff), *grad);
    }
    return value;
}

inline LossWithGradient label_l1_loss(const ParametricRewardModel& model, std::span<const LabeledTuple> tuples) {
    LossWithGradient out{0.0, std::vector<double>(model.parameter_count(), 0.0)};
    out.value = accumulate_label_l1(model, tuples, &out.gradient);
    return out;
}

inline double loss_label_l1(const ParametricRewardModel& model, const RewardLabeledDataset& labeled) {
    double total = 0.0;
    for (const auto& t : labeled.tuples) total += std::abs(model(t.s, t.a) - t.r);
    return total;
}

/// Linear form of the L1 loss valid for +-1 labels and outputs in [-1, 1]:
/// (#tuples) - sum_{r=+1} R + sum_{r=-1} R.
inline double loss_label_l1_linear(const ParametricRewardModel& model, const RewardLabeledDataset& labeled) {
    double total = static_cast<double>(labeled.tuples.size());
    for (const auto& t : labeled.tuples) {
        if (t.r == 1.0) total -= model(t.s, t.a);
        else if (t.r == -1.0) total += model(t.s, t.a);
        else throw ParameterError("linear L1 form needs binary labels");
    }
    return total;
}

inline double clip_model_return(const ParametricRewardModel& model, const TrajectoryClip& clip) {
    double total = 0.0;
    for (const auto& st : clip.steps) total += model(st.s, st.a);
    return total;
}

/// Link-loss of one pair: n1 F(G1 - G2) + n2 F(G2 - G1), where n_k counts
/// labels preferring clip k and G is the model return of a clip.
inline double accumulate_pair_preference(const ParametricRewardModel& model, const PreferencePair& pair,
                                         const LinkLossFunction& F, std::vector<double>* grad) {
    const double n1 = static_cast<double>(pair.count(1)), n2 = static_cast<double>(pair.count(2));
    const double gap = clip_model_return(model, pair.clip_1) - clip_model_return(model, pair.clip_2);
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
        for (const auto& st : pair.clip_1.steps) model.accumulate_gradient(st.s, st.a, coef, *grad);
        for (const auto& st : pair.clip_2.steps) model.accumulate_gradient(st.s, st.a, -coef, *grad);
    }
    return value;
}

inline LossWithGradient pair_preference_loss(const ParametricRewardModel& model, const PreferencePair& pair,
                                             const LinkLossFunction& F) {
    LossWithGradient out{0.0, std::vector<double>(model.parameter_count(), 0.0)};
    out.value = accumulate_pair_preference(model, pair, F, &out.gradient);
    return out;
}

/// L1 loss of one single-label pair against its binary labels:
/// sum_chosen |1 - R| + sum_rejected |R + 1|.
inline LossWithGradient pair_label_l1_loss(const ParametricRewardModel& model, const PreferencePair& pair) {
    LossWithGradient out{0.0, std::vector<double>(model.parameter_count(), 0.0)};
    auto add = [&](const TrajectoryClip& clip, double label) {
        for (const auto& st : clip.steps) {
            const double diff = model(st.s, st.a) - label;
            out.value += std::abs(diff);
            model.accumulate_gradient(st.s, st.a, sign0(diff), out.gradient);
        }
    };
    add(pair.chosen(), 1.0);
    add(pair.rejected(), -1.0);
    return out;
}

inline double loss_preference(const ParametricRewardModel& model, const PreferenceDataset& ds,
                              const LinkLossFunction& F) {
    double total = 0.0;
    for (const auto& p : ds.pairs) total += accumulate_pair_preference(model, p, F, nullptr);
    return total;
}

// --------------------------------------------------------------------------
// Training

struct TrainConfig {
    enum class Objective { label_l1, preference_F };

    double learning_rate = 0.1;
    std::size_t epochs = 100;
    /// Pairs per gradient step; 0 means full batch.
    std::size_t batch_size = 0;
    std::uint64_t seed = 0;
    /// Standard deviation of the random initial parameters; 0 keeps w.
    double init_scale = 0.0;
    Objective objective = Objective::preference_F;
    LinkLossFunction F = LinkLossFunction::sigmoid_nll();
};

struct TrainResult {
    ParametricRewardModel model;
    /// Mean loss per pair before training and after every epoch.
    std::vector<double> loss_curve;
};

namespace detail {

template <class GroupLoss>
TrainResult gradient_descent(ParametricRewardModel model, std::size_t groups, const TrainConfig& cfg,
                             GroupLoss&& group_loss) {
    if (!(cfg.learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
    if (cfg.init_scale > 0.0) {
        Rng rng(mix_seed(cfg.seed, {0x1717ULL}));
        for (auto& w : model.mutable_parameters()) w = cfg.init_scale * rng.normal();
    }
    TrainResult res;
    if (groups == 0) {
        res.model = std::move(model);
        return res;
    }
    auto full_loss = [&] {
        double total = 0.0;
        for (std::size_t g = 0; g < groups; ++g) total += group_loss(model, g, nullptr);
        return total / static_cast<double>(groups);
    };
    res.loss_curve.push_back(full_loss());
    std::vector<std::size_t> order(groups);
    for (std::size_t i = 0; i < groups; ++i) order[i] = i;
    const std::size_t batch = cfg.batch_size == 0 ? groups : std::min(cfg.batch_size, groups);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch < groups) {
            Rng rng(mix_seed(cfg.seed, {0xba7cULL, epoch}));
            for (std::size_t i = groups; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        }
        for (std::size_t start = 0; start < groups; start += batch) {
            const std::size_t end = std::min(groups, start + batch);
            std::vector<double> grad(model.parameter_count(), 0.0);
            for (std::size_t k = start; k < end; ++k) group_loss(model, order[k], &grad);
            const double scale = cfg.learning_rate / static_cast<double>(end - start);
            auto& w = model.mutable_parameters();
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= scale * grad[i];
            ++step;
        }
        const double loss = full_loss();
        if (!std::isfinite(loss)) throw TrainingError("reward model loss diverged", step);
        res.loss_curve.push_back(loss);
    }
    res.model = std::move(model);
    return res;
}

} // namespace detail

/// Gradient descent on the mean L1 loss per pair (tuples grouped by
/// provenance pair id; without provenance every tuple is its own group).
inline TrainResult train(ParametricRewardModel model, const RewardLabeledDataset& labeled, const TrainConfig& cfg) {
    if (cfg.objective != TrainConfig::Objective::label_l1)
        throw ParameterError("reward-labelled data needs the label_l1 objective");
    std::vector<std::vector<LabeledTuple>> groups;
    if (labeled.provenance.empty()) {
        for (const auto& t : labeled.tuples) groups.push_back({t});
    } else {
        std::map<std::uint64_t, std::size_t> index;
        for (std::size_t i = 0; i < labeled.tuples.size(); ++i) {
            auto [it, inserted] = index.emplace(labeled.provenance[i].pair_id, groups.size());
            if (inserted) groups.emplace_back();
            groups[it->second].push_back(labeled.tuples[i]);
        }
    }
    return detail::gradient_descent(std::move(model), groups.size(), cfg,
                                    [&](const ParametricRewardModel& m, std::size_t g, std::vector<double>* grad) {
                                        return accumulate_label_l1(m, groups[g], grad);
                                    });
}

/// Gradient descent on the mean link-loss per pair.
inline TrainResult train(ParametricRewardModel model, const PreferenceDataset& ds, const TrainConfig& cfg) {
    if (cfg.objective != TrainConfig::Objective::preference_F)
        throw ParameterError("preference data needs the preference_F objective");
    return detail::gradient_descent(std::move(model), ds.size(), cfg,
                                    [&](const ParametricRewardModel& m, std::size_t g, std::vector<double>* grad) {
                                        return accumulate_pair_preference(m, ds.pairs[g], cfg.F, grad);
                                    });
}

/// Labels every step of every clip with the model's reward; the clip with
/// the majority of labels (clip_1 on ties) is recorded as chosen.
inline RewardLabeledDataset label_with_model(const ParametricRewardModel& model, const PreferenceDataset& ds) {
    RewardLabeledDataset out;
    for (const auto& p : ds.pairs) {
        const bool first = p.count(1) >= p.count(2);
        for (int side = 0; side < 2; ++side) {
            const auto& clip = side == 0 ? p.clip_1 : p.clip_2;
            const Side tag = (side == 0) == first ? Side::chosen : Side::rejected;
            for (std::size_t t = 0; t < clip.steps.size(); ++t) {
                const auto& st = clip.steps[t];
                out.tuples.push_back({st.s, st.a, model(st.s, st.a), st.s2});
                out.provenance.push_back({p.pair_id, tag, t});
            }
        }
    }
    return out;
}

// --------------------------------------------------------------------------
// Checkpoint: {feature_map_kind, w[..]} plus the shape needed to rebuild it.

inline nlohmann::json model_to_json(const ParametricRewardModel& m) {
    const auto& f = m.features();
    nlohmann::json j = {{"feature_map_kind", f.kind_name()},
                        {"states", f.state_count()},
                        {"actions", f.action_count()},
                        {"row_dim", f.row_dim()},
                        {"w", std::vector<double>(m.parameters().begin(), m.parameters().end())}};
    if (f.kind() != FeatureMap::Kind::tabular) j["feature_values"] = f.values();
    return j;
}

inline ParametricRewardModel model_from_json(const nlohmann::json& j) {
    try {
        const auto kind = j.at("feature_map_kind").get<std::string>();
        const auto S = j.at("states").get<std::size_t>(), A = j.at("actions").get<std::size_t>();
        auto w = j.at("w").get<std::vector<double>>();
        if (kind == "tabular") return {FeatureMap::tabular(S, A), std::move(w)};
        const auto row_dim = j.at("row_dim").get<std::size_t>();
        auto values = j.at("feature_values").get<std::vector<double>>();
        if (kind == "table") return {FeatureMap::table(S, A, row_dim, std::move(values)), std::move(w)};
        if (kind == "coordinates") {
            // Rebuild through a stand-in Mdp carrying the stored coordinates.
            if (row_dim < 2 || values.size() != S * row_dim) throw ValidationError("bad coordinate table");
            std::vector<std::vector<Transition>> self(S * A);
            for (StateId s = 0; s < S; ++s)
                for (ActionId a = 0; a < A; ++a) self[s * A + a] = {{s, 1.0}};
            Mdp shell(S, A, std::move(self), std::vector<double>(S * A, 0.0),
                      std::vector<double>(S, 1.0 / static_cast<double>(S)), 0.5);
            std::vector<double> coords;
            for (StateId s = 0; s < S; ++s)
                for (std::size_t k = 0; k + 1 < row_dim; ++k) coords.push_back(values[s * row_dim + k]);
            shell.set_coordinates(std::move(coords), row_dim - 1);
            return {FeatureMap::coordinates(shell), std::move(w)};
        }
        throw ValidationError("unknown feature_map_kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad model checkpoint: ") + e.what());
    }
}

} // namespace brl
