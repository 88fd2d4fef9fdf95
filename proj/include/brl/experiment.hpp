#pragma once

// Experiment pipeline: build an environment, generate (or load) preference
// data per seed, label it, fit offline learners, evaluate exactly and write
// CSV results.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "brl/errors.hpp"
#include "brl/labeling.hpp"
#include "brl/link.hpp"
#include "brl/mdp.hpp"
#include "brl/offline_rl.hpp"
#include "brl/planning.hpp"
#include "brl/preference.hpp"
#include "brl/random.hpp"
#include "brl/reward_model.hpp"

namespace brl {

inline const std::vector<std::string>& labeling_methods() {
    static const std::vector<std::string> m{"oracle", "brl", "rm", "multilabel"};
    return m;
}

inline const std::vector<std::string>& behavior_presets() {
    static const std::vector<std::string> p{"optimal", "expert", "random", "medium", "medium-expert", "medium-replay"};
    return p;
}

struct ExperimentConfig {
    std::string name = "experiment";

    // environment: gridN, gridWxH, garnetN, garnetNxA or file:path
    std::string env = "grid5";
    double slip = 0.1;
    double goal_reward = 1.0;
    double step_penalty = -0.01;
    double discount = 0.99;
    std::uint64_t env_seed = 0;

    std::string behavior = "medium";

    // dataset
    std::size_t pairs = 500;
    std::size_t clip_length = 20;
    std::string link = "sigmoid";
    double link_slope = 1.0;
    double link_offset = 0.5;
    /// Overlap structure; multiplier 0 disables it.
    double overlap_fraction = 0.0;
    std::size_t overlap_multiplier = 0;
    std::size_t labels_per_pair = 1;
    /// Use this dataset for every seed instead of generating one.
    std::string data_path;

    std::vector<std::string> methods{"oracle", "brl", "rm"};
    std::vector<std::string> learners{"pessimistic_fqi"};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

    // reward model baseline
    std::string rm_features = "tabular";
    double rm_learning_rate = 1.0;
    std::size_t rm_epochs = 300;

    // learners
    double alpha = 1.0;
    double lambda = 1.0;
    std::size_t iterations = 2000;
    double pb_learning_rate = 0.5;
    std::size_t pb_iterations = 300;

    double multilabel_lambda = 1e-6;

    std::string output_dir = "results";
    bool save_artifacts = true;
    std::size_t jobs = 1;

    void validate() const {
        if (seeds.empty()) throw ParameterError("seed list is empty");
        if (methods.empty()) throw ParameterError("method list is empty");
        if (learners.empty()) throw ParameterError("learner list is empty");
        for (const auto& m : methods)
            if (std::find(labeling_methods().begin(), labeling_methods().end(), m) == labeling_methods().end())
                throw ParameterError("unknown labeling method '" + m + "'");
        for (const auto& l : learners) algorithm_from_name(l);
        if (data_path.empty() &&
            std::find(behavior_presets().begin(), behavior_presets().end(), behavior) == behavior_presets().end())
            throw ParameterError("unknown behaviour preset '" + behavior + "'");
        if (pairs == 0 || clip_length == 0) throw ParameterError("pairs and clip_length must be >= 1");
        if (labels_per_pair == 0) throw ParameterError("labels_per_pair must be >= 1");
        if (overlap_multiplier == 1) throw ParameterError("overlap multiplier must be 0 (off) or >= 2");
        if (overlap_multiplier > 0 && labels_per_pair > 1)
            throw ParameterError("overlap and multi-label datasets cannot be combined");
        if (rm_features != "tabular" && rm_features != "coordinates")
            throw ParameterError("rm_features must be tabular or coordinates");
        if (jobs == 0) throw ParameterError("jobs must be >= 1");
        link_from_name(link, link_slope, link_offset);
    }
};

/// Everything that influences a row's numbers except the seed.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    return {{"env", c.env},
            {"slip", c.slip},
            {"goal_reward", c.goal_reward},
            {"step_penalty", c.step_penalty},
            {"discount", c.discount},
            {"env_seed", c.env_seed},
            {"behavior", c.behavior},
            {"pairs", c.pairs},
            {"clip_length", c.clip_length},
            {"link", c.link},
            {"link_slope", c.link_slope},
            {"link_offset", c.link_offset},
            {"overlap_fraction", c.overlap_fraction},
            {"overlap_multiplier", c.overlap_multiplier},
            {"labels_per_pair", c.labels_per_pair},
            {"data_path", c.data_path},
            {"methods", c.methods},
            {"learners", c.learners},
            {"rm_features", c.rm_features},
            {"rm_learning_rate", c.rm_learning_rate},
            {"rm_epochs", c.rm_epochs},
            {"alpha", c.alpha},
            {"lambda", c.lambda},
            {"iterations", c.iterations},
            {"pb_learning_rate", c.pb_learning_rate},
            {"pb_iterations", c.pb_iterations},
            {"multilabel_lambda", c.multilabel_lambda}};
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(config_to_json(c).dump())); }

inline std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParameterError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return hex64(fnv1a(ss.str()));
}

// --------------------------------------------------------------------------
// Building blocks

inline Mdp make_environment(const ExperimentConfig& c) {
    const std::string& e = c.env;
    if (e.rfind("file:", 0) == 0) return load_mdp(e.substr(5));
    auto dims = [&](std::size_t prefix) -> std::pair<std::size_t, std::size_t> {
        const std::string rest = e.substr(prefix);
        std::size_t a = 0, b = 0;
        char x = 0;
        std::istringstream in(rest);
        if (!(in >> a)) throw ParameterError("bad environment spec '" + e + "'");
        if (in >> x) {
            if (x != 'x' || !(in >> b)) throw ParameterError("bad environment spec '" + e + "'");
        }
        std::string tail;
        if (in >> tail) throw ParameterError("bad environment spec '" + e + "'");
        return {a, b};
    };
    if (e.rfind("grid", 0) == 0) {
        auto [w, h] = dims(4);
        if (h == 0) h = w;
        return make_gridworld(GridworldSpec{w, h, c.goal_reward, c.step_penalty, c.slip, c.discount}, c.env_seed);
    }
    if (e.rfind("garnet", 0) == 0) {
        auto [s, a] = dims(6);
        if (a == 0) a = 4;
        return make_garnet(s, a, 3, c.env_seed, c.discount);
    }
    throw ParameterError("unknown environment '" + e + "' (expected gridN, gridWxH, garnetN, garnetNxA or file:path)");
}

inline LinkFunction config_link(const ExperimentConfig& c) { return link_from_name(c.link, c.link_slope, c.link_offset); }

/// The dataset a seed uses; identical to `gen-data` with the same flags.
inline PreferenceDataset generate_for_seed(const ExperimentConfig& c, const Mdp& mdp, const BehaviorMix& behavior,
                                           std::uint64_t seed) {
    const auto link = config_link(c);
    if (c.overlap_multiplier >= 2)
        return generate_overlap_dataset(mdp, behavior, c.pairs, c.overlap_fraction, c.overlap_multiplier,
                                        c.clip_length, link, seed);
    return generate_multilabel_dataset(mdp, behavior, c.pairs, c.labels_per_pair, c.clip_length, link, seed);
}

/// Each step carries the environment's reward; majority clip is chosen.
inline RewardLabeledDataset oracle_label(const Mdp& mdp, const PreferenceDataset& ds) {
    RewardLabeledDataset out;
    for (const auto& p : ds.pairs) {
        const bool first = p.count(1) >= p.count(2);
        for (int side = 0; side < 2; ++side) {
            const auto& clip = side == 0 ? p.clip_1 : p.clip_2;
            const Side tag = (side == 0) == first ? Side::chosen : Side::rejected;
            for (std::size_t t = 0; t < clip.steps.size(); ++t) {
                const auto& st = clip.steps[t];
                out.tuples.push_back({st.s, st.a, mdp.reward(st.s, st.a), st.s2});
                out.provenance.push_back({p.pair_id, tag, t});
            }
        }
    }
    return out;
}

inline ParametricRewardModel train_reward_model(const ExperimentConfig& c, const Mdp& mdp, const PreferenceDataset& ds,
                                                std::uint64_t seed) {
    FeatureMap features = c.rm_features == "coordinates" ? FeatureMap::coordinates(mdp)
                                                         : FeatureMap::tabular(mdp.state_count(), mdp.action_count());
    TrainConfig tc;
    tc.learning_rate = c.rm_learning_rate;
    tc.epochs = c.rm_epochs;
    tc.seed = mix_seed(seed, {0x7e3dULL});
    tc.objective = TrainConfig::Objective::preference_F;
    tc.F = LinkLossFunction::sigmoid_nll(c.link == "sigmoid" ? c.link_slope : 1.0);
    return train(ParametricRewardModel(std::move(features)), ds, tc).model;
}

inline RewardLabeledDataset label_dataset(const std::string& method, const ExperimentConfig& c, const Mdp& mdp,
                                          const PreferenceDataset& ds, std::uint64_t seed) {
    if (method == "brl") return binary_label(ds);
    if (method == "multilabel") return multilabel_label(ds, config_link(c), c.multilabel_lambda);
    if (method == "rm") return label_with_model(train_reward_model(c, mdp, ds, seed), ds);
    if (method == "oracle") return oracle_label(mdp, ds);
    throw ParameterError("unknown labeling method '" + method + "'");
}

inline LearnerConfig learner_config(const ExperimentConfig& c, const std::string& learner, std::uint64_t seed) {
    LearnerConfig lc;
    lc.algorithm = algorithm_from_name(learner);
    lc.alpha = c.alpha;
    lc.lambda = c.lambda;
    lc.seed = seed;
    if (lc.algorithm == LearnerConfig::Algorithm::preference_bellman) {
        lc.iterations = c.pb_iterations;
        lc.learning_rate = c.pb_learning_rate;
        lc.F = LinkLossFunction::sigmoid_nll(c.link == "sigmoid" ? c.link_slope : 1.0);
    } else {
        lc.iterations = c.iterations;
    }
    return lc;
}

// --------------------------------------------------------------------------
// Results

struct ResultRow {
    std::string experiment;
    std::string method;
    std::string learner;
    std::uint64_t seed = 0;
    double fraction = 1.0;
    std::size_t dataset_size = 0;
    double normalized_score = std::nan("");
    double mean_return = std::nan("");
    /// NaN for oracle rows.
    double reward_gap = std::nan("");
    double wall_time = 0.0;
    std::string config_hash;
    std::string error;

    bool ok() const { return error.empty(); }
};

inline const char* kResultsHeader =
    "experiment,method,learner,seed,fraction,dataset_size,normalized_score,mean_return,reward_gap,config_hash,error";

namespace detail {

inline std::string fmt(double v, int digits = 6) {
    if (!std::isfinite(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch == '\n' ? ' ' : ch;
    }
    return out + '"';
}

} // namespace detail

/// Wall time is excluded so the file is byte-reproducible.
inline std::string result_csv_line(const ResultRow& r) {
    std::ostringstream out;
    out << detail::csv_field(r.experiment) << ',' << r.method << ',' << r.learner << ',' << r.seed << ','
        << detail::fmt(r.fraction, 4) << ',' << r.dataset_size << ',' << detail::fmt(r.normalized_score) << ','
        << detail::fmt(r.mean_return) << ',' << detail::fmt(r.reward_gap) << ',' << r.config_hash << ','
        << detail::csv_field(r.error);
    return out.str();
}

struct SummaryRow {
    std::string experiment, method, learner;
    double fraction = 1.0;
    std::size_t runs = 0, failed = 0;
    double score_mean = std::nan(""), score_std = std::nan("");
    double gap_mean = std::nan(""), gap_std = std::nan("");

    /// "75.93 ± 3.64".
    std::string score_text() const {
        if (!std::isfinite(score_mean)) return "";
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f ± %.2f", score_mean, std::isfinite(score_std) ? score_std : 0.0);
        return buf;
    }
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {std::nan(""), std::nan("")};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

} // namespace detail

/// One row per (method, learner, fraction), in first-appearance order;
/// std is the sample standard deviation over successful seeds.
inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
    std::vector<SummaryRow> out;
    std::vector<std::vector<double>> scores, gaps;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) {
            return s.experiment == r.experiment && s.method == r.method && s.learner == r.learner &&
                   s.fraction == r.fraction;
        });
        std::size_t i = static_cast<std::size_t>(it - out.begin());
        if (it == out.end()) {
            out.push_back({r.experiment, r.method, r.learner, r.fraction});
            scores.emplace_back();
            gaps.emplace_back();
        }
        ++out[i].runs;
        if (!r.ok()) {
            ++out[i].failed;
            continue;
        }
        scores[i].push_back(r.normalized_score);
        if (std::isfinite(r.reward_gap)) gaps[i].push_back(r.reward_gap);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::tie(out[i].score_mean, out[i].score_std) = detail::mean_std(scores[i]);
        std::tie(out[i].gap_mean, out[i].gap_std) = detail::mean_std(gaps[i]);
    }
    return out;
}

inline void write_summary(const std::vector<SummaryRow>& rows, std::ostream& out) {
    out << "experiment,method,learner,fraction,runs,failed,score_mean,score_std,score,reward_gap_mean,reward_gap_std\n";
    for (const auto& s : rows)
        out << detail::csv_field(s.experiment) << ',' << s.method << ',' << s.learner << ','
            << detail::fmt(s.fraction, 4) << ',' << s.runs << ',' << s.failed << ',' << detail::fmt(s.score_mean)
            << ',' << detail::fmt(s.score_std) << ',' << s.score_text() << ',' << detail::fmt(s.gap_mean) << ','
            << detail::fmt(s.gap_std) << '\n';
}

/// Serialises rows from concurrent tasks: each task submits its rows under
/// its index and they reach the stream in index order.
class OrderedAppender {
public:
    OrderedAppender(std::ostream* results, std::ostream* timings) : results_(results), timings_(timings) {}

    void submit(std::size_t index, std::vector<ResultRow> rows) {
        std::lock_guard lock(mutex_);
        pending_[index] = std::move(rows);
        while (!pending_.empty() && pending_.begin()->first == next_) {
            for (auto& r : pending_.begin()->second) {
                if (results_) *results_ << result_csv_line(r) << '\n';
                if (timings_)
                    *timings_ << r.method << ',' << r.learner << ',' << r.seed << ',' << detail::fmt(r.fraction, 4)
                              << ',' << detail::fmt(r.wall_time, 4) << '\n';
                all_.push_back(std::move(r));
            }
            if (results_) results_->flush();
            pending_.erase(pending_.begin());
            ++next_;
        }
    }

    std::vector<ResultRow> take() {
        std::lock_guard lock(mutex_);
        return std::move(all_);
    }

private:
    std::mutex mutex_;
    std::ostream* results_;
    std::ostream* timings_;
    std::map<std::size_t, std::vector<ResultRow>> pending_;
    std::size_t next_ = 0;
    std::vector<ResultRow> all_;
};

// --------------------------------------------------------------------------
// Pipeline

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::vector<SummaryRow> summary;
    std::string config_hash;
    std::filesystem::path output_dir;
};

namespace detail {

inline std::string fraction_tag(double f) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", f);
    return buf;
}

struct Context {
    const ExperimentConfig& cfg;
    const Mdp& mdp;
    const BehaviorMix* behavior;  // null when data comes from a file
    const PreferenceDataset* fixed_data;
    ScoreBaselines baselines;
    std::string hash;
    std::filesystem::path artifacts;  // empty: do not save
};

inline std::vector<ResultRow> run_task(const Context& ctx, std::uint64_t seed, double fraction) {
    const auto& c = ctx.cfg;
    using clock = std::chrono::steady_clock;
    std::vector<ResultRow> rows;
    auto base_row = [&](const std::string& method, const std::string& learner) {
        ResultRow r;
        r.experiment = c.name;
        r.method = method;
        r.learner = learner;
        r.seed = seed;
        r.fraction = fraction;
        r.config_hash = ctx.hash;
        return r;
    };
    const std::string stem = "seed" + std::to_string(seed) + (fraction == 1.0 ? "" : "_frac" + fraction_tag(fraction));

    PreferenceDataset ds;
    try {
        ds = ctx.fixed_data ? *ctx.fixed_data : generate_for_seed(c, ctx.mdp, *ctx.behavior, seed);
        if (fraction != 1.0) ds = subsample_pairs(ds, fraction, mix_seed(seed, {0xf4acULL}));
        if (!ctx.artifacts.empty()) save_dataset(ds, (ctx.artifacts / ("dataset_" + stem + ".jsonl")).string());
    } catch (const std::exception& e) {
        for (const auto& m : c.methods)
            for (const auto& l : c.learners) {
                auto r = base_row(m, l);
                r.error = std::string("data: ") + e.what();
                rows.push_back(std::move(r));
            }
        return rows;
    }
    const TaskShape shape = TaskShape::of(ctx.mdp);

    for (const auto& method : c.methods) {
        const auto t0 = clock::now();
        std::optional<RewardLabeledDataset> labeled;
        std::string label_error;
        double gap = std::nan("");
        try {
            labeled = label_dataset(method, c, ctx.mdp, ds, seed);
            if (method != "oracle") gap = reward_gap(*labeled).gap;
            if (!ctx.artifacts.empty())
                save_labeled(*labeled, (ctx.artifacts / ("labels_" + method + "_" + stem + ".jsonl")).string());
        } catch (const std::exception& e) {
            label_error = std::string("label: ") + e.what();
        }
        const double label_time = std::chrono::duration<double>(clock::now() - t0).count();

        for (const auto& learner : c.learners) {
            const auto lc = learner_config(c, learner, seed);
            const bool pref_learner = lc.algorithm == LearnerConfig::Algorithm::preference_bellman;
            // The preference learner reads pairs directly; only the BRL and
            // oracle rows are meaningful for it.
            if (pref_learner && method != "brl" && method != "oracle") continue;
            auto row = base_row(method, learner);
            row.dataset_size = ds.size();
            row.reward_gap = gap;
            const auto t1 = clock::now();
            if (!labeled) {
                row.error = label_error;
            } else {
                try {
                    Policy pi = method == "oracle" ? fit_oracle(ctx.mdp, *labeled, lc)
                                : pref_learner     ? fit_preference_bellman(ds, shape, lc)
                                                   : fit(*labeled, shape, lc);
                    const auto rep = evaluate_policy(ctx.mdp, pi, ctx.baselines);
                    row.normalized_score = rep.normalized_score;
                    row.mean_return = rep.mean_return;
                    if (!ctx.artifacts.empty()) {
                        std::ofstream out(ctx.artifacts / ("policy_" + method + "_" + learner + "_" + stem + ".json"),
                                          std::ios::binary);
                        out << policy_to_json(pi).dump() << '\n';
                    }
                } catch (const std::exception& e) {
                    row.error = std::string("fit: ") + e.what();
                }
            }
            row.wall_time = label_time + std::chrono::duration<double>(clock::now() - t1).count();
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

} // namespace detail

/// Runs every (fraction, seed) task. Writes results.csv, timings.csv,
/// summary.csv and config.json under cfg.output_dir when `write` is set,
/// plus per-seed datasets, labels and policies if cfg.save_artifacts.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::vector<double>& fractions = {1.0},
                                       bool write = true) {
    cfg.validate();
    if (fractions.empty()) throw ParameterError("fraction list is empty");
    for (double f : fractions)
        if (!(f > 0.0 && f <= 1.0)) throw ParameterError("fractions must lie in (0,1]");

    const Mdp mdp = make_environment(cfg);
    std::optional<PreferenceDataset> fixed;
    std::optional<BehaviorMix> behavior;
    if (!cfg.data_path.empty()) {
        fixed = load_dataset(cfg.data_path);
        for (const auto& p : fixed->pairs)
            for (const auto* clip : {&p.clip_1, &p.clip_2})
                for (const auto& st : clip->steps)
                    if (st.s >= mdp.state_count() || st.s2 >= mdp.state_count() || st.a >= mdp.action_count())
                        throw ValidationError("dataset pair " + std::to_string(p.pair_id) +
                                              " does not fit the environment");
    } else {
        behavior = make_behavior(mdp, cfg.behavior);
    }

    ExperimentResult result;
    result.config_hash = config_hash(cfg);
    result.output_dir = cfg.output_dir;

    std::ofstream results_file, timings_file;
    std::filesystem::path artifacts;
    if (write) {
        std::filesystem::create_directories(result.output_dir);
        results_file.open(result.output_dir / "results.csv", std::ios::binary);
        timings_file.open(result.output_dir / "timings.csv", std::ios::binary);
        if (!results_file || !timings_file) throw ParameterError("cannot write to " + result.output_dir.string());
        results_file << kResultsHeader << '\n';
        timings_file << "method,learner,seed,fraction,wall_time_s\n";
        nlohmann::json meta = config_to_json(cfg);
        meta["name"] = cfg.name;
        meta["seeds"] = cfg.seeds;
        meta["fractions"] = fractions;
        meta["config_hash"] = result.config_hash;
        std::ofstream(result.output_dir / "config.json", std::ios::binary) << meta.dump(2) << '\n';
        if (cfg.save_artifacts) {
            artifacts = result.output_dir / "artifacts";
            std::filesystem::create_directories(artifacts);
        }
    }

    const detail::Context ctx{cfg,         mdp, behavior ? &*behavior : nullptr, fixed ? &*fixed : nullptr,
                              compute_baselines(mdp), result.config_hash, artifacts};

    struct Task {
        std::uint64_t seed;
        double fraction;
    };
    std::vector<Task> tasks;
    for (double f : fractions)
        for (auto s : cfg.seeds) tasks.push_back({s, f});

    OrderedAppender appender(write ? &results_file : nullptr, write ? &timings_file : nullptr);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++)
            appender.submit(i, detail::run_task(ctx, tasks[i].seed, tasks[i].fraction));
    };
    const std::size_t workers = std::min(cfg.jobs, tasks.size());
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    result.rows = appender.take();
    result.summary = summarize(result.rows);
    if (write) {
        std::ofstream summary(result.output_dir / "summary.csv", std::ios::binary);
        write_summary(result.summary, summary);
    }
    return result;
}

/// Mean normalized score of the successful rows for (method, learner, fraction).
inline double mean_score(const std::vector<ResultRow>& rows, const std::string& method, const std::string& learner,
                         double fraction = 1.0) {
    std::vector<double> v;
    for (const auto& r : rows)
        if (r.ok() && r.method == method && r.learner == learner && r.fraction == fraction)
            v.push_back(r.normalized_score);
    return detail::mean_std(v).first;
}

struct OverlapStats {
    std::size_t pairs = 0;
    std::size_t clips = 0;
    std::size_t reused_clips = 0;
    std::size_t pairs_with_reused_clip = 0;
    bool no_overlap = false;
};

inline OverlapStats overlap_stats(const PreferenceDataset& ds) {
    OverlapStats s;
    s.pairs = ds.size();
    s.clips = ds.overlap_manifest.size();
    for (const auto& [id, n] : ds.overlap_manifest)
        if (n > 1) ++s.reused_clips;
    for (const auto& p : ds.pairs)
        if (ds.overlap_manifest.at(p.clip_1.id) > 1 || ds.overlap_manifest.at(p.clip_2.id) > 1)
            ++s.pairs_with_reused_clip;
    s.no_overlap = ds.no_overlap;
    return s;
}

} // namespace brl
