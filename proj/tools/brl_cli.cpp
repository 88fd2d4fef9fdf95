// brl: preference data generation, reward labelling, offline RL runs and
// numerical verification from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 verification failure.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "brl/brl.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerification = 3;

/// Relative paths land under $BRL_OUTPUT_ROOT when it is set.
fs::path resolve_output(const std::string& path) {
    const char* root = std::getenv("BRL_OUTPUT_ROOT");
    fs::path p(path);
    if (root && *root && p.is_relative()) return fs::path(root) / p;
    return p;
}

void parse_overlap(const std::string& text, brl::ExperimentConfig& cfg) {
    if (text.empty() || text == "none") {
        cfg.overlap_fraction = 0.0;
        cfg.overlap_multiplier = 0;
        return;
    }
    const auto x = text.find('x');
    if (x == std::string::npos) throw CLI::ValidationError("--overlap", "expected FRACTIONxMULTIPLIER, e.g. 0.2x4");
    try {
        cfg.overlap_fraction = std::stod(text.substr(0, x));
        cfg.overlap_multiplier = std::stoul(text.substr(x + 1));
    } catch (const std::exception&) {
        throw CLI::ValidationError("--overlap", "expected FRACTIONxMULTIPLIER, e.g. 0.2x4");
    }
    if (cfg.overlap_multiplier < 2) throw CLI::ValidationError("--overlap", "multiplier must be >= 2");
}

struct Options {
    std::string config_file;
    brl::ExperimentConfig cfg;
    std::string overlap;
    std::string out;
    std::uint64_t seed = 0;
    std::string method = "brl";
    std::vector<double> fractions{0.1, 0.5, 1.0};
    std::size_t instances = 100;
    bool negative_controls = false;
    /// Set once the inputs are checked; later parameter errors are runtime failures.
    bool validated = false;
};

void add_config_option(CLI::App* app, Options& o) {
    app->add_option("--config", o.config_file, "TOML/INI file of option values (keys as long option names); flags win")
        ->check(CLI::ExistingFile);
}

/// Fills every option of `sub` that the command line left unset from the
/// config file. Keys may sit at top level or in a section named after the
/// subcommand; `_` and `-` are interchangeable.
void apply_config_file(CLI::App* sub, const std::string& path) {
    CLI::ConfigTOML format;
    for (const auto& item : format.from_file(path)) {
        if (item.name == "++" || item.name == "--") continue;  // section markers
        if (!item.parents.empty() && item.parents.front() != sub->get_name()) continue;
        std::string name = item.name;
        std::replace(name.begin(), name.end(), '_', '-');
        CLI::Option* opt = sub->get_option_no_throw("--" + name);
        if (!opt || name == "config") throw CLI::ValidationError("--config", "unknown key '" + item.name + "' in " + path);
        if (opt->count() > 0) continue;
        opt->add_result(item.inputs);
        opt->run_callback();
    }
}

void add_env_options(CLI::App* app, Options& o) {
    auto& c = o.cfg;
    app->add_option("--env", c.env, "gridN, gridWxH, garnetN, garnetNxA or file:PATH")->capture_default_str();
    app->add_option("--slip", c.slip, "gridworld slip probability")->capture_default_str();
    app->add_option("--goal-reward", c.goal_reward, "gridworld goal reward")->capture_default_str();
    app->add_option("--step-penalty", c.step_penalty, "gridworld step reward")->capture_default_str();
    app->add_option("--discount", c.discount, "discount factor")->capture_default_str();
    app->add_option("--env-seed", c.env_seed, "seed for garnet construction")->capture_default_str();
}

void add_data_options(CLI::App* app, Options& o) {
    auto& c = o.cfg;
    app->add_option("--behavior", c.behavior, "optimal, expert, random, medium, medium-expert or medium-replay")
        ->capture_default_str();
    app->add_option("--pairs", c.pairs, "preference pairs per dataset")->capture_default_str();
    app->add_option("--clip-length,-T", c.clip_length, "steps per clip")->capture_default_str();
    app->add_option("--link", c.link, "sigmoid or linear")->capture_default_str();
    app->add_option("--link-slope", c.link_slope, "sigmoid scale or linear slope")->capture_default_str();
    app->add_option("--link-offset", c.link_offset, "linear link offset")->capture_default_str();
    app->add_option("--overlap", o.overlap, "reuse structure FRACTIONxMULTIPLIER, e.g. 0.2x4");
    app->add_option("--labels-per-pair", c.labels_per_pair, "Bernoulli labels per pair")->capture_default_str();
}

void add_label_options(CLI::App* app, Options& o) {
    auto& c = o.cfg;
    app->add_option("--rm-features", c.rm_features, "reward model features: tabular or coordinates")
        ->capture_default_str();
    app->add_option("--rm-lr", c.rm_learning_rate, "reward model learning rate")->capture_default_str();
    app->add_option("--rm-epochs", c.rm_epochs, "reward model epochs")->capture_default_str();
    app->add_option("--multilabel-lambda", c.multilabel_lambda, "multi-label regularisation")->capture_default_str();
}

void add_run_options(CLI::App* app, Options& o) {
    auto& c = o.cfg;
    add_env_options(app, o);
    add_data_options(app, o);
    add_label_options(app, o);
    app->add_option("--name", c.name, "experiment name recorded in every row")->capture_default_str();
    app->add_option("--data", c.data_path, "use this dataset for every seed instead of generating one");
    app->add_option("--methods", c.methods, "labelling methods: oracle, brl, rm, multilabel")
        ->delimiter(',')
        ->capture_default_str();
    app->add_option("--learners", c.learners,
                    "pessimistic_fqi, conservative_q, model_based, preference_bellman")
        ->delimiter(',')
        ->capture_default_str();
    app->add_option("--seeds", c.seeds, "seed list")->delimiter(',')->capture_default_str();
    app->add_option("--alpha", c.alpha, "conservative Q penalty weight")->capture_default_str();
    app->add_option("--lambda", c.lambda, "model-based count penalty weight")->capture_default_str();
    app->add_option("--iterations", c.iterations, "value-iteration sweeps for reward learners")
        ->capture_default_str();
    app->add_option("--pb-lr", c.pb_learning_rate, "preference Bellman learning rate")->capture_default_str();
    app->add_option("--pb-iterations", c.pb_iterations, "preference Bellman gradient steps")->capture_default_str();
    app->add_option("--jobs,-j", c.jobs, "concurrent seed tasks")->capture_default_str();
    app->add_flag("--no-artifacts{false}", c.save_artifacts, "skip per-seed datasets, labels and policies");
    app->add_option("--out,-o", c.output_dir, "output directory")->capture_default_str();
}

void print_summary(const brl::ExperimentResult& r, bool with_fraction) {
    std::printf("%-12s %-20s %s%-18s %-8s %s\n", "method", "learner", with_fraction ? "fraction  " : "", "score",
                "failed", "reward_gap");
    for (const auto& s : r.summary) {
        char frac[16] = "";
        if (with_fraction) std::snprintf(frac, sizeof frac, "%-8.3g  ", s.fraction);
        char gap[32] = "-";
        if (std::isfinite(s.gap_mean)) std::snprintf(gap, sizeof gap, "%.4f", s.gap_mean);
        std::printf("%-12s %-20s %s%-18s %-8zu %s\n", s.method.c_str(), s.learner.c_str(), frac,
                    s.score_text().empty() ? "-" : s.score_text().c_str(), s.failed, gap);
    }
    for (const auto& row : r.rows)
        if (!row.ok())
            std::fprintf(stderr, "failed: %s/%s seed %llu: %s\n", row.method.c_str(), row.learner.c_str(),
                         static_cast<unsigned long long>(row.seed), row.error.c_str());
    std::printf("results: %s\n", (r.output_dir / "results.csv").string().c_str());
}

int cmd_gen_data(Options& o) {
    auto& c = o.cfg;
    c.validate();
    const brl::Mdp mdp = brl::make_environment(c);
    o.validated = true;
    const auto behavior = brl::make_behavior(mdp, c.behavior);
    const auto ds = brl::generate_for_seed(c, mdp, behavior, o.seed);
    const fs::path out = resolve_output(o.out.empty() ? c.output_dir + "/dataset_seed" + std::to_string(o.seed) + ".jsonl"
                                                      : o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    brl::save_dataset(ds, out.string());
    const auto st = brl::overlap_stats(ds);
    std::printf("wrote %s\n", out.string().c_str());
    std::printf("pairs %zu  clips %zu  reused clips %zu  pairs with a reused clip %zu  no-overlap %s\n", st.pairs,
                st.clips, st.reused_clips, st.pairs_with_reused_clip, st.no_overlap ? "yes" : "no");
    return 0;
}

int cmd_label(Options& o) {
    auto& c = o.cfg;
    c.validate();
    const auto ds = brl::load_dataset(c.data_path);
    // Oracle rewards and the reward model's feature map come from the
    // environment; the other methods only read the pairs.
    const bool needs_env = o.method == "oracle" || o.method == "rm";
    const brl::Mdp mdp = needs_env ? brl::make_environment(c) : brl::make_gridworld(2, 1, 0.0, 0.0, 0.0, 0);
    o.validated = true;
    const auto labeled = brl::label_dataset(o.method, c, mdp, ds, o.seed);
    const fs::path out = resolve_output(o.out.empty() ? c.output_dir + "/labels_" + o.method + ".jsonl" : o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    brl::save_labeled(labeled, out.string());
    std::printf("wrote %s (%zu tuples)\n", out.string().c_str(), labeled.tuples.size());
    if (o.method != "oracle") {
        const auto gap = brl::reward_gap(labeled);
        std::printf("mean chosen %.6f  mean rejected %.6f  reward gap %.6f\n", gap.mean_chosen, gap.mean_rejected,
                    gap.gap);
    }
    return 0;
}

int cmd_experiment(Options& o, const std::vector<double>& fractions) {
    o.cfg.output_dir = resolve_output(o.cfg.output_dir).string();
    o.cfg.validate();
    for (double f : fractions)
        if (!(f > 0.0 && f <= 1.0)) throw brl::ParameterError("fractions must lie in (0,1]");
    o.validated = true;
    const auto r = brl::run_experiment(o.cfg, fractions);
    print_summary(r, fractions.size() > 1 || fractions.front() != 1.0);
    return 0;
}

int cmd_verify(Options& o) {
    const auto reports = brl::run_all_checks(o.instances, o.seed, o.negative_controls);
    nlohmann::json j = {{"seed", o.seed}, {"instances", o.instances}, {"checks", nlohmann::json::array()}};
    bool all_expected = true;
    for (const auto& r : reports) {
        j["checks"].push_back(brl::report_to_json(r));
        all_expected = all_expected && r.as_expected();
        std::printf("%-34s %-4s max_violation %.3e  tol %.1e  runs %zu  skipped %zu%s\n", r.name.c_str(),
                    r.pass ? "pass" : "FAIL", r.max_violation, r.tolerance, r.instances_run, r.skipped,
                    r.negative_control ? (r.as_expected() ? "  [control: fails as expected]"
                                                          : "  [control: UNEXPECTEDLY PASSES]")
                                       : "");
    }
    j["all_as_expected"] = all_expected;
    const fs::path out = resolve_output(o.out.empty() ? o.cfg.output_dir + "/verify_report.json" : o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out, std::ios::binary) << j.dump(2) << '\n';
    std::printf("report: %s\n", out.string().c_str());
    return all_expected ? 0 : kExitVerification;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Binary reward labelling lab: preference data, labelling, offline RL and verification"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "generate a preference dataset (JSON Lines)");
    add_config_option(gen, o);
    add_env_options(gen, o);
    add_data_options(gen, o);
    gen->add_option("--seed", o.seed, "generation seed")->capture_default_str();
    gen->add_option("--out,-o", o.out, "dataset path (default <output>/dataset_seed<seed>.jsonl)");
    gen->add_option("--output-dir", o.cfg.output_dir, "default output directory")->capture_default_str();

    auto* label = app.add_subcommand("label", "turn a preference dataset into reward-labelled tuples");
    add_config_option(label, o);
    add_env_options(label, o);
    add_label_options(label, o);
    label->add_option("--data", o.cfg.data_path, "preference dataset")->required();
    label->add_option("--method", o.method, "brl, rm, multilabel or oracle")
        ->check(CLI::IsMember({"brl", "rm", "multilabel", "oracle"}))
        ->capture_default_str();
    label->add_option("--seed", o.seed, "reward model seed")->capture_default_str();
    label->add_option("--out,-o", o.out, "output path (default <output>/labels_<method>.jsonl)");
    label->add_option("--output-dir", o.cfg.output_dir, "default output directory")->capture_default_str();

    auto* run = app.add_subcommand("run", "label, train and evaluate every (method, learner, seed)");
    add_config_option(run, o);
    add_run_options(run, o);

    auto* size = app.add_subcommand("ablate-size", "run the pipeline on subsampled datasets");
    add_config_option(size, o);
    add_run_options(size, o);
    size->add_option("--fractions", o.fractions, "fractions of the pairs to keep, each in (0,1]")
        ->delimiter(',')
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();

    auto* learners = app.add_subcommand("ablate-learner", "compare offline learners on the same labels");
    add_config_option(learners, o);
    add_run_options(learners, o);

    auto* verify = app.add_subcommand("verify", "numerical checks of the label/preference loss equivalences");
    verify->add_option("--seed", o.seed, "master seed")->capture_default_str();
    verify->add_option("--instances", o.instances, "random instances per check")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    verify->add_flag("--negative-controls", o.negative_controls, "also run checks that are expected to fail");
    verify->add_option("--out,-o", o.out, "report path (default <output>/verify_report.json)");
    verify->add_option("--output-dir", o.cfg.output_dir, "default output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
        if (!o.config_file.empty())
            for (auto* sub : app.get_subcommands()) apply_config_file(sub, o.config_file);
        if (!o.overlap.empty()) parse_overlap(o.overlap, o.cfg);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::Error& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen) return cmd_gen_data(o);
        if (*label) return cmd_label(o);
        if (*run) return cmd_experiment(o, {1.0});
        if (*size) {
            if (o.cfg.name == "experiment") o.cfg.name = "ablate-size";
            return cmd_experiment(o, o.fractions);
        }
        if (*learners) {
            if (learners->count("--learners") == 0)
                o.cfg.learners = {"pessimistic_fqi", "conservative_q", "model_based", "preference_bellman"};
            if (o.cfg.name == "experiment") o.cfg.name = "ablate-learner";
            return cmd_experiment(o, {1.0});
        }
        if (*verify) return cmd_verify(o);
    } catch (const brl::ParameterError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return o.validated ? kExitRuntime : kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
