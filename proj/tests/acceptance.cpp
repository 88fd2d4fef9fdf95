// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <unistd.h>

#include "brl/brl.hpp"

using namespace brl;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 20240;

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail, double seconds) {
    std::printf("[%s] criterion %d: %s | %s | %.1fs\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str(),
                seconds);
    std::fflush(stdout);
    failures += !ok;
}

// budget_s <= 0 means no time limit.
template <class F>
void run(int id, const std::string& title, double budget_s, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
        ok = body(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget_s > 0.0 && dt > budget_s) {
        ok = false;
        detail += ", over the " + std::to_string(static_cast<int>(budget_s)) + "s budget";
    }
    report(id, title, ok, detail, dt);
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::size_t jobs() { return std::max(1u, std::min(8u, std::thread::hardware_concurrency())); }

const SummaryRow& summary_for(const ExperimentResult& r, const std::string& method, double fraction = 1.0) {
    for (const auto& s : r.summary)
        if (s.method == method && std::abs(s.fraction - fraction) < 1e-12) return s;
    throw std::runtime_error("no summary row for " + method);
}

// Independent minimiser of |p - f(sum r1 - sum r2)| + lambda |r|^2 for one pair.
// For a fixed gap g the smallest norm is g^2 / (2T) (uniform spread), so the
// problem reduces to a scalar search over g in [-2T, 2T]: a dense scan
// followed by golden-section refinement around the best scan point.
double scalar_minimum(const LinkFunction& link, double pbar, double lambda, std::size_t T) {
    const double twoT = 2.0 * static_cast<double>(T);
    auto h = [&](double g) { return std::abs(pbar - link(g)) + lambda * g * g / twoT; };
    const int n = 200000;
    const double dx = 2.0 * twoT / n;
    double best_g = -twoT, best = h(-twoT);
    for (int i = 1; i <= n; ++i) {
        const double g = -twoT + dx * i;
        const double v = h(g);
        if (v < best) {
            best = v;
            best_g = g;
        }
    }
    double lo = std::max(-twoT, best_g - dx), hi = std::min(twoT, best_g + dx);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
    double f1 = h(x1), f2 = h(x2);
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = h(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = h(x2);
        }
    }
    return std::min({best, f1, f2, h(lo), h(hi)});
}

PreferencePair random_multilabel_pair(std::mt19937_64& rng, std::uint64_t id, std::size_t T, std::size_t n,
                                      std::size_t ones) {
    PreferencePair p;
    p.pair_id = id;
    p.clip_1.id = 2 * id;
    p.clip_2.id = 2 * id + 1;
    for (std::size_t t = 0; t < T; ++t) {
        p.clip_1.steps.push_back({t, 0, t + 1});
        p.clip_2.steps.push_back({100 + t, 0, 101 + t});
    }
    p.labels.assign(n, 2);
    std::fill_n(p.labels.begin(), ones, 1);
    std::shuffle(p.labels.begin(), p.labels.end(), rng);
    return p;
}

PreferenceDataset single(PreferencePair p, std::size_t T) {
    PreferenceDataset ds;
    ds.clip_length = T;
    ds.pairs.push_back(std::move(p));
    ds.refresh_metadata();
    return ds;
}

std::map<std::string, std::string> tree_hashes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), root).generic_string();
        if (rel == "timings.csv") continue;  // wall-clock times only
        out[rel] = file_hash(e.path());
    }
    return out;
}

ExperimentConfig grid_config() {
    ExperimentConfig c;
    c.name = "acceptance";
    c.env = "grid5";
    c.behavior = "medium";
    c.pairs = 500;
    c.clip_length = 20;
    c.learners = {"pessimistic_fqi"};
    c.seeds = {0, 1, 2, 3, 4};
    c.save_artifacts = false;
    c.jobs = jobs();
    return c;
}

} // namespace

int main() {
    const auto start = std::chrono::steady_clock::now();

    run(1, "binary labels optimal on 200 no-overlap micro-datasets", 60, [](std::string& d) {
        const auto r = check_binary_label_optimality(200, kSeed);
        d = "instances " + std::to_string(r.instances_run) + ", max violation " + fmt_g(r.max_violation);
        return r.instances_run == 200 && r.max_violation == 0.0;
    });

    run(2, "label and preference gradients aligned (100 instances, reward and Bellman)", 120, [](std::string& d) {
        bool ok = true;
        for (bool bellman : {false, true}) {
            const auto pos = check_gradient_direction(100, kSeed, bellman);
            const auto neg = check_gradient_direction(100, kSeed, bellman, {LinkLossFunction::increasing()}, true);
            const bool this_ok = pos.analytic.instances_run == 100 && pos.analytic.stat_min >= 1.0 - 1e-6 &&
                                 pos.finite_difference.stat_min >= 1.0 - 1e-3 && neg.analytic.stat_max <= -1.0 + 1e-6;
            ok = ok && this_ok;
            d += std::string(bellman ? "bellman" : "reward") + ": min cos " + fmt_g(pos.analytic.stat_min) +
                 ", fd min cos " + fmt_g(pos.finite_difference.stat_min) + ", control max cos " +
                 fmt_g(neg.analytic.stat_max) + (bellman ? "" : "; ");
        }
        return ok;
    });

    run(3, "label loss affine in preference loss for linear F (100 x 20 points)", 60, [](std::string& d) {
        bool ok = true;
        for (bool bellman : {false, true}) {
            const auto pos = check_affine_relation(100, kSeed, bellman, LinkLossFunction::linear_one_minus(), 20);
            const auto neg =
                check_affine_relation(100, kSeed, bellman, LinkLossFunction::sigmoid_nll(), 20, true);
            ok = ok && pos.instances_run == 100 && pos.max_violation <= 1e-9 && neg.max_violation > 1e-3;
            d += std::string(bellman ? "bellman" : "reward") + ": residual " + fmt_g(pos.max_violation) +
                 ", sigmoid control " + fmt_g(neg.max_violation) + (bellman ? "" : "; ");
        }
        return ok;
    });

    run(4, "analytic gradients of the four losses match central differences", 0, [](std::string& d) {
        bool ok = true;
        for (const auto& r : check_gradients(20, kSeed, 1e-5, 1e-4)) {
            ok = ok && r.pass && r.instances_run == 20;
            d += r.name + " " + fmt_g(r.max_violation) + " ";
        }
        return ok;
    });

    run(5, "BRL competitive on the 5x5 stochastic grid", 600, [](std::string& d) {
        auto c = grid_config();
        c.methods = {"oracle", "brl", "rm"};
        const auto r = run_experiment(c, {1.0}, false);
        const double o = summary_for(r, "oracle").score_mean, b = summary_for(r, "brl").score_mean,
                     m = summary_for(r, "rm").score_mean;
        d = "oracle " + fixed(o, 2) + ", brl " + fixed(b, 2) + ", rm " + fixed(m, 2);
        return o >= b && b >= m - 5.0 && b >= 50.0;
    });

    run(6, "BRL reward gap under overlap", 300, [](std::string& d) {
        ExperimentConfig c;
        c.name = "acceptance_overlap";
        c.env = "garnet20000";
        c.behavior = "random";
        c.pairs = 200;
        c.clip_length = 20;
        c.overlap_fraction = 0.2;
        c.overlap_multiplier = 4;
        c.methods = {"brl", "rm"};
        c.learners = {"pessimistic_fqi"};
        c.seeds = {0, 1, 2, 3, 4};
        c.save_artifacts = false;
        c.jobs = jobs();
        const auto r = run_experiment(c, {1.0}, false);
        const double bg = summary_for(r, "brl").gap_mean, rg = summary_for(r, "rm").gap_mean;

        // Same setting without overlap: every chosen step is +1, every rejected -1.
        const Mdp mdp = make_environment(c);
        const auto behavior = make_behavior(mdp, c.behavior);
        double worst = 0.0;
        bool all_clean = true;
        for (auto s : c.seeds) {
            const auto ds = generate_dataset(mdp, behavior, c.pairs, c.clip_length, config_link(c), s);
            all_clean = all_clean && ds.no_overlap;
            worst = std::max(worst, std::abs(reward_gap(binary_label(ds)).gap - 2.0));
        }
        d = "brl gap " + fixed(bg, 4) + ", rm gap " + fixed(rg, 4) + ", no-overlap gap deviation " + fmt_g(worst);
        return bg > rg && bg > 1.0 && bg < 2.0 && all_clean && worst == 0.0;
    });

    run(7, "BRL score non-decreasing in dataset fraction", 0, [](std::string& d) {
        auto c = grid_config();
        c.methods = {"brl"};
        const std::vector<double> fr{0.1, 0.5, 1.0};
        const auto r = run_experiment(c, fr, false);
        std::vector<double> means;
        for (double f : fr) means.push_back(summary_for(r, "brl", f).score_mean);
        int mean_inversions = 0;
        for (std::size_t i = 1; i < means.size(); ++i) mean_inversions += means[i] < means[i - 1];
        std::map<std::uint64_t, std::map<double, double>> by_seed;
        for (const auto& row : r.rows) by_seed[row.seed][row.fraction] = row.normalized_score;
        int seed_inversions = 0;
        for (auto& [s, m] : by_seed)
            for (std::size_t i = 1; i < fr.size(); ++i) seed_inversions += m[fr[i]] < m[fr[i - 1]];
        d = "means " + fixed(means[0], 2) + " / " + fixed(means[1], 2) + " / " + fixed(means[2], 2) +
            ", mean inversions " + std::to_string(mean_inversions) + ", per-seed inversions " +
            std::to_string(seed_inversions);
        return mean_inversions <= 1;
    });

    run(8, "multi-label closed form matches a numeric minimiser", 0, [](std::string& d) {
        std::mt19937_64 rng(kSeed);
        const double lambda = 1e-6;
        double worst_obj = 0.0;
        for (std::uint64_t i = 0; i < 100; ++i) {
            const std::size_t T = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
            const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
            const std::size_t ones = std::uniform_int_distribution<std::size_t>(0, n)(rng);
            const auto link = i % 4 == 3 ? LinkFunction::make_linear(std::uniform_real_distribution<>(0.02, 0.5)(rng))
                                         : LinkFunction::make_sigmoid();
            const auto ds = single(random_multilabel_pair(rng, i, T, n, ones), T);
            const auto lab = multilabel_label(ds, link, lambda);

            const double nd = static_cast<double>(n);
            const double delta = std::min(1.0 / (2.0 * nd), 0.25);
            const double pbar = std::clamp(static_cast<double>(ones) / nd, delta, 1.0 - delta);
            double gap = 0.0, norm = 0.0;
            for (std::size_t j = 0; j < 2 * T; ++j) {
                const double r = lab.tuples[j].r;
                gap += j < T ? r : -r;
                norm += r * r;
            }
            const double closed = std::abs(pbar - link(gap)) + lambda * norm;
            worst_obj = std::max(worst_obj, std::abs(closed - scalar_minimum(link, pbar, lambda, T)));
        }

        bool zeros = true;
        for (std::uint64_t i = 0; i < 20; ++i) {
            const std::size_t T = 1 + i % 20, n = 2 * (1 + i % 10);
            const auto link = i % 2 ? LinkFunction::make_linear(0.1) : LinkFunction::make_sigmoid();
            for (const auto& t : multilabel_label(single(random_multilabel_pair(rng, i, T, n, n / 2), T), link).tuples)
                zeros = zeros && t.r == 0.0;
        }
        d = "max objective gap " + fmt_g(worst_obj) + ", even splits give zero rewards: " + (zeros ? "yes" : "no");
        return worst_obj <= 1e-6 && zeros;
    });

    run(9, "experiment output byte-reproducible across runs", 0, [](std::string& d) {
        const fs::path root = fs::temp_directory_path() / ("brl_acceptance_" + std::to_string(::getpid()));
        fs::remove_all(root);
        auto c = grid_config();
        c.methods = {"oracle", "brl", "rm", "multilabel"};
        c.seeds = {0, 1, 2};
        c.save_artifacts = true;
        c.output_dir = (root / "a").string();
        c.jobs = jobs();
        run_experiment(c, {0.5, 1.0});
        c.output_dir = (root / "b").string();
        c.jobs = 1;
        run_experiment(c, {0.5, 1.0});
        const auto a = tree_hashes(root / "a"), b = tree_hashes(root / "b");
        fs::remove_all(root);
        std::size_t differing = 0;
        for (const auto& [k, v] : a) differing += !b.contains(k) || b.at(k) != v;
        d = std::to_string(a.size()) + " files compared, " + std::to_string(differing) + " differ";
        return a.size() == b.size() && differing == 0 && a.contains("results.csv") && a.contains("summary.csv");
    });

    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%d of 9 criteria failed | total %.1fs\n", failures, total);
    return failures == 0 ? 0 : 1;
}
