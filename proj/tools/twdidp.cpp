// Command-line front end: simulate synthetic panels, run estimators on CSV
// panels, benchmark estimators against oracle truth, and dump oracle grids.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "twdidp/envsim.hpp"
#include "twdidp/harness.hpp"

namespace fs = std::filesystem;
using namespace twdidp;

namespace {

struct GlobalOpts {
    uint64_t seed = 20240801;
    std::string out_dir = ".";
    int threads = 1;
};

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    out << text;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_grid_csv(const fs::path& path, const Eigen::MatrixXd& grid,
                    const Eigen::MatrixXd* se) {
    std::ofstream out(path);
    out << "i,t,value";
    if (se) out << ",se";
    out << "\n";
    for (Eigen::Index i = 0; i < grid.rows(); ++i) {
        for (Eigen::Index t = 0; t < grid.cols(); ++t) {
            out << (i + 1) << "," << (t + 1) << "," << fmt17(grid(i, t));
            if (se) out << "," << fmt17((*se)(i, t));
            out << "\n";
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Off-policy evaluation for doubly inhomogeneous panel data"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts g;
    app.add_option("--seed", g.seed, "master seed");
    app.add_option("--out-dir", g.out_dir, "output directory");
    app.add_option("--threads", g.threads, "worker threads");

    // ---- simulate ----
    auto* sim = app.add_subcommand("simulate", "generate a synthetic panel CSV");
    std::string sim_preset = "paper-tabular";
    int sim_n = 80, sim_t = 80;
    std::string sim_out = "panel.csv";
    std::string sim_spec_out;
    sim->add_option("--preset", sim_preset, "environment preset name");
    sim->add_option("--n", sim_n, "individuals");
    sim->add_option("--t", sim_t, "time points");
    sim->add_option("--out", sim_out, "output CSV file");
    sim->add_option("--spec-out", sim_spec_out, "also write the materialized spec JSON");

    // ---- estimate ----
    auto* est = app.add_subcommand("estimate", "run an estimator on a CSV panel");
    std::string est_data, est_name = "twdidp-mf";
    std::vector<std::string> est_policies = {"agnostic:0.2,0.8"};
    std::string est_obs;
    int est_actions = 0;
    double est_ridge = 1e-8;
    int est_rollouts = 1000, est_em_iter = 200, est_poly = 3;
    std::string est_solver = "fwl";
    int est_max_stages = 0;
    est->add_option("--data", est_data, "input CSV")->required();
    est->add_option("--estimator", est_name, "estimator name");
    est->add_option("--policy", est_policies,
                    "target policy spec (repeatable; e.g. agnostic:0.2,0.8)");
    est->add_option("--obs", est_obs, "observation kind override: tabular:<S> or continuous:<d>");
    est->add_option("--actions", est_actions, "action count override");
    est->add_option("--ridge", est_ridge, "sieve ridge");
    est->add_option("--solver", est_solver, "fwl or profile");
    est->add_option("--max-stages", est_max_stages, "backward-induction cap (0 = default)");
    est->add_option("--rollouts", est_rollouts, "Monte-Carlo rollouts for model-based runs");
    est->add_option("--em-max-iter", est_em_iter, "EM iteration cap");
    est->add_option("--poly-degree", est_poly, "polynomial basis degree for continuous panels");

    // ---- benchmark ----
    auto* bench = app.add_subcommand("benchmark", "replication study against oracle truth");
    std::string bench_config;
    std::string bench_preset;
    int bench_reps = 0, bench_n = 0, bench_t = 0;
    std::vector<std::string> bench_estimators;
    std::string bench_policy;
    bench->add_option("--config", bench_config, "ExperimentConfig JSON file");
    bench->add_option("--preset", bench_preset, "environment preset override");
    bench->add_option("--reps", bench_reps, "replication count override");
    bench->add_option("--n", bench_n, "individuals override");
    bench->add_option("--t", bench_t, "time points override");
    bench->add_option("--estimators", bench_estimators, "estimator list override");
    bench->add_option("--policy", bench_policy, "target policy override");
    double bench_ridge = -1.0;
    int bench_rollouts = 0, bench_max_stages = 0, bench_em_iter = 0, bench_oracle_reps = 0;
    bench->add_option("--ridge", bench_ridge, "sieve ridge override");
    bench->add_option("--rollouts", bench_rollouts, "rollout budget override");
    bench->add_option("--max-stages", bench_max_stages, "backward-induction cap override");
    bench->add_option("--em-max-iter", bench_em_iter, "EM iteration cap override");
    bench->add_option("--oracle-reps", bench_oracle_reps, "MC-truth replications override");

    // ---- oracle ----
    auto* orc = app.add_subcommand("oracle", "dump an oracle truth grid for a preset");
    std::string orc_preset = "paper-tabular";
    int orc_n = 80, orc_t = 80, orc_reps = 500;
    std::string orc_method = "dp";
    std::string orc_policy = "agnostic:0.2,0.8";
    std::string orc_out = "truth.csv";
    orc->add_option("--preset", orc_preset, "environment preset");
    orc->add_option("--n", orc_n, "individuals");
    orc->add_option("--t", orc_t, "time points");
    orc->add_option("--method", orc_method, "dp or mc");
    orc->add_option("--reps", orc_reps, "mc replications");
    orc->add_option("--policy", orc_policy, "target policy spec");
    orc->add_option("--out", orc_out, "output CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) {
            envsim::EnvSpec spec = envsim::make_preset(sim_preset, sim_n, sim_t, g.seed);
            const TrajectorySet data = envsim::generate(spec);
            const fs::path out = fs::path(g.out_dir) / sim_out;
            fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
            write_trajectory_csv(out.string(), data);
            if (!sim_spec_out.empty())
                envsim::save_envspec((fs::path(g.out_dir) / sim_spec_out).string(), spec);
            std::cout << "wrote " << out.string() << " (" << data.n_individuals << " x "
                      << data.n_timepoints << ")\n";
        } else if (*est) {
            harness::EstimatorOptions opts;
            opts.ridge = est_ridge;
            opts.n_rollouts = est_rollouts;
            opts.em_max_iter = est_em_iter;
            opts.solver = est_solver == "profile" ? model_free::SolverKind::Profile
                                                  : model_free::SolverKind::FWL;
            if (est_max_stages > 0) opts.max_stages = est_max_stages;
            std::optional<ObsKind> kind;
            if (!est_obs.empty()) {
                const auto colon = est_obs.find(':');
                const std::string head = est_obs.substr(0, colon);
                const int arg = colon == std::string::npos
                                    ? 0
                                    : std::stoi(est_obs.substr(colon + 1));
                if (head == "tabular")
                    kind = ObsKind::tabular(arg);
                else if (head == "continuous")
                    kind = ObsKind::continuous(arg);
                else
                    throw ValidationError("--obs must be tabular:<S> or continuous:<d>");
            }
            std::optional<int> actions;
            if (est_actions > 0) actions = est_actions;

            const TrajectorySet data = read_trajectory_csv(est_data, kind, actions);
            // continuous panels default to the polynomial degree flag
            if (!data.obs_kind.is_tabular())
                opts.basis = sieve::BasisSpec::polynomial(
                    std::vector<int>(data.obs_kind.dim, est_poly), false);

            struct Entry {
                std::string policy;
                double eta;
            };
            std::vector<Entry> summary;
            for (size_t pi_idx = 0; pi_idx < est_policies.size(); ++pi_idx) {
                const PolicySpec pspec = PolicySpec::parse(est_policies[pi_idx]);
                const std::string stem =
                    est_name + (est_policies.size() > 1 ? "_p" + std::to_string(pi_idx + 1)
                                                        : "");
                ValueReport report = harness::run_estimator(est_name, data, pspec.make(),
                                                            opts, g.seed);
                report.config_digest = fnv1a_hex(est_name + "|" + pspec.to_text());
                harness::write_report_files(g.out_dir, stem, report);
                summary.push_back({est_policies[pi_idx], report.eta});
                std::cout << stem << ": eta = " << fmt17(report.eta) << "\n";
            }
            if (summary.size() > 1) {
                std::vector<size_t> order(summary.size());
                for (size_t k = 0; k < order.size(); ++k) order[k] = k;
                std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
                    return summary[a].eta < summary[b].eta;
                });
                std::ostringstream os;
                os << "rank,policy,eta\n";
                for (size_t k = 0; k < order.size(); ++k)
                    os << (k + 1) << ",\"" << summary[order[k]].policy << "\","
                       << fmt17(summary[order[k]].eta) << "\n";
                write_text(fs::path(g.out_dir) / (est_name + "_policy_comparison.csv"),
                           os.str());
                std::cout << "policy ordering written to " << est_name
                          << "_policy_comparison.csv\n";
            }
        } else if (*bench) {
            harness::ExperimentConfig cfg;
            if (!bench_config.empty()) {
                std::ifstream in(bench_config);
                if (!in) throw ValidationError("cannot open " + bench_config);
                std::string text((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
                cfg = harness::config_from_json(text);
            }
            if (!bench_preset.empty()) cfg.env_preset = bench_preset;
            if (bench_reps > 0) cfg.n_replications = bench_reps;
            if (bench_n > 0) cfg.n_individuals = bench_n;
            if (bench_t > 0) cfg.n_timepoints = bench_t;
            if (!bench_estimators.empty()) cfg.estimators = bench_estimators;
            if (!bench_policy.empty()) cfg.target_policy = PolicySpec::parse(bench_policy);
            if (bench_ridge >= 0.0) cfg.options.ridge = bench_ridge;
            if (bench_rollouts > 0) cfg.options.n_rollouts = bench_rollouts;
            if (bench_max_stages > 0) cfg.options.max_stages = bench_max_stages;
            if (bench_em_iter > 0) cfg.options.em_max_iter = bench_em_iter;
            if (bench_oracle_reps > 0) cfg.oracle_reps = bench_oracle_reps;
            if (app.count("--seed")) cfg.master_seed = g.seed;
            if (app.count("--threads")) cfg.threads = g.threads;
            cfg.out_dir = g.out_dir;

            const auto result = harness::run_benchmark(cfg);
            write_text(fs::path(g.out_dir) / "metrics.json", result.table.to_json(cfg));
            write_text(fs::path(g.out_dir) / "metrics.csv", result.table.to_csv());
            write_text(fs::path(g.out_dir) / "records.csv",
                       harness::records_to_csv(result.records));
            write_text(fs::path(g.out_dir) / "config.json", harness::config_to_json(cfg));
            std::cout << result.table.to_csv();
        } else if (*orc) {
            envsim::EnvSpec spec = envsim::make_preset(orc_preset, orc_n, orc_t, g.seed);
            const Policy pi = PolicySpec::parse(orc_policy).make();
            const fs::path out = fs::path(g.out_dir) / orc_out;
            fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
            if (orc_method == "dp") {
                const Eigen::MatrixXd grid = envsim::dp_oracle_tabular(spec, pi);
                write_grid_csv(out, grid, nullptr);
            } else if (orc_method == "mc") {
                const auto res = envsim::mc_oracle(spec, pi, orc_reps,
                                                   derive_seed(g.seed, 0x0AC1Eull));
                write_grid_csv(out, res.mean, &res.se);
            } else {
                throw ValidationError("--method must be dp or mc");
            }
            std::cout << "wrote " << out.string() << "\n";
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
