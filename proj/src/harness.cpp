#include "twdidp/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>
#include <thread>

#include "twdidp/baselines.hpp"
#include "twdidp/model_based.hpp"

namespace twdidp::harness {

using nlohmann::json;

sieve::BasisSpec EstimatorOptions::resolve_basis(const ObsKind& kind) const {
    if (basis) return *basis;
    if (kind.is_tabular()) return sieve::BasisSpec::indicator(kind.n_states);
    return sieve::BasisSpec::polynomial(std::vector<int>(kind.dim, 3), false);
}

void ExperimentConfig::validate() const {
    if (estimators.empty()) throw ValidationError("at least one estimator is required");
    const auto& known = estimator_names();
    for (const auto& e : estimators)
        if (std::find(known.begin(), known.end(), e) == known.end())
            throw ValidationError("unknown estimator '" + e + "'");
    if (n_replications < 1) throw ValidationError("n_replications must be >= 1");
    if (!csv_path) {
        const auto presets = envsim::preset_names();
        if (std::find(presets.begin(), presets.end(), env_preset) == presets.end())
            throw ValidationError("unknown preset '" + env_preset + "'");
    }
    if (n_individuals < 1 || n_timepoints < 1)
        throw ValidationError("panel dimensions must be positive");
    if (oracle_reps < 2) throw ValidationError("oracle_reps must be >= 2");
    if (threads < 1) throw ValidationError("threads must be >= 1");
}

std::string ExperimentConfig::digest() const { return fnv1a_hex(config_to_json(*this)); }

// ---------------------------------------------------------------------------
// scoring
// ---------------------------------------------------------------------------

std::array<double, 4> score_families(const ValueReport& report, const Eigen::MatrixXd& truth,
                                     bool absolute) {
    const double eta_true = truth.mean();
    const Eigen::VectorXd eta_i_true = truth.rowwise().mean();
    const Eigen::VectorXd eta_t_true = truth.colwise().mean();
    auto agg = [&](double err) { return absolute ? std::abs(err) : err * err; };

    std::array<double, 4> out{};
    out[0] = agg(report.eta - eta_true);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < truth.rows(); ++i)
        acc += agg(report.eta_i(i) - eta_i_true(i));
    out[1] = acc / static_cast<double>(truth.rows());
    acc = 0.0;
    for (Eigen::Index t = 0; t < truth.cols(); ++t)
        acc += agg(report.eta_t(t) - eta_t_true(t));
    out[2] = acc / static_cast<double>(truth.cols());
    acc = 0.0;
    for (Eigen::Index i = 0; i < truth.rows(); ++i)
        for (Eigen::Index t = 0; t < truth.cols(); ++t)
            acc += agg(report.eta_it(i, t) - truth(i, t));
    out[3] = acc / static_cast<double>(truth.size());
    return out;
}

// ---------------------------------------------------------------------------
// estimator dispatch
// ---------------------------------------------------------------------------

ValueReport run_estimator(const std::string& name, const TrajectorySet& data, const Policy& pi,
                          const EstimatorOptions& options, uint64_t seed) {
    const sieve::BasisSpec basis = options.resolve_basis(data.obs_kind);
    ValueReport report;
    if (name == "twdidp-mf") {
        model_free::BackwardConfig cfg;
        cfg.basis = basis;
        cfg.solver = options.solver;
        cfg.ridge = options.ridge;
        cfg.max_stages = options.max_stages;
        report = model_free::estimate_values(data, pi, cfg);
    } else if (name == "twdidp-mb") {
        const auto fitted =
            model_based::em_fit(data, model_based::em_init(data), options.em_tol,
                                options.em_max_iter);
        model_free::BackwardConfig cfg;
        cfg.basis = basis;
        cfg.solver = options.solver;
        cfg.ridge = options.ridge;
        const auto stage1 = model_free::fit_stage_one(data, cfg);
        report = model_based::rollout_values(fitted.model, stage1.fit, data, pi,
                                             options.n_rollouts, seed);
    } else if (name == "b1") {
        report = baselines::b1_doubly_homogeneous(data, pi, basis);
    } else if (name == "b2") {
        report = baselines::b2_temporal_stationary(data, pi, basis);
    } else if (name == "b3") {
        report = baselines::b3_individual_homogeneous(data, pi, basis, options.ridge);
    } else if (name == "b4") {
        report = baselines::b4_homogeneous_model_based(data, pi, basis, options.n_rollouts,
                                                       seed);
    } else {
        throw ValidationError("unknown estimator '" + name + "'");
    }
    report.seed = seed;
    return report;
}

// ---------------------------------------------------------------------------
// benchmark loop
// ---------------------------------------------------------------------------

namespace {

constexpr uint64_t kTagEnv = 0xE17;
constexpr uint64_t kTagTruth = 0x02AC1Eull;

uint64_t estimator_tag(const std::string& name) {
    uint64_t h = 0;
    for (unsigned char c : name) h = h * 131 + c;
    return h;
}

}  // namespace

BenchmarkResult run_benchmark(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.csv_path)
        throw ValidationError("benchmarks run on presets; use evaluate_csv for files");
    const Policy pi = cfg.target_policy.make();

    const int reps = cfg.n_replications;
    const int n_est = static_cast<int>(cfg.estimators.size());
    std::vector<ReplicationRecord> records(static_cast<size_t>(reps) * n_est);

    auto run_rep = [&](int rep) {
        envsim::EnvSpec spec =
            envsim::make_preset(cfg.env_preset, cfg.n_individuals, cfg.n_timepoints,
                                derive_seed(cfg.master_seed, kTagEnv, rep));
        const TrajectorySet data = envsim::generate(spec);
        Eigen::MatrixXd truth;
        if (spec.obs_kind.is_tabular()) {
            truth = envsim::dp_oracle_tabular(spec, pi);
        } else {
            truth = envsim::mc_oracle(spec, pi, cfg.oracle_reps,
                                      derive_seed(cfg.master_seed, kTagTruth, rep))
                        .mean;
        }
        for (int e = 0; e < n_est; ++e) {
            ReplicationRecord& rec = records[static_cast<size_t>(rep) * n_est + e];
            rec.replication = rep;
            rec.estimator = cfg.estimators[e];
            const uint64_t est_seed =
                derive_seed(cfg.master_seed, estimator_tag(rec.estimator), rep);
            const auto start = std::chrono::steady_clock::now();
            try {
                const ValueReport report =
                    run_estimator(rec.estimator, data, pi, cfg.options, est_seed);
                rec.abs_err = score_families(report, truth, true);
                rec.sq_err = score_families(report, truth, false);
                rec.ok = true;
            } catch (const std::exception& ex) {
                rec.ok = false;
                rec.error = ex.what();
            }
            rec.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                    .count();
        }
    };

    if (cfg.threads > 1) {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        const int workers = std::min(cfg.threads, reps);
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&]() {
                for (int r = next.fetch_add(1); r < reps; r = next.fetch_add(1)) run_rep(r);
            });
        }
        for (auto& th : pool) th.join();
    } else {
        for (int r = 0; r < reps; ++r) run_rep(r);
    }

    BenchmarkResult out;
    out.records = std::move(records);
    for (int e = 0; e < n_est; ++e) {
        std::array<double, 4> mae{}, mse{};
        double seconds = 0.0;
        int n_ok = 0;
        for (int r = 0; r < reps; ++r) {
            const auto& rec = out.records[static_cast<size_t>(r) * n_est + e];
            seconds += rec.seconds;
            if (!rec.ok) continue;
            ++n_ok;
            for (int f = 0; f < 4; ++f) {
                mae[f] += rec.abs_err[f];
                mse[f] += rec.sq_err[f];
            }
        }
        for (int f = 0; f < 4; ++f) {
            MetricsRow row;
            row.estimator = cfg.estimators[e];
            row.family = family_names()[f];
            row.n_replications = n_ok;
            row.mae = n_ok ? mae[f] / n_ok : std::numeric_limits<double>::quiet_NaN();
            row.mse = n_ok ? mse[f] / n_ok : std::numeric_limits<double>::quiet_NaN();
            row.runtime_seconds = seconds;
            out.table.rows.push_back(std::move(row));
        }
    }
    out.table.check_invariants();
    return out;
}

void MetricsTable::check_invariants() const {
    for (const auto& row : rows) {
        if (row.n_replications == 0) continue;
        if (row.mse < 0.0) throw ValidationError("negative mse for " + row.estimator);
        if (row.mae > std::sqrt(row.mse) + 1e-12)
            throw ValidationError("mae exceeds sqrt(mse) for " + row.estimator + "/" +
                                  row.family);
    }
}

const MetricsRow* MetricsTable::find(const std::string& estimator,
                                     const std::string& family) const {
    for (const auto& row : rows)
        if (row.estimator == estimator && row.family == family) return &row;
    return nullptr;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["env_preset"] = cfg.env_preset;
    if (cfg.csv_path) j["csv_path"] = *cfg.csv_path;
    j["estimators"] = cfg.estimators;
    j["target_policy"] = cfg.target_policy.to_text();
    j["n_replications"] = cfg.n_replications;
    j["master_seed"] = cfg.master_seed;
    j["n_individuals"] = cfg.n_individuals;
    j["n_timepoints"] = cfg.n_timepoints;
    j["oracle_reps"] = cfg.oracle_reps;
    json opt;
    if (cfg.options.basis) opt["basis"] = cfg.options.basis->describe();
    opt["solver"] = cfg.options.solver == model_free::SolverKind::FWL ? "fwl" : "profile";
    opt["ridge"] = cfg.options.ridge;
    if (cfg.options.max_stages) opt["max_stages"] = *cfg.options.max_stages;
    opt["n_rollouts"] = cfg.options.n_rollouts;
    opt["em_tol"] = cfg.options.em_tol;
    opt["em_max_iter"] = cfg.options.em_max_iter;
    j["options"] = std::move(opt);
    return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
    const json j = json::parse(text);
    ExperimentConfig cfg;
    if (j.contains("env_preset")) cfg.env_preset = j.at("env_preset").get<std::string>();
    if (j.contains("csv_path")) cfg.csv_path = j.at("csv_path").get<std::string>();
    if (j.contains("estimators"))
        cfg.estimators = j.at("estimators").get<std::vector<std::string>>();
    if (j.contains("target_policy"))
        cfg.target_policy = PolicySpec::parse(j.at("target_policy").get<std::string>());
    if (j.contains("n_replications")) cfg.n_replications = j.at("n_replications").get<int>();
    if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<uint64_t>();
    if (j.contains("n_individuals")) cfg.n_individuals = j.at("n_individuals").get<int>();
    if (j.contains("n_timepoints")) cfg.n_timepoints = j.at("n_timepoints").get<int>();
    if (j.contains("oracle_reps")) cfg.oracle_reps = j.at("oracle_reps").get<int>();
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
    if (j.contains("options")) {
        const json& opt = j.at("options");
        if (opt.contains("solver"))
            cfg.options.solver = opt.at("solver").get<std::string>() == "profile"
                                     ? model_free::SolverKind::Profile
                                     : model_free::SolverKind::FWL;
        if (opt.contains("ridge")) cfg.options.ridge = opt.at("ridge").get<double>();
        if (opt.contains("max_stages")) cfg.options.max_stages = opt.at("max_stages").get<int>();
        if (opt.contains("n_rollouts")) cfg.options.n_rollouts = opt.at("n_rollouts").get<int>();
        if (opt.contains("em_tol")) cfg.options.em_tol = opt.at("em_tol").get<double>();
        if (opt.contains("em_max_iter"))
            cfg.options.em_max_iter = opt.at("em_max_iter").get<int>();
        if (opt.contains("basis_poly_degree")) {
            const int deg = opt.at("basis_poly_degree").get<int>();
            cfg.options.basis = sieve::BasisSpec::polynomial({deg}, false);
        }
        if (opt.contains("basis_indicator_states")) {
            cfg.options.basis =
                sieve::BasisSpec::indicator(opt.at("basis_indicator_states").get<int>());
        }
    }
    return cfg;
}

std::string MetricsTable::to_json(const ExperimentConfig& cfg) const {
    json j;
    j["config"] = json::parse(config_to_json(cfg));
    j["config_digest"] = cfg.digest();
    json out_rows = json::array();
    for (const auto& row : rows) {
        json r;
        r["estimator"] = row.estimator;
        r["family"] = row.family;
        r["mae"] = row.mae;
        r["mse"] = row.mse;
        r["n_replications"] = row.n_replications;
        out_rows.push_back(std::move(r));
    }
    j["metrics"] = std::move(out_rows);
    return j.dump(2);
}

std::string MetricsTable::to_csv() const {
    std::ostringstream os;
    os << "estimator,family,mae,mse,n_replications,runtime_seconds\n";
    char buf[40];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& row : rows)
        os << row.estimator << "," << row.family << "," << fmt(row.mae) << "," << fmt(row.mse)
           << "," << row.n_replications << "," << fmt(row.runtime_seconds) << "\n";
    return os.str();
}

std::string records_to_csv(const std::vector<ReplicationRecord>& records) {
    std::ostringstream os;
    os << "replication,estimator,ok,error,seconds";
    for (const auto& f : family_names()) os << ",abs_" << f;
    for (const auto& f : family_names()) os << ",sq_" << f;
    os << "\n";
    char buf[40];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& rec : records) {
        std::string err = rec.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        os << (rec.replication + 1) << "," << rec.estimator << "," << (rec.ok ? 1 : 0) << ","
           << err << "," << fmt(rec.seconds);
        for (int f = 0; f < 4; ++f) os << "," << fmt(rec.abs_err[f]);
        for (int f = 0; f < 4; ++f) os << "," << fmt(rec.sq_err[f]);
        os << "\n";
    }
    return os.str();
}

std::string report_to_json(const ValueReport& report) {
    json j;
    j["estimator"] = report.estimator_name;
    j["target_policy"] = report.target_policy_id;
    j["config_digest"] = report.config_digest;
    j["seed"] = report.seed;
    j["eta"] = report.eta;
    json ei = json::array(), et = json::array(), eit = json::array();
    for (Eigen::Index i = 0; i < report.eta_i.size(); ++i) ei.push_back(report.eta_i(i));
    for (Eigen::Index t = 0; t < report.eta_t.size(); ++t) et.push_back(report.eta_t(t));
    for (Eigen::Index i = 0; i < report.eta_it.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index t = 0; t < report.eta_it.cols(); ++t)
            row.push_back(report.eta_it(i, t));
        eit.push_back(std::move(row));
    }
    j["eta_i"] = std::move(ei);
    j["eta_t"] = std::move(et);
    j["eta_it"] = std::move(eit);
    return j.dump(2);
}

void write_report_files(const std::string& out_dir, const std::string& stem,
                        const ValueReport& report) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream out(fs::path(out_dir) / (stem + ".json"));
        out << report_to_json(report);
    }
    char buf[40];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    {
        std::ofstream out(fs::path(out_dir) / (stem + "_eta_i.csv"));
        out << "i,eta_i\n";
        for (Eigen::Index i = 0; i < report.eta_i.size(); ++i)
            out << (i + 1) << "," << fmt(report.eta_i(i)) << "\n";
    }
    {
        std::ofstream out(fs::path(out_dir) / (stem + "_eta_t.csv"));
        out << "t,eta_t\n";
        for (Eigen::Index t = 0; t < report.eta_t.size(); ++t)
            out << (t + 1) << "," << fmt(report.eta_t(t)) << "\n";
    }
}

ValueReport evaluate_csv(const std::string& path, const std::string& estimator,
                         const PolicySpec& policy, const EstimatorOptions& options,
                         uint64_t seed, const std::string& out_dir,
                         std::optional<ObsKind> obs_kind, std::optional<int> n_actions) {
    const TrajectorySet data = read_trajectory_csv(path, obs_kind, n_actions);
    const Policy pi = policy.make();
    ValueReport report = run_estimator(estimator, data, pi, options, seed);
    report.config_digest = fnv1a_hex(estimator + "|" + policy.to_text() + "|" +
                                     options.resolve_basis(data.obs_kind).describe());
    if (!out_dir.empty()) write_report_files(out_dir, estimator, report);
    return report;
}

}  // namespace twdidp::harness
