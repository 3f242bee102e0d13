#ifndef TWDIDP_HARNESS_HPP
#define TWDIDP_HARNESS_HPP

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "twdidp/core.hpp"
#include "twdidp/envsim.hpp"
#include "twdidp/model_free.hpp"

namespace twdidp::harness {

inline const std::vector<std::string>& estimator_names() {
    static const std::vector<std::string> names = {"twdidp-mf", "twdidp-mb", "b1",
                                                   "b2",        "b3",        "b4"};
    return names;
}

struct EstimatorOptions {
    std::optional<sieve::BasisSpec> basis;  // default: indicator for tabular, poly-3 otherwise
    model_free::SolverKind solver = model_free::SolverKind::FWL;
    double ridge = 1e-8;
    std::optional<int> max_stages;
    int n_rollouts = 1000;
    double em_tol = 1e-8;
    int em_max_iter = 200;

    sieve::BasisSpec resolve_basis(const ObsKind& kind) const;
};

struct ExperimentConfig {
    std::string env_preset = "paper-tabular";
    std::optional<std::string> csv_path;
    std::vector<std::string> estimators = estimator_names();
    PolicySpec target_policy = PolicySpec::parse("agnostic:0.2,0.8");
    int n_replications = 100;
    uint64_t master_seed = 20240801;
    int n_individuals = 80;
    int n_timepoints = 80;
    EstimatorOptions options;
    int oracle_reps = 500;  // MC-truth replications for non-tabular environments
    std::string out_dir;
    int threads = 1;

    void validate() const;
    std::string digest() const;
};

inline const std::vector<std::string>& family_names() {
    static const std::vector<std::string> names = {"eta", "eta_i", "eta_t", "eta_it"};
    return names;
}

struct MetricsRow {
    std::string estimator;
    std::string family;
    double mae = 0.0;
    double mse = 0.0;
    int n_replications = 0;  // successful replications aggregated
    double runtime_seconds = 0.0;
};

struct MetricsTable {
    std::vector<MetricsRow> rows;
    /// Deterministic serialization: excludes wall-clock timings so identical
    /// configs and seeds produce byte-identical output.
    std::string to_json(const ExperimentConfig& cfg) const;
    std::string to_csv() const;  // includes runtime column
    void check_invariants() const;
    const MetricsRow* find(const std::string& estimator, const std::string& family) const;
};

/// One replication's scores for one estimator: |err| and err^2 per family.
struct ReplicationRecord {
    int replication = 0;
    std::string estimator;
    bool ok = false;
    std::string error;
    std::array<double, 4> abs_err{};
    std::array<double, 4> sq_err{};
    double seconds = 0.0;
};

struct BenchmarkResult {
    MetricsTable table;
    std::vector<ReplicationRecord> records;
};

/// Runs the replication loop: generate data, compute the oracle truth once
/// per replication, run each requested estimator, and score each estimand
/// family. Estimator failures are recorded and excluded from the aggregates.
BenchmarkResult run_benchmark(const ExperimentConfig& cfg);

/// Scores a report against a truth grid: per-family |error| averaged over the
/// family's index set.
std::array<double, 4> score_families(const ValueReport& report, const Eigen::MatrixXd& truth,
                                     bool absolute);

/// Runs a single named estimator on in-memory data.
ValueReport run_estimator(const std::string& name, const TrajectorySet& data, const Policy& pi,
                          const EstimatorOptions& options, uint64_t seed);

/// CSV-file workflow: ingest, validate, estimate, and (when out_dir is set)
/// write the report JSON plus per-individual and per-time CSVs.
ValueReport evaluate_csv(const std::string& path, const std::string& estimator,
                         const PolicySpec& policy, const EstimatorOptions& options,
                         uint64_t seed = 0, const std::string& out_dir = "",
                         std::optional<ObsKind> obs_kind = std::nullopt,
                         std::optional<int> n_actions = std::nullopt);

std::string report_to_json(const ValueReport& report);
void write_report_files(const std::string& out_dir, const std::string& stem,
                        const ValueReport& report);

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);

/// Records (CSV) schema: replication,estimator,ok,error,then per-family
/// abs and squared errors.
std::string records_to_csv(const std::vector<ReplicationRecord>& records);

}  // namespace twdidp::harness

#endif
