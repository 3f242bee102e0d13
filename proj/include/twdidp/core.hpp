#ifndef TWDIDP_CORE_HPP
#define TWDIDP_CORE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "twdidp/basis.hpp"
#include "twdidp/common.hpp"

namespace twdidp {

// ---------------------------------------------------------------------------
// Observation space
// ---------------------------------------------------------------------------

struct ObsKind {
    enum class Tag { Tabular, Continuous };
    Tag tag = Tag::Tabular;
    int n_states = 0;  // Tabular only
    int dim = 1;       // observation dimension (1 for tabular)

    static ObsKind tabular(int n_states) { return {Tag::Tabular, n_states, 1}; }
    static ObsKind continuous(int dim) { return {Tag::Continuous, 0, dim}; }
    bool is_tabular() const { return tag == Tag::Tabular; }
    bool operator==(const ObsKind& o) const {
        return tag == o.tag && n_states == o.n_states && dim == o.dim;
    }
};

// ---------------------------------------------------------------------------
// Panel data
// ---------------------------------------------------------------------------

/// A balanced N x T panel of observation/action/reward triplets.
///
/// Observations are stored stacked by time point: row (t*N + i) of
/// `observations` holds the d-vector observed for individual i at time t.
/// Actions and rewards are stored as N x T matrices indexed (i, t).
struct TrajectorySet {
    int n_individuals = 0;
    int n_timepoints = 0;
    int n_actions = 0;
    ObsKind obs_kind;
    Eigen::MatrixXd observations;  // (N*T) x d
    Eigen::MatrixXi actions;       // N x T
    Eigen::MatrixXd rewards;       // N x T

    Eigen::VectorXd obs(int i, int t) const {
        return observations.row(static_cast<Eigen::Index>(t) * n_individuals + i);
    }
    int state(int i, int t) const {
        return static_cast<int>(observations(static_cast<Eigen::Index>(t) * n_individuals + i, 0));
    }
};

struct Violation {
    std::string message;
};

struct ValidationResult {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    std::string summary() const;
};

/// Structural checks: shape agreement, action/state ranges, finite rewards.
ValidationResult validate_trajectories(const TrajectorySet& data);

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// A stationary policy: observation -> probability vector over actions.
class Policy {
public:
    enum class Kind { ObservationAgnostic, Table, Threshold, Custom };
    using ProbFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

    static Policy observation_agnostic(Eigen::VectorXd probs, std::string id = "");
    /// probs(s, a) = P(a | state s) for tabular observations.
    static Policy table(Eigen::MatrixXd probs, std::string id = "");
    /// Dispatch on obs[dim] < cutoff (low) vs >= cutoff (high).
    static Policy threshold(int dim, double cutoff, Eigen::VectorXd low_probs,
                            Eigen::VectorXd high_probs, std::string id = "");
    static Policy custom(int n_actions, ProbFn fn, std::string id = "custom");

    Kind kind() const { return kind_; }
    int n_actions() const { return n_actions_; }
    const std::string& id() const { return id_; }

    /// Probability vector at an observation. Does not validate the output;
    /// use policy_probs for the checked variant.
    Eigen::VectorXd probs(const Eigen::VectorXd& obs) const;

private:
    Kind kind_ = Kind::ObservationAgnostic;
    int n_actions_ = 0;
    std::string id_;
    Eigen::VectorXd agnostic_;
    Eigen::MatrixXd table_;
    int thr_dim_ = 0;
    double thr_cut_ = 0.0;
    Eigen::VectorXd thr_low_, thr_high_;
    ProbFn fn_;
};

/// Checked policy evaluation: returned vector is nonnegative and sums to one
/// within 1e-12, else throws ValidationError.
Eigen::VectorXd policy_probs(const Policy& p, const Eigen::VectorXd& obs);

// ---------------------------------------------------------------------------
// Estimand selectors
// ---------------------------------------------------------------------------

/// Which aggregate of the value grid is requested. Indices are 1-based,
/// matching report output conventions.
struct EstimandTarget {
    enum class Kind { Average, PerIndividual, PerTime, PerIndividualTime };
    Kind kind = Kind::Average;
    int i = 0;  // 1-based, PerIndividual / PerIndividualTime
    int t = 0;  // 1-based, PerTime / PerIndividualTime

    static EstimandTarget average() { return {Kind::Average, 0, 0}; }
    static EstimandTarget per_individual(int i) { return {Kind::PerIndividual, i, 0}; }
    static EstimandTarget per_time(int t) { return {Kind::PerTime, 0, t}; }
    static EstimandTarget per_individual_time(int i, int t) {
        return {Kind::PerIndividualTime, i, t};
    }
    void check_bounds(int n_individuals, int n_timepoints) const;
};

// ---------------------------------------------------------------------------
// Fits and reports
// ---------------------------------------------------------------------------

/// One two-way fixed-effects fit: sieve coefficients (blocked per action),
/// sum-to-zero individual and time effects, and the scalar offset absorbed
/// during recentering. Fitted value: offset + theta[i] + lambda[s] + phi(o)'beta_a.
struct TwoWayFit {
    Eigen::VectorXd beta;    // length n_actions * L
    Eigen::VectorXd theta;   // length N, sums to zero
    Eigen::VectorXd lambda;  // length T_k, sums to zero
    double offset = 0.0;
    sieve::BasisSpec basis = sieve::BasisSpec::indicator(1);
    int n_actions = 0;

    /// phi(o)' beta_a + offset; effects excluded.
    double main_effect(const Eigen::VectorXd& obs, int action) const;
    /// Full fitted value at panel cell (i, s) for observation obs, action a.
    double value(int i, int s, const Eigen::VectorXd& obs, int action) const;
};

/// Estimates of the four targets. The grid eta_it is primary; eta, eta_i and
/// eta_t are its arithmetic means, exactly by construction.
struct ValueReport {
    std::string estimator_name;
    std::string target_policy_id;
    double eta = 0.0;
    Eigen::VectorXd eta_i;   // length N
    Eigen::VectorXd eta_t;   // length T
    Eigen::MatrixXd eta_it;  // N x T
    std::string config_digest;
    uint64_t seed = 0;

    static ValueReport from_grid(std::string estimator_name, std::string policy_id,
                                 Eigen::MatrixXd grid, std::string config_digest = "",
                                 uint64_t seed = 0);

    double lookup(const EstimandTarget& target) const;
    bool aggregation_consistent(double tol = 1e-10) const;
};

// ---------------------------------------------------------------------------
// CSV panel ingestion / export
// ---------------------------------------------------------------------------

/// Reads `id,t,action,reward,obs_1,...,obs_d` rows (any order), relabels ids
/// and times to dense 1..N / 1..T, and fails with line numbers on duplicate or
/// missing cells. If obs_kind is not given it is inferred: a single integer
/// observation column with small nonnegative range is treated as tabular.
TrajectorySet read_trajectory_csv(const std::string& path,
                                  std::optional<ObsKind> obs_kind = std::nullopt,
                                  std::optional<int> n_actions = std::nullopt);

void write_trajectory_csv(const std::string& path, const TrajectorySet& data);

}  // namespace twdidp

#endif
