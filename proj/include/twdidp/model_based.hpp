#ifndef TWDIDP_MODEL_BASED_HPP
#define TWDIDP_MODEL_BASED_HPP

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "twdidp/core.hpp"

namespace twdidp::model_based {

/// Additive latent-factor transition model: the next observation is drawn
/// from a three-way mixture of a shared (o,a)-conditional component, a
/// per-individual component and a per-time component.
///
/// Weight/component index order is fixed throughout: 0 = shared, 1 =
/// individual, 2 = time. Per-time components are indexed by arrival time:
/// row j of the time-component parameters governs observations arriving at
/// time t = j+2 (1-based).
struct MixtureTransitionModel {
    Eigen::Vector3d weights{1.0, 0.0, 0.0};  // (pi0, pi_u, pi_v)
    ObsKind obs_kind;
    int n_actions = 2;

    // --- tabular parameters ---
    Eigen::MatrixXd p0_table;  // (n_states * n_actions) x n_states, row o*A+a
    Eigen::MatrixXd pu_table;  // N x n_states
    Eigen::MatrixXd pv_table;  // (T-1) x n_states

    // --- continuous (Gaussian) parameters ---
    Eigen::MatrixXd trans_coef;            // d x d   (next-mean linear map)
    Eigen::MatrixXd act_shift;             // n_actions x d
    Eigen::MatrixXd sigma0;                // d x d
    Eigen::MatrixXd mu_u;                  // N x d
    std::vector<Eigen::MatrixXd> sigma_u;  // N of d x d
    Eigen::MatrixXd mu_v;                  // (T-1) x d
    std::vector<Eigen::MatrixXd> sigma_v;  // T-1 of d x d

    int p0_row(int state, int action) const { return state * n_actions + action; }

    /// Component density of the arrival `onext` at cell (i, t0) where t0 is
    /// the 0-based transition index (departure time t0+1, arrival t0+2).
    double component_density(int z, const TrajectorySet& data, int i, int t0,
                             const Eigen::VectorXd& onext) const;

    void validate() const;  // throws ValidationError on malformed parameters
};

/// Posterior component-membership probabilities, one simplex per transition
/// cell: entry (i, t, z), t = 0..T-2.
struct Responsibilities {
    std::array<Eigen::MatrixXd, 3> r;  // each N x (T-1)
    int n_individuals() const { return static_cast<int>(r[0].rows()); }
    int n_transitions() const { return static_cast<int>(r[0].cols()); }
};

struct EStepResult {
    Responsibilities resp;
    double log_likelihood = 0.0;
};

struct DegenerateDensityError : std::runtime_error {
    std::vector<std::pair<int, int>> cells;  // 1-based (i, t) of dead cells
    DegenerateDensityError(std::string msg, std::vector<std::pair<int, int>> cs)
        : std::runtime_error(std::move(msg)), cells(std::move(cs)) {}
};

/// E-step: responsibilities proportional to weight * component density, plus
/// the observed-data log-likelihood. Throws DegenerateDensityError listing
/// cells where all three densities vanish.
EStepResult em_e_step(const TrajectorySet& data, const MixtureTransitionModel& theta);

struct MStepResult {
    MixtureTransitionModel model;
    /// Component/parameter blocks whose total responsibility fell below the
    /// update floor and kept their previous values.
    std::vector<std::string> frozen;
};

/// M-step: weights are responsibility means; Gaussian components use weighted
/// MLE (weighted least squares for the shared linear mean, weighted
/// means/covariances for the others); tabular components use weighted
/// relative frequencies. Covariances are floored at 1e-8 I.
MStepResult em_m_step(const TrajectorySet& data, const Responsibilities& resp,
                      const MixtureTransitionModel& previous);

/// Pooled-moment initialization: uniform weights; shared component from
/// pooled least squares of the next observation on (observation, action);
/// individual/time components from per-row and per-column moments.
MixtureTransitionModel em_init(const TrajectorySet& data);

struct EmFitResult {
    MixtureTransitionModel model;
    std::vector<double> trace;  // observed-data log-likelihood per E-step
    bool converged = false;
    int iterations = 0;
};

/// Alternates E and M steps until the log-likelihood gain drops below tol or
/// max_iter cycles complete. The trace includes the initial likelihood.
EmFitResult em_fit(const TrajectorySet& data, const MixtureTransitionModel& init, double tol,
                   int max_iter);

/// Monte-Carlo policy value: per individual, simulate observation paths from
/// the fitted mixture starting at the observed first observation and average
/// the policy-expected fitted rewards. Bit-reproducible for a fixed seed;
/// individuals use independent derived RNG streams.
ValueReport rollout_values(const MixtureTransitionModel& model, const TwoWayFit& reward_fit,
                           const TrajectorySet& data, const Policy& pi, int n_rollouts,
                           uint64_t seed, int threads = 1);

std::string model_to_json(const MixtureTransitionModel& model, const std::string& basis_digest);
MixtureTransitionModel model_from_json(const std::string& text);
void save_model(const std::string& path, const MixtureTransitionModel& model,
                const std::string& basis_digest = "");
MixtureTransitionModel load_model(const std::string& path);

}  // namespace twdidp::model_based

#endif
