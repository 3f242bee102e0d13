#ifndef TWDIDP_SIEVE_HPP
#define TWDIDP_SIEVE_HPP

#include <Eigen/Dense>
#include <functional>

#include "twdidp/core.hpp"

namespace twdidp::sieve {

/// Regression panel for one backward-induction stage: responses and the
/// covariate (observation, action) slice over start times 1..T_k.
/// Observations are stacked like TrajectorySet: row (s*N + i).
struct StagePanel {
    Eigen::MatrixXd responses;     // N x T_k
    Eigen::MatrixXd observations;  // (N*T_k) x d
    Eigen::MatrixXi actions;       // N x T_k
    int k = 1;

    int n_individuals() const { return static_cast<int>(responses.rows()); }
    int width() const { return static_cast<int>(responses.cols()); }
    Eigen::VectorXd obs(int i, int s) const {
        return observations.row(static_cast<Eigen::Index>(s) * responses.rows() + i);
    }
};

/// Extracts the stage-k panel (start times 1..T-k+1) with the given responses.
StagePanel make_stage_panel(const TrajectorySet& data, const Eigen::MatrixXd& responses, int k);

using BasisFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Action-blocked interaction design: row (s*N + i) carries the basis vector
/// in the block of the observed action, zeros elsewhere.
Eigen::MatrixXd build_design(const StagePanel& panel, const BasisSpec& spec, int n_actions);
Eigen::MatrixXd build_design(const StagePanel& panel, const BasisFn& basis, int L, int n_actions);

/// Balanced-panel within transformation:
/// x_{i,t} - rowmean_i - colmean_t + grandmean. Annihilates anything of the
/// form theta_i + lambda_t; equals applying I - B(B'B)^+ B' for the two-way
/// dummy design B.
Eigen::MatrixXd two_way_demean(const Eigen::MatrixXd& x);

/// Basis-free fit result; fwl_solve wraps this into a TwoWayFit.
struct TwoWayCore {
    Eigen::VectorXd beta;
    Eigen::VectorXd theta;
    Eigen::VectorXd lambda;
    double offset = 0.0;
};

/// Closed-form partialled least squares on an explicit design matrix
/// (rows stacked (s*N + i)). Throws SingularDesignError when ridge == 0 and
/// the partialled Gram matrix has relative singular value below 1e-10.
TwoWayCore fwl_solve_design(const Eigen::MatrixXd& responses, const Eigen::MatrixXd& design,
                            double ridge);

/// Closed-form two-way fixed-effects sieve fit:
///   beta  = (Phi' S Phi + ridge I)^{-1} Phi' S R      (S = within transform)
///   theta_i = mean_t residual, lambda_t = mean_i residual,
/// recentered to sum-to-zero with the removed mean stored as `offset`.
TwoWayFit fwl_solve(const StagePanel& panel, const BasisSpec& spec, int n_actions, double ridge);

struct NonConvergenceError : std::runtime_error {
    TwoWayFit last_iterate;
    int iterations = 0;
    NonConvergenceError(std::string msg, TwoWayFit last, int iters)
        : std::runtime_error(std::move(msg)), last_iterate(std::move(last)), iterations(iters) {}
};

/// Alternating least squares: effect step (row/column means of the current
/// residual, grand mean split off) and sieve step (plain least squares of the
/// effect-adjusted response on the design). Converges to the same fit as
/// fwl_solve on nonsingular designs; throws NonConvergenceError with the last
/// iterate attached if max_iter is exhausted.
TwoWayFit profile_solve(const StagePanel& panel, const BasisSpec& spec, int n_actions,
                        double tol = 1e-10, int max_iter = 500);

struct ProfileResult {
    TwoWayCore core;
    bool converged = false;
    int iterations = 0;
};

/// Design-level core of profile_solve. Independent of the partialled-out
/// route: only plain least squares on the raw design is used. Does not throw
/// on non-convergence; the last iterate is returned with converged = false.
ProfileResult profile_solve_design(const Eigen::MatrixXd& responses,
                                   const Eigen::MatrixXd& design, double tol, int max_iter);

}  // namespace twdidp::sieve

#endif
