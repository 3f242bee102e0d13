#ifndef TWDIDP_BASELINES_HPP
#define TWDIDP_BASELINES_HPP

#include <optional>
#include <vector>

#include "twdidp/core.hpp"

namespace twdidp::baselines {

/// Solution of the doubly homogeneous estimating equations: long-run average
/// reward plus per-action relative-value sieve coefficients.
struct B1Solution {
    double eta = 0.0;
    Eigen::VectorXd beta;  // n_actions * L, relative value function coefficients
    double residual_norm = 0.0;
};

/// Solves the stacked average-reward estimating equations (affine in the
/// unknowns) in one linear solve. The system is rank-deficient by the
/// constant shift of the relative value function; the minimum-norm solution
/// is taken and eta is identified. Throws SingularSystemError when the
/// residual shows the system is inconsistent beyond numerical tolerance.
B1Solution b1_solve(const TrajectorySet& data, const Policy& pi, const sieve::BasisSpec& spec);

/// Doubly homogeneous model-free baseline: one eta for all four targets.
ValueReport b1_doubly_homogeneous(const TrajectorySet& data, const Policy& pi,
                                  const sieve::BasisSpec& spec);

/// Temporal-stationary baseline: the homogeneous solver applied per
/// trajectory. Singular trajectories are dropped from the aggregate, filled
/// with the mean of the others, and reported in `dropped` (0-based indices).
ValueReport b2_temporal_stationary(const TrajectorySet& data, const Policy& pi,
                                   const sieve::BasisSpec& spec,
                                   std::vector<int>* dropped = nullptr);

/// eta_t for a single target time via cross-sectional backward induction
/// (pooled over individuals, no fixed effects).
double b3_eta_at(const TrajectorySet& data, const Policy& pi, const sieve::BasisSpec& spec,
                 int t_star, double ridge);

/// Individual-homogeneous baseline: per-time values from classical backward
/// induction, constant across individuals.
ValueReport b3_individual_homogeneous(const TrajectorySet& data, const Policy& pi,
                                      const sieve::BasisSpec& spec, double ridge = 1e-8);

/// Doubly homogeneous model-based baseline: single-component transition
/// (categorical or linear-Gaussian) plus pooled sieve reward regression,
/// evaluated by Monte-Carlo rollouts from each observed first observation.
ValueReport b4_homogeneous_model_based(const TrajectorySet& data, const Policy& pi,
                                       const sieve::BasisSpec& spec, int n_rollouts,
                                       uint64_t seed);

}  // namespace twdidp::baselines

#endif
