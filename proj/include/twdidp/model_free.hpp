#ifndef TWDIDP_MODEL_FREE_HPP
#define TWDIDP_MODEL_FREE_HPP

#include <optional>
#include <vector>

#include "twdidp/core.hpp"
#include "twdidp/sieve.hpp"

namespace twdidp::model_free {

enum class SolverKind { FWL, Profile };

struct BackwardConfig {
    sieve::BasisSpec basis = sieve::BasisSpec::indicator(2);
    SolverKind solver = SolverKind::FWL;
    double ridge = 0.0;
    /// Early-stopping cap on the induction depth. Defaults to
    /// ceil(10 * ln(N*T)), and is always limited to T-1 so the deepest stage
    /// panel keeps at least two time columns.
    std::optional<int> max_stages;
    double degeneracy_tol = 1e-12;

    int effective_max_stages(int n_individuals, int n_timepoints) const;
};

/// One stage of the backward induction: depth k and the stage fit. The fit's
/// lambda vector is indexed by start time s = 1..T-k+1; start time s targets
/// time s+k-1.
struct QFunctionStage {
    int k = 1;
    TwoWayFit fit;

    /// Q estimate for individual i at start index s (0-based) with the given
    /// observation and action.
    double q(int i, int s, const Eigen::VectorXd& obs, int action) const {
        return fit.value(i, s, obs, action);
    }
    /// Policy-averaged Q at (i, s, obs).
    double v(int i, int s, const Eigen::VectorXd& obs, const Policy& pi) const;
};

/// Depth-1 fit: rewards on (observation, action) with two-way effects.
QFunctionStage fit_stage_one(const TrajectorySet& data, const BackwardConfig& cfg);

/// Stages 1..K of the backward induction, K = min(t_star, effective cap).
/// Stage k >= 2 regresses the policy-averaged previous-stage values at the
/// next time point on the current (observation, action) pair.
std::vector<QFunctionStage> backward_induct(const TrajectorySet& data, const Policy& pi,
                                            int t_star, const BackwardConfig& cfg);

/// Full value grid via backward induction, one report for all four targets.
/// Horizons beyond the deepest computed stage reuse that stage's fit with the
/// start-time index shifted so the targeted time matches.
ValueReport estimate_values(const TrajectorySet& data, const Policy& pi,
                            const BackwardConfig& cfg);

/// Sup-norm of the demeaned fitted main effect over the observed support;
/// the stage-k sequence of these contracts geometrically in k.
double stage_main_effect_spread(const TrajectorySet& data, const QFunctionStage& stage);

}  // namespace twdidp::model_free

#endif
