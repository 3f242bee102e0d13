#include "twdidp/sieve.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace twdidp::sieve {

StagePanel make_stage_panel(const TrajectorySet& data, const Eigen::MatrixXd& responses, int k) {
    const int N = data.n_individuals;
    const int Tk = static_cast<int>(responses.cols());
    if (Tk != data.n_timepoints - k + 1)
        throw ValidationError("stage panel width does not match stage index");
    if (Tk < 1) throw InsufficientDataError("stage panel width must be >= 1");
    StagePanel p;
    p.k = k;
    p.responses = responses;
    p.actions = data.actions.leftCols(Tk);
    p.observations = data.observations.topRows(static_cast<Eigen::Index>(N) * Tk);
    return p;
}

Eigen::MatrixXd build_design(const StagePanel& panel, const BasisFn& basis, int L,
                             int n_actions) {
    const int N = panel.n_individuals(), Tk = panel.width();
    Eigen::MatrixXd design = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N) * Tk,
                                                   static_cast<Eigen::Index>(n_actions) * L);
    for (int s = 0; s < Tk; ++s) {
        for (int i = 0; i < N; ++i) {
            const Eigen::Index row = static_cast<Eigen::Index>(s) * N + i;
            const int a = panel.actions(i, s);
            if (a < 0 || a >= n_actions)
                throw ValidationError("action out of range in stage panel");
            design.row(row).segment(static_cast<Eigen::Index>(a) * L, L) =
                basis(panel.observations.row(row));
        }
    }
    return design;
}

Eigen::MatrixXd build_design(const StagePanel& panel, const BasisSpec& spec, int n_actions) {
    return build_design(
        panel, [&spec](const Eigen::VectorXd& o) { return spec.eval(o); }, spec.size(),
        n_actions);
}

Eigen::MatrixXd two_way_demean(const Eigen::MatrixXd& x) {
    const Eigen::VectorXd row_means = x.rowwise().mean();
    const Eigen::RowVectorXd col_means = x.colwise().mean();
    const double grand = x.mean();
    return (x.colwise() - row_means).rowwise() - (col_means.array() - grand).matrix();
}

namespace {

// Reshape a stacked (s*N + i) column vector into an N x Tk panel.
Eigen::MatrixXd to_panel(const Eigen::VectorXd& v, int N, int Tk) {
    return Eigen::Map<const Eigen::MatrixXd>(v.data(), N, Tk);
}

Eigen::VectorXd to_stacked(const Eigen::MatrixXd& m) {
    return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

struct EffectSplit {
    Eigen::VectorXd theta;
    Eigen::VectorXd lambda;
    double offset;
};

// Row/column means of the residual panel, recentered to sum-to-zero; the
// grand mean appears in both raw means, so the absorbed offset equals it once.
EffectSplit split_effects(const Eigen::MatrixXd& residual) {
    EffectSplit e;
    const double m = residual.mean();
    e.theta = residual.rowwise().mean().array() - m;
    e.lambda = residual.colwise().mean().array() - m;
    e.offset = m;
    return e;
}

}  // namespace

TwoWayCore fwl_solve_design(const Eigen::MatrixXd& responses, const Eigen::MatrixXd& design,
                            double ridge) {
    if (ridge < 0) throw ValidationError("ridge must be nonnegative");
    const int N = static_cast<int>(responses.rows());
    const int Tk = static_cast<int>(responses.cols());
    const Eigen::Index P = design.cols();
    if (design.rows() != static_cast<Eigen::Index>(N) * Tk)
        throw ValidationError("design rows do not match panel size");

    Eigen::MatrixXd s_design(design.rows(), P);
    for (Eigen::Index j = 0; j < P; ++j)
        s_design.col(j) = to_stacked(two_way_demean(to_panel(design.col(j), N, Tk)));
    const Eigen::VectorXd s_resp = to_stacked(two_way_demean(responses));

    const Eigen::MatrixXd gram = s_design.transpose() * s_design;
    const Eigen::VectorXd rhs = s_design.transpose() * s_resp;

    Eigen::VectorXd beta;
    if (ridge == 0.0) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram,
                                              Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        if (sv.size() == 0 || sv(sv.size() - 1) < 1e-10 * sv(0)) {
            throw SingularDesignError(
                "partialled design is singular (relative sv < 1e-10); "
                "insufficient variation or saturated basis — consider a ridge");
        }
        beta = svd.solve(rhs);
    } else {
        Eigen::MatrixXd g = gram;
        g.diagonal().array() += ridge;
        beta = g.ldlt().solve(rhs);
    }

    const Eigen::MatrixXd fitted_main = to_panel(design * beta, N, Tk);
    const auto effects = split_effects(responses - fitted_main);

    TwoWayCore core;
    core.beta = std::move(beta);
    core.theta = effects.theta;
    core.lambda = effects.lambda;
    core.offset = effects.offset;
    return core;
}

TwoWayFit fwl_solve(const StagePanel& panel, const BasisSpec& spec, int n_actions,
                    double ridge) {
    const auto core =
        fwl_solve_design(panel.responses, build_design(panel, spec, n_actions), ridge);
    TwoWayFit fit;
    fit.beta = core.beta;
    fit.theta = core.theta;
    fit.lambda = core.lambda;
    fit.offset = core.offset;
    fit.basis = spec;
    fit.n_actions = n_actions;
    return fit;
}

ProfileResult profile_solve_design(const Eigen::MatrixXd& responses,
                                   const Eigen::MatrixXd& design, double tol, int max_iter) {
    if (tol <= 0) throw ValidationError("tol must be positive");
    if (max_iter < 0) throw ValidationError("max_iter must be nonnegative");
    const int N = static_cast<int>(responses.rows());
    const int Tk = static_cast<int>(responses.cols());
    const Eigen::Index P = design.cols();
    if (design.rows() != static_cast<Eigen::Index>(N) * Tk)
        throw ValidationError("design rows do not match panel size");

    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design.transpose() * design);

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(P);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(N);
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(Tk);

    ProfileResult out;
    for (int iter = 0; iter < max_iter; ++iter) {
        // effect step given the current main effect
        const Eigen::MatrixXd resid = responses - to_panel(design * beta, N, Tk);
        const double grand = resid.mean();
        const Eigen::VectorXd theta_new = resid.rowwise().mean().array() - grand;
        const Eigen::VectorXd lambda_new = resid.colwise().mean();

        // sieve step given the new effects
        Eigen::MatrixXd adj = responses;
        adj.colwise() -= theta_new;
        adj.rowwise() -= lambda_new.transpose();
        const Eigen::VectorXd beta_new = cod.solve(design.transpose() * to_stacked(adj));

        const double delta = std::max({(beta_new - beta).cwiseAbs().maxCoeff(),
                                       (theta_new - theta).cwiseAbs().maxCoeff(),
                                       (lambda_new - lambda).cwiseAbs().maxCoeff()});
        beta = beta_new;
        theta = theta_new;
        lambda = lambda_new;
        out.iterations = iter + 1;
        if (delta < tol) {
            out.converged = true;
            break;
        }
    }
    // theta is centered by construction; lambda still carries the grand mean
    // of the effect step, which moves into the offset
    const double lm = lambda.size() ? lambda.mean() : 0.0;
    out.core.beta = std::move(beta);
    out.core.theta = std::move(theta);
    out.core.lambda = lambda.array() - lm;
    out.core.offset = lm;
    return out;
}

TwoWayFit profile_solve(const StagePanel& panel, const BasisSpec& spec, int n_actions,
                        double tol, int max_iter) {
    const Eigen::MatrixXd design = build_design(panel, spec, n_actions);
    const ProfileResult res = profile_solve_design(panel.responses, design, tol, max_iter);
    TwoWayFit fit;
    fit.beta = res.core.beta;
    fit.theta = res.core.theta;
    fit.lambda = res.core.lambda;
    fit.offset = res.core.offset;
    fit.basis = spec;
    fit.n_actions = n_actions;
    if (!res.converged)
        throw NonConvergenceError("profile solver did not converge in " +
                                      std::to_string(max_iter) + " iterations",
                                  std::move(fit), res.iterations);
    return fit;
}

}  // namespace twdidp::sieve
