#include "twdidp/baselines.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "twdidp/random.hpp"
#include "twdidp/sieve.hpp"

namespace twdidp::baselines {

namespace {

// Policy-weighted basis features at every panel cell, plus plain basis
// features; both used to assemble the estimating equations.
struct Features {
    Eigen::MatrixXd phi;       // (N*T) x L
    Eigen::MatrixXd weighted;  // (N*T) x (nA*L): concat_a pi(a|o)*phi(o)
};

Features make_features(const TrajectorySet& data, const Policy& pi,
                       const sieve::BasisSpec& spec) {
    const int L = spec.size(), nA = data.n_actions;
    const Eigen::Index cells = data.observations.rows();
    Features f;
    f.phi.resize(cells, L);
    f.weighted.resize(cells, static_cast<Eigen::Index>(nA) * L);
    for (Eigen::Index r = 0; r < cells; ++r) {
        const Eigen::VectorXd obs = data.observations.row(r);
        const Eigen::VectorXd phi = spec.eval(obs);
        const Eigen::VectorXd p = policy_probs(pi, obs);
        f.phi.row(r) = phi.transpose();
        for (int a = 0; a < nA; ++a)
            f.weighted.row(r).segment(static_cast<Eigen::Index>(a) * L, L) =
                p(a) * phi.transpose();
    }
    return f;
}

}  // namespace

B1Solution b1_solve(const TrajectorySet& data, const Policy& pi, const sieve::BasisSpec& spec) {
    const int N = data.n_individuals, T = data.n_timepoints;
    if (T < 2) throw InsufficientDataError("average-reward equations need transitions");
    const int L = spec.size(), nA = data.n_actions;
    const Eigen::Index dim = 1 + static_cast<Eigen::Index>(nA) * L;

    const Features f = make_features(data, pi, spec);

    Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd d(dim), c(dim);
    for (int t = 0; t + 1 < T; ++t) {
        for (int i = 0; i < N; ++i) {
            const Eigen::Index cur = static_cast<Eigen::Index>(t) * N + i;
            const Eigen::Index nxt = static_cast<Eigen::Index>(t + 1) * N + i;
            const int a = data.actions(i, t);
            d.setZero();
            d(0) = 1.0;
            d.segment(1 + static_cast<Eigen::Index>(a) * L, L) = f.phi.row(cur);
            c.setZero();
            c(0) = -1.0;
            c.tail(static_cast<Eigen::Index>(nA) * L) = f.weighted.row(nxt);
            c.segment(1 + static_cast<Eigen::Index>(a) * L, L) -= f.phi.row(cur);
            lhs.noalias() += d * c.transpose();
            rhs.noalias() -= d * data.rewards(i, t);
        }
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(lhs, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(0) <= 0.0) throw SingularSystemError("estimating equations are all zero");
    // the relative-value coefficients carry a constant-shift null direction;
    // the average reward itself must not
    double eta_null = 0.0;
    for (Eigen::Index j = 0; j < sv.size(); ++j)
        if (sv(j) <= 1e-10 * sv(0)) eta_null += svd.matrixV()(0, j) * svd.matrixV()(0, j);
    if (std::sqrt(eta_null) > 1e-8)
        throw SingularSystemError("average reward is not identified (underdetermined system)");
    svd.setThreshold(1e-10);
    const Eigen::VectorXd x = svd.solve(rhs);
    const double resid = (lhs * x - rhs).cwiseAbs().maxCoeff();
    const double budget = 1e-8 * static_cast<double>(N) * T;
    if (!std::isfinite(resid) || resid > budget)
        throw SingularSystemError("estimating equations inconsistent (residual " +
                                  std::to_string(resid) + ")");
    B1Solution sol;
    sol.eta = x(0);
    sol.beta = x.tail(static_cast<Eigen::Index>(nA) * L);
    sol.residual_norm = resid;
    return sol;
}

ValueReport b1_doubly_homogeneous(const TrajectorySet& data, const Policy& pi,
                                  const sieve::BasisSpec& spec) {
    const auto sol = b1_solve(data, pi, spec);
    Eigen::MatrixXd grid =
        Eigen::MatrixXd::Constant(data.n_individuals, data.n_timepoints, sol.eta);
    return ValueReport::from_grid("b1", pi.id(), std::move(grid));
}

namespace {

TrajectorySet single_trajectory(const TrajectorySet& data, int i) {
    TrajectorySet one;
    one.n_individuals = 1;
    one.n_timepoints = data.n_timepoints;
    one.n_actions = data.n_actions;
    one.obs_kind = data.obs_kind;
    one.actions = data.actions.row(i);
    one.rewards = data.rewards.row(i);
    one.observations.resize(data.n_timepoints, data.observations.cols());
    for (int t = 0; t < data.n_timepoints; ++t)
        one.observations.row(t) =
            data.observations.row(static_cast<Eigen::Index>(t) * data.n_individuals + i);
    return one;
}

}  // namespace

ValueReport b2_temporal_stationary(const TrajectorySet& data, const Policy& pi,
                                   const sieve::BasisSpec& spec, std::vector<int>* dropped) {
    const int N = data.n_individuals, T = data.n_timepoints;
    Eigen::VectorXd eta_i(N);
    std::vector<int> failed;
    double sum_ok = 0.0;
    int n_ok = 0;
    for (int i = 0; i < N; ++i) {
        try {
            const auto sol = b1_solve(single_trajectory(data, i), pi, spec);
            eta_i(i) = sol.eta;
            sum_ok += sol.eta;
            ++n_ok;
        } catch (const std::runtime_error&) {
            failed.push_back(i);
            eta_i(i) = std::numeric_limits<double>::quiet_NaN();
        }
    }
    if (n_ok == 0) throw SingularSystemError("every per-trajectory solve failed");
    const double fill = sum_ok / n_ok;
    for (int i : failed) eta_i(i) = fill;  // flagged trajectories carry the mean
    if (dropped) *dropped = failed;

    Eigen::MatrixXd grid(N, T);
    for (int t = 0; t < T; ++t) grid.col(t) = eta_i;
    return ValueReport::from_grid("b2", pi.id(), std::move(grid));
}

namespace {

// Cross-sectional ridge regression of y on the action-blocked basis at a
// fixed time; returns the coefficient vector.
Eigen::VectorXd cross_section_fit(const Eigen::MatrixXd& phi_t, const Eigen::VectorXi& actions,
                                  const Eigen::VectorXd& y, int n_actions, double ridge) {
    const int N = static_cast<int>(y.size());
    const int L = static_cast<int>(phi_t.cols());
    const Eigen::Index P = static_cast<Eigen::Index>(n_actions) * L;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(N, P);
    for (int i = 0; i < N; ++i)
        X.row(i).segment(static_cast<Eigen::Index>(actions(i)) * L, L) = phi_t.row(i);
    Eigen::MatrixXd gram = X.transpose() * X;
    if (ridge > 0.0) {
        gram.diagonal().array() += ridge;
        return gram.ldlt().solve(X.transpose() * y);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) < 1e-10 * sv(0))
        throw SingularDesignError("cross-sectional design singular");
    return svd.solve(X.transpose() * y);
}

}  // namespace

double b3_eta_at(const TrajectorySet& data, const Policy& pi, const sieve::BasisSpec& spec,
                 int t_star, double ridge) {
    const int N = data.n_individuals, T = data.n_timepoints;
    if (t_star < 1 || t_star > T) throw ValidationError("t_star must lie in [1, T]");
    const int L = spec.size(), nA = data.n_actions;

    const Features f = make_features(data, pi, spec);
    auto phi_at = [&](int t) {
        return f.phi.middleRows(static_cast<Eigen::Index>(t) * N, N);
    };
    auto weighted_at = [&](int t) {
        return f.weighted.middleRows(static_cast<Eigen::Index>(t) * N, N);
    };

    Eigen::VectorXd y = data.rewards.col(t_star - 1);
    Eigen::VectorXd coef;
    for (int t = t_star; t >= 1; --t) {
        coef = cross_section_fit(phi_at(t - 1), data.actions.col(t - 1), y, nA, ridge);
        if (t > 1) y = weighted_at(t - 1) * coef;
    }
    return (weighted_at(0) * coef).mean();
}

ValueReport b3_individual_homogeneous(const TrajectorySet& data, const Policy& pi,
                                      const sieve::BasisSpec& spec, double ridge) {
    const int N = data.n_individuals, T = data.n_timepoints;
    Eigen::VectorXd eta_t(T);
    for (int ts = 1; ts <= T; ++ts) eta_t(ts - 1) = b3_eta_at(data, pi, spec, ts, ridge);
    Eigen::MatrixXd grid(N, T);
    for (int i = 0; i < N; ++i) grid.row(i) = eta_t.transpose();
    return ValueReport::from_grid("b3", pi.id(), std::move(grid));
}

ValueReport b4_homogeneous_model_based(const TrajectorySet& data, const Policy& pi,
                                       const sieve::BasisSpec& spec, int n_rollouts,
                                       uint64_t seed) {
    const int N = data.n_individuals, T = data.n_timepoints;
    if (n_rollouts < 1) throw ValidationError("n_rollouts must be >= 1");
    const int L = spec.size(), nA = data.n_actions;
    const Eigen::Index cells = static_cast<Eigen::Index>(N) * T;

    // pooled reward regression on the action-blocked basis
    const Features f = make_features(data, pi, spec);
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(cells, static_cast<Eigen::Index>(nA) * L);
    Eigen::VectorXd y(cells);
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < N; ++i) {
            const Eigen::Index r = static_cast<Eigen::Index>(t) * N + i;
            X.row(r).segment(static_cast<Eigen::Index>(data.actions(i, t)) * L, L) =
                f.phi.row(r);
            y(r) = data.rewards(i, t);
        }
    }
    Eigen::MatrixXd gram = X.transpose() * X;
    gram.diagonal().array() += 1e-8;
    const Eigen::VectorXd reward_coef = gram.ldlt().solve(X.transpose() * y);

    const bool tabular = data.obs_kind.is_tabular();
    const int S = tabular ? data.obs_kind.n_states : 0;
    const int d = static_cast<int>(data.observations.cols());

    // single-component transition fit
    Eigen::MatrixXd p_table;         // tabular: (S*nA) x S
    Eigen::MatrixXd tcoef, tshift;   // continuous
    Eigen::LLT<Eigen::MatrixXd> chol;
    if (tabular) {
        Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(S * nA, S);
        for (int t = 0; t + 1 < T; ++t)
            for (int i = 0; i < N; ++i)
                counts(data.state(i, t) * nA + data.actions(i, t), data.state(i, t + 1)) += 1.0;
        p_table.resize(S * nA, S);
        for (int r = 0; r < S * nA; ++r) {
            const double tot = counts.row(r).sum();
            p_table.row(r) = tot > 0 ? (counts.row(r) / tot).eval()
                                     : Eigen::RowVectorXd::Constant(S, 1.0 / S).eval();
        }
    } else {
        const Eigen::Index ntr = static_cast<Eigen::Index>(N) * (T - 1);
        Eigen::MatrixXd Xt(ntr, d + nA);
        Eigen::MatrixXd Yt(ntr, d);
        Eigen::Index row = 0;
        for (int t = 0; t + 1 < T; ++t) {
            for (int i = 0; i < N; ++i, ++row) {
                Xt.row(row).head(d) = data.obs(i, t);
                Xt.row(row).tail(nA).setZero();
                Xt(row, d + data.actions(i, t)) = 1.0;
                Yt.row(row) = data.obs(i, t + 1);
            }
        }
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Xt.transpose() * Xt);
        const Eigen::MatrixXd coef = cod.solve(Xt.transpose() * Yt);
        tcoef = coef.topRows(d).transpose();
        tshift = coef.bottomRows(nA);
        const Eigen::MatrixXd resid = Yt - Xt * coef;
        Eigen::MatrixXd cov = (resid.transpose() * resid) / static_cast<double>(ntr);
        cov.diagonal().array() += 1e-12;
        chol.compute(cov);
    }

    auto expected_reward = [&](const Eigen::VectorXd& obs) {
        const Eigen::VectorXd phi = spec.eval(obs);
        const Eigen::VectorXd p = policy_probs(pi, obs);
        double out = 0.0;
        for (int a = 0; a < nA; ++a)
            if (p(a) != 0.0)
                out += p(a) *
                       phi.dot(reward_coef.segment(static_cast<Eigen::Index>(a) * L, L));
        return out;
    };

    Eigen::MatrixXd grid = Eigen::MatrixXd::Zero(N, T);
    for (int i = 0; i < N; ++i) {
        std::mt19937_64 rng = make_rng(derive_seed(seed, static_cast<uint64_t>(i)));
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(T);
        for (int rep = 0; rep < n_rollouts; ++rep) {
            Eigen::VectorXd obs = data.obs(i, 0);
            for (int t0 = 0; t0 < T; ++t0) {
                acc(t0) += expected_reward(obs);
                if (t0 + 1 >= T) break;
                const int a = sample_categorical(rng, pi.probs(obs));
                if (tabular) {
                    const int so = static_cast<int>(std::llround(obs(0)));
                    obs(0) = static_cast<double>(
                        sample_categorical(rng, Eigen::VectorXd(p_table.row(so * nA + a))));
                } else {
                    Eigen::VectorXd z(d);
                    for (int j = 0; j < d; ++j) z(j) = sample_normal(rng);
                    obs = tcoef * obs + tshift.row(a).transpose() + chol.matrixL() * z;
                }
            }
        }
        grid.row(i) = acc.transpose() / static_cast<double>(n_rollouts);
    }
    return ValueReport::from_grid("b4", pi.id(), std::move(grid), "", seed);
}

}  // namespace twdidp::baselines
