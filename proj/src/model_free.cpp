#include "twdidp/model_free.hpp"

#include <cmath>
#include <limits>

namespace twdidp::model_free {

int BackwardConfig::effective_max_stages(int n_individuals, int n_timepoints) const {
    const double nt = static_cast<double>(n_individuals) * n_timepoints;
    int k = max_stages.value_or(static_cast<int>(std::ceil(10.0 * std::log(std::max(nt, 2.0)))));
    if (k < 1) throw ValidationError("max_stages must be >= 1");
    // the deepest usable stage keeps two time columns in its panel
    return std::min(k, n_timepoints - 1);
}

double QFunctionStage::v(int i, int s, const Eigen::VectorXd& obs, const Policy& pi) const {
    const Eigen::VectorXd p = pi.probs(obs);
    double out = 0.0;
    for (int a = 0; a < fit.n_actions; ++a)
        if (p(a) != 0.0) out += p(a) * q(i, s, obs, a);
    return out;
}

namespace {

struct CellFeatures {
    // Row (t*N + i) holds the policy-weighted basis features
    // concat_a pi(a|O_it) * phi(O_it): the dot product with a stage's beta is
    // the policy-averaged main effect at that cell.
    Eigen::MatrixXd weighted;  // (N*T) x (n_actions * L)
};

CellFeatures make_cell_features(const TrajectorySet& data, const Policy& pi,
                                const sieve::BasisSpec& basis) {
    const int N = data.n_individuals, T = data.n_timepoints;
    const int L = basis.size();
    const int nA = data.n_actions;
    CellFeatures f;
    f.weighted.resize(static_cast<Eigen::Index>(N) * T, static_cast<Eigen::Index>(nA) * L);
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < N; ++i) {
            const Eigen::Index row = static_cast<Eigen::Index>(t) * N + i;
            const Eigen::VectorXd obs = data.observations.row(row);
            const Eigen::VectorXd p = policy_probs(pi, obs);
            const Eigen::VectorXd phi = basis.eval(obs);
            for (int a = 0; a < nA; ++a)
                f.weighted.row(row).segment(static_cast<Eigen::Index>(a) * L, L) =
                    p(a) * phi.transpose();
        }
    }
    return f;
}

TwoWayFit fit_stage(const TrajectorySet& data, const BackwardConfig& cfg,
                    const Eigen::MatrixXd& responses, int k) {
    const auto panel = sieve::make_stage_panel(data, responses, k);
    if (cfg.solver == SolverKind::Profile)
        return sieve::profile_solve(panel, cfg.basis, data.n_actions);
    return sieve::fwl_solve(panel, cfg.basis, data.n_actions, cfg.ridge);
}

}  // namespace

QFunctionStage fit_stage_one(const TrajectorySet& data, const BackwardConfig& cfg) {
    const auto validation = validate_trajectories(data);
    if (!validation.ok()) throw ValidationError(validation.summary());
    QFunctionStage stage;
    stage.k = 1;
    stage.fit = fit_stage(data, cfg, data.rewards, 1);
    return stage;
}

std::vector<QFunctionStage> backward_induct(const TrajectorySet& data, const Policy& pi,
                                            int t_star, const BackwardConfig& cfg) {
    const int N = data.n_individuals, T = data.n_timepoints;
    if (t_star < 1 || t_star > T)
        throw ValidationError("t_star must lie in [1, T]");
    if (T < 2)
        throw InsufficientDataError("backward induction needs at least two time points");
    if (pi.n_actions() != data.n_actions)
        throw ValidationError("policy action count does not match the data");
    if (cfg.degeneracy_tol <= 0) throw ValidationError("degeneracy_tol must be positive");

    const int K = std::min(t_star, cfg.effective_max_stages(N, T));
    const auto features = make_cell_features(data, pi, cfg.basis);

    std::vector<QFunctionStage> stages;
    stages.reserve(K);
    try {
        stages.push_back(fit_stage_one(data, cfg));
    } catch (const SingularDesignError& e) {
        throw SingularDesignError(std::string("stage 1: ") + e.what());
    }

    for (int k = 2; k <= K; ++k) {
        const int Tk = T - k + 1;
        const TwoWayFit& prev = stages.back().fit;
        Eigen::MatrixXd pseudo(N, Tk);
        for (int s = 0; s < Tk; ++s) {
            for (int i = 0; i < N; ++i) {
                const Eigen::Index cell = static_cast<Eigen::Index>(s + 1) * N + i;
                pseudo(i, s) = prev.offset + prev.theta(i) + prev.lambda(s + 1) +
                               features.weighted.row(cell).dot(prev.beta);
            }
        }
        QFunctionStage stage;
        stage.k = k;
        try {
            stage.fit = fit_stage(data, cfg, pseudo, k);
        } catch (const SingularDesignError& e) {
            throw SingularDesignError("stage " + std::to_string(k) + ": " + e.what());
        }
        stages.push_back(std::move(stage));
        if (stage_main_effect_spread(data, stages.back()) < cfg.degeneracy_tol) break;
    }
    return stages;
}

ValueReport estimate_values(const TrajectorySet& data, const Policy& pi,
                            const BackwardConfig& cfg) {
    const int N = data.n_individuals, T = data.n_timepoints;
    const auto stages = backward_induct(data, pi, T, cfg);
    const int K = static_cast<int>(stages.size());
    const auto features = make_cell_features(data, pi, cfg.basis);

    Eigen::MatrixXd grid(N, T);
    for (int ts = 1; ts <= T; ++ts) {
        const TwoWayFit& fit = stages[std::min(ts, K) - 1].fit;
        // For horizons beyond the deepest stage the stage function is reused
        // at the start time whose target equals ts.
        const int sidx = ts <= K ? 0 : ts - K;
        for (int i = 0; i < N; ++i) {
            grid(i, ts - 1) = fit.offset + fit.theta(i) + fit.lambda(sidx) +
                              features.weighted.row(i).dot(fit.beta);
        }
    }
    return ValueReport::from_grid("twdidp-mf", pi.id(), std::move(grid));
}

double stage_main_effect_spread(const TrajectorySet& data, const QFunctionStage& stage) {
    const TwoWayFit& fit = stage.fit;
    const int L = fit.basis.size();
    double sum = 0.0;
    double mx = -std::numeric_limits<double>::infinity();
    double mn = std::numeric_limits<double>::infinity();
    long count = 0;
    const Eigen::Index rows = data.observations.rows();
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::VectorXd phi = fit.basis.eval(data.observations.row(r));
        for (int a = 0; a < fit.n_actions; ++a) {
            const double v = phi.dot(fit.beta.segment(static_cast<Eigen::Index>(a) * L, L));
            sum += v;
            mx = std::max(mx, v);
            mn = std::min(mn, v);
            ++count;
        }
    }
    const double mean = sum / static_cast<double>(count);
    return std::max(mx - mean, mean - mn);
}

}  // namespace twdidp::model_free
