#include "twdidp/model_based.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <atomic>
#include <fstream>
#include <thread>

#include "twdidp/random.hpp"
#include <json.hpp>

namespace twdidp::model_based {

namespace {

constexpr double kCovFloor = 1e-8;
constexpr double kRespFloor = 1e-8;

Eigen::MatrixXd floor_covariance(const Eigen::MatrixXd& sigma) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        0.5 * (sigma + sigma.transpose()));
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(kCovFloor);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double gaussian_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                        const Eigen::MatrixXd& sigma) {
    const int d = static_cast<int>(x.size());
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) return 0.0;
    const Eigen::VectorXd diff = x - mu;
    const Eigen::VectorXd w = llt.matrixL().solve(diff);
    double logdet = 0.0;
    for (int j = 0; j < d; ++j) logdet += std::log(llt.matrixL()(j, j));
    const double logd = -0.5 * w.squaredNorm() - logdet - 0.5 * d * std::log(2.0 * M_PI);
    return std::exp(logd);
}

}  // namespace

double MixtureTransitionModel::component_density(int z, const TrajectorySet& data, int i,
                                                 int t0, const Eigen::VectorXd& onext) const {
    if (obs_kind.is_tabular()) {
        const int sn = static_cast<int>(std::llround(onext(0)));
        switch (z) {
            case 0: {
                const int so = data.state(i, t0);
                return p0_table(p0_row(so, data.actions(i, t0)), sn);
            }
            case 1: return pu_table(i, sn);
            case 2: return pv_table(t0, sn);
        }
    } else {
        switch (z) {
            case 0: {
                const Eigen::VectorXd ocur = data.obs(i, t0);
                const Eigen::VectorXd mu =
                    trans_coef * ocur + act_shift.row(data.actions(i, t0)).transpose();
                return gaussian_density(onext, mu, sigma0);
            }
            case 1: return gaussian_density(onext, mu_u.row(i), sigma_u[i]);
            case 2: return gaussian_density(onext, mu_v.row(t0), sigma_v[t0]);
        }
    }
    throw ValidationError("component index out of range");
}

void MixtureTransitionModel::validate() const {
    if (!(weights.array() >= 0.0).all() || std::abs(weights.sum() - 1.0) > 1e-10)
        throw ValidationError("mixture weights must be a simplex");
    if (obs_kind.is_tabular()) {
        auto check_rows = [&](const Eigen::MatrixXd& m, const char* what) {
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                const double s = m.row(r).sum();
                if ((m.row(r).array() < -1e-12).any() || std::abs(s - 1.0) > 1e-8)
                    throw ValidationError(std::string(what) + " row " + std::to_string(r) +
                                          " is not a distribution");
            }
        };
        check_rows(p0_table, "p0_table");
        check_rows(pu_table, "pu_table");
        check_rows(pv_table, "pv_table");
    } else {
        auto check_cov = [&](const Eigen::MatrixXd& s, const char* what) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
            if (es.eigenvalues().minCoeff() < kCovFloor * 0.5)
                throw ValidationError(std::string(what) + ": covariance below floor");
        };
        check_cov(sigma0, "sigma0");
        for (const auto& s : sigma_u) check_cov(s, "sigma_u");
        for (const auto& s : sigma_v) check_cov(s, "sigma_v");
    }
}

EStepResult em_e_step(const TrajectorySet& data, const MixtureTransitionModel& theta) {
    theta.validate();
    const int N = data.n_individuals, T = data.n_timepoints;
    if (T < 2) throw InsufficientDataError("need at least one transition per individual");

    EStepResult out;
    for (auto& m : out.resp.r) m = Eigen::MatrixXd::Zero(N, T - 1);
    std::vector<std::pair<int, int>> dead;
    double ll = 0.0;
    for (int t0 = 0; t0 + 1 < T; ++t0) {
        for (int i = 0; i < N; ++i) {
            const Eigen::VectorXd onext = data.obs(i, t0 + 1);
            double num[3];
            double tot = 0.0;
            for (int z = 0; z < 3; ++z) {
                num[z] = theta.weights(z) > 0.0
                             ? theta.weights(z) * theta.component_density(z, data, i, t0, onext)
                             : 0.0;
                tot += num[z];
            }
            if (!(tot > 0.0) || !std::isfinite(tot)) {
                dead.emplace_back(i + 1, t0 + 1);
                continue;
            }
            for (int z = 0; z < 3; ++z) out.resp.r[z](i, t0) = num[z] / tot;
            ll += std::log(tot);
        }
    }
    if (!dead.empty()) {
        std::string msg = "degenerate density at " + std::to_string(dead.size()) +
                          " cell(s), first (" + std::to_string(dead[0].first) + "," +
                          std::to_string(dead[0].second) + ")";
        throw DegenerateDensityError(std::move(msg), std::move(dead));
    }
    out.log_likelihood = ll;
    return out;
}

MStepResult em_m_step(const TrajectorySet& data, const Responsibilities& resp,
                      const MixtureTransitionModel& previous) {
    const int N = data.n_individuals, T = data.n_timepoints;
    if (resp.n_individuals() != N || resp.n_transitions() != T - 1)
        throw ValidationError("responsibility tensor shape mismatch");

    MStepResult out;
    MixtureTransitionModel& m = out.model;
    m = previous;

    const double cells = static_cast<double>(N) * (T - 1);
    Eigen::Vector3d totals;
    for (int z = 0; z < 3; ++z) totals(z) = resp.r[z].sum();
    m.weights = totals / cells;
    // guard against tiny negative rounding
    m.weights = m.weights.cwiseMax(0.0);
    m.weights /= m.weights.sum();

    if (data.obs_kind.is_tabular()) {
        const int S = data.obs_kind.n_states;
        // shared component: weighted frequencies per (state, action) context
        Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(S * data.n_actions, S);
        Eigen::MatrixXd ucounts = Eigen::MatrixXd::Zero(N, S);
        Eigen::MatrixXd vcounts = Eigen::MatrixXd::Zero(T - 1, S);
        for (int t0 = 0; t0 + 1 < T; ++t0) {
            for (int i = 0; i < N; ++i) {
                const int so = data.state(i, t0), sn = data.state(i, t0 + 1);
                counts(m.p0_row(so, data.actions(i, t0)), sn) += resp.r[0](i, t0);
                ucounts(i, sn) += resp.r[1](i, t0);
                vcounts(t0, sn) += resp.r[2](i, t0);
            }
        }
        auto normalize_rows = [&](Eigen::MatrixXd& target, const Eigen::MatrixXd& cnt,
                                  const std::string& label) {
            for (Eigen::Index r = 0; r < cnt.rows(); ++r) {
                const double tot = cnt.row(r).sum();
                if (tot < kRespFloor) {
                    out.frozen.push_back(label + "[" + std::to_string(r) + "]");
                    continue;
                }
                target.row(r) = cnt.row(r) / tot;
            }
        };
        normalize_rows(m.p0_table, counts, "p0");
        normalize_rows(m.pu_table, ucounts, "pu");
        normalize_rows(m.pv_table, vcounts, "pv");
        return out;
    }

    const int d = data.obs_kind.dim;
    const int nA = data.n_actions;

    // shared component: weighted least squares of the arrival on
    // (current observation, action indicators), then weighted residual cov.
    if (totals(0) >= kRespFloor) {
        const Eigen::Index n_cells = static_cast<Eigen::Index>(N) * (T - 1);
        Eigen::MatrixXd X(n_cells, d + nA);
        Eigen::MatrixXd Y(n_cells, d);
        Eigen::VectorXd w(n_cells);
        Eigen::Index row = 0;
        for (int t0 = 0; t0 + 1 < T; ++t0) {
            for (int i = 0; i < N; ++i, ++row) {
                X.row(row).head(d) = data.obs(i, t0);
                X.row(row).tail(nA).setZero();
                X(row, d + data.actions(i, t0)) = 1.0;
                Y.row(row) = data.obs(i, t0 + 1);
                w(row) = resp.r[0](i, t0);
            }
        }
        const Eigen::MatrixXd Xw = X.array().colwise() * w.array();
        const Eigen::MatrixXd gram = Xw.transpose() * X;
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gram);
        const Eigen::MatrixXd coef = cod.solve(Xw.transpose() * Y);  // (d+nA) x d
        m.trans_coef = coef.topRows(d).transpose();
        m.act_shift = coef.bottomRows(nA);
        const Eigen::MatrixXd resid = Y - X * coef;
        Eigen::MatrixXd s0 = Eigen::MatrixXd::Zero(d, d);
        for (Eigen::Index r = 0; r < n_cells; ++r)
            s0.noalias() += w(r) * resid.row(r).transpose() * resid.row(r);
        m.sigma0 = floor_covariance(s0 / totals(0));
    } else {
        out.frozen.push_back("p0");
    }

    // individual components
    for (int i = 0; i < N; ++i) {
        const double tot = resp.r[1].row(i).sum();
        if (tot < kRespFloor) {
            out.frozen.push_back("pu[" + std::to_string(i) + "]");
            continue;
        }
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
        for (int t0 = 0; t0 + 1 < T; ++t0)
            mu += resp.r[1](i, t0) * data.obs(i, t0 + 1);
        mu /= tot;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
        for (int t0 = 0; t0 + 1 < T; ++t0) {
            const Eigen::VectorXd diff = data.obs(i, t0 + 1) - mu;
            cov.noalias() += resp.r[1](i, t0) * diff * diff.transpose();
        }
        m.mu_u.row(i) = mu;
        m.sigma_u[i] = floor_covariance(cov / tot);
    }

    // time components (arrival-indexed)
    for (int t0 = 0; t0 + 1 < T; ++t0) {
        const double tot = resp.r[2].col(t0).sum();
        if (tot < kRespFloor) {
            out.frozen.push_back("pv[" + std::to_string(t0) + "]");
            continue;
        }
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
        for (int i = 0; i < N; ++i) mu += resp.r[2](i, t0) * data.obs(i, t0 + 1);
        mu /= tot;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
        for (int i = 0; i < N; ++i) {
            const Eigen::VectorXd diff = data.obs(i, t0 + 1) - mu;
            cov.noalias() += resp.r[2](i, t0) * diff * diff.transpose();
        }
        m.mu_v.row(t0) = mu;
        m.sigma_v[t0] = floor_covariance(cov / tot);
    }
    return out;
}

MixtureTransitionModel em_init(const TrajectorySet& data) {
    const int N = data.n_individuals, T = data.n_timepoints;
    if (T < 2) throw InsufficientDataError("need at least one transition per individual");
    MixtureTransitionModel m;
    m.obs_kind = data.obs_kind;
    m.n_actions = data.n_actions;
    m.weights = Eigen::Vector3d::Constant(1.0 / 3.0);

    Responsibilities uniform;
    for (auto& r : uniform.r) r = Eigen::MatrixXd::Constant(N, T - 1, 1.0 / 3.0);

    if (data.obs_kind.is_tabular()) {
        const int S = data.obs_kind.n_states;
        m.p0_table = Eigen::MatrixXd::Constant(S * data.n_actions, S, 1.0 / S);
        m.pu_table = Eigen::MatrixXd::Constant(N, S, 1.0 / S);
        m.pv_table = Eigen::MatrixXd::Constant(T - 1, S, 1.0 / S);
    } else {
        const int d = data.obs_kind.dim;
        m.trans_coef = Eigen::MatrixXd::Zero(d, d);
        m.act_shift = Eigen::MatrixXd::Zero(data.n_actions, d);
        m.sigma0 = Eigen::MatrixXd::Identity(d, d);
        m.mu_u = Eigen::MatrixXd::Zero(N, d);
        m.sigma_u.assign(N, Eigen::MatrixXd::Identity(d, d));
        m.mu_v = Eigen::MatrixXd::Zero(T - 1, d);
        m.sigma_v.assign(T - 1, Eigen::MatrixXd::Identity(d, d));
    }
    // pooled moments via one uniform-responsibility M step
    auto seeded = em_m_step(data, uniform, m);
    seeded.model.weights = Eigen::Vector3d::Constant(1.0 / 3.0);
    if (!data.obs_kind.is_tabular()) {
        // pooled residual covariance as a common starting scale
        for (auto& s : seeded.model.sigma_u) s = seeded.model.sigma0;
        for (auto& s : seeded.model.sigma_v) s = seeded.model.sigma0;
    }
    return seeded.model;
}

EmFitResult em_fit(const TrajectorySet& data, const MixtureTransitionModel& init, double tol,
                   int max_iter) {
    if (tol <= 0) throw ValidationError("tol must be positive");
    if (max_iter < 0) throw ValidationError("max_iter must be nonnegative");
    EmFitResult out;
    out.model = init;
    auto e = em_e_step(data, out.model);
    out.trace.push_back(e.log_likelihood);
    for (int it = 0; it < max_iter; ++it) {
        auto mres = em_m_step(data, e.resp, out.model);
        out.model = std::move(mres.model);
        e = em_e_step(data, out.model);
        out.trace.push_back(e.log_likelihood);
        out.iterations = it + 1;
        const double gain = out.trace[out.trace.size() - 1] - out.trace[out.trace.size() - 2];
        if (gain < tol) {
            out.converged = true;
            break;
        }
    }
    return out;
}

namespace {

Eigen::VectorXd sample_gaussian_vec(std::mt19937_64& rng, const Eigen::VectorXd& mu,
                                    const Eigen::LLT<Eigen::MatrixXd>& chol) {
    Eigen::VectorXd z(mu.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = sample_normal(rng);
    return mu + chol.matrixL() * z;
}

}  // namespace

ValueReport rollout_values(const MixtureTransitionModel& model, const TwoWayFit& reward_fit,
                           const TrajectorySet& data, const Policy& pi, int n_rollouts,
                           uint64_t seed, int threads) {
    model.validate();
    const int N = data.n_individuals, T = data.n_timepoints;
    if (n_rollouts < 1) throw ValidationError("n_rollouts must be >= 1");
    if (reward_fit.lambda.size() != T)
        throw ValidationError("reward fit must come from the full-width stage");

    Eigen::MatrixXd grid = Eigen::MatrixXd::Zero(N, T);

    // pre-factor Gaussian covariances once
    Eigen::LLT<Eigen::MatrixXd> chol0;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> chol_u, chol_v;
    if (!model.obs_kind.is_tabular()) {
        chol0.compute(model.sigma0);
        chol_u.reserve(model.sigma_u.size());
        for (const auto& s : model.sigma_u) chol_u.emplace_back(s);
        chol_v.reserve(model.sigma_v.size());
        for (const auto& s : model.sigma_v) chol_v.emplace_back(s);
    }

    auto run_individual = [&](int i) {
        std::mt19937_64 rng = make_rng(derive_seed(seed, static_cast<uint64_t>(i)));
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(T);
        for (int rep = 0; rep < n_rollouts; ++rep) {
            Eigen::VectorXd obs = data.obs(i, 0);
            for (int t0 = 0; t0 < T; ++t0) {
                const Eigen::VectorXd p = pi.probs(obs);
                double est = 0.0;
                for (int a = 0; a < pi.n_actions(); ++a)
                    if (p(a) != 0.0) est += p(a) * reward_fit.value(i, t0, obs, a);
                acc(t0) += est;
                if (t0 + 1 >= T) break;
                const int a = sample_categorical(rng, p);
                const int z = sample_categorical(rng, model.weights);
                if (model.obs_kind.is_tabular()) {
                    const int so = static_cast<int>(std::llround(obs(0)));
                    Eigen::VectorXd row;
                    if (z == 0)
                        row = model.p0_table.row(model.p0_row(so, a));
                    else if (z == 1)
                        row = model.pu_table.row(i);
                    else
                        row = model.pv_table.row(t0);
                    obs(0) = static_cast<double>(sample_categorical(rng, row));
                } else {
                    if (z == 0) {
                        const Eigen::VectorXd mu =
                            model.trans_coef * obs + model.act_shift.row(a).transpose();
                        obs = sample_gaussian_vec(rng, mu, chol0);
                    } else if (z == 1) {
                        obs = sample_gaussian_vec(rng, model.mu_u.row(i), chol_u[i]);
                    } else {
                        obs = sample_gaussian_vec(rng, model.mu_v.row(t0), chol_v[t0]);
                    }
                }
            }
        }
        grid.row(i) = acc.transpose() / static_cast<double>(n_rollouts);
    };

    if (threads > 1) {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int w = 0; w < threads; ++w) {
            pool.emplace_back([&]() {
                for (int i = next.fetch_add(1); i < N; i = next.fetch_add(1)) run_individual(i);
            });
        }
        for (auto& th : pool) th.join();
    } else {
        for (int i = 0; i < N; ++i) run_individual(i);
    }

    return ValueReport::from_grid("twdidp-mb", pi.id(), std::move(grid), "", seed);
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json mat_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd mat_from_json(const json& j) {
    const auto rows = j.size();
    if (rows == 0) return Eigen::MatrixXd(0, 0);
    const auto cols = j.at(0).size();
    Eigen::MatrixXd m(rows, cols);
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
    return m;
}

}  // namespace

std::string model_to_json(const MixtureTransitionModel& model, const std::string& basis_digest) {
    json j;
    j["weights"] = {model.weights(0), model.weights(1), model.weights(2)};
    j["obs_kind"] = model.obs_kind.is_tabular() ? "tabular" : "continuous";
    j["n_states"] = model.obs_kind.n_states;
    j["dim"] = model.obs_kind.dim;
    j["n_actions"] = model.n_actions;
    j["basis_digest"] = basis_digest;
    if (model.obs_kind.is_tabular()) {
        j["p0_table"] = mat_to_json(model.p0_table);
        j["pu_table"] = mat_to_json(model.pu_table);
        j["pv_table"] = mat_to_json(model.pv_table);
    } else {
        j["trans_coef"] = mat_to_json(model.trans_coef);
        j["act_shift"] = mat_to_json(model.act_shift);
        j["sigma0"] = mat_to_json(model.sigma0);
        j["mu_u"] = mat_to_json(model.mu_u);
        j["mu_v"] = mat_to_json(model.mu_v);
        json su = json::array(), sv = json::array();
        for (const auto& s : model.sigma_u) su.push_back(mat_to_json(s));
        for (const auto& s : model.sigma_v) sv.push_back(mat_to_json(s));
        j["sigma_u"] = std::move(su);
        j["sigma_v"] = std::move(sv);
    }
    return j.dump(2);
}

MixtureTransitionModel model_from_json(const std::string& text) {
    const json j = json::parse(text);
    MixtureTransitionModel m;
    m.weights = Eigen::Vector3d(j.at("weights").at(0).get<double>(),
                                j.at("weights").at(1).get<double>(),
                                j.at("weights").at(2).get<double>());
    const bool tab = j.at("obs_kind").get<std::string>() == "tabular";
    m.obs_kind = tab ? ObsKind::tabular(j.at("n_states").get<int>())
                     : ObsKind::continuous(j.at("dim").get<int>());
    m.n_actions = j.at("n_actions").get<int>();
    if (tab) {
        m.p0_table = mat_from_json(j.at("p0_table"));
        m.pu_table = mat_from_json(j.at("pu_table"));
        m.pv_table = mat_from_json(j.at("pv_table"));
    } else {
        m.trans_coef = mat_from_json(j.at("trans_coef"));
        m.act_shift = mat_from_json(j.at("act_shift"));
        m.sigma0 = mat_from_json(j.at("sigma0"));
        m.mu_u = mat_from_json(j.at("mu_u"));
        m.mu_v = mat_from_json(j.at("mu_v"));
        for (const auto& s : j.at("sigma_u")) m.sigma_u.push_back(mat_from_json(s));
        for (const auto& s : j.at("sigma_v")) m.sigma_v.push_back(mat_from_json(s));
    }
    return m;
}

void save_model(const std::string& path, const MixtureTransitionModel& model,
                const std::string& basis_digest) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open " + path + " for writing");
    out << model_to_json(model, basis_digest);
}

MixtureTransitionModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return model_from_json(text);
}

}  // namespace twdidp::model_based
