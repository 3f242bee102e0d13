#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "twdidp/envsim.hpp"
#include "twdidp/model_based.hpp"
#include "twdidp/model_free.hpp"
#include "twdidp/random.hpp"

using namespace twdidp;
using namespace twdidp::model_based;

namespace {

Policy target_policy() {
    return Policy::observation_agnostic((Eigen::VectorXd(2) << 0.2, 0.8).finished(), "pi08");
}

TrajectorySet random_tabular(int N, int T, uint64_t seed) {
    const auto spec = envsim::make_preset("paper-tabular", N, T, seed);
    return envsim::generate(spec);
}

// mixture transition model copied from an environment's true tables
MixtureTransitionModel model_from_spec(const envsim::EnvSpec& spec) {
    MixtureTransitionModel m;
    m.weights = spec.weights;
    m.obs_kind = spec.obs_kind;
    m.n_actions = spec.n_actions;
    m.p0_table = spec.p0_table;
    m.pu_table = spec.pu_table;
    m.pv_table = spec.pv_table;
    return m;
}

}  // namespace

TEST_CASE("e-step: single live component takes all responsibility") {
    const auto spec = envsim::make_preset("paper-tabular", 5, 6, 21);
    const auto data = envsim::generate(spec);
    auto model = model_from_spec(spec);
    model.weights = Eigen::Vector3d(1.0, 0.0, 0.0);
    const auto e = em_e_step(data, model);
    CHECK((e.resp.r[0].array() - 1.0).abs().maxCoeff() < 1e-14);
    CHECK(e.resp.r[1].cwiseAbs().maxCoeff() == 0.0);
    CHECK(e.resp.r[2].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("e-step: identical components split by weight") {
    const auto spec = envsim::make_preset("paper-tabular", 5, 6, 22);
    const auto data = envsim::generate(spec);
    auto model = model_from_spec(spec);
    model.weights = Eigen::Vector3d(0.0, 0.5, 0.5);
    // make the individual and time components identical distributions
    model.pu_table.setConstant(0.5);
    model.pv_table.setConstant(0.5);
    const auto e = em_e_step(data, model);
    CHECK((e.resp.r[1].array() - 0.5).abs().maxCoeff() < 1e-14);
    CHECK((e.resp.r[2].array() - 0.5).abs().maxCoeff() < 1e-14);
}

TEST_CASE("e-step: log-likelihood matches full label enumeration") {
    const auto spec = envsim::make_preset("paper-tabular", 3, 4, 23);
    const auto data = envsim::generate(spec);
    const auto model = model_from_spec(spec);
    const auto e = em_e_step(data, model);

    // brute force: sum the complete-data likelihood over all 3^(N*(T-1))
    // label assignments
    const int cells = 3 * 3;
    double total = 0.0;
    for (long mask = 0; mask < static_cast<long>(std::pow(3, cells)); ++mask) {
        long rem = mask;
        double prod = 1.0;
        for (int c = 0; c < cells; ++c) {
            const int z = rem % 3;
            rem /= 3;
            const int i = c % 3, t0 = c / 3;
            prod *= model.weights(z) *
                    model.component_density(z, data, i, t0, data.obs(i, t0 + 1));
        }
        total += prod;
    }
    CHECK(e.log_likelihood == doctest::Approx(std::log(total)).epsilon(1e-10));
}

TEST_CASE("e-step: dead cells are reported") {
    const auto spec = envsim::make_preset("paper-tabular", 4, 4, 24);
    auto data = envsim::generate(spec);
    auto model = model_from_spec(spec);
    // all three components put zero mass on state 1 arrivals
    model.p0_table.col(1).setZero();
    model.p0_table.col(0).setOnes();
    model.pu_table.col(1).setZero();
    model.pu_table.col(0).setOnes();
    model.pv_table.col(1).setZero();
    model.pv_table.col(0).setOnes();
    // force one arrival at state 1
    data.observations(static_cast<Eigen::Index>(1) * 4 + 0, 0) = 1.0;
    try {
        em_e_step(data, model);
        FAIL("expected DegenerateDensityError");
    } catch (const DegenerateDensityError& err) {
        CHECK(!err.cells.empty());
        CHECK(err.cells[0].first == 1);
        CHECK(err.cells[0].second == 1);
    }
}

TEST_CASE("m-step: uniform responsibilities give uniform weights") {
    const auto data = random_tabular(6, 6, 25);
    Responsibilities resp;
    for (auto& r : resp.r) r = Eigen::MatrixXd::Constant(6, 5, 1.0 / 3.0);
    const auto res = em_m_step(data, resp, em_init(data));
    CHECK(res.model.weights(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(res.model.weights(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(res.model.weights(2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("m-step: exact linear-Gaussian recovery with full shared responsibility") {
    // zero-noise linear transitions
    const int N = 6, T = 8;
    TrajectorySet d;
    d.n_individuals = N;
    d.n_timepoints = T;
    d.n_actions = 2;
    d.obs_kind = ObsKind::continuous(1);
    d.observations.resize(N * T, 1);
    d.actions.resize(N, T);
    d.rewards = Eigen::MatrixXd::Zero(N, T);
    std::mt19937_64 rng = make_rng(26);
    const double lam = -0.4, psi0 = 0.3, psi1 = 1.2;
    for (int i = 0; i < N; ++i) {
        double o = sample_normal(rng);
        for (int t = 0; t < T; ++t) {
            d.observations(static_cast<Eigen::Index>(t) * N + i, 0) = o;
            const int a = uniform01(rng) < 0.5 ? 0 : 1;
            d.actions(i, t) = a;
            o = lam * o + (a == 1 ? psi1 : psi0);
        }
    }
    Responsibilities resp;
    resp.r[0] = Eigen::MatrixXd::Ones(N, T - 1);
    resp.r[1] = Eigen::MatrixXd::Zero(N, T - 1);
    resp.r[2] = Eigen::MatrixXd::Zero(N, T - 1);
    const auto res = em_m_step(d, resp, em_init(d));
    CHECK(res.model.trans_coef(0, 0) == doctest::Approx(lam).epsilon(1e-8));
    CHECK(res.model.act_shift(0, 0) == doctest::Approx(psi0).epsilon(1e-8));
    CHECK(res.model.act_shift(1, 0) == doctest::Approx(psi1).epsilon(1e-8));
    // frozen components are reported for the dead blocks
    CHECK(!res.frozen.empty());
}

TEST_CASE("m-step: matches a numerical maximizer of the responsibility objective") {
    const auto data = random_tabular(2, 3, 27);
    std::mt19937_64 rng = make_rng(28);
    Responsibilities resp;
    for (auto& r : resp.r) r.resize(2, 2);
    for (int i = 0; i < 2; ++i) {
        for (int t = 0; t < 2; ++t) {
            Eigen::Vector3d v(uniform01(rng), uniform01(rng), uniform01(rng));
            v /= v.sum();
            for (int z = 0; z < 3; ++z) resp.r[z](i, t) = v(z);
        }
    }
    const auto res = em_m_step(data, resp, em_init(data));

    // the expected complete-data objective separates per categorical row;
    // golden-section search over the single free probability of each
    // two-state row is an independent numerical maximizer
    auto gamma_row = [&](int z, auto in_row, double p1) {
        double val = 0.0;
        for (int i = 0; i < 2; ++i)
            for (int t0 = 0; t0 < 2; ++t0) {
                if (!in_row(i, t0)) continue;
                const int arrival = data.state(i, t0 + 1);
                const double pr = arrival == 1 ? p1 : 1.0 - p1;
                val += resp.r[z](i, t0) * std::log(std::max(pr, 1e-300));
            }
        return val;
    };
    auto golden = [&](auto objective) {
        const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
        double a = 1e-12, b = 1.0 - 1e-12;
        double c = b - gr * (b - a), d2 = a + gr * (b - a);
        for (int it = 0; it < 200; ++it) {
            if (objective(c) > objective(d2))
                b = d2;
            else
                a = c;
            c = b - gr * (b - a);
            d2 = a + gr * (b - a);
        }
        return 0.5 * (a + b);
    };

    // shared component rows, one per (state, action) context with support
    for (int s = 0; s < 2; ++s) {
        for (int a = 0; a < 2; ++a) {
            auto in_row = [&](int i, int t0) {
                return data.state(i, t0) == s && data.actions(i, t0) == a;
            };
            double mass = 0.0;
            for (int i = 0; i < 2; ++i)
                for (int t0 = 0; t0 < 2; ++t0)
                    if (in_row(i, t0)) mass += resp.r[0](i, t0);
            if (mass < 1e-8) continue;
            const double best =
                golden([&](double p1) { return gamma_row(0, in_row, p1); });
            CHECK(res.model.p0_table(s * 2 + a, 1) == doctest::Approx(best).epsilon(1e-6));
        }
    }
    // individual components
    for (int i = 0; i < 2; ++i) {
        auto in_row = [&](int ii, int) { return ii == i; };
        const double best = golden([&](double p1) { return gamma_row(1, in_row, p1); });
        CHECK(res.model.pu_table(i, 1) == doctest::Approx(best).epsilon(1e-6));
    }
    // time components
    for (int t0 = 0; t0 < 2; ++t0) {
        auto in_row = [&](int, int tt) { return tt == t0; };
        const double best = golden([&](double p1) { return gamma_row(2, in_row, p1); });
        CHECK(res.model.pv_table(t0, 1) == doctest::Approx(best).epsilon(1e-6));
    }
}

TEST_CASE("em_fit: truth-initialized deterministic chain converges immediately") {
    // deterministic single-component dynamics
    auto spec = envsim::make_preset("paper-tabular", 5, 6, 29);
    spec.weights = Eigen::Vector3d(1.0, 0.0, 0.0);
    for (int o = 0; o < 2; ++o)
        for (int a = 0; a < 2; ++a) {
            const int nxt = (o + a) % 2;
            spec.p0_table.row(spec.p0_row(o, a)).setZero();
            spec.p0_table(spec.p0_row(o, a), nxt) = 1.0;
        }
    const auto data = envsim::generate(spec);
    auto model = model_from_spec(spec);
    const auto fit = em_fit(data, model, 1e-8, 50);
    CHECK(fit.converged);
    CHECK(fit.iterations <= 2);
}

TEST_CASE("em_fit: one-cycle budget returns a trace of length two") {
    const auto data = random_tabular(6, 6, 30);
    const auto fit = em_fit(data, em_init(data), 1e-12, 1);
    CHECK(fit.trace.size() == 2);
    CHECK(fit.iterations == 1);
}

TEST_CASE("em_fit: log-likelihood trace is monotone on both observation kinds") {
    for (int seed = 0; seed < 10; ++seed) {
        for (const auto* preset : {"paper-tabular", "paper-continuous"}) {
            const auto spec = envsim::make_preset(preset, 12, 12, derive_seed(5150, seed));
            const auto data = envsim::generate(spec);
            const auto fit = em_fit(data, em_init(data), 1e-10, 30);
            for (size_t k = 1; k < fit.trace.size(); ++k)
                CHECK(fit.trace[k] >= fit.trace[k - 1] - 1e-9);
        }
    }
}

TEST_CASE("responsibilities: every cell is a simplex") {
    const auto spec = envsim::make_preset("paper-continuous", 8, 8, 31);
    const auto data = envsim::generate(spec);
    const auto fit = em_fit(data, em_init(data), 1e-8, 10);
    const auto e = em_e_step(data, fit.model);
    for (int i = 0; i < 8; ++i)
        for (int t0 = 0; t0 < 7; ++t0) {
            const double s =
                e.resp.r[0](i, t0) + e.resp.r[1](i, t0) + e.resp.r[2](i, t0);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
        }
    // weights stay on the simplex through the m-step
    const auto m = em_m_step(data, e.resp, fit.model);
    CHECK(m.model.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.model.weights.minCoeff() >= 0.0);
}

namespace {

TwoWayFit reward_fit_from_spec(const envsim::EnvSpec& spec) {
    TwoWayFit fit;
    fit.basis = sieve::BasisSpec::indicator(2);
    fit.n_actions = 2;
    fit.beta.resize(4);
    // block order: action-major, beta[a*L + state]
    for (int a = 0; a < 2; ++a)
        for (int s = 0; s < 2; ++s) fit.beta(a * 2 + s) = spec.weights(0) * spec.r0_table(s, a);
    Eigen::VectorXd th(spec.n_individuals), la(spec.n_timepoints);
    for (int i = 0; i < spec.n_individuals; ++i) th(i) = spec.theta(i);
    for (int t = 0; t < spec.n_timepoints; ++t) la(t) = spec.lambda(t);
    fit.offset = th.mean() + la.mean();
    fit.theta = th.array() - th.mean();
    fit.lambda = la.array() - la.mean();
    return fit;
}

}  // namespace

TEST_CASE("rollouts: deterministic dynamics reproduce the exact grid") {
    auto spec = envsim::make_preset("paper-tabular", 4, 6, 33);
    spec.weights = Eigen::Vector3d(1.0, 0.0, 0.0);
    spec.ru_mean.setZero();
    spec.rv_mean.setZero();
    // deterministic transition o' = (o + a) mod 2 under a deterministic policy
    for (int o = 0; o < 2; ++o)
        for (int a = 0; a < 2; ++a) {
            spec.p0_table.row(spec.p0_row(o, a)).setZero();
            spec.p0_table(spec.p0_row(o, a), (o + a) % 2) = 1.0;
        }
    const auto data = envsim::generate(spec);
    const auto pi =
        Policy::observation_agnostic((Eigen::VectorXd(2) << 0.0, 1.0).finished(), "always1");
    const auto model = model_from_spec(spec);
    const auto reward = reward_fit_from_spec(spec);
    const auto report = rollout_values(model, reward, data, pi, 3, 99);
    const auto truth = envsim::dp_oracle_tabular(spec, pi);
    CHECK((report.eta_it - truth).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("rollouts: true parameters match the exact oracle within monte-carlo error") {
    const auto spec = envsim::make_preset("paper-tabular", 6, 8, 34);
    const auto data = envsim::generate(spec);
    const auto pi = target_policy();
    const auto model = model_from_spec(spec);
    const auto reward = reward_fit_from_spec(spec);
    const auto truth = envsim::dp_oracle_tabular(spec, pi);

    const int batches = 20, per_batch = 500;
    std::vector<Eigen::MatrixXd> means;
    for (int b = 0; b < batches; ++b)
        means.push_back(
            rollout_values(model, reward, data, pi, per_batch, derive_seed(35, b)).eta_it);
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(6, 8), var = Eigen::MatrixXd::Zero(6, 8);
    for (const auto& m : means) mean += m / batches;
    for (const auto& m : means) var += (m - mean).cwiseAbs2() / (batches - 1.0);
    const Eigen::MatrixXd se = (var / batches).cwiseSqrt();
    int outside = 0;
    for (int i = 0; i < 6; ++i)
        for (int t = 0; t < 8; ++t)
            if (std::abs(mean(i, t) - truth(i, t)) > 3.0 * se(i, t) + 1e-9) ++outside;
    CHECK(outside == 0);
}

TEST_CASE("rollouts: monte-carlo error shrinks like the square root of the budget") {
    const auto spec = envsim::make_preset("paper-tabular", 5, 6, 36);
    const auto data = envsim::generate(spec);
    const auto pi = target_policy();
    const auto model = model_from_spec(spec);
    const auto reward = reward_fit_from_spec(spec);
    const int seeds = 30;
    auto sd_of_eta = [&](int rollouts, uint64_t base) {
        double s = 0.0, s2 = 0.0;
        for (int k = 0; k < seeds; ++k) {
            const double eta =
                rollout_values(model, reward, data, pi, rollouts, derive_seed(base, k)).eta;
            s += eta;
            s2 += eta * eta;
        }
        const double mean = s / seeds;
        return std::sqrt(std::max((s2 - seeds * mean * mean) / (seeds - 1.0), 1e-30));
    };
    const double ratio = sd_of_eta(16, 400) / sd_of_eta(8, 500);
    CHECK(ratio >= 0.6);
    CHECK(ratio <= 0.85);
}

TEST_CASE("rollouts: seeded runs are bit-identical and thread-count invariant") {
    const auto spec = envsim::make_preset("paper-continuous", 6, 7, 37);
    const auto data = envsim::generate(spec);
    const auto pi = target_policy();
    const auto fit = em_fit(data, em_init(data), 1e-8, 15);
    model_free::BackwardConfig cfg;
    cfg.basis = sieve::BasisSpec::polynomial({3});
    cfg.ridge = 1e-8;
    const auto stage1 = model_free::fit_stage_one(data, cfg);
    const auto a = rollout_values(fit.model, stage1.fit, data, pi, 50, 123, 1);
    const auto b = rollout_values(fit.model, stage1.fit, data, pi, 50, 123, 2);
    CHECK((a.eta_it - b.eta_it).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("serialization: model json round-trips exactly") {
    const auto spec = envsim::make_preset("paper-continuous", 5, 6, 38);
    const auto data = envsim::generate(spec);
    const auto fit = em_fit(data, em_init(data), 1e-8, 8);
    const auto text = model_to_json(fit.model, "digest123");
    const auto back = model_from_json(text);
    CHECK(back.weights == fit.model.weights);
    CHECK(back.trans_coef == fit.model.trans_coef);
    CHECK(back.act_shift == fit.model.act_shift);
    CHECK(back.sigma0 == fit.model.sigma0);
    CHECK(back.mu_u == fit.model.mu_u);
    CHECK(back.mu_v == fit.model.mu_v);
    for (size_t i = 0; i < fit.model.sigma_u.size(); ++i)
        CHECK(back.sigma_u[i] == fit.model.sigma_u[i]);

    const auto path = std::filesystem::temp_directory_path() / "twdidp_model.json";
    save_model(path.string(), fit.model);
    const auto loaded = load_model(path.string());
    CHECK(loaded.mu_u == fit.model.mu_u);
    std::filesystem::remove(path);

    // tabular round trip
    const auto tspec = envsim::make_preset("paper-tabular", 4, 5, 39);
    const auto tdata = envsim::generate(tspec);
    const auto tfit = em_fit(tdata, em_init(tdata), 1e-8, 5);
    const auto tb = model_from_json(model_to_json(tfit.model, ""));
    CHECK(tb.p0_table == tfit.model.p0_table);
    CHECK(tb.pu_table == tfit.model.pu_table);
    CHECK(tb.pv_table == tfit.model.pv_table);
}
