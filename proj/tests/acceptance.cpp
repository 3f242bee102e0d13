// Acceptance suite: every release criterion in one binary, one PASS/FAIL
// line per criterion. Exit status is the number of failed criteria.

#include <Eigen/SVD>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include "twdidp/baselines.hpp"
#include "twdidp/envsim.hpp"
#include "twdidp/harness.hpp"
#include "twdidp/model_based.hpp"
#include "twdidp/model_free.hpp"
#include "twdidp/random.hpp"
#include "twdidp/sieve.hpp"

using namespace twdidp;

namespace {

int g_failures = 0;

struct Criterion {
    int id;
    std::string label;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void finish(bool ok, const std::string& detail) const {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::ostringstream os;
        os << (ok ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << label << " — "
           << detail << " (" << secs << " s)";
        std::cout << os.str() << std::endl;
        if (!ok) ++g_failures;
    }
};

Eigen::VectorXd stacked(const Eigen::MatrixXd& m) {
    return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

sieve::BasisFn random_features(std::mt19937_64& rng, int L) {
    std::vector<double> freq(L), phase(L);
    for (int j = 0; j < L; ++j) {
        freq[j] = 0.5 + 2.5 * uniform01(rng);
        phase[j] = 6.28 * uniform01(rng);
    }
    return [freq, phase, L](const Eigen::VectorXd& o) {
        Eigen::VectorXd v(L);
        for (int j = 0; j < L; ++j) v(j) = std::sin(freq[j] * o(0) + phase[j]);
        return v;
    };
}

struct DrawnPanel {
    sieve::StagePanel panel;
    Eigen::MatrixXd design;
};

DrawnPanel draw_panel(std::mt19937_64& rng, int N, int Tk, int L, int n_actions,
                      const Eigen::VectorXd* beta = nullptr, const Eigen::VectorXd* theta = nullptr,
                      const Eigen::VectorXd* lambda = nullptr, double noise = 1.0) {
    DrawnPanel out;
    sieve::StagePanel& p = out.panel;
    p.k = 1;
    p.observations.resize(static_cast<Eigen::Index>(N) * Tk, 1);
    p.actions.resize(N, Tk);
    p.responses.resize(N, Tk);
    for (Eigen::Index r = 0; r < p.observations.rows(); ++r)
        p.observations(r, 0) = 2.0 * sample_normal(rng);
    for (int s = 0; s < Tk; ++s)
        for (int i = 0; i < N; ++i) p.actions(i, s) = uniform01(rng) < 0.5 ? 0 : 1;
    out.design = sieve::build_design(p, random_features(rng, L), L, n_actions);
    for (int s = 0; s < Tk; ++s)
        for (int i = 0; i < N; ++i) {
            double mean = 0.0;
            if (beta) mean += out.design.row(static_cast<Eigen::Index>(s) * N + i).dot(*beta);
            if (theta) mean += (*theta)(i);
            if (lambda) mean += (*lambda)(s);
            p.responses(i, s) = mean + noise * sample_normal(rng);
        }
    return out;
}

Eigen::VectorXd joint_pinv_beta(const Eigen::MatrixXd& responses,
                                const Eigen::MatrixXd& design) {
    const int N = static_cast<int>(responses.rows());
    const int Tk = static_cast<int>(responses.cols());
    Eigen::MatrixXd X(design.rows(), N + Tk + design.cols());
    X.setZero();
    for (int s = 0; s < Tk; ++s)
        for (int i = 0; i < N; ++i) {
            X(static_cast<Eigen::Index>(s) * N + i, i) = 1.0;
            X(static_cast<Eigen::Index>(s) * N + i, N + s) = 1.0;
        }
    X.rightCols(design.cols()) = design;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-12);
    return svd.solve(stacked(responses)).tail(design.cols());
}

Policy target_policy() {
    return Policy::observation_agnostic((Eigen::VectorXd(2) << 0.2, 0.8).finished(), "pi08");
}

// ---------------------------------------------------------------------------

void criterion_1() {
    Criterion c{1, "closed-form partialled solve equals joint pseudoinverse least squares"};
    std::mt19937_64 rng = make_rng(0xC1);
    double worst = 0.0;
    int done = 0;
    while (done < 50) {
        const int N = 3 + static_cast<int>(uniform01(rng) * 10);
        const int Tk = 3 + static_cast<int>(uniform01(rng) * 10);
        const int L = 2 + static_cast<int>(uniform01(rng) * 4);
        if (N * Tk < N + Tk + 2 * L + 2) continue;
        const auto draw = draw_panel(rng, N, Tk, L, 2);
        sieve::TwoWayCore core;
        try {
            core = sieve::fwl_solve_design(draw.panel.responses, draw.design, 0.0);
        } catch (const SingularDesignError&) {
            continue;
        }
        const auto joint = joint_pinv_beta(draw.panel.responses, draw.design);
        worst = std::max(worst, (core.beta - joint).cwiseAbs().maxCoeff());
        ++done;
    }
    std::ostringstream os;
    os << "max |beta diff| = " << worst << " over 50 panels (tol 1e-8)";
    c.finish(worst <= 1e-8, os.str());
}

void criterion_2() {
    Criterion c{2, "within transformation equals the explicit pseudoinverse projector"};
    std::mt19937_64 rng = make_rng(0xC2);
    const int N = 8, Tk = 6;
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(N * Tk, N + Tk);
    for (int s = 0; s < Tk; ++s)
        for (int i = 0; i < N; ++i) {
            B(s * N + i, i) = 1.0;
            B(s * N + i, N + s) = 1.0;
        }
    const Eigen::MatrixXd S =
        Eigen::MatrixXd::Identity(N * Tk, N * Tk) -
        B * (B.transpose() * B).completeOrthogonalDecomposition().pseudoInverse() *
            B.transpose();
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::MatrixXd x(N, Tk);
        for (int i = 0; i < N; ++i)
            for (int t = 0; t < Tk; ++t) x(i, t) = 3.0 * sample_normal(rng);
        worst = std::max(
            worst, (stacked(sieve::two_way_demean(x)) - S * stacked(x)).cwiseAbs().maxCoeff());
    }
    std::ostringstream os;
    os << "max |projection diff| = " << worst << " over 20 panels (tol 1e-10)";
    c.finish(worst <= 1e-10, os.str());
}

void criterion_3() {
    Criterion c{3, "zero-noise two-way model recovered exactly after recentering"};
    std::mt19937_64 rng = make_rng(0xC3);
    double worst = 0.0;
    // full-rank route: raw coefficients
    {
        const int N = 9, Tk = 8, L = 3;
        Eigen::VectorXd beta(2 * L), th(N), la(Tk);
        for (Eigen::Index j = 0; j < beta.size(); ++j) beta(j) = sample_normal(rng);
        for (int i = 0; i < N; ++i) th(i) = sample_normal(rng);
        for (int t = 0; t < Tk; ++t) la(t) = sample_normal(rng);
        const auto draw = draw_panel(rng, N, Tk, L, 2, &beta, &th, &la, 0.0);
        const auto core = sieve::fwl_solve_design(draw.panel.responses, draw.design, 0.0);
        worst = std::max(worst, (core.beta - beta).cwiseAbs().maxCoeff());
        worst = std::max(worst,
                         (core.theta - (th.array() - th.mean()).matrix()).cwiseAbs().maxCoeff());
        worst = std::max(
            worst, (core.lambda - (la.array() - la.mean()).matrix()).cwiseAbs().maxCoeff());
        worst = std::max(worst, std::abs(core.offset - th.mean() - la.mean()));
    }
    // saturated indicator route: fitted values carry the contract
    {
        const int N = 10, Tk = 9;
        Eigen::VectorXd th(N), la(Tk);
        for (int i = 0; i < N; ++i) th(i) = sample_normal(rng);
        for (int t = 0; t < Tk; ++t) la(t) = sample_normal(rng);
        Eigen::MatrixXd r1(2, 2);
        r1 << 0.4, -1.1, 2.2, 0.9;
        sieve::StagePanel p;
        p.k = 1;
        p.observations.resize(N * Tk, 1);
        p.actions.resize(N, Tk);
        p.responses.resize(N, Tk);
        for (int s = 0; s < Tk; ++s)
            for (int i = 0; i < N; ++i) {
                const int o = uniform01(rng) < 0.5 ? 0 : 1;
                const int a = uniform01(rng) < 0.5 ? 0 : 1;
                p.observations(s * N + i, 0) = o;
                p.actions(i, s) = a;
                p.responses(i, s) = th(i) + la(s) + r1(o, a);
            }
        const auto fit = sieve::fwl_solve(p, sieve::BasisSpec::indicator(2), 2, 1e-8);
        for (int s = 0; s < Tk; ++s)
            for (int i = 0; i < N; ++i)
                for (int a = 0; a < 2; ++a)
                    for (int o = 0; o < 2; ++o) {
                        Eigen::VectorXd obs(1);
                        obs << o;
                        const double want = th(i) + la(s) + r1(o, a);
                        worst = std::max(worst, std::abs(fit.value(i, s, obs, a) - want));
                    }
    }
    std::ostringstream os;
    os << "max recovery error = " << worst << " (tol 1e-7)";
    c.finish(worst <= 1e-7, os.str());
}

void criterion_4() {
    Criterion c{4, "stage main effect of the exact recursion contracts at rate <= 0.7"};
    const auto spec = envsim::make_preset("paper-tabular", 80, 80, 1);
    const auto spreads = envsim::exact_main_effect_spread(spec, target_policy(), 10);
    double worst_ratio = 0.0;
    for (int k = 2; k <= 8; ++k)  // ratio r_{k+1}/r_k, tables are 1-indexed by k
        worst_ratio = std::max(worst_ratio, spreads[k] / spreads[k - 1]);
    std::ostringstream os;
    os << "max ratio over k=2..8 = " << worst_ratio << " (bound 0.7)";
    c.finish(worst_ratio <= 0.7, os.str());
}

void criterion_5() {
    Criterion c{5, "EM log-likelihood trace is non-decreasing"};
    double worst_drop = 0.0;
    for (int seed = 0; seed < 20; ++seed) {
        for (const auto* preset : {"paper-tabular", "paper-continuous"}) {
            const auto spec = envsim::make_preset(preset, 25, 25, derive_seed(0xC5, seed));
            const auto data = envsim::generate(spec);
            const auto fit =
                model_based::em_fit(data, model_based::em_init(data), 1e-10, 40);
            for (size_t k = 1; k < fit.trace.size(); ++k)
                worst_drop = std::max(worst_drop, fit.trace[k - 1] - fit.trace[k]);
        }
    }
    std::ostringstream os;
    os << "worst decrease = " << worst_drop << " over 20 seeds x 2 kinds (slack 1e-9)";
    c.finish(worst_drop <= 1e-9, os.str());
}

void criterion_6() {
    Criterion c{6, "EM recovers the mixture weights on the continuous design"};
    std::vector<double> e0, eu, ev;
    for (int run = 0; run < 20; ++run) {
        const auto spec =
            envsim::make_preset("paper-continuous", 60, 60, derive_seed(0xC6, run));
        const auto data = envsim::generate(spec);
        const auto fit = model_based::em_fit(data, model_based::em_init(data), 1e-8, 300);
        e0.push_back(std::abs(fit.model.weights(0) - 0.6));
        eu.push_back(std::abs(fit.model.weights(1) - 0.2));
        ev.push_back(std::abs(fit.model.weights(2) - 0.2));
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return 0.5 * (v[v.size() / 2] + v[(v.size() - 1) / 2]);
    };
    const double m0 = median(e0), mu = median(eu), mv = median(ev);
    std::ostringstream os;
    os << "median |pi0 err| = " << m0 << ", |pi_u err| = " << mu << ", |pi_v err| = " << mv
       << " over 20 runs (tol 0.05)";
    c.finish(m0 <= 0.05 && mu <= 0.05 && mv <= 0.05, os.str());
}

void criterion_7() {
    Criterion c{7, "exact propagation and monte-carlo oracles agree cell by cell"};
    const auto spec = envsim::make_preset("paper-tabular", 8, 8, 0xC7);
    const auto pi = target_policy();
    const auto truth = envsim::dp_oracle_tabular(spec, pi);
    const auto mc = envsim::mc_oracle(spec, pi, 100000, 0xC7171);
    double worst_z = 0.0;
    int outside = 0;
    for (int i = 0; i < 8; ++i)
        for (int t = 0; t < 8; ++t) {
            const double z = std::abs(mc.mean(i, t) - truth(i, t)) / mc.se(i, t);
            worst_z = std::max(worst_z, z);
            if (z > 3.0) ++outside;
        }
    std::ostringstream os;
    os << "1e5 replications, max |z| = " << worst_z << ", cells beyond 3 SE = " << outside;
    c.finish(outside == 0, os.str());
}

harness::BenchmarkResult ordering_benchmark(const std::string& preset, uint64_t seed) {
    harness::ExperimentConfig cfg;
    cfg.env_preset = preset;
    cfg.n_individuals = 80;
    cfg.n_timepoints = 80;
    cfg.n_replications = 100;
    cfg.master_seed = seed;
    cfg.estimators = harness::estimator_names();
    cfg.threads = 2;
    return harness::run_benchmark(cfg);
}

void check_ordering(Criterion& c, const harness::BenchmarkResult& result, bool check_b4) {
    const auto& fams = harness::family_names();
    // full table for the record
    for (const auto& est : harness::estimator_names()) {
        std::ostringstream row;
        row << "    " << est << " MAE:";
        for (const auto& fam : fams)
            row << " " << fam << "=" << result.table.find(est, fam)->mae;
        std::cout << row.str() << std::endl;
    }
    std::ostringstream os;
    // the model-free method must beat every baseline in every family (its
    // model-based companion is allowed to do better, as reported alongside
    // the original comparison)
    bool mf_best = true;
    int b4_largest = 0;
    for (const auto& fam : fams) {
        const double mf = result.table.find("twdidp-mf", fam)->mae;
        double worst_val = -1e300;
        std::string worst;
        for (const auto& est : harness::estimator_names()) {
            const auto* row = result.table.find(est, fam);
            if (row->mae > worst_val) {
                worst_val = row->mae;
                worst = est;
            }
            if (est != "twdidp-mf" && est != "twdidp-mb" && row->mae <= mf) mf_best = false;
        }
        if (worst == "b4") ++b4_largest;
        os << fam << ": mf " << mf << ", worst " << worst << " (" << worst_val << "); ";
    }
    os << (mf_best ? "mf beats every baseline in every family" : "mf beaten by a baseline");
    c.finish(mf_best, os.str());
    if (check_b4) {
        Criterion cb{c.id, c.label + " (worst-baseline clause)"};
        std::ostringstream osb;
        osb << "b4 largest in " << b4_largest << "/4 families";
        cb.finish(b4_largest >= 3, osb.str());
    }
}

void criterion_8() {
    Criterion c{8, "tabular benchmark ordering at N=T=80, 100 replications"};
    const auto result = ordering_benchmark("paper-tabular", 20240801);
    check_ordering(c, result, true);
}

void criterion_9() {
    Criterion c{9, "continuous benchmark ordering at N=T=80, 100 replications"};
    const auto result = ordering_benchmark("paper-continuous", 20240802);
    check_ordering(c, result, false);
}

void criterion_10() {
    Criterion c{10, "error scaling across panel sizes matches the root-sample-size rate"};
    auto run_mf = [&](int N, int T, uint64_t seed, int fam) {
        harness::ExperimentConfig cfg;
        cfg.env_preset = "paper-tabular";
        cfg.n_individuals = N;
        cfg.n_timepoints = T;
        cfg.n_replications = 100;
        cfg.master_seed = seed;
        cfg.estimators = {"twdidp-mf"};
        cfg.threads = 2;
        const auto result = harness::run_benchmark(cfg);
        return result.table.find("twdidp-mf", harness::family_names()[fam])->mae;
    };
    const double eta_40 = run_mf(40, 40, 0xC10A, 0);
    const double eta_80 = run_mf(80, 80, 0xC10B, 0);
    const double ratio_nt = eta_80 / eta_40;
    const double etai_t40 = run_mf(40, 40, 0xC10C, 1);
    const double etai_t160 = run_mf(40, 160, 0xC10D, 1);
    const double ratio_t = etai_t160 / etai_t40;
    std::ostringstream os;
    os << "MAE(eta) ratio 80x80/40x40 = " << ratio_nt << ", MAE(eta_i) ratio T160/T40 = "
       << ratio_t << " (band [0.4, 0.65])";
    c.finish(ratio_nt >= 0.4 && ratio_nt <= 0.65 && ratio_t >= 0.4 && ratio_t <= 0.65,
             os.str());
}

void criterion_11() {
    Criterion c{11, "homogeneous regime: backward induction, average-reward and"
                    " per-time baselines agree"};
    const auto pi = target_policy();
    const int reps = 50;
    std::vector<double> mf, b1, b3;
    for (int rep = 0; rep < reps; ++rep) {
        const auto spec =
            envsim::make_preset("homogeneous-tabular", 80, 80, derive_seed(0xC11, rep));
        const auto data = envsim::generate(spec);
        harness::EstimatorOptions opts;
        mf.push_back(harness::run_estimator("twdidp-mf", data, pi, opts, rep).eta);
        b1.push_back(harness::run_estimator("b1", data, pi, opts, rep).eta);
        b3.push_back(harness::run_estimator("b3", data, pi, opts, rep).eta);
    }
    auto mean_se = [&](const std::vector<double>& v) {
        double m = 0.0, s2 = 0.0;
        for (double x : v) m += x / v.size();
        for (double x : v) s2 += (x - m) * (x - m) / (v.size() - 1.0);
        return std::pair<double, double>(m, std::sqrt(s2 / v.size()));
    };
    const auto [m_mf, se_mf] = mean_se(mf);
    const auto [m_b1, se_b1] = mean_se(b1);
    const auto [m_b3, se_b3] = mean_se(b3);
    auto within = [](double a, double sa, double b, double sb) {
        return std::abs(a - b) <= 3.0 * std::sqrt(sa * sa + sb * sb);
    };
    const bool ok = within(m_mf, se_mf, m_b1, se_b1) && within(m_mf, se_mf, m_b3, se_b3) &&
                    within(m_b1, se_b1, m_b3, se_b3);
    std::ostringstream os;
    os << "means mf/b1/b3 = " << m_mf << "/" << m_b1 << "/" << m_b3 << ", ses = " << se_mf
       << "/" << se_b1 << "/" << se_b3 << " over 50 replications";
    c.finish(ok, os.str());
}

void criterion_12() {
    Criterion c{12, "benchmark reruns are byte-identical for identical config and seed"};
    harness::ExperimentConfig cfg;
    cfg.env_preset = "paper-tabular";
    cfg.n_individuals = 20;
    cfg.n_timepoints = 20;
    cfg.n_replications = 5;
    cfg.master_seed = 0xC12;
    cfg.options.n_rollouts = 100;
    cfg.options.em_max_iter = 30;
    const auto a = harness::run_benchmark(cfg);
    cfg.threads = 2;
    const auto b = harness::run_benchmark(cfg);
    cfg.threads = 1;
    const auto d = harness::run_benchmark(cfg);
    const bool ok = a.table.to_json(cfg) == b.table.to_json(cfg) &&
                    a.table.to_json(cfg) == d.table.to_json(cfg);
    c.finish(ok, ok ? "three reruns (threads 1/2/1) byte-identical" : "rerun mismatch");
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int k = 1; k < argc; ++k) wanted.insert(std::atoi(argv[k]));
    auto want = [&](int id) { return wanted.empty() || wanted.count(id) > 0; };

    if (want(1)) criterion_1();
    if (want(2)) criterion_2();
    if (want(3)) criterion_3();
    if (want(4)) criterion_4();
    if (want(5)) criterion_5();
    if (want(6)) criterion_6();
    if (want(7)) criterion_7();
    if (want(8)) criterion_8();
    if (want(9)) criterion_9();
    if (want(10)) criterion_10();
    if (want(11)) criterion_11();
    if (want(12)) criterion_12();

    if (g_failures == 0)
        std::cout << "all criteria passed" << std::endl;
    else
        std::cout << g_failures << " criterion(s) failed" << std::endl;
    return g_failures;
}
