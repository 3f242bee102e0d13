#include "twdidp/envsim.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "twdidp/random.hpp"

namespace twdidp {

// ---------------------------------------------------------------------------
// PolicySpec
// ---------------------------------------------------------------------------

Policy PolicySpec::make() const {
    switch (kind) {
        case Policy::Kind::ObservationAgnostic:
            return Policy::observation_agnostic(agnostic, id);
        case Policy::Kind::Table: return Policy::table(table, id);
        case Policy::Kind::Threshold:
            return Policy::threshold(thr_dim, thr_cut, thr_low, thr_high, id);
        case Policy::Kind::Custom: break;
    }
    throw ValidationError("custom policies cannot be materialized from a spec");
}

namespace {

Eigen::VectorXd parse_vector(const std::string& text) {
    std::vector<double> vals;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        vals.push_back(std::stod(tok));
    }
    Eigen::VectorXd v(vals.size());
    for (size_t j = 0; j < vals.size(); ++j) v(j) = vals[j];
    return v;
}

std::string format_vector(const Eigen::VectorXd& v) {
    std::ostringstream os;
    for (Eigen::Index j = 0; j < v.size(); ++j) {
        if (j) os << ",";
        os << v(j);
    }
    return os.str();
}

}  // namespace

PolicySpec PolicySpec::parse(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos)
        throw ValidationError("policy spec must look like kind:params, got '" + text + "'");
    const std::string head = text.substr(0, colon);
    const std::string rest = text.substr(colon + 1);
    PolicySpec spec;
    spec.id = text;
    if (head == "agnostic") {
        spec.kind = Policy::Kind::ObservationAgnostic;
        spec.agnostic = parse_vector(rest);
        if (spec.agnostic.size() < 1) throw ValidationError("agnostic policy needs probabilities");
    } else if (head == "table") {
        spec.kind = Policy::Kind::Table;
        std::vector<Eigen::VectorXd> rows;
        std::stringstream ss(rest);
        std::string row;
        while (std::getline(ss, row, ';'))
            if (!row.empty()) rows.push_back(parse_vector(row));
        if (rows.empty()) throw ValidationError("table policy needs rows");
        spec.table.resize(rows.size(), rows[0].size());
        for (size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != spec.table.cols())
                throw ValidationError("table policy rows must agree in length");
            spec.table.row(r) = rows[r].transpose();
        }
    } else if (head == "threshold") {
        // threshold:<dim>:<cutoff>:<low probs>:<high probs>
        spec.kind = Policy::Kind::Threshold;
        std::vector<std::string> parts;
        std::stringstream ss(rest);
        std::string tok;
        while (std::getline(ss, tok, ':')) parts.push_back(tok);
        if (parts.size() != 4)
            throw ValidationError("threshold policy: expected dim:cutoff:low:high");
        spec.thr_dim = std::stoi(parts[0]);
        spec.thr_cut = std::stod(parts[1]);
        spec.thr_low = parse_vector(parts[2]);
        spec.thr_high = parse_vector(parts[3]);
        if (spec.thr_low.size() != spec.thr_high.size())
            throw ValidationError("threshold policy arms must agree in length");
    } else {
        throw ValidationError("unknown policy kind '" + head + "'");
    }
    return spec;
}

std::string PolicySpec::to_text() const {
    std::ostringstream os;
    switch (kind) {
        case Policy::Kind::ObservationAgnostic: os << "agnostic:" << format_vector(agnostic); break;
        case Policy::Kind::Table: {
            os << "table:";
            for (Eigen::Index r = 0; r < table.rows(); ++r) {
                if (r) os << ";";
                os << format_vector(table.row(r));
            }
            break;
        }
        case Policy::Kind::Threshold:
            os << "threshold:" << thr_dim << ":" << thr_cut << ":" << format_vector(thr_low)
               << ":" << format_vector(thr_high);
            break;
        case Policy::Kind::Custom: throw ValidationError("custom policy has no text form");
    }
    return os.str();
}

}  // namespace twdidp

namespace twdidp::envsim {

// ---------------------------------------------------------------------------
// EnvSpec basics
// ---------------------------------------------------------------------------

double EnvSpec::r0_mean(const Eigen::VectorXd& obs, int action) const {
    if (obs_kind.is_tabular())
        return r0_table(static_cast<int>(std::llround(obs(0))), action);
    return r0_lin.dot(obs) + r0_act(action);
}

double EnvSpec::r1(const Eigen::VectorXd& obs, int action) const {
    return weights(0) * r0_mean(obs, action);
}

void EnvSpec::validate() const {
    if (n_individuals < 1 || n_timepoints < 1)
        throw ValidationError("environment needs positive panel dimensions");
    if (!(weights.array() >= 0.0).all() || std::abs(weights.sum() - 1.0) > 1e-10)
        throw ValidationError("mixture weights must be a simplex");
    if (ru_mean.size() != n_individuals || rv_mean.size() != n_timepoints)
        throw ValidationError("reward component mean sizes disagree with panel dims");
    if (obs_kind.is_tabular()) {
        const int S = obs_kind.n_states;
        if (p0_table.rows() != S * n_actions || p0_table.cols() != S)
            throw ValidationError("p0_table shape mismatch");
        if (pu_table.rows() != n_individuals || pu_table.cols() != S)
            throw ValidationError("pu_table shape mismatch");
        if (n_timepoints > 1 &&
            (pv_table.rows() != n_timepoints - 1 || pv_table.cols() != S))
            throw ValidationError("pv_table shape mismatch");
        if (init_probs.size() != S) throw ValidationError("init_probs shape mismatch");
        auto check_rows = [](const Eigen::MatrixXd& m, const char* what) {
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                if ((m.row(r).array() < -1e-12).any() ||
                    std::abs(m.row(r).sum() - 1.0) > 1e-8)
                    throw ValidationError(std::string(what) + ": row " + std::to_string(r) +
                                          " is not a distribution");
        };
        check_rows(p0_table, "p0_table");
        check_rows(pu_table, "pu_table");
        if (n_timepoints > 1) check_rows(pv_table, "pv_table");
        if (std::abs(init_probs.sum() - 1.0) > 1e-8)
            throw ValidationError("init_probs must sum to one");
        if (r0_table.rows() != S || r0_table.cols() != n_actions)
            throw ValidationError("r0_table shape mismatch");
    } else {
        const int d = obs_kind.dim;
        if (trans_coef.rows() != d || trans_coef.cols() != d)
            throw ValidationError("trans_coef shape mismatch");
        if (act_shift.rows() != n_actions || act_shift.cols() != d)
            throw ValidationError("act_shift shape mismatch");
        if (pu_mean.rows() != n_individuals || pu_mean.cols() != d)
            throw ValidationError("pu_mean shape mismatch");
        if (n_timepoints > 1 && (pv_mean.rows() != n_timepoints - 1 || pv_mean.cols() != d))
            throw ValidationError("pv_mean shape mismatch");
        if (init_mean.size() != d) throw ValidationError("init_mean shape mismatch");
        if (r0_lin.size() != d || r0_act.size() != n_actions)
            throw ValidationError("reward coefficient shape mismatch");
    }
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

namespace {

void fill_reward_components(EnvSpec& spec) {
    spec.ru_mean.resize(spec.n_individuals);
    for (int i = 0; i < spec.n_individuals; ++i)
        spec.ru_mean(i) = 4.0 * std::sin(static_cast<double>(i + 1));
    spec.rv_mean.resize(spec.n_timepoints);
    for (int t = 0; t < spec.n_timepoints; ++t)
        spec.rv_mean(t) = 3.0 * std::abs(std::cos(2.4 * (t + 1)));
    spec.reward_sd = 1.0;
}

EnvSpec paper_tabular(int N, int T, uint64_t seed) {
    EnvSpec spec;
    spec.name = "paper-tabular";
    spec.obs_kind = ObsKind::tabular(2);
    spec.n_actions = 2;
    spec.n_individuals = N;
    spec.n_timepoints = T;
    spec.seed = seed;
    spec.weights = Eigen::Vector3d(0.6, 0.2, 0.2);
    spec.reward_mode = RewardMode::Additive;

    PolicySpec behavior;
    behavior.kind = Policy::Kind::Table;
    behavior.table.resize(2, 2);
    behavior.table << 0.7, 0.3, 0.3, 0.7;
    behavior.id = "behavior-tabular";
    spec.behavior = behavior;

    spec.init_probs = Eigen::VectorXd::Constant(2, 0.5);

    spec.p0_table.resize(4, 2);
    for (int o = 0; o < 2; ++o) {
        for (int a = 0; a < 2; ++a) {
            const double p1 = (o + a >= 1) ? 0.3 : 0.7;
            spec.p0_table.row(spec.p0_row(o, a)) << 1.0 - p1, p1;
        }
    }
    spec.pu_table.resize(N, 2);
    for (int i = 0; i < N; ++i) {
        const double v = std::abs(std::sin(static_cast<double>(i + 1)));
        spec.pu_table.row(i) << 1.0 - v, v;
    }
    spec.pv_table.resize(std::max(T - 1, 0), 2);
    for (int t = 0; t + 1 < T; ++t) {
        const double v = std::abs(std::cos(static_cast<double>(t + 1)));
        spec.pv_table.row(t) << 1.0 - v, v;
    }

    spec.r0_table.resize(2, 2);
    spec.r0_table << 0.0, 3.0, 2.0, 5.0;  // 2*o + 3*a
    fill_reward_components(spec);
    return spec;
}

EnvSpec paper_continuous(int N, int T, uint64_t seed) {
    EnvSpec spec;
    spec.name = "paper-continuous";
    spec.obs_kind = ObsKind::continuous(1);
    spec.n_actions = 2;
    spec.n_individuals = N;
    spec.n_timepoints = T;
    spec.seed = seed;
    spec.weights = Eigen::Vector3d(0.6, 0.2, 0.2);
    spec.reward_mode = RewardMode::Additive;

    PolicySpec behavior;
    behavior.kind = Policy::Kind::ObservationAgnostic;
    behavior.agnostic = Eigen::VectorXd::Constant(2, 0.5);
    behavior.id = "behavior-continuous";
    spec.behavior = behavior;

    spec.init_mean = Eigen::VectorXd::Zero(1);
    spec.init_sd = 1.0;

    spec.trans_coef = Eigen::MatrixXd::Constant(1, 1, -0.25);
    spec.act_shift.resize(2, 1);
    spec.act_shift << 0.0, 1.0;
    spec.trans_sd = 1.0;
    spec.pu_mean.resize(N, 1);
    for (int i = 0; i < N; ++i) spec.pu_mean(i, 0) = std::sin(3.0 * (i + 1));
    spec.pv_mean.resize(std::max(T - 1, 0), 1);
    for (int t = 0; t + 1 < T; ++t) spec.pv_mean(t, 0) = std::cos(-1.8 * (t + 1));
    spec.pu_sd = spec.pv_sd = 1.0;

    spec.r0_lin = Eigen::VectorXd::Constant(1, 2.0);
    spec.r0_act.resize(2);
    spec.r0_act << 0.0, 3.0;
    fill_reward_components(spec);
    return spec;
}

EnvSpec homogeneous_tabular(int N, int T, uint64_t seed) {
    EnvSpec spec = paper_tabular(N, T, seed);
    spec.name = "homogeneous-tabular";
    spec.weights = Eigen::Vector3d(1.0, 0.0, 0.0);
    spec.ru_mean.setZero();
    spec.rv_mean.setZero();
    // start from the long-run state distribution of the 0.2/0.8 randomized
    // policy so finite-horizon averages match the long-run average
    spec.init_probs.resize(2);
    spec.init_probs << 35.0 / 54.0, 19.0 / 54.0;
    return spec;
}

}  // namespace

EnvSpec make_preset(const std::string& name, int n_individuals, int n_timepoints,
                    uint64_t seed) {
    if (name == "paper-tabular") return paper_tabular(n_individuals, n_timepoints, seed);
    if (name == "paper-continuous") return paper_continuous(n_individuals, n_timepoints, seed);
    if (name == "homogeneous-tabular")
        return homogeneous_tabular(n_individuals, n_timepoints, seed);
    throw ValidationError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() {
    return {"paper-tabular", "paper-continuous", "homogeneous-tabular"};
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

GenerateOutput generate_with_labels(const EnvSpec& spec) {
    spec.validate();
    const int N = spec.n_individuals, T = spec.n_timepoints;
    const int d = spec.obs_kind.is_tabular() ? 1 : spec.obs_kind.dim;
    const Policy behavior = spec.behavior.make();

    GenerateOutput out;
    out.data.n_individuals = N;
    out.data.n_timepoints = T;
    out.data.n_actions = spec.n_actions;
    out.data.obs_kind = spec.obs_kind;
    out.data.observations.resize(static_cast<Eigen::Index>(N) * T, d);
    out.data.actions.resize(N, T);
    out.data.rewards.resize(N, T);
    out.z_transition = Eigen::MatrixXi::Constant(N, std::max(T - 1, 0), -1);
    out.z_reward = Eigen::MatrixXi::Constant(N, T, -1);

    for (int i = 0; i < N; ++i) {
        std::mt19937_64 rng = make_rng(derive_seed(spec.seed, static_cast<uint64_t>(i)));
        Eigen::VectorXd obs(d);
        if (spec.obs_kind.is_tabular()) {
            obs(0) = static_cast<double>(sample_categorical(rng, spec.init_probs));
        } else {
            for (int j = 0; j < d; ++j)
                obs(j) = spec.init_mean(j) + spec.init_sd * sample_normal(rng);
        }
        for (int t = 0; t < T; ++t) {
            out.data.observations.row(static_cast<Eigen::Index>(t) * N + i) = obs;
            const int a = sample_categorical(rng, behavior.probs(obs));
            out.data.actions(i, t) = a;

            // transition component drawn first so joint-z reward draws can
            // share the label
            int z_tr = -1;
            if (t + 1 < T) z_tr = sample_categorical(rng, spec.weights);

            double reward;
            if (spec.reward_mode == RewardMode::Additive) {
                const double mean = spec.theta(i) + spec.lambda(t) + spec.r1(obs, a);
                reward = mean + spec.reward_sd * sample_normal(rng);
            } else {
                int z_r = (spec.joint_z && z_tr >= 0) ? z_tr
                                                      : sample_categorical(rng, spec.weights);
                out.z_reward(i, t) = z_r;
                double mean;
                if (z_r == 0)
                    mean = spec.r0_mean(obs, a);
                else if (z_r == 1)
                    mean = spec.ru_mean(i);
                else
                    mean = spec.rv_mean(t);
                reward = mean + spec.reward_sd * sample_normal(rng);
            }
            out.data.rewards(i, t) = reward;

            if (t + 1 < T) {
                out.z_transition(i, t) = z_tr;
                if (spec.obs_kind.is_tabular()) {
                    const int so = static_cast<int>(std::llround(obs(0)));
                    Eigen::VectorXd row;
                    if (z_tr == 0)
                        row = spec.p0_table.row(spec.p0_row(so, a));
                    else if (z_tr == 1)
                        row = spec.pu_table.row(i);
                    else
                        row = spec.pv_table.row(t);
                    obs(0) = static_cast<double>(sample_categorical(rng, row));
                } else {
                    Eigen::VectorXd mean(d);
                    double sd;
                    if (z_tr == 0) {
                        mean = spec.trans_coef * obs + spec.act_shift.row(a).transpose();
                        sd = spec.trans_sd;
                    } else if (z_tr == 1) {
                        mean = spec.pu_mean.row(i);
                        sd = spec.pu_sd;
                    } else {
                        mean = spec.pv_mean.row(t);
                        sd = spec.pv_sd;
                    }
                    for (int j = 0; j < d; ++j) obs(j) = mean(j) + sd * sample_normal(rng);
                }
            }
        }
    }
    return out;
}

TrajectorySet generate(const EnvSpec& spec) { return generate_with_labels(spec).data; }

// ---------------------------------------------------------------------------
// oracles
// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd obs_of_state(int s) {
    Eigen::VectorXd v(1);
    v(0) = static_cast<double>(s);
    return v;
}

// pi(a | state) table for a tabular spec
Eigen::MatrixXd policy_table(const EnvSpec& spec, const Policy& pi) {
    const int S = spec.obs_kind.n_states;
    Eigen::MatrixXd p(S, spec.n_actions);
    for (int s = 0; s < S; ++s) p.row(s) = policy_probs(pi, obs_of_state(s)).transpose();
    return p;
}

// policy-averaged shared-component transition: row o -> dist over o'
Eigen::MatrixXd policy_mixed_p0(const EnvSpec& spec, const Eigen::MatrixXd& ptab) {
    const int S = spec.obs_kind.n_states;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(S, S);
    for (int o = 0; o < S; ++o)
        for (int a = 0; a < spec.n_actions; ++a)
            m.row(o) += ptab(o, a) * spec.p0_table.row(spec.p0_row(o, a));
    return m;
}

}  // namespace

Eigen::MatrixXd dp_oracle_tabular(const EnvSpec& spec, const Policy& pi) {
    spec.validate();
    if (!spec.obs_kind.is_tabular())
        throw ValidationError("dp oracle requires a tabular environment");
    const int N = spec.n_individuals, T = spec.n_timepoints, S = spec.obs_kind.n_states;

    const Eigen::MatrixXd ptab = policy_table(spec, pi);
    const Eigen::MatrixXd p0pi = policy_mixed_p0(spec, ptab);

    // per-state policy-averaged main reward effect
    Eigen::VectorXd rbar(S);
    for (int s = 0; s < S; ++s) {
        double v = 0.0;
        for (int a = 0; a < spec.n_actions; ++a) v += ptab(s, a) * spec.r0_table(s, a);
        rbar(s) = spec.weights(0) * v;
    }

    // initial observations must match what generate() produced for this seed;
    // replay the per-individual draw
    Eigen::VectorXi init_state(N);
    for (int i = 0; i < N; ++i) {
        std::mt19937_64 rng = make_rng(derive_seed(spec.seed, static_cast<uint64_t>(i)));
        init_state(i) = sample_categorical(rng, spec.init_probs);
    }

    Eigen::MatrixXd eta(N, T);
    Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(N, S);
    for (int i = 0; i < N; ++i) dist(i, init_state(i)) = 1.0;

    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < N; ++i)
            eta(i, t) = spec.theta(i) + spec.lambda(t) + dist.row(i).dot(rbar);
        if (t + 1 < T) {
            const Eigen::RowVectorXd pv = spec.pv_table.row(t);
            Eigen::MatrixXd next = spec.weights(0) * (dist * p0pi);
            next += spec.weights(1) * spec.pu_table;
            next.rowwise() += spec.weights(2) * pv;
            dist = std::move(next);
        }
    }
    return eta;
}

McOracleResult mc_oracle(const EnvSpec& spec, const Policy& pi, int n_reps, uint64_t seed) {
    spec.validate();
    if (n_reps < 2) throw ValidationError("mc oracle needs n_reps >= 2");
    const int N = spec.n_individuals, T = spec.n_timepoints;
    const int d = spec.obs_kind.is_tabular() ? 1 : spec.obs_kind.dim;

    // replay the initial observations drawn by generate() for this spec seed
    Eigen::MatrixXd init(N, d);
    for (int i = 0; i < N; ++i) {
        std::mt19937_64 rng = make_rng(derive_seed(spec.seed, static_cast<uint64_t>(i)));
        if (spec.obs_kind.is_tabular())
            init(i, 0) = static_cast<double>(sample_categorical(rng, spec.init_probs));
        else
            for (int j = 0; j < d; ++j)
                init(i, j) = spec.init_mean(j) + spec.init_sd * sample_normal(rng);
    }

    McOracleResult out;
    out.mean.resize(N, T);
    out.se.resize(N, T);
    for (int i = 0; i < N; ++i) {
        std::mt19937_64 rng = make_rng(derive_seed(seed, 0x0AC1Eull, static_cast<uint64_t>(i)));
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(T), sumsq = Eigen::VectorXd::Zero(T);
        for (int rep = 0; rep < n_reps; ++rep) {
            Eigen::VectorXd obs = init.row(i);
            for (int t = 0; t < T; ++t) {
                const int a = sample_categorical(rng, pi.probs(obs));
                double reward;
                if (spec.reward_mode == RewardMode::Additive) {
                    reward = spec.theta(i) + spec.lambda(t) + spec.r1(obs, a) +
                             spec.reward_sd * sample_normal(rng);
                } else {
                    const int z = sample_categorical(rng, spec.weights);
                    const double mean = z == 0   ? spec.r0_mean(obs, a)
                                        : z == 1 ? spec.ru_mean(i)
                                                 : spec.rv_mean(t);
                    reward = mean + spec.reward_sd * sample_normal(rng);
                }
                sum(t) += reward;
                sumsq(t) += reward * reward;
                if (t + 1 >= T) break;
                const int z = sample_categorical(rng, spec.weights);
                if (spec.obs_kind.is_tabular()) {
                    const int so = static_cast<int>(std::llround(obs(0)));
                    Eigen::VectorXd row;
                    if (z == 0)
                        row = spec.p0_table.row(spec.p0_row(so, a));
                    else if (z == 1)
                        row = spec.pu_table.row(i);
                    else
                        row = spec.pv_table.row(t);
                    obs(0) = static_cast<double>(sample_categorical(rng, row));
                } else {
                    Eigen::VectorXd mean(d);
                    double sd;
                    if (z == 0) {
                        mean = spec.trans_coef * obs + spec.act_shift.row(a).transpose();
                        sd = spec.trans_sd;
                    } else if (z == 1) {
                        mean = spec.pu_mean.row(i);
                        sd = spec.pu_sd;
                    } else {
                        mean = spec.pv_mean.row(t);
                        sd = spec.pv_sd;
                    }
                    for (int j = 0; j < d; ++j) obs(j) = mean(j) + sd * sample_normal(rng);
                }
            }
        }
        for (int t = 0; t < T; ++t) {
            const double mean = sum(t) / n_reps;
            const double var =
                std::max((sumsq(t) - n_reps * mean * mean) / (n_reps - 1.0), 0.0);
            out.mean(i, t) = mean;
            out.se(i, t) = std::sqrt(var / n_reps);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// exact recursion oracles (tabular)
// ---------------------------------------------------------------------------

std::vector<Eigen::MatrixXd> exact_stage_main_effects(const EnvSpec& spec, const Policy& pi,
                                                      int k_max) {
    spec.validate();
    if (!spec.obs_kind.is_tabular())
        throw ValidationError("exact recursion requires a tabular environment");
    const int S = spec.obs_kind.n_states, A = spec.n_actions;
    const Eigen::MatrixXd ptab = policy_table(spec, pi);

    std::vector<Eigen::MatrixXd> tables;
    Eigen::MatrixXd rk = spec.weights(0) * spec.r0_table;  // r_1
    tables.push_back(rk);
    for (int k = 2; k <= k_max; ++k) {
        Eigen::VectorXd vbar(S);
        for (int s = 0; s < S; ++s) vbar(s) = rk.row(s).dot(ptab.row(s));
        Eigen::MatrixXd next(S, A);
        for (int o = 0; o < S; ++o)
            for (int a = 0; a < A; ++a)
                next(o, a) = spec.weights(0) * spec.p0_table.row(spec.p0_row(o, a)).dot(vbar);
        rk = std::move(next);
        tables.push_back(rk);
    }
    return tables;
}

std::vector<double> exact_main_effect_spread(const EnvSpec& spec, const Policy& pi, int k_max) {
    const auto tables = exact_stage_main_effects(spec, pi, k_max);
    std::vector<double> out;
    out.reserve(tables.size());
    for (const auto& t : tables) {
        const double mean = t.mean();
        out.push_back(std::max(t.maxCoeff() - mean, mean - t.minCoeff()));
    }
    return out;
}

namespace {

// one-step mixture distribution from (state, action) at departure time t1
// (1-based) for individual i
Eigen::RowVectorXd mixture_row(const EnvSpec& spec, int i, int t1, int state, int action) {
    Eigen::RowVectorXd row = spec.weights(0) * spec.p0_table.row(spec.p0_row(state, action));
    row += spec.weights(1) * spec.pu_table.row(i);
    row += spec.weights(2) * spec.pv_table.row(t1 - 1);
    return row;
}

}  // namespace

Eigen::MatrixXd q_direct(const EnvSpec& spec, const Policy& pi, int i, int t1, int t2) {
    spec.validate();
    if (!spec.obs_kind.is_tabular()) throw ValidationError("tabular environments only");
    if (t1 < 1 || t2 < t1 || t2 > spec.n_timepoints)
        throw ValidationError("need 1 <= t1 <= t2 <= T");
    const int S = spec.obs_kind.n_states, A = spec.n_actions;
    const Eigen::MatrixXd ptab = policy_table(spec, pi);
    const Eigen::MatrixXd p0pi = policy_mixed_p0(spec, ptab);

    Eigen::VectorXd rbar(S);
    for (int s = 0; s < S; ++s) {
        double v = 0.0;
        for (int a = 0; a < A; ++a) v += ptab(s, a) * spec.r0_table(s, a);
        rbar(s) = spec.weights(0) * v;
    }

    Eigen::MatrixXd q(S, A);
    for (int o = 0; o < S; ++o) {
        for (int a = 0; a < A; ++a) {
            if (t2 == t1) {
                q(o, a) = spec.theta(i) + spec.lambda(t2 - 1) + spec.weights(0) * spec.r0_table(o, a);
                continue;
            }
            Eigen::RowVectorXd dist = mixture_row(spec, i, t1, o, a);
            for (int t = t1 + 1; t < t2; ++t) {
                Eigen::RowVectorXd next = spec.weights(0) * (dist * p0pi);
                next += spec.weights(1) * spec.pu_table.row(i);
                next += spec.weights(2) * spec.pv_table.row(t - 1);
                dist = std::move(next);
            }
            q(o, a) = spec.theta(i) + spec.lambda(t2 - 1) + dist.dot(rbar);
        }
    }
    return q;
}

Eigen::MatrixXd q_recursive(const EnvSpec& spec, const Policy& pi, int i, int t1, int t2) {
    spec.validate();
    if (!spec.obs_kind.is_tabular()) throw ValidationError("tabular environments only");
    if (t1 < 1 || t2 < t1 || t2 > spec.n_timepoints)
        throw ValidationError("need 1 <= t1 <= t2 <= T");
    const int S = spec.obs_kind.n_states, A = spec.n_actions;
    const Eigen::MatrixXd ptab = policy_table(spec, pi);

    Eigen::MatrixXd q(S, A);
    for (int o = 0; o < S; ++o)
        for (int a = 0; a < A; ++a)
            q(o, a) = spec.theta(i) + spec.lambda(t2 - 1) + spec.weights(0) * spec.r0_table(o, a);

    for (int t = t2 - 1; t >= t1; --t) {
        Eigen::VectorXd vbar(S);
        for (int s = 0; s < S; ++s) vbar(s) = q.row(s).dot(ptab.row(s));
        Eigen::MatrixXd next(S, A);
        for (int o = 0; o < S; ++o)
            for (int a = 0; a < A; ++a)
                next(o, a) = mixture_row(spec, i, t, o, a).dot(vbar);
        q = std::move(next);
    }
    return q;
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

Eigen::MatrixXd mat_from_json(const json& j, Eigen::Index cols_hint = 0) {
    const auto rows = j.size();
    if (rows == 0) return Eigen::MatrixXd(0, cols_hint);
    const auto cols = j.at(0).size();
    Eigen::MatrixXd m(rows, cols);
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
    return m;
}

json vec_to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index r = 0; r < v.size(); ++r) arr.push_back(v(r));
    return arr;
}

Eigen::VectorXd vec_from_json(const json& j) {
    Eigen::VectorXd v(j.size());
    for (size_t r = 0; r < j.size(); ++r) v(r) = j.at(r).get<double>();
    return v;
}

}  // namespace

std::string envspec_to_json(const EnvSpec& spec) {
    json j;
    j["name"] = spec.name;
    j["obs_kind"] = spec.obs_kind.is_tabular() ? "tabular" : "continuous";
    j["n_states"] = spec.obs_kind.n_states;
    j["dim"] = spec.obs_kind.dim;
    j["n_actions"] = spec.n_actions;
    j["n_individuals"] = spec.n_individuals;
    j["n_timepoints"] = spec.n_timepoints;
    j["seed"] = spec.seed;
    j["weights"] = {spec.weights(0), spec.weights(1), spec.weights(2)};
    j["reward_mode"] =
        spec.reward_mode == RewardMode::Additive ? "additive" : "component-mixture";
    j["joint_z"] = spec.joint_z;
    j["behavior"] = spec.behavior.to_text();
    j["reward_sd"] = spec.reward_sd;
    j["ru_mean"] = vec_to_json(spec.ru_mean);
    j["rv_mean"] = vec_to_json(spec.rv_mean);
    if (spec.obs_kind.is_tabular()) {
        j["init_probs"] = vec_to_json(spec.init_probs);
        j["p0_table"] = mat_to_json(spec.p0_table);
        j["pu_table"] = mat_to_json(spec.pu_table);
        j["pv_table"] = mat_to_json(spec.pv_table);
        j["r0_table"] = mat_to_json(spec.r0_table);
    } else {
        j["init_mean"] = vec_to_json(spec.init_mean);
        j["init_sd"] = spec.init_sd;
        j["trans_coef"] = mat_to_json(spec.trans_coef);
        j["act_shift"] = mat_to_json(spec.act_shift);
        j["trans_sd"] = spec.trans_sd;
        j["pu_mean"] = mat_to_json(spec.pu_mean);
        j["pv_mean"] = mat_to_json(spec.pv_mean);
        j["pu_sd"] = spec.pu_sd;
        j["pv_sd"] = spec.pv_sd;
        j["r0_lin"] = vec_to_json(spec.r0_lin);
        j["r0_act"] = vec_to_json(spec.r0_act);
    }
    return j.dump(2);
}

EnvSpec envspec_from_json(const std::string& text) {
    const json j = json::parse(text);
    EnvSpec spec;
    spec.name = j.at("name").get<std::string>();
    const bool tab = j.at("obs_kind").get<std::string>() == "tabular";
    spec.obs_kind = tab ? ObsKind::tabular(j.at("n_states").get<int>())
                        : ObsKind::continuous(j.at("dim").get<int>());
    spec.n_actions = j.at("n_actions").get<int>();
    spec.n_individuals = j.at("n_individuals").get<int>();
    spec.n_timepoints = j.at("n_timepoints").get<int>();
    spec.seed = j.at("seed").get<uint64_t>();
    spec.weights = Eigen::Vector3d(j.at("weights").at(0).get<double>(),
                                   j.at("weights").at(1).get<double>(),
                                   j.at("weights").at(2).get<double>());
    spec.reward_mode = j.at("reward_mode").get<std::string>() == "additive"
                           ? RewardMode::Additive
                           : RewardMode::ComponentMixture;
    spec.joint_z = j.at("joint_z").get<bool>();
    spec.behavior = PolicySpec::parse(j.at("behavior").get<std::string>());
    spec.reward_sd = j.at("reward_sd").get<double>();
    spec.ru_mean = vec_from_json(j.at("ru_mean"));
    spec.rv_mean = vec_from_json(j.at("rv_mean"));
    if (tab) {
        spec.init_probs = vec_from_json(j.at("init_probs"));
        spec.p0_table = mat_from_json(j.at("p0_table"));
        spec.pu_table = mat_from_json(j.at("pu_table"));
        spec.pv_table = mat_from_json(j.at("pv_table"), spec.obs_kind.n_states);
        spec.r0_table = mat_from_json(j.at("r0_table"));
    } else {
        spec.init_mean = vec_from_json(j.at("init_mean"));
        spec.init_sd = j.at("init_sd").get<double>();
        spec.trans_coef = mat_from_json(j.at("trans_coef"));
        spec.act_shift = mat_from_json(j.at("act_shift"));
        spec.trans_sd = j.at("trans_sd").get<double>();
        spec.pu_mean = mat_from_json(j.at("pu_mean"));
        spec.pv_mean = mat_from_json(j.at("pv_mean"), spec.obs_kind.dim);
        spec.pu_sd = j.at("pu_sd").get<double>();
        spec.pv_sd = j.at("pv_sd").get<double>();
        spec.r0_lin = vec_from_json(j.at("r0_lin"));
        spec.r0_act = vec_from_json(j.at("r0_act"));
    }
    return spec;
}

void save_envspec(const std::string& path, const EnvSpec& spec) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open " + path + " for writing");
    out << envspec_to_json(spec);
}

EnvSpec load_envspec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return envspec_from_json(text);
}

}  // namespace twdidp::envsim
