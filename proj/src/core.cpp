#include "twdidp/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace twdidp {

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

std::string ValidationResult::summary() const {
    std::ostringstream os;
    for (const auto& v : violations) os << v.message << "\n";
    return os.str();
}

ValidationResult validate_trajectories(const TrajectorySet& data) {
    ValidationResult res;
    auto add = [&](const std::string& m) { res.violations.push_back({m}); };

    const int N = data.n_individuals, T = data.n_timepoints;
    if (N < 1) add("n_individuals must be positive");
    if (T < 1) add("n_timepoints must be positive");
    if (data.n_actions < 1) add("n_actions must be positive");
    if (N < 1 || T < 1) return res;

    if (data.rewards.rows() != N || data.rewards.cols() != T)
        add("ragged panel: rewards shape mismatch");
    if (data.actions.rows() != N || data.actions.cols() != T)
        add("ragged panel: actions shape mismatch");
    const Eigen::Index want_rows = static_cast<Eigen::Index>(N) * T;
    if (data.observations.rows() != want_rows)
        add("ragged panel: observations row count mismatch");
    const int d = data.obs_kind.is_tabular() ? 1 : data.obs_kind.dim;
    if (data.observations.cols() != d) add("observation dimension mismatch");
    if (!res.ok()) return res;

    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < N; ++i) {
            const int a = data.actions(i, t);
            if (a < 0 || a >= data.n_actions) {
                add("action out of range at (" + std::to_string(i + 1) + "," +
                    std::to_string(t + 1) + "): " + std::to_string(a));
            }
            const double r = data.rewards(i, t);
            if (!std::isfinite(r)) {
                add("non-finite reward at (" + std::to_string(i + 1) + "," +
                    std::to_string(t + 1) + ")");
            }
            const auto row = data.observations.row(static_cast<Eigen::Index>(t) * N + i);
            for (int j = 0; j < d; ++j) {
                if (!std::isfinite(row(j))) {
                    add("non-finite observation at (" + std::to_string(i + 1) + "," +
                        std::to_string(t + 1) + ")");
                    break;
                }
            }
            if (data.obs_kind.is_tabular()) {
                const double raw = row(0);
                const int s = static_cast<int>(std::llround(raw));
                if (std::abs(raw - s) > 1e-9 || s < 0 || s >= data.obs_kind.n_states) {
                    add("state out of range at (" + std::to_string(i + 1) + "," +
                        std::to_string(t + 1) + "): " + std::to_string(raw));
                }
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// policies
// ---------------------------------------------------------------------------

Policy Policy::observation_agnostic(Eigen::VectorXd probs, std::string id) {
    Policy p;
    p.kind_ = Kind::ObservationAgnostic;
    p.n_actions_ = static_cast<int>(probs.size());
    p.agnostic_ = std::move(probs);
    p.id_ = id.empty() ? "agnostic" : std::move(id);
    return p;
}

Policy Policy::table(Eigen::MatrixXd probs, std::string id) {
    Policy p;
    p.kind_ = Kind::Table;
    p.n_actions_ = static_cast<int>(probs.cols());
    p.table_ = std::move(probs);
    p.id_ = id.empty() ? "table" : std::move(id);
    return p;
}

Policy Policy::threshold(int dim, double cutoff, Eigen::VectorXd low_probs,
                         Eigen::VectorXd high_probs, std::string id) {
    if (low_probs.size() != high_probs.size())
        throw ValidationError("threshold policy arms must have equal action counts");
    Policy p;
    p.kind_ = Kind::Threshold;
    p.n_actions_ = static_cast<int>(low_probs.size());
    p.thr_dim_ = dim;
    p.thr_cut_ = cutoff;
    p.thr_low_ = std::move(low_probs);
    p.thr_high_ = std::move(high_probs);
    p.id_ = id.empty() ? "threshold" : std::move(id);
    return p;
}

Policy Policy::custom(int n_actions, ProbFn fn, std::string id) {
    Policy p;
    p.kind_ = Kind::Custom;
    p.n_actions_ = n_actions;
    p.fn_ = std::move(fn);
    p.id_ = std::move(id);
    return p;
}

Eigen::VectorXd Policy::probs(const Eigen::VectorXd& obs) const {
    switch (kind_) {
        case Kind::ObservationAgnostic: return agnostic_;
        case Kind::Table: {
            if (obs.size() != 1) throw ValidationError("table policy expects scalar state");
            const int s = static_cast<int>(std::llround(obs(0)));
            if (s < 0 || s >= table_.rows())
                throw ValidationError("table policy: state out of range");
            return table_.row(s);
        }
        case Kind::Threshold: {
            if (thr_dim_ < 0 || thr_dim_ >= obs.size())
                throw ValidationError("threshold policy: dimension out of range");
            return obs(thr_dim_) < thr_cut_ ? thr_low_ : thr_high_;
        }
        case Kind::Custom: return fn_(obs);
    }
    throw ValidationError("unreachable policy kind");
}

Eigen::VectorXd policy_probs(const Policy& p, const Eigen::VectorXd& obs) {
    Eigen::VectorXd v = p.probs(obs);
    if (v.size() != p.n_actions()) throw ValidationError("policy returned wrong action count");
    double sum = 0.0;
    for (Eigen::Index a = 0; a < v.size(); ++a) {
        if (!(v(a) >= 0.0)) throw ValidationError("policy returned negative probability");
        sum += v(a);
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw ValidationError("policy probabilities sum to " + std::to_string(sum));
    return v;
}

void EstimandTarget::check_bounds(int n_individuals, int n_timepoints) const {
    const bool needs_i = kind == Kind::PerIndividual || kind == Kind::PerIndividualTime;
    const bool needs_t = kind == Kind::PerTime || kind == Kind::PerIndividualTime;
    if (needs_i && (i < 1 || i > n_individuals))
        throw ValidationError("individual index out of range");
    if (needs_t && (t < 1 || t > n_timepoints)) throw ValidationError("time index out of range");
}

// ---------------------------------------------------------------------------
// fits and reports
// ---------------------------------------------------------------------------

double TwoWayFit::main_effect(const Eigen::VectorXd& obs, int action) const {
    const Eigen::VectorXd phi = basis.eval(obs);
    const int L = static_cast<int>(phi.size());
    return offset + phi.dot(beta.segment(static_cast<Eigen::Index>(action) * L, L));
}

double TwoWayFit::value(int i, int s, const Eigen::VectorXd& obs, int action) const {
    return main_effect(obs, action) + theta(i) + lambda(s);
}

ValueReport ValueReport::from_grid(std::string estimator_name, std::string policy_id,
                                   Eigen::MatrixXd grid, std::string config_digest,
                                   uint64_t seed) {
    ValueReport r;
    r.estimator_name = std::move(estimator_name);
    r.target_policy_id = std::move(policy_id);
    r.config_digest = std::move(config_digest);
    r.seed = seed;
    r.eta_it = std::move(grid);
    r.eta_i = r.eta_it.rowwise().mean();
    r.eta_t = r.eta_it.colwise().mean();
    r.eta = r.eta_it.mean();
    return r;
}

double ValueReport::lookup(const EstimandTarget& target) const {
    target.check_bounds(static_cast<int>(eta_i.size()), static_cast<int>(eta_t.size()));
    switch (target.kind) {
        case EstimandTarget::Kind::Average: return eta;
        case EstimandTarget::Kind::PerIndividual: return eta_i(target.i - 1);
        case EstimandTarget::Kind::PerTime: return eta_t(target.t - 1);
        case EstimandTarget::Kind::PerIndividualTime:
            return eta_it(target.i - 1, target.t - 1);
    }
    throw ValidationError("unreachable estimand kind");
}

bool ValueReport::aggregation_consistent(double tol) const {
    if (eta_i.size() != eta_it.rows() || eta_t.size() != eta_it.cols()) return false;
    if (std::abs(eta - eta_it.mean()) > tol) return false;
    if ((eta_i - eta_it.rowwise().mean()).cwiseAbs().maxCoeff() > tol) return false;
    if ((eta_t.transpose() - eta_it.colwise().mean()).cwiseAbs().maxCoeff() > tol) return false;
    return true;
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

TrajectorySet read_trajectory_csv(const std::string& path, std::optional<ObsKind> obs_kind,
                                  std::optional<int> n_actions) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
    const auto header = split_csv_line(line);
    if (header.size() < 5 || header[0] != "id" || header[1] != "t" || header[2] != "action" ||
        header[3] != "reward") {
        throw ValidationError(path + ": header must be id,t,action,reward,obs_1,...");
    }
    const int d = static_cast<int>(header.size()) - 4;

    struct Row {
        long long id, t;
        int action;
        double reward;
        std::vector<double> obs;
        int line_no;
    };
    std::vector<Row> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (static_cast<int>(f.size()) != d + 4)
            throw ValidationError(path + ":" + std::to_string(line_no) + ": wrong column count");
        Row r;
        r.line_no = line_no;
        try {
            r.id = std::stoll(f[0]);
            r.t = std::stoll(f[1]);
            r.action = std::stoi(f[2]);
            r.reward = std::stod(f[3]);
            for (int j = 0; j < d; ++j) r.obs.push_back(std::stod(f[4 + j]));
        } catch (const std::exception&) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": parse error");
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw ValidationError(path + ": no data rows");

    std::set<long long> ids, ts;
    for (const auto& r : rows) {
        ids.insert(r.id);
        ts.insert(r.t);
    }
    std::map<long long, int> id_map, t_map;
    int next = 0;
    for (long long v : ids) id_map[v] = next++;
    next = 0;
    for (long long v : ts) t_map[v] = next++;
    const int N = static_cast<int>(ids.size());
    const int T = static_cast<int>(ts.size());

    TrajectorySet data;
    data.n_individuals = N;
    data.n_timepoints = T;
    data.observations.resize(static_cast<Eigen::Index>(N) * T, d);
    data.actions.resize(N, T);
    data.rewards.resize(N, T);

    std::vector<int> seen(static_cast<size_t>(N) * T, 0);
    int max_action = 0;
    for (const auto& r : rows) {
        const int i = id_map[r.id], t = t_map[r.t];
        const size_t cell = static_cast<size_t>(t) * N + i;
        if (seen[cell]) {
            throw ValidationError(path + ":" + std::to_string(r.line_no) + ": duplicate cell (" +
                                  std::to_string(r.id) + "," + std::to_string(r.t) + ")");
        }
        seen[cell] = r.line_no;
        data.actions(i, t) = r.action;
        data.rewards(i, t) = r.reward;
        for (int j = 0; j < d; ++j) data.observations(cell, j) = r.obs[j];
        max_action = std::max(max_action, r.action);
    }
    if (rows.size() != static_cast<size_t>(N) * T) {
        // locate one missing cell for the message
        std::vector<long long> id_list(ids.begin(), ids.end()), t_list(ts.begin(), ts.end());
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < N; ++i) {
                if (!seen[static_cast<size_t>(t) * N + i]) {
                    throw ValidationError(path + ": missing cell (id=" +
                                          std::to_string(id_list[i]) + ",t=" +
                                          std::to_string(t_list[t]) + ")");
                }
            }
        }
    }

    data.n_actions = n_actions.value_or(max_action + 1);
    if (obs_kind) {
        data.obs_kind = *obs_kind;
    } else if (d == 1) {
        bool integral = true;
        double max_state = 0.0;
        for (Eigen::Index r = 0; r < data.observations.rows() && integral; ++r) {
            const double v = data.observations(r, 0);
            if (std::abs(v - std::llround(v)) > 1e-9 || v < 0 || v > 1000) integral = false;
            max_state = std::max(max_state, v);
        }
        data.obs_kind = integral ? ObsKind::tabular(static_cast<int>(std::llround(max_state)) + 1)
                                 : ObsKind::continuous(1);
    } else {
        data.obs_kind = ObsKind::continuous(d);
    }

    const auto validation = validate_trajectories(data);
    if (!validation.ok()) throw ValidationError(path + ": " + validation.summary());
    return data;
}

void write_trajectory_csv(const std::string& path, const TrajectorySet& data) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open " + path + " for writing");
    const int d = static_cast<int>(data.observations.cols());
    out << "id,t,action,reward";
    for (int j = 1; j <= d; ++j) out << ",obs_" << j;
    out << "\n";
    char buf[40];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (int i = 0; i < data.n_individuals; ++i) {
        for (int t = 0; t < data.n_timepoints; ++t) {
            out << (i + 1) << "," << (t + 1) << "," << data.actions(i, t) << ","
                << fmt(data.rewards(i, t));
            const auto row =
                data.observations.row(static_cast<Eigen::Index>(t) * data.n_individuals + i);
            for (int j = 0; j < d; ++j) out << "," << fmt(row(j));
            out << "\n";
        }
    }
}

}  // namespace twdidp
