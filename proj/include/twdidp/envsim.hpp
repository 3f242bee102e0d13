#ifndef TWDIDP_ENVSIM_HPP
#define TWDIDP_ENVSIM_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "twdidp/core.hpp"

namespace twdidp {

/// Serializable policy description (everything except Custom).
struct PolicySpec {
    Policy::Kind kind = Policy::Kind::ObservationAgnostic;
    std::string id;
    Eigen::VectorXd agnostic;
    Eigen::MatrixXd table;
    int thr_dim = 0;
    double thr_cut = 0.0;
    Eigen::VectorXd thr_low, thr_high;

    Policy make() const;
    /// Compact text form, e.g. "agnostic:0.2,0.8", "table:0.7,0.3;0.3,0.7",
    /// "threshold:0:11:1,0:0,1".
    static PolicySpec parse(const std::string& text);
    std::string to_text() const;
};

}  // namespace twdidp

namespace twdidp::envsim {

/// How rewards are drawn by the generator. Additive draws around the summed
/// component means (the regression form of the reward model); ComponentMixture
/// draws the component label first and samples that component's law.
enum class RewardMode { Additive, ComponentMixture };

/// Fully materialized synthetic environment: mixture weights, component laws
/// for transitions and rewards, behavior policy, panel dimensions and seed.
struct EnvSpec {
    std::string name = "custom";
    ObsKind obs_kind = ObsKind::tabular(2);
    int n_actions = 2;
    int n_individuals = 0;
    int n_timepoints = 0;
    uint64_t seed = 0;
    Eigen::Vector3d weights{1.0, 0.0, 0.0};  // (pi0, pi_u, pi_v)
    RewardMode reward_mode = RewardMode::Additive;
    bool joint_z = false;  // share one component label between o' and r draws
    PolicySpec behavior;

    // initial observation law
    Eigen::VectorXd init_probs;  // tabular: over states
    Eigen::VectorXd init_mean;   // continuous
    double init_sd = 1.0;

    // transition components (tabular)
    Eigen::MatrixXd p0_table;  // (S*A) x S, row o*A+a
    Eigen::MatrixXd pu_table;  // N x S
    Eigen::MatrixXd pv_table;  // (T-1) x S, departure times 1..T-1

    // transition components (continuous, isotropic Gaussian)
    Eigen::MatrixXd trans_coef;  // d x d
    Eigen::MatrixXd act_shift;   // A x d
    double trans_sd = 1.0;
    Eigen::MatrixXd pu_mean;  // N x d
    Eigen::MatrixXd pv_mean;  // (T-1) x d, departure times
    double pu_sd = 1.0, pv_sd = 1.0;

    // reward component means (all Gaussian with sd reward_sd)
    Eigen::MatrixXd r0_table;  // tabular S x A
    Eigen::VectorXd r0_lin;    // continuous: linear coefficient on obs
    Eigen::VectorXd r0_act;    // continuous: per-action shift
    Eigen::VectorXd ru_mean;   // N
    Eigen::VectorXd rv_mean;   // T
    double reward_sd = 1.0;

    int p0_row(int state, int action) const { return state * n_actions + action; }
    double r0_mean(const Eigen::VectorXd& obs, int action) const;
    /// Reward main effect pi0 * E[r | shared component, o, a].
    double r1(const Eigen::VectorXd& obs, int action) const;
    double theta(int i) const { return weights(1) * ru_mean(i); }
    double lambda(int t0) const { return weights(2) * rv_mean(t0); }  // 0-based time
    void validate() const;
};

/// Built-in presets: "paper-tabular", "paper-continuous",
/// "homogeneous-tabular" (single component, no effects, stationary start).
EnvSpec make_preset(const std::string& name, int n_individuals, int n_timepoints, uint64_t seed);
std::vector<std::string> preset_names();

TrajectorySet generate(const EnvSpec& spec);

/// Generation output with the latent component labels retained
/// (test-only side channel). z entries: 0 shared, 1 individual, 2 time;
/// reward labels are -1 in Additive mode.
struct GenerateOutput {
    TrajectorySet data;
    Eigen::MatrixXi z_transition;  // N x (T-1)
    Eigen::MatrixXi z_reward;      // N x T
};
GenerateOutput generate_with_labels(const EnvSpec& spec);

/// Exact per-individual value grid E^pi[R_{i,t} | O_{i,1}] by propagating
/// state distributions forward under the target policy and the true mixture.
/// Tabular specs only.
Eigen::MatrixXd dp_oracle_tabular(const EnvSpec& spec, const Policy& pi);

struct McOracleResult {
    Eigen::MatrixXd mean;  // N x T
    Eigen::MatrixXd se;    // N x T
};

/// Monte-Carlo value grid: n_reps simulated target-policy trajectories per
/// individual from the observed first observation; per-cell mean and
/// standard error.
McOracleResult mc_oracle(const EnvSpec& spec, const Policy& pi, int n_reps = 500,
                         uint64_t seed = 0);

// --- exact recursion oracles (tabular) -------------------------------------

/// Exact stage main-effect tables r_k(o,a) for k = 1..k_max under the shared
/// component recursion; r_k contracts to a constant geometrically.
std::vector<Eigen::MatrixXd> exact_stage_main_effects(const EnvSpec& spec, const Policy& pi,
                                                      int k_max);

/// Sup-norm of r_k minus its mean across (o,a) cells, k = 1..k_max.
std::vector<double> exact_main_effect_spread(const EnvSpec& spec, const Policy& pi, int k_max);

/// Exact Q_{i,t1,t2}(o,a) computed by direct forward expectation.
Eigen::MatrixXd q_direct(const EnvSpec& spec, const Policy& pi, int i, int t1, int t2);
/// Same quantity via the one-step backward recursion.
Eigen::MatrixXd q_recursive(const EnvSpec& spec, const Policy& pi, int i, int t1, int t2);

std::string envspec_to_json(const EnvSpec& spec);
EnvSpec envspec_from_json(const std::string& text);
void save_envspec(const std::string& path, const EnvSpec& spec);
EnvSpec load_envspec(const std::string& path);

}  // namespace twdidp::envsim

#endif
