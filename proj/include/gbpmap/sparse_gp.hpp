#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "gbpmap/factor_graph.hpp"
#include "gbpmap/kernel.hpp"

namespace gbpmap {

struct Observation {
    Eigen::VectorXd x;
    double y = 0.0;
    long timestamp = 0;
};

/// One robot's inducing inputs Z and the bookkeeping around the belief
/// over u: the graph variable id, the accumulator unary factor absorbing
/// fused-and-discarded observation messages, and per-point insertion times.
struct InducingBlock {
    Eigen::MatrixXd z;            // rows = inducing inputs
    NodeId u_variable = kInvalidNode;
    InfoGaussian accumulator;     // dim tracks |Z|
    std::vector<long> timestamps; // non-decreasing

    int size() const { return static_cast<int>(z.rows()); }
    Eigen::VectorXd centroid() const;
};

// --- factor construction ----------------------------------------------------

/// Unary GP prior on u: eta = 0, lambda = gram(Z,Z)^-1.
InfoGaussian gp_prior_factor(const Eigen::MatrixXd& z, const Kernel& kernel,
                             double jitter = kDefaultJitter);

/// Pairwise GP conditional factor N(u_child; A u_parent, Q) over scope
/// (child, parent) with A = K_cp K_pp^-1 and Q = K_cc - A K_pc.
InfoGaussian gp_conditional_factor(const Eigen::MatrixXd& z_child,
                                   const Eigen::MatrixXd& z_parent, const Kernel& kernel,
                                   double jitter = kDefaultJitter);

/// Unary observation factor on u with f marginalized analytically:
/// a = K_uu^-1 k_x, c = k(x,x) - k_x^T a (clipped at 0),
/// lambda = a a^T / (c + sigma^2), eta = a y / (c + sigma^2).
InfoGaussian fitc_observation_factor(const Observation& obs, const Eigen::MatrixXd& z,
                                     const Kernel& kernel, const NoiseModel& noise,
                                     double jitter = kDefaultJitter);

/// Sum of the observation factors for a batch, factorizing K_uu once.
InfoGaussian sum_fitc_observation_factors(const std::vector<Observation>& obs,
                                          const Eigen::MatrixXd& z, const Kernel& kernel,
                                          const NoiseModel& noise,
                                          double jitter = kDefaultJitter);

// --- prediction ---------------------------------------------------------------

/// Scalar posterior at xstar from a block belief q(u) = N(mu_u, sigma_u):
/// mean = k*^T K_uu^-1 mu_u,
/// var  = k** - k*^T K_uu^-1 k* + k*^T K_uu^-1 sigma_u K_uu^-1 k*.
MomentGaussian fitc_predict(const Eigen::VectorXd& xstar, const Eigen::MatrixXd& z,
                            const MomentGaussian& belief, const Kernel& kernel,
                            double jitter = kDefaultJitter);

/// Prediction with K_uu factorized once, for query loops.
class FitcPredictor {
public:
    FitcPredictor(Eigen::MatrixXd z, Kernel kernel, MomentGaussian belief,
                  double jitter = kDefaultJitter);

    MomentGaussian predict(const Eigen::VectorXd& xstar) const;
    const Eigen::VectorXd& centroid() const { return centroid_; }

private:
    Eigen::MatrixXd z_;
    Kernel kernel_;
    MomentGaussian belief_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
    Eigen::VectorXd centroid_;
};

// --- inducing point selection -------------------------------------------------

/// Greedy variance selection: iteratively picks the candidate maximizing
/// c(x) = k(x,x) - k_x^T K_uu^-1 k_x, appending each pick to Z before the
/// next score. Returns indices into `candidates`, at most m.
std::vector<int> greedy_variance_select(const Eigen::MatrixXd& candidates,
                                        const Eigen::MatrixXd& z, const Kernel& kernel,
                                        int m, double jitter = kDefaultJitter);

// --- hyperparameter objective ---------------------------------------------------

struct FitcObjective {
    double value = 0.0;
    Eigen::VectorXd gradient;  // d/d(log kernel params), then d/d(log sigma)
};

/// FITC log marginal likelihood log N(y; 0, Q_ff + diag(K_ff - Q_ff) + sigma^2 I)
/// with exact gradients w.r.t. log-hyperparameters and log-noise.
FitcObjective fitc_log_marginal(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& z, const Kernel& kernel,
                                const NoiseModel& noise, double jitter = kDefaultJitter);

// --- binary (occupancy) observations ------------------------------------------

/// Linearization of the binary cross-entropy likelihood with p = sigmoid(f)
/// at expansion point f0: Gaussian in f with lambda = s(1-s) and
/// eta = (y - s) + lambda f0 where s = sigmoid(f0).
std::pair<double, double> bce_linearize(double f0, double y);

/// Binary observation factor on u: combines the linearized BCE likelihood
/// with p(f|u) and marginalizes f. Relinearized at the current belief mean.
class BceObservationEnergy : public LinearizableEnergy {
public:
    BceObservationEnergy(const Observation& obs, const Eigen::MatrixXd& z,
                         const Kernel& kernel, double jitter = kDefaultJitter);
    InfoGaussian linearize(const Eigen::VectorXd& mean_u) const override;

private:
    double y_;
    Eigen::VectorXd a_;  // K_uu^-1 k_x
    double c_;           // conditional variance, clipped at 0
};

// --- single-robot model ----------------------------------------------------------

struct SparseGpConfig {
    double jitter = kDefaultJitter;
    int buffer_capacity = 5;    // retained observations before fuse+discard
    int max_inducing = 200;     // retirement threshold
};

/// Per-robot FITC model: a factor graph holding the u variable, the GP
/// prior (or, under the multi-robot protocol, a conditional replacing it),
/// the accumulator factor, and one live unary factor per retained
/// observation. Owned by exactly one actor.
class SparseGpModel {
public:
    SparseGpModel(Eigen::MatrixXd z, Kernel kernel, NoiseModel noise, SparseGpConfig config,
                  NodeId u_variable = 0);

    const InducingBlock& block() const { return block_; }
    const Kernel& kernel() const { return kernel_; }
    const NoiseModel& noise() const { return noise_; }
    Kernel& kernel_mut() { return kernel_; }
    NoiseModel& noise_mut() { return noise_; }
    FactorGraph& graph() { return graph_; }
    const FactorGraph& graph() const { return graph_; }
    NodeId u_variable() const { return block_.u_variable; }
    NodeId prior_factor() const { return prior_factor_; }
    const std::vector<Observation>& retained() const { return retained_; }

    /// Adds a continuous observation as a live unary factor; fuses the
    /// oldest retained observation if the buffer exceeds capacity.
    void add_observation(const Observation& obs);
    /// Adds a binary (occupancy) observation as a live linearized factor.
    void add_binary_observation(const Observation& obs);

    /// Fuses the oldest retained observation into the accumulator and
    /// discards its record and factor.
    void fuse_oldest();
    void fuse_all();

    /// Folds an externally built unary factor into the accumulator.
    void fuse_factor(const InfoGaussian& factor);

    /// Sequentially linearizes and fuses a batch of binary observations
    /// into the accumulator, tracking the belief in moment space with
    /// rank-1 updates (no live factors are created).
    void fuse_binary_batch(const std::vector<Observation>& batch);

    /// Extends Z by one point; grows the u variable, zero-pads the
    /// accumulator, rebuilds the prior and recomputes live observation
    /// factors against the extended block.
    void add_inducing_point(const Eigen::VectorXd& location, long timestamp);

    /// Drops the oldest points beyond max_count, marginalizing their
    /// contribution in the prior+accumulator joint onto the survivors.
    void retire_inducing_points(int max_count);

    /// Rebuilds prior and live observation factors after a kernel/noise
    /// change. The accumulator is kept as-is (its observations are gone).
    void refresh_factors();

    /// Recomputes all local messages (every factor once, in id order).
    void update_local(double damping = 0.0);

    InfoGaussian belief() const { return graph_.belief(block_.u_variable); }
    MomentGaussian belief_moments() const;
    MomentGaussian predict(const Eigen::VectorXd& xstar) const;

    /// One clipped gradient-ascent step of the FITC log marginal on the
    /// retained buffer; rejected if the objective decreases. Returns true
    /// if parameters changed.
    bool hyper_step(double step_size, double max_step_norm);

    /// Replaces the prior factor id (protocol swaps unary -> conditional).
    void set_prior_factor(NodeId id) { prior_factor_ = id; }

private:
    FactorGraph graph_;
    InducingBlock block_;
    Kernel kernel_;
    NoiseModel noise_;
    SparseGpConfig config_;
    NodeId prior_factor_ = kInvalidNode;
    NodeId accumulator_factor_ = kInvalidNode;
    std::vector<Observation> retained_;
    std::vector<NodeId> retained_factors_;
    std::vector<bool> retained_binary_;

    void rebuild_observation_factors();
    void sync_accumulator_factor();
};

}  // namespace gbpmap
