#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "gbpmap/gaussian.hpp"

namespace gbpmap {

using NodeId = std::int32_t;
inline constexpr NodeId kInvalidNode = -1;

/// Non-Gaussian factor payload: an energy that can be linearized into an
/// InfoGaussian over the factor scope at a given expansion point (the
/// current belief mean of the scope variables).
class LinearizableEnergy {
public:
    virtual ~LinearizableEnergy() = default;
    virtual InfoGaussian linearize(const Eigen::VectorXd& scope_mean) const = 0;
};

enum class Schedule { kSynchronous, kRandomEdge };

struct IterateOptions {
    Schedule schedule = Schedule::kSynchronous;
    double damping = 0.0;          // m_new = (1-damping) m_raw + damping m_old
    int max_iterations = 200;
    double tol = 1e-8;             // max change of message means/variances
    double divergence_trace = 1e12;
    double jitter = kDefaultJitter;
    std::uint64_t rng_seed = 0;    // random-edge schedule only
};

struct IterateResult {
    bool converged = false;
    int iterations = 0;
    double final_delta = 0.0;
};

/// Gaussian factor graph with belief propagation.
///
/// Variables and factors are keyed by stable integer ids (variable ids may
/// be chosen by the caller, which multi-graph protocols use to mirror peer
/// variables). Each factor stores its current Gaussian parameters over the
/// concatenated scope plus one message per edge and direction; messages
/// initialize to zero information. Beliefs are the product of stored
/// factor-to-variable messages. A graph is owned by one logical actor;
/// no internal synchronization.
class FactorGraph {
public:
    struct Variable {
        int dim = 0;
        std::vector<NodeId> factors;  // insertion order
    };

    struct Factor {
        std::vector<NodeId> scope;    // ordered variable ids
        std::vector<int> offsets;     // start of each scope block
        int total_dim = 0;
        InfoGaussian value;           // current (possibly linearized) parameters
        std::shared_ptr<const LinearizableEnergy> energy;  // null = pure Gaussian
        std::vector<InfoGaussian> to_variable;    // factor -> variable, per slot
        std::vector<InfoGaussian> from_variable;  // variable -> factor, per slot
    };

    // --- structure ---------------------------------------------------------
    NodeId add_variable(int dim);
    NodeId add_variable(NodeId id, int dim);
    void remove_variable(NodeId id);  // detaches and removes its factors
    /// Changes a variable's dimension. Attached factor values are reset to
    /// zero information (callers rebuild them) and their messages cleared.
    void resize_variable(NodeId id, int new_dim);

    NodeId add_factor(std::vector<NodeId> scope, InfoGaussian value);
    NodeId add_factor(std::vector<NodeId> scope,
                      std::shared_ptr<const LinearizableEnergy> energy);
    void remove_factor(NodeId id);
    /// Rewires a factor. Messages on retained edges are kept, new edges start
    /// at zero information, dropped edges are discarded.
    void retarget_factor(NodeId id, std::vector<NodeId> new_scope, InfoGaussian new_value);
    void set_factor_value(NodeId id, InfoGaussian value);

    bool has_variable(NodeId id) const { return variables_.count(id) > 0; }
    bool has_factor(NodeId id) const { return factors_.count(id) > 0; }
    const Variable& variable(NodeId id) const;
    const Factor& factor(NodeId id) const;
    std::vector<NodeId> variable_ids() const;
    std::vector<NodeId> factor_ids() const;
    int num_variables() const { return static_cast<int>(variables_.size()); }
    int num_factors() const { return static_cast<int>(factors_.size()); }

    // --- messages & beliefs ------------------------------------------------
    /// Belief = product of stored factor-to-variable messages (zero info if
    /// the variable has no informative neighbors).
    InfoGaussian belief(NodeId variable_id) const;
    MomentGaussian belief_moments(NodeId variable_id, double jitter = kDefaultJitter) const;
    /// Mean of the belief; zero vector when the belief carries no information.
    Eigen::VectorXd belief_mean(NodeId variable_id, double jitter = kDefaultJitter) const;

    const InfoGaussian& message_to_variable(NodeId factor_id, NodeId variable_id) const;
    const InfoGaussian& message_to_factor(NodeId variable_id, NodeId factor_id) const;
    void set_message_to_variable(NodeId factor_id, NodeId variable_id, InfoGaussian msg);

    /// Fresh variable->factor message: product of the other factors'
    /// messages into the variable (does not store).
    InfoGaussian compute_variable_to_factor(NodeId variable_id, NodeId factor_id) const;
    /// Fresh factor->variable message from the stored inbound messages:
    /// the information-form marginal of factor times inbound, onto target.
    InfoGaussian compute_factor_to_variable(NodeId factor_id, NodeId variable_id,
                                            double jitter = kDefaultJitter) const;

    /// Relinearizes (if non-Gaussian), refreshes inbound messages, then
    /// emits all outgoing messages with damping. Returns the max change of
    /// the emitted messages in moment space.
    double update_factor(NodeId factor_id, double damping = 0.0,
                         double jitter = kDefaultJitter);

    /// Refreshes this factor's linearization at the current belief means.
    void relinearize(NodeId factor_id);

    // --- inference ---------------------------------------------------------
    /// Leaves-to-root then root-to-leaves sweep. Requires an acyclic graph
    /// (components other than the root's are swept from their smallest
    /// variable id). Beliefs afterwards equal the exact joint marginals.
    void sweep_tree(NodeId root_variable, double jitter = kDefaultJitter);

    IterateResult iterate(const IterateOptions& opts);

    bool is_acyclic() const;

    /// One record per node and edge: topology plus belief moments.
    void dump(std::ostream& os) const;

private:
    std::map<NodeId, Variable> variables_;
    std::map<NodeId, Factor> factors_;
    NodeId next_variable_id_ = 0;
    NodeId next_factor_id_ = 0;

    Variable& variable_mut(NodeId id);
    Factor& factor_mut(NodeId id);
    int slot_of(const Factor& f, NodeId variable_id) const;
    void check_scope(const std::vector<NodeId>& scope) const;
    void refresh_inbound(Factor& f, NodeId factor_id);
    double message_moment_delta(const InfoGaussian& a, const InfoGaussian& b,
                                double jitter) const;
};

}  // namespace gbpmap
