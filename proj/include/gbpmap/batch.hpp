#pragma once

#include <utility>
#include <vector>

#include "gbpmap/sparse_gp.hpp"

namespace gbpmap {

/// One robot's share of a centralized batch fit: its inducing inputs and
/// the observations assigned to it.
struct BatchBlock {
    Eigen::MatrixXd z;
    std::vector<Observation> obs;
};

enum class BatchPrior {
    kIndependent,  // per-block unary priors, no cross factors
    kTree,         // spanning tree of grid-adjacent conditionals
    kTreeExtra,    // tree plus n extra edges
    kDense,        // single block over the union of all inducing inputs
};

struct BatchOptions {
    BatchPrior prior = BatchPrior::kTree;
    int extra_edges = 0;
    int rows = 0;  // grid layout of the blocks, row-major
    int cols = 0;
    double jitter = kDefaultJitter;
    double damping = 0.4;
    double tol = 1e-8;
    int max_iterations = 2000;
};

/// Centralized model over all blocks. For tree/loopy priors each block is
/// one variable; the dense prior collapses everything into a single block.
class BatchModel {
public:
    BatchModel(std::vector<BatchBlock> blocks, Kernel kernel, NoiseModel noise,
               BatchOptions options);

    /// Runs inference: a tree sweep when the factor graph is acyclic,
    /// otherwise damped synchronous iteration. Returns the iterate result
    /// (a sweep reports converged in one iteration).
    IterateResult fit();

    /// Predicts at xstar from the given block's posterior (any block for
    /// the dense prior, which has exactly one). Requires fit() first.
    MomentGaussian predict(const Eigen::VectorXd& xstar, int block_index) const;

    int num_blocks() const { return static_cast<int>(z_.size()); }
    const FactorGraph& graph() const { return graph_; }
    const std::vector<std::pair<int, int>>& extra_edges_used() const { return extra_edges_; }

private:
    FactorGraph graph_;
    Kernel kernel_;
    NoiseModel noise_;
    BatchOptions options_;
    std::vector<Eigen::MatrixXd> z_;   // per robot block
    std::vector<NodeId> vars_;
    Eigen::MatrixXd dense_union_z_;    // dense prior only
    NodeId dense_var_ = kInvalidNode;
    std::vector<std::pair<int, int>> extra_edges_;
    std::vector<FitcPredictor> predictors_;  // built by fit()
};

/// Ranks candidate extra edges greedily: Euclidean centroid distance
/// ascending, then graph distance (in the current edge set) descending,
/// with (i, j) id-pair tie-break; returns the first n in insertion order.
std::vector<std::pair<int, int>> rank_extra_edges(
    const std::vector<Eigen::VectorXd>& centroids,
    const std::vector<std::pair<int, int>>& tree_edges, int n);

/// Spanning tree over a rows x cols grid: cells in a row chain to the
/// left, first column chains upward (all edges grid-adjacent, parent is
/// always the lower id).
std::vector<std::pair<int, int>> grid_spanning_tree(int rows, int cols);

}  // namespace gbpmap
