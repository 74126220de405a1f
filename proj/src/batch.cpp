#include "gbpmap/batch.hpp"

#include <algorithm>
#include <limits>
#include <queue>

namespace gbpmap {

std::vector<std::pair<int, int>> grid_spanning_tree(int rows, int cols) {
    std::vector<std::pair<int, int>> edges;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int id = r * cols + c;
            if (c > 0) {
                edges.push_back({id - 1, id});
            } else if (r > 0) {
                edges.push_back({id - cols, id});
            }
        }
    }
    return edges;
}

namespace {

std::vector<int> bfs_distances(int n, const std::vector<std::vector<int>>& adj, int source) {
    std::vector<int> dist(static_cast<size_t>(n), std::numeric_limits<int>::max());
    std::queue<int> q;
    dist[static_cast<size_t>(source)] = 0;
    q.push(source);
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        for (int w : adj[static_cast<size_t>(v)]) {
            if (dist[static_cast<size_t>(w)] == std::numeric_limits<int>::max()) {
                dist[static_cast<size_t>(w)] = dist[static_cast<size_t>(v)] + 1;
                q.push(w);
            }
        }
    }
    return dist;
}

}  // namespace

std::vector<std::pair<int, int>> rank_extra_edges(
    const std::vector<Eigen::VectorXd>& centroids,
    const std::vector<std::pair<int, int>>& tree_edges, int n) {
    const int nb = static_cast<int>(centroids.size());
    std::vector<std::vector<int>> adj(static_cast<size_t>(nb));
    std::vector<std::vector<bool>> have(static_cast<size_t>(nb),
                                        std::vector<bool>(static_cast<size_t>(nb), false));
    auto add_edge = [&](int i, int j) {
        adj[static_cast<size_t>(i)].push_back(j);
        adj[static_cast<size_t>(j)].push_back(i);
        have[static_cast<size_t>(i)][static_cast<size_t>(j)] = true;
        have[static_cast<size_t>(j)][static_cast<size_t>(i)] = true;
    };
    for (const auto& [i, j] : tree_edges) add_edge(i, j);

    std::vector<std::pair<int, int>> chosen;
    for (int round = 0; round < n; ++round) {
        int best_i = -1, best_j = -1;
        double best_euclid = std::numeric_limits<double>::infinity();
        int best_graph = -1;
        for (int i = 0; i < nb; ++i) {
            const std::vector<int> dist = bfs_distances(nb, adj, i);
            for (int j = i + 1; j < nb; ++j) {
                if (have[static_cast<size_t>(i)][static_cast<size_t>(j)]) continue;
                const double euclid = (centroids[static_cast<size_t>(i)] -
                                       centroids[static_cast<size_t>(j)])
                                          .norm();
                const int graph = dist[static_cast<size_t>(j)];
                const bool better =
                    euclid < best_euclid - 1e-12 ||
                    (std::abs(euclid - best_euclid) <= 1e-12 && graph > best_graph);
                if (better) {
                    best_euclid = euclid;
                    best_graph = graph;
                    best_i = i;
                    best_j = j;
                }
            }
        }
        if (best_i < 0) break;
        chosen.push_back({best_i, best_j});
        add_edge(best_i, best_j);
    }
    return chosen;
}

BatchModel::BatchModel(std::vector<BatchBlock> blocks, Kernel kernel, NoiseModel noise,
                       BatchOptions options)
    : kernel_(std::move(kernel)), noise_(noise), options_(options) {
    if (blocks.empty()) throw DimensionMismatch("BatchModel: no blocks");

    if (options_.prior == BatchPrior::kDense) {
        // One variable over the union of all inducing inputs with a dense
        // GP prior. The likelihood keeps the per-block attachment of the
        // factorized models (observations inform their own block directly),
        // so the baseline differs from them only through the prior.
        int rows = 0;
        for (const auto& b : blocks) rows += static_cast<int>(b.z.rows());
        Eigen::MatrixXd z_all(rows, blocks[0].z.cols());
        int r = 0;
        for (const auto& b : blocks) {
            z_all.middleRows(r, b.z.rows()) = b.z;
            r += static_cast<int>(b.z.rows());
        }
        for (const auto& b : blocks) z_.push_back(b.z);
        dense_union_z_ = z_all;
        dense_var_ = graph_.add_variable(rows);
        graph_.add_factor({dense_var_}, gp_prior_factor(z_all, kernel_, options_.jitter));
        InfoGaussian obs_sum = InfoGaussian::zero(rows);
        r = 0;
        for (const auto& b : blocks) {
            const int m = static_cast<int>(b.z.rows());
            const InfoGaussian block_sum =
                sum_fitc_observation_factors(b.obs, b.z, kernel_, noise_, options_.jitter);
            obs_sum.eta.segment(r, m) += block_sum.eta;
            obs_sum.lambda.block(r, r, m, m) += block_sum.lambda;
            r += m;
        }
        graph_.add_factor({dense_var_}, obs_sum);
        return;
    }

    for (const auto& b : blocks) {
        z_.push_back(b.z);
        vars_.push_back(graph_.add_variable(static_cast<int>(b.z.rows())));
    }

    std::vector<std::pair<int, int>> tree;
    if (options_.prior != BatchPrior::kIndependent) {
        if (options_.rows * options_.cols != static_cast<int>(blocks.size())) {
            throw ConfigError("BatchModel: rows x cols must match block count");
        }
        tree = grid_spanning_tree(options_.rows, options_.cols);
    }

    // Each edge makes the higher id condition on the lower; an extra edge
    // extends the child's conditional with one more parent block, so full
    // adjacency approaches the sequential factorization of the dense prior.
    std::vector<std::vector<int>> parents(blocks.size());
    for (const auto& [p, c] : tree) parents[static_cast<size_t>(c)].push_back(p);
    if (options_.prior == BatchPrior::kTreeExtra && options_.extra_edges > 0) {
        std::vector<Eigen::VectorXd> centroids;
        for (const auto& z : z_) centroids.push_back(z.colwise().mean().transpose());
        extra_edges_ = rank_extra_edges(centroids, tree, options_.extra_edges);
        for (const auto& [i, j] : extra_edges_) {
            parents[static_cast<size_t>(j)].push_back(i);
        }
    }
    for (size_t k = 0; k < blocks.size(); ++k) {
        if (parents[k].empty()) {
            graph_.add_factor({vars_[k]}, gp_prior_factor(z_[k], kernel_, options_.jitter));
            continue;
        }
        std::sort(parents[k].begin(), parents[k].end());
        int rows = 0;
        for (int p : parents[k]) rows += static_cast<int>(z_[static_cast<size_t>(p)].rows());
        Eigen::MatrixXd zp(rows, z_[k].cols());
        std::vector<NodeId> scope{vars_[k]};
        int r = 0;
        for (int p : parents[k]) {
            zp.middleRows(r, z_[static_cast<size_t>(p)].rows()) = z_[static_cast<size_t>(p)];
            r += static_cast<int>(z_[static_cast<size_t>(p)].rows());
            scope.push_back(vars_[static_cast<size_t>(p)]);
        }
        graph_.add_factor(std::move(scope),
                          gp_conditional_factor(z_[k], zp, kernel_, options_.jitter));
    }

    for (size_t i = 0; i < blocks.size(); ++i) {
        graph_.add_factor({vars_[i]}, sum_fitc_observation_factors(blocks[i].obs, z_[i],
                                                                   kernel_, noise_,
                                                                   options_.jitter));
    }
}

IterateResult BatchModel::fit() {
    IterateResult result{true, 1, 0.0};
    const NodeId root = options_.prior == BatchPrior::kDense ? dense_var_ : vars_[0];
    if (graph_.is_acyclic()) {
        graph_.sweep_tree(root, options_.jitter);
    } else {
        IterateOptions opts;
        opts.schedule = Schedule::kSynchronous;
        opts.damping = options_.damping;
        opts.tol = options_.tol;
        opts.max_iterations = options_.max_iterations;
        opts.jitter = options_.jitter;
        result = graph_.iterate(opts);
    }
    // Per-block predictors: every model answers queries from the assigned
    // block's posterior marginal, so baselines differ only in the prior.
    predictors_.clear();
    if (options_.prior == BatchPrior::kDense) {
        const MomentGaussian joint = graph_.belief_moments(dense_var_, options_.jitter);
        int offset = 0;
        for (const auto& z : z_) {
            const int m = static_cast<int>(z.rows());
            predictors_.emplace_back(
                z, kernel_,
                MomentGaussian{joint.mu.segment(offset, m), joint.sigma.block(offset, offset, m, m)},
                options_.jitter);
            offset += m;
        }
    } else {
        for (size_t b = 0; b < z_.size(); ++b) {
            predictors_.emplace_back(z_[b], kernel_,
                                     graph_.belief_moments(vars_[b], options_.jitter),
                                     options_.jitter);
        }
    }
    return result;
}

MomentGaussian BatchModel::predict(const Eigen::VectorXd& xstar, int block_index) const {
    if (predictors_.empty()) throw UnknownId("BatchModel::predict before fit()");
    return predictors_[static_cast<size_t>(block_index)].predict(xstar);
}

}  // namespace gbpmap
