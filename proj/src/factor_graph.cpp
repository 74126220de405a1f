#include "gbpmap/factor_graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

namespace gbpmap {

namespace {

int total_scope_dim(const std::map<NodeId, FactorGraph::Variable>& variables,
                    const std::vector<NodeId>& scope, std::vector<int>* offsets) {
    int total = 0;
    offsets->clear();
    for (NodeId v : scope) {
        offsets->push_back(total);
        total += variables.at(v).dim;
    }
    return total;
}

}  // namespace

FactorGraph::Variable& FactorGraph::variable_mut(NodeId id) {
    auto it = variables_.find(id);
    if (it == variables_.end()) throw UnknownId("no variable " + std::to_string(id));
    return it->second;
}

FactorGraph::Factor& FactorGraph::factor_mut(NodeId id) {
    auto it = factors_.find(id);
    if (it == factors_.end()) throw UnknownId("no factor " + std::to_string(id));
    return it->second;
}

const FactorGraph::Variable& FactorGraph::variable(NodeId id) const {
    auto it = variables_.find(id);
    if (it == variables_.end()) throw UnknownId("no variable " + std::to_string(id));
    return it->second;
}

const FactorGraph::Factor& FactorGraph::factor(NodeId id) const {
    auto it = factors_.find(id);
    if (it == factors_.end()) throw UnknownId("no factor " + std::to_string(id));
    return it->second;
}

std::vector<NodeId> FactorGraph::variable_ids() const {
    std::vector<NodeId> ids;
    ids.reserve(variables_.size());
    for (const auto& [id, v] : variables_) ids.push_back(id);
    return ids;
}

std::vector<NodeId> FactorGraph::factor_ids() const {
    std::vector<NodeId> ids;
    ids.reserve(factors_.size());
    for (const auto& [id, f] : factors_) ids.push_back(id);
    return ids;
}

int FactorGraph::slot_of(const Factor& f, NodeId variable_id) const {
    for (size_t i = 0; i < f.scope.size(); ++i) {
        if (f.scope[i] == variable_id) return static_cast<int>(i);
    }
    throw UnknownId("variable " + std::to_string(variable_id) + " not in factor scope");
}

NodeId FactorGraph::add_variable(int dim) { return add_variable(next_variable_id_, dim); }

NodeId FactorGraph::add_variable(NodeId id, int dim) {
    if (dim <= 0) throw DimensionMismatch("variable dim must be positive");
    if (variables_.count(id)) throw UnknownId("variable id " + std::to_string(id) + " in use");
    variables_[id] = Variable{dim, {}};
    next_variable_id_ = std::max(next_variable_id_, id + 1);
    return id;
}

void FactorGraph::remove_variable(NodeId id) {
    const Variable& v = variable(id);
    const std::vector<NodeId> attached = v.factors;
    for (NodeId f : attached) remove_factor(f);
    variables_.erase(id);
}

void FactorGraph::resize_variable(NodeId id, int new_dim) {
    if (new_dim <= 0) throw DimensionMismatch("variable dim must be positive");
    Variable& v = variable_mut(id);
    if (v.dim == new_dim) return;
    v.dim = new_dim;
    for (NodeId fid : v.factors) {
        Factor& f = factor_mut(fid);
        f.total_dim = total_scope_dim(variables_, f.scope, &f.offsets);
        f.value = InfoGaussian::zero(f.total_dim);
        for (size_t i = 0; i < f.scope.size(); ++i) {
            const int d = variables_.at(f.scope[i]).dim;
            f.to_variable[i] = InfoGaussian::zero(d);
            f.from_variable[i] = InfoGaussian::zero(d);
        }
    }
}

void FactorGraph::check_scope(const std::vector<NodeId>& scope) const {
    if (scope.empty()) throw DimensionMismatch("factor scope must be non-empty");
    for (size_t i = 0; i < scope.size(); ++i) {
        if (!variables_.count(scope[i])) {
            throw UnknownId("factor scope references unknown variable " +
                            std::to_string(scope[i]));
        }
        for (size_t j = i + 1; j < scope.size(); ++j) {
            if (scope[i] == scope[j]) {
                throw UnknownId("factor scope repeats variable " + std::to_string(scope[i]));
            }
        }
    }
}

NodeId FactorGraph::add_factor(std::vector<NodeId> scope, InfoGaussian value) {
    check_scope(scope);
    Factor f;
    f.scope = std::move(scope);
    f.total_dim = total_scope_dim(variables_, f.scope, &f.offsets);
    if (value.dim() != f.total_dim) {
        throw DimensionMismatch("factor value dim " + std::to_string(value.dim()) +
                                " vs scope dim " + std::to_string(f.total_dim));
    }
    f.value = std::move(value);
    for (NodeId v : f.scope) {
        const int d = variables_.at(v).dim;
        f.to_variable.push_back(InfoGaussian::zero(d));
        f.from_variable.push_back(InfoGaussian::zero(d));
    }
    const NodeId id = next_factor_id_++;
    for (NodeId v : f.scope) variables_.at(v).factors.push_back(id);
    factors_[id] = std::move(f);
    return id;
}

NodeId FactorGraph::add_factor(std::vector<NodeId> scope,
                               std::shared_ptr<const LinearizableEnergy> energy) {
    check_scope(scope);
    std::vector<int> offsets;
    const int total = total_scope_dim(variables_, scope, &offsets);
    Eigen::VectorXd mean(total);
    for (size_t i = 0; i < scope.size(); ++i) {
        mean.segment(offsets[i], variables_.at(scope[i]).dim) = belief_mean(scope[i]);
    }
    InfoGaussian value = energy->linearize(mean);
    if (value.dim() != total) {
        throw DimensionMismatch("energy linearization dim mismatch");
    }
    const NodeId id = add_factor(std::move(scope), std::move(value));
    factors_.at(id).energy = std::move(energy);
    return id;
}

void FactorGraph::remove_factor(NodeId id) {
    const Factor& f = factor(id);
    for (NodeId v : f.scope) {
        auto& lst = variables_.at(v).factors;
        lst.erase(std::remove(lst.begin(), lst.end(), id), lst.end());
    }
    factors_.erase(id);
}

void FactorGraph::retarget_factor(NodeId id, std::vector<NodeId> new_scope,
                                  InfoGaussian new_value) {
    check_scope(new_scope);
    Factor& f = factor_mut(id);

    std::vector<InfoGaussian> to_kept, from_kept;
    std::vector<int> offsets;
    const int total = total_scope_dim(variables_, new_scope, &offsets);
    if (new_value.dim() != total) {
        throw DimensionMismatch("retarget: value dim " + std::to_string(new_value.dim()) +
                                " vs scope dim " + std::to_string(total));
    }
    for (NodeId v : new_scope) {
        const int d = variables_.at(v).dim;
        auto it = std::find(f.scope.begin(), f.scope.end(), v);
        if (it != f.scope.end()) {
            const size_t old_slot = static_cast<size_t>(it - f.scope.begin());
            if (f.to_variable[old_slot].dim() == d) {
                to_kept.push_back(f.to_variable[old_slot]);
                from_kept.push_back(f.from_variable[old_slot]);
                continue;
            }
        }
        to_kept.push_back(InfoGaussian::zero(d));
        from_kept.push_back(InfoGaussian::zero(d));
    }
    for (NodeId v : f.scope) {
        auto& lst = variables_.at(v).factors;
        lst.erase(std::remove(lst.begin(), lst.end(), id), lst.end());
    }
    for (NodeId v : new_scope) variables_.at(v).factors.push_back(id);
    f.scope = std::move(new_scope);
    f.offsets = std::move(offsets);
    f.total_dim = total;
    f.value = std::move(new_value);
    f.to_variable = std::move(to_kept);
    f.from_variable = std::move(from_kept);
}

void FactorGraph::set_factor_value(NodeId id, InfoGaussian value) {
    Factor& f = factor_mut(id);
    if (value.dim() != f.total_dim) {
        throw DimensionMismatch("set_factor_value: dim " + std::to_string(value.dim()) +
                                " vs " + std::to_string(f.total_dim));
    }
    f.value = std::move(value);
}

InfoGaussian FactorGraph::belief(NodeId variable_id) const {
    const Variable& v = variable(variable_id);
    InfoGaussian b = InfoGaussian::zero(v.dim);
    for (NodeId fid : v.factors) {
        const Factor& f = factor(fid);
        b += f.to_variable[static_cast<size_t>(slot_of(f, variable_id))];
    }
    return b;
}

MomentGaussian FactorGraph::belief_moments(NodeId variable_id, double jitter) const {
    return to_moments(belief(variable_id), jitter);
}

Eigen::VectorXd FactorGraph::belief_mean(NodeId variable_id, double jitter) const {
    const InfoGaussian b = belief(variable_id);
    if (b.is_zero()) return Eigen::VectorXd::Zero(b.dim());
    return sym_solve(b.lambda, b.eta, jitter);
}

const InfoGaussian& FactorGraph::message_to_variable(NodeId factor_id,
                                                     NodeId variable_id) const {
    const Factor& f = factor(factor_id);
    return f.to_variable[static_cast<size_t>(slot_of(f, variable_id))];
}

const InfoGaussian& FactorGraph::message_to_factor(NodeId variable_id,
                                                   NodeId factor_id) const {
    const Factor& f = factor(factor_id);
    return f.from_variable[static_cast<size_t>(slot_of(f, variable_id))];
}

void FactorGraph::set_message_to_variable(NodeId factor_id, NodeId variable_id,
                                          InfoGaussian msg) {
    Factor& f = factor_mut(factor_id);
    const int slot = slot_of(f, variable_id);
    if (msg.dim() != variables_.at(variable_id).dim) {
        throw DimensionMismatch("message dim mismatch");
    }
    f.to_variable[static_cast<size_t>(slot)] = std::move(msg);
}

InfoGaussian FactorGraph::compute_variable_to_factor(NodeId variable_id,
                                                     NodeId factor_id) const {
    const Variable& v = variable(variable_id);
    InfoGaussian m = InfoGaussian::zero(v.dim);
    for (NodeId fid : v.factors) {
        if (fid == factor_id) continue;
        const Factor& f = factor(fid);
        m += f.to_variable[static_cast<size_t>(slot_of(f, variable_id))];
    }
    return m;
}

InfoGaussian FactorGraph::compute_factor_to_variable(NodeId factor_id, NodeId variable_id,
                                                     double jitter) const {
    const Factor& f = factor(factor_id);
    const int target = slot_of(f, variable_id);
    if (f.scope.size() == 1) return f.value;  // unary: message is the factor

    InfoGaussian joint = f.value;
    for (size_t i = 0; i < f.scope.size(); ++i) {
        if (static_cast<int>(i) == target) continue;
        const InfoGaussian& inbound = f.from_variable[i];
        const int d = inbound.dim();
        joint.eta.segment(f.offsets[i], d) += inbound.eta;
        joint.lambda.block(f.offsets[i], f.offsets[i], d, d) += inbound.lambda;
    }
    std::vector<int> keep(static_cast<size_t>(variables_.at(variable_id).dim));
    std::iota(keep.begin(), keep.end(), f.offsets[static_cast<size_t>(target)]);
    return marginalize(joint, keep, jitter);
}

void FactorGraph::relinearize(NodeId factor_id) {
    Factor& f = factor_mut(factor_id);
    if (!f.energy) return;
    Eigen::VectorXd mean(f.total_dim);
    for (size_t i = 0; i < f.scope.size(); ++i) {
        mean.segment(f.offsets[i], variables_.at(f.scope[i]).dim) = belief_mean(f.scope[i]);
    }
    InfoGaussian value = f.energy->linearize(mean);
    if (value.dim() != f.total_dim) throw DimensionMismatch("relinearize: dim mismatch");
    f.value = std::move(value);
}

void FactorGraph::refresh_inbound(Factor& f, NodeId factor_id) {
    for (size_t i = 0; i < f.scope.size(); ++i) {
        f.from_variable[i] = compute_variable_to_factor(f.scope[i], factor_id);
    }
}

double FactorGraph::message_moment_delta(const InfoGaussian& a, const InfoGaussian& b,
                                         double jitter) const {
    const bool za = a.is_zero();
    const bool zb = b.is_zero();
    if (za && zb) return 0.0;
    if (za != zb) return std::numeric_limits<double>::infinity();
    Eigen::MatrixXd rhs_a(a.dim(), 1 + a.dim());
    rhs_a.col(0) = a.eta;
    rhs_a.rightCols(a.dim()) = Eigen::MatrixXd::Identity(a.dim(), a.dim());
    Eigen::MatrixXd sa, sb;
    try {
        sa = sym_solve(a.lambda, rhs_a, jitter);
        Eigen::MatrixXd rhs_b = rhs_a;
        rhs_b.col(0) = b.eta;
        sb = sym_solve(b.lambda, rhs_b, jitter);
    } catch (const SingularPrecision&) {
        return std::numeric_limits<double>::infinity();
    }
    const double dmu = (sa.col(0) - sb.col(0)).cwiseAbs().maxCoeff();
    const double dvar =
        (sa.rightCols(a.dim()).diagonal() - sb.rightCols(b.dim()).diagonal())
            .cwiseAbs()
            .maxCoeff();
    return std::max(dmu, dvar);
}

double FactorGraph::update_factor(NodeId factor_id, double damping, double jitter) {
    Factor& f = factor_mut(factor_id);
    if (f.energy) relinearize(factor_id);
    refresh_inbound(f, factor_id);
    double delta = 0.0;
    for (size_t i = 0; i < f.scope.size(); ++i) {
        InfoGaussian raw = compute_factor_to_variable(factor_id, f.scope[i], jitter);
        if (damping > 0.0 && !f.to_variable[i].is_zero()) {
            raw.eta = (1.0 - damping) * raw.eta + damping * f.to_variable[i].eta;
            raw.lambda = (1.0 - damping) * raw.lambda + damping * f.to_variable[i].lambda;
        }
        delta = std::max(delta, message_moment_delta(raw, f.to_variable[i], jitter));
        f.to_variable[i] = std::move(raw);
    }
    return delta;
}

bool FactorGraph::is_acyclic() const {
    // Union-find over variables; each factor joins its scope variables.
    std::map<NodeId, NodeId> parent;
    for (const auto& [id, v] : variables_) parent[id] = id;
    auto find = [&](NodeId x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (const auto& [fid, f] : factors_) {
        const NodeId root = find(f.scope[0]);
        for (size_t i = 1; i < f.scope.size(); ++i) {
            const NodeId r2 = find(f.scope[i]);
            if (r2 == root) return false;
            parent[r2] = root;
        }
    }
    return true;
}

void FactorGraph::sweep_tree(NodeId root_variable, double jitter) {
    variable(root_variable);
    if (!is_acyclic()) throw NotATree("graph contains a cycle");

    // Visit order per component: BFS over the bipartite graph from the
    // component root. Upward pass processes edges child->parent in reverse
    // BFS order, downward pass parent->child in BFS order.
    std::map<NodeId, bool> var_seen;
    struct Edge {
        NodeId factor;
        NodeId var;
        bool var_is_parent;  // true: edge points factor -> var toward root
    };

    std::vector<NodeId> roots;
    roots.push_back(root_variable);
    for (const auto& [id, v] : variables_) {
        (void)v;
        if (id != root_variable) roots.push_back(id);
    }

    for (NodeId root : roots) {
        if (var_seen.count(root)) continue;
        std::vector<Edge> order;
        std::vector<NodeId> var_queue{root};
        var_seen[root] = true;
        std::map<NodeId, bool> fac_seen;
        for (size_t qi = 0; qi < var_queue.size(); ++qi) {
            const NodeId v = var_queue[qi];
            for (NodeId fid : variables_.at(v).factors) {
                if (fac_seen.count(fid)) continue;
                fac_seen[fid] = true;
                order.push_back({fid, v, true});
                for (NodeId w : factors_.at(fid).scope) {
                    if (w == v) continue;
                    order.push_back({fid, w, false});
                    var_seen[w] = true;
                    var_queue.push_back(w);
                }
            }
        }
        // Upward: leaves to root.
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Factor& f = factor_mut(it->factor);
            if (it->var_is_parent) {
                if (f.energy) relinearize(it->factor);
                const int slot = slot_of(f, it->var);
                f.to_variable[static_cast<size_t>(slot)] =
                    compute_factor_to_variable(it->factor, it->var, jitter);
            } else {
                const int slot = slot_of(f, it->var);
                f.from_variable[static_cast<size_t>(slot)] =
                    compute_variable_to_factor(it->var, it->factor);
            }
        }
        // Downward: root to leaves.
        for (const Edge& e : order) {
            Factor& f = factor_mut(e.factor);
            const int slot = slot_of(f, e.var);
            if (e.var_is_parent) {
                f.from_variable[static_cast<size_t>(slot)] =
                    compute_variable_to_factor(e.var, e.factor);
            } else {
                if (f.energy) relinearize(e.factor);
                f.to_variable[static_cast<size_t>(slot)] =
                    compute_factor_to_variable(e.factor, e.var, jitter);
            }
        }
    }
}

IterateResult FactorGraph::iterate(const IterateOptions& opts) {
    IterateResult result;
    if (factors_.empty()) {
        result.converged = true;
        return result;
    }
    std::vector<NodeId> fids = factor_ids();
    std::mt19937_64 rng(opts.rng_seed);

    // Convergence is tracked on belief moments: messages may carry nearly
    // zero precision, where their own moments are unbounded noise, while
    // the beliefs stay well-scaled.
    auto snapshot_beliefs = [&]() {
        std::map<NodeId, MomentGaussian> out;
        for (const auto& [vid, v] : variables_) {
            const InfoGaussian b = belief(vid);
            if (b.is_zero()) continue;
            try {
                Eigen::MatrixXd rhs(b.dim(), 1 + b.dim());
                rhs.col(0) = b.eta;
                rhs.rightCols(b.dim()) = Eigen::MatrixXd::Identity(b.dim(), b.dim());
                const Eigen::MatrixXd sol = sym_solve(b.lambda, rhs, opts.jitter);
                out[vid] = {sol.col(0), sol.rightCols(b.dim())};
            } catch (const SingularPrecision&) {
                // keep absent: treated as still-moving below
            }
        }
        return out;
    };
    auto belief_delta = [](const std::map<NodeId, MomentGaussian>& a,
                           const std::map<NodeId, MomentGaussian>& b) {
        double delta = 0.0;
        for (const auto& [vid, mb] : b) {
            auto it = a.find(vid);
            if (it == a.end() || it->second.dim() != mb.dim()) {
                return std::numeric_limits<double>::infinity();
            }
            delta = std::max(delta, (it->second.mu - mb.mu).cwiseAbs().maxCoeff());
            delta = std::max(delta, (it->second.sigma.diagonal() - mb.sigma.diagonal())
                                        .cwiseAbs()
                                        .maxCoeff());
        }
        return delta;
    };

    std::map<NodeId, MomentGaussian> previous = snapshot_beliefs();

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        if (opts.schedule == Schedule::kSynchronous) {
            // All factors emit from the same snapshot of inbound messages.
            for (NodeId fid : fids) {
                Factor& f = factors_.at(fid);
                if (f.energy) relinearize(fid);
                refresh_inbound(f, fid);
            }
            std::map<NodeId, std::vector<InfoGaussian>> staged;
            for (NodeId fid : fids) {
                Factor& f = factors_.at(fid);
                std::vector<InfoGaussian> out;
                out.reserve(f.scope.size());
                for (size_t i = 0; i < f.scope.size(); ++i) {
                    InfoGaussian raw = compute_factor_to_variable(fid, f.scope[i], opts.jitter);
                    if (opts.damping > 0.0 && !f.to_variable[i].is_zero()) {
                        raw.eta = (1.0 - opts.damping) * raw.eta +
                                  opts.damping * f.to_variable[i].eta;
                        raw.lambda = (1.0 - opts.damping) * raw.lambda +
                                     opts.damping * f.to_variable[i].lambda;
                    }
                    out.push_back(std::move(raw));
                }
                staged[fid] = std::move(out);
            }
            for (NodeId fid : fids) {
                factors_.at(fid).to_variable = std::move(staged.at(fid));
            }
        } else {
            std::shuffle(fids.begin(), fids.end(), rng);
            for (NodeId fid : fids) {
                update_factor(fid, opts.damping, opts.jitter);
            }
        }

        for (NodeId fid : fids) {
            for (const auto& msg : factors_.at(fid).to_variable) {
                if (msg.lambda.trace() > opts.divergence_trace) {
                    throw DivergenceDetected("message precision trace " +
                                             std::to_string(msg.lambda.trace()) +
                                             " exceeds bound");
                }
            }
        }

        std::map<NodeId, MomentGaussian> current = snapshot_beliefs();
        const double delta = belief_delta(previous, current);
        previous = std::move(current);

        result.iterations = iter + 1;
        result.final_delta = delta;
        if (delta < opts.tol) {
            result.converged = true;
            return result;
        }
    }
    return result;
}

void FactorGraph::dump(std::ostream& os) const {
    for (const auto& [id, v] : variables_) {
        os << "variable " << id << " dim " << v.dim;
        const InfoGaussian b = belief(id);
        if (!b.is_zero()) {
            try {
                const MomentGaussian m = to_moments(b);
                os << " mean [" << m.mu.transpose() << "] var ["
                   << m.sigma.diagonal().transpose() << "]";
            } catch (const SingularPrecision&) {
                os << " (belief singular)";
            }
        } else {
            os << " (no information)";
        }
        os << "\n";
    }
    for (const auto& [id, f] : factors_) {
        os << "factor " << id << (f.energy ? " linearized" : " gaussian") << " scope [";
        for (size_t i = 0; i < f.scope.size(); ++i) {
            os << (i ? " " : "") << f.scope[i];
        }
        os << "]\n";
    }
}

}  // namespace gbpmap
