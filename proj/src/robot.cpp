#include "gbpmap/robot.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace gbpmap {

namespace {

constexpr double kCoincidentTol = 1e-12;

bool row_present(const Eigen::MatrixXd& z, const Eigen::VectorXd& p) {
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        if ((z.row(r).transpose() - p).cwiseAbs().maxCoeff() < kCoincidentTol) return true;
    }
    return false;
}

// Shared border of two axis-aligned rectangles: returns (axis, value, lo, hi)
// where axis 0 means a vertical border x = value with y-overlap [lo, hi].
struct Border {
    int axis = -1;
    double value = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    int side_a = 0;  // -1: a is on the low side of the border, +1: high side
};

std::optional<Border> shared_border(const Rect& a, const Rect& b) {
    constexpr double tol = 1e-9;
    auto overlap = [](double a0, double a1, double b0, double b1, double* lo, double* hi) {
        *lo = std::max(a0, b0);
        *hi = std::min(a1, b1);
        return *hi - *lo > tol;
    };
    Border out;
    if (std::abs(a.hi.x() - b.lo.x()) < tol &&
        overlap(a.lo.y(), a.hi.y(), b.lo.y(), b.hi.y(), &out.lo, &out.hi)) {
        out.axis = 0;
        out.value = a.hi.x();
        out.side_a = -1;
        return out;
    }
    if (std::abs(b.hi.x() - a.lo.x()) < tol &&
        overlap(a.lo.y(), a.hi.y(), b.lo.y(), b.hi.y(), &out.lo, &out.hi)) {
        out.axis = 0;
        out.value = a.lo.x();
        out.side_a = 1;
        return out;
    }
    if (std::abs(a.hi.y() - b.lo.y()) < tol &&
        overlap(a.lo.x(), a.hi.x(), b.lo.x(), b.hi.x(), &out.lo, &out.hi)) {
        out.axis = 1;
        out.value = a.hi.y();
        out.side_a = -1;
        return out;
    }
    if (std::abs(b.hi.y() - a.lo.y()) < tol &&
        overlap(a.lo.x(), a.hi.x(), b.lo.x(), b.hi.x(), &out.lo, &out.hi)) {
        out.axis = 1;
        out.value = a.lo.y();
        out.side_a = 1;
        return out;
    }
    return std::nullopt;
}

Eigen::VectorXd with_extra(const Eigen::Vector2d& p, const Eigen::VectorXd& extra) {
    Eigen::VectorXd out(2 + extra.size());
    out.head(2) = p;
    out.tail(extra.size()) = extra;
    return out;
}

}  // namespace

Eigen::MatrixXd grid_inducing(const Rect& region, int rows, int cols) {
    Eigen::MatrixXd z(rows * cols, 2);
    int k = 0;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            z(k, 0) = region.lo.x() + (c + 0.5) * region.width() / cols;
            z(k, 1) = region.lo.y() + (r + 0.5) * region.height() / rows;
            ++k;
        }
    }
    return z;
}

RobotAgent::RobotAgent(int id, Rect region, Eigen::MatrixXd z, Kernel kernel, NoiseModel noise,
                       ProtocolConfig config)
    : id_(id),
      region_(region),
      pose_(region.center()),
      config_(config),
      model_(std::move(z), std::move(kernel), noise,
             SparseGpConfig{config.jitter, config.buffer_capacity, config.max_inducing}, id) {
    if (region_.degenerate()) throw ConfigError("robot region is degenerate");
}

PeerStatus RobotAgent::peer_status(int peer_id) const {
    auto it = peers_.find(peer_id);
    return it == peers_.end() ? PeerStatus::kNeverConnected : it->second.status;
}

bool RobotAgent::has_live_peers() const {
    for (const auto& [pid, st] : peers_) {
        if (st.status == PeerStatus::kLive) return true;
    }
    return false;
}

void RobotAgent::add_observation(const Observation& obs) { model_.add_observation(obs); }

void RobotAgent::add_binary_observation(const Observation& obs) {
    model_.add_binary_observation(obs);
}

Eigen::MatrixXd RobotAgent::concat_parent_z(const std::vector<int>& parents) const {
    int rows = 0;
    for (int p : parents) rows += static_cast<int>(peers_.at(p).peer_z.rows());
    Eigen::MatrixXd z(rows, model_.block().z.cols());
    int r = 0;
    for (int p : parents) {
        const Eigen::MatrixXd& pz = peers_.at(p).peer_z;
        z.middleRows(r, pz.rows()) = pz;
        r += static_cast<int>(pz.rows());
    }
    return z;
}

void RobotAgent::rebuild_main_conditional() {
    if (main_parents_.empty()) return;
    FactorGraph& g = model_.graph();
    std::vector<NodeId> scope{model_.u_variable()};
    for (int p : main_parents_) scope.push_back(peers_.at(p).ghost_variable);
    const InfoGaussian value = gp_conditional_factor(
        model_.block().z, concat_parent_z(main_parents_), model_.kernel(), config_.jitter);
    if (main_conditional_ != kInvalidNode && g.has_factor(main_conditional_)) {
        g.retarget_factor(main_conditional_, scope, value);
    } else {
        main_conditional_ = g.add_factor(scope, value);
    }
    for (int p : main_parents_) peers_.at(p).cond_factor = main_conditional_;
    model_.set_prior_factor(main_conditional_);
}

void RobotAgent::rebuild_private_conditional(int peer_id) {
    PeerState& st = peers_.at(peer_id);
    FactorGraph& g = model_.graph();
    const InfoGaussian value =
        gp_conditional_factor(model_.block().z, st.peer_z, model_.kernel(), config_.jitter);
    const std::vector<NodeId> scope{model_.u_variable(), st.ghost_variable};
    if (st.cond_factor != kInvalidNode && g.has_factor(st.cond_factor)) {
        g.retarget_factor(st.cond_factor, scope, value);
    } else {
        st.cond_factor = g.add_factor(scope, value);
    }
}

void RobotAgent::rebuild_all_conditionals() {
    rebuild_main_conditional();
    for (auto& [pid, st] : peers_) {
        if (st.peer_is_parent && !st.in_main_conditional) rebuild_private_conditional(pid);
    }
}

void RobotAgent::open_edge_as_child(const WireConnect& rec) {
    if (rec.child_id != id_) throw UnknownId("connect record not addressed to this child");
    const int parent = rec.parent_id;
    FactorGraph& g = model_.graph();
    PeerState& st = peers_[parent];
    st.peer_is_parent = true;

    if (st.status == PeerStatus::kNeverConnected) {
        st.ghost_variable = g.add_variable(parent, static_cast<int>(rec.parent_z.rows()));
        st.stub_factor =
            g.add_factor({st.ghost_variable}, InfoGaussian::zero(static_cast<int>(rec.parent_z.rows())));
        st.peer_z = rec.parent_z;

        const int own_dim = model_.block().size();
        int combined = own_dim + static_cast<int>(rec.parent_z.rows());
        for (int p : main_parents_) combined += static_cast<int>(peers_.at(p).peer_z.rows());
        const bool extend_main =
            combined <= static_cast<int>(config_.scope_cap_factor * own_dim);

        if (main_parents_.empty()) {
            // The unary prior is amended to a conditional.
            g.remove_factor(model_.prior_factor());
            main_parents_.push_back(parent);
            st.in_main_conditional = true;
            rebuild_main_conditional();
        } else if (extend_main) {
            main_parents_.push_back(parent);
            st.in_main_conditional = true;
            rebuild_main_conditional();
        } else {
            st.in_main_conditional = false;
            rebuild_private_conditional(parent);
        }
    } else {
        // Reconnection: stored stale state is discarded and the conditional
        // rebuilt against the peer's current inducing set.
        refresh_edge_as_child(rec);
    }
    st.status = PeerStatus::kLive;
}

void RobotAgent::refresh_edge_as_child(const WireConnect& rec) {
    const int parent = rec.parent_id;
    PeerState& st = peers_.at(parent);
    FactorGraph& g = model_.graph();
    st.peer_z = rec.parent_z;
    const int pdim = static_cast<int>(rec.parent_z.rows());
    if (g.variable(st.ghost_variable).dim != pdim) {
        g.resize_variable(st.ghost_variable, pdim);
    }
    g.set_factor_value(st.stub_factor, InfoGaussian::zero(pdim));
    g.update_factor(st.stub_factor);
    if (st.in_main_conditional) {
        rebuild_main_conditional();
    } else {
        rebuild_private_conditional(parent);
    }
}

void RobotAgent::open_edge_as_parent(const WireConnect& rec) {
    if (rec.parent_id != id_) throw UnknownId("connect record not addressed to this parent");
    PeerState& st = peers_[rec.child_id];
    st.peer_is_parent = false;
    FactorGraph& g = model_.graph();
    const int m = model_.block().size();
    if (st.inbound_factor == kInvalidNode || !g.has_factor(st.inbound_factor)) {
        st.inbound_factor = g.add_factor({model_.u_variable()}, InfoGaussian::zero(m));
    } else {
        g.set_factor_value(st.inbound_factor, InfoGaussian::zero(m));
    }
    g.update_factor(st.inbound_factor);
    st.status = PeerStatus::kLive;
}

WireMessage RobotAgent::make_parent_message(int child_id) {
    const PeerState& st = peers_.at(child_id);
    if (st.status != PeerStatus::kLive) throw NotConnected("edge to child is not live");
    FactorGraph& g = model_.graph();
    g.update_factor(st.inbound_factor);
    WireMessage msg;
    msg.parent_id = id_;
    msg.child_id = child_id;
    msg.to_parent = false;
    msg.value = quotient(g.belief(model_.u_variable()), g.factor(st.inbound_factor).value);
    return msg;
}

void RobotAgent::apply_parent_message(const WireMessage& msg) {
    if (msg.child_id != id_) throw UnknownId("message not addressed to this child");
    PeerState& st = peers_.at(msg.parent_id);
    if (st.status != PeerStatus::kLive) throw NotConnected("edge to parent is not live");
    FactorGraph& g = model_.graph();
    if (msg.value.dim() != g.variable(st.ghost_variable).dim) {
        throw DimensionMismatch("parent message dim mismatch");
    }
    g.set_factor_value(st.stub_factor, msg.value);
    g.update_factor(st.stub_factor);
    g.update_factor(st.cond_factor, config_.damping, config_.jitter);
}

WireMessage RobotAgent::make_child_reply(int parent_id) {
    const PeerState& st = peers_.at(parent_id);
    if (st.status != PeerStatus::kLive) throw NotConnected("edge to parent is not live");
    WireMessage msg;
    msg.parent_id = parent_id;
    msg.child_id = id_;
    msg.to_parent = true;
    msg.value = model_.graph().message_to_variable(st.cond_factor, st.ghost_variable);
    return msg;
}

void RobotAgent::apply_child_reply(const WireMessage& msg) {
    if (msg.parent_id != id_) throw UnknownId("reply not addressed to this parent");
    PeerState& st = peers_.at(msg.child_id);
    if (st.status != PeerStatus::kLive) throw NotConnected("edge to child is not live");
    FactorGraph& g = model_.graph();
    if (msg.value.dim() != model_.block().size()) {
        throw DimensionMismatch("child reply dim mismatch");
    }
    g.set_factor_value(st.inbound_factor, msg.value);
    g.update_factor(st.inbound_factor);
}

void RobotAgent::close_edge(const WireDecouple& rec) {
    const int peer = rec.parent_id == id_ ? rec.child_id : rec.parent_id;
    PeerState& st = peers_.at(peer);
    if (st.status != PeerStatus::kLive) throw NotConnected("edge is not live");
    // Child keeps the conditional and the frozen stub (stale messages);
    // parent keeps the unary factor carrying the last outbound message.
    st.status = PeerStatus::kDecoupled;
}

void RobotAgent::store_posterior(const WirePosterior& rec) {
    if (rec.robot_id == id_) return;
    auto it = cache_.find(rec.robot_id);
    if (it != cache_.end() && it->second.version >= rec.version) return;
    PosteriorSnapshot snap;
    snap.robot_id = rec.robot_id;
    snap.version = rec.version;
    snap.z = rec.z;
    snap.belief.mu = rec.mu;
    snap.belief.sigma = rec.sigma;
    snap.theta = rec.theta;
    cache_[rec.robot_id] = std::move(snap);
}

std::vector<WirePosterior> RobotAgent::cached_posteriors(int exclude_robot) const {
    std::vector<WirePosterior> out;
    for (const auto& [rid, snap] : cache_) {
        if (rid == exclude_robot) continue;
        WirePosterior rec;
        rec.robot_id = snap.robot_id;
        rec.version = snap.version;
        rec.z = snap.z;
        rec.mu = snap.belief.mu;
        rec.sigma = snap.belief.sigma;
        rec.theta = snap.theta;
        out.push_back(std::move(rec));
    }
    return out;
}

PosteriorSnapshot RobotAgent::own_snapshot() {
    PosteriorSnapshot snap;
    snap.robot_id = id_;
    snap.version = ++version_counter_;
    snap.z = model_.block().z;
    snap.belief = model_.belief_moments();
    Eigen::VectorXd theta(model_.kernel().n_params() + 1);
    theta.head(model_.kernel().n_params()) = model_.kernel().params();
    theta(model_.kernel().n_params()) = model_.noise().log_sigma;
    snap.theta = theta;
    return snap;
}

void RobotAgent::add_inducing_point(const Eigen::VectorXd& location, long timestamp) {
    model_.add_inducing_point(location, timestamp);
    rebuild_all_conditionals();
    // Unary factors held for children were zeroed by the resize; they are
    // refilled on the next exchange.
    ++z_version_;
    update_local();
}

void RobotAgent::retire_inducing_points() {
    const int before = model_.block().size();
    model_.retire_inducing_points(config_.max_inducing);
    if (model_.block().size() != before) {
        rebuild_all_conditionals();
        ++z_version_;
        update_local();
    }
}

bool RobotAgent::hyper_step() {
    if (!model_.hyper_step(config_.hyper_step_size, config_.hyper_max_step_norm)) return false;
    rebuild_all_conditionals();
    update_local();
    return true;
}

void RobotAgent::update_local(int iterations) {
    for (int i = 0; i < iterations; ++i) model_.update_local(config_.damping);
}

MomentGaussian RobotAgent::predict(const Eigen::VectorXd& xstar) const {
    return model_.predict(xstar);
}

// --- pair operations ---------------------------------------------------------

void connect(RobotAgent& a, RobotAgent& b) {
    if (a.id() == b.id()) throw UnknownId("cannot connect a robot to itself");
    RobotAgent& parent = a.id() < b.id() ? a : b;
    RobotAgent& child = a.id() < b.id() ? b : a;
    if ((a.pose() - b.pose()).norm() > a.config().d_comm) {
        throw OutOfRange("robots are farther apart than d_comm");
    }
    if (parent.peer_status(child.id()) == PeerStatus::kLive &&
        child.peer_status(parent.id()) == PeerStatus::kLive) {
        return;  // idempotent
    }
    WireConnect rec;
    rec.parent_id = parent.id();
    rec.child_id = child.id();
    rec.parent_z = parent.model().block().z;
    rec.child_z = child.model().block().z;
    child.open_edge_as_child(rec);
    parent.open_edge_as_parent(rec);
    exchange(parent, child);
}

void exchange(RobotAgent& a, RobotAgent& b) {
    RobotAgent& parent = a.id() < b.id() ? a : b;
    RobotAgent& child = a.id() < b.id() ? b : a;
    const WireMessage down = parent.make_parent_message(child.id());
    child.apply_parent_message(down);
    const WireMessage up = child.make_child_reply(parent.id());
    parent.apply_child_reply(up);
}

void decouple(RobotAgent& a, RobotAgent& b) {
    WireDecouple rec;
    rec.parent_id = std::min(a.id(), b.id());
    rec.child_id = std::max(a.id(), b.id());
    a.close_edge(rec);
    b.close_edge(rec);
}

void refresh_edge(RobotAgent& a, RobotAgent& b) {
    RobotAgent& parent = a.id() < b.id() ? a : b;
    RobotAgent& child = a.id() < b.id() ? b : a;
    if (parent.peer_status(child.id()) != PeerStatus::kLive) {
        throw NotConnected("refresh_edge: edge is not live");
    }
    WireConnect rec;
    rec.parent_id = parent.id();
    rec.child_id = child.id();
    rec.parent_z = parent.model().block().z;
    rec.child_z = child.model().block().z;
    child.refresh_edge_as_child(rec);
    parent.open_edge_as_parent(rec);
    exchange(parent, child);
}

void boundary_inducing(RobotAgent& a, RobotAgent& b, BoundaryStrategy strategy, long timestamp,
                       const Eigen::VectorXd& extra_coords) {
    if (strategy == BoundaryStrategy::kNone) return;

    auto add_points = [&](RobotAgent& robot, const std::vector<Eigen::VectorXd>& pts) {
        for (const auto& p : pts) {
            if (!row_present(robot.model().block().z, p)) {
                robot.add_inducing_point(p, timestamp);
            }
        }
    };

    if (strategy == BoundaryStrategy::kLine) {
        const auto border = shared_border(a.region(), b.region());
        if (!border) throw NoSharedBoundary("regions do not share a border");
        auto line_points = [&](const RobotAgent& robot, int side) {
            const double inset = a.config().boundary_inset_frac * robot.region().width();
            std::vector<Eigen::VectorXd> pts;
            const int n = robot.config().boundary_count;
            for (int i = 0; i < n; ++i) {
                const double along = border->lo + (i + 0.5) * (border->hi - border->lo) / n;
                Eigen::Vector2d p;
                if (border->axis == 0) {
                    p = {border->value + side * inset, along};
                } else {
                    p = {along, border->value + side * inset};
                }
                pts.push_back(with_extra(p, extra_coords));
            }
            return pts;
        };
        add_points(a, line_points(a, border->side_a));
        add_points(b, line_points(b, -border->side_a));
        return;
    }

    // Mirror: copy up to n_b of the peer's points inside the boundary band,
    // nearest first. Distance is to the shared border when one exists,
    // otherwise to the receiving robot's pose.
    const auto border = shared_border(a.region(), b.region());
    auto mirror_into = [&](RobotAgent& dst, const RobotAgent& src) {
        const double band = dst.config().boundary_band_frac * dst.region().width();
        const Eigen::MatrixXd& pz = src.model().block().z;
        std::vector<std::pair<double, int>> in_band;
        for (Eigen::Index r = 0; r < pz.rows(); ++r) {
            const Eigen::Vector2d p = pz.row(r).head(2).transpose();
            const double dist = border ? std::abs((border->axis == 0 ? p.x() : p.y()) -
                                                  border->value)
                                       : (p - dst.pose()).norm();
            if (dist <= band) in_band.push_back({dist, static_cast<int>(r)});
        }
        std::sort(in_band.begin(), in_band.end());
        std::vector<Eigen::VectorXd> pts;
        const int n = std::min<int>(dst.config().boundary_count, static_cast<int>(in_band.size()));
        for (int i = 0; i < n; ++i) {
            pts.push_back(pz.row(in_band[static_cast<size_t>(i)].second).transpose());
        }
        add_points(dst, pts);
    };
    mirror_into(a, b);
    mirror_into(b, a);
}

void share_posteriors(RobotAgent& a, RobotAgent& b) {
    if (a.peer_status(b.id()) != PeerStatus::kLive) {
        throw NotConnected("share_posteriors: edge is not live");
    }
    auto ship = [](RobotAgent& from, RobotAgent& to) {
        const PosteriorSnapshot own = from.own_snapshot();
        WirePosterior rec;
        rec.robot_id = own.robot_id;
        rec.version = own.version;
        rec.z = own.z;
        rec.mu = own.belief.mu;
        rec.sigma = own.belief.sigma;
        rec.theta = own.theta;
        to.store_posterior(rec);
        for (const auto& relayed : from.cached_posteriors(to.id())) {
            to.store_posterior(relayed);
        }
    };
    ship(a, b);
    ship(b, a);
}

}  // namespace gbpmap
