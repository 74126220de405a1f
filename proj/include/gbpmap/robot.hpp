#pragma once

#include <map>
#include <optional>
#include <vector>

#include "gbpmap/sparse_gp.hpp"
#include "gbpmap/wire.hpp"

namespace gbpmap {

struct Rect {
    Eigen::Vector2d lo = Eigen::Vector2d::Zero();
    Eigen::Vector2d hi = Eigen::Vector2d::Ones();

    bool contains(const Eigen::Vector2d& p) const {
        return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
    }
    double width() const { return hi.x() - lo.x(); }
    double height() const { return hi.y() - lo.y(); }
    Eigen::Vector2d center() const { return 0.5 * (lo + hi); }
    bool degenerate() const { return !(width() > 0.0) || !(height() > 0.0); }
};

/// Inducing inputs on a regular grid spanning the rectangle (midpoint rule).
Eigen::MatrixXd grid_inducing(const Rect& region, int rows, int cols);

struct ProtocolConfig {
    double jitter = kDefaultJitter;
    int buffer_capacity = 5;
    int max_inducing = 200;
    double d_comm = 0.15;
    double damping = 0.4;            // local message damping
    double scope_cap_factor = 3.0;   // main conditional scope cap, x own |Z|
    int boundary_count = 5;          // n_b
    double boundary_inset_frac = 0.01;
    double boundary_band_frac = 0.10;
    double hyper_step_size = 1e-2;
    double hyper_max_step_norm = 0.5;
};

enum class PeerStatus { kNeverConnected, kLive, kDecoupled };
enum class BoundaryStrategy { kNone, kLine, kMirror };

struct PosteriorSnapshot {
    int robot_id = -1;
    int version = -1;
    Eigen::MatrixXd z;
    MomentGaussian belief;
    Eigen::VectorXd theta;  // kernel log-params then log sigma
};

/// One robot: id (total order), region, pose, local factor graph wrapped in
/// a SparseGpModel, and per-peer inter-robot factor state. The graph embeds
/// a ghost variable per conditioning parent whose only other factor is a
/// stub carrying the parent's last variable-to-factor message; the shared
/// conditional lives on the child side and the parent holds a unary factor
/// carrying the conditional's last message back. All cross-robot traffic is
/// value snapshots (WireMessage et al.).
class RobotAgent {
public:
    RobotAgent(int id, Rect region, Eigen::MatrixXd z, Kernel kernel, NoiseModel noise,
               ProtocolConfig config);

    int id() const { return id_; }
    const Rect& region() const { return region_; }
    const Eigen::Vector2d& pose() const { return pose_; }
    void set_pose(const Eigen::Vector2d& p) { pose_ = p; }

    SparseGpModel& model() { return model_; }
    const SparseGpModel& model() const { return model_; }
    const ProtocolConfig& config() const { return config_; }

    PeerStatus peer_status(int peer_id) const;
    bool has_live_peers() const;
    long z_version() const { return z_version_; }

    // --- local model ----------------------------------------------------
    void add_observation(const Observation& obs);
    void add_binary_observation(const Observation& obs);
    void add_inducing_point(const Eigen::VectorXd& location, long timestamp);
    void retire_inducing_points();
    /// One ascent step on the retained buffer; factors (including any
    /// conditionals) are rebuilt with the new hyperparameters on success.
    bool hyper_step();
    void update_local(int iterations = 1);
    MomentGaussian predict(const Eigen::VectorXd& xstar) const;
    PosteriorSnapshot own_snapshot();

    const std::map<int, PosteriorSnapshot>& posterior_cache() const { return cache_; }

    // --- protocol internals (driven by the free functions below) ---------
    void open_edge_as_child(const WireConnect& rec);
    void open_edge_as_parent(const WireConnect& rec);
    WireMessage make_parent_message(int child_id);
    void apply_parent_message(const WireMessage& msg);
    WireMessage make_child_reply(int parent_id);
    void apply_child_reply(const WireMessage& msg);
    void close_edge(const WireDecouple& rec);
    void store_posterior(const WirePosterior& rec);
    std::vector<WirePosterior> cached_posteriors(int exclude_robot) const;
    /// Rebuilds the conditional this peer participates in against current
    /// Z snapshots (used when either side's inducing set changed).
    void refresh_edge_as_child(const WireConnect& rec);

private:
    struct PeerState {
        PeerStatus status = PeerStatus::kNeverConnected;
        bool peer_is_parent = false;   // we are the child of this edge
        // Child side.
        NodeId ghost_variable = kInvalidNode;
        NodeId stub_factor = kInvalidNode;
        NodeId cond_factor = kInvalidNode;  // main conditional or private pairwise
        bool in_main_conditional = false;
        Eigen::MatrixXd peer_z;
        // Parent side.
        NodeId inbound_factor = kInvalidNode;
    };

    int id_;
    Rect region_;
    Eigen::Vector2d pose_;
    ProtocolConfig config_;
    SparseGpModel model_;
    std::map<int, PeerState> peers_;
    std::vector<int> main_parents_;  // parents in the main conditional, in scope order
    NodeId main_conditional_ = kInvalidNode;
    std::map<int, PosteriorSnapshot> cache_;
    int version_counter_ = 0;
    long z_version_ = 0;

    void rebuild_main_conditional();
    void rebuild_private_conditional(int peer_id);
    void rebuild_all_conditionals();
    Eigen::MatrixXd concat_parent_z(const std::vector<int>& parents) const;

    friend void connect(RobotAgent&, RobotAgent&);
};

// --- pair operations -----------------------------------------------------------

/// Establishes (or refreshes) the edge between two robots in range and runs
/// the initial bidirectional exchange. The higher index becomes the child
/// whose prior is amended to a conditional. No-op when already live.
/// Throws OutOfRange when the poses are farther apart than d_comm.
void connect(RobotAgent& a, RobotAgent& b);

/// One round of variable-to-factor then factor-to-variable updates across
/// the shared conditional, both directions.
void exchange(RobotAgent& a, RobotAgent& b);

/// Freezes the edge: the child keeps the conditional and the parent's last
/// message as stale state; the parent keeps the unary factor carrying the
/// conditional's last message. Throws NotConnected if the edge is not live.
void decouple(RobotAgent& a, RobotAgent& b);

/// Rebuilds a live edge after either endpoint's inducing set changed.
void refresh_edge(RobotAgent& a, RobotAgent& b);

/// Adds boundary inducing points to both robots (line: n_b points inset
/// from the shared border; mirror: peer points within the boundary band
/// copied verbatim). `extra_coords` appends trailing input coordinates
/// (e.g. current time for space-time models). Points already present are
/// skipped. Throws NoSharedBoundary when the strategy cannot apply.
void boundary_inducing(RobotAgent& a, RobotAgent& b, BoundaryStrategy strategy,
                       long timestamp, const Eigen::VectorXd& extra_coords);

/// Each robot ships its own posterior snapshot plus everything it has
/// relayed so far; receivers keep the newest version per robot.
void share_posteriors(RobotAgent& a, RobotAgent& b);

}  // namespace gbpmap
