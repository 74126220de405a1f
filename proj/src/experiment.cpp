#include "gbpmap/sim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <atomic>
#include <map>
#include <set>
#include <thread>

namespace gbpmap {

void MetricsSink::add(long step, std::string mode, std::string metric, double value,
                      long n_points, std::uint64_t seed) {
    rows_.push_back({step, std::move(mode), std::move(metric), value, n_points, seed});
}

void MetricsSink::write_csv(std::ostream& os) const {
    os << "step,mode,metric,value,n_points,seed\n";
    char buf[40];
    for (const auto& r : rows_) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.value);
        os << r.step << "," << r.mode << "," << r.metric << "," << buf << "," << r.n_points
           << "," << r.seed << "\n";
    }
}

std::mt19937_64 substream(std::uint64_t master, std::string_view tag, std::uint64_t index) {
    std::uint64_t h = 14695981039346656037ull;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    h ^= index + 0x9e3779b97f4a7c15ull;
    h *= 1099511628211ull;
    h ^= master;
    // splitmix64 finalizer to decorrelate nearby seeds
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    h = h ^ (h >> 31);
    return std::mt19937_64(h);
}

std::vector<Rect> sample_heldout_regions(const Rect& extents, int count, double size,
                                         std::mt19937_64& rng) {
    std::vector<Rect> regions;
    std::uniform_real_distribution<double> ux(extents.lo.x(), extents.hi.x() - size);
    std::uniform_real_distribution<double> uy(extents.lo.y(), extents.hi.y() - size);
    int attempts = 0;
    while (static_cast<int>(regions.size()) < count && attempts < 10000) {
        ++attempts;
        const double x = ux(rng);
        const double y = uy(rng);
        const Rect candidate{{x, y}, {x + size, y + size}};
        bool overlaps = false;
        for (const Rect& r : regions) {
            if (candidate.lo.x() < r.hi.x() && r.lo.x() < candidate.hi.x() &&
                candidate.lo.y() < r.hi.y() && r.lo.y() < candidate.hi.y()) {
                overlaps = true;
                break;
            }
        }
        if (!overlaps) regions.push_back(candidate);
    }
    if (static_cast<int>(regions.size()) < count) {
        throw ConfigError("could not place disjoint held-out regions");
    }
    return regions;
}

Kernel make_model_kernel(const Config& cfg) {
    if (cfg.kernel.family == "product" || cfg.field.time_slices > 1) {
        KernelPart space{KernelFamily::kMatern12, std::log(cfg.kernel.variance),
                         std::log(cfg.kernel.lengthscale), {0, 1}};
        KernelPart time{KernelFamily::kMatern12, std::log(cfg.kernel.time_variance),
                        std::log(cfg.kernel.time_lengthscale), {2}};
        return Kernel({space, time});
    }
    if (cfg.kernel.family == "squared_exponential") {
        return Kernel::squared_exponential(cfg.kernel.variance, cfg.kernel.lengthscale);
    }
    return Kernel::matern12(cfg.kernel.variance, cfg.kernel.lengthscale);
}

FieldGrid make_field(const Config& cfg, std::uint64_t seed) {
    if (!cfg.field.file.empty()) {
        return load_gridded_field(cfg.field.file);
    }
    std::mt19937_64 rng = substream(seed, "field", 0);
    const std::uint64_t field_seed = rng();
    if (cfg.field.time_slices > 1) {
        const Kernel space = Kernel::matern12(cfg.field.variance, cfg.field.lengthscale);
        const Kernel time = Kernel::matern12(1.0, cfg.field.time_lengthscale);
        return sample_dynamic_field(cfg.grid.x0, cfg.grid.x1, cfg.grid.y0, cfg.grid.y1,
                                    cfg.field.resolution, cfg.field.time_slices, cfg.field.t0,
                                    cfg.field.dt, space, time, field_seed);
    }
    const Kernel k = Kernel::matern12(cfg.field.variance, cfg.field.lengthscale);
    return sample_gp_field(cfg.grid.x0, cfg.grid.x1, cfg.grid.y0, cfg.grid.y1,
                           cfg.field.resolution, k, field_seed);
}

namespace {

Rect cell_rect(const Config& cfg, int index) {
    const int r = index / cfg.grid.cols;
    const int c = index % cfg.grid.cols;
    const double w = (cfg.grid.x1 - cfg.grid.x0) / cfg.grid.cols;
    const double h = (cfg.grid.y1 - cfg.grid.y0) / cfg.grid.rows;
    return Rect{{cfg.grid.x0 + c * w, cfg.grid.y0 + r * h},
                {cfg.grid.x0 + (c + 1) * w, cfg.grid.y0 + (r + 1) * h}};
}

ProtocolConfig protocol_config(const Config& cfg, double d_comm) {
    ProtocolConfig p;
    p.jitter = cfg.numerics.jitter;
    p.buffer_capacity = cfg.robots.buffer_capacity;
    p.max_inducing = cfg.robots.max_inducing;
    p.d_comm = d_comm;
    p.damping = cfg.robots.damping;
    p.scope_cap_factor = cfg.robots.scope_cap_factor;
    p.boundary_count = cfg.comm.boundary_count;
    p.boundary_inset_frac = cfg.comm.boundary_inset_frac;
    p.boundary_band_frac = cfg.comm.boundary_band_frac;
    p.hyper_step_size = cfg.hyper.step_size;
    p.hyper_max_step_norm = cfg.hyper.max_step_norm;
    return p;
}

BoundaryStrategy boundary_strategy(const Config& cfg) {
    if (cfg.comm.boundary_strategy == "line") return BoundaryStrategy::kLine;
    if (cfg.comm.boundary_strategy == "mirror") return BoundaryStrategy::kMirror;
    return BoundaryStrategy::kNone;
}

Eigen::VectorXd time_coords(bool dynamic, double t) {
    if (!dynamic) return Eigen::VectorXd();
    Eigen::VectorXd v(1);
    v << t;
    return v;
}

bool in_any(const std::vector<Rect>& regions, const Eigen::Vector2d& p) {
    for (const Rect& r : regions) {
        if (r.contains(p)) return true;
    }
    return false;
}

void for_each_robot(bool parallel, int n, const std::function<void(int)>& fn) {
    if (!parallel || n < 2) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = std::min<int>(n, static_cast<int>(std::thread::hardware_concurrency()));
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

struct PairKey {
    int a, b;
    bool operator<(const PairKey& o) const { return std::tie(a, b) < std::tie(o.a, o.b); }
};

}  // namespace

void run_field_experiment(const Config& cfg, std::uint64_t seed, const FieldGrid& field,
                          const FieldExperimentOptions& options, MetricsSink& sink) {
    const bool dynamic = field.dynamic();
    const int n_robots = cfg.grid.rows * cfg.grid.cols;
    const Kernel model_kernel = make_model_kernel(cfg);
    const NoiseModel noise = NoiseModel::from_sigma(cfg.noise.sigma);
    const ProtocolConfig pcfg = protocol_config(cfg, options.d_comm);
    const bool parallel = cfg.run.scheduler == "par";

    std::vector<Rect> heldout;
    if (options.heldout_metric && cfg.heldout.count > 0) {
        std::mt19937_64 rng = substream(seed, "heldout", 0);
        heldout = sample_heldout_regions(Rect{{cfg.grid.x0, cfg.grid.y0},
                                              {cfg.grid.x1, cfg.grid.y1}},
                                         cfg.heldout.count, cfg.heldout.size, rng);
    }

    std::vector<RobotAgent> robots;
    std::vector<Rect> cells;
    std::vector<TrajectoryState> trails;
    std::vector<std::mt19937_64> traj_rng, noise_rng;
    std::vector<Eigen::MatrixXd> fixed_z;
    robots.reserve(static_cast<size_t>(n_robots));
    for (int i = 0; i < n_robots; ++i) {
        const Rect cell = cell_rect(cfg, i);
        cells.push_back(cell);
        Eigen::MatrixXd z2 = cfg.robots.online_selection
                                 ? Eigen::MatrixXd(cell.center().transpose())
                                 : grid_inducing(cell, cfg.robots.inducing_grid,
                                                 cfg.robots.inducing_grid);
        Eigen::MatrixXd z = z2;
        if (dynamic) {
            z.resize(z2.rows(), 3);
            z.leftCols(2) = z2;
            z.col(2).setZero();
        }
        fixed_z.push_back(z);
        robots.emplace_back(i, cell, z, model_kernel, noise, pcfg);
        traj_rng.push_back(substream(seed, "traj", static_cast<std::uint64_t>(i)));
        noise_rng.push_back(substream(seed, "noise", static_cast<std::uint64_t>(i)));
        TrajectoryState st;
        st.pose = cell.center();
        st.speed = cfg.robots.speed;
        st.tolerance = cfg.robots.waypoint_tol;
        st.waypoint = sample_waypoint(cell, traj_rng.back());
        trails.push_back(st);
        robots.back().set_pose(st.pose);
    }

    std::vector<std::vector<Observation>> all_obs(static_cast<size_t>(n_robots));
    std::map<PairKey, std::pair<long, long>> live;  // built-against z versions

    TestGrid grid = make_test_grid(cfg.grid.x0, cfg.grid.x1, cfg.grid.y0, cfg.grid.y1,
                                   cfg.eval.grid_resolution);
    const AssignMode assign_mode =
        cfg.eval.mode == "closest" ? AssignMode::kClosest : AssignMode::kRegion;
    const BoundaryStrategy bstrat = boundary_strategy(cfg);
    const double time_end =
        dynamic ? field.t0() + field.nt() * field.dt() - 1e-9 : 0.0;

    auto evaluate = [&](long step) {
        const double t = dynamic ? std::min(static_cast<double>(step), time_end) : 0.0;
        for (int i = 0; i < grid.size(); ++i) {
            const double x = grid.points(i, 0);
            const double y = grid.points(i, 1);
            bool ok = field.valid(x, y, t);
            if (ok && options.heldout_metric) {
                ok = in_any(heldout, Eigen::Vector2d(x, y));
            }
            grid.valid[static_cast<size_t>(i)] = ok;
            grid.truth(i) = ok ? field.query(x, y, t) : 0.0;
        }
        long n_train = 0;
        for (const auto& v : all_obs) n_train += static_cast<long>(v.size());
        Eigen::MatrixXd train(n_train, 2);
        long r = 0;
        for (const auto& v : all_obs) {
            for (const auto& o : v) train.row(r++) = o.x.head(2).transpose();
        }

        const Eigen::VectorXd extra = time_coords(dynamic, t);
        const Eigen::VectorXd preds = predict_distributed(robots, grid, assign_mode, extra);
        const MseResult m = mse(preds, grid, cfg.eval.exclusion_radius, train);
        sink.add(step, options.mode_tag, "mse", m.value, m.n_points, seed);

        if (options.batch_baselines) {
            std::vector<BatchBlock> blocks;
            for (int i = 0; i < n_robots; ++i) {
                blocks.push_back({fixed_z[static_cast<size_t>(i)],
                                  all_obs[static_cast<size_t>(i)]});
            }
            auto run_batch = [&](BatchPrior prior, int extra_edges, const std::string& tag) {
                BatchOptions bo;
                bo.prior = prior;
                bo.extra_edges = extra_edges;
                bo.rows = cfg.grid.rows;
                bo.cols = cfg.grid.cols;
                bo.jitter = cfg.numerics.jitter;
                bo.damping = cfg.robots.damping;
                bo.tol = cfg.numerics.tol;
                bo.max_iterations = cfg.numerics.max_gbp_iters;
                BatchModel model(blocks, model_kernel, noise, bo);
                model.fit();
                Eigen::VectorXd bp(grid.size());
                for (int i = 0; i < grid.size(); ++i) {
                    if (!grid.valid[static_cast<size_t>(i)]) {
                        bp(i) = 0.0;
                        continue;
                    }
                    const Eigen::Vector2d p = grid.points.row(i).head(2).transpose();
                    const int cell = assign_region(p, cells);
                    Eigen::VectorXd q(extra.size() + 2);
                    q.head(2) = p;
                    q.tail(extra.size()) = extra;
                    bp(i) = model.predict(q, cell).mu(0);
                }
                const MseResult bm = mse(bp, grid, cfg.eval.exclusion_radius, train);
                sink.add(step, tag, "mse", bm.value, bm.n_points, seed);
            };
            run_batch(BatchPrior::kDense, 0, "batch_dense");
            run_batch(BatchPrior::kTree, 0, "batch_tsgp");
            run_batch(BatchPrior::kIndependent, 0, "batch_none");
        }
    };

    for (long step = 0; step < cfg.run.steps; ++step) {
        const double t = dynamic ? std::min(static_cast<double>(step), time_end) : 0.0;

        // Move and observe (robot-local; parallel scheduler may fan out).
        for_each_robot(parallel, n_robots, [&](int i) {
            auto& st = trails[static_cast<size_t>(i)];
            step_trajectory(st, cells[static_cast<size_t>(i)], traj_rng[static_cast<size_t>(i)]);
            robots[static_cast<size_t>(i)].set_pose(st.pose);

            std::normal_distribution<double> gauss;
            const double noise_draw = gauss(noise_rng[static_cast<size_t>(i)]);
            if (in_any(heldout, st.pose)) return;
            Eigen::VectorXd x(dynamic ? 3 : 2);
            x.head(2) = st.pose;
            if (dynamic) x(2) = t;
            const double y = field.query(st.pose.x(), st.pose.y(), t) +
                             cfg.noise.sigma * noise_draw;
            const Observation obs{x, y, step};
            robots[static_cast<size_t>(i)].add_observation(obs);
            all_obs[static_cast<size_t>(i)].push_back(obs);
        });

        // Online inducing-point selection from retained observations.
        if (cfg.robots.online_selection && step % cfg.robots.select_period == 0) {
            for_each_robot(parallel, n_robots, [&](int i) {
                RobotAgent& robot = robots[static_cast<size_t>(i)];
                const auto& retained = robot.model().retained();
                if (retained.empty()) return;
                Eigen::MatrixXd candidates(retained.size(), retained[0].x.size());
                for (size_t k = 0; k < retained.size(); ++k) {
                    candidates.row(static_cast<Eigen::Index>(k)) = retained[k].x.transpose();
                }
                const auto picks = greedy_variance_select(candidates, robot.model().block().z,
                                                          robot.model().kernel(), 1,
                                                          cfg.numerics.jitter);
                robot.add_inducing_point(candidates.row(picks[0]).transpose(), step);
                robot.retire_inducing_points();
            });
        }

        // Communication: range-gated connect / exchange / decouple.
        if (options.comm_enabled && options.d_comm > 0.0) {
            std::vector<Eigen::Vector2d> poses;
            for (const auto& r : robots) poses.push_back(r.pose());
            const auto pairs =
                connectivity(poses, options.d_comm, step, options.comm_interval);
            if (step % options.comm_interval == 0) {
                std::set<PairKey> in_range;
                for (const auto& [i, j] : pairs) in_range.insert({i, j});

                std::vector<PairKey> dropped;
                for (const auto& [key, vers] : live) {
                    if (!in_range.count(key)) dropped.push_back(key);
                }
                for (const PairKey& key : dropped) {
                    decouple(robots[static_cast<size_t>(key.a)],
                             robots[static_cast<size_t>(key.b)]);
                    live.erase(key);
                }
                for (const auto& [i, j] : pairs) {
                    RobotAgent& a = robots[static_cast<size_t>(i)];
                    RobotAgent& b = robots[static_cast<size_t>(j)];
                    const PairKey key{i, j};
                    auto it = live.find(key);
                    if (it == live.end()) {
                        if (bstrat != BoundaryStrategy::kNone) {
                            try {
                                boundary_inducing(a, b, bstrat, step, time_coords(dynamic, t));
                            } catch (const NoSharedBoundary&) {
                                // non-adjacent cells meet at a corner: no line to add
                            }
                        }
                        connect(a, b);
                        live[key] = {a.z_version(), b.z_version()};
                    } else if (it->second !=
                               std::make_pair(a.z_version(), b.z_version())) {
                        refresh_edge(a, b);
                        it->second = {a.z_version(), b.z_version()};
                    } else {
                        exchange(a, b);
                    }
                    if (cfg.comm.share_posteriors) share_posteriors(a, b);
                }
            }
        }

        if (cfg.hyper.enabled && step > 0 && step % cfg.hyper.period == 0) {
            for_each_robot(parallel, n_robots,
                           [&](int i) { robots[static_cast<size_t>(i)].hyper_step(); });
        }

        for_each_robot(parallel, n_robots, [&](int i) {
            robots[static_cast<size_t>(i)].update_local(cfg.robots.gbp_iters_per_step);
        });

        if (step % cfg.run.eval_period == 0 || step == cfg.run.steps - 1) {
            evaluate(step);
        }
    }
}

void run_edges_experiment(const Config& cfg, std::uint64_t seed, MetricsSink& sink) {
    const int n_robots = cfg.grid.rows * cfg.grid.cols;
    const Kernel kernel = make_model_kernel(cfg);
    const NoiseModel noise = NoiseModel::from_sigma(cfg.noise.sigma);
    const FieldGrid field = make_field(cfg, seed);

    // Collect per-cell observations with the standard trajectory model.
    std::vector<BatchBlock> blocks;
    std::vector<Rect> cells;
    long n_train = 0;
    for (int i = 0; i < n_robots; ++i) {
        const Rect cell = cell_rect(cfg, i);
        cells.push_back(cell);
        std::mt19937_64 trng = substream(seed, "traj", static_cast<std::uint64_t>(i));
        std::mt19937_64 nrng = substream(seed, "noise", static_cast<std::uint64_t>(i));
        std::normal_distribution<double> gauss;
        TrajectoryState st;
        st.pose = cell.center();
        st.speed = cfg.robots.speed;
        st.tolerance = cfg.robots.waypoint_tol;
        st.waypoint = sample_waypoint(cell, trng);

        BatchBlock block;
        block.z = grid_inducing(cell, cfg.robots.inducing_grid, cfg.robots.inducing_grid);
        for (long s = 0; s < cfg.edges.obs_per_robot; ++s) {
            step_trajectory(st, cell, trng);
            Eigen::VectorXd x(2);
            x = st.pose;
            block.obs.push_back(
                {x, field.query(st.pose.x(), st.pose.y()) + cfg.noise.sigma * gauss(nrng), s});
        }
        n_train += static_cast<long>(block.obs.size());
        blocks.push_back(std::move(block));
    }

    Eigen::MatrixXd train(n_train, 2);
    long r = 0;
    for (const auto& b : blocks) {
        for (const auto& o : b.obs) train.row(r++) = o.x.transpose();
    }
    TestGrid grid = make_test_grid(cfg.grid.x0, cfg.grid.x1, cfg.grid.y0, cfg.grid.y1,
                                   cfg.eval.grid_resolution);
    for (int i = 0; i < grid.size(); ++i) {
        grid.truth(i) = field.query(grid.points(i, 0), grid.points(i, 1));
    }

    auto fit_and_score = [&](BatchPrior prior, int extra, const std::string& tag) {
        BatchOptions bo;
        bo.prior = prior;
        bo.extra_edges = extra;
        bo.rows = cfg.grid.rows;
        bo.cols = cfg.grid.cols;
        bo.jitter = cfg.numerics.jitter;
        bo.damping = cfg.robots.damping;
        bo.tol = cfg.numerics.tol;
        bo.max_iterations = cfg.numerics.max_gbp_iters;
        BatchModel model(blocks, kernel, noise, bo);
        const IterateResult res = model.fit();
        Eigen::VectorXd preds(grid.size());
        for (int i = 0; i < grid.size(); ++i) {
            const Eigen::Vector2d p = grid.points.row(i).transpose();
            preds(i) = model.predict(p, assign_region(p, cells)).mu(0);
        }
        const MseResult m = mse(preds, grid, cfg.eval.exclusion_radius, train);
        sink.add(0, tag, "mse", m.value, m.n_points, seed);
        sink.add(0, tag, "converged", res.converged ? 1.0 : 0.0, res.iterations, seed);
    };

    fit_and_score(BatchPrior::kIndependent, 0, "none");
    for (int extra = 0; extra <= cfg.edges.max_extra; ++extra) {
        fit_and_score(extra == 0 ? BatchPrior::kTree : BatchPrior::kTreeExtra, extra,
                      "tsgp+" + std::to_string(extra));
    }
    fit_and_score(BatchPrior::kDense, 0, "dense");
}

void run_occupancy_experiment(const Config& cfg, std::uint64_t seed, MetricsSink& sink,
                              const OccupancyArtifacts& artifacts) {
    const OccupancyWorld world = load_world(cfg.occupancy.world_file);
    const auto waypoint_sets = load_trajectories(cfg.occupancy.trajectory_file);
    const int n_robots = static_cast<int>(waypoint_sets.size());
    const Kernel kernel = Kernel::matern12(1.0, cfg.occupancy.kernel_lengthscale);
    const NoiseModel noise = NoiseModel::from_sigma(cfg.noise.sigma);
    ProtocolConfig pcfg = protocol_config(cfg, cfg.comm.d_comm);

    LidarParams lidar;
    lidar.n_beams = cfg.occupancy.n_beams;
    lidar.fov = cfg.occupancy.fov;
    lidar.max_range = cfg.occupancy.max_range;
    lidar.free_sample_spacing = cfg.occupancy.free_sample_spacing;

    std::vector<RobotAgent> robots;
    std::vector<WaypointFollower> followers;
    for (int i = 0; i < n_robots; ++i) {
        WaypointFollower f;
        f.waypoints = waypoint_sets[static_cast<size_t>(i)];
        f.pose = f.waypoints.front();
        f.speed = cfg.occupancy.trajectory_speed;
        followers.push_back(std::move(f));
        Eigen::MatrixXd z(1, 2);
        z.row(0) = followers.back().pose.transpose();
        robots.emplace_back(i, world.extents, z, kernel, noise, pcfg);
        robots.back().set_pose(followers.back().pose);
    }

    // Ground truth: points on the walls are occupied, grid points at least
    // eval_free_margin from every wall are free.
    TestGrid grid;
    {
        double total_len = 0.0;
        for (const auto& w : world.walls) total_len += (w.b - w.a).norm();
        std::vector<Eigen::Vector2d> pts;
        std::vector<double> truth;
        for (const auto& w : world.walls) {
            const double len = (w.b - w.a).norm();
            const int n = std::max(1, static_cast<int>(std::round(
                                          cfg.occupancy.eval_wall_samples * len / total_len)));
            for (int i = 0; i < n; ++i) {
                pts.push_back(w.a + (i + 0.5) / n * (w.b - w.a));
                truth.push_back(1.0);
            }
        }
        const int res = cfg.occupancy.eval_free_resolution;
        for (int iy = 0; iy < res; ++iy) {
            for (int ix = 0; ix < res; ++ix) {
                Eigen::Vector2d p(
                    world.extents.lo.x() + (ix + 0.5) * world.extents.width() / res,
                    world.extents.lo.y() + (iy + 0.5) * world.extents.height() / res);
                double min_d = std::numeric_limits<double>::infinity();
                for (const auto& w : world.walls) {
                    const Eigen::Vector2d e = w.b - w.a;
                    const double tt = std::clamp((p - w.a).dot(e) / e.squaredNorm(), 0.0, 1.0);
                    min_d = std::min(min_d, (p - (w.a + tt * e)).norm());
                }
                if (min_d > cfg.occupancy.eval_free_margin) {
                    pts.push_back(p);
                    truth.push_back(0.0);
                }
            }
        }
        grid.points.resize(static_cast<Eigen::Index>(pts.size()), 2);
        grid.truth.resize(static_cast<Eigen::Index>(pts.size()));
        grid.valid.assign(pts.size(), true);
        for (size_t i = 0; i < pts.size(); ++i) {
            grid.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
            grid.truth(static_cast<Eigen::Index>(i)) = truth[i];
        }
    }

    std::set<long> eval_steps;
    for (long s = 1; s < cfg.run.steps; s *= 2) eval_steps.insert(s);
    eval_steps.insert(cfg.run.steps - 1);

    auto evaluate = [&](long step) {
        const Eigen::VectorXd extra;
        const Eigen::VectorXd f_dist =
            predict_distributed(robots, grid, AssignMode::kClosest, extra);
        Eigen::VectorXd p_dist(f_dist.size());
        for (Eigen::Index i = 0; i < f_dist.size(); ++i) p_dist(i) = sigmoid_of(f_dist(i));
        const OccupancyMetrics dist = occupancy_metrics(p_dist, grid);
        sink.add(step, "distributed", "bce", dist.bce, dist.n_points, seed);
        sink.add(step, "distributed", "accuracy", dist.accuracy, dist.n_points, seed);

        const auto global_preds = predict_global(robots, grid, extra);
        double bce = 0.0, acc = 0.0;
        for (const auto& f_glob : global_preds) {
            Eigen::VectorXd p(f_glob.size());
            for (Eigen::Index i = 0; i < f_glob.size(); ++i) p(i) = sigmoid_of(f_glob(i));
            const OccupancyMetrics m = occupancy_metrics(p, grid);
            bce += m.bce;
            acc += m.accuracy;
        }
        bce /= static_cast<double>(n_robots);
        acc /= static_cast<double>(n_robots);
        sink.add(step, "global", "bce", bce, grid.size(), seed);
        sink.add(step, "global", "accuracy", acc, grid.size(), seed);

        if (artifacts.emit_raster) {
            const int res = cfg.occupancy.map_raster_resolution;
            TestGrid raster = make_test_grid(world.extents.lo.x(), world.extents.hi.x(),
                                             world.extents.lo.y(), world.extents.hi.y(), res);
            const auto fr = predict_global(robots, raster, extra)[0];
            Eigen::MatrixXd img(res, res);
            for (int iy = 0; iy < res; ++iy)
                for (int ix = 0; ix < res; ++ix)
                    img(res - 1 - iy, ix) = sigmoid_of(fr(iy * res + ix));
            artifacts.emit_raster(step, img);
        }
    };

    std::map<PairKey, std::pair<long, long>> live;
    const BoundaryStrategy bstrat = boundary_strategy(cfg);

    for (long step = 0; step < cfg.run.steps; ++step) {
        bool all_done = true;
        for (int i = 0; i < n_robots; ++i) {
            auto& f = followers[static_cast<size_t>(i)];
            if (!f.finished()) all_done = false;
            f.step();
            robots[static_cast<size_t>(i)].set_pose(f.pose);
        }

        for (int i = 0; i < n_robots; ++i) {
            auto& f = followers[static_cast<size_t>(i)];
            if (f.finished()) continue;  // single pass: sensing stops at the end
            RobotAgent& robot = robots[static_cast<size_t>(i)];
            const auto scan = lidar_scan(world, f.pose, f.heading, lidar, step);
            if (scan.empty()) continue;

            // Wall-biased candidates: hit locations plus hits perturbed back
            // toward the robot.
            std::vector<Eigen::Vector2d> cands;
            for (const auto& o : scan) {
                if (o.y < 0.5) continue;
                const Eigen::Vector2d hit = o.x.head(2);
                cands.push_back(hit);
                const Eigen::Vector2d back = (f.pose - hit).normalized();
                cands.push_back(hit + cfg.occupancy.wall_offset * back);
            }
            if (!cands.empty() && cfg.occupancy.select_per_scan > 0) {
                Eigen::MatrixXd cmat(static_cast<Eigen::Index>(cands.size()), 2);
                for (size_t c = 0; c < cands.size(); ++c)
                    cmat.row(static_cast<Eigen::Index>(c)) = cands[c].transpose();
                const auto picks =
                    greedy_variance_select(cmat, robot.model().block().z, kernel,
                                           cfg.occupancy.select_per_scan, cfg.numerics.jitter);
                for (int p : picks) {
                    robot.add_inducing_point(cmat.row(p).transpose(), step);
                }
            }
            robot.model().fuse_binary_batch(scan);
            robot.retire_inducing_points();
        }

        std::vector<Eigen::Vector2d> poses;
        for (const auto& r : robots) poses.push_back(r.pose());
        if (cfg.comm.enabled && cfg.comm.d_comm > 0.0 && step % cfg.comm.interval == 0) {
            const auto pairs = connectivity(poses, cfg.comm.d_comm, step, cfg.comm.interval);
            std::set<PairKey> in_range;
            for (const auto& [i, j] : pairs) in_range.insert({i, j});
            std::vector<PairKey> dropped;
            for (const auto& [key, vers] : live) {
                if (!in_range.count(key)) dropped.push_back(key);
            }
            for (const PairKey& key : dropped) {
                decouple(robots[static_cast<size_t>(key.a)], robots[static_cast<size_t>(key.b)]);
                live.erase(key);
            }
            for (const auto& [i, j] : pairs) {
                RobotAgent& a = robots[static_cast<size_t>(i)];
                RobotAgent& b = robots[static_cast<size_t>(j)];
                const PairKey key{i, j};
                auto it = live.find(key);
                if (it == live.end()) {
                    if (bstrat != BoundaryStrategy::kNone) {
                        boundary_inducing(a, b, bstrat, step, Eigen::VectorXd());
                    }
                    connect(a, b);
                    live[key] = {a.z_version(), b.z_version()};
                } else if (it->second != std::make_pair(a.z_version(), b.z_version())) {
                    refresh_edge(a, b);
                    it->second = {a.z_version(), b.z_version()};
                } else {
                    exchange(a, b);
                }
                if (cfg.comm.share_posteriors) share_posteriors(a, b);
            }
        }

        for (auto& r : robots) r.update_local(cfg.robots.gbp_iters_per_step);

        if (eval_steps.count(step)) evaluate(step);
        if (all_done) break;
    }
}

}  // namespace gbpmap
