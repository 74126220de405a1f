#include "gbpmap/sparse_gp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace gbpmap {

namespace {

double sigmoid(double f) { return 1.0 / (1.0 + std::exp(-f)); }

constexpr double kLog2Pi = 1.8378770664093453;

}  // namespace

Eigen::VectorXd InducingBlock::centroid() const {
    return z.colwise().mean().transpose();
}

InfoGaussian gp_prior_factor(const Eigen::MatrixXd& z, const Kernel& kernel, double jitter) {
    if (z.rows() < 1) throw DimensionMismatch("gp_prior_factor: empty inducing set");
    const Eigen::MatrixXd kzz = kernel.gram(z, z);
    InfoGaussian f;
    f.lambda = spd_inverse(kzz, jitter);
    f.eta = Eigen::VectorXd::Zero(z.rows());
    return f;
}

InfoGaussian gp_conditional_factor(const Eigen::MatrixXd& z_child,
                                   const Eigen::MatrixXd& z_parent, const Kernel& kernel,
                                   double jitter) {
    const int nc = static_cast<int>(z_child.rows());
    const int np = static_cast<int>(z_parent.rows());
    if (nc < 1 || np < 1) throw DimensionMismatch("gp_conditional_factor: empty block");

    const Eigen::MatrixXd kcc = kernel.gram(z_child, z_child);
    const Eigen::MatrixXd kcp = kernel.gram(z_child, z_parent);
    const Eigen::MatrixXd kpp = kernel.gram(z_parent, z_parent);
    // A = K_cp K_pp^-1 computed as (K_pp^-1 K_pc)^T.
    const Eigen::MatrixXd at = spd_solve(kpp, kcp.transpose(), jitter);
    const Eigen::MatrixXd a = at.transpose();
    const Eigen::MatrixXd q = symmetrized(kcc - a * kcp.transpose());

    const Eigen::MatrixXd qi = spd_inverse(q, jitter);
    const Eigen::MatrixXd qia = qi * a;

    InfoGaussian f;
    f.eta = Eigen::VectorXd::Zero(nc + np);
    f.lambda.resize(nc + np, nc + np);
    f.lambda.topLeftCorner(nc, nc) = qi;
    f.lambda.topRightCorner(nc, np) = -qia;
    f.lambda.bottomLeftCorner(np, nc) = -qia.transpose();
    f.lambda.bottomRightCorner(np, np) = symmetrized(a.transpose() * qia);
    return f;
}

InfoGaussian fitc_observation_factor(const Observation& obs, const Eigen::MatrixXd& z,
                                     const Kernel& kernel, const NoiseModel& noise,
                                     double jitter) {
    const Eigen::MatrixXd kzz = kernel.gram(z, z);
    Eigen::MatrixXd xs(1, obs.x.size());
    xs.row(0) = obs.x.transpose();
    const Eigen::VectorXd kx = kernel.gram(z, xs).col(0);
    const Eigen::VectorXd a = spd_solve(kzz, kx, jitter);
    const double c = std::max(0.0, kernel.eval(obs.x, obs.x) - kx.dot(a));
    const double denom = c + noise.variance();
    InfoGaussian f;
    f.lambda = (a * a.transpose()) / denom;
    f.eta = a * (obs.y / denom);
    return f;
}

InfoGaussian sum_fitc_observation_factors(const std::vector<Observation>& obs,
                                          const Eigen::MatrixXd& z, const Kernel& kernel,
                                          const NoiseModel& noise, double jitter) {
    const int m = static_cast<int>(z.rows());
    InfoGaussian sum = InfoGaussian::zero(m);
    if (obs.empty()) return sum;
    Eigen::MatrixXd kuu = symmetrized(kernel.gram(z, z));
    Eigen::LDLT<Eigen::MatrixXd> ldlt(kuu);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
        kuu.diagonal().array() += jitter;
        ldlt.compute(kuu);
        if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
            throw SingularPrecision("inducing gram not positive definite after jitter");
        }
    }
    const double sigma2 = noise.variance();
    for (const Observation& o : obs) {
        Eigen::MatrixXd xs(1, o.x.size());
        xs.row(0) = o.x.transpose();
        const Eigen::VectorXd kx = kernel.gram(z, xs).col(0);
        const Eigen::VectorXd a = ldlt.solve(kx);
        const double c = std::max(0.0, kernel.eval(o.x, o.x) - kx.dot(a));
        const double denom = c + sigma2;
        sum.lambda += (a * a.transpose()) / denom;
        sum.eta += a * (o.y / denom);
    }
    return sum;
}

MomentGaussian fitc_predict(const Eigen::VectorXd& xstar, const Eigen::MatrixXd& z,
                            const MomentGaussian& belief, const Kernel& kernel,
                            double jitter) {
    if (belief.dim() != z.rows()) {
        throw DimensionMismatch("fitc_predict: belief dim " + std::to_string(belief.dim()) +
                                " vs |Z| " + std::to_string(z.rows()));
    }
    const Eigen::MatrixXd kzz = kernel.gram(z, z);
    Eigen::MatrixXd xs(1, xstar.size());
    xs.row(0) = xstar.transpose();
    const Eigen::VectorXd kx = kernel.gram(z, xs).col(0);
    const Eigen::VectorXd a = spd_solve(kzz, kx, jitter);
    const double kss = kernel.eval(xstar, xstar);

    MomentGaussian out;
    out.mu = Eigen::VectorXd::Constant(1, a.dot(belief.mu));
    const Eigen::VectorXd sa = belief.sigma * a;
    const double var = kss - kx.dot(a) + a.dot(sa);
    out.sigma = Eigen::MatrixXd::Constant(1, 1, std::max(0.0, var));
    return out;
}

FitcPredictor::FitcPredictor(Eigen::MatrixXd z, Kernel kernel, MomentGaussian belief,
                             double jitter)
    : z_(std::move(z)), kernel_(std::move(kernel)), belief_(std::move(belief)) {
    if (belief_.dim() != z_.rows()) {
        throw DimensionMismatch("FitcPredictor: belief dim vs |Z|");
    }
    Eigen::MatrixXd kuu = symmetrized(kernel_.gram(z_, z_));
    ldlt_.compute(kuu);
    if (ldlt_.info() != Eigen::Success || ldlt_.vectorD().minCoeff() <= 0.0) {
        kuu.diagonal().array() += jitter;
        ldlt_.compute(kuu);
        if (ldlt_.info() != Eigen::Success || ldlt_.vectorD().minCoeff() <= 0.0) {
            throw SingularPrecision("inducing gram not positive definite after jitter");
        }
    }
    centroid_ = z_.colwise().mean().transpose();
}

MomentGaussian FitcPredictor::predict(const Eigen::VectorXd& xstar) const {
    Eigen::MatrixXd xs(1, xstar.size());
    xs.row(0) = xstar.transpose();
    const Eigen::VectorXd kx = kernel_.gram(z_, xs).col(0);
    const Eigen::VectorXd a = ldlt_.solve(kx);
    const Eigen::VectorXd sa = belief_.sigma * a;
    MomentGaussian out;
    out.mu = Eigen::VectorXd::Constant(1, a.dot(belief_.mu));
    out.sigma = Eigen::MatrixXd::Constant(
        1, 1, std::max(0.0, kernel_.eval(xstar, xstar) - kx.dot(a) + a.dot(sa)));
    return out;
}

std::vector<int> greedy_variance_select(const Eigen::MatrixXd& candidates,
                                        const Eigen::MatrixXd& z, const Kernel& kernel,
                                        int m, double jitter) {
    if (candidates.rows() == 0) throw DimensionMismatch("greedy select: no candidates");
    const int n = static_cast<int>(candidates.rows());
    const int picks = std::min(m, n);

    Eigen::MatrixXd z_ext = z;
    std::vector<bool> taken(static_cast<size_t>(n), false);
    std::vector<int> chosen;
    chosen.reserve(static_cast<size_t>(picks));

    for (int round = 0; round < picks; ++round) {
        int best = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        const bool have_z = z_ext.rows() > 0;
        Eigen::MatrixXd kuu;
        if (have_z) kuu = kernel.gram(z_ext, z_ext);
        for (int i = 0; i < n; ++i) {
            if (taken[static_cast<size_t>(i)]) continue;
            const Eigen::VectorXd x = candidates.row(i).transpose();
            double score = kernel.eval(x, x);
            if (have_z) {
                Eigen::MatrixXd xs(1, candidates.cols());
                xs.row(0) = candidates.row(i);
                const Eigen::VectorXd kx = kernel.gram(z_ext, xs).col(0);
                const Eigen::VectorXd a = spd_solve(kuu, kx, jitter);
                score -= kx.dot(a);
            }
            if (score > best_score) {
                best_score = score;
                best = i;
            }
        }
        chosen.push_back(best);
        taken[static_cast<size_t>(best)] = true;
        z_ext.conservativeResize(z_ext.rows() + 1, candidates.cols());
        z_ext.row(z_ext.rows() - 1) = candidates.row(best);
    }
    return chosen;
}

FitcObjective fitc_log_marginal(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& z, const Kernel& kernel,
                                const NoiseModel& noise, double jitter) {
    const int n = static_cast<int>(x.rows());
    if (n < 1) throw DimensionMismatch("fitc_log_marginal: need at least one observation");
    if (y.size() != n) throw DimensionMismatch("fitc_log_marginal: |y| != |X|");

    const Eigen::MatrixXd kuu = kernel.gram(z, z);
    const Eigen::MatrixXd kfu = kernel.gram(x, z);
    const Eigen::MatrixXd b = spd_solve(kuu, kfu.transpose(), jitter);  // K_uu^-1 K_uf
    const Eigen::MatrixXd qff = symmetrized(kfu * b);

    Eigen::MatrixXd s = qff;
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd xi = x.row(i).transpose();
        s(i, i) += std::max(0.0, kernel.eval(xi, xi) - qff(i, i)) + noise.variance();
    }

    const Eigen::MatrixXd si = spd_inverse(s, jitter);
    const Eigen::VectorXd alpha = si * y;

    FitcObjective out;
    out.value = -0.5 * (n * kLog2Pi + spd_logdet(s, jitter) + y.dot(alpha));

    // dL = 0.5 tr((alpha alpha^T - S^-1) dS) with
    // dS = dQ off-diagonal, d(diag K_ff) + d(noise) on the diagonal.
    const Eigen::MatrixXd w = alpha * alpha.transpose() - si;
    const auto dkuu = kernel.gram_grad(z);
    const auto dkfu = kernel.gram_grad(x, z);
    const auto dkff = kernel.gram_grad(x);

    const int np = kernel.n_params();
    out.gradient.resize(np + 1);
    for (int p = 0; p < np; ++p) {
        const Eigen::MatrixXd& dfu = dkfu[static_cast<size_t>(p)];
        Eigen::MatrixXd ds = dfu * b + b.transpose() * dfu.transpose() -
                             b.transpose() * dkuu[static_cast<size_t>(p)] * b;
        for (int i = 0; i < n; ++i) {
            ds(i, i) = dkff[static_cast<size_t>(p)](i, i);
        }
        out.gradient(p) = 0.5 * (w.cwiseProduct(ds)).sum();
    }
    // Noise enters as sigma^2 I with sigma^2 = exp(2 log sigma).
    out.gradient(np) = 0.5 * w.trace() * 2.0 * noise.variance();
    return out;
}

std::pair<double, double> bce_linearize(double f0, double y) {
    const double s = sigmoid(f0);
    const double lambda = s * (1.0 - s);
    const double eta = (y - s) + lambda * f0;
    return {eta, lambda};
}

BceObservationEnergy::BceObservationEnergy(const Observation& obs, const Eigen::MatrixXd& z,
                                           const Kernel& kernel, double jitter)
    : y_(obs.y) {
    const Eigen::MatrixXd kzz = kernel.gram(z, z);
    Eigen::MatrixXd xs(1, obs.x.size());
    xs.row(0) = obs.x.transpose();
    const Eigen::VectorXd kx = kernel.gram(z, xs).col(0);
    a_ = spd_solve(kzz, kx, jitter);
    c_ = std::max(0.0, kernel.eval(obs.x, obs.x) - kx.dot(a_));
}

InfoGaussian BceObservationEnergy::linearize(const Eigen::VectorXd& mean_u) const {
    if (mean_u.size() != a_.size()) {
        throw DimensionMismatch("BceObservationEnergy: mean dim mismatch");
    }
    const double f0 = a_.dot(mean_u);
    const auto [eta_f, w] = bce_linearize(f0, y_);
    // f marginalized against p(f|u) = N(a^T u, c); written so w -> 0 is safe.
    const double denom = c_ * w + 1.0;
    InfoGaussian out;
    out.lambda = (a_ * a_.transpose()) * (w / denom);
    out.eta = a_ * (eta_f / denom);
    return out;
}

// --- SparseGpModel -----------------------------------------------------------

SparseGpModel::SparseGpModel(Eigen::MatrixXd z, Kernel kernel, NoiseModel noise,
                             SparseGpConfig config, NodeId u_variable)
    : kernel_(std::move(kernel)), noise_(noise), config_(config) {
    if (z.rows() < 1) throw DimensionMismatch("SparseGpModel: needs at least one inducing point");
    block_.z = std::move(z);
    block_.u_variable = graph_.add_variable(u_variable, static_cast<int>(block_.z.rows()));
    block_.accumulator = InfoGaussian::zero(block_.size());
    block_.timestamps.assign(static_cast<size_t>(block_.size()), 0);
    prior_factor_ = graph_.add_factor({block_.u_variable},
                                      gp_prior_factor(block_.z, kernel_, config_.jitter));
    accumulator_factor_ = graph_.add_factor({block_.u_variable}, block_.accumulator);
    update_local();
}

void SparseGpModel::sync_accumulator_factor() {
    graph_.set_factor_value(accumulator_factor_, block_.accumulator);
}

void SparseGpModel::add_observation(const Observation& obs) {
    const InfoGaussian f =
        fitc_observation_factor(obs, block_.z, kernel_, noise_, config_.jitter);
    const NodeId fid = graph_.add_factor({block_.u_variable}, f);
    graph_.update_factor(fid);
    retained_.push_back(obs);
    retained_factors_.push_back(fid);
    retained_binary_.push_back(false);
    while (static_cast<int>(retained_.size()) > config_.buffer_capacity) fuse_oldest();
}

void SparseGpModel::add_binary_observation(const Observation& obs) {
    auto energy = std::make_shared<BceObservationEnergy>(obs, block_.z, kernel_, config_.jitter);
    const NodeId fid = graph_.add_factor({block_.u_variable},
                                         std::shared_ptr<const LinearizableEnergy>(energy));
    graph_.update_factor(fid);
    retained_.push_back(obs);
    retained_factors_.push_back(fid);
    retained_binary_.push_back(true);
    while (static_cast<int>(retained_.size()) > config_.buffer_capacity) fuse_oldest();
}

void SparseGpModel::fuse_oldest() {
    if (retained_.empty()) return;
    const NodeId fid = retained_factors_.front();
    if (retained_binary_.front()) graph_.relinearize(fid);
    block_.accumulator += graph_.factor(fid).value;
    graph_.remove_factor(fid);
    retained_.erase(retained_.begin());
    retained_factors_.erase(retained_factors_.begin());
    retained_binary_.erase(retained_binary_.begin());
    sync_accumulator_factor();
    graph_.update_factor(accumulator_factor_);
}

void SparseGpModel::fuse_all() {
    while (!retained_.empty()) fuse_oldest();
}

void SparseGpModel::fuse_factor(const InfoGaussian& factor) {
    if (factor.dim() != block_.size()) {
        throw DimensionMismatch("fuse_factor: dim " + std::to_string(factor.dim()) + " vs |Z| " +
                                std::to_string(block_.size()));
    }
    block_.accumulator += factor;
    sync_accumulator_factor();
    graph_.update_factor(accumulator_factor_);
}

void SparseGpModel::fuse_binary_batch(const std::vector<Observation>& batch) {
    if (batch.empty()) return;
    const Eigen::MatrixXd kuu = kernel_.gram(block_.z, block_.z);
    MomentGaussian q;
    try {
        q = belief_moments();
    } catch (const SingularPrecision&) {
        q.mu = Eigen::VectorXd::Zero(block_.size());
        q.sigma = kuu;
    }

    for (const Observation& obs : batch) {
        Eigen::MatrixXd xs(1, obs.x.size());
        xs.row(0) = obs.x.transpose();
        const Eigen::VectorXd kx = kernel_.gram(block_.z, xs).col(0);
        const Eigen::VectorXd a = spd_solve(kuu, kx, config_.jitter);
        const double c = std::max(0.0, kernel_.eval(obs.x, obs.x) - kx.dot(a));

        const double f0 = a.dot(q.mu);
        const auto [eta_f, w] = bce_linearize(f0, obs.y);
        const double denom = c * w + 1.0;
        block_.accumulator.lambda += (a * a.transpose()) * (w / denom);
        block_.accumulator.eta += a * (eta_f / denom);

        // Rank-1 moment update keeps the linearization point current.
        const Eigen::VectorXd m = q.sigma * a;
        const double gate = (a.dot(m) + c) * w + 1.0;
        q.mu += m * ((obs.y - sigmoid(f0)) / gate);
        q.sigma -= (m * m.transpose()) * (w / gate);
    }
    sync_accumulator_factor();
    graph_.update_factor(accumulator_factor_);
}

void SparseGpModel::rebuild_observation_factors() {
    for (size_t i = 0; i < retained_.size(); ++i) {
        graph_.remove_factor(retained_factors_[i]);
        if (retained_binary_[i]) {
            auto energy = std::make_shared<BceObservationEnergy>(retained_[i], block_.z, kernel_,
                                                                 config_.jitter);
            retained_factors_[i] = graph_.add_factor(
                {block_.u_variable}, std::shared_ptr<const LinearizableEnergy>(energy));
        } else {
            retained_factors_[i] = graph_.add_factor(
                {block_.u_variable},
                fitc_observation_factor(retained_[i], block_.z, kernel_, noise_, config_.jitter));
        }
    }
}

void SparseGpModel::add_inducing_point(const Eigen::VectorXd& location, long timestamp) {
    if (location.size() != block_.z.cols()) {
        throw DimensionMismatch("add_inducing_point: location dim mismatch");
    }
    block_.z.conservativeResize(block_.z.rows() + 1, Eigen::NoChange);
    block_.z.row(block_.z.rows() - 1) = location.transpose();
    block_.timestamps.push_back(timestamp);

    const int m = block_.size();
    // Zero-pad the accumulator: the new point receives no message from
    // already-discarded observations (accepted stale-message approximation).
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(m);
    eta.head(m - 1) = block_.accumulator.eta;
    Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(m, m);
    lambda.topLeftCorner(m - 1, m - 1) = block_.accumulator.lambda;
    block_.accumulator = InfoGaussian{eta, lambda};

    graph_.resize_variable(block_.u_variable, m);
    if (graph_.factor(prior_factor_).scope.size() == 1) {
        graph_.set_factor_value(prior_factor_, gp_prior_factor(block_.z, kernel_, config_.jitter));
    }
    sync_accumulator_factor();
    rebuild_observation_factors();
    update_local();
}

void SparseGpModel::retire_inducing_points(int max_count) {
    if (max_count < 1) throw DimensionMismatch("retire: max_count must be >= 1");
    const int m = block_.size();
    if (m <= max_count) return;
    const int drop = m - max_count;

    // Points are stored in insertion order, so the oldest are the first rows.
    std::vector<int> keep(static_cast<size_t>(max_count));
    std::iota(keep.begin(), keep.end(), drop);

    // The dropped points' belief contribution lives in the prior +
    // accumulator joint; marginalize it onto the survivors, then split the
    // marginal into a fresh prior and a residual accumulator.
    InfoGaussian prior_unary;
    const auto& pf = graph_.factor(prior_factor_);
    if (pf.scope.size() == 1) {
        prior_unary = pf.value;
    } else {
        prior_unary = graph_.message_to_variable(prior_factor_, block_.u_variable);
        if (prior_unary.dim() != m) prior_unary = InfoGaussian::zero(m);
    }
    const InfoGaussian joint = product(prior_unary, block_.accumulator);
    const InfoGaussian marginal = marginalize(joint, keep, config_.jitter);

    Eigen::MatrixXd z_keep(max_count, block_.z.cols());
    std::vector<long> ts_keep;
    for (int i = 0; i < max_count; ++i) {
        z_keep.row(i) = block_.z.row(keep[static_cast<size_t>(i)]);
        ts_keep.push_back(block_.timestamps[static_cast<size_t>(keep[static_cast<size_t>(i)])]);
    }
    block_.z = z_keep;
    block_.timestamps = ts_keep;

    const InfoGaussian fresh_prior = gp_prior_factor(block_.z, kernel_, config_.jitter);
    block_.accumulator = quotient(marginal, fresh_prior);

    graph_.resize_variable(block_.u_variable, max_count);
    if (graph_.factor(prior_factor_).scope.size() == 1) {
        graph_.set_factor_value(prior_factor_, fresh_prior);
    }
    sync_accumulator_factor();
    rebuild_observation_factors();
    update_local();
}

void SparseGpModel::refresh_factors() {
    if (graph_.factor(prior_factor_).scope.size() == 1) {
        graph_.set_factor_value(prior_factor_, gp_prior_factor(block_.z, kernel_, config_.jitter));
    }
    rebuild_observation_factors();
    update_local();
}

void SparseGpModel::update_local(double damping) {
    for (NodeId fid : graph_.factor_ids()) {
        graph_.update_factor(fid, damping, config_.jitter);
    }
}

MomentGaussian SparseGpModel::belief_moments() const {
    return graph_.belief_moments(block_.u_variable, config_.jitter);
}

MomentGaussian SparseGpModel::predict(const Eigen::VectorXd& xstar) const {
    return fitc_predict(xstar, block_.z, belief_moments(), kernel_, config_.jitter);
}

bool SparseGpModel::hyper_step(double step_size, double max_step_norm) {
    if (retained_.empty()) return false;
    for (bool b : retained_binary_) {
        if (b) return false;  // continuous-likelihood objective only
    }
    Eigen::MatrixXd x(retained_.size(), block_.z.cols());
    Eigen::VectorXd y(retained_.size());
    for (size_t i = 0; i < retained_.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = retained_[i].x.transpose();
        y(static_cast<Eigen::Index>(i)) = retained_[i].y;
    }

    const FitcObjective before =
        fitc_log_marginal(x, y, block_.z, kernel_, noise_, config_.jitter);
    Eigen::VectorXd step = step_size * before.gradient;
    const double norm = step.norm();
    if (norm == 0.0) return false;
    if (norm > max_step_norm) step *= max_step_norm / norm;

    const Eigen::VectorXd kernel_params = kernel_.params();
    const double log_sigma = noise_.log_sigma;
    kernel_.set_params(kernel_params + step.head(kernel_.n_params()));
    noise_.log_sigma = log_sigma + step(kernel_.n_params());

    const FitcObjective after =
        fitc_log_marginal(x, y, block_.z, kernel_, noise_, config_.jitter);
    if (after.value < before.value) {
        kernel_.set_params(kernel_params);
        noise_.log_sigma = log_sigma;
        return false;
    }
    refresh_factors();
    return true;
}

}  // namespace gbpmap
