#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "gbpmap/errors.hpp"

namespace gbpmap {

enum class KernelFamily { kMatern12, kSquaredExponential };

/// One stationary base kernel acting on a slice of the input coordinates.
/// Hyperparameters live in log space so gradient steps preserve positivity.
struct KernelPart {
    KernelFamily family = KernelFamily::kMatern12;
    double log_variance = 0.0;     // log sigma_f^2
    double log_lengthscale = 0.0;  // log ell
    std::vector<int> dims;         // input dims this part sees; empty = all

    double variance() const { return std::exp(log_variance); }
    double lengthscale() const { return std::exp(log_lengthscale); }
};

/// Covariance function: a product of base kernels over input subspaces
/// (a single part is the common case). Immutable in spirit: set_params
/// replaces hyperparameters wholesale, nothing else mutates.
class Kernel {
public:
    Kernel() : Kernel(KernelPart{}) {}
    explicit Kernel(KernelPart part);
    explicit Kernel(std::vector<KernelPart> parts);

    static Kernel matern12(double variance, double lengthscale, std::vector<int> dims = {});
    static Kernel squared_exponential(double variance, double lengthscale,
                                      std::vector<int> dims = {});

    const std::vector<KernelPart>& parts() const { return parts_; }

    /// k(xa, xb); product of the component evals on their slices.
    double eval(const Eigen::VectorXd& xa, const Eigen::VectorXd& xb) const;

    /// Variance at any point, i.e. eval(x, x).
    double variance() const;

    /// Gram matrix; rows of X / X2 are points.
    Eigen::MatrixXd gram(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x2) const;

    /// dK/d(log theta_p) for every hyperparameter, ordered as params().
    std::vector<Eigen::MatrixXd> gram_grad(const Eigen::MatrixXd& x) const;
    std::vector<Eigen::MatrixXd> gram_grad(const Eigen::MatrixXd& x,
                                           const Eigen::MatrixXd& x2) const;

    int n_params() const { return 2 * static_cast<int>(parts_.size()); }
    Eigen::VectorXd params() const;
    void set_params(const Eigen::VectorXd& p);
    std::vector<std::string> param_names() const;

private:
    std::vector<KernelPart> parts_;

    double part_eval(const KernelPart& part, const Eigen::VectorXd& xa,
                     const Eigen::VectorXd& xb) const;
    double slice_distance(const KernelPart& part, const Eigen::VectorXd& xa,
                          const Eigen::VectorXd& xb) const;
};

/// Observation noise with sigma > 0 by construction.
struct NoiseModel {
    double log_sigma = std::log(0.1);

    static NoiseModel from_sigma(double sigma);
    double sigma() const { return std::exp(log_sigma); }
    double variance() const { return std::exp(2.0 * log_sigma); }
};

}  // namespace gbpmap
