#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gbpmap/errors.hpp"

namespace gbpmap {

// Default diagonal jitter added before any matrix inversion.
inline constexpr double kDefaultJitter = 1e-8;
// Conditioning threshold beyond which a solve is reported as singular.
inline constexpr double kMaxCondition = 1e14;

struct MomentGaussian {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;

    int dim() const { return static_cast<int>(mu.size()); }
};

/// Gaussian in natural (information) parameters: eta = Sigma^-1 mu,
/// lambda = Sigma^-1. The currency of all factors, messages and beliefs.
/// (eta=0, lambda=0) is the zero-information element, neutral under product.
struct InfoGaussian {
    Eigen::VectorXd eta;
    Eigen::MatrixXd lambda;

    InfoGaussian() = default;
    InfoGaussian(Eigen::VectorXd eta_in, Eigen::MatrixXd lambda_in);

    static InfoGaussian zero(int dim);

    int dim() const { return static_cast<int>(eta.size()); }
    bool is_zero(double tol = 0.0) const;

    /// Adds the other Gaussian's parameters in place (factor product).
    InfoGaussian& operator+=(const InfoGaussian& other);
};

/// Product of two Gaussians: sum of natural parameters.
InfoGaussian product(const InfoGaussian& a, const InfoGaussian& b);

/// Parameter difference a - b (message exclusion / cavity distribution).
InfoGaussian quotient(const InfoGaussian& a, const InfoGaussian& b);

/// Information -> moments. Requires lambda positive definite after jitter.
MomentGaussian to_moments(const InfoGaussian& g, double jitter = kDefaultJitter);

/// Moments -> information. Requires sigma positive definite after jitter.
InfoGaussian to_information(const MomentGaussian& m, double jitter = kDefaultJitter);

/// Marginalizes onto the `keep` indices via the Schur complement:
///   eta'    = eta_k - L_ke L_ee^-1 eta_e
///   lambda' = L_kk - L_ke L_ee^-1 L_ek
/// The eliminated block must be invertible after jitter.
InfoGaussian marginalize(const InfoGaussian& g, const std::vector<int>& keep,
                         double jitter = kDefaultJitter);

// --- numerics helpers ------------------------------------------------------

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) {
    return 0.5 * (m + m.transpose());
}

/// X = (sym(a) + jitter I)^-1 b via LDLT. Requires positive definiteness.
Eigen::MatrixXd spd_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          double jitter = kDefaultJitter);

/// Same solve but tolerates indefinite (yet well-conditioned) matrices,
/// as needed when combining factors with transiently indefinite messages.
Eigen::MatrixXd sym_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          double jitter = kDefaultJitter);

/// Symmetrized inverse computed by factorization, never an explicit inverse.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& a, double jitter = kDefaultJitter);

/// log det(sym(a) + jitter I); throws SingularPrecision if not PD.
double spd_logdet(const Eigen::MatrixXd& a, double jitter = kDefaultJitter);

/// Lower Cholesky factor of sym(a) + jitter I, escalating jitter up to
/// 1e6x if needed (used for sampling, where exactness is not required).
Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& a, double jitter = kDefaultJitter);

}  // namespace gbpmap
