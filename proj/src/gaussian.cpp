#include "gbpmap/gaussian.hpp"

#include <cmath>
#include <string>

namespace gbpmap {

namespace {

void check_square(const Eigen::VectorXd& eta, const Eigen::MatrixXd& lambda) {
    if (lambda.rows() != lambda.cols() || lambda.rows() != eta.size()) {
        throw DimensionMismatch("InfoGaussian: eta length " + std::to_string(eta.size()) +
                                " vs lambda " + std::to_string(lambda.rows()) + "x" +
                                std::to_string(lambda.cols()));
    }
}

bool factorization_ok(const Eigen::LDLT<Eigen::MatrixXd>& ldlt, bool require_positive) {
    if (ldlt.info() != Eigen::Success) return false;
    const Eigen::VectorXd d = ldlt.vectorD();
    if (require_positive && d.minCoeff() <= 0.0) return false;
    const double dmin_abs = d.cwiseAbs().minCoeff();
    const double dmax_abs = d.cwiseAbs().maxCoeff();
    return dmin_abs > 0.0 && dmax_abs / dmin_abs <= kMaxCondition;
}

// Jitter is applied on demand: the plain factorization is preferred so that
// well-conditioned solves stay exact, and eps_j * I rescues near-singular
// cases (e.g. GP conditionals with near-coincident inputs).
Eigen::LDLT<Eigen::MatrixXd> factorize(const Eigen::MatrixXd& a, double jitter,
                                       bool require_positive) {
    const Eigen::MatrixXd as = symmetrized(a);
    if (as.size() == 0 || as.cwiseAbs().maxCoeff() == 0.0) {
        throw SingularPrecision("zero matrix has no factorization");
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(as);
    if (factorization_ok(ldlt, require_positive)) return ldlt;
    if (jitter > 0.0) {
        Eigen::MatrixXd aj = as;
        aj.diagonal().array() += jitter;
        ldlt.compute(aj);
        if (factorization_ok(ldlt, require_positive)) return ldlt;
    }
    throw SingularPrecision("conditioning exceeds threshold after jitter");
}

}  // namespace

InfoGaussian::InfoGaussian(Eigen::VectorXd eta_in, Eigen::MatrixXd lambda_in)
    : eta(std::move(eta_in)), lambda(std::move(lambda_in)) {
    check_square(eta, lambda);
}

InfoGaussian InfoGaussian::zero(int dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::MatrixXd::Zero(dim, dim)};
}

bool InfoGaussian::is_zero(double tol) const {
    if (dim() == 0) return true;
    return eta.cwiseAbs().maxCoeff() <= tol && lambda.cwiseAbs().maxCoeff() <= tol;
}

InfoGaussian& InfoGaussian::operator+=(const InfoGaussian& other) {
    if (dim() != other.dim()) {
        throw DimensionMismatch("InfoGaussian product: dim " + std::to_string(dim()) +
                                " vs " + std::to_string(other.dim()));
    }
    eta += other.eta;
    lambda += other.lambda;
    return *this;
}

InfoGaussian product(const InfoGaussian& a, const InfoGaussian& b) {
    InfoGaussian out = a;
    out += b;
    return out;
}

InfoGaussian quotient(const InfoGaussian& a, const InfoGaussian& b) {
    if (a.dim() != b.dim()) {
        throw DimensionMismatch("InfoGaussian quotient: dim " + std::to_string(a.dim()) +
                                " vs " + std::to_string(b.dim()));
    }
    return {a.eta - b.eta, a.lambda - b.lambda};
}

MomentGaussian to_moments(const InfoGaussian& g, double jitter) {
    check_square(g.eta, g.lambda);
    const auto ldlt = factorize(g.lambda, jitter, /*require_positive=*/true);
    MomentGaussian m;
    m.sigma = symmetrized(ldlt.solve(Eigen::MatrixXd::Identity(g.dim(), g.dim())));
    m.mu = ldlt.solve(g.eta);
    return m;
}

InfoGaussian to_information(const MomentGaussian& m, double jitter) {
    check_square(m.mu, m.sigma);
    const auto ldlt = factorize(m.sigma, jitter, /*require_positive=*/true);
    InfoGaussian g;
    g.lambda = symmetrized(ldlt.solve(Eigen::MatrixXd::Identity(m.dim(), m.dim())));
    g.eta = ldlt.solve(m.mu);
    return g;
}

InfoGaussian marginalize(const InfoGaussian& g, const std::vector<int>& keep, double jitter) {
    const int d = g.dim();
    std::vector<bool> kept(static_cast<size_t>(d), false);
    for (int i : keep) {
        if (i < 0 || i >= d) throw DimensionMismatch("marginalize: keep index out of range");
        kept[static_cast<size_t>(i)] = true;
    }
    std::vector<int> elim;
    elim.reserve(static_cast<size_t>(d) - keep.size());
    for (int i = 0; i < d; ++i) {
        if (!kept[static_cast<size_t>(i)]) elim.push_back(i);
    }
    if (elim.empty()) return g;

    const int nk = static_cast<int>(keep.size());
    const int ne = static_cast<int>(elim.size());
    Eigen::VectorXd eta_k(nk), eta_e(ne);
    Eigen::MatrixXd l_kk(nk, nk), l_ke(nk, ne), l_ee(ne, ne);
    for (int r = 0; r < nk; ++r) {
        eta_k(r) = g.eta(keep[static_cast<size_t>(r)]);
        for (int c = 0; c < nk; ++c)
            l_kk(r, c) = g.lambda(keep[static_cast<size_t>(r)], keep[static_cast<size_t>(c)]);
        for (int c = 0; c < ne; ++c)
            l_ke(r, c) = g.lambda(keep[static_cast<size_t>(r)], elim[static_cast<size_t>(c)]);
    }
    for (int r = 0; r < ne; ++r) {
        eta_e(r) = g.eta(elim[static_cast<size_t>(r)]);
        for (int c = 0; c < ne; ++c)
            l_ee(r, c) = g.lambda(elim[static_cast<size_t>(r)], elim[static_cast<size_t>(c)]);
    }

    // Solve against [eta_e | L_ek] in one factorization.
    Eigen::MatrixXd rhs(ne, 1 + nk);
    rhs.col(0) = eta_e;
    rhs.rightCols(nk) = l_ke.transpose();
    const Eigen::MatrixXd sol = sym_solve(l_ee, rhs, jitter);

    InfoGaussian out;
    out.eta = eta_k - l_ke * sol.col(0);
    out.lambda = symmetrized(l_kk - l_ke * sol.rightCols(nk));
    return out;
}

Eigen::MatrixXd spd_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double jitter) {
    return factorize(a, jitter, /*require_positive=*/true).solve(b);
}

Eigen::MatrixXd sym_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double jitter) {
    return factorize(a, jitter, /*require_positive=*/false).solve(b);
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& a, double jitter) {
    return symmetrized(spd_solve(a, Eigen::MatrixXd::Identity(a.rows(), a.cols()), jitter));
}

double spd_logdet(const Eigen::MatrixXd& a, double jitter) {
    const auto ldlt = factorize(a, jitter, /*require_positive=*/true);
    return ldlt.vectorD().array().log().sum();
}

Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& a, double jitter) {
    Eigen::MatrixXd aj = symmetrized(a);
    double eps = jitter;
    for (int attempt = 0; attempt < 7; ++attempt, eps *= 10.0) {
        Eigen::MatrixXd trial = aj;
        trial.diagonal().array() += eps;
        Eigen::LLT<Eigen::MatrixXd> llt(trial);
        if (llt.info() == Eigen::Success) return llt.matrixL();
    }
    throw SingularPrecision("robust_cholesky: matrix far from positive definite");
}

}  // namespace gbpmap
