#include "gbpmap/kernel.hpp"

#include <utility>

namespace gbpmap {

Kernel::Kernel(KernelPart part) : parts_{std::move(part)} {}

Kernel::Kernel(std::vector<KernelPart> parts) : parts_(std::move(parts)) {
    if (parts_.empty()) throw DimensionMismatch("Kernel: needs at least one part");
}

Kernel Kernel::matern12(double variance, double lengthscale, std::vector<int> dims) {
    KernelPart p;
    p.family = KernelFamily::kMatern12;
    p.log_variance = std::log(variance);
    p.log_lengthscale = std::log(lengthscale);
    p.dims = std::move(dims);
    return Kernel(p);
}

Kernel Kernel::squared_exponential(double variance, double lengthscale, std::vector<int> dims) {
    KernelPart p;
    p.family = KernelFamily::kSquaredExponential;
    p.log_variance = std::log(variance);
    p.log_lengthscale = std::log(lengthscale);
    p.dims = std::move(dims);
    return Kernel(p);
}

double Kernel::slice_distance(const KernelPart& part, const Eigen::VectorXd& xa,
                              const Eigen::VectorXd& xb) const {
    if (xa.size() != xb.size()) {
        throw DimensionMismatch("Kernel::eval: point dims " + std::to_string(xa.size()) +
                                " vs " + std::to_string(xb.size()));
    }
    if (part.dims.empty()) return (xa - xb).norm();
    double sq = 0.0;
    for (int d : part.dims) {
        if (d < 0 || d >= xa.size()) {
            throw DimensionMismatch("Kernel: slice dim " + std::to_string(d) +
                                    " out of range for input dim " + std::to_string(xa.size()));
        }
        const double diff = xa(d) - xb(d);
        sq += diff * diff;
    }
    return std::sqrt(sq);
}

double Kernel::part_eval(const KernelPart& part, const Eigen::VectorXd& xa,
                         const Eigen::VectorXd& xb) const {
    const double r = slice_distance(part, xa, xb);
    const double ell = part.lengthscale();
    switch (part.family) {
        case KernelFamily::kMatern12:
            return part.variance() * std::exp(-r / ell);
        case KernelFamily::kSquaredExponential:
            return part.variance() * std::exp(-0.5 * r * r / (ell * ell));
    }
    return 0.0;
}

double Kernel::eval(const Eigen::VectorXd& xa, const Eigen::VectorXd& xb) const {
    double v = 1.0;
    for (const auto& part : parts_) v *= part_eval(part, xa, xb);
    return v;
}

double Kernel::variance() const {
    double v = 1.0;
    for (const auto& part : parts_) v *= part.variance();
    return v;
}

Eigen::MatrixXd Kernel::gram(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x2) const {
    if (x.cols() != x2.cols()) {
        throw DimensionMismatch("Kernel::gram: input dims " + std::to_string(x.cols()) +
                                " vs " + std::to_string(x2.cols()));
    }
    Eigen::MatrixXd k(x.rows(), x2.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x2.rows(); ++j) {
            k(i, j) = eval(x.row(i), x2.row(j));
        }
    }
    return k;
}

std::vector<Eigen::MatrixXd> Kernel::gram_grad(const Eigen::MatrixXd& x) const {
    return gram_grad(x, x);
}

std::vector<Eigen::MatrixXd> Kernel::gram_grad(const Eigen::MatrixXd& x,
                                               const Eigen::MatrixXd& x2) const {
    const Eigen::Index n = x.rows();
    const Eigen::Index n2 = x2.rows();
    const size_t np = parts_.size();

    // Per-part gram and the d/d(log ell) factor, combined below so that
    // product-kernel gradients never divide by a (possibly zero) part value.
    std::vector<Eigen::MatrixXd> part_gram(np), part_dlogell(np);
    for (size_t p = 0; p < np; ++p) {
        const auto& part = parts_[p];
        const double ell = part.lengthscale();
        part_gram[p].resize(n, n2);
        part_dlogell[p].resize(n, n2);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n2; ++j) {
                const double r = slice_distance(part, x.row(i), x2.row(j));
                const double v = part_eval(part, x.row(i), x2.row(j));
                part_gram[p](i, j) = v;
                // Matern-1/2 lengthscale gradient at r=0 is defined as 0,
                // the limit of the closed form.
                if (part.family == KernelFamily::kMatern12) {
                    part_dlogell[p](i, j) = v * (r / ell);
                } else {
                    part_dlogell[p](i, j) = v * (r * r) / (ell * ell);
                }
            }
        }
    }

    std::vector<Eigen::MatrixXd> grads;
    grads.reserve(2 * np);
    for (size_t p = 0; p < np; ++p) {
        Eigen::MatrixXd rest = Eigen::MatrixXd::Ones(n, n2);
        for (size_t q = 0; q < np; ++q) {
            if (q != p) rest = rest.cwiseProduct(part_gram[q]);
        }
        grads.push_back(rest.cwiseProduct(part_gram[p]));      // d/d log variance = K
        grads.push_back(rest.cwiseProduct(part_dlogell[p]));   // d/d log lengthscale
    }
    return grads;
}

Eigen::VectorXd Kernel::params() const {
    Eigen::VectorXd p(n_params());
    for (size_t i = 0; i < parts_.size(); ++i) {
        p(2 * static_cast<Eigen::Index>(i)) = parts_[i].log_variance;
        p(2 * static_cast<Eigen::Index>(i) + 1) = parts_[i].log_lengthscale;
    }
    return p;
}

void Kernel::set_params(const Eigen::VectorXd& p) {
    if (p.size() != n_params()) {
        throw DimensionMismatch("Kernel::set_params: got " + std::to_string(p.size()) +
                                ", expected " + std::to_string(n_params()));
    }
    for (size_t i = 0; i < parts_.size(); ++i) {
        parts_[i].log_variance = p(2 * static_cast<Eigen::Index>(i));
        parts_[i].log_lengthscale = p(2 * static_cast<Eigen::Index>(i) + 1);
    }
}

std::vector<std::string> Kernel::param_names() const {
    std::vector<std::string> names;
    for (size_t i = 0; i < parts_.size(); ++i) {
        const std::string prefix =
            parts_.size() == 1 ? std::string() : "part" + std::to_string(i) + ".";
        names.push_back(prefix + "log_variance");
        names.push_back(prefix + "log_lengthscale");
    }
    return names;
}

NoiseModel NoiseModel::from_sigma(double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("noise sigma must be positive");
    NoiseModel n;
    n.log_sigma = std::log(sigma);
    return n;
}

}  // namespace gbpmap
