#include "sceneminer/gp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "sceneminer/errors.hpp"

namespace sceneminer {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(-z)) without overflow.
double softplus_neg(double z) {
    if (z > 0.0) return std::log1p(std::exp(-z));
    return -z + std::log1p(std::exp(z));
}

// Physicists' Gauss-Hermite rule, 32 points, from the Jacobi matrix.
// Weights are normalized so that sum w_i = 1 for direct use against a
// standard normal after the t = mu + sqrt(2) sigma x substitution.
struct GhRule {
    VectorXd nodes;
    VectorXd weights;
};

const GhRule& gauss_hermite_32() {
    static const GhRule rule = [] {
        const int n = 32;
        MatrixXd J = MatrixXd::Zero(n, n);
        for (int i = 1; i < n; ++i) {
            J(i, i - 1) = std::sqrt(i / 2.0);
            J(i - 1, i) = J(i, i - 1);
        }
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
        GhRule r;
        r.nodes = es.eigenvalues();
        r.weights.resize(n);
        for (int i = 0; i < n; ++i) {
            const double v0 = es.eigenvectors()(0, i);
            r.weights(i) = v0 * v0;
        }
        return r;
    }();
    return rule;
}

}  // namespace

double logistic_gauss_integral(double mu, double sigma) {
    const GhRule& gh = gauss_hermite_32();
    const double s = std::sqrt(2.0) * sigma;
    double p = 0.0;
    for (int i = 0; i < gh.nodes.size(); ++i)
        p += gh.weights(i) * sigmoid(mu + s * gh.nodes(i));
    return std::clamp(p, 1e-300, 1.0 - 1.1e-16);
}

void KernelSpec::validate(int dim) const {
    if (!(signal_sigma > 0.0) || !std::isfinite(signal_sigma))
        throw DataError("KernelSpec: signal_sigma must be positive");
    if (noise_sigma < 0.0 || !std::isfinite(noise_sigma))
        throw DataError("KernelSpec: noise_sigma must be >= 0");
    const std::size_t expected = kind == KernelKind::RBF ? 1 : static_cast<std::size_t>(dim);
    if (length_scales.size() != expected)
        throw DataError("KernelSpec: expected " + std::to_string(expected) +
                        " length scale(s), got " + std::to_string(length_scales.size()));
    for (double l : length_scales)
        if (!(l > 0.0) || !std::isfinite(l))
            throw DataError("KernelSpec: length scales must be positive");
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const MatrixXd& A, const MatrixXd& B) {
    if (A.cols() != B.cols())
        throw DataError("kernel_matrix: feature dimension mismatch");
    spec.validate(static_cast<int>(A.cols()));

    const int dim = static_cast<int>(A.cols());
    VectorXd inv_l2(dim);
    for (int d = 0; d < dim; ++d) {
        const double l = spec.kind == KernelKind::RBF ? spec.length_scales[0]
                                                      : spec.length_scales[d];
        inv_l2(d) = 1.0 / (l * l);
    }

    const double s2 = spec.signal_sigma * spec.signal_sigma;
    MatrixXd K(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = 0; j < B.rows(); ++j) {
            double q = 0.0;
            for (int d = 0; d < dim; ++d) {
                const double diff = A(i, d) - B(j, d);
                q += diff * diff * inv_l2(d);
            }
            K(i, j) = s2 * std::exp(-0.5 * q);
        }
    }
    return K;
}

Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(MatrixXd M, double scale) {
    double jitter = 0.0;
    for (int attempt = 0; attempt <= 7; ++attempt) {
        MatrixXd Mj = M;
        if (jitter > 0.0) Mj.diagonal().array() += jitter;
        Eigen::LLT<MatrixXd> llt(Mj);
        if (llt.info() == Eigen::Success) return llt;
        jitter = 1e-10 * scale * std::pow(10.0, attempt);
    }
    throw NumericalError("cholesky_with_jitter: matrix not positive definite after max jitter");
}

namespace {

struct LaplaceFit {
    VectorXd f;        // posterior mode
    VectorXd pi;       // sigmoid(f)
    VectorXd w;        // pi (1 - pi)
    VectorXd sqrt_w;
    VectorXd a;        // grad log p(y|f) at the mode
    MatrixXd L;        // chol of B = I + W^1/2 K W^1/2
    double log_z = 0.0;
};

double log_lik(const VectorXd& y, const VectorXd& f) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) ll -= softplus_neg(y(i) * f(i));
    return ll;
}

// Newton iteration on the log posterior with halving steps whenever the
// objective would drop; converges when the mode moves < 1e-8.
LaplaceFit run_laplace(const MatrixXd& K, const VectorXd& y, VectorXd f0) {
    const Eigen::Index n = y.size();
    VectorXd f = f0.size() == n ? f0 : VectorXd::Zero(n);
    VectorXd a = VectorXd::Zero(n);
    if (f0.size() == n) {
        // consistent a for the warm start: a = K^-1 f via one solve
        Eigen::LLT<MatrixXd> kf = cholesky_with_jitter(K, K.diagonal().maxCoeff());
        a = kf.solve(f);
    }
    double psi = log_lik(y, f) - 0.5 * a.dot(f);

    LaplaceFit out;
    for (int iter = 0; iter < 100; ++iter) {
        VectorXd pi(n), w(n), sw(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            pi(i) = sigmoid(f(i));
            w(i) = std::max(pi(i) * (1.0 - pi(i)), 0.0);
            sw(i) = std::sqrt(w(i));
        }
        MatrixXd B = MatrixXd::Identity(n, n);
        B.noalias() += sw.asDiagonal() * K * sw.asDiagonal();
        Eigen::LLT<MatrixXd> llt = cholesky_with_jitter(B, 1.0);

        VectorXd t = (y.array() + 1.0) / 2.0;
        VectorXd grad = t - pi;
        VectorXd b = w.cwiseProduct(f) + grad;
        VectorXd a_new = b - sw.cwiseProduct(llt.solve(sw.cwiseProduct(K * b)));

        // step halving in a-space keeps f = K a consistent
        VectorXd f_new = K * a_new;
        double psi_new = log_lik(y, f_new) - 0.5 * a_new.dot(f_new);
        for (int h = 0; h < 30 && !(psi_new >= psi - 1e-12); ++h) {
            a_new = 0.5 * (a + a_new);
            f_new = K * a_new;
            psi_new = log_lik(y, f_new) - 0.5 * a_new.dot(f_new);
        }
        if (!std::isfinite(psi_new))
            throw NumericalError("laplace: non-finite posterior objective");

        const double delta = (f_new - f).lpNorm<Eigen::Infinity>();
        f = f_new;
        a = a_new;
        psi = psi_new;
        if (delta < 1e-8) break;
    }

    out.f = f;
    out.pi.resize(n);
    out.w.resize(n);
    out.sqrt_w.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.pi(i) = sigmoid(f(i));
        out.w(i) = std::max(out.pi(i) * (1.0 - out.pi(i)), 0.0);
        out.sqrt_w(i) = std::sqrt(out.w(i));
    }
    VectorXd t = (y.array() + 1.0) / 2.0;
    out.a = t - out.pi;

    MatrixXd B = MatrixXd::Identity(n, n);
    B.noalias() += out.sqrt_w.asDiagonal() * K * out.sqrt_w.asDiagonal();
    Eigen::LLT<MatrixXd> llt = cholesky_with_jitter(B, 1.0);
    out.L = llt.matrixL();
    out.log_z = -0.5 * out.a.dot(out.f) + log_lik(y, out.f) -
                out.L.diagonal().array().log().sum();
    return out;
}

// Hyperparameter layout: [log sigma, log l_1 .. log l_D] plus log noise
// for regression.
VectorXd spec_to_log_params(const KernelSpec& spec, bool with_noise) {
    VectorXd x(1 + spec.length_scales.size() + (with_noise ? 1 : 0));
    x(0) = std::log(spec.signal_sigma);
    for (std::size_t d = 0; d < spec.length_scales.size(); ++d)
        x(1 + d) = std::log(spec.length_scales[d]);
    if (with_noise) x(x.size() - 1) = std::log(std::max(spec.noise_sigma, 1e-8));
    return x;
}

KernelSpec log_params_to_spec(const KernelSpec& tmpl, const VectorXd& x, bool with_noise) {
    KernelSpec spec = tmpl;
    spec.signal_sigma = std::exp(x(0));
    for (std::size_t d = 0; d < spec.length_scales.size(); ++d)
        spec.length_scales[d] = std::exp(x(1 + d));
    if (with_noise) spec.noise_sigma = std::exp(x(x.size() - 1));
    return spec;
}

// dK/d(log l_d) = K .* Q_d with Q_d(i,j) = (x_id - x_jd)^2 / l_d^2; RBF
// folds all dimensions into the single shared scale.
MatrixXd scaled_sqdist(const MatrixXd& X, const KernelSpec& spec, int which) {
    const Eigen::Index n = X.rows();
    MatrixXd Q = MatrixXd::Zero(n, n);
    if (spec.kind == KernelKind::RBF) {
        const double inv_l2 = 1.0 / (spec.length_scales[0] * spec.length_scales[0]);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                Q(i, j) = (X.row(i) - X.row(j)).squaredNorm() * inv_l2;
    } else {
        const double inv_l2 = 1.0 / (spec.length_scales[which] * spec.length_scales[which]);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) {
                const double diff = X(i, which) - X(j, which);
                Q(i, j) = diff * diff * inv_l2;
            }
    }
    return Q;
}

// Gradient of the Laplace-approximate log marginal likelihood at a fitted
// mode, over [log sigma, log l_1..log l_D]. Explicit terms plus the
// implicit dependence of the mode on the hyperparameters.
VectorXd laplace_marglik_gradient(const MatrixXd& K, const MatrixXd& X,
                                  const KernelSpec& spec, const LaplaceFit& fit) {
    const Eigen::Index n = X.rows();
    MatrixXd Linv_sw = fit.L.triangularView<Eigen::Lower>().solve(
        MatrixXd(fit.sqrt_w.asDiagonal()));
    MatrixXd R = Linv_sw.transpose() * Linv_sw;  // W^1/2 B^-1 W^1/2
    MatrixXd C = fit.L.triangularView<Eigen::Lower>().solve(
        MatrixXd(fit.sqrt_w.asDiagonal()) * K);

    VectorXd post_var = K.diagonal();
    for (Eigen::Index i = 0; i < n; ++i) post_var(i) -= C.col(i).squaredNorm();
    VectorXd d3(n);
    for (Eigen::Index i = 0; i < n; ++i)
        d3(i) = -fit.pi(i) * (1.0 - fit.pi(i)) * (1.0 - 2.0 * fit.pi(i));
    VectorXd s2 = -0.5 * post_var.cwiseProduct(d3);

    const int n_params = 1 + static_cast<int>(spec.length_scales.size());
    VectorXd grad(n_params);
    for (int j = 0; j < n_params; ++j) {
        MatrixXd Cj = j == 0 ? MatrixXd(2.0 * K)
                             : MatrixXd(K.cwiseProduct(scaled_sqdist(X, spec, j - 1)));
        const double s1 = 0.5 * fit.a.dot(Cj * fit.a) - 0.5 * R.cwiseProduct(Cj).sum();
        VectorXd b = Cj * fit.a;
        VectorXd s3 = b - K * (R * b);
        grad(j) = s1 + s2.dot(s3);
    }
    return grad;
}

// Generic Polak-Ribiere CG with Armijo backtracking; eval must return the
// objective (possibly +inf) and fill the gradient. Returns the best point.
struct CgResult {
    VectorXd x;
    double fx = kInf;
};

template <typename Eval>
CgResult cg_minimize(VectorXd x, Eval eval, int max_iter = 100, double grad_tol = 1e-5) {
    VectorXd g(x.size());
    double fx = eval(x, g);
    if (!std::isfinite(fx))
        throw NumericalError(
            "hyperparameter optimization: objective not finite at the initial "
            "point; rescale the initial kernel parameters");

    CgResult best{x, fx};
    VectorXd d = -g;
    for (int iter = 0; iter < max_iter; ++iter) {
        if (g.lpNorm<Eigen::Infinity>() < grad_tol) break;
        if (d.dot(g) >= 0.0) d = -g;

        double step = 1.0 / std::max(1.0, d.lpNorm<Eigen::Infinity>());
        const double slope = d.dot(g);
        VectorXd x_new(x.size()), g_new(x.size());
        double f_new = kInf;
        bool accepted = false;
        for (int h = 0; h < 40; ++h) {
            x_new = x + step * d;
            f_new = eval(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        const double denom = g.squaredNorm();
        const double beta =
            denom > 0.0 ? std::max(0.0, g_new.dot(g_new - g) / denom) : 0.0;
        x = x_new;
        fx = f_new;
        d = -g_new + beta * d;
        g = g_new;
        if (fx < best.fx) best = {x, fx};
    }
    return best;
}

}  // namespace

double classification_log_marginal(const MatrixXd& X, const VectorXd& y,
                                   const KernelSpec& kernel, VectorXd* grad) {
    kernel.validate(static_cast<int>(X.cols()));
    const MatrixXd K = kernel_matrix(kernel, X, X);
    const LaplaceFit fit = run_laplace(K, y, VectorXd());
    if (grad != nullptr) *grad = laplace_marglik_gradient(K, X, kernel, fit);
    return fit.log_z;
}

KernelSpec optimize_hyperparams(const MatrixXd& X, const VectorXd& y,
                                const KernelSpec& init) {
    init.validate(static_cast<int>(X.cols()));

    VectorXd f_warm;  // mode carried across evaluations
    auto eval = [&](const VectorXd& lp, VectorXd& grad) -> double {
        grad.setZero(lp.size());
        KernelSpec spec = log_params_to_spec(init, lp, false);
        try {
            const MatrixXd K = kernel_matrix(spec, X, X);
            const LaplaceFit fit = run_laplace(K, y, f_warm);
            f_warm = fit.f;
            grad = -laplace_marglik_gradient(K, X, spec, fit);
            return -fit.log_z;
        } catch (const NumericalError&) {
            return kInf;
        }
    };

    CgResult best = cg_minimize(spec_to_log_params(init, false), eval);
    return log_params_to_spec(init, best.x, false);
}

GpBinaryClassifier GpBinaryClassifier::fit(const MatrixXd& X, const VectorXd& y,
                                           const KernelSpec& kernel) {
    if (X.rows() != y.size() || X.rows() == 0)
        throw DataError("GpBinaryClassifier: shape mismatch or empty training set");
    bool has_pos = false, has_neg = false;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y(i) == 1.0) has_pos = true;
        else if (y(i) == -1.0) has_neg = true;
        else throw DataError("GpBinaryClassifier: labels must be -1 or +1");
    }
    if (!has_pos || !has_neg)
        throw DataError("GpBinaryClassifier: need at least one example of each class");
    kernel.validate(static_cast<int>(X.cols()));

    GpBinaryClassifier clf;
    clf.x_ = X;
    clf.y_ = y;
    clf.kernel_ = kernel;
    clf.k_ = kernel_matrix(kernel, X, X);
    LaplaceFit fit = run_laplace(clf.k_, y, VectorXd());
    clf.f_tilde_ = fit.f;
    clf.finalize();
    return clf;
}

GpBinaryClassifier GpBinaryClassifier::from_mode(const MatrixXd& X, const VectorXd& y,
                                                 const KernelSpec& kernel,
                                                 const VectorXd& f_tilde) {
    if (X.rows() != y.size() || X.rows() != f_tilde.size())
        throw DataError("GpBinaryClassifier: stored mode shape mismatch");
    GpBinaryClassifier clf;
    clf.x_ = X;
    clf.y_ = y;
    clf.kernel_ = kernel;
    clf.k_ = kernel_matrix(kernel, X, X);
    clf.f_tilde_ = f_tilde;
    clf.finalize();
    return clf;
}

void GpBinaryClassifier::finalize() {
    const Eigen::Index n = f_tilde_.size();
    w_.resize(n);
    sqrt_w_.resize(n);
    grad_ll_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double pi = sigmoid(f_tilde_(i));
        w_(i) = std::max(pi * (1.0 - pi), 0.0);
        sqrt_w_(i) = std::sqrt(w_(i));
        grad_ll_(i) = (y_(i) + 1.0) / 2.0 - pi;
    }
    MatrixXd B = MatrixXd::Identity(n, n);
    B.noalias() += sqrt_w_.asDiagonal() * k_ * sqrt_w_.asDiagonal();
    l_ = cholesky_with_jitter(B, 1.0).matrixL();
    log_marginal_ = -0.5 * grad_ll_.dot(f_tilde_) + log_lik(y_, f_tilde_) -
                    l_.diagonal().array().log().sum();
}

GpBinaryClassifier::Prediction GpBinaryClassifier::predict(const VectorXd& x) const {
    if (x.size() != x_.cols())
        throw DataError("GpBinaryClassifier::predict: feature dimension mismatch");
    const MatrixXd ks = kernel_matrix(kernel_, x_, x.transpose());
    const double kss = kernel_.signal_sigma * kernel_.signal_sigma;

    Prediction pred;
    pred.mu = ks.col(0).dot(grad_ll_);
    VectorXd v = l_.triangularView<Eigen::Lower>().solve(sqrt_w_.cwiseProduct(ks.col(0)));
    double s2 = kss - v.squaredNorm();
    if (s2 < -1e-9)
        throw NumericalError("GpBinaryClassifier::predict: negative predictive variance");
    s2 = std::max(s2, 0.0);
    pred.sigma = std::sqrt(s2);
    pred.p_plus = logistic_gauss_integral(pred.mu, pred.sigma);
    return pred;
}

GpMulticlass GpMulticlass::train(const MatrixXd& X, const std::vector<int>& labels,
                                 const KernelSpec& init, bool optimize) {
    if (static_cast<Eigen::Index>(labels.size()) != X.rows())
        throw DataError("GpMulticlass: label count mismatch");
    std::vector<int> classes(labels);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    if (classes.size() < 2) throw DataError("GpMulticlass: need at least 2 classes");

    GpMulticlass mc;
    mc.classes_ = classes;
    for (int cls : classes) {
        VectorXd y(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            y(i) = labels[i] == cls ? 1.0 : -1.0;
        KernelSpec spec = optimize ? optimize_hyperparams(X, y, init) : init;
        mc.binaries_.push_back(GpBinaryClassifier::fit(X, y, spec));
    }
    return mc;
}

GpMulticlass GpMulticlass::from_parts(std::vector<int> classes,
                                      std::vector<GpBinaryClassifier> binaries) {
    if (classes.size() != binaries.size() || classes.size() < 2)
        throw DataError("GpMulticlass: inconsistent parts");
    GpMulticlass mc;
    mc.classes_ = std::move(classes);
    mc.binaries_ = std::move(binaries);
    return mc;
}

Eigen::VectorXd GpMulticlass::predict(const VectorXd& x) const {
    VectorXd p(binaries_.size());
    for (std::size_t i = 0; i < binaries_.size(); ++i)
        p(i) = binaries_[i].predict(x).p_plus;
    return p / p.sum();
}

int GpMulticlass::predict_class(const VectorXd& x) const {
    const VectorXd p = predict(x);
    Eigen::Index best = 0;
    p.maxCoeff(&best);
    return classes_[best];
}

GpRegressor GpRegressor::fit(const MatrixXd& X, const VectorXd& targets,
                             const KernelSpec& kernel) {
    if (X.rows() != targets.size() || X.rows() == 0)
        throw DataError("GpRegressor: shape mismatch or empty training set");
    kernel.validate(static_cast<int>(X.cols()));

    GpRegressor reg;
    reg.x_ = X;
    reg.t_ = targets;
    reg.kernel_ = kernel;
    MatrixXd Ky = kernel_matrix(kernel, X, X);
    Ky.diagonal().array() += kernel.noise_sigma * kernel.noise_sigma;
    const double scale = kernel.signal_sigma * kernel.signal_sigma;
    Eigen::LLT<MatrixXd> llt = cholesky_with_jitter(Ky, scale);
    reg.l_ = llt.matrixL();
    reg.alpha_ = llt.solve(targets);
    reg.log_marginal_ = -0.5 * targets.dot(reg.alpha_) -
                        reg.l_.diagonal().array().log().sum() -
                        0.5 * static_cast<double>(X.rows()) * std::log(2.0 * M_PI);
    return reg;
}

GpRegressor::Prediction GpRegressor::predict(const VectorXd& x) const {
    if (x.size() != x_.cols())
        throw DataError("GpRegressor::predict: feature dimension mismatch");
    const MatrixXd ks = kernel_matrix(kernel_, x_, x.transpose());
    const double kss = kernel_.signal_sigma * kernel_.signal_sigma;

    Prediction pred;
    pred.mu = ks.col(0).dot(alpha_);
    VectorXd v = l_.triangularView<Eigen::Lower>().solve(ks.col(0));
    double s2 = kss - v.squaredNorm();
    s2 = std::max(s2, 0.0);
    pred.sigma = std::sqrt(s2);
    pred.sigma_obs = std::sqrt(s2 + kernel_.noise_sigma * kernel_.noise_sigma);
    return pred;
}

double regression_log_marginal(const MatrixXd& X, const VectorXd& t,
                               const KernelSpec& kernel, VectorXd* grad) {
    kernel.validate(static_cast<int>(X.cols()));
    const Eigen::Index n = X.rows();
    const MatrixXd K = kernel_matrix(kernel, X, X);
    MatrixXd Ky = K;
    Ky.diagonal().array() += kernel.noise_sigma * kernel.noise_sigma;
    Eigen::LLT<MatrixXd> llt =
        cholesky_with_jitter(Ky, kernel.signal_sigma * kernel.signal_sigma);
    MatrixXd L = llt.matrixL();
    VectorXd alpha = llt.solve(t);
    const double log_ml = -0.5 * t.dot(alpha) - L.diagonal().array().log().sum() -
                          0.5 * n * std::log(2.0 * M_PI);
    if (grad == nullptr) return log_ml;

    MatrixXd Kinv = llt.solve(MatrixXd::Identity(n, n));
    MatrixXd A = alpha * alpha.transpose() - Kinv;

    const int n_params = 2 + static_cast<int>(kernel.length_scales.size());
    grad->resize(n_params);
    (*grad)(0) = 0.5 * A.cwiseProduct(2.0 * K).sum();
    for (std::size_t d = 0; d < kernel.length_scales.size(); ++d) {
        MatrixXd Cj = K.cwiseProduct(scaled_sqdist(X, kernel, static_cast<int>(d)));
        (*grad)(1 + d) = 0.5 * A.cwiseProduct(Cj).sum();
    }
    const double noise2 = kernel.noise_sigma * kernel.noise_sigma;
    (*grad)(n_params - 1) = 0.5 * 2.0 * noise2 * A.trace();
    return log_ml;
}

KernelSpec optimize_regression_hyperparams(const MatrixXd& X, const VectorXd& t,
                                           const KernelSpec& init) {
    init.validate(static_cast<int>(X.cols()));
    auto eval = [&](const VectorXd& lp, VectorXd& grad) -> double {
        grad.setZero(lp.size());
        KernelSpec spec = log_params_to_spec(init, lp, true);
        try {
            VectorXd g;
            const double ml = regression_log_marginal(X, t, spec, &g);
            grad = -g;
            return -ml;
        } catch (const NumericalError&) {
            return kInf;
        }
    };
    CgResult best = cg_minimize(spec_to_log_params(init, true), eval);
    return log_params_to_spec(init, best.x, true);
}

// ---------------------------------------------------------------------------
// model file I/O

namespace {

json kernel_to_json(const KernelSpec& spec) {
    return {{"kind", spec.kind == KernelKind::RBF ? "rbf" : "ard"},
            {"signal_sigma", spec.signal_sigma},
            {"length_scales", spec.length_scales},
            {"noise_sigma", spec.noise_sigma}};
}

KernelSpec kernel_from_json(const json& j) {
    KernelSpec spec;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "rbf") spec.kind = KernelKind::RBF;
    else if (kind == "ard") spec.kind = KernelKind::ARD;
    else throw DataError("kernel_from_json: unknown kernel kind '" + kind + "'");
    spec.signal_sigma = j.at("signal_sigma").get<double>();
    spec.length_scales = j.at("length_scales").get<std::vector<double>>();
    spec.noise_sigma = j.at("noise_sigma").get<double>();
    return spec;
}

json matrix_to_json(const MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

MatrixXd matrix_from_json(const json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    if (rows.empty()) return MatrixXd(0, 0);
    MatrixXd m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size())
            throw DataError("matrix_from_json: ragged rows");
        for (std::size_t c = 0; c < rows[i].size(); ++c) m(i, c) = rows[i][c];
    }
    return m;
}

json vector_to_json(const VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

VectorXd vector_from_json(const json& j) {
    const auto vals = j.get<std::vector<double>>();
    VectorXd v(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) v(i) = vals[i];
    return v;
}

}  // namespace

void save_gp_multiclass(const GpMulticlass& model, const std::string& path,
                        const std::string& config_hash) {
    json binaries = json::array();
    for (const auto& clf : model.binaries()) {
        binaries.push_back({{"kernel", kernel_to_json(clf.kernel())},
                            {"X", matrix_to_json(clf.train_inputs())},
                            {"y", vector_to_json(clf.train_labels())},
                            {"f_tilde", vector_to_json(clf.mode())}});
    }
    json j = {{"schema", "gp/1"},
              {"config_hash", config_hash},
              {"classes", model.classes()},
              {"binaries", binaries}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_gp_multiclass: cannot open " + path);
    f << j.dump() << '\n';
    if (!f) throw DataError("save_gp_multiclass: write failed for " + path);
}

GpMulticlass load_gp_multiclass(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_gp_multiclass: cannot open " + path);
    try {
        json j = json::parse(f);
        if (j.at("schema").get<std::string>() != "gp/1")
            throw DataError("load_gp_multiclass: unsupported schema in " + path);
        auto classes = j.at("classes").get<std::vector<int>>();
        std::vector<GpBinaryClassifier> binaries;
        for (const auto& b : j.at("binaries")) {
            binaries.push_back(GpBinaryClassifier::from_mode(
                matrix_from_json(b.at("X")), vector_from_json(b.at("y")),
                kernel_from_json(b.at("kernel")), vector_from_json(b.at("f_tilde"))));
        }
        return GpMulticlass::from_parts(std::move(classes), std::move(binaries));
    } catch (const json::exception& e) {
        throw DataError("load_gp_multiclass: malformed " + path + ": " + e.what());
    }
}

void save_gp_regressors(const std::vector<GpRegressor>& regressors,
                        const std::vector<int>& target_indices, const std::string& path,
                        const std::string& config_hash) {
    if (regressors.size() != target_indices.size())
        throw DataError("save_gp_regressors: index count mismatch");
    json items = json::array();
    for (std::size_t i = 0; i < regressors.size(); ++i) {
        items.push_back({{"target_index", target_indices[i]},
                         {"kernel", kernel_to_json(regressors[i].kernel())},
                         {"X", matrix_to_json(regressors[i].train_inputs())},
                         {"targets", vector_to_json(regressors[i].train_targets())}});
    }
    json j = {{"schema", "gpr/1"}, {"config_hash", config_hash}, {"regressors", items}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_gp_regressors: cannot open " + path);
    f << j.dump() << '\n';
    if (!f) throw DataError("save_gp_regressors: write failed for " + path);
}

std::vector<GpRegressor> load_gp_regressors(const std::string& path,
                                            std::vector<int>* target_indices) {
    std::ifstream f(path);
    if (!f) throw DataError("load_gp_regressors: cannot open " + path);
    try {
        json j = json::parse(f);
        if (j.at("schema").get<std::string>() != "gpr/1")
            throw DataError("load_gp_regressors: unsupported schema in " + path);
        std::vector<GpRegressor> out;
        if (target_indices) target_indices->clear();
        for (const auto& item : j.at("regressors")) {
            out.push_back(GpRegressor::fit(matrix_from_json(item.at("X")),
                                           vector_from_json(item.at("targets")),
                                           kernel_from_json(item.at("kernel"))));
            if (target_indices)
                target_indices->push_back(item.at("target_index").get<int>());
        }
        return out;
    } catch (const json::exception& e) {
        throw DataError("load_gp_regressors: malformed " + path + ": " + e.what());
    }
}

}  // namespace sceneminer
