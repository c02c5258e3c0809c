#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sceneminer {

enum class KernelKind { RBF, ARD };

struct KernelSpec {
    KernelKind kind = KernelKind::RBF;
    double signal_sigma = 1.0;
    std::vector<double> length_scales;  // one entry (RBF) or one per dimension (ARD)
    double noise_sigma = 0.0;           // observation noise, regression only

    void validate(int dim) const;  // throws DataError
};

// k(a, b) = sigma^2 exp(-sum_d (a_d - b_d)^2 / (2 l_d^2)); RBF shares one
// length scale across dimensions.
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B);

// Lower Cholesky of a PSD matrix, escalating diagonal jitter
// 1e-10 * scale * 10^j for j = 0..6 before giving up.
Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(Eigen::MatrixXd M, double scale);

// Binary GP classifier with logistic likelihood and Laplace-approximate
// posterior. Immutable once fitted.
class GpBinaryClassifier {
public:
    // y entries must be -1 or +1, with at least one of each. Newton
    // iteration runs until the mode moves less than 1e-8 (inf norm).
    static GpBinaryClassifier fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  const KernelSpec& kernel);

    // Rebuild the derived caches from a stored mode (model file loading).
    static GpBinaryClassifier from_mode(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                        const KernelSpec& kernel,
                                        const Eigen::VectorXd& f_tilde);

    struct Prediction {
        double p_plus = 0.5;  // strictly inside (0, 1)
        double mu = 0.0;
        double sigma = 0.0;
    };
    Prediction predict(const Eigen::VectorXd& x) const;

    // Laplace approximation of log p(y | X, theta).
    double log_marginal() const { return log_marginal_; }

    const Eigen::VectorXd& mode() const { return f_tilde_; }
    const Eigen::VectorXd& w_diag() const { return w_; }
    const Eigen::MatrixXd& train_inputs() const { return x_; }
    const Eigen::VectorXd& train_labels() const { return y_; }
    const KernelSpec& kernel() const { return kernel_; }

private:
    GpBinaryClassifier() = default;
    void finalize();  // derive W, B-factor, gradient caches from f_tilde_

    Eigen::MatrixXd x_;
    Eigen::VectorXd y_;
    KernelSpec kernel_;
    Eigen::MatrixXd k_;
    Eigen::VectorXd f_tilde_;
    Eigen::VectorXd w_;        // -d^2/df^2 log p(y|f) at the mode, >= 0
    Eigen::VectorXd sqrt_w_;
    Eigen::MatrixXd l_;        // chol of B = I + W^1/2 K W^1/2
    Eigen::VectorXd grad_ll_;  // d/df log p(y|f) at the mode (= K^-1 f_tilde)
    double log_marginal_ = 0.0;
};

// Probability of +1 under a logistic likelihood and latent N(mu, sigma^2),
// by 32-point Gauss-Hermite quadrature.
double logistic_gauss_integral(double mu, double sigma);

// Laplace-approximate log marginal likelihood of a classification problem
// and its gradient with respect to [log sigma, log l_1..log l_D].
double classification_log_marginal(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const KernelSpec& kernel, Eigen::VectorXd* grad);

// Maximizes the Laplace-approximate marginal likelihood over log
// hyperparameters with Polak-Ribiere conjugate gradients and a
// backtracking line search. At most 100 outer iterations, stopping early
// when the gradient inf-norm falls below 1e-5; returns the best spec seen.
KernelSpec optimize_hyperparams(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const KernelSpec& init);

// One-vs-all multiclass wrapper around binary classifiers.
class GpMulticlass {
public:
    static GpMulticlass train(const Eigen::MatrixXd& X, const std::vector<int>& labels,
                              const KernelSpec& init, bool optimize);

    // Normalized per-class probabilities, classes() order.
    Eigen::VectorXd predict(const Eigen::VectorXd& x) const;
    int predict_class(const Eigen::VectorXd& x) const;

    const std::vector<int>& classes() const { return classes_; }
    const std::vector<GpBinaryClassifier>& binaries() const { return binaries_; }

    static GpMulticlass from_parts(std::vector<int> classes,
                                   std::vector<GpBinaryClassifier> binaries);

private:
    std::vector<int> classes_;
    std::vector<GpBinaryClassifier> binaries_;
};

// Exact GP regression with observation noise.
class GpRegressor {
public:
    static GpRegressor fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& targets,
                           const KernelSpec& kernel);

    struct Prediction {
        double mu = 0.0;
        double sigma = 0.0;      // latent predictive std
        double sigma_obs = 0.0;  // sqrt(sigma^2 + noise^2)
    };
    Prediction predict(const Eigen::VectorXd& x) const;

    double log_marginal() const { return log_marginal_; }
    const Eigen::MatrixXd& train_inputs() const { return x_; }
    const Eigen::VectorXd& train_targets() const { return t_; }
    const KernelSpec& kernel() const { return kernel_; }

private:
    GpRegressor() = default;

    Eigen::MatrixXd x_;
    Eigen::VectorXd t_;
    KernelSpec kernel_;
    Eigen::MatrixXd l_;      // chol of K + noise^2 I
    Eigen::VectorXd alpha_;  // (K + noise^2 I)^-1 t
    double log_marginal_ = 0.0;
};

// Exact regression log marginal likelihood and gradient over
// [log sigma, log l_1..log l_D, log noise].
double regression_log_marginal(const Eigen::MatrixXd& X, const Eigen::VectorXd& t,
                               const KernelSpec& kernel, Eigen::VectorXd* grad);

KernelSpec optimize_regression_hyperparams(const Eigen::MatrixXd& X,
                                           const Eigen::VectorXd& t,
                                           const KernelSpec& init);

// Model file I/O (schemas gp/1 and gpr/1).
void save_gp_multiclass(const GpMulticlass& model, const std::string& path,
                        const std::string& config_hash = "");
GpMulticlass load_gp_multiclass(const std::string& path);

void save_gp_regressors(const std::vector<GpRegressor>& regressors,
                        const std::vector<int>& target_indices, const std::string& path,
                        const std::string& config_hash = "");
std::vector<GpRegressor> load_gp_regressors(const std::string& path,
                                            std::vector<int>* target_indices = nullptr);

}  // namespace sceneminer
