#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace optomech2d::detail {

struct LmResult {
    Eigen::VectorXd params;
    double cost{0.0}; // 0.5 * |r|^2
    int iterations{0};
    bool converged{false};
};

// Minimises 0.5 |r(p)|^2. `model(p, r, J)` fills the residual vector and its
// Jacobian. Converged when the largest proposed parameter change falls below
// `tolerance` (parameters are expected to be O(1) or logarithmic). Steps are
// capped at `max_step` in the largest component.
template <class Model>
LmResult levenberg_marquardt(Model&& model, Eigen::VectorXd p, int max_iterations,
                             double tolerance, double max_step = 0.5) {
    Eigen::VectorXd r;
    Eigen::MatrixXd J;
    model(p, r, J);
    double cost = 0.5 * r.squaredNorm();
    double lambda = 1e-3;

    LmResult out;
    for (int it = 1; it <= max_iterations; ++it) {
        out.iterations = it;
        const Eigen::MatrixXd JtJ = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;
        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd A = JtJ;
            for (Eigen::Index k = 0; k < A.rows(); ++k)
                A(k, k) += lambda * std::max(JtJ(k, k), 1e-300);
            Eigen::VectorXd step = A.ldlt().solve(-g);
            if (!step.allFinite()) {
                lambda *= 10.0;
                if (lambda > 1e30) break;
                continue;
            }
            double step_size = step.cwiseAbs().maxCoeff();
            if (step_size > max_step) {
                step *= max_step / step_size;
                step_size = max_step;
            }
            Eigen::VectorXd trial = p + step;
            Eigen::VectorXd r_trial;
            Eigen::MatrixXd J_trial;
            model(trial, r_trial, J_trial);
            const double trial_cost = 0.5 * r_trial.squaredNorm();
            if (std::isfinite(trial_cost) && trial_cost <= cost) {
                p = std::move(trial);
                r = std::move(r_trial);
                J = std::move(J_trial);
                cost = trial_cost;
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
            } else {
                lambda *= 4.0;
            }
            if (step_size < tolerance) {
                out.params = p;
                out.cost = cost;
                out.converged = true;
                return out;
            }
            if (lambda > 1e30) break;
        }
        if (!accepted) break;
    }
    out.params = p;
    out.cost = cost;
    return out;
}

} // namespace optomech2d::detail
