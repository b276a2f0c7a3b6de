#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hopf {

// Returns f(x) and writes df/dx into grad (resized by the callee).
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// One ADAM update of params in place. Throws NumericalFailure on a non-finite gradient.
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads, double lr);

struct OptimizationResult {
    Eigen::VectorXd x;
    double loss = 0.0;
    std::vector<double> trace;  // loss after every executed iteration
    int iterations = 0;
    std::string stop_reason;
};

// Fixed-budget ADAM. trace[k] is the loss after update k+1, so trace.back() == loss of x.
OptimizationResult adam_minimize(const Objective& f, Eigen::VectorXd x0, int iterations, double lr);

struct LbfgsOptions {
    int max_iterations = 100;
    // Trial step of the first iteration along -grad; later iterations use unit steps
    // on the scaled quasi-Newton direction.
    double step_scale = 1.0;
    int memory = 10;
    double gradient_tolerance = 1e-12;
    int max_backtracks = 40;
    double armijo = 1e-4;
};

// Limited-memory BFGS with Armijo backtracking. The loss trace is non-increasing.
OptimizationResult lbfgs_minimize(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& options);

}  // namespace hopf
