#include "hopf/optim.hpp"

#include <cmath>
#include <deque>
#include <string>

#include "hopf/error.hpp"

namespace hopf {

namespace {

void check_finite(const Eigen::VectorXd& grad, double loss, long iteration, const char* who)
{
    if (!grad.allFinite() || !std::isfinite(loss))
        throw Error(ErrorKind::NumericalFailure, std::string(who) + ": non-finite loss or gradient at iteration " +
                                                     std::to_string(iteration));
}

}  // namespace

void adam_step(AdamState& s, Eigen::VectorXd& params, const Eigen::VectorXd& grads, double lr)
{
    require(grads.size() == params.size(), ErrorKind::InvalidArgument, "adam: gradient length mismatch");
    if (!grads.allFinite())
        throw Error(ErrorKind::NumericalFailure,
                    "adam: non-finite gradient at iteration " + std::to_string(s.step + 1));
    if (s.m.size() != params.size()) {
        s.m = Eigen::VectorXd::Zero(params.size());
        s.v = Eigen::VectorXd::Zero(params.size());
        s.step = 0;
    }
    ++s.step;
    s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
    s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseAbs2();
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.epsilon);
}

OptimizationResult adam_minimize(const Objective& f, Eigen::VectorXd x0, int iterations, double lr)
{
    require(iterations >= 0 && lr > 0.0, ErrorKind::InvalidArgument, "adam: bad schedule");
    OptimizationResult out;
    out.x = std::move(x0);
    Eigen::VectorXd grad;
    out.loss = f(out.x, grad);
    check_finite(grad, out.loss, 0, "adam");
    AdamState state;
    out.trace.reserve(static_cast<std::size_t>(iterations));
    for (int k = 0; k < iterations; ++k) {
        adam_step(state, out.x, grad, lr);
        out.loss = f(out.x, grad);
        check_finite(grad, out.loss, k + 1, "adam");
        out.trace.push_back(out.loss);
        ++out.iterations;
    }
    out.stop_reason = "budget";
    return out;
}

OptimizationResult lbfgs_minimize(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& opt)
{
    require(opt.max_iterations >= 0 && opt.step_scale > 0.0 && opt.memory >= 1, ErrorKind::InvalidArgument,
            "lbfgs: bad options");
    OptimizationResult out;
    out.x = std::move(x0);
    Eigen::VectorXd g;
    out.loss = f(out.x, g);
    check_finite(g, out.loss, 0, "lbfgs");

    std::deque<Eigen::VectorXd> s_hist;
    std::deque<Eigen::VectorXd> y_hist;
    std::deque<double> rho_hist;
    out.stop_reason = "budget";

    Eigen::VectorXd x_new;
    Eigen::VectorXd g_new;
    for (int k = 0; k < opt.max_iterations; ++k) {
        if (g.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) {
            out.stop_reason = "gradient tolerance";
            break;
        }
        // two-loop recursion
        Eigen::VectorXd q = g;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t i = s_hist.size(); i-- > 0;) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        double step = 1.0;
        if (s_hist.empty()) {
            step = opt.step_scale;
        } else {
            q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        Eigen::VectorXd dir = -q;
        double slope = g.dot(dir);
        if (!(slope < 0.0)) {
            // lost descent; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -g;
            slope = -g.squaredNorm();
            step = opt.step_scale;
        }

        bool accepted = false;
        double f_new = 0.0;
        for (int bt = 0; bt <= opt.max_backtracks; ++bt) {
            x_new = out.x + step * dir;
            f_new = f(x_new, g_new);
            if (std::isfinite(f_new) && g_new.allFinite() && f_new <= out.loss + opt.armijo * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            out.stop_reason = "line search failed";
            break;
        }

        Eigen::VectorXd s = x_new - out.x;
        Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opt.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        out.x = x_new;
        g = g_new;
        out.loss = f_new;
        out.trace.push_back(out.loss);
        ++out.iterations;
    }
    check_finite(g, out.loss, out.iterations, "lbfgs");
    return out;
}

}  // namespace hopf
