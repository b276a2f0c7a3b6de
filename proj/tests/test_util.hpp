#pragma once

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>

namespace testutil {

// central differences of a scalar function of a vector
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h = 1e-6)
{
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        xp[i] = xi + h;
        const double fp = f(xp);
        xp[i] = xi - h;
        const double fm = f(xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
    const double scale = std::max({a.norm(), b.norm(), 1e-300});
    return (a - b).norm() / scale;
}

// closed curve sampled in traversal order
inline std::vector<Eigen::Vector2d> ellipse(double cx, double cy, double ax, double ay, int n, double phase = 0.0)
{
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < n; ++i) {
        const double t = phase + 2.0 * M_PI * i / n;
        pts.emplace_back(cx + ax * std::cos(t), cy + ay * std::sin(t));
    }
    return pts;
}

}  // namespace testutil
