#include "hopf/shape_loss.hpp"

#include <cmath>
#include <numbers>

#include "hopf/error.hpp"

namespace hopf {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Distance from the feasible region of the requested branch, with its gradient.
struct BranchViolation {
    double amount = 0.0;
    double d_mu0 = 0.0;
    double d_a2 = 0.0;
};

BranchViolation branch_violation(const NormalFormParams& p, double mu, Stability stability)
{
    BranchViolation v;
    if (p.quintic_enabled && p.a2 > 0.0) {
        const double fold = p.mu0 - 0.25 * p.a2 * p.a2;
        if (mu <= fold) {
            v.amount = fold - mu;
            v.d_mu0 = 1.0;
            v.d_a2 = -0.5 * p.a2;
        }
        if (stability == Stability::Unstable && mu >= p.mu0) {
            v.amount += mu - p.mu0;
            v.d_mu0 -= 1.0;
        }
    } else if (stability == Stability::Stable && mu <= p.mu0) {
        v.amount = p.mu0 - mu;
        v.d_mu0 = 1.0;
    }
    return v;
}

}  // namespace

std::vector<ShapeTarget> shape_targets(const TrainingDataset& data, int n_h)
{
    std::vector<ShapeTarget> out;
    out.reserve(data.records.size());
    for (const auto& rec : data.records) {
        const PlanarOrbit orbit = PlanarOrbit::centered(rec.planar_points());
        out.push_back({rec.id, rec.mu, rec.stability, orbit.center, orbit_descriptor(orbit, n_h)});
    }
    return out;
}

ShapeLossTerms shape_loss_terms(const std::vector<ShapeTarget>& targets, const CoordinateMap& map,
                                const NormalFormParams& p, const ShapeLossOptions& opt,
                                ShapeLossGradient* grad)
{
    require(opt.n_points >= 2 * opt.n_h + 1, ErrorKind::InvalidArgument,
            "predicted orbit needs at least 2 n_h + 1 points");
    if (grad) {
        *grad = ShapeLossGradient{};
        grad->nn = Eigen::VectorXd::Zero(map.nn.parameter_count());
    }
    ShapeLossTerms terms;
    terms.per_orbit.reserve(targets.size());
    const int n = opt.n_points;

    Eigen::VectorXd cos_phi(n);
    Eigen::VectorXd sin_phi(n);
    for (int k = 0; k < n; ++k) {
        const double phi = kTwoPi * k / n;
        cos_phi(k) = std::cos(phi);
        sin_phi(k) = std::sin(phi);
    }

    for (const auto& target : targets) {
        if (target.descriptor.n_h != opt.n_h)
            throw Error(ErrorKind::HarmonicMismatch, "target '" + target.id + "' descriptor has wrong harmonic count");
        const Eigen::VectorXd measured = target.descriptor.coefficients();
        const auto sens = branch_radius_sensitivity(p, target.mu, target.stability);
        if (!sens) {
            if (!opt.training)
                throw Error(ErrorKind::MissingBranch, std::string("no ") + to_string(target.stability) +
                                                          " LCO at mu = " + std::to_string(target.mu) +
                                                          " for record '" + target.id + "'");
            const BranchViolation v = branch_violation(p, target.mu, target.stability);
            const double scale = measured.norm();
            const double term = scale * (1.0 + v.amount);
            terms.per_orbit.push_back(term);
            terms.total += term;
            ++terms.penalized;
            if (grad) {
                grad->mu0 += scale * v.d_mu0;
                grad->a2 += scale * v.d_a2;
            }
            continue;
        }
        const double r = sens->radius;

        Eigen::Matrix3Xd inputs(3, n);
        inputs.row(0) = r * cos_phi.transpose();
        inputs.row(1) = r * sin_phi.transpose();
        inputs.row(2).setConstant(map.scaled_mu(target.mu));

        Mlp::Tape tape;
        Eigen::Matrix2Xd z = map.linear.rows * inputs;
        z.colwise() += map.offset.vec();
        z += map.nn.forward(Eigen::MatrixXd(inputs), tape);

        std::vector<double> theta(static_cast<std::size_t>(n));
        std::vector<double> radius(static_cast<std::size_t>(n));
        Eigen::Matrix2Xd d = z.colwise() - target.center;
        for (int k = 0; k < n; ++k) {
            radius[static_cast<std::size_t>(k)] = d.col(k).norm();
            theta[static_cast<std::size_t>(k)] = std::atan2(d(1, k), d(0, k));
        }

        if (opt.training) {
            // a curve that misses the centre has no usable radius function
            double turn = 0.0;
            for (int k = 0; k < n; ++k) {
                double step = theta[static_cast<std::size_t>((k + 1) % n)] - theta[static_cast<std::size_t>(k)];
                if (step > std::numbers::pi) step -= kTwoPi;
                if (step < -std::numbers::pi) step += kTwoPi;
                turn += step;
            }
            if (std::abs(turn) < std::numbers::pi) {
                const Eigen::Vector2d off = z.rowwise().mean() - target.center;
                const double a0 = std::max(std::abs(measured(0)), 1e-300);
                const double dist = off.norm();
                const double term = measured.norm() * (2.0 + dist / a0);
                terms.per_orbit.push_back(term);
                terms.total += term;
                ++terms.penalized;
                if (grad && dist > 0.0) {
                    // pull the curve's centroid back onto the centre
                    const Eigen::Vector2d g = measured.norm() / a0 * off / dist / n;
                    const Eigen::Matrix2Xd z_bar = g.replicate(1, n);
                    grad->linear += z_bar * inputs.transpose();
                    grad->offset += z_bar.rowwise().sum();
                    map.nn.backward(tape, z_bar, grad->nn);
                }
                continue;
            }
        }

        FourierLeastSquares fit;
        try {
            if (!opt.training) {
                PlanarOrbit check;
                check.center = target.center;
                check.points.reserve(static_cast<std::size_t>(n));
                for (int k = 0; k < n; ++k) check.points.emplace_back(z.col(k));
                to_polar(check, opt.n_h);  // star-shape check only
            }
            fit = fourier_least_squares(theta, radius, opt.n_h);
        } catch (const Error& e) {
            if (!opt.training || e.kind() != ErrorKind::RankDeficient) throw;
            const double term = 2.0 * measured.norm();
            terms.per_orbit.push_back(term);
            terms.total += term;
            ++terms.penalized;
            continue;
        }

        const Eigen::VectorXd diff = fit.coefficients - measured;
        const double term = diff.norm();
        terms.per_orbit.push_back(term);
        terms.total += term;
        if (!grad || term == 0.0) continue;

        // reverse pass through the least-squares fit
        const Eigen::VectorXd g_coef = diff / term;
        const Eigen::VectorXd w = fit.normal_inverse(g_coef);
        const Eigen::VectorXd aw = fit.design * w;  // cotangent of the radii
        const int n_h = opt.n_h;
        Eigen::RowVectorXd dbasis(2 * n_h + 1);
        Eigen::Matrix2Xd z_bar(2, n);
        for (int k = 0; k < n; ++k) {
            // A_bar row k = residual_k w^T - aw_k c^T ; theta_bar = A_bar row . dA/dtheta
            fourier_basis_derivative(theta[static_cast<std::size_t>(k)], n_h, dbasis);
            const double theta_bar = fit.residual(k) * dbasis.dot(w) - aw(k) * dbasis.dot(fit.coefficients);
            const double rk = radius[static_cast<std::size_t>(k)];
            const Eigen::Vector2d dk = d.col(k);
            z_bar.col(k) = aw(k) * dk / rk + theta_bar * Eigen::Vector2d(-dk.y(), dk.x()) / (rk * rk);
        }

        grad->linear += z_bar * inputs.transpose();
        grad->offset += z_bar.rowwise().sum();
        const Eigen::MatrixXd in_bar_nn = map.nn.backward(tape, z_bar, grad->nn);
        const Eigen::Matrix3Xd in_bar = map.linear.rows.transpose() * z_bar + in_bar_nn;
        const double r_bar = in_bar.row(0).dot(cos_phi) + in_bar.row(1).dot(sin_phi);
        grad->mu0 += r_bar * sens->d_mu0;
        grad->a2 += r_bar * sens->d_a2;
    }
    return terms;
}

double shape_loss(const TrainingDataset& data, const CoordinateMap& map, const NormalFormParams& p, int n_points,
                  int n_h)
{
    const auto targets = shape_targets(data, n_h);
    return shape_loss_terms(targets, map, p, {n_points, n_h, false}).total;
}

}  // namespace hopf
