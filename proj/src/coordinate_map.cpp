#include "hopf/coordinate_map.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hopf/error.hpp"

namespace hopf {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInverseTol = 1e-10;
constexpr int kInverseMaxIter = 50;
constexpr double kPhaseTol = 1e-10;

double wrap_angle(double a)
{
    a = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
    if (a <= -kPi) a += 2.0 * kPi;
    return a;
}

LcoSolution require_branch(const NormalFormParams& p, double mu, Stability stability)
{
    auto branch = find_branch(p, mu, stability);
    if (!branch)
        throw Error(ErrorKind::MissingBranch,
                    std::string("no ") + to_string(stability) + " LCO at mu = " + std::to_string(mu));
    return *branch;
}

}  // namespace

Eigen::Matrix3d LinearMap::full() const
{
    Eigen::Matrix3d m;
    m.topRows<2>() = rows;
    m.row(2) << 0.0, 0.0, 1.0;
    return m;
}

void LinearMap::validate() const
{
    require(rows.allFinite(), ErrorKind::InvalidArgument, "linear map has non-finite entries");
    require(std::abs(determinant()) > 1e-10, ErrorKind::InvalidArgument, "linear map block is singular");
}

AuxiliaryMap::Features AuxiliaryMap::features(double u1, double u2, double mu)
{
    Features f;
    f << 1.0, u1, u2, mu, u1 * u1, u1 * u2, u2 * u2, u1 * u1 * u1, u1 * u1 * u2, u1 * u2 * u2, u2 * u2 * u2;
    return f;
}

double AuxiliaryMap::eval(double u1, double u2, double mu) const
{
    return coefficients.dot(features(u1, u2, mu));
}

CoordinateMap CoordinateMap::identity(const std::vector<int>& hidden)
{
    CoordinateMap map;
    std::vector<int> sizes{3};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(2);
    map.nn = Mlp(sizes);
    return map;
}

void CoordinateMap::validate() const
{
    linear.validate();
    require(std::isfinite(offset.s1) && std::isfinite(offset.s2), ErrorKind::InvalidArgument,
            "translation offset must be finite");
    require(nn.input_size() == 3 && nn.output_size() == 2, ErrorKind::InvalidArgument,
            "correction network must map 3 inputs to 2 outputs");
    require(nn.all_finite(), ErrorKind::InvalidArgument, "correction network has non-finite weights");
    require(std::isfinite(mu_center) && std::isfinite(mu_scale) && mu_scale > 0.0, ErrorKind::InvalidArgument,
            "mu normalization must be finite with a positive scale");
    for (const auto& a : aux)
        require(a.coefficients.size() == AuxiliaryMap::kFeatureCount && a.coefficients.allFinite(),
                ErrorKind::InvalidArgument, "auxiliary map coefficients malformed");
}

Eigen::Vector2d map_forward(const CoordinateMap& map, double u1, double u2, double mu)
{
    const Eigen::Vector3d u(u1, u2, map.scaled_mu(mu));
    Eigen::Vector2d z = map.linear.rows * u;
    z += map.offset.vec();
    z += map.nn.forward(Eigen::VectorXd(u));
    return z;
}

Eigen::Matrix2Xd map_forward_batch(const CoordinateMap& map, const Eigen::Matrix3Xd& inputs)
{
    Eigen::MatrixXd x = inputs;
    x.row(2) = (x.row(2).array() - map.mu_center) / map.mu_scale;
    Eigen::Matrix2Xd z = map.linear.rows * x;
    z.colwise() += map.offset.vec();
    z += map.nn.forward(x);
    return z;
}

Eigen::VectorXd map_observation(const CoordinateMap& map, double u1, double u2, double mu)
{
    Eigen::VectorXd z(2 + static_cast<Eigen::Index>(map.aux.size()));
    z.head<2>() = map_forward(map, u1, u2, mu);
    for (std::size_t k = 0; k < map.aux.size(); ++k)
        z(2 + static_cast<Eigen::Index>(k)) = map.aux[k].eval(u1, u2, mu);
    return z;
}

Eigen::Matrix2d map_jacobian(const CoordinateMap& map, double u1, double u2, double mu)
{
    const Eigen::MatrixXd jn = map.nn.input_jacobian(Eigen::Vector3d(u1, u2, map.scaled_mu(mu)));
    return map.linear.block() + jn.leftCols<2>();
}

Eigen::Vector2d map_inverse(const CoordinateMap& map, const Eigen::Vector2d& z, double mu,
                            std::optional<Eigen::Vector2d> guess)
{
    Eigen::Vector2d u;
    if (guess) {
        u = *guess;
    } else {
        const Eigen::Vector2d rhs = z - map.offset.vec() - map.linear.rows.col(2) * map.scaled_mu(mu);
        const Eigen::Matrix2d block = map.linear.block();
        if (std::abs(block.determinant()) < 1e-12)
            throw Error(ErrorKind::SingularJacobian, "linear block is singular");
        u = block.inverse() * rhs;
    }
    Eigen::Vector2d residual = map_forward(map, u.x(), u.y(), mu) - z;
    for (int it = 0; it < kInverseMaxIter; ++it) {
        if (residual.lpNorm<Eigen::Infinity>() < kInverseTol) return u;
        const Eigen::Matrix2d jac = map_jacobian(map, u.x(), u.y(), mu);
        const double det = jac.determinant();
        if (std::abs(det) < 1e-12)
            throw Error(ErrorKind::SingularJacobian, "map Jacobian is singular at iteration " + std::to_string(it));
        const Eigen::Vector2d step = jac.inverse() * residual;
        // damped update: halve until the residual does not grow
        double lambda = 1.0;
        Eigen::Vector2d trial;
        Eigen::Vector2d trial_residual;
        for (int bt = 0; bt < 30; ++bt) {
            trial = u - lambda * step;
            trial_residual = map_forward(map, trial.x(), trial.y(), mu) - z;
            if (trial_residual.norm() < residual.norm() || lambda < 1e-6) break;
            lambda *= 0.5;
        }
        u = trial;
        residual = trial_residual;
    }
    if (residual.lpNorm<Eigen::Infinity>() < kInverseTol) return u;
    throw Error(ErrorKind::NoConvergence, "map inverse did not converge in " + std::to_string(kInverseMaxIter) +
                                              " iterations (residual " + std::to_string(residual.norm()) + ")");
}

PlanarOrbit predicted_orbit(const CoordinateMap& map, const NormalFormParams& p, double mu, Stability stability,
                            int n_points)
{
    require(n_points >= 3, ErrorKind::InvalidArgument, "predicted orbit needs at least 3 points");
    const LcoSolution branch = require_branch(p, mu, stability);
    Eigen::Matrix3Xd inputs(3, n_points);
    for (int k = 0; k < n_points; ++k) {
        const double phi = 2.0 * kPi * k / n_points;
        inputs.col(k) << branch.radius * std::cos(phi), branch.radius * std::sin(phi), mu;
    }
    const Eigen::Matrix2Xd z = map_forward_batch(map, inputs);
    std::vector<Eigen::Vector2d> pts;
    pts.reserve(static_cast<std::size_t>(n_points));
    for (int k = 0; k < n_points; ++k) pts.emplace_back(z.col(k));
    return PlanarOrbit::centered(std::move(pts));
}

Eigen::Vector2d match_initial_phase(const CoordinateMap& map, const NormalFormParams& p, const Eigen::Vector2d& z_init,
                                    double mu, Stability stability, std::optional<Eigen::Vector2d> center)
{
    const LcoSolution branch = require_branch(p, mu, stability);
    const double r = branch.radius;
    const Eigen::Vector2d c = center ? *center : predicted_orbit(map, p, mu, stability).center;
    const Eigen::Vector2d dz = z_init - c;
    const double target = std::atan2(dz.y(), dz.x());

    auto mismatch = [&](double phi) {
        const Eigen::Vector2d d = map_forward(map, r * std::cos(phi), r * std::sin(phi), mu) - c;
        return wrap_angle(std::atan2(d.y(), d.x()) - target);
    };
    auto mismatch_slope = [&](double phi) {
        const double u1 = r * std::cos(phi);
        const double u2 = r * std::sin(phi);
        const Eigen::Vector2d d = map_forward(map, u1, u2, mu) - c;
        const Eigen::Vector2d dd = map_jacobian(map, u1, u2, mu) * Eigen::Vector2d(-u2, u1);
        return (d.x() * dd.y() - d.y() * dd.x()) / d.squaredNorm();
    };
    auto point = [&](double phi) { return Eigen::Vector2d(r * std::cos(phi), r * std::sin(phi)); };

    double phi = target;
    for (int it = 0; it < 50; ++it) {
        const double g = mismatch(phi);
        if (std::abs(g) < kPhaseTol) return point(phi);
        const double slope = mismatch_slope(phi);
        if (!(std::abs(slope) > 1e-14) || !std::isfinite(slope)) break;
        phi = wrap_angle(phi - g / slope);
    }

    // fallback: scan for a sign change that is not a branch-cut jump, then bisect
    constexpr int kScan = 64;
    for (int k = 0; k < kScan; ++k) {
        double lo = -kPi + 2.0 * kPi * k / kScan;
        double hi = lo + 2.0 * kPi / kScan;
        double g_lo = mismatch(lo);
        const double g_hi = mismatch(hi);
        if (std::abs(g_lo) < kPhaseTol) return point(lo);
        if (g_lo * g_hi > 0.0 || std::abs(g_lo - g_hi) > kPi) continue;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double g_mid = mismatch(mid);
            if (std::abs(g_mid) < kPhaseTol) return point(mid);
            if ((g_mid < 0.0) == (g_lo < 0.0)) {
                lo = mid;
                g_lo = g_mid;
            } else {
                hi = mid;
            }
        }
    }
    throw Error(ErrorKind::NoConvergence, "phase matching failed at mu = " + std::to_string(mu));
}

std::vector<AuxiliaryMap> fit_auxiliary_maps(const TrainingDataset& data, const CoordinateMap& map, double ridge)
{
    require(ridge >= 0.0, ErrorKind::InvalidArgument, "ridge parameter must be >= 0");
    const int extra = data.m - 2;
    if (extra <= 0) return {};
    Eigen::Index total = 0;
    for (const auto& rec : data.records) total += rec.samples();
    Eigen::MatrixXd features(total, AuxiliaryMap::kFeatureCount);
    Eigen::MatrixXd targets(total, extra);
    Eigen::Index row = 0;
    for (const auto& rec : data.records) {
        std::optional<Eigen::Vector2d> guess;
        for (Eigen::Index i = 0; i < rec.samples(); ++i) {
            Eigen::Vector2d u;
            try {
                u = map_inverse(map, Eigen::Vector2d(rec.states(i, 0), rec.states(i, 1)), rec.mu, guess);
            } catch (const Error& e) {
                // retry from the linear guess before giving up on this sample
                try {
                    u = map_inverse(map, Eigen::Vector2d(rec.states(i, 0), rec.states(i, 1)), rec.mu);
                } catch (const Error&) {
                    throw Error(e.kind(), "record '" + rec.id + "' sample " + std::to_string(i) + ": " + e.what());
                }
            }
            guess = u;
            features.row(row) = AuxiliaryMap::features(u.x(), u.y(), rec.mu).transpose();
            targets.row(row) = rec.states.row(i).segment(2, extra);
            ++row;
        }
    }
    Eigen::MatrixXd normal = features.transpose() * features;
    normal.diagonal().array() += ridge;
    const Eigen::MatrixXd solution = normal.ldlt().solve(features.transpose() * targets);
    std::vector<AuxiliaryMap> out(static_cast<std::size_t>(extra));
    for (int k = 0; k < extra; ++k) {
        out[static_cast<std::size_t>(k)].coefficients = solution.col(k);
        out[static_cast<std::size_t>(k)].ridge = ridge;
    }
    return out;
}

InvertibilityReport invertibility_report(const CoordinateMap& map, const NormalFormParams& p, double mu_lo,
                                         double mu_hi, const InvertibilityGrid& grid)
{
    require(grid.radii >= 1 && grid.angles >= 1 && grid.mus >= 1, ErrorKind::InvalidArgument,
            "invertibility grid must be non-empty");
    if (mu_hi < mu_lo) std::swap(mu_lo, mu_hi);
    auto mu_at = [&](int j) {
        return grid.mus == 1 ? mu_lo : mu_lo + (mu_hi - mu_lo) * j / (grid.mus - 1);
    };
    double r_max = 0.0;
    for (int j = 0; j < grid.mus; ++j)
        for (const auto& s : lco_radii(p, mu_at(j))) r_max = std::max(r_max, s.radius);
    if (r_max == 0.0) r_max = 1.0;
    r_max *= 1.2;

    InvertibilityReport rep;
    rep.max_radius = r_max;
    rep.min_abs_det = INFINITY;
    int positive = 0;
    std::vector<double> dets;
    dets.reserve(static_cast<std::size_t>(grid.radii * grid.angles * grid.mus));
    for (int j = 0; j < grid.mus; ++j) {
        const double mu = mu_at(j);
        for (int i = 0; i < grid.radii; ++i) {
            const double r = grid.radii == 1 ? r_max : r_max * i / (grid.radii - 1);
            const int n_ang = (r == 0.0) ? 1 : grid.angles;
            for (int k = 0; k < n_ang; ++k) {
                const double phi = 2.0 * kPi * k / n_ang;
                const double u1 = r * std::cos(phi);
                const double u2 = r * std::sin(phi);
                const double det = map_jacobian(map, u1, u2, mu).determinant();
                dets.push_back(det);
                if (det > 0.0) ++positive;
                if (std::abs(det) < rep.min_abs_det) {
                    rep.min_abs_det = std::abs(det);
                    rep.argmin = Eigen::Vector3d(u1, u2, mu);
                }
                rep.max_abs_det = std::max(rep.max_abs_det, std::abs(det));
            }
        }
    }
    rep.samples = static_cast<int>(dets.size());
    const bool majority_positive = 2 * positive >= rep.samples;
    for (double d : dets)
        if ((d > 0.0) != majority_positive || d == 0.0) ++rep.sign_changes;
    return rep;
}

}  // namespace hopf
