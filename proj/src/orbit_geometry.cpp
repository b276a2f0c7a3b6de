#include "hopf/orbit_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "hopf/error.hpp"

namespace hopf {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kMaxCondition = 1e12;
}  // namespace

PlanarOrbit PlanarOrbit::centered(std::vector<Eigen::Vector2d> points)
{
    PlanarOrbit orbit;
    orbit.center = centroid(points);
    orbit.points = std::move(points);
    return orbit;
}

Eigen::Vector2d centroid(std::span<const Eigen::Vector2d> points)
{
    require(!points.empty(), ErrorKind::InvalidArgument, "centroid of an empty point set");
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& p : points) c += p;
    return c / static_cast<double>(points.size());
}

std::vector<PolarSample> to_polar(const PlanarOrbit& orbit, int n_h)
{
    require(n_h >= 1, ErrorKind::InvalidArgument, "harmonic count must be >= 1");
    require(!orbit.points.empty(), ErrorKind::InvalidArgument, "orbit has no samples");
    std::vector<PolarSample> out;
    out.reserve(orbit.points.size());
    double r_max = 0.0;
    for (const auto& p : orbit.points) r_max = std::max(r_max, (p - orbit.center).norm());

    // the samples are in traversal order; the angle must keep one direction
    // (up to half a bin of jitter) or some ray meets the curve twice
    const double slack = kTwoPi / (8.0 * n_h);
    double unwrapped = 0.0, prev = 0.0, top = 0.0, bottom = 0.0;
    double worst_up = 0.0, worst_down = 0.0, where_up = 0.0, where_down = 0.0;
    for (std::size_t i = 0; i < orbit.points.size(); ++i) {
        const Eigen::Vector2d d = orbit.points[i] - orbit.center;
        const double r = d.norm();
        require(r > 1e-12 * std::max(r_max, 1e-300), ErrorKind::InvalidArgument,
                "orbit sample coincides with the polar centre");
        const double raw = std::atan2(d.y(), d.x());
        if (i > 0) {
            double step = raw - prev;
            if (step > std::numbers::pi) step -= kTwoPi;
            if (step < -std::numbers::pi) step += kTwoPi;
            unwrapped += step;
        }
        prev = raw;
        // largest retreat from the running extremes in each direction
        top = std::max(top, unwrapped);
        bottom = std::min(bottom, unwrapped);
        if (top - unwrapped > worst_down) {
            worst_down = top - unwrapped;
            where_down = raw;
        }
        if (unwrapped - bottom > worst_up) {
            worst_up = unwrapped - bottom;
            where_up = raw;
        }
        double theta = raw;
        if (theta < 0.0) theta += kTwoPi;
        if (theta >= kTwoPi) theta -= kTwoPi;
        out.push_back({theta, r});
    }
    // net direction decides which retreat counts
    const double retreat = unwrapped >= 0.0 ? worst_down : worst_up;
    if (retreat > slack) {
        double at = unwrapped >= 0.0 ? where_down : where_up;
        if (at < 0.0) at += kTwoPi;
        throw Error(ErrorKind::NonStarShaped, "polar angle reverses near theta = " + std::to_string(at));
    }
    std::sort(out.begin(), out.end(), [](const PolarSample& x, const PolarSample& y) { return x.theta < y.theta; });
    return out;
}

OrbitDescriptor OrbitDescriptor::zero(int n_h)
{
    return {n_h, Eigen::VectorXd::Zero(n_h + 1), Eigen::VectorXd::Zero(n_h)};
}

Eigen::VectorXd OrbitDescriptor::coefficients() const
{
    Eigen::VectorXd c(2 * n_h + 1);
    c << a, b;
    return c;
}

OrbitDescriptor OrbitDescriptor::from_coefficients(const Eigen::VectorXd& c)
{
    require(c.size() % 2 == 1, ErrorKind::InvalidArgument, "descriptor needs 2 n_h + 1 coefficients");
    const int n_h = static_cast<int>(c.size() / 2);
    return {n_h, c.head(n_h + 1), c.tail(n_h)};
}

void fourier_basis(double theta, int n_h, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row)
{
    row(0) = 1.0;
    for (int k = 1; k <= n_h; ++k) {
        row(k) = std::cos(k * theta);
        row(n_h + k) = std::sin(k * theta);
    }
}

void fourier_basis_derivative(double theta, int n_h, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row)
{
    row(0) = 0.0;
    for (int k = 1; k <= n_h; ++k) {
        row(k) = -k * std::sin(k * theta);
        row(n_h + k) = k * std::cos(k * theta);
    }
}

Eigen::VectorXd FourierLeastSquares::normal_inverse(const Eigen::VectorXd& v) const
{
    Eigen::VectorXd w = right_vectors.transpose() * v;
    w.array() /= singular_values.array().square();
    return right_vectors * w;
}

FourierLeastSquares fourier_least_squares(std::span<const double> theta, std::span<const double> radius, int n_h)
{
    require(n_h >= 0, ErrorKind::InvalidArgument, "harmonic count must be >= 0");
    require(theta.size() == radius.size(), ErrorKind::InvalidArgument, "theta/radius length mismatch");
    const auto n = static_cast<Eigen::Index>(theta.size());
    const Eigen::Index p = 2 * n_h + 1;
    require(n >= p, ErrorKind::InvalidArgument,
            "need at least " + std::to_string(p) + " samples for " + std::to_string(n_h) + " harmonics");
    FourierLeastSquares out;
    out.design.resize(n, p);
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        fourier_basis(theta[static_cast<std::size_t>(i)], n_h, out.design.row(i));
        rhs(i) = radius[static_cast<std::size_t>(i)];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.design, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.singular_values = svd.singularValues();
    const double s_max = out.singular_values(0);
    const double s_min = out.singular_values(p - 1);
    if (!(s_min > 0.0) || s_max / s_min > kMaxCondition)
        throw Error(ErrorKind::RankDeficient, "Fourier design matrix is ill-conditioned (clustered angles)");
    out.right_vectors = svd.matrixV();
    Eigen::VectorXd w = svd.matrixU().transpose() * rhs;
    w.array() /= out.singular_values.array();
    out.coefficients = out.right_vectors * w;
    out.residual = rhs - out.design * out.coefficients;
    return out;
}

OrbitDescriptor fourier_fit(std::span<const PolarSample> samples, int n_h)
{
    std::vector<double> theta(samples.size());
    std::vector<double> radius(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        theta[i] = samples[i].theta;
        radius[i] = samples[i].radius;
    }
    return OrbitDescriptor::from_coefficients(fourier_least_squares(theta, radius, n_h).coefficients);
}

double fourier_eval(const OrbitDescriptor& d, double theta)
{
    double r = d.a.size() > 0 ? d.a(0) : 0.0;
    for (int k = 1; k <= d.n_h; ++k) r += d.a(k) * std::cos(k * theta) + d.b(k - 1) * std::sin(k * theta);
    return r;
}

double descriptor_distance(const OrbitDescriptor& d1, const OrbitDescriptor& d2)
{
    if (d1.n_h != d2.n_h)
        throw Error(ErrorKind::HarmonicMismatch,
                    "descriptors have " + std::to_string(d1.n_h) + " and " + std::to_string(d2.n_h) + " harmonics");
    return (d1.coefficients() - d2.coefficients()).norm();
}

OrbitDescriptor orbit_descriptor(const PlanarOrbit& orbit, int n_h)
{
    const auto polar = to_polar(orbit, n_h);
    return fourier_fit(polar, n_h);
}

}  // namespace hopf
