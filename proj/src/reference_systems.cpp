#include "hopf/reference_systems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "hopf/error.hpp"

namespace hopf {

namespace {

constexpr double kPi = std::numbers::pi;

std::string fmt(double v)
{
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

bool finite_and_bounded(const Eigen::VectorXd& x, double limit)
{
    return x.allFinite() && x.lpNorm<Eigen::Infinity>() <= limit;
}

// upward crossings of the mean, linearly interpolated, in sample units
std::vector<double> mean_crossings(const std::vector<double>& y)
{
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    std::vector<double> out;
    for (std::size_t i = 1; i < y.size(); ++i) {
        const double a = y[i - 1] - mean;
        const double b = y[i] - mean;
        if (a < 0.0 && b >= 0.0) out.push_back(static_cast<double>(i - 1) + a / (a - b));
    }
    return out;
}

double half_range(const std::vector<double>& y, std::size_t from, std::size_t to)
{
    const auto [lo, hi] = std::minmax_element(y.begin() + static_cast<long>(from), y.begin() + static_cast<long>(to));
    return 0.5 * (*hi - *lo);
}

LcoRecord make_record(const ReferenceSystem& sys, double mu, Stability stability, const std::string& provenance,
                      double dt, const std::vector<Eigen::VectorXd>& states)
{
    LcoRecord rec;
    rec.mu = mu;
    rec.stability = stability;
    rec.provenance = provenance;
    rec.t.resize(states.size());
    rec.states.resize(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(sys.observed.size()));
    for (std::size_t j = 0; j < states.size(); ++j) {
        rec.t[j] = static_cast<double>(j) * dt;
        for (std::size_t k = 0; k < sys.observed.size(); ++k)
            rec.states(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = states[j](sys.observed[k]);
    }
    return rec;
}

Eigen::VectorXd flow(const ReferenceSystem& sys, const Eigen::VectorXd& x0, double T, double mu, int steps)
{
    return rk4_flow(sys.rhs, x0, mu, T / steps, steps);
}

// central-difference monodromy of the period-T flow
Eigen::MatrixXd monodromy(const ReferenceSystem& sys, const Eigen::VectorXd& x0, double T, double mu, int steps,
                          double fd)
{
    const int n = sys.dim;
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i) {
        const double h = fd * (1.0 + std::abs(x0(i)));
        Eigen::VectorXd xp = x0;
        Eigen::VectorXd xm = x0;
        xp(i) += h;
        xm(i) -= h;
        m.col(i) = (flow(sys, xp, T, mu, steps) - flow(sys, xm, T, mu, steps)) / (2.0 * h);
    }
    return m;
}

std::vector<std::complex<double>> eigenvalues(const Eigen::MatrixXd& m)
{
    Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
    std::vector<std::complex<double>> out;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(es.eigenvalues()(i));
    return out;
}

// Hermite interpolation of a uniformly stepped trajectory
Eigen::VectorXd hermite(const std::vector<Eigen::VectorXd>& x, const std::vector<Eigen::VectorXd>& f, double h,
                        double tau)
{
    auto k = static_cast<std::size_t>(std::floor(tau / h));
    if (k >= x.size() - 1) k = x.size() - 2;
    const double s = tau / h - static_cast<double>(k);
    const double s2 = s * s;
    const double s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1;
    const double h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2;
    const double h11 = s3 - s2;
    return h00 * x[k] + h10 * h * f[k] + h01 * x[k + 1] + h11 * h * f[k + 1];
}

}  // namespace

Eigen::VectorXd rk4_step(const VectorField& f, const Eigen::VectorXd& x, double mu, double h)
{
    const Eigen::VectorXd k1 = f(x, mu);
    const Eigen::VectorXd k2 = f(x + 0.5 * h * k1, mu);
    const Eigen::VectorXd k3 = f(x + 0.5 * h * k2, mu);
    const Eigen::VectorXd k4 = f(x + h * k3, mu);
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::VectorXd rk4_flow(const VectorField& f, Eigen::VectorXd x, double mu, double h, long steps)
{
    for (long i = 0; i < steps; ++i) x = rk4_step(f, x, mu, h);
    return x;
}

// ---- Van der Pol -------------------------------------------------------------

Eigen::Vector2d vdp_rhs(double z1, double z2, double mu)
{
    return {z2, 2.0 * mu * z2 - z1 * z1 * z2 - z1};
}

ReferenceSystem vdp_system()
{
    ReferenceSystem sys;
    sys.name = "vdp";
    sys.dim = 2;
    sys.rhs = [](const Eigen::VectorXd& x, double mu) -> Eigen::VectorXd {
        const Eigen::Vector2d d = vdp_rhs(x(0), x(1), mu);
        return d;
    };
    sys.observed = {0, 1};
    sys.state_names = {"z1", "z2"};
    sys.units = {"-", "-"};
    sys.mu_units = "-";
    sys.initial_state = Eigen::Vector2d(0.5, 0.0);
    sys.amplitude_index = 0;
    sys.phase_index = 1;
    return sys;
}

// ---- aerofoil ---------------------------------------------------------------------

AeroMatrices aero_matrices(const AeroParams& p)
{
    const double b = p.b;
    const double a = p.a;
    const double rho = p.rho;
    const double U = p.U;
    const double ch = p.c_hat();
    const double c12_34 = p.c1 * p.c2 + p.c3 * p.c4;
    const double c24_13 = p.c2 * p.c4 * (p.c1 + p.c3);
    const double rho13 = p.density_on_heave_coupling ? rho : 1.0;

    AeroMatrices m;
    m.M << p.m_T + kPi * rho * b * b, p.m_w * p.x_alpha * b - a * kPi * rho * b * b * b, 0.0,
        p.m_w * p.x_alpha * b - a * kPi * rho * b * b * b, p.I_alpha + kPi * (1.0 / 8.0 + a * a) * rho * b * b * b * b,
        0.0, 0.0, 0.0, 1.0;
    m.D << p.c_h + 2 * kPi * rho * b * U * ch, (1 + ch * (1 - 2 * a)) * kPi * rho * b * b * U,
        2 * kPi * rho13 * U * U * b * c12_34,
        -2 * kPi * (a + 0.5) * rho * b * b * ch * U, p.c_alpha + (0.5 - a) * (1 - ch * (1 + 2 * a)) * kPi * rho * b * b * b * U,
        -2 * kPi * rho * b * b * U * U * (a + 0.5) * c12_34,
        -1.0 / b, a - 0.5, (p.c2 + p.c4) * U / b;
    m.K << p.k_h, 2 * kPi * rho * b * U * U * ch, 2 * kPi * rho13 * U * U * U * c24_13,
        0.0, p.k_alpha - 2 * kPi * (0.5 + a) * rho * ch * b * b * U * U, -2 * kPi * rho * b * U * U * U * (a + 0.5) * c24_13,
        0.0, -U / b, p.c2 * p.c4 * U * U / (b * b);
    return m;
}

namespace {

struct AeroOperator {
    Eigen::Matrix3d Minv;
    Eigen::Matrix3d MinvD;
    Eigen::Matrix3d MinvK;
    Eigen::Vector3d Minv_alpha;  // M^-1 e_alpha, the nonlinearity direction
    Eigen::Vector3d Minv_heave;  // M^-1 e_h, the control direction
    double k2 = 0.0;
    double k3 = 0.0;

    explicit AeroOperator(const AeroParams& p)
    {
        const AeroMatrices m = aero_matrices(p);
        Eigen::FullPivLU<Eigen::Matrix3d> lu(m.M);
        require(lu.isInvertible() && std::abs(m.M.determinant()) > 1e-14, ErrorKind::InvalidArgument,
                "aerofoil mass matrix is singular");
        Minv = lu.inverse();
        MinvD = Minv * m.D;
        MinvK = Minv * m.K;
        Minv_alpha = Minv.col(1);
        Minv_heave = Minv.col(0);
        k2 = p.k_alpha2;
        k3 = p.k_alpha3;
    }

    Eigen::VectorXd operator()(const Eigen::VectorXd& s) const
    {
        const Eigen::Vector3d x = s.head<3>();
        const Eigen::Vector3d v = s.tail<3>();
        const double al = x(1);
        Eigen::VectorXd out(6);
        out.head<3>() = v;
        out.tail<3>() = -(MinvD * v + MinvK * x + Minv_alpha * (k2 * al * al + k3 * al * al * al));
        return out;
    }
};

}  // namespace

Eigen::VectorXd aero_rhs(const Eigen::VectorXd& state, const AeroParams& p)
{
    require(state.size() == 6, ErrorKind::InvalidArgument, "aerofoil state must have 6 entries");
    return AeroOperator(p)(state);
}

Eigen::MatrixXd aero_linearization(const AeroParams& p)
{
    const AeroOperator op(p);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(6, 6);
    a.topRightCorner<3, 3>() = Eigen::Matrix3d::Identity();
    a.bottomLeftCorner<3, 3>() = -op.MinvK;
    a.bottomRightCorner<3, 3>() = -op.MinvD;
    return a;
}

double aero_max_real_eigenvalue(const AeroParams& p)
{
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& e : eigenvalues(aero_linearization(p))) best = std::max(best, e.real());
    return best;
}

double aero_flutter_frequency(const AeroParams& p)
{
    const auto ev = eigenvalues(aero_linearization(p));
    const auto it = std::max_element(ev.begin(), ev.end(), [](auto x, auto y) { return x.real() < y.real(); });
    return std::abs(it->imag());
}

double aero_hopf_speed(AeroParams p, double u_lo, double u_hi, double tol)
{
    p.U = u_lo;
    const double g_lo = aero_max_real_eigenvalue(p);
    p.U = u_hi;
    const double g_hi = aero_max_real_eigenvalue(p);
    require(g_lo < 0.0 && g_hi > 0.0, ErrorKind::InvalidArgument,
            "airspeed interval [" + fmt(u_lo) + ", " + fmt(u_hi) + "] does not bracket the flutter onset");
    while (u_hi - u_lo > tol) {
        p.U = 0.5 * (u_lo + u_hi);
        (aero_max_real_eigenvalue(p) < 0.0 ? u_lo : u_hi) = p.U;
    }
    return 0.5 * (u_lo + u_hi);
}

ReferenceSystem aero_system(const AeroParams& base, bool observe_w)
{
    ReferenceSystem sys;
    sys.name = "aero";
    sys.dim = 6;
    // one-entry operator cache: integrations run at a fixed airspeed
    struct Cache {
        double mu = std::numeric_limits<double>::quiet_NaN();
        std::optional<AeroOperator> op;
    };
    auto cache = std::make_shared<Cache>();
    sys.rhs = [base, cache](const Eigen::VectorXd& x, double mu) -> Eigen::VectorXd {
        if (!cache->op || mu != cache->mu) {
            AeroParams p = base;
            p.U = mu;
            cache->op.emplace(p);
            cache->mu = mu;
        }
        return (*cache->op)(x);
    };
    sys.observed = observe_w ? std::vector<int>{0, 1, 2} : std::vector<int>{0, 1};
    sys.state_names = {"h", "alpha"};
    sys.units = {"m", "rad"};
    if (observe_w) {
        sys.state_names.push_back("w");
        sys.units.push_back("-");
    }
    sys.mu_units = "m/s";
    sys.initial_state = Eigen::VectorXd::Zero(6);
    sys.initial_state(1) = 0.2;
    sys.amplitude_index = 1;
    sys.phase_index = 4;
    sys.control_input = [base](double mu) -> Eigen::VectorXd {
        AeroParams p = base;
        p.U = mu;
        const AeroOperator op(p);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(6);
        b.tail<3>() = op.Minv_heave;
        return b;
    };
    sys.control_dof = 0;
    sys.control_rate = 3;
    return sys;
}

// ---- simulation ---------------------------------------------------------------

LcoRecord simulate_lco(const ReferenceSystem& sys, double mu, const SimulationOptions& opt)
{
    return simulate_lco_from(sys, mu, sys.initial_state, opt);
}

LcoRecord simulate_lco_from(const ReferenceSystem& sys, double mu, const Eigen::VectorXd& x0,
                            const SimulationOptions& opt)
{
    require(opt.dt > 0.0 && opt.record_time > 0.0 && opt.settle_time >= 0.0 && opt.substeps >= 1,
            ErrorKind::InvalidArgument, "simulation times must be positive");
    require(x0.size() == sys.dim, ErrorKind::InvalidArgument, "initial state has wrong dimension");
    const double h = opt.dt / opt.substeps;
    const auto n_record = static_cast<long>(std::llround(opt.record_time / opt.dt));
    const auto n_pre = static_cast<long>(std::llround(std::min(opt.settle_time, opt.record_time) / opt.dt));
    const long settle_steps = std::llround(opt.settle_time / h) - n_pre * opt.substeps;

    Eigen::VectorXd x = rk4_flow(sys.rhs, x0, mu, h, std::max(0L, settle_steps));
    std::vector<Eigen::VectorXd> samples;
    samples.reserve(static_cast<std::size_t>(n_pre + n_record));
    for (long j = 0; j < n_pre + n_record; ++j) {
        if (!x.allFinite())
            throw Error(ErrorKind::NumericalFailure, "simulation diverged at mu = " + fmt(mu));
        samples.push_back(x);
        x = rk4_flow(sys.rhs, x, mu, h, opt.substeps);
    }

    std::vector<double> y(samples.size());
    for (std::size_t j = 0; j < samples.size(); ++j) y[j] = samples[j](sys.amplitude_index);
    const double amp_end = half_range(y, y.size() - std::min<std::size_t>(y.size(), static_cast<std::size_t>(n_record)), y.size());
    if (amp_end < 1e-6) throw Error(ErrorKind::NoLco, "response decayed at mu = " + fmt(mu));
    const auto crossings = mean_crossings(y);
    if (crossings.size() < 2)
        throw Error(ErrorKind::NotSettled, "fewer than one full period observed at mu = " + fmt(mu));
    const double period = (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1);
    const auto p = static_cast<std::size_t>(std::ceil(period)) + 1;
    if (p >= y.size()) throw Error(ErrorKind::NotSettled, "record shorter than one period at mu = " + fmt(mu));
    // the period just before the recorded window
    const std::size_t first = static_cast<std::size_t>(n_pre) >= p ? static_cast<std::size_t>(n_pre) - p : 0;
    const double a_first = half_range(y, first, first + p);
    const double a_last = half_range(y, y.size() - p, y.size());
    if (std::abs(a_first - a_last) > opt.settle_tolerance * a_last)
        throw Error(ErrorKind::NotSettled, "amplitude still drifting at mu = " + fmt(mu) + " (" + fmt(a_first) +
                                               " vs " + fmt(a_last) + ")");

    std::vector<Eigen::VectorXd> kept(samples.begin() + n_pre, samples.end());
    return make_record(sys, mu, Stability::Stable, "simulated", opt.dt, kept);
}

// ---- shooting ------------------------------------------------------------------

double PeriodicOrbit::max_nontrivial_multiplier() const
{
    if (multipliers.empty()) return 0.0;
    std::size_t trivial = 0;
    for (std::size_t i = 1; i < multipliers.size(); ++i)
        if (std::abs(multipliers[i] - 1.0) < std::abs(multipliers[trivial] - 1.0)) trivial = i;
    double best = 0.0;
    for (std::size_t i = 0; i < multipliers.size(); ++i)
        if (i != trivial) best = std::max(best, std::abs(multipliers[i]));
    return best;
}

PeriodicOrbit shoot_periodic_orbit(const ReferenceSystem& sys, double mu, double period_guess,
                                   const Eigen::VectorXd& state_guess, const ShootingOptions& opt)
{
    require(period_guess > 0.0, ErrorKind::InvalidArgument, "period guess must be positive");
    require(state_guess.size() == sys.dim, ErrorKind::InvalidArgument, "state guess has wrong dimension");
    const int n = sys.dim;
    const Eigen::VectorXd xg = state_guess;
    Eigen::VectorXd anchor = sys.rhs(xg, mu);
    require(anchor.norm() > 0.0, ErrorKind::InvalidArgument, "state guess is an equilibrium");
    anchor.normalize();

    Eigen::VectorXd x = xg;
    double T = period_guess;
    auto residual = [&](const Eigen::VectorXd& xs, double Ts) {
        Eigen::VectorXd r(n + 1);
        r.head(n) = flow(sys, xs, Ts, mu, opt.steps_per_period) - xs;
        r(n) = anchor.dot(xs - xg);
        return r;
    };

    PeriodicOrbit out;
    out.mu = mu;
    Eigen::VectorXd r = residual(x, T);
    int it = 0;
    for (; it < opt.max_iterations && r.lpNorm<Eigen::Infinity>() >= opt.tolerance; ++it) {
        const Eigen::MatrixXd m = monodromy(sys, x, T, mu, opt.steps_per_period, opt.fd_step);
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n + 1, n + 1);
        jac.topLeftCorner(n, n) = m - Eigen::MatrixXd::Identity(n, n);
        jac.topRightCorner(n, 1) = sys.rhs(r.head(n) + x, mu);
        jac.bottomLeftCorner(1, n) = anchor.transpose();
        const Eigen::VectorXd step = jac.fullPivLu().solve(-r);
        if (!step.allFinite()) throw Error(ErrorKind::NoConvergence, "singular shooting Jacobian at mu = " + fmt(mu));
        double lambda = 1.0;
        for (int bt = 0; bt < 20; ++bt) {
            const Eigen::VectorXd xt = x + lambda * step.head(n);
            const double Tt = T + lambda * step(n);
            if (Tt > 0.0) {
                const Eigen::VectorXd rt = residual(xt, Tt);
                if (rt.allFinite() && (rt.norm() < r.norm() || bt == 19)) {
                    x = xt;
                    T = Tt;
                    r = rt;
                    break;
                }
            }
            lambda *= 0.5;
        }
    }
    out.iterations = it;
    out.residual = r.lpNorm<Eigen::Infinity>();
    if (!(out.residual < opt.tolerance))
        throw Error(ErrorKind::NoConvergence, "shooting did not converge at mu = " + fmt(mu) + " (residual " +
                                                  fmt(out.residual) + " after " + std::to_string(it) + " iterations)");
    out.x0 = x;
    out.period = T;
    out.multipliers = eigenvalues(monodromy(sys, x, T, mu, opt.steps_per_period, opt.fd_step));
    if (opt.require_unstable && !out.unstable())
        throw Error(ErrorKind::NoLco, "shooting converged to a stable orbit at mu = " + fmt(mu));
    return out;
}

LcoRecord sample_periodic_orbit(const ReferenceSystem& sys, const PeriodicOrbit& orbit, double dt,
                                double record_time, Stability stability, const std::string& provenance)
{
    require(dt > 0.0 && record_time > 0.0, ErrorKind::InvalidArgument, "sampling times must be positive");
    const int steps = std::max(64, static_cast<int>(std::ceil(orbit.period / (0.25 * dt))));
    const double h = orbit.period / steps;
    std::vector<Eigen::VectorXd> xs;
    std::vector<Eigen::VectorXd> fs;
    xs.reserve(static_cast<std::size_t>(steps) + 1);
    Eigen::VectorXd x = orbit.x0;
    for (int k = 0; k <= steps; ++k) {
        xs.push_back(x);
        fs.push_back(sys.rhs(x, orbit.mu));
        x = rk4_step(sys.rhs, x, orbit.mu, h);
    }
    const auto n = static_cast<long>(std::llround(record_time / dt));
    std::vector<Eigen::VectorXd> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (long j = 0; j < n; ++j) {
        const double tau = std::fmod(static_cast<double>(j) * dt, orbit.period);
        samples.push_back(hermite(xs, fs, h, tau));
    }
    return make_record(sys, orbit.mu, stability, provenance, dt, samples);
}

LcoRecord find_unstable_lco_shooting(const ReferenceSystem& sys, double mu, double period_guess,
                                     const Eigen::VectorXd& state_guess, double dt, double record_time,
                                     const ShootingOptions& opt)
{
    const PeriodicOrbit orbit = shoot_periodic_orbit(sys, mu, period_guess, state_guess, opt);
    return sample_periodic_orbit(sys, orbit, dt, record_time,
                                 orbit.unstable() ? Stability::Unstable : Stability::Stable, "shooting");
}

// ---- PD-stabilised orbits ---------------------------------------------------------

namespace {

struct HarmonicTarget {
    double omega = 0.0;
    double mean = 0.0;
    double a1 = 0.0;             // fundamental cosine amplitude
    Eigen::VectorXd a;           // k = 2..K cosine
    Eigen::VectorXd b;           // k = 2..K sine

    double value(double phi) const
    {
        double v = mean + a1 * std::cos(phi);
        for (Eigen::Index k = 0; k < a.size(); ++k)
            v += a(k) * std::cos((k + 2) * phi) + b(k) * std::sin((k + 2) * phi);
        return v;
    }
    double rate(double phi) const
    {
        double v = -a1 * omega * std::sin(phi);
        for (Eigen::Index k = 0; k < a.size(); ++k) {
            const double kw = (k + 2) * omega;
            v += -a(k) * kw * std::sin((k + 2) * phi) + b(k) * kw * std::cos((k + 2) * phi);
        }
        return v;
    }
};

struct ControlledRun {
    Eigen::VectorXd x;    // final state
    double phi = 0.0;     // final target phase
    double u_cos = 0.0;   // fundamental control components over the last period
    double u_sin = 0.0;
    double mean = 0.0;    // response harmonics of the tracked coordinate
    Eigen::VectorXd a;
    Eigen::VectorXd b;
    double periodicity = 0.0;
};

class PdLoop {
public:
    PdLoop(const ReferenceSystem& sys, double mu, const PdGains& g, const PdOptions& opt)
        : sys_(sys), mu_(mu), g_(g), opt_(opt), input_(sys.control_input(mu))
    {
    }

    double control(const HarmonicTarget& tg, const Eigen::VectorXd& x, double phi) const
    {
        return g_.kp * (tg.value(phi) - x(sys_.control_dof)) + g_.kd * (tg.rate(phi) - x(sys_.control_rate));
    }

    Eigen::VectorXd field(const HarmonicTarget& tg, const Eigen::VectorXd& x, double phi) const
    {
        return sys_.rhs(x, mu_) + control(tg, x, phi) * input_;
    }

    void step(const HarmonicTarget& tg, Eigen::VectorXd& x, double& phi, double h) const
    {
        const double dphi = tg.omega * h;
        const Eigen::VectorXd k1 = field(tg, x, phi);
        const Eigen::VectorXd k2 = field(tg, x + 0.5 * h * k1, phi + 0.5 * dphi);
        const Eigen::VectorXd k3 = field(tg, x + 0.5 * h * k2, phi + 0.5 * dphi);
        const Eigen::VectorXd k4 = field(tg, x + h * k3, phi + dphi);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        phi += dphi;
        if (!finite_and_bounded(x, opt_.divergence_limit))
            throw Error(ErrorKind::NotStabilized, "controlled response diverged at mu = " + fmt(mu_));
    }

    ControlledRun run(const HarmonicTarget& tg, Eigen::VectorXd x, double phi, double duration) const
    {
        const int n = opt_.steps_per_period;
        const double period = 2.0 * kPi / tg.omega;
        const double h = period / n;
        const long periods = std::max(2L, static_cast<long>(std::ceil(duration / period)));
        // restart the phase at a period boundary so the Fourier sums line up
        phi = std::fmod(phi, 2.0 * kPi);
        for (long p = 0; p + 1 < periods; ++p)
            for (int k = 0; k < n; ++k) step(tg, x, phi, h);
        const Eigen::VectorXd x_prev = x;
        const int K = opt_.harmonics;
        ControlledRun out;
        out.a = Eigen::VectorXd::Zero(K + 1);
        out.b = Eigen::VectorXd::Zero(K + 1);
        for (int k = 0; k < n; ++k) {
            const double u = control(tg, x, phi);
            const double y = x(sys_.control_dof);
            out.u_cos += u * std::cos(phi);
            out.u_sin += u * std::sin(phi);
            out.mean += y;
            for (int j = 1; j <= K; ++j) {
                out.a(j) += y * std::cos(j * phi);
                out.b(j) += y * std::sin(j * phi);
            }
            step(tg, x, phi, h);
        }
        out.u_cos *= 2.0 / n;
        out.u_sin *= 2.0 / n;
        out.mean /= n;
        out.a *= 2.0 / n;
        out.b *= 2.0 / n;
        out.periodicity = (x - x_prev).norm() / std::max(1e-12, x.norm());
        out.x = x;
        out.phi = phi;
        return out;
    }

private:
    const ReferenceSystem& sys_;
    double mu_;
    PdGains g_;
    PdOptions opt_;
    Eigen::VectorXd input_;
};

}  // namespace

PdResult find_unstable_lco_pd(const ReferenceSystem& sys, double mu, const PdGains& gains, const PdTarget& target,
                              const PdOptions& opt)
{
    require(static_cast<bool>(sys.control_input) && sys.control_dof >= 0 && sys.control_rate >= 0,
            ErrorKind::InvalidArgument, "system '" + sys.name + "' has no actuator");
    require(target.omega > 0.0 && target.amplitude != 0.0, ErrorKind::InvalidArgument,
            "target needs a positive frequency and a nonzero amplitude");
    require(opt.harmonics >= 1 && opt.steps_per_period > 4 * opt.harmonics, ErrorKind::InvalidArgument,
            "invalid harmonic settings");
    const PdLoop loop(sys, mu, gains, opt);

    HarmonicTarget tg;
    tg.omega = target.omega;
    tg.a1 = target.amplitude;
    tg.a = Eigen::VectorXd::Zero(opt.harmonics - 1);
    tg.b = Eigen::VectorXd::Zero(opt.harmonics - 1);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(sys.dim);
    double phi = 0.0;
    const double settle_short = opt.settle_time / 2.0;

    auto evaluate = [&](const HarmonicTarget& t, bool advance) {
        ControlledRun r = loop.run(t, x, phi, settle_short);
        if (advance) {
            x = r.x;
            phi = r.phi;
        }
        return r;
    };
    auto picard = [&](const ControlledRun& r) {
        tg.mean = r.mean;
        tg.a = r.a.tail(opt.harmonics - 1);
        tg.b = r.b.tail(opt.harmonics - 1);
    };

    // initial settle on the plain harmonic target
    ControlledRun r = loop.run(tg, x, phi, opt.settle_time);
    x = r.x;
    phi = r.phi;
    PdResult out;
    const double scale = std::abs(gains.kp) * std::abs(target.amplitude) + 1e-300;
    int it = 0;
    for (; it < opt.max_newton; ++it) {
        for (int s = 0; s < opt.picard_sweeps; ++s) {
            picard(r);
            r = evaluate(tg, true);
        }
        if (r.periodicity > 1e-3)
            throw Error(ErrorKind::NotStabilized, "controlled response is not periodic at mu = " + fmt(mu));
        const Eigen::Vector2d F(r.u_cos / scale, r.u_sin / scale);
        if (F.lpNorm<Eigen::Infinity>() < opt.tolerance) break;
        // finite-difference Jacobian in (amplitude, omega), harmonics frozen
        Eigen::Matrix2d J;
        const double dA = 1e-4 * std::abs(tg.a1);
        const double dW = 1e-5 * tg.omega;
        HarmonicTarget ta = tg;
        ta.a1 += dA;
        const ControlledRun ra = evaluate(ta, false);
        HarmonicTarget tw = tg;
        tw.omega += dW;
        const ControlledRun rw = evaluate(tw, false);
        const ControlledRun r0 = evaluate(tg, false);
        J.col(0) = Eigen::Vector2d(ra.u_cos - r0.u_cos, ra.u_sin - r0.u_sin) / (dA * scale);
        J.col(1) = Eigen::Vector2d(rw.u_cos - r0.u_cos, rw.u_sin - r0.u_sin) / (dW * scale);
        const Eigen::Vector2d F0(r0.u_cos / scale, r0.u_sin / scale);
        Eigen::Vector2d step = J.fullPivLu().solve(-F0);
        if (!step.allFinite())
            throw Error(ErrorKind::NotStabilized, "degenerate control Jacobian at mu = " + fmt(mu));
        // keep steps modest: the loop is only locally contracting
        const double sa = std::abs(step(0)) / (0.2 * std::abs(tg.a1));
        const double sw = std::abs(step(1)) / (0.05 * tg.omega);
        const double shrink = std::max({1.0, sa, sw});
        tg.a1 += step(0) / shrink;
        tg.omega += step(1) / shrink;
        r = evaluate(tg, true);
    }
    if (it == opt.max_newton)
        throw Error(ErrorKind::NotStabilized, "control did not become non-invasive at mu = " + fmt(mu));
    // a vanishing control is only meaningful if the response actually follows the target
    if (std::hypot(r.a(1) - tg.a1, r.b(1)) > 0.1 * std::abs(tg.a1))
        throw Error(ErrorKind::NotStabilized, "response does not follow the target at mu = " + fmt(mu));
    out.newton_iterations = it;
    out.amplitude = tg.a1;
    out.omega = tg.omega;

    // record under the converged control
    const int sub = std::max(1, static_cast<int>(std::ceil(opt.dt / (2.0 * kPi / tg.omega / opt.steps_per_period))));
    const double h = opt.dt / sub;
    const auto n = static_cast<long>(std::llround(opt.record_time / opt.dt));
    std::vector<Eigen::VectorXd> samples;
    samples.reserve(static_cast<std::size_t>(n));
    double u2 = 0.0;
    double y_mean = 0.0;
    std::vector<double> ys;
    std::vector<double> vs;
    for (long j = 0; j < n; ++j) {
        samples.push_back(x);
        const double u = loop.control(tg, x, phi);
        u2 += u * u;
        ys.push_back(x(sys.control_dof));
        vs.push_back(x(sys.control_rate));
        y_mean += x(sys.control_dof);
        for (int k = 0; k < sub; ++k) loop.step(tg, x, phi, h);
    }
    y_mean /= static_cast<double>(n);
    double resp = 0.0;
    for (std::size_t j = 0; j < ys.size(); ++j) {
        const double e = gains.kp * (ys[j] - y_mean);
        const double ed = gains.kd * vs[j];
        resp += e * e + ed * ed;
    }
    out.control_power_ratio = resp > 0.0 ? u2 / resp : std::numeric_limits<double>::infinity();
    if (!(out.control_power_ratio < opt.invasiveness_limit))
        throw Error(ErrorKind::Invasive, "control power ratio " + fmt(out.control_power_ratio) + " at mu = " + fmt(mu));
    out.record = make_record(sys, mu, Stability::Unstable, "stabilized", opt.dt, samples);
    return out;
}

// ---- amplitude-parameterised branch ------------------------------------------------

BranchPoint section_start(const ReferenceSystem& sys, double mu, double settle_time, double h)
{
    Eigen::VectorXd x = rk4_flow(sys.rhs, sys.initial_state, mu, h, std::llround(settle_time / h));
    const int ip = sys.phase_index;
    // first downward zero of the velocity (maximum of the amplitude coordinate)
    std::vector<double> crossings;
    Eigen::VectorXd first;
    double t = 0.0;
    for (long k = 0; k < std::llround(settle_time / h) && crossings.size() < 3; ++k) {
        const Eigen::VectorXd xn = rk4_step(sys.rhs, x, mu, h);
        if (x(ip) > 0.0 && xn(ip) <= 0.0) {
            const double s = x(ip) / (x(ip) - xn(ip));
            crossings.push_back(t + s * h);
            if (first.size() == 0) first = x + s * (xn - x);
        }
        x = xn;
        t += h;
    }
    if (crossings.size() < 3) throw Error(ErrorKind::NoLco, "no oscillation to start from at mu = " + fmt(mu));
    BranchPoint bp;
    bp.mu = mu;
    bp.x0 = first;
    bp.x0(ip) = 0.0;
    bp.amplitude = first(sys.amplitude_index);
    bp.period = 0.5 * (crossings[2] - crossings[0]);
    return bp;
}

BranchPoint solve_at_amplitude(const ReferenceSystem& sys, double amplitude, const BranchPoint& guess,
                               const ShootingOptions& opt)
{
    const int n = sys.dim;
    const int ia = sys.amplitude_index;
    const int ip = sys.phase_index;
    Eigen::VectorXd x = guess.x0;
    x(ia) = amplitude;
    x(ip) = 0.0;
    double T = guess.period;
    double mu = guess.mu;
    auto residual = [&](const Eigen::VectorXd& xs, double Ts, double ms) {
        Eigen::VectorXd r(n + 2);
        r.head(n) = flow(sys, xs, Ts, ms, opt.steps_per_period) - xs;
        r(n) = xs(ip);
        r(n + 1) = xs(ia) - amplitude;
        return r;
    };
    Eigen::VectorXd r = residual(x, T, mu);
    for (int it = 0; it < opt.max_iterations && r.lpNorm<Eigen::Infinity>() >= opt.tolerance; ++it) {
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n + 2, n + 2);
        jac.topLeftCorner(n, n) =
            monodromy(sys, x, T, mu, opt.steps_per_period, opt.fd_step) - Eigen::MatrixXd::Identity(n, n);
        jac.block(0, n, n, 1) = sys.rhs(r.head(n) + x, mu);
        const double dm = 1e-6 * (1.0 + std::abs(mu));
        jac.block(0, n + 1, n, 1) =
            (flow(sys, x, T, mu + dm, opt.steps_per_period) - flow(sys, x, T, mu - dm, opt.steps_per_period)) /
            (2.0 * dm);
        jac(n, ip) = 1.0;
        jac(n + 1, ia) = 1.0;
        const Eigen::VectorXd step = jac.fullPivLu().solve(-r);
        if (!step.allFinite()) break;
        double lambda = 1.0;
        for (int bt = 0; bt < 20; ++bt) {
            const Eigen::VectorXd xt = x + lambda * step.head(n);
            const double Tt = T + lambda * step(n);
            const double mt = mu + lambda * step(n + 1);
            if (Tt > 0.0) {
                const Eigen::VectorXd rt = residual(xt, Tt, mt);
                if (rt.allFinite() && (rt.norm() < r.norm() || bt == 19)) {
                    x = xt;
                    T = Tt;
                    mu = mt;
                    r = rt;
                    break;
                }
            }
            lambda *= 0.5;
        }
    }
    if (!(r.lpNorm<Eigen::Infinity>() < opt.tolerance))
        throw Error(ErrorKind::NoConvergence, "branch point at amplitude " + fmt(amplitude) + " did not converge");
    return {mu, amplitude, T, x};
}

std::vector<BranchPoint> trace_branch(const ReferenceSystem& sys, const BranchPoint& start, double amp_to, int points,
                                      const ShootingOptions& opt)
{
    require(points >= 2, ErrorKind::InvalidArgument, "branch needs at least 2 points");
    std::vector<BranchPoint> out;
    BranchPoint guess = start;
    for (int k = 0; k < points; ++k) {
        const double amp = start.amplitude + (amp_to - start.amplitude) * k / (points - 1);
        BranchPoint bp = solve_at_amplitude(sys, amp, guess, opt);
        // secant predictor for the next point
        if (!out.empty()) {
            const BranchPoint& prev = out.back();
            guess = bp;
            guess.mu = 2.0 * bp.mu - prev.mu;
            guess.period = 2.0 * bp.period - prev.period;
            guess.x0 = 2.0 * bp.x0 - prev.x0;
        } else {
            guess = bp;
        }
        out.push_back(std::move(bp));
    }
    return out;
}

FoldLocation locate_fold(const ReferenceSystem& sys, const std::vector<BranchPoint>& branch,
                         const ShootingOptions& opt)
{
    require(branch.size() >= 3, ErrorKind::InvalidArgument, "branch too short to locate a fold");
    std::size_t k = 0;
    for (std::size_t i = 1; i < branch.size(); ++i)
        if (branch[i].mu < branch[k].mu) k = i;
    if (k == 0 || k + 1 == branch.size())
        throw Error(ErrorKind::NoLco, "traced branch has no interior minimum in mu");
    // golden-section search on mu(amplitude) within the bracketing neighbours
    double a = branch[k - 1].amplitude;
    double b = branch[k + 1].amplitude;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    auto eval = [&](double amp) { return solve_at_amplitude(sys, amp, branch[k], opt); };
    double c = b - g * (b - a);
    double d = a + g * (b - a);
    BranchPoint pc = eval(c);
    BranchPoint pd = eval(d);
    for (int it = 0; it < 30 && std::abs(b - a) > 1e-7 * std::abs(branch[k].amplitude); ++it) {
        if (pc.mu < pd.mu) {
            b = d;
            d = c;
            pd = pc;
            c = b - g * (b - a);
            pc = eval(c);
        } else {
            a = c;
            c = d;
            pc = pd;
            d = a + g * (b - a);
            pd = eval(d);
        }
    }
    const BranchPoint& best = pc.mu < pd.mu ? pc : pd;
    return {best.mu, best.amplitude, best.period};
}

BranchPoint branch_point_at_mu(const ReferenceSystem& sys, const std::vector<BranchPoint>& branch, double mu,
                               Stability side, const ShootingOptions& opt)
{
    require(branch.size() >= 2, ErrorKind::InvalidArgument, "branch too short");
    std::size_t k_min = 0;
    for (std::size_t i = 1; i < branch.size(); ++i)
        if (branch[i].mu < branch[k_min].mu) k_min = i;
    // branch runs from large to small amplitude; the stable side precedes the fold
    const bool descending = branch.front().amplitude > branch.back().amplitude;
    const bool stable_first = descending;
    std::size_t lo = 0;
    std::size_t hi = branch.size() - 1;
    if ((side == Stability::Stable) == stable_first)
        hi = k_min;
    else
        lo = k_min;
    for (std::size_t i = lo; i < hi; ++i) {
        const double m0 = branch[i].mu - mu;
        const double m1 = branch[i + 1].mu - mu;
        if (m0 == 0.0) return branch[i];
        if (m0 * m1 > 0.0) continue;
        // secant in amplitude, kept inside the bracket (bisection fallback)
        double a_lo = branch[i].amplitude;
        double a_hi = branch[i + 1].amplitude;
        double f_lo = m0;
        double f_hi = m1;
        BranchPoint guess = branch[i];
        int side_kept = 0;
        for (int it = 0; it < 60; ++it) {
            double a = a_hi - f_hi * (a_hi - a_lo) / (f_hi - f_lo);
            const double lo_a = std::min(a_lo, a_hi);
            const double hi_a = std::max(a_lo, a_hi);
            if (!std::isfinite(a) || a <= lo_a || a >= hi_a) a = 0.5 * (a_lo + a_hi);
            const BranchPoint bp = solve_at_amplitude(sys, a, guess, opt);
            const double f = bp.mu - mu;
            if (std::abs(f) < 1e-10 * (1.0 + std::abs(mu)) || hi_a - lo_a < 1e-15 * hi_a) return bp;
            // Illinois: halve the stale end so the bracket keeps shrinking from both sides
            if (f * f_lo < 0.0) {
                a_hi = a;
                f_hi = f;
                if (side_kept == 1) f_lo *= 0.5;
                side_kept = 1;
            } else {
                a_lo = a;
                f_lo = f;
                if (side_kept == -1) f_hi *= 0.5;
                side_kept = -1;
            }
            guess = bp;
        }
        throw Error(ErrorKind::NoConvergence, "branch point at mu = " + fmt(mu) + " did not converge");
    }
    throw Error(ErrorKind::NoLco, std::string("traced branch has no ") + to_string(side) + " orbit at mu = " + fmt(mu));
}

// ---- datasets ------------------------------------------------------------------------

DatasetConfig DatasetConfig::vdp_defaults()
{
    DatasetConfig c;
    c.mu = {0.1, 0.28, 0.46, 0.64, 0.82, 1.0};
    c.dt = 0.02;
    c.record_time = 10.0;
    c.settle_time = 100.0;
    c.substeps = 4;
    return c;
}

DatasetConfig DatasetConfig::aero_defaults()
{
    DatasetConfig c;
    c.mu_stable = {15.2, 16.1, 17.0, 17.9};
    c.mu_unstable = {15.2, 16.1, 17.0, 17.9};
    c.dt = 0.001;
    c.record_time = 1.0;
    c.settle_time = 60.0;
    c.substeps = 2;
    return c;
}

namespace {

struct AeroBranchCache {
    std::vector<BranchPoint> branch;
};

ShootingOptions branch_options()
{
    ShootingOptions o;
    o.steps_per_period = 1000;
    o.tolerance = 1e-10;
    o.require_unstable = false;
    return o;
}

// starts on the large stable orbit above every requested parameter
std::vector<BranchPoint> aero_branch(const ReferenceSystem& sys, double mu_start)
{
    const BranchPoint start = section_start(sys, mu_start, 40.0, 5e-4);
    const ShootingOptions o = branch_options();
    BranchPoint s = solve_at_amplitude(sys, start.amplitude, start, o);
    return trace_branch(sys, s, 0.006, 48, o);
}

LcoRecord aero_unstable(const ReferenceSystem& sys, const std::vector<BranchPoint>& branch, double mu,
                        const DatasetConfig& cfg)
{
    const BranchPoint bp = branch_point_at_mu(sys, branch, mu, Stability::Unstable, branch_options());
    ShootingOptions so;
    if (cfg.unstable_method == "pd") {
        // target seed: tracked-coordinate fundamental of the continuation guess, detuned
        const PeriodicOrbit guess{mu, bp.period, bp.x0, {}, 0.0, 0};
        const LcoRecord one = sample_periodic_orbit(sys, guess, bp.period / 256.0, bp.period * (1.0 - 1e-9),
                                                    Stability::Unstable, "shooting");
        double c = 0.0;
        double s = 0.0;
        for (Eigen::Index j = 0; j < one.samples(); ++j) {
            const double ph = 2.0 * kPi * static_cast<double>(j) / static_cast<double>(one.samples());
            c += one.states(j, sys.control_dof) * std::cos(ph);
            s += one.states(j, sys.control_dof) * std::sin(ph);
        }
        const double amp = 2.0 * std::hypot(c, s) / static_cast<double>(one.samples());
        PdOptions po;
        po.dt = cfg.dt;
        po.record_time = cfg.record_time;
        try {
            PdResult r = find_unstable_lco_pd(sys, mu, cfg.gains, {1.05 * amp, 1.02 * 2.0 * kPi / bp.period}, po);
            return r.record;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NotStabilized && e.kind() != ErrorKind::Invasive) throw;
        }
    }
    return find_unstable_lco_shooting(sys, mu, bp.period, bp.x0, cfg.dt, cfg.record_time, so);
}

LcoRecord aero_stable(const ReferenceSystem& sys, const std::vector<BranchPoint>& branch, double mu,
                      const DatasetConfig& cfg)
{
    // start just off the continued orbit: the basin is thin near the fold
    const BranchPoint bp = branch_point_at_mu(sys, branch, mu, Stability::Stable, branch_options());
    SimulationOptions so;
    so.dt = cfg.dt;
    so.record_time = cfg.record_time;
    so.settle_time = cfg.settle_time;
    so.substeps = cfg.substeps;
    return simulate_lco_from(sys, mu, bp.x0 * 1.001, so);
}

}  // namespace

LcoRecord aero_record(const ReferenceSystem& sys, double mu, Stability stability, const DatasetConfig& cfg)
{
    const auto branch = aero_branch(sys, std::max(17.0, mu + 0.3));
    return stability == Stability::Stable ? aero_stable(sys, branch, mu, cfg) : aero_unstable(sys, branch, mu, cfg);
}

TrainingDataset make_reference_dataset(const std::string& which, const DatasetConfig& cfg)
{
    TrainingDataset data;
    if (which == "vdp") {
        const ReferenceSystem sys = vdp_system();
        SimulationOptions so;
        so.dt = cfg.dt;
        so.record_time = cfg.record_time;
        so.settle_time = cfg.settle_time;
        so.substeps = cfg.substeps;
        int idx = 0;
        for (double mu : cfg.mu) {
            LcoRecord rec = simulate_lco(sys, mu, so);
            rec.id = "vdp_s" + std::to_string(idx++);
            data.records.push_back(std::move(rec));
        }
        data.m = 2;
        data.state_names = sys.state_names;
        data.units = sys.units;
        data.mu_units = sys.mu_units;
    } else if (which == "aero") {
        const ReferenceSystem sys = aero_system({}, cfg.observe_w);
        double top = 17.0;
        for (double m : cfg.mu_stable) top = std::max(top, m + 0.3);
        for (double m : cfg.mu_unstable) top = std::max(top, m + 0.3);
        const auto branch = aero_branch(sys, top);
        int idx = 0;
        for (double mu : cfg.mu_stable) {
            LcoRecord rec = aero_stable(sys, branch, mu, cfg);
            rec.id = "aero_s" + std::to_string(idx++);
            data.records.push_back(std::move(rec));
        }
        idx = 0;
        for (double mu : cfg.mu_unstable) {
            LcoRecord rec = aero_unstable(sys, branch, mu, cfg);
            rec.id = "aero_u" + std::to_string(idx++);
            data.records.push_back(std::move(rec));
        }
        data.m = static_cast<int>(sys.observed.size());
        data.state_names = sys.state_names;
        data.units = sys.units;
        data.mu_units = sys.mu_units;
    } else {
        throw Error(ErrorKind::InvalidArgument, "unknown system '" + which + "' (expected vdp or aero)");
    }
    data.validate();
    return data;
}

}  // namespace hopf
