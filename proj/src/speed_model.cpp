#include "hopf/speed_model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "hopf/error.hpp"
#include "hopf/model.hpp"
#include "hopf/orbit_geometry.hpp"

namespace hopf {

namespace {

std::vector<int> with_hidden(int n_in, const std::vector<int>& hidden, int n_out)
{
    std::vector<int> sizes{n_in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(n_out);
    return sizes;
}

// Omega for a batch of records (one column each) at phases `theta`.
// Fourier mode caches the per-record coefficient vectors NN(r, mu).
class BatchOmega {
public:
    BatchOmega(const SpeedModel& s, Eigen::VectorXd radius, const Eigen::VectorXd& mu)
        : s_(s), radius_(std::move(radius)), mu_((mu.array() - s.mu_center) / s.mu_scale)
    {
        if (s_.mode == SpeedMode::FourierCorrection) {
            Eigen::MatrixXd in(2, radius_.size());
            in.row(0) = radius_.transpose();
            in.row(1) = mu_.transpose();
            coef_ = s_.nn.forward(in, coef_tape_);
            coef_bar_ = Eigen::MatrixXd::Zero(coef_.rows(), coef_.cols());
        }
    }

    Eigen::VectorXd value(const Eigen::VectorXd& theta) const
    {
        const Eigen::Index n = theta.size();
        Eigen::VectorXd out(n);
        if (s_.mode == SpeedMode::ConstantCorrection) {
            const Eigen::MatrixXd nn = s_.nn.forward(inputs(theta));
            for (Eigen::Index i = 0; i < n; ++i) out(i) = s_.omega0 + nn(0, i);
        } else {
            Eigen::RowVectorXd basis(2 * s_.n_h_speed + 1);
            for (Eigen::Index i = 0; i < n; ++i) {
                fourier_basis(theta(i), s_.n_h_speed, basis);
                out(i) = s_.omega0 + basis.dot(coef_.col(i));
            }
        }
        return out;
    }

    // Cotangent `omega_bar` on Omega(theta): accumulates parameter gradients
    // ([omega0, nn...]) and returns the cotangent on theta.
    Eigen::VectorXd vjp(const Eigen::VectorXd& theta, const Eigen::VectorXd& omega_bar, Eigen::VectorXd& grad)
    {
        const Eigen::Index n = theta.size();
        grad(0) += omega_bar.sum();
        Eigen::VectorXd theta_bar(n);
        if (s_.mode == SpeedMode::ConstantCorrection) {
            Mlp::Tape tape;
            s_.nn.forward(inputs(theta), tape);
            nn_grad_.resize(0);
            const Eigen::MatrixXd in_bar = s_.nn.backward(tape, omega_bar.transpose(), nn_grad_);
            grad.tail(nn_grad_.size()) += nn_grad_;
            for (Eigen::Index i = 0; i < n; ++i)
                theta_bar(i) = radius_(i) * (-std::sin(theta(i)) * in_bar(0, i) + std::cos(theta(i)) * in_bar(1, i));
        } else {
            const int nb = 2 * s_.n_h_speed + 1;
            Eigen::RowVectorXd basis(nb);
            Eigen::RowVectorXd dbasis(nb);
            for (Eigen::Index i = 0; i < n; ++i) {
                fourier_basis(theta(i), s_.n_h_speed, basis);
                fourier_basis_derivative(theta(i), s_.n_h_speed, dbasis);
                coef_bar_.col(i) += omega_bar(i) * basis.transpose();
                theta_bar(i) = omega_bar(i) * dbasis.dot(coef_.col(i));
            }
        }
        return theta_bar;
    }

    // Flushes the Fourier coefficient cotangents through the network.
    void finish(Eigen::VectorXd& grad)
    {
        if (s_.mode != SpeedMode::FourierCorrection) return;
        nn_grad_.resize(0);
        s_.nn.backward(coef_tape_, coef_bar_, nn_grad_);
        grad.tail(nn_grad_.size()) += nn_grad_;
    }

private:
    Eigen::MatrixXd inputs(const Eigen::VectorXd& theta) const
    {
        Eigen::MatrixXd in(3, theta.size());
        for (Eigen::Index i = 0; i < theta.size(); ++i)
            in.col(i) << radius_(i) * std::cos(theta(i)), radius_(i) * std::sin(theta(i)), mu_(i);
        return in;
    }

    const SpeedModel& s_;
    Eigen::VectorXd radius_;
    Eigen::VectorXd mu_;
    Eigen::MatrixXd coef_;
    Mlp::Tape coef_tape_;
    Eigen::MatrixXd coef_bar_;
    Eigen::VectorXd nn_grad_;
};

}  // namespace

const char* to_string(SpeedMode m)
{
    return m == SpeedMode::ConstantCorrection ? "constant_correction" : "fourier_correction";
}

SpeedMode speed_mode_from_string(const std::string& s)
{
    if (s == "constant_correction") return SpeedMode::ConstantCorrection;
    if (s == "fourier_correction") return SpeedMode::FourierCorrection;
    throw Error(ErrorKind::InvalidArgument, "unknown speed mode '" + s + "'");
}

SpeedModel SpeedModel::constant(double omega0, const std::vector<int>& hidden)
{
    SpeedModel s;
    s.omega0 = omega0;
    s.mode = SpeedMode::ConstantCorrection;
    s.n_h_speed = 0;
    s.nn = Mlp(with_hidden(3, hidden, 1));
    return s;
}

SpeedModel SpeedModel::fourier(double omega0, int n_h_speed, const std::vector<int>& hidden)
{
    require(n_h_speed >= 0, ErrorKind::InvalidArgument, "speed harmonic count must be >= 0");
    SpeedModel s;
    s.omega0 = omega0;
    s.mode = SpeedMode::FourierCorrection;
    s.n_h_speed = n_h_speed;
    s.nn = Mlp(with_hidden(2, hidden, 2 * n_h_speed + 1));
    return s;
}

void SpeedModel::validate() const
{
    require(std::isfinite(omega0), ErrorKind::InvalidArgument, "omega0 must be finite");
    require(nn.all_finite(), ErrorKind::InvalidArgument, "speed network has non-finite weights");
    require(std::isfinite(mu_center) && std::isfinite(mu_scale) && mu_scale > 0.0, ErrorKind::InvalidArgument,
            "mu normalization must be finite with a positive scale");
    if (mode == SpeedMode::ConstantCorrection)
        require(nn.input_size() == 3 && nn.output_size() == 1, ErrorKind::InvalidArgument,
                "constant-mode speed network must map 3 inputs to 1 output");
    else
        require(nn.input_size() == 2 && nn.output_size() == 2 * n_h_speed + 1, ErrorKind::InvalidArgument,
                "fourier-mode speed network must map 2 inputs to 2 n_h + 1 outputs");
}

double omega_eval(const SpeedModel& s, double r, double theta, double mu)
{
    BatchOmega omega(s, Eigen::VectorXd::Constant(1, r), Eigen::VectorXd::Constant(1, mu));
    return omega.value(Eigen::VectorXd::Constant(1, theta))(0);
}

std::vector<double> integrate_phase(const SpeedModel& s, double r, double mu, double theta0,
                                    std::span<const double> t_grid, int substeps)
{
    require(!t_grid.empty(), ErrorKind::InvalidArgument, "time grid is empty");
    require(substeps >= 1, ErrorKind::InvalidArgument, "substeps must be >= 1");
    for (std::size_t j = 1; j < t_grid.size(); ++j)
        require(t_grid[j] > t_grid[j - 1], ErrorKind::InvalidArgument, "time grid must be strictly increasing");
    BatchOmega omega(s, Eigen::VectorXd::Constant(1, r), Eigen::VectorXd::Constant(1, mu));
    auto f = [&](double th, std::size_t step) {
        const double w = omega.value(Eigen::VectorXd::Constant(1, th))(0);
        if (!std::isfinite(w))
            throw Error(ErrorKind::NumericalFailure, "non-finite speed at step " + std::to_string(step));
        if (w <= 0.0)
            throw Error(ErrorKind::NonPositiveSpeed, "Omega <= 0 at step " + std::to_string(step));
        return w;
    };
    std::vector<double> theta(t_grid.size());
    theta[0] = theta0;
    double th = theta0;
    for (std::size_t j = 1; j < t_grid.size(); ++j) {
        const double h = (t_grid[j] - t_grid[j - 1]) / substeps;
        for (int k = 0; k < substeps; ++k) {
            const double k1 = f(th, j);
            const double k2 = f(th + 0.5 * h * k1, j);
            const double k3 = f(th + 0.5 * h * k2, j);
            const double k4 = f(th + h * k3, j);
            th += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if (!std::isfinite(th)) throw Error(ErrorKind::NumericalFailure, "phase diverged at step " + std::to_string(j));
        theta[j] = th;
    }
    return theta;
}

PredictedTimeSeries predict_timeseries(const HybridModel& model, double mu, Stability stability,
                                       const Eigen::Vector2d& z_init, std::span<const double> t_grid, int substeps)
{
    const Eigen::Vector2d u0 = match_initial_phase(model.map, model.normal_form, z_init, mu, stability);
    PredictedTimeSeries out;
    out.mu = mu;
    out.radius = u0.norm();
    out.t.assign(t_grid.begin(), t_grid.end());
    out.theta = integrate_phase(model.speed, out.radius, mu, std::atan2(u0.y(), u0.x()), t_grid, substeps);
    const auto m = 2 + static_cast<Eigen::Index>(model.map.aux.size());
    out.z.resize(static_cast<Eigen::Index>(t_grid.size()), m);
    for (std::size_t j = 0; j < out.theta.size(); ++j) {
        const double th = out.theta[j];
        out.z.row(static_cast<Eigen::Index>(j)) =
            map_observation(model.map, out.radius * std::cos(th), out.radius * std::sin(th), mu).transpose();
    }
    return out;
}

double predicted_period(const HybridModel& model, double mu, Stability stability, int samples)
{
    require(samples >= 8, ErrorKind::InvalidArgument, "period quadrature needs at least 8 samples");
    const auto branch = find_branch(model.normal_form, mu, stability);
    if (!branch)
        throw Error(ErrorKind::MissingBranch,
                    std::string("no ") + to_string(stability) + " LCO at mu = " + std::to_string(mu));
    // trapezoid on a periodic integrand
    double sum = 0.0;
    for (int k = 0; k < samples; ++k) {
        const double th = 2.0 * std::numbers::pi * k / samples;
        const double w = omega_eval(model.speed, branch->radius, th, mu);
        if (!(w > 0.0)) throw Error(ErrorKind::NonPositiveSpeed, "speed is not positive on the orbit at mu = " + std::to_string(mu));
        sum += 1.0 / w;
    }
    return 2.0 * std::numbers::pi * sum / samples;
}

std::vector<SpeedTarget> speed_targets(const TrainingDataset& data, const CoordinateMap& map,
                                       const NormalFormParams& p, int downsample_limit)
{
    std::vector<SpeedTarget> out;
    out.reserve(data.records.size());
    for (const auto& full : data.records) {
        const LcoRecord rec = downsample_limit > 0 ? downsample(full, downsample_limit) : full;
        const Eigen::Vector2d z0(rec.states(0, 0), rec.states(0, 1));
        const Eigen::Vector2d u0 = match_initial_phase(map, p, z0, rec.mu, rec.stability);
        SpeedTarget t;
        t.id = rec.id;
        t.mu = rec.mu;
        t.radius = u0.norm();
        t.theta0 = std::atan2(u0.y(), u0.x());
        t.t = rec.t;
        t.z = rec.states.leftCols<2>().transpose();
        out.push_back(std::move(t));
    }
    return out;
}

SpeedLossTerms speed_loss_terms(const std::vector<SpeedTarget>& targets, const CoordinateMap& map,
                                const SpeedModel& speed, const SpeedLossOptions& opt, Eigen::VectorXd* gradient)
{
    require(opt.substeps >= 1, ErrorKind::InvalidArgument, "substeps must be >= 1");
    SpeedLossTerms terms;
    const auto n_rec = static_cast<Eigen::Index>(targets.size());
    if (gradient) *gradient = Eigen::VectorXd::Zero(1 + speed.nn.parameter_count());
    if (n_rec == 0) return terms;

    Eigen::VectorXd radius(n_rec);
    Eigen::VectorXd mu(n_rec);
    Eigen::VectorXd h(n_rec);
    std::size_t n_max = 0;
    for (Eigen::Index i = 0; i < n_rec; ++i) {
        const auto& tg = targets[static_cast<std::size_t>(i)];
        require(tg.t.size() >= 2 && static_cast<Eigen::Index>(tg.t.size()) == tg.z.cols(), ErrorKind::InvalidArgument,
                "speed target '" + tg.id + "' has a malformed time grid");
        radius(i) = tg.radius;
        mu(i) = tg.mu;
        h(i) = (tg.t[1] - tg.t[0]) / opt.substeps;
        n_max = std::max(n_max, tg.t.size());
    }

    BatchOmega omega(speed, radius, mu);
    const int stages_per_step = 4 * opt.substeps;
    const std::size_t steps = n_max - 1;
    // stage inputs, [step][stage] -> per-record phase
    std::vector<Eigen::VectorXd> stage_x(steps * static_cast<std::size_t>(stages_per_step));
    std::vector<Eigen::VectorXd> stage_clamped(stage_x.size());
    Eigen::MatrixXd theta(n_rec, static_cast<Eigen::Index>(n_max));

    auto eval = [&](const Eigen::VectorXd& x, std::size_t slot, std::size_t step) {
        Eigen::VectorXd w = omega.value(x);
        Eigen::VectorXd clamped = Eigen::VectorXd::Zero(w.size());
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            if (!std::isfinite(w(i)))
                throw Error(ErrorKind::NumericalFailure,
                            "non-finite speed for record '" + targets[static_cast<std::size_t>(i)].id + "' at step " +
                                std::to_string(step));
            if (w(i) <= opt.clamp && step < targets[static_cast<std::size_t>(i)].t.size() - 1) {
                if (!opt.training)
                    throw Error(ErrorKind::NonPositiveSpeed, "Omega <= 0 for record '" +
                                                                 targets[static_cast<std::size_t>(i)].id +
                                                                 "' at step " + std::to_string(step));
                terms.total += opt.clamp_penalty * (opt.clamp - w(i));
                ++terms.clamped_stages;
                clamped(i) = 1.0;
                w(i) = opt.clamp;
            }
        }
        stage_x[slot] = x;
        stage_clamped[slot] = std::move(clamped);
        return w;
    };

    Eigen::VectorXd th(n_rec);
    for (Eigen::Index i = 0; i < n_rec; ++i) th(i) = targets[static_cast<std::size_t>(i)].theta0;
    theta.col(0) = th;
    for (std::size_t n = 0; n < steps; ++n) {
        for (int sub = 0; sub < opt.substeps; ++sub) {
            const std::size_t base = n * static_cast<std::size_t>(stages_per_step) + static_cast<std::size_t>(4 * sub);
            const Eigen::VectorXd k1 = eval(th, base, n);
            const Eigen::VectorXd k2 = eval(th + 0.5 * h.cwiseProduct(k1), base + 1, n);
            const Eigen::VectorXd k3 = eval(th + 0.5 * h.cwiseProduct(k2), base + 2, n);
            const Eigen::VectorXd k4 = eval(th + h.cwiseProduct(k3), base + 3, n);
            th += (h / 6.0).cwiseProduct(k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if (!th.allFinite()) throw Error(ErrorKind::NumericalFailure, "phase diverged at step " + std::to_string(n + 1));
        theta.col(static_cast<Eigen::Index>(n) + 1) = th;
    }

    // sample residuals and their phase cotangents
    Eigen::MatrixXd theta_bar_loss = Eigen::MatrixXd::Zero(n_rec, static_cast<Eigen::Index>(n_max));
    terms.per_record.assign(targets.size(), 0.0);
    for (Eigen::Index i = 0; i < n_rec; ++i) {
        const auto& tg = targets[static_cast<std::size_t>(i)];
        const auto n_s = static_cast<Eigen::Index>(tg.t.size());
        Eigen::Matrix3Xd inputs(3, n_s);
        for (Eigen::Index j = 0; j < n_s; ++j)
            inputs.col(j) << radius(i) * std::cos(theta(i, j)), radius(i) * std::sin(theta(i, j)), map.scaled_mu(mu(i));
        Mlp::Tape tape;
        Eigen::Matrix2Xd zhat = map.linear.rows * inputs;
        zhat.colwise() += map.offset.vec();
        zhat += map.nn.forward(Eigen::MatrixXd(inputs), tape);
        const Eigen::Matrix2Xd diff = zhat - tg.z;
        Eigen::Matrix2Xd e(2, n_s);
        double sum = 0.0;
        for (Eigen::Index j = 0; j < n_s; ++j) {
            const double nrm = diff.col(j).norm();
            sum += nrm;
            e.col(j) = nrm > 0.0 ? Eigen::Vector2d(diff.col(j) / nrm) : Eigen::Vector2d::Zero();
        }
        terms.per_record[static_cast<std::size_t>(i)] = sum;
        terms.total += sum;
        if (!gradient) continue;
        Eigen::VectorXd unused;
        const Eigen::MatrixXd in_bar = map.linear.rows.transpose() * e + map.nn.backward(tape, e, unused);
        for (Eigen::Index j = 0; j < n_s; ++j)
            theta_bar_loss(i, j) = radius(i) * (-std::sin(theta(i, j)) * in_bar(0, j) + std::cos(theta(i, j)) * in_bar(1, j));
    }
    if (!gradient) return terms;

    // reverse pass through the RK4 steps
    Eigen::VectorXd& grad = *gradient;
    Eigen::VectorXd lambda = theta_bar_loss.col(static_cast<Eigen::Index>(steps));
    auto stage_vjp = [&](std::size_t slot, const Eigen::VectorXd& k_bar) {
        const Eigen::VectorXd& clamped = stage_clamped[slot];
        Eigen::VectorXd w_bar(k_bar.size());
        for (Eigen::Index i = 0; i < k_bar.size(); ++i) w_bar(i) = clamped(i) > 0.0 ? -opt.clamp_penalty : k_bar(i);
        return omega.vjp(stage_x[slot], w_bar, grad);
    };
    for (std::size_t n = steps; n-- > 0;) {
        // records whose grid ended before this step carry no cotangent
        for (Eigen::Index i = 0; i < n_rec; ++i)
            if (n + 1 >= targets[static_cast<std::size_t>(i)].t.size()) lambda(i) = 0.0;
        for (int sub = opt.substeps; sub-- > 0;) {
            const std::size_t base = n * static_cast<std::size_t>(stages_per_step) + static_cast<std::size_t>(4 * sub);
            const Eigen::VectorXd k4_bar = lambda.cwiseProduct(h) / 6.0;
            Eigen::VectorXd k3_bar = lambda.cwiseProduct(h) / 3.0;
            Eigen::VectorXd k2_bar = lambda.cwiseProduct(h) / 3.0;
            Eigen::VectorXd k1_bar = lambda.cwiseProduct(h) / 6.0;
            Eigen::VectorXd th_bar = lambda;
            const Eigen::VectorXd x4_bar = stage_vjp(base + 3, k4_bar);
            th_bar += x4_bar;
            k3_bar += h.cwiseProduct(x4_bar);
            const Eigen::VectorXd x3_bar = stage_vjp(base + 2, k3_bar);
            th_bar += x3_bar;
            k2_bar += 0.5 * h.cwiseProduct(x3_bar);
            const Eigen::VectorXd x2_bar = stage_vjp(base + 1, k2_bar);
            th_bar += x2_bar;
            k1_bar += 0.5 * h.cwiseProduct(x2_bar);
            th_bar += stage_vjp(base, k1_bar);
            lambda = th_bar;
        }
        lambda += theta_bar_loss.col(static_cast<Eigen::Index>(n));
    }
    omega.finish(grad);
    return terms;
}

double speed_loss(const TrainingDataset& data, const HybridModel& model)
{
    const auto targets = speed_targets(data, model.map, model.normal_form);
    return speed_loss_terms(targets, model.map, model.speed, {}).total;
}

}  // namespace hopf
