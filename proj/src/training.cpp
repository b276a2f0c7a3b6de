#include "hopf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <set>

#include "hopf/error.hpp"
#include "hopf/optim.hpp"
#include "hopf/shape_loss.hpp"

namespace hopf {

using nlohmann::json;

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void zero_last_layer(Mlp& net)
{
    const int last = net.layer_count() - 1;
    net.weights(last).setZero();
    net.biases(last).setZero();
}

std::vector<int> with_hidden(int in, const std::vector<int>& hidden, int out)
{
    std::vector<int> s{in};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(out);
    return s;
}

// ADAM then L-BFGS from the ADAM result; either may be skipped.
Eigen::VectorXd run_schedule(const Objective& f, Eigen::VectorXd x, const StageSchedule& s, StageTrace& trace)
{
    if (s.adam_iters > 0) {
        auto r = adam_minimize(f, std::move(x), s.adam_iters, s.adam_lr);
        trace.adam = std::move(r.trace);
        x = std::move(r.x);
    }
    if (s.lbfgs_iters > 0) {
        LbfgsOptions opt;
        opt.max_iterations = s.lbfgs_iters;
        opt.step_scale = s.lbfgs_step;
        auto r = lbfgs_minimize(f, std::move(x), opt);
        trace.lbfgs = std::move(r.trace);
        trace.lbfgs_stop = r.stop_reason;
        x = std::move(r.x);
    }
    return x;
}

void scale_trace(StageTrace& t, double k)
{
    for (double& v : t.adam) v *= k;
    for (double& v : t.lbfgs) v *= k;
}

json trace_json(const StageTrace& t)
{
    return {{"adam", t.adam}, {"lbfgs", t.lbfgs}, {"lbfgs_stop", t.lbfgs_stop}};
}

json schedule_json(const StageSchedule& s)
{
    return {{"adam_iters", s.adam_iters}, {"adam_lr", s.adam_lr}, {"lbfgs_iters", s.lbfgs_iters},
            {"lbfgs_step", s.lbfgs_step}};
}

template <class T>
T field(const json& j, const std::string& key, const std::string& where)
{
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        if (!j.contains(key)) throw Error(ErrorKind::InvalidArgument, "missing config field '" + where + key + "'");
        throw Error(ErrorKind::InvalidArgument, "config field '" + where + key + "' has the wrong type");
    }
}

template <class T>
void optional_field(const json& j, const std::string& key, T& out)
{
    if (j.contains(key)) out = field<T>(j, key, "");
}

template <class T>
void nullable_field(const json& j, const std::string& key, std::optional<T>& out)
{
    if (!j.contains(key) || j.at(key).is_null()) return;
    out = field<T>(j, key, "");
}

StageSchedule schedule_from(const json& j, const std::string& name)
{
    if (!j.contains(name)) throw Error(ErrorKind::InvalidArgument, "missing config field '" + name + "'");
    const json& s = j.at(name);
    if (!s.is_object()) throw Error(ErrorKind::InvalidArgument, "config field '" + name + "' must be an object");
    const std::string where = name + ".";
    StageSchedule out;
    out.adam_iters = field<int>(s, "adam_iters", where);
    out.adam_lr = field<double>(s, "adam_lr", where);
    out.lbfgs_iters = field<int>(s, "lbfgs_iters", where);
    out.lbfgs_step = field<double>(s, "lbfgs_step", where);
    for (const auto& [k, v] : s.items())
        if (k != "adam_iters" && k != "adam_lr" && k != "lbfgs_iters" && k != "lbfgs_step")
            throw Error(ErrorKind::InvalidArgument, "unknown config field '" + where + k + "'");
    return out;
}

void check_schedule(const StageSchedule& s, const std::string& name)
{
    require(s.adam_iters >= 0 && s.lbfgs_iters >= 0, ErrorKind::InvalidArgument,
            name + " iteration counts must be >= 0");
    require(std::isfinite(s.adam_lr) && s.adam_lr > 0.0, ErrorKind::InvalidArgument,
            name + ".adam_lr must be positive");
    require(std::isfinite(s.lbfgs_step) && s.lbfgs_step > 0.0, ErrorKind::InvalidArgument,
            name + ".lbfgs_step must be positive");
}

std::pair<double, double> mu_range(const TrainingDataset& data)
{
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& r : data.records) {
        lo = std::min(lo, r.mu);
        hi = std::max(hi, r.mu);
    }
    return {lo, hi};
}

// Width used by the initial-guess heuristics; never zero.
double mu_spread(const TrainingDataset& data)
{
    const auto [lo, hi] = mu_range(data);
    const double w = hi - lo;
    return w > 0.0 ? w : std::max(0.1 * std::abs(hi), 0.1);
}

NormalFormParams make_form(Criticality c, double mu0, double a2)
{
    return c == Criticality::Subcritical ? NormalFormParams::subcritical(mu0, a2)
                                         : NormalFormParams::supercritical(mu0, a2);
}

}  // namespace

// NN inputs on a disk at evenly spaced mu; radius from the initial normal form
Eigen::Matrix3Xd fold_grid(const TrainingDataset& data, const NormalFormParams& nf, const CoordinateMap& map)
{
    constexpr int kMus = 9, kRadii = 12, kAngles = 32;
    const auto [lo, hi] = mu_range(data);
    double r_max = 0.0;
    for (int j = 0; j < kMus; ++j)
        for (const auto& s : lco_radii(nf, lo + (hi - lo) * j / (kMus - 1))) r_max = std::max(r_max, s.radius);
    if (r_max == 0.0) r_max = 1.0;
    r_max *= 1.2;
    Eigen::Matrix3Xd pts(3, kMus * (1 + kRadii * kAngles));
    Eigen::Index c = 0;
    for (int j = 0; j < kMus; ++j) {
        const double mu = map.scaled_mu(lo + (hi - lo) * j / (kMus - 1));
        pts.col(c++) << 0.0, 0.0, mu;
        for (int i = 1; i <= kRadii; ++i)
            for (int k = 0; k < kAngles; ++k) {
                const double r = r_max * i / kRadii, phi = 2.0 * std::numbers::pi * (k + 0.5 * (i % 2)) / kAngles;
                pts.col(c++) << r * std::cos(phi), r * std::sin(phi), mu;
            }
    }
    return pts;
}

// mean of weight * max(0, margin - sign(det L) det J / |det L|)^2, J by central differences of the NN
double fold_penalty(const CoordinateMap& map, const Eigen::Matrix3Xd& pts, double margin, double weight,
                    Eigen::VectorXd& grad_nn)
{
    constexpr double h = 1e-4;
    const Eigen::Index n = pts.cols();
    Eigen::MatrixXd x(3, 4 * n);
    for (int j = 0; j < 2; ++j) {
        x.middleCols(2 * j * n, n) = pts;
        x.middleCols((2 * j + 1) * n, n) = pts;
        x.row(j).segment(2 * j * n, n).array() += h;
        x.row(j).segment((2 * j + 1) * n, n).array() -= h;
    }
    Mlp::Tape tape;
    const Eigen::MatrixXd y = map.nn.forward(x, tape);
    const Eigen::Matrix2d lin = map.linear.block();
    const double dl = lin.determinant();
    if (dl == 0.0) return 0.0;
    const double sgn = dl > 0.0 ? 1.0 : -1.0, scale = std::abs(dl);

    Eigen::MatrixXd up = Eigen::MatrixXd::Zero(2, 4 * n);
    double loss = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        Eigen::Matrix2d jac = lin;
        jac.col(0) += (y.col(k) - y.col(n + k)) / (2.0 * h);
        jac.col(1) += (y.col(2 * n + k) - y.col(3 * n + k)) / (2.0 * h);
        const double gap = margin - sgn * jac.determinant() / scale;
        if (gap <= 0.0) continue;
        loss += weight * gap * gap / static_cast<double>(n);
        const double dd = -2.0 * weight * gap * sgn / (scale * static_cast<double>(n) * 2.0 * h);
        const Eigen::Vector2d c0(jac(1, 1), -jac(0, 1)), c1(-jac(1, 0), jac(0, 0));
        up.col(k) = dd * c0;
        up.col(n + k) = -dd * c0;
        up.col(2 * n + k) = dd * c1;
        up.col(3 * n + k) = -dd * c1;
    }
    if (loss > 0.0) map.nn.backward(tape, up, grad_nn);
    return loss;
}

// ---- config ------------------------------------------------------------------

void TrainingConfig::validate() const
{
    require(n_h >= 1, ErrorKind::InvalidArgument, "n_h must be >= 1");
    require(n_points >= 2 * n_h + 1, ErrorKind::InvalidArgument, "n_points must be >= 2 n_h + 1");
    check_schedule(stage1, "stage1");
    check_schedule(stage2, "stage2");
    check_schedule(stage3, "stage3");
    require(downsample >= 2, ErrorKind::InvalidArgument, "downsample must be >= 2");
    require(nonsingular_floor >= 0.0 && nonsingular_weight >= 0.0, ErrorKind::InvalidArgument,
            "nonsingularity penalty settings must be >= 0");
    require(fold_margin >= 0.0 && fold_weight >= 0.0, ErrorKind::InvalidArgument,
            "fold penalty settings must be >= 0");
    for (int h : map_hidden) require(h >= 1, ErrorKind::InvalidArgument, "map_hidden sizes must be >= 1");
    for (int h : speed_hidden) require(h >= 1, ErrorKind::InvalidArgument, "speed_hidden sizes must be >= 1");
    require(n_h_speed >= 0, ErrorKind::InvalidArgument, "n_h_speed must be >= 0");
    require(substeps >= 1, ErrorKind::InvalidArgument, "substeps must be >= 1");
    require(aux_ridge >= 0.0, ErrorKind::InvalidArgument, "aux_ridge must be >= 0");
    if (mu0_init) require(std::isfinite(*mu0_init), ErrorKind::InvalidArgument, "mu0_init must be finite");
    if (a2_init) {
        require(std::isfinite(*a2_init), ErrorKind::InvalidArgument, "a2_init must be finite");
        if (criticality == Criticality::Subcritical)
            require(*a2_init > 0.0, ErrorKind::InvalidArgument, "subcritical a2_init must be > 0");
        else
            require(*a2_init < 0.0, ErrorKind::InvalidArgument, "supercritical a2_init must be < 0");
    }
}

json TrainingConfig::to_json() const
{
    auto opt = [](const auto& o) -> json { return o ? json(*o) : json(nullptr); };
    return {
        {"criticality", to_string(criticality)},
        {"n_h", n_h},
        {"n_points", n_points},
        {"stage1", schedule_json(stage1)},
        {"stage2", schedule_json(stage2)},
        {"stage3", schedule_json(stage3)},
        {"seed", seed},
        {"mu0_init", opt(mu0_init)},
        {"mu_upper_bound", opt(mu_upper_bound)},
        {"a2_init", opt(a2_init)},
        {"fit_a2", opt(fit_a2)},
        {"downsample", downsample},
        {"nonsingular_floor", nonsingular_floor},
        {"nonsingular_weight", nonsingular_weight},
        {"fold_margin", fold_margin},
        {"fold_weight", fold_weight},
        {"map_hidden", map_hidden},
        {"speed_mode", to_string(speed_mode)},
        {"n_h_speed", n_h_speed},
        {"speed_hidden", speed_hidden},
        {"substeps", substeps},
        {"aux_ridge", aux_ridge},
    };
}

TrainingConfig TrainingConfig::from_json(const json& j)
{
    require(j.is_object(), ErrorKind::InvalidArgument, "training config must be a JSON object");
    static const std::set<std::string> known{
        "criticality", "n_h", "n_points", "stage1", "stage2", "stage3", "seed", "mu0_init", "mu_upper_bound",
        "a2_init", "fit_a2", "downsample", "nonsingular_floor", "nonsingular_weight", "fold_margin", "fold_weight", "map_hidden",
        "speed_mode", "n_h_speed", "speed_hidden", "substeps", "aux_ridge"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw Error(ErrorKind::InvalidArgument, "unknown config field '" + k + "'");

    TrainingConfig c;
    c.criticality = criticality_from_string(field<std::string>(j, "criticality", ""));
    c.seed = field<std::uint64_t>(j, "seed", "");
    c.stage1 = schedule_from(j, "stage1");
    c.stage2 = schedule_from(j, "stage2");
    c.stage3 = schedule_from(j, "stage3");
    optional_field(j, "n_h", c.n_h);
    optional_field(j, "n_points", c.n_points);
    nullable_field(j, "mu0_init", c.mu0_init);
    nullable_field(j, "mu_upper_bound", c.mu_upper_bound);
    nullable_field(j, "a2_init", c.a2_init);
    nullable_field(j, "fit_a2", c.fit_a2);
    optional_field(j, "downsample", c.downsample);
    optional_field(j, "nonsingular_floor", c.nonsingular_floor);
    optional_field(j, "nonsingular_weight", c.nonsingular_weight);
    optional_field(j, "fold_margin", c.fold_margin);
    optional_field(j, "fold_weight", c.fold_weight);
    optional_field(j, "map_hidden", c.map_hidden);
    if (j.contains("speed_mode")) c.speed_mode = speed_mode_from_string(field<std::string>(j, "speed_mode", ""));
    optional_field(j, "n_h_speed", c.n_h_speed);
    optional_field(j, "speed_hidden", c.speed_hidden);
    optional_field(j, "substeps", c.substeps);
    optional_field(j, "aux_ridge", c.aux_ridge);
    c.validate();
    return c;
}

TrainingConfig TrainingConfig::vdp_defaults()
{
    TrainingConfig c;
    c.criticality = Criticality::Supercritical;
    c.stage1 = {200, 0.01, 200, 1e-3};
    c.stage2 = {300, 0.01, 1000, 1e-5};
    c.stage3 = {2000, 0.01, 1000, 1e-5};
    c.map_hidden = {32, 32};
    c.speed_mode = SpeedMode::FourierCorrection;
    c.n_h_speed = 10;
    c.speed_hidden = {32, 32};
    return c;
}

TrainingConfig TrainingConfig::aero_defaults()
{
    TrainingConfig c;
    c.criticality = Criticality::Subcritical;
    c.stage1 = {200, 0.01, 200, 1e-3};
    c.stage2 = {400, 0.01, 300, 1e-5};
    c.stage3 = {300, 0.01, 1000, 1e-3};
    c.map_hidden = {21, 21};
    c.speed_mode = SpeedMode::ConstantCorrection;
    c.n_h_speed = 0;
    c.speed_hidden = {31, 31};
    return c;
}

double StageTrace::last() const
{
    if (!lbfgs.empty()) return lbfgs.back();
    if (!adam.empty()) return adam.back();
    return std::numeric_limits<double>::quiet_NaN();
}

json TrainingReport::to_json() const
{
    auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {
        {"stage1", trace_json(stage1)},
        {"stage2", trace_json(stage2)},
        {"stage3", trace_json(stage3)},
        {"shape_loss_final", num(shape_loss_final)},
        {"speed_loss_final", num(speed_loss_final)},
        {"mu0", num(mu0)},
        {"a2", num(a2)},
        {"omega0", num(omega0)},
        {"mu0_init", num(mu0_init)},
        {"a2_init", num(a2_init)},
        {"omega0_init", num(omega0_init)},
        {"z_scale", z_scale},
        {"wall_time_s", wall_time},
        {"config", config},
        {"failed_stage", failed_stage},
        {"error", error},
    };
}

// ---- normalization -------------------------------------------------------------

Normalization Normalization::from_data(const TrainingDataset& data)
{
    require(!data.empty(), ErrorKind::InvalidArgument, "dataset has no records");
    Normalization n;
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    double spread = 0.0;
    for (const auto& r : data.records) {
        const Eigen::Vector2d rc = r.states.leftCols<2>().colwise().mean().transpose();
        c += rc;
        spread += (r.states.leftCols<2>().rowwise() - rc.transpose()).rowwise().norm().mean();
    }
    const double k = static_cast<double>(data.size());
    n.z_center = c / k;
    n.z_scale = spread / k;
    require(std::isfinite(n.z_scale) && n.z_scale > 0.0, ErrorKind::InvalidArgument,
            "records have no oscillation in z1, z2");
    const auto [lo, hi] = mu_range(data);
    n.mu_center = 0.5 * (lo + hi);
    n.mu_scale = hi > lo ? 0.5 * (hi - lo) : 1.0;
    return n;
}

TrainingDataset Normalization::apply(const TrainingDataset& data) const
{
    TrainingDataset out = data;
    for (auto& r : out.records)
        for (int j = 0; j < 2; ++j) r.states.col(j) = (r.states.col(j).array() - z_center(j)) / z_scale;
    return out;
}

CoordinateMap Normalization::unapply(const CoordinateMap& normalized) const
{
    CoordinateMap m = normalized;
    m.linear.rows *= z_scale;
    const Eigen::Vector2d s = z_scale * normalized.offset.vec() + z_center;
    m.offset = {s.x(), s.y()};
    const int last = m.nn.layer_count() - 1;
    m.nn.weights(last) *= z_scale;
    m.nn.biases(last) *= z_scale;
    return m;
}

// ---- initial guesses -------------------------------------------------------------

double default_mu0_init(const TrainingDataset& data, const TrainingConfig& cfg)
{
    if (cfg.mu0_init) return *cfg.mu0_init;
    const auto [lo, hi] = mu_range(data);
    const double w = mu_spread(data);
    if (cfg.criticality == Criticality::Supercritical) return lo - 0.1 * w;
    if (cfg.mu_upper_bound) {
        require(*cfg.mu_upper_bound > hi, ErrorKind::InvalidArgument,
                "mu_upper_bound must exceed every record parameter");
        return 0.5 * (hi + *cfg.mu_upper_bound);
    }
    return hi + 0.1 * w;
}

double default_a2_init(const TrainingDataset& data, const TrainingConfig& cfg, double mu0)
{
    if (cfg.a2_init) return *cfg.a2_init;
    if (cfg.criticality == Criticality::Supercritical) return -1.0;
    // fold a tenth of the spread below the smallest parameter
    const auto [lo, hi] = mu_range(data);
    (void)hi;
    const double gap = std::max(mu0 - lo, 0.0) + 0.1 * mu_spread(data);
    return 2.0 * std::sqrt(gap);
}

double dominant_frequency(const LcoRecord& record, int padding)
{
    require(padding >= 1, ErrorKind::InvalidArgument, "padding must be >= 1");
    const Eigen::Index n = record.samples();
    require(n >= 4 && record.dt() > 0.0, ErrorKind::InvalidArgument, "record too short for a spectrum");
    const Eigen::VectorXd x = record.states.col(0).array() - record.states.col(0).mean();
    const Eigen::Index bins = n * padding;
    const double dw = 2.0 * std::numbers::pi / (static_cast<double>(bins) * record.dt());
    std::vector<double> mag(static_cast<std::size_t>(bins / 2 + 1), 0.0);
    for (Eigen::Index k = 1; k <= bins / 2; ++k) {
        const std::complex<double> step = std::polar(1.0, -dw * static_cast<double>(k) * record.dt());
        std::complex<double> ph(1.0, 0.0);
        std::complex<double> acc(0.0, 0.0);
        for (Eigen::Index i = 0; i < n; ++i) {
            acc += x(i) * ph;
            ph *= step;
        }
        mag[static_cast<std::size_t>(k)] = std::abs(acc);
    }
    const auto best = static_cast<std::size_t>(std::max_element(mag.begin() + 1, mag.end()) - mag.begin());
    require(mag[best] > 0.0, ErrorKind::InvalidArgument, "record '" + record.id + "' has a flat z1");
    double offset = 0.0;
    if (best > 1 && best + 1 < mag.size()) {
        const double a = mag[best - 1], b = mag[best], c = mag[best + 1];
        const double den = a - 2.0 * b + c;
        if (den < 0.0) offset = 0.5 * (a - c) / den;
    }
    return dw * (static_cast<double>(best) + offset);
}

// ---- stages ------------------------------------------------------------------------

Stage1Result stage1_fit_linear(const TrainingDataset& data, const TrainingConfig& cfg, const NormalFormParams& nf,
                               double mu_center, double mu_scale)
{
    const auto targets = shape_targets(data, cfg.n_h);
    CoordinateMap map = CoordinateMap::identity();
    map.mu_center = mu_center;
    map.mu_scale = mu_scale;

    // isotropic scale matching the mean radii, centred on the mean centroid
    double r_data = 0.0, r_form = 0.0;
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& t : targets) {
        c += t.center;
        if (const auto b = find_branch(nf, t.mu, t.stability)) {
            r_data += t.descriptor.a(0);
            r_form += b->radius;
        }
    }
    c /= static_cast<double>(targets.size());
    const double k = r_form > 0.0 ? r_data / r_form : 1.0;

    // the normal form turns counter-clockwise; a clockwise record needs det L < 0
    double winding = 0.0;
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        const auto& st = data.records[i].states;
        const Eigen::Vector2d ci = targets[i].center;
        for (Eigen::Index j = 0; j + 1 < st.rows(); ++j) {
            const Eigen::Vector2d a(st(j, 0) - ci.x(), st(j, 1) - ci.y());
            const Eigen::Vector2d b(st(j + 1, 0) - ci.x(), st(j + 1, 1) - ci.y());
            winding += a.x() * b.y() - a.y() * b.x();
        }
    }

    Eigen::VectorXd x = Eigen::VectorXd::Zero(8);
    x(0) = k;
    x(4) = winding < 0.0 ? -k : k;
    x(6) = c.x();
    x(7) = c.y();

    const ShapeLossOptions opt{cfg.n_points, cfg.n_h, true};
    auto unpack = [&map](const Eigen::VectorXd& v) {
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j) map.linear.rows(i, j) = v(3 * i + j);
        map.offset = {v(6), v(7)};
    };
    const double floor = cfg.nonsingular_floor;
    const double weight = cfg.nonsingular_weight;
    Objective f = [&](const Eigen::VectorXd& v, Eigen::VectorXd& g) {
        unpack(v);
        ShapeLossGradient sg;
        double loss = shape_loss_terms(targets, map, nf, opt, &sg).total;
        g.resize(8);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j) g(3 * i + j) = sg.linear(i, j);
        g(6) = sg.offset.x();
        g(7) = sg.offset.y();
        const double det = v(0) * v(4) - v(1) * v(3);
        if (std::abs(det) < floor) {
            const double sgn = det >= 0.0 ? 1.0 : -1.0;
            loss += weight * (floor - std::abs(det));
            g(0) -= weight * sgn * v(4);
            g(4) -= weight * sgn * v(0);
            g(1) += weight * sgn * v(3);
            g(3) += weight * sgn * v(1);
        }
        return loss;
    };

    Stage1Result out;
    x = run_schedule(f, x, cfg.stage1, out.trace);
    unpack(x);
    out.linear = map.linear;
    out.offset = map.offset;
    return out;
}

Stage2Result stage2_fit_nn(const TrainingDataset& data, const TrainingConfig& cfg, const Stage1Result& stage1,
                           const NormalFormParams& nf_init, double mu_center, double mu_scale)
{
    const auto targets = shape_targets(data, cfg.n_h);
    CoordinateMap map;
    map.linear = stage1.linear;
    map.offset = stage1.offset;
    map.mu_center = mu_center;
    map.mu_scale = mu_scale;
    map.nn = Mlp::glorot(with_hidden(3, cfg.map_hidden, 2), cfg.seed);
    zero_last_layer(map.nn);

    const bool fit_a2 = cfg.trains_a2();
    const bool soft = nf_init.criticality == Criticality::Subcritical;
    const Eigen::Index np = map.nn.parameter_count();
    Eigen::VectorXd x(np + 1 + (fit_a2 ? 1 : 0));
    x.head(np) = map.nn.parameters();
    x(np) = nf_init.mu0;
    if (fit_a2) x(np + 1) = soft ? softplus_inverse(nf_init.a2) : nf_init.a2;

    NormalFormParams nf = nf_init;
    auto unpack = [&](const Eigen::VectorXd& v) {
        map.nn.parameters() = v.head(np);
        nf.mu0 = v(np);
        if (fit_a2) nf.a2 = soft ? softplus(v(np + 1)) : v(np + 1);
    };
    const ShapeLossOptions opt{cfg.n_points, cfg.n_h, true};
    const Eigen::Matrix3Xd grid = fold_grid(data, nf_init, map);
    bool guard = false;
    Objective f = [&](const Eigen::VectorXd& v, Eigen::VectorXd& g) {
        unpack(v);
        ShapeLossGradient sg;
        double loss = shape_loss_terms(targets, map, nf, opt, &sg).total;
        if (guard) loss += fold_penalty(map, grid, cfg.fold_margin, cfg.fold_weight, sg.nn);
        g.resize(v.size());
        g.head(np) = sg.nn;
        g(np) = sg.mu0;
        if (fit_a2) g(np + 1) = soft ? sg.a2 * sigmoid(v(np + 1)) : sg.a2;
        return loss;
    };

    // fold guard only under the line search: its kinks throw ADAM off
    Stage2Result out;
    StageSchedule first = cfg.stage2, second = cfg.stage2;
    first.lbfgs_iters = 0;
    second.adam_iters = 0;
    x = run_schedule(f, x, first, out.trace);
    guard = cfg.fold_weight > 0.0;
    StageTrace tail;
    x = run_schedule(f, x, second, tail);
    out.trace.lbfgs = std::move(tail.lbfgs);
    out.trace.lbfgs_stop = tail.lbfgs_stop;
    unpack(x);
    out.map = map;
    out.normal_form = nf;
    return out;
}

Stage3Result stage3_fit_speed(const TrainingDataset& data, const TrainingConfig& cfg, const CoordinateMap& map,
                              const NormalFormParams& nf)
{
    const double omega0 = dominant_frequency(data.records.front());
    SpeedModel speed = cfg.speed_mode == SpeedMode::FourierCorrection
                           ? SpeedModel::fourier(omega0, cfg.n_h_speed, cfg.speed_hidden)
                           : SpeedModel::constant(omega0, cfg.speed_hidden);
    speed.mu_center = map.mu_center;
    speed.mu_scale = map.mu_scale;
    speed.nn = Mlp::glorot(speed.nn.layer_sizes(), cfg.seed + 1);
    zero_last_layer(speed.nn);

    const auto targets = speed_targets(data, map, nf, cfg.downsample);
    const Eigen::Index np = speed.nn.parameter_count();
    Eigen::VectorXd x(1 + np);
    x(0) = speed.omega0;
    x.tail(np) = speed.nn.parameters();

    SpeedLossOptions opt;
    opt.training = true;
    opt.substeps = cfg.substeps;
    auto unpack = [&](const Eigen::VectorXd& v) {
        speed.omega0 = v(0);
        speed.nn.parameters() = v.tail(np);
    };
    Objective f = [&](const Eigen::VectorXd& v, Eigen::VectorXd& g) {
        unpack(v);
        return speed_loss_terms(targets, map, speed, opt, &g).total;
    };

    Stage3Result out;
    x = run_schedule(f, x, cfg.stage3, out.trace);
    unpack(x);
    // output 0 enters Omega additively, same as omega0: move its bias over
    auto bias = speed.nn.biases(speed.nn.layer_count() - 1);
    speed.omega0 += bias(0);
    bias(0) = 0.0;
    out.speed = speed;
    return out;
}

// ---- full pipeline -------------------------------------------------------------------

TrainingResult train_full(const TrainingDataset& data, const TrainingConfig& cfg)
{
    const auto t_start = std::chrono::steady_clock::now();
    data.validate();
    cfg.validate();

    TrainingReport report;
    report.config = cfg.to_json();
    const Normalization norm = Normalization::from_data(data);
    report.z_scale = norm.z_scale;
    const TrainingDataset ndata = norm.apply(data);

    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };
    auto abort = [&](const std::string& stage, const std::exception& e) {
        report.failed_stage = stage;
        report.error = e.what();
        report.wall_time = elapsed();
        return TrainingAborted(stage, e.what(), report);
    };

    report.mu0_init = default_mu0_init(data, cfg);
    report.a2_init = default_a2_init(data, cfg, report.mu0_init);
    NormalFormParams nf;
    try {
        nf = make_form(cfg.criticality, report.mu0_init, report.a2_init);
    } catch (const std::exception& e) {
        throw abort("init", e);
    }

    Stage1Result s1;
    try {
        s1 = stage1_fit_linear(ndata, cfg, nf, norm.mu_center, norm.mu_scale);
    } catch (const std::exception& e) {
        throw abort("stage1", e);
    }
    report.stage1 = s1.trace;
    scale_trace(report.stage1, norm.z_scale);

    Stage2Result s2;
    try {
        s2 = stage2_fit_nn(ndata, cfg, s1, nf, norm.mu_center, norm.mu_scale);
        s2.normal_form.validate();
        s2.map.validate();
    } catch (const std::exception& e) {
        throw abort("stage2", e);
    }
    report.stage2 = s2.trace;
    scale_trace(report.stage2, norm.z_scale);
    report.mu0 = s2.normal_form.mu0;
    report.a2 = s2.normal_form.a2;

    Stage3Result s3;
    try {
        report.omega0_init = dominant_frequency(data.records.front());
        s3 = stage3_fit_speed(ndata, cfg, s2.map, s2.normal_form);
        s3.speed.validate();
    } catch (const std::exception& e) {
        throw abort("stage3", e);
    }
    report.stage3 = s3.trace;
    scale_trace(report.stage3, norm.z_scale);
    report.omega0 = s3.speed.omega0;

    HybridModel model;
    try {
        model.normal_form = s2.normal_form;
        model.map = norm.unapply(s2.map);
        if (data.m > 2) model.map.aux = fit_auxiliary_maps(data, model.map, cfg.aux_ridge);
        model.speed = s3.speed;
        model.dataset_fingerprint = dataset_fingerprint(data);
        model.config = report.config;
        model.validate();

        // final losses in raw units, same terms as the traces
        const auto st = shape_targets(data, cfg.n_h);
        report.shape_loss_final =
            shape_loss_terms(st, model.map, model.normal_form, {cfg.n_points, cfg.n_h, true}).total;
        SpeedLossOptions so;
        so.training = true;
        so.substeps = cfg.substeps;
        const auto vt = speed_targets(data, model.map, model.normal_form, cfg.downsample);
        report.speed_loss_final = speed_loss_terms(vt, model.map, model.speed, so).total;
    } catch (const std::exception& e) {
        throw abort("finalize", e);
    }
    report.wall_time = elapsed();
    return {std::move(model), std::move(report)};
}

// ---- cross-validation ------------------------------------------------------------------

HeldOutErrors held_out_errors(const HybridModel& model, const LcoRecord& record, int n_h)
{
    HeldOutErrors e;
    const PlanarOrbit measured = PlanarOrbit::centered(record.planar_points());
    const OrbitDescriptor dm = orbit_descriptor(measured, n_h);
    PlanarOrbit pred = predicted_orbit(model.map, model.normal_form, record.mu, record.stability, 100);
    pred.center = measured.center;
    const OrbitDescriptor dp = orbit_descriptor(pred, n_h);
    e.descriptor_error = descriptor_distance(dm, dp) / dm.a(0);

    const Eigen::Vector2d z0(record.states(0, 0), record.states(0, 1));
    const auto ts = predict_timeseries(model, record.mu, record.stability, z0, record.t);
    const Eigen::MatrixXd z = record.states.leftCols<2>();
    const double err = (ts.z.leftCols<2>() - z).squaredNorm();
    const double ref = (z.rowwise() - z.colwise().mean()).squaredNorm();
    e.timeseries_nrmse = std::sqrt(err / ref);
    return e;
}

std::vector<FoldResult> leave_one_out(const TrainingDataset& data, const TrainingConfig& cfg)
{
    data.validate();
    require(data.size() >= 2, ErrorKind::InvalidArgument, "cross-validation needs at least two records");
    const auto [lo, hi] = mu_range(data);
    std::vector<FoldResult> out;
    out.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const LcoRecord& held = data.records[i];
        FoldResult fr;
        fr.held_out_id = held.id;
        fr.held_out_mu = held.mu;
        fr.held_out_stability = held.stability;
        fr.saddle_node = std::numeric_limits<double>::quiet_NaN();
        try {
            auto res = train_full(data.without(i), cfg);
            fr.report = res.report;
            fr.model = res.model;
            if (res.model.normal_form.criticality == Criticality::Subcritical)
                fr.saddle_node = saddle_node_mu(res.model.normal_form);
            fr.min_abs_det = invertibility_report(res.model.map, res.model.normal_form, lo, hi).min_abs_det;
            fr.errors = held_out_errors(res.model, held, cfg.n_h);
        } catch (const TrainingAborted& e) {
            fr.report = e.report();
            fr.error = e.what();
        } catch (const std::exception& e) {
            fr.error = e.what();
        }
        out.push_back(std::move(fr));
    }
    return out;
}

}  // namespace hopf
