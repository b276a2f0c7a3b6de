// End-to-end acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "hopf/error.hpp"
#include "hopf/io.hpp"
#include "hopf/mlp.hpp"
#include "hopf/orbit_geometry.hpp"
#include "hopf/reference_systems.hpp"
#include "hopf/training.hpp"

using namespace hopf;

namespace {

int failures = 0;

void verdict(const std::string& id, bool ok, const std::string& detail)
{
    if (!ok) ++failures;
    std::cout << id << " " << (ok ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

std::string num(double v, int prec = 4)
{
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// mean spacing of upward zero crossings of z1
double measured_period(const LcoRecord& r)
{
    std::vector<double> c;
    for (Eigen::Index i = 0; i + 1 < r.samples(); ++i) {
        const double a = r.states(i, 0), b = r.states(i + 1, 0);
        if (a < 0 && b >= 0) c.push_back(r.t[i] + (r.t[i + 1] - r.t[i]) * a / (a - b));
    }
    if (c.size() < 2) throw Error(ErrorKind::NoLco, "fewer than two crossings");
    return (c.back() - c.front()) / static_cast<double>(c.size() - 1);
}

double relative_descriptor_distance(const LcoRecord& ref, const LcoRecord& other)
{
    const auto o = PlanarOrbit::centered(ref.planar_points());
    const auto d_ref = orbit_descriptor(o);
    const auto d_other = orbit_descriptor(PlanarOrbit{other.planar_points(), o.center});
    return descriptor_distance(d_ref, d_other) / d_ref.a(0);
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x, double h = 1e-6)
{
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + h;
        const double fp = f(x);
        x[i] = xi - h;
        const double fm = f(x);
        x[i] = xi;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

double rel(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
    return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300});
}

struct VdpRun {
    TrainingResult result;
    std::string model_json;
    double wall = 0.0;
};

VdpRun train_vdp(const TrainingDataset& data)
{
    const auto t0 = std::chrono::steady_clock::now();
    VdpRun run{train_full(data, TrainingConfig::vdp_defaults()), "", 0.0};
    run.model_json = dump_json(model_to_json(run.result.model));
    run.wall = seconds_since(t0);
    return run;
}

// ---- A1, A7 (vdp part), A8 -------------------------------------------------------------

void vdp_criteria()
{
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<VdpRun> first;
    try {
        const auto data = make_reference_dataset("vdp", DatasetConfig::vdp_defaults());
        Eigen::Index samples = 0;
        for (const auto& r : data.records) samples += r.samples();
        first = train_vdp(data);
        const auto& model = first->result.model;
        const double mu0 = model.normal_form.mu0;

        bool ok = data.size() == 6 && samples == 3000 && std::abs(mu0) <= 0.05;
        std::string detail = "records=" + std::to_string(data.size()) + " samples=" + std::to_string(samples) +
                             " mu0=" + num(mu0);
        const auto sys = vdp_system();
        for (double mu : {0.2, 0.55, 0.9}) {
            SimulationOptions so;
            so.dt = 0.02;
            so.record_time = 10.0;
            so.settle_time = 100.0;
            so.substeps = 4;
            const LcoRecord rec = simulate_lco(sys, mu, so);
            const double desc = held_out_errors(model, rec).descriptor_error;
            so.record_time = 200.0;
            const double t_sim = measured_period(simulate_lco(sys, mu, so));
            const double t_pred = predicted_period(model, mu, Stability::Stable);
            const double dt = std::abs(t_pred - t_sim) / t_sim;
            ok = ok && desc <= 0.05 && dt <= 0.03;
            detail += " | mu=" + num(mu, 3) + " desc=" + num(desc) + " period=" + num(dt);
        }
        detail += " | train " + num(first->wall, 3) + "s";
        verdict("A1", ok, detail);

        const auto inv = invertibility_report(model.map, model.normal_form, 0.1, 1.0);
        verdict("A7a", inv.min_abs_det > 0.0 && inv.sign_changes == 0,
                "vdp min|det J|=" + num(inv.min_abs_det) + " sign_changes=" + std::to_string(inv.sign_changes));

        const auto second = train_vdp(data);
        verdict("A8", second.model_json == first->model_json,
                "repeat byte-identical=" + std::string(second.model_json == first->model_json ? "yes" : "no") +
                    " bytes=" + std::to_string(first->model_json.size()));
    } catch (const std::exception& e) {
        verdict("A1", false, std::string("error: ") + e.what());
        if (!first) {
            verdict("A7a", false, "no vdp model");
            verdict("A8", false, "no vdp model");
        }
    }
    std::cout << "  (vdp block " << num(seconds_since(t0), 3) << "s)" << std::endl;
}

// ---- A2, A3, A7 (aero part) ----------------------------------------------------------

void aero_criteria()
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto sys = aero_system();
    const auto dcfg = DatasetConfig::aero_defaults();

    try {
        // A3 first: it is cheap and independent of training
        bool ok = true;
        std::string detail;
        for (double mu : {15.6, 16.1}) {
            DatasetConfig c = dcfg;
            c.unstable_method = "shooting";
            const auto shoot = aero_record(sys, mu, Stability::Unstable, c);
            c.unstable_method = "pd";
            const auto pd = aero_record(sys, mu, Stability::Unstable, c);
            const double d = relative_descriptor_distance(shoot, pd);
            ok = ok && pd.provenance == "stabilized" && d <= 0.01;
            detail += "mu=" + num(mu, 3) + " " + pd.provenance + " dist=" + num(d) + " | ";
        }
        verdict("A3", ok, detail);
    } catch (const std::exception& e) {
        verdict("A3", false, std::string("error: ") + e.what());
    }

    try {
        const auto data = make_reference_dataset("aero", dcfg);
        int stable = 0, unstable = 0;
        for (const auto& r : data.records) (r.stability == Stability::Stable ? stable : unstable)++;

        // fold of the reference model from the continued periodic-orbit branch
        ShootingOptions bo;
        bo.steps_per_period = 1000;
        bo.tolerance = 1e-10;
        bo.require_unstable = false;
        const auto start = section_start(sys, 18.2, 40.0, 5e-4);
        const auto branch = trace_branch(sys, solve_at_amplitude(sys, start.amplitude, start, bo), 0.006, 48, bo);
        const double ref_fold = locate_fold(sys, branch, bo).mu;

        const auto t_train = std::chrono::steady_clock::now();
        const auto res = train_full(data, TrainingConfig::aero_defaults());
        const double train_s = seconds_since(t_train);
        const auto& m = res.model;
        const double mu0 = m.normal_form.mu0, a2 = m.normal_form.a2;
        const double fold = saddle_node_mu(m.normal_form);
        bool ok = stable == 4 && unstable == 4 && mu0 >= 18.08 && mu0 <= 18.48 && a2 >= 3.50 && a2 <= 3.80 &&
                  std::abs(fold - ref_fold) <= 0.3;
        std::string detail = "records=" + std::to_string(stable) + "+" + std::to_string(unstable) + " mu0=" + num(mu0, 6) +
                             " a2=" + num(a2, 5) + " fold=" + num(fold, 6) + " ref_fold=" + num(ref_fold, 6);
        for (auto st : {Stability::Stable, Stability::Unstable}) {
            const auto rec = aero_record(sys, 16.5, st, dcfg);
            const double desc = held_out_errors(m, rec).descriptor_error;
            ok = ok && desc <= 0.08;
            detail += std::string(" | held-out 16.5 ") + to_string(st) + " desc=" + num(desc);
        }
        detail += " | train " + num(train_s, 4) + "s";
        verdict("A2", ok, detail);

        double lo = data.records.front().mu, hi = lo;
        for (const auto& r : data.records) {
            lo = std::min(lo, r.mu);
            hi = std::max(hi, r.mu);
        }
        const auto inv = invertibility_report(m.map, m.normal_form, lo, hi);
        verdict("A7b", inv.min_abs_det > 0.0 && inv.sign_changes == 0,
                "aero min|det J|=" + num(inv.min_abs_det) + " sign_changes=" + std::to_string(inv.sign_changes));
    } catch (const std::exception& e) {
        verdict("A2", false, std::string("error: ") + e.what());
        verdict("A7b", false, "no aero model");
    }
    std::cout << "  (aero block " << num(seconds_since(t0), 4) << "s)" << std::endl;
}

// ---- A4 ----------------------------------------------------------------------------------

void normal_form_suite()
{
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    int count_errors = 0;
    for (int k = 0; k < 1000; ++k) {
        const double mu0 = -20.0 + 40.0 * u(rng);
        const double a2 = 0.05 + 6.0 * u(rng);
        const auto p = NormalFormParams::subcritical(mu0, a2);
        const double sn = mu0 - a2 * a2 / 4.0;
        const double mu = sn - 1.0 + (mu0 - sn + 2.0) * u(rng);
        const auto got = lco_radii(p, mu);
        const double disc = a2 * a2 + 4.0 * (mu - mu0);
        std::vector<double> want;
        if (disc >= 0)
            for (double s : {(a2 + std::sqrt(disc)) / 2, (a2 - std::sqrt(disc)) / 2})
                if (s > 0) want.push_back(s);
        if (got.size() != want.size()) {
            ++count_errors;
            continue;
        }
        for (std::size_t i = 0; i < got.size(); ++i)
            worst = std::max(worst, std::abs(got[i].radius * got[i].radius - want[i]) / std::max(1.0, want[i]));
        const std::size_t expect = mu < sn ? 0 : (mu < mu0 ? 2 : 1);
        if (got.size() != expect) ++count_errors;
    }
    // boundaries: fold gives one (double) root, Hopf point one root
    const auto p = NormalFormParams::subcritical(18.28, 3.65);
    const bool edges = lco_radii(p, saddle_node_mu(p)).size() == 1 && lco_radii(p, 18.28).size() == 1 &&
                       lco_radii(p, saddle_node_mu(p) - 1e-6).empty() && lco_radii(p, 17.0).size() == 2;
    verdict("A4", worst <= 1e-12 && count_errors == 0 && edges,
            "max rel err r^2=" + num(worst) + " count mismatches=" + std::to_string(count_errors) +
                " boundaries=" + (edges ? "ok" : "bad"));
}

// ---- A5 ----------------------------------------------------------------------------------

void gradient_suite()
{
    const std::vector<std::vector<int>> archs = {{3, 32, 32, 2}, {2, 21, 21, 3},  {3, 21, 21, 1},
                                                 {3, 31, 31, 1}, {3, 11, 11, 2}, {3, 32, 32, 13}};
    std::mt19937_64 rng(77);
    std::normal_distribution<double> g(0.0, 1.0);
    double worst_nn = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto& sizes = archs[trial % archs.size()];
        const auto net = Mlp::glorot(sizes, 500 + trial);
        Eigen::MatrixXd x(sizes.front(), 1), up(sizes.back(), 1);
        for (auto& v : x.reshaped()) v = g(rng);
        for (auto& v : up.reshaped()) v = g(rng);
        Mlp::Tape tape;
        net.forward(x, tape);
        Eigen::VectorXd pg;
        const Eigen::MatrixXd xg = net.backward(tape, up, pg);
        const auto fp = [&](const Eigen::VectorXd& p) {
            Mlp n = net;
            n.set_parameters(p);
            return up.col(0).dot(n.forward(Eigen::VectorXd(x.col(0))));
        };
        const auto fx = [&](const Eigen::VectorXd& xi) { return up.col(0).dot(net.forward(xi)); };
        worst_nn = std::max({worst_nn, rel(pg, fd_gradient(fp, net.parameters())), rel(xg.col(0), fd_gradient(fx, x.col(0)))});
    }

    // speed loss through RK4, both speed modes
    HybridModel truth;
    truth.normal_form = NormalFormParams::supercritical(0.0, -1.0);
    truth.map.linear.rows << 1.4, 0.3, 0.1, -0.2, 0.8, 0.0;
    truth.map.offset = {0.2, -0.1};
    truth.speed = SpeedModel::fourier(2.0, 3);
    truth.speed.nn.biases(0)[1] = 0.4;
    TrainingDataset data;
    std::vector<double> t(250);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.02 * static_cast<double>(i);
    for (double mu : {0.3, 0.7}) {
        const Eigen::Vector2d z0 = map_forward(truth.map, 0.2, 0.3, mu);
        const auto ts = predict_timeseries(truth, mu, Stability::Stable, z0, t);
        LcoRecord r;
        r.id = "g";
        r.mu = mu;
        r.t = ts.t;
        r.states = ts.z;
        data.records.push_back(r);
    }
    const auto targets = speed_targets(data, truth.map, truth.normal_form);
    double worst_speed = 0.0;
    for (auto mode : {SpeedMode::ConstantCorrection, SpeedMode::FourierCorrection}) {
        SpeedModel s = mode == SpeedMode::ConstantCorrection ? SpeedModel::constant(1.8, {6, 6}) : SpeedModel::fourier(1.8, 3, {6});
        s.nn = Mlp::glorot(s.nn.layer_sizes(), 31);
        s.nn.parameters() *= 0.3;
        for (bool training : {false, true}) {
            SpeedLossOptions opt;
            opt.training = training;
            Eigen::VectorXd x(1 + s.nn.parameter_count());
            x[0] = s.omega0;
            x.tail(s.nn.parameter_count()) = s.nn.parameters();
            const auto f = [&](const Eigen::VectorXd& v) {
                SpeedModel q = s;
                q.omega0 = v[0];
                q.nn.set_parameters(v.tail(v.size() - 1));
                return speed_loss_terms(targets, truth.map, q, opt).total;
            };
            Eigen::VectorXd grad;
            speed_loss_terms(targets, truth.map, s, opt, &grad);
            worst_speed = std::max(worst_speed, rel(grad, fd_gradient(f, x)));
        }
    }
    verdict("A5", worst_nn <= 1e-5 && worst_speed <= 1e-4,
            "nn max rel err=" + num(worst_nn) + " (100 draws, 6 architectures) speed-loss max rel err=" + num(worst_speed));
}

// ---- A6 ----------------------------------------------------------------------------------

void geometry_suite()
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 0.1);
    double worst_rt = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int n_h = 2 + trial % 12;
        OrbitDescriptor d = OrbitDescriptor::zero(n_h);
        d.a[0] = 2.0;
        for (int k = 1; k <= n_h; ++k) {
            d.a[k] = g(rng);
            d.b[k - 1] = g(rng);
        }
        std::vector<PolarSample> s;
        for (int j = 0; j < 4 * n_h + 1; ++j) {
            const double th = 2 * M_PI * j / (4 * n_h + 1);
            s.push_back({th, fourier_eval(d, th)});
        }
        worst_rt = std::max(worst_rt, (fourier_fit(s, n_h).coefficients() - d.coefficients()).cwiseAbs().maxCoeff());
    }

    std::normal_distribution<double> n01(0.0, 1.0);
    int metric_violations = 0;
    for (int k = 0; k < 1000; ++k) {
        Eigen::VectorXd a(21), b(21), c(21);
        for (int i = 0; i < 21; ++i) {
            a[i] = n01(rng);
            b[i] = n01(rng);
            c[i] = n01(rng);
        }
        const auto x = OrbitDescriptor::from_coefficients(a), y = OrbitDescriptor::from_coefficients(b),
                   z = OrbitDescriptor::from_coefficients(c);
        const double xy = descriptor_distance(x, y), yx = descriptor_distance(y, x);
        if (descriptor_distance(x, x) != 0.0 || !(xy > 0.0) || xy != yx ||
            descriptor_distance(x, z) > xy + descriptor_distance(y, z) + 1e-12)
            ++metric_violations;
    }

    std::vector<Eigen::Vector2d> eight;
    for (int i = 0; i < 200; ++i) {
        const double t = 2 * M_PI * (i + 0.5) / 200;
        eight.emplace_back(std::sin(t), std::sin(t) * std::cos(t));
    }
    bool raised = false;
    try {
        to_polar(PlanarOrbit::centered(eight));
    } catch (const Error& e) {
        raised = e.kind() == ErrorKind::NonStarShaped;
    }
    verdict("A6", worst_rt <= 1e-10 && metric_violations == 0 && raised,
            "round-trip max err=" + num(worst_rt) + " metric violations=" + std::to_string(metric_violations) +
                "/1000 figure-eight NonStarShaped=" + (raised ? "yes" : "no"));
}

}  // namespace

int main()
{
    const auto t0 = std::chrono::steady_clock::now();
    normal_form_suite();
    gradient_suite();
    geometry_suite();
    vdp_criteria();
    aero_criteria();
    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << " in " << num(seconds_since(t0), 4)
              << "s" << std::endl;
    return failures == 0 ? 0 : 1;
}
