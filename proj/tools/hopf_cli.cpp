// Command-line front end: data generation, training, prediction, evaluation.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hopf/coordinate_map.hpp"
#include "hopf/diagram.hpp"
#include "hopf/error.hpp"
#include "hopf/io.hpp"
#include "hopf/reference_systems.hpp"
#include "hopf/shape_loss.hpp"
#include "hopf/speed_model.hpp"
#include "hopf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hopf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitTraining = 3;
constexpr int kExitMissingBranch = 4;

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

TrainingConfig load_config(const std::string& path) { return TrainingConfig::from_json(read_json(path)); }

std::string report_path_for(const std::string& model_path)
{
    fs::path p(model_path);
    return (p.parent_path() / (p.stem().string() + ".report.json")).string();
}

// ---- gen-data ---------------------------------------------------------------------

struct GenArgs {
    std::string system;
    std::string out;
    std::vector<double> mu;
    std::vector<double> mu_stable;
    std::vector<double> mu_unstable;
    std::optional<double> dt;
    std::optional<double> record;
    std::optional<double> settle;
    std::string method = "pd";
    bool observe_w = false;
};

int gen_data(const GenArgs& a)
{
    DatasetConfig cfg;
    if (a.system == "vdp")
        cfg = DatasetConfig::vdp_defaults();
    else if (a.system == "aero")
        cfg = DatasetConfig::aero_defaults();
    else
        throw Error(ErrorKind::InvalidArgument, "unknown system '" + a.system + "' (expected vdp or aero)");
    if (!a.mu.empty()) {
        cfg.mu = a.mu;
        cfg.mu_stable = a.mu;
        cfg.mu_unstable = a.mu;
    }
    if (!a.mu_stable.empty()) cfg.mu_stable = a.mu_stable;
    if (!a.mu_unstable.empty()) cfg.mu_unstable = a.mu_unstable;
    if (a.dt) cfg.dt = *a.dt;
    if (a.record) cfg.record_time = *a.record;
    if (a.settle) cfg.settle_time = *a.settle;
    cfg.unstable_method = a.method;
    cfg.observe_w = a.observe_w;
    const TrainingDataset data = make_reference_dataset(a.system, cfg);
    write_dataset(a.out, data);
    std::cout << "wrote " << data.size() << " records to " << a.out << "\n";
    return kExitOk;
}

// ---- train ----------------------------------------------------------------------------

int train(const std::string& data_dir, const std::string& config, const std::string& out, std::string report)
{
    const TrainingDataset data = read_dataset(data_dir);
    const TrainingConfig cfg = load_config(config);
    if (report.empty()) report = report_path_for(out);
    try {
        const TrainingResult r = train_full(data, cfg);
        write_model(out, r.model);
        write_file_atomic(report, dump_json(r.report.to_json()));
        std::cout << "mu0 = " << format_double(r.report.mu0) << ", a2 = " << format_double(r.report.a2)
                  << ", omega0 = " << format_double(r.report.omega0) << "\n";
        return kExitOk;
    } catch (const TrainingAborted& e) {
        write_file_atomic(report, dump_json(e.report().to_json()));
        std::cerr << "error: " << e.what() << "\n";
        return kExitTraining;
    }
}

// ---- predictions -------------------------------------------------------------------------

int predict_bifurcation(const std::string& model_path, double mu_min, double mu_max, int steps,
                        const std::string& out)
{
    const HybridModel model = read_model(model_path);
    const BifurcationDiagram d = build_bifurcation_diagram(model, mu_min, mu_max, steps);
    write_file_atomic(out, d.to_csv());
    if (d.branch_points == 0) {
        std::cerr << "error: no limit cycle in [" << mu_min << ", " << mu_max << "]\n";
        return kExitUsage;
    }
    return kExitOk;
}

std::vector<std::string> observed_header(const HybridModel& model, const std::string& first)
{
    std::vector<std::string> h{first};
    const std::size_t m = 2 + model.map.aux.size();
    for (std::size_t k = 0; k < m; ++k) h.push_back("z" + std::to_string(k + 1) + "_hat");
    h.emplace_back("mu");
    return h;
}

int predict_orbit(const std::string& model_path, double mu, const std::string& stability, int points,
                  const std::string& out)
{
    const HybridModel model = read_model(model_path);
    const Stability s = stability_from_string(stability);
    const auto branch = find_branch(model.normal_form, mu, s);
    if (!branch)
        throw Error(ErrorKind::MissingBranch, "no " + stability + " LCO at mu = " + format_double(mu));
    CsvWriter csv(observed_header(model, "phase"));
    for (int k = 0; k < points; ++k) {
        const double th = 2.0 * std::numbers::pi * k / points;
        const Eigen::VectorXd z =
            map_observation(model.map, branch->radius * std::cos(th), branch->radius * std::sin(th), mu);
        std::vector<double> row{th};
        for (Eigen::Index i = 0; i < z.size(); ++i) row.push_back(z(i));
        row.push_back(mu);
        csv.row(row);
    }
    write_file_atomic(out, csv.str());
    return kExitOk;
}

int predict_timeseries(const std::string& model_path, double mu, const std::string& stability, double tmax,
                       double dt, const std::vector<double>& init, int substeps, const std::string& out)
{
    const HybridModel model = read_model(model_path);
    const Stability s = stability_from_string(stability);
    require(dt > 0.0 && tmax >= 0.0, ErrorKind::InvalidArgument, "--dt must be positive and --tmax non-negative");
    const auto branch = find_branch(model.normal_form, mu, s);
    if (!branch)
        throw Error(ErrorKind::MissingBranch, "no " + stability + " LCO at mu = " + format_double(mu));
    Eigen::Vector2d z0;
    if (init.empty()) {
        z0 = map_forward(model.map, branch->radius, 0.0, mu);  // normal-form angle 0
    } else {
        require(init.size() == 2, ErrorKind::InvalidArgument, "--init expects z1,z2");
        z0 = {init[0], init[1]};
    }
    const auto n = static_cast<long>(std::llround(tmax / dt));
    std::vector<double> t(static_cast<std::size_t>(n + 1));
    for (long k = 0; k <= n; ++k) t[static_cast<std::size_t>(k)] = static_cast<double>(k) * dt;
    const PredictedTimeSeries ts = predict_timeseries(model, mu, s, z0, t, substeps);
    CsvWriter csv(observed_header(model, "t"));
    for (Eigen::Index k = 0; k < ts.z.rows(); ++k) {
        std::vector<double> row{ts.t[static_cast<std::size_t>(k)]};
        for (Eigen::Index i = 0; i < ts.z.cols(); ++i) row.push_back(ts.z(k, i));
        row.push_back(mu);
        csv.row(row);
    }
    write_file_atomic(out, csv.str());
    return kExitOk;
}

// ---- cross-validation and evaluation ------------------------------------------------------------

int cross_validate(const std::string& data_dir, const std::string& config, const std::string& out)
{
    const TrainingDataset data = read_dataset(data_dir);
    const TrainingConfig cfg = load_config(config);
    const auto folds = leave_one_out(data, cfg);

    json arr = json::array();
    int ok = 0;
    std::vector<double> sn;
    for (const auto& f : folds) {
        json e{{"held_out_id", f.held_out_id},
               {"held_out_mu", f.held_out_mu},
               {"held_out_stability", to_string(f.held_out_stability)},
               {"error", f.error}};
        if (f.model) {
            ++ok;
            e["mu0"] = f.model->normal_form.mu0;
            e["a2"] = f.model->normal_form.a2;
            e["saddle_node"] = num(f.saddle_node);
            e["descriptor_error"] = num(f.errors.descriptor_error);
            e["timeseries_nrmse"] = num(f.errors.timeseries_nrmse);
            e["min_abs_det"] = f.min_abs_det;
            if (std::isfinite(f.saddle_node)) sn.push_back(f.saddle_node);
        }
        arr.push_back(std::move(e));
    }
    json summary{{"folds_ok", ok}, {"folds_failed", static_cast<int>(folds.size()) - ok}};
    if (!sn.empty()) {
        const auto [lo, hi] = std::minmax_element(sn.begin(), sn.end());
        summary["saddle_node_spread"] = *hi - *lo;
        // fold whose removal moves the saddle-node furthest from the fold median
        std::vector<double> sorted = sn;
        std::sort(sorted.begin(), sorted.end());
        const double median = sorted[sorted.size() / 2];
        double worst = -1.0;
        std::string worst_id;
        for (const auto& f : folds)
            if (f.model && std::isfinite(f.saddle_node) && std::abs(f.saddle_node - median) > worst) {
                worst = std::abs(f.saddle_node - median);
                worst_id = f.held_out_id;
            }
        summary["largest_saddle_node_shift"] = {{"held_out_id", worst_id}, {"deviation", worst}};
    }
    const json report{{"schema_version", 1}, {"config", cfg.to_json()}, {"folds", arr}, {"summary", summary}};
    write_file_atomic(out, dump_json(report));
    if (ok == 0) {
        std::cerr << "error: every fold failed\n";
        return kExitTraining;
    }
    return kExitOk;
}

int eval(const std::string& model_path, const std::string& data_dir, const std::string& out)
{
    const HybridModel model = read_model(model_path);
    const TrainingDataset data = read_dataset(data_dir);
    const json& c = model.config;
    const int n_h = c.value("n_h", 10);
    const int n_points = c.value("n_points", 100);
    const int downsample = c.value("downsample", 1000);
    const int substeps = c.value("substeps", 1);

    const auto st = shape_targets(data, n_h);
    const ShapeLossTerms shape = shape_loss_terms(st, model.map, model.normal_form, {n_points, n_h, false});
    SpeedLossOptions so;
    so.training = true;
    so.substeps = substeps;
    const auto vt = speed_targets(data, model.map, model.normal_form, downsample);
    const SpeedLossTerms speed = speed_loss_terms(vt, model.map, model.speed, so);

    double lo = data.records.front().mu, hi = lo;
    for (const auto& r : data.records) {
        lo = std::min(lo, r.mu);
        hi = std::max(hi, r.mu);
    }
    const InvertibilityReport inv = invertibility_report(model.map, model.normal_form, lo, hi);

    json recs = json::array();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& r = data.records[i];
        const HeldOutErrors e = held_out_errors(model, r, n_h);
        recs.push_back({{"id", r.id},
                        {"mu", r.mu},
                        {"stability", to_string(r.stability)},
                        {"descriptor_distance", shape.per_orbit[i]},
                        {"descriptor_error", e.descriptor_error},
                        {"speed_loss", speed.per_record[i]},
                        {"timeseries_nrmse", e.timeseries_nrmse}});
    }
    const json metrics{
        {"shape_loss", shape.total},
        {"speed_loss", speed.total},
        {"fingerprint_match", model.dataset_fingerprint == dataset_fingerprint(data)},
        {"invertibility",
         {{"min_abs_det", inv.min_abs_det},
          {"max_abs_det", inv.max_abs_det},
          {"argmin", {inv.argmin(0), inv.argmin(1), inv.argmin(2)}},
          {"sign_changes", inv.sign_changes},
          {"samples", inv.samples},
          {"invertible", inv.invertible()}}},
        {"records", recs},
    };
    write_file_atomic(out, dump_json(metrics));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Hybrid normal-form models of Hopf bifurcations"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "simulate a reference dataset");
    g->add_option("--system", gen.system, "vdp or aero")->required();
    g->add_option("--out", gen.out, "output directory")->required();
    g->add_option("--mu", gen.mu, "parameter values (aero: both branches)")->delimiter(',');
    g->add_option("--mu-stable", gen.mu_stable, "aero stable-branch parameters")->delimiter(',');
    g->add_option("--mu-unstable", gen.mu_unstable, "aero unstable-branch parameters")->delimiter(',');
    g->add_option("--dt", gen.dt, "sampling interval");
    g->add_option("--record", gen.record, "recorded time per orbit");
    g->add_option("--settle", gen.settle, "discarded transient time");
    g->add_option("--unstable-method", gen.method, "pd or shooting")->check(CLI::IsMember({"pd", "shooting"}));
    g->add_flag("--observe-w", gen.observe_w, "aero: also export the aerodynamic state");

    std::string data_dir, config, out, model_path, report, stability;
    auto* t = app.add_subcommand("train", "fit a hybrid model");
    t->add_option("--data", data_dir)->required();
    t->add_option("--config", config)->required();
    t->add_option("--out", out, "model JSON")->required();
    t->add_option("--report", report, "report JSON (default: <out stem>.report.json)");

    double mu_min = 0.0, mu_max = 0.0;
    int steps = 100;
    auto* b = app.add_subcommand("predict-bifurcation", "export a bifurcation diagram");
    b->add_option("--model", model_path)->required();
    b->add_option("--mu-min", mu_min)->required();
    b->add_option("--mu-max", mu_max)->required();
    b->add_option("--steps", steps)->check(CLI::PositiveNumber);
    b->add_option("--out", out)->required();

    double mu = 0.0;
    int points = 100;
    auto* o = app.add_subcommand("predict-orbit", "export a predicted phase portrait");
    o->add_option("--model", model_path)->required();
    o->add_option("--mu", mu)->required();
    o->add_option("--stability", stability)->required()->check(CLI::IsMember({"stable", "unstable"}));
    o->add_option("--points", points)->check(CLI::PositiveNumber);
    o->add_option("--out", out)->required();

    double tmax = 10.0, dt = 0.01;
    int substeps = 1;
    std::vector<double> init;
    auto* s = app.add_subcommand("predict-timeseries", "export a predicted time series");
    s->add_option("--model", model_path)->required();
    s->add_option("--mu", mu)->required();
    s->add_option("--stability", stability)->required()->check(CLI::IsMember({"stable", "unstable"}));
    s->add_option("--tmax", tmax);
    s->add_option("--dt", dt);
    s->add_option("--init", init, "initial observation z1,z2")->delimiter(',');
    s->add_option("--substeps", substeps)->check(CLI::PositiveNumber);
    s->add_option("--out", out)->required();

    auto* cv = app.add_subcommand("cross-validate", "leave-one-out retraining");
    cv->add_option("--data", data_dir)->required();
    cv->add_option("--config", config)->required();
    cv->add_option("--out", out)->required();

    auto* e = app.add_subcommand("eval", "metrics of a model on a dataset");
    e->add_option("--model", model_path)->required();
    e->add_option("--data", data_dir)->required();
    e->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return kExitUsage;
    }

    try {
        if (*g) return gen_data(gen);
        if (*t) return train(data_dir, config, out, report);
        if (*b) return predict_bifurcation(model_path, mu_min, mu_max, steps, out);
        if (*o) return predict_orbit(model_path, mu, stability, points, out);
        if (*s) return predict_timeseries(model_path, mu, stability, tmax, dt, init, substeps, out);
        if (*cv) return cross_validate(data_dir, config, out);
        if (*e) return eval(model_path, data_dir, out);
    } catch (const TrainingAborted& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitTraining;
    } catch (const Error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return ex.kind() == ErrorKind::MissingBranch ? kExitMissingBranch : kExitUsage;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
