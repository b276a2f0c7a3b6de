#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "hopf/diagram.hpp"
#include "hopf/error.hpp"
#include "hopf/io.hpp"
#include "hopf/reference_systems.hpp"
#include "hopf/training.hpp"

using namespace hopf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("hopf_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(const std::string& args, const fs::path& log)
{
    const std::string cmd = std::string(HOPF_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

HybridModel sample_model(bool subcritical, bool with_aux)
{
    HybridModel m;
    m.normal_form = subcritical ? NormalFormParams::subcritical(18.2, 3.6) : NormalFormParams::supercritical(0.02);
    m.map.linear.rows << 0.01, 0.002, 1e-4, -0.003, 0.02, 2e-4;
    m.map.offset = {0.001, -0.002};
    m.map.nn = Mlp::glorot({3, 5, 2}, 7);
    m.map.nn.parameters() *= 1e-3;
    m.map.mu_center = subcritical ? 16.5 : 0.5;
    m.map.mu_scale = subcritical ? 1.4 : 0.45;
    if (with_aux) {
        AuxiliaryMap a;
        a.coefficients = Eigen::VectorXd::LinSpaced(AuxiliaryMap::kFeatureCount, -1.0 / 3.0, 2.0 / 7.0);
        m.map.aux.push_back(a);
    }
    m.speed = subcritical ? SpeedModel::constant(27.3, {4}) : SpeedModel::fourier(1.01, 3, {4});
    m.speed.nn = Mlp::glorot(m.speed.nn.layer_sizes(), 9);
    m.speed.nn.parameters() *= 1e-3;
    m.dataset_fingerprint = "0123456789abcdef";
    m.config = TrainingConfig::vdp_defaults().to_json();
    return m;
}

TrainingConfig tiny_config()
{
    TrainingConfig c = TrainingConfig::vdp_defaults();
    c.stage1 = {20, 0.01, 10, 1e-3};
    c.stage2 = {10, 0.01, 10, 1e-5};
    c.stage3 = {10, 0.01, 10, 1e-5};
    c.map_hidden = {4};
    c.n_h_speed = 2;
    c.speed_hidden = {4};
    return c;
}

}  // namespace

TEST_CASE("number formatting and csv")
{
    CHECK(format_double(0.1) == "0.10000000000000001");
    CHECK(format_double(1.0) == "1");
    CHECK(std::stod(format_double(M_PI)) == M_PI);
    CsvWriter w({"t", "z1", "mu"});
    w.row(std::vector<double>{0.0, 0.1, 2.5});
    w.row(std::vector<double>{0.02, -1e-20, 2.5});
    CHECK(w.rows() == 2);
    CHECK(w.str() == "t,z1,mu\n0,0.10000000000000001,2.5\n0.02,-9.9999999999999995e-21,2.5\n");
    CHECK(w.str().find('\r') == std::string::npos);
    CHECK_THROWS_AS(w.row(std::vector<double>{1.0}), Error);

    const auto t = parse_csv(w.str());
    CHECK(t.header == std::vector<std::string>{"t", "z1", "mu"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][1] == 0.1);
    CHECK(t.rows[1][1] == -1e-20);
    try {
        parse_csv("a,b\n1,x\n");
        FAIL("accepted bad csv");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
    }
    CHECK_THROWS_AS(parse_csv("a,b\n1\n"), Error);
}

TEST_CASE("atomic writes")
{
    const auto dir = scratch_dir("atomic");
    write_file_atomic(dir / "sub" / "f.txt", "hello\n");
    write_file_atomic(dir / "sub" / "f.txt", "again\n");
    CHECK(read_file(dir / "sub" / "f.txt") == "again\n");
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir / "sub")) n += e.is_regular_file();
    CHECK(n == 1);
    CHECK_THROWS_AS(read_file(dir / "missing"), Error);
    fs::remove_all(dir);
}

TEST_CASE("dataset round trip")
{
    const auto dir = scratch_dir("dataset");
    DatasetConfig cfg = DatasetConfig::vdp_defaults();
    cfg.mu = {0.28, 0.64};
    cfg.settle_time = 40.0;
    const auto data = make_reference_dataset("vdp", cfg);
    write_dataset(dir, data);
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(fs::exists(dir / (data.records[0].id + ".csv")));
    const auto back = read_dataset(dir);
    CHECK(dataset_fingerprint(back) == dataset_fingerprint(data));
    CHECK(back.records[1].states == data.records[1].states);
    CHECK(back.records[0].t == data.records[0].t);
    CHECK(back.state_names == data.state_names);
    const auto manifest = read_json(dir / "manifest.json");
    CHECK(manifest["format_version"] == 1);
    CHECK(manifest["records"][0]["stability"] == "stable");

    // any change shows in the fingerprint
    auto changed = data;
    changed.records[0].states(3, 1) += 1e-15;
    CHECK(dataset_fingerprint(changed) != dataset_fingerprint(data));
    CHECK(dataset_fingerprint(data).size() == 16);

    fs::remove(dir / "manifest.json");
    CHECK_THROWS_AS(read_dataset(dir), Error);
    fs::remove_all(dir);
}

TEST_CASE("model json round trip is byte identical")
{
    const auto dir = scratch_dir("model");
    for (bool sub : {false, true}) {
        const auto m = sample_model(sub, sub);
        write_model(dir / "a.json", m);
        const auto back = read_model(dir / "a.json");
        write_model(dir / "b.json", back);
        CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));
        CHECK(back.map.nn.parameters() == m.map.nn.parameters());
        CHECK(back.speed.nn.parameters() == m.speed.nn.parameters());
        CHECK(back.normal_form.mu0 == m.normal_form.mu0);
        CHECK(back.map.aux.size() == m.map.aux.size());
        CHECK(back.speed.mode == m.speed.mode);
    }
    auto j = model_to_json(sample_model(true, false));
    CHECK(j["format_version"] == kModelFormatVersion);
    auto missing = j;
    missing["normal_form"].erase("a2");
    try {
        model_from_json(missing);
        FAIL("accepted model without a2");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("a2") != std::string::npos);
    }
    auto future = j;
    future["format_version"] = 99;
    CHECK_THROWS_AS(model_from_json(future), Error);
    auto wrong_nn = j;
    wrong_nn["map"]["nn"]["layer_sizes"] = json::array({2, 5, 2});
    CHECK_THROWS_AS(model_from_json(wrong_nn), Error);
    fs::remove_all(dir);
}

TEST_CASE("bifurcation diagram structure")
{
    const auto sup = sample_model(false, false);
    auto d = build_bifurcation_diagram(sup, -0.5, 1.0, 16);
    CHECK(d.hopf_mu == sup.normal_form.mu0);
    CHECK(std::isnan(d.saddle_node_mu));
    int hopf = 0;
    for (std::size_t i = 0; i < d.rows.size(); ++i) {
        const auto& r = d.rows[i];
        if (i > 0) CHECK(r.mu >= d.rows[i - 1].mu);
        if (r.marker == "hopf") {
            ++hopf;
            CHECK(r.amplitude_max == 0.0);
        } else {
            CHECK(r.branch == "stable");
            CHECK(r.mu > sup.normal_form.mu0);
            CHECK(r.amplitude_max > 0.0);
        }
    }
    CHECK(hopf == 1);
    CHECK(d.branch_points == 10);

    const auto sub = sample_model(true, false);
    d = build_bifurcation_diagram(sub, 14.0, 19.0, 51);
    const double sn = saddle_node_mu(sub.normal_form);
    CHECK(d.saddle_node_mu == sn);
    int stable = 0, unstable = 0, fold = 0;
    for (const auto& r : d.rows) {
        if (r.marker == "saddle_node") {
            ++fold;
            CHECK(r.mu == sn);
        }
        if (r.marker.empty() && r.branch == "stable") {
            ++stable;
            CHECK(r.mu >= sn);
        }
        if (r.marker.empty() && r.branch == "unstable") {
            ++unstable;
            CHECK(r.mu >= sn);
            CHECK(r.mu <= sub.normal_form.mu0);
        }
    }
    CHECK(fold == 1);
    CHECK(stable > unstable);
    CHECK(unstable > 0);

    d = build_bifurcation_diagram(sup, 0.5, 0.5, 1);
    CHECK(d.branch_points == 1);
    CHECK(d.rows.size() == 2);  // the grid row and the hopf marker

    const std::string csv = d.to_csv();
    CHECK(csv.rfind("mu,branch,amplitude_max,amplitude_a0,marker\n", 0) == 0);
}

TEST_CASE("command line")
{
    const auto dir = scratch_dir("cli");
    const auto log = dir / "log.txt";
    const std::string d = dir.string();

    CHECK(run("", log) == 2);
    CHECK(run("no-such-command", log) == 2);
    CHECK(run("gen-data --system duffing --out " + d + "/x", log) == 2);

    REQUIRE(run("gen-data --system vdp --out " + d + "/vdp --mu 0.28 0.46 0.64 --settle 40", log) == 0);
    CHECK(fs::exists(dir / "vdp" / "manifest.json"));

    write_file_atomic(dir / "cfg.json", dump_json(tiny_config().to_json()));
    REQUIRE(run("train --data " + d + "/vdp --config " + d + "/cfg.json --out " + d + "/m1.json", log) == 0);
    CHECK(fs::exists(dir / "m1.report.json"));
    REQUIRE(run("train --data " + d + "/vdp --config " + d + "/cfg.json --out " + d + "/m2.json", log) == 0);
    CHECK(read_file(dir / "m1.json") == read_file(dir / "m2.json"));

    auto bad_cfg = tiny_config().to_json();
    bad_cfg.erase("stage2");
    write_file_atomic(dir / "bad.json", dump_json(bad_cfg));
    CHECK(run("train --data " + d + "/vdp --config " + d + "/bad.json --out " + d + "/m3.json", log) == 2);
    CHECK(read_file(log).find("stage2") != std::string::npos);

    // eval recomputes the report's finals
    REQUIRE(run("eval --model " + d + "/m1.json --data " + d + "/vdp --out " + d + "/metrics.json", log) == 0);
    const auto metrics = read_json(dir / "metrics.json");
    const auto report = read_json(dir / "m1.report.json");
    CHECK(std::abs(metrics["shape_loss"].get<double>() - report["shape_loss_final"].get<double>()) <= 1e-12);
    CHECK(std::abs(metrics["speed_loss"].get<double>() - report["speed_loss_final"].get<double>()) <= 1e-12);
    CHECK(metrics["fingerprint_match"] == true);
    CHECK(metrics["invertibility"]["min_abs_det"].get<double>() > 0.0);

    write_file_atomic(dir / "corrupt.json", "{\"format_version\": 1, \"normal_form\": ");
    CHECK(run("eval --model " + d + "/corrupt.json --data " + d + "/vdp --out " + d + "/x.json", log) == 2);

    REQUIRE(run("predict-timeseries --model " + d + "/m1.json --mu 0.46 --stability stable --tmax 2 --dt 0.01 --out " +
                    d + "/ts.csv",
                log) == 0);
    const auto ts = parse_csv(read_file(dir / "ts.csv"));
    CHECK(ts.header == std::vector<std::string>{"t", "z1_hat", "z2_hat", "mu"});
    CHECK(ts.rows.size() == 201);
    CHECK(run("predict-timeseries --model " + d + "/m1.json --mu 0.46 --stability unstable --out " + d + "/u.csv", log) ==
          4);
    CHECK(run("predict-orbit --model " + d + "/m1.json --mu 0.46 --stability unstable --out " + d + "/u.csv", log) == 4);
    REQUIRE(run("predict-orbit --model " + d + "/m1.json --mu 0.46 --stability stable --points 50 --out " + d + "/o.csv",
                log) == 0);
    CHECK(parse_csv(read_file(dir / "o.csv")).rows.size() == 50);

    REQUIRE(run("predict-bifurcation --model " + d + "/m1.json --mu-min 0 --mu-max 1 --steps 11 --out " + d + "/b.csv",
                log) == 0);
    CHECK(run("predict-bifurcation --model " + d + "/m1.json --mu-min -3 --mu-max -2 --steps 5 --out " + d + "/e.csv",
              log) == 2);
    CHECK(read_file(dir / "e.csv").find("hopf") != std::string::npos);

    REQUIRE(run("cross-validate --data " + d + "/vdp --config " + d + "/cfg.json --out " + d + "/cv.json", log) == 0);
    const auto cv = read_json(dir / "cv.json");
    CHECK(cv["schema_version"] == 1);
    CHECK(cv["folds"].size() == 3);
    CHECK(cv["summary"]["folds_ok"] == 3);

    // a record without an angular parameterisation aborts stage 1
    auto data = read_dataset(dir / "vdp");
    data.records[1].states.col(0).setConstant(0.1);
    write_dataset(dir / "broken", data);
    CHECK(run("train --data " + d + "/broken --config " + d + "/cfg.json --out " + d + "/m4.json", log) == 3);
    const auto partial = read_json(dir / "m4.report.json");
    CHECK(partial["failed_stage"] == "stage1");
    CHECK_FALSE(fs::exists(dir / "m4.json"));

    fs::remove_all(dir);
}
