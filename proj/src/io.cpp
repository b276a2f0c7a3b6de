#include "hopf/io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "hopf/error.hpp"

namespace hopf {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_file_atomic(const fs::path& path, const std::string& content)
{
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::random_device rd;
    const fs::path tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(rd()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            out.close();
            fs::remove(tmp, ec);
            throw Error(ErrorKind::Io, "write failed for " + path.string());
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorKind::Io, "cannot rename into " + path.string());
    }
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- CSV -------------------------------------------------------------------

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size())
{
    require(!header.empty(), ErrorKind::InvalidArgument, "CSV needs at least one column");
    row(header);
    rows_ = 0;
}

CsvWriter& CsvWriter::row(const std::vector<std::string>& cells)
{
    require(cells.size() == columns_, ErrorKind::InvalidArgument, "CSV row has the wrong number of cells");
    for (std::size_t i = 0; i < cells.size(); ++i) {
        require(cells[i].find_first_of(",\n\r\"") == std::string::npos, ErrorKind::InvalidArgument,
                "CSV cell contains a separator");
        if (i) text_ += ',';
        text_ += cells[i];
    }
    text_ += '\n';
    ++rows_;
    return *this;
}

CsvWriter& CsvWriter::row(const std::vector<double>& values)
{
    std::vector<std::string> cells;
    cells.reserve(values.size());
    for (double v : values) cells.push_back(format_double(v));
    return row(cells);
}

CsvTable parse_csv(const std::string& text, const std::string& source)
{
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream ls(s);
        while (std::getline(ls, cell, ',')) out.push_back(cell);
        if (!s.empty() && s.back() == ',') out.emplace_back();
        return out;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size())
            throw Error(ErrorKind::Io, source + ":" + std::to_string(line_no) + ": expected " +
                                           std::to_string(t.header.size()) + " columns");
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            char* end = nullptr;
            errno = 0;
            const double v = std::strtod(c.c_str(), &end);
            if (c.empty() || end != c.c_str() + c.size() || errno == ERANGE)
                throw Error(ErrorKind::Io, source + ":" + std::to_string(line_no) + ": bad number '" + c + "'");
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    if (t.header.empty()) throw Error(ErrorKind::Io, source + ": empty file");
    return t;
}

// ---- datasets ------------------------------------------------------------------

namespace {

// Field access with a dotted path in the error message.
const json& at(const json& j, const std::string& key, const std::string& where)
{
    if (!j.is_object() || !j.contains(key))
        throw Error(ErrorKind::InvalidArgument, "missing field '" + where + key + "'");
    return j.at(key);
}

template <class T>
T get(const json& j, const std::string& key, const std::string& where)
{
    const json& v = at(j, key, where);
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorKind::InvalidArgument, "field '" + where + key + "' has the wrong type");
    }
}

json mlp_to_json(const Mlp& net)
{
    const Eigen::VectorXd& p = net.parameters();
    return {{"layer_sizes", net.layer_sizes()}, {"parameters", std::vector<double>(p.data(), p.data() + p.size())}};
}

Mlp mlp_from_json(const json& j, const std::string& where)
{
    const auto sizes = get<std::vector<int>>(j, "layer_sizes", where);
    const auto params = get<std::vector<double>>(j, "parameters", where);
    require(sizes.size() >= 2, ErrorKind::InvalidArgument, "field '" + where + "layer_sizes' needs two entries");
    for (int s : sizes) require(s >= 1, ErrorKind::InvalidArgument, "field '" + where + "layer_sizes' must be positive");
    Mlp net(sizes);
    require(static_cast<Eigen::Index>(params.size()) == net.parameter_count(), ErrorKind::InvalidArgument,
            "field '" + where + "parameters' has the wrong length");
    net.set_parameters(Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size())));
    require(net.all_finite(), ErrorKind::InvalidArgument, "field '" + where + "parameters' is not finite");
    return net;
}

}  // namespace

void write_dataset(const fs::path& dir, const TrainingDataset& data)
{
    data.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string());
    json records = json::array();
    for (const auto& r : data.records) {
        require(!r.id.empty() && r.id.find_first_of("/\\") == std::string::npos, ErrorKind::InvalidArgument,
                "record id '" + r.id + "' is not a valid file name");
        std::vector<std::string> header{"t"};
        for (int k = 0; k < data.m; ++k) header.push_back("z" + std::to_string(k + 1));
        CsvWriter csv(header);
        for (Eigen::Index i = 0; i < r.samples(); ++i) {
            std::vector<double> row{r.t[static_cast<std::size_t>(i)]};
            for (int k = 0; k < data.m; ++k) row.push_back(r.states(i, k));
            csv.row(row);
        }
        const std::string file = r.id + ".csv";
        write_file_atomic(dir / file, csv.str());
        records.push_back({{"id", r.id},
                           {"file", file},
                           {"mu", r.mu},
                           {"stability", to_string(r.stability)},
                           {"dt", r.dt()},
                           {"samples", r.samples()},
                           {"provenance", r.provenance}});
    }
    const json manifest{{"format_version", kDatasetFormatVersion},
                        {"m", data.m},
                        {"state_names", data.state_names},
                        {"units", data.units},
                        {"mu_units", data.mu_units},
                        {"records", records}};
    write_file_atomic(dir / "manifest.json", dump_json(manifest));
}

TrainingDataset read_dataset(const fs::path& dir)
{
    const json manifest = read_json(dir / "manifest.json");
    const int version = get<int>(manifest, "format_version", "");
    require(version == kDatasetFormatVersion, ErrorKind::InvalidArgument,
            "unsupported dataset format version " + std::to_string(version));
    TrainingDataset data;
    data.m = get<int>(manifest, "m", "");
    if (manifest.contains("state_names")) data.state_names = get<std::vector<std::string>>(manifest, "state_names", "");
    if (manifest.contains("units")) data.units = get<std::vector<std::string>>(manifest, "units", "");
    if (manifest.contains("mu_units")) data.mu_units = get<std::string>(manifest, "mu_units", "");
    const json& recs = at(manifest, "records", "");
    require(recs.is_array(), ErrorKind::InvalidArgument, "field 'records' must be an array");
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const std::string where = "records[" + std::to_string(i) + "].";
        const json& e = recs[i];
        LcoRecord r;
        r.id = get<std::string>(e, "id", where);
        r.mu = get<double>(e, "mu", where);
        r.stability = stability_from_string(get<std::string>(e, "stability", where));
        if (e.contains("provenance")) r.provenance = get<std::string>(e, "provenance", where);
        const std::string file = get<std::string>(e, "file", where);
        const CsvTable t = parse_csv(read_file(dir / file), file);
        require(static_cast<int>(t.header.size()) == data.m + 1, ErrorKind::Io,
                file + ": expected t plus " + std::to_string(data.m) + " state columns");
        r.t.reserve(t.rows.size());
        r.states.resize(static_cast<Eigen::Index>(t.rows.size()), data.m);
        for (std::size_t k = 0; k < t.rows.size(); ++k) {
            r.t.push_back(t.rows[k][0]);
            for (int c = 0; c < data.m; ++c) r.states(static_cast<Eigen::Index>(k), c) = t.rows[k][static_cast<std::size_t>(c + 1)];
        }
        if (e.contains("dt")) {
            const double dt = get<double>(e, "dt", where);
            require(std::abs(r.dt() - dt) <= 1e-9 * std::abs(dt), ErrorKind::InvalidArgument,
                    file + ": time step disagrees with the manifest");
        }
        data.records.push_back(std::move(r));
    }
    data.validate();
    return data;
}

// ---- models --------------------------------------------------------------------

json model_to_json(const HybridModel& model)
{
    const auto& nf = model.normal_form;
    const auto& map = model.map;
    json aux = json::array();
    for (const auto& a : map.aux)
        aux.push_back({{"coefficients", std::vector<double>(a.coefficients.data(),
                                                            a.coefficients.data() + a.coefficients.size())},
                       {"ridge", a.ridge}});
    const auto& L = map.linear.rows;
    return {
        {"format_version", model.format_version},
        {"normal_form",
         {{"criticality", to_string(nf.criticality)},
          {"mu0", nf.mu0},
          {"a2", nf.a2},
          {"quintic_enabled", nf.quintic_enabled}}},
        {"map",
         {{"linear", {{L(0, 0), L(0, 1), L(0, 2)}, {L(1, 0), L(1, 1), L(1, 2)}}},
          {"offset", {map.offset.s1, map.offset.s2}},
          {"mu_center", map.mu_center},
          {"mu_scale", map.mu_scale},
          {"nn", mlp_to_json(map.nn)},
          {"aux", aux}}},
        {"speed",
         {{"mode", to_string(model.speed.mode)},
          {"omega0", model.speed.omega0},
          {"n_h_speed", model.speed.n_h_speed},
          {"mu_center", model.speed.mu_center},
          {"mu_scale", model.speed.mu_scale},
          {"nn", mlp_to_json(model.speed.nn)}}},
        {"dataset_fingerprint", model.dataset_fingerprint},
        {"config", model.config},
    };
}

HybridModel model_from_json(const json& j)
{
    require(j.is_object(), ErrorKind::InvalidArgument, "model must be a JSON object");
    HybridModel m;
    m.format_version = get<int>(j, "format_version", "");
    require(m.format_version == kModelFormatVersion, ErrorKind::InvalidArgument,
            "unsupported model format version " + std::to_string(m.format_version));

    const json& nf = at(j, "normal_form", "");
    m.normal_form.criticality = criticality_from_string(get<std::string>(nf, "criticality", "normal_form."));
    m.normal_form.mu0 = get<double>(nf, "mu0", "normal_form.");
    m.normal_form.a2 = get<double>(nf, "a2", "normal_form.");
    m.normal_form.quintic_enabled = get<bool>(nf, "quintic_enabled", "normal_form.");

    const json& map = at(j, "map", "");
    const auto lin = get<std::vector<std::vector<double>>>(map, "linear", "map.");
    require(lin.size() == 2 && lin[0].size() == 3 && lin[1].size() == 3, ErrorKind::InvalidArgument,
            "field 'map.linear' must be 2x3");
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c) m.map.linear.rows(r, c) = lin[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    const auto off = get<std::vector<double>>(map, "offset", "map.");
    require(off.size() == 2, ErrorKind::InvalidArgument, "field 'map.offset' must have two entries");
    m.map.offset = {off[0], off[1]};
    m.map.mu_center = get<double>(map, "mu_center", "map.");
    m.map.mu_scale = get<double>(map, "mu_scale", "map.");
    m.map.nn = mlp_from_json(at(map, "nn", "map."), "map.nn.");
    const json& aux = at(map, "aux", "map.");
    require(aux.is_array(), ErrorKind::InvalidArgument, "field 'map.aux' must be an array");
    for (std::size_t i = 0; i < aux.size(); ++i) {
        const std::string where = "map.aux[" + std::to_string(i) + "].";
        AuxiliaryMap a;
        const auto c = get<std::vector<double>>(aux[i], "coefficients", where);
        require(c.size() == static_cast<std::size_t>(AuxiliaryMap::kFeatureCount), ErrorKind::InvalidArgument,
                "field '" + where + "coefficients' has the wrong length");
        a.coefficients = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
        a.ridge = get<double>(aux[i], "ridge", where);
        m.map.aux.push_back(std::move(a));
    }

    const json& sp = at(j, "speed", "");
    m.speed.mode = speed_mode_from_string(get<std::string>(sp, "mode", "speed."));
    m.speed.omega0 = get<double>(sp, "omega0", "speed.");
    m.speed.n_h_speed = get<int>(sp, "n_h_speed", "speed.");
    m.speed.mu_center = get<double>(sp, "mu_center", "speed.");
    m.speed.mu_scale = get<double>(sp, "mu_scale", "speed.");
    m.speed.nn = mlp_from_json(at(sp, "nn", "speed."), "speed.nn.");

    m.dataset_fingerprint = get<std::string>(j, "dataset_fingerprint", "");
    m.config = at(j, "config", "");
    m.validate();
    return m;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

void write_model(const fs::path& path, const HybridModel& model)
{
    model.validate();
    write_file_atomic(path, dump_json(model_to_json(model)));
}

json read_json(const fs::path& path)
{
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Io, path.string() + ": " + e.what());
    }
}

HybridModel read_model(const fs::path& path) { return model_from_json(read_json(path)); }

}  // namespace hopf
