#include "hopf/diagram.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hopf/coordinate_map.hpp"
#include "hopf/error.hpp"
#include "hopf/io.hpp"
#include "hopf/orbit_geometry.hpp"

namespace hopf {

namespace {

DiagramRow measure(const HybridModel& model, double mu, Stability s, int n_points, int n_h)
{
    DiagramRow row;
    row.mu = mu;
    row.branch = to_string(s);
    const PlanarOrbit orbit = predicted_orbit(model.map, model.normal_form, mu, s, n_points);
    for (const auto& p : orbit.points) row.amplitude_max = std::max(row.amplitude_max, (p - orbit.center).norm());
    try {
        row.amplitude_a0 = orbit_descriptor(orbit, n_h).a(0);
    } catch (const Error&) {
        row.amplitude_a0 = std::numeric_limits<double>::quiet_NaN();
    }
    return row;
}

}  // namespace

BifurcationDiagram build_bifurcation_diagram(const HybridModel& model, double mu_min, double mu_max, int steps,
                                             int n_points, int n_h)
{
    require(steps >= 1, ErrorKind::InvalidArgument, "steps must be >= 1");
    require(std::isfinite(mu_min) && std::isfinite(mu_max) && mu_max >= mu_min, ErrorKind::InvalidArgument,
            "parameter range must be finite and ordered");
    const NormalFormParams& p = model.normal_form;
    BifurcationDiagram d;
    d.hopf_mu = p.mu0;
    d.saddle_node_mu = p.criticality == Criticality::Subcritical ? saddle_node_mu(p)
                                                                  : std::numeric_limits<double>::quiet_NaN();

    for (int k = 0; k < steps; ++k) {
        const double mu = steps == 1 ? mu_min : mu_min + (mu_max - mu_min) * k / (steps - 1);
        bool any = false;
        for (const auto& sol : lco_radii(p, mu)) {
            const Stability s = sol.stable ? Stability::Stable : Stability::Unstable;
            d.rows.push_back(measure(model, mu, s, n_points, n_h));
            any = true;
        }
        if (any) ++d.branch_points;
    }

    // branch ends: the Hopf point (zero radius) and the fold
    DiagramRow hopf;
    hopf.mu = p.mu0;
    hopf.branch = p.criticality == Criticality::Subcritical ? "unstable" : "stable";
    hopf.amplitude_max = 0.0;
    hopf.amplitude_a0 = 0.0;
    hopf.marker = "hopf";
    d.rows.push_back(hopf);
    if (p.criticality == Criticality::Subcritical) {
        DiagramRow fold = measure(model, d.saddle_node_mu, Stability::Unstable, n_points, n_h);
        fold.branch = "fold";
        fold.marker = "saddle_node";
        d.rows.push_back(fold);
    }
    std::stable_sort(d.rows.begin(), d.rows.end(),
                     [](const DiagramRow& a, const DiagramRow& b) { return a.mu < b.mu; });
    return d;
}

std::string BifurcationDiagram::to_csv() const
{
    CsvWriter csv({"mu", "branch", "amplitude_max", "amplitude_a0", "marker"});
    for (const auto& r : rows)
        csv.row({format_double(r.mu), r.branch, format_double(r.amplitude_max), format_double(r.amplitude_a0),
                 r.marker});
    return csv.str();
}

}  // namespace hopf
