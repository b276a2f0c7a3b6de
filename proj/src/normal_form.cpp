#include "hopf/normal_form.hpp"

#include <algorithm>
#include <cmath>

#include "hopf/error.hpp"

namespace hopf {

namespace {

constexpr double kDoubleRootTol = 1e-8;

double quintic_factor(const NormalFormParams& p) { return p.quintic_enabled ? 1.0 : 0.0; }

// Positive roots s = r^2 of (mu - mu0) + a2 s - q s^2 = 0, largest first.
// The flag marks a coalesced (double) root.
struct SquaredRoots {
    double values[2] = {0.0, 0.0};
    int count = 0;
    bool double_root = false;
};

SquaredRoots squared_roots(const NormalFormParams& p, double mu)
{
    SquaredRoots out;
    const double d = mu - p.mu0;
    if (!p.quintic_enabled) {
        if (p.a2 == 0.0) return out;
        const double s = -d / p.a2;
        if (s > 0.0) out.values[out.count++] = s;
        return out;
    }
    const double disc = p.a2 * p.a2 + 4.0 * d;
    const double tol = kDoubleRootTol * std::max(p.a2 * p.a2, 1e-300);
    if (std::abs(disc) <= tol) {
        if (p.a2 > 0.0) {
            out.values[out.count++] = 0.5 * p.a2;
            out.double_root = true;
        }
        return out;
    }
    if (disc < 0.0) return out;
    const double sq = std::sqrt(disc);
    const double s_hi = 0.5 * (p.a2 + sq);
    if (s_hi <= 0.0) return out;
    out.values[out.count++] = s_hi;
    // product of the roots is -d; avoids cancellation in (a2 - sq)/2
    const double s_lo = -d / s_hi;
    if (s_lo > 0.0) out.values[out.count++] = s_lo;
    return out;
}

}  // namespace

const char* to_string(Criticality c)
{
    return c == Criticality::Supercritical ? "supercritical" : "subcritical";
}

const char* to_string(Stability s) { return s == Stability::Stable ? "stable" : "unstable"; }

Criticality criticality_from_string(const std::string& s)
{
    if (s == "supercritical") return Criticality::Supercritical;
    if (s == "subcritical") return Criticality::Subcritical;
    throw Error(ErrorKind::InvalidArgument, "unknown criticality '" + s + "'");
}

Stability stability_from_string(const std::string& s)
{
    if (s == "stable") return Stability::Stable;
    if (s == "unstable") return Stability::Unstable;
    throw Error(ErrorKind::InvalidArgument, "unknown stability '" + s + "'");
}

NormalFormParams NormalFormParams::supercritical(double mu0, double a2)
{
    NormalFormParams p{mu0, a2, false, Criticality::Supercritical};
    p.validate();
    return p;
}

NormalFormParams NormalFormParams::subcritical(double mu0, double a2)
{
    NormalFormParams p{mu0, a2, true, Criticality::Subcritical};
    p.validate();
    return p;
}

void NormalFormParams::validate() const
{
    require(std::isfinite(mu0) && std::isfinite(a2), ErrorKind::InvalidArgument,
            "normal form coefficients must be finite");
    if (criticality == Criticality::Subcritical) {
        require(quintic_enabled, ErrorKind::InvalidArgument, "subcritical form requires the quintic term");
        require(a2 > 0.0, ErrorKind::InvalidArgument, "subcritical form requires a2 > 0");
    } else {
        require(a2 < 0.0, ErrorKind::InvalidArgument, "supercritical form requires a2 < 0");
    }
}

double radial_flow(const NormalFormParams& p, double r, double mu)
{
    const double r2 = r * r;
    return r * ((mu - p.mu0) + p.a2 * r2 - quintic_factor(p) * r2 * r2);
}

double radial_flow_slope(const NormalFormParams& p, double r, double mu)
{
    const double r2 = r * r;
    return (mu - p.mu0) + 3.0 * p.a2 * r2 - 5.0 * quintic_factor(p) * r2 * r2;
}

std::vector<LcoSolution> lco_radii(const NormalFormParams& p, double mu)
{
    const SquaredRoots roots = squared_roots(p, mu);
    std::vector<LcoSolution> out;
    out.reserve(static_cast<std::size_t>(roots.count));
    for (int i = 0; i < roots.count; ++i) {
        const double s = roots.values[i];
        // slope at a root reduces to 2 s (a2 - 2 q s)
        const double slope = 2.0 * s * (p.a2 - 2.0 * quintic_factor(p) * s);
        out.push_back({std::sqrt(s), !roots.double_root && slope < 0.0, mu});
    }
    return out;
}

double saddle_node_mu(const NormalFormParams& p)
{
    require(p.criticality == Criticality::Subcritical && p.quintic_enabled && p.a2 > 0.0,
            ErrorKind::InvalidArgument, "saddle-node only defined for the subcritical quintic form");
    return p.mu0 - 0.25 * p.a2 * p.a2;
}

std::vector<BranchSample> radius_branch(const NormalFormParams& p, const std::vector<double>& mu_grid)
{
    std::vector<BranchSample> out;
    out.reserve(mu_grid.size());
    for (double mu : mu_grid) {
        require(std::isfinite(mu), ErrorKind::InvalidArgument, "mu grid must be finite");
        BranchSample sample{mu, lco_radii(p, mu)};
        std::stable_partition(sample.solutions.begin(), sample.solutions.end(),
                              [](const LcoSolution& s) { return s.stable; });
        out.push_back(std::move(sample));
    }
    return out;
}

std::optional<LcoSolution> find_branch(const NormalFormParams& p, double mu, Stability stability)
{
    const bool want_stable = stability == Stability::Stable;
    for (const auto& s : lco_radii(p, mu))
        if (s.stable == want_stable) return s;
    return std::nullopt;
}

std::optional<RadiusSensitivity> branch_radius_sensitivity(const NormalFormParams& p, double mu,
                                                           Stability stability)
{
    const auto branch = find_branch(p, mu, stability);
    if (!branch) return std::nullopt;
    const double r = branch->radius;
    const double s = r * r;
    const double dF_ds = p.a2 - 2.0 * quintic_factor(p) * s;
    RadiusSensitivity out{r, 0.0, 0.0};
    if (dF_ds == 0.0 || r == 0.0) return out;
    const double ds_dmu0 = 1.0 / dF_ds;
    const double ds_da2 = -s / dF_ds;
    out.d_mu0 = ds_dmu0 / (2.0 * r);
    out.d_a2 = ds_da2 / (2.0 * r);
    return out;
}

}  // namespace hopf
