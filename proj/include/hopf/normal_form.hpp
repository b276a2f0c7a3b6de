#pragma once

#include <optional>
#include <string>
#include <vector>

namespace hopf {

enum class Criticality { Supercritical, Subcritical };
enum class Stability { Stable, Unstable };

const char* to_string(Criticality c);
const char* to_string(Stability s);
Criticality criticality_from_string(const std::string& s);
Stability stability_from_string(const std::string& s);

// Coefficients of the radial equation  r' = (mu - mu0) r + a2 r^3 - [quintic] r^5.
struct NormalFormParams {
    double mu0 = 0.0;
    double a2 = -1.0;
    bool quintic_enabled = false;
    Criticality criticality = Criticality::Supercritical;

    static NormalFormParams supercritical(double mu0, double a2 = -1.0);
    static NormalFormParams subcritical(double mu0, double a2);

    // Throws InvalidArgument when the criticality invariants are violated.
    void validate() const;
};

struct LcoSolution {
    double radius = 0.0;
    bool stable = false;
    double mu = 0.0;
};

double radial_flow(const NormalFormParams& p, double r, double mu);

// d(r')/dr
double radial_flow_slope(const NormalFormParams& p, double r, double mu);

// All strictly positive LCO radii at mu, largest first. A double root (saddle-node)
// is reported once and labelled unstable.
std::vector<LcoSolution> lco_radii(const NormalFormParams& p, double mu);

// Fold of the subcritical branch, mu0 - a2^2/4.
double saddle_node_mu(const NormalFormParams& p);

struct BranchSample {
    double mu = 0.0;
    std::vector<LcoSolution> solutions;  // stable first
};

std::vector<BranchSample> radius_branch(const NormalFormParams& p, const std::vector<double>& mu_grid);

// LCO with the requested stability at mu, if any.
std::optional<LcoSolution> find_branch(const NormalFormParams& p, double mu, Stability stability);

// Radius of a branch together with its sensitivities to (mu0, a2), from implicit
// differentiation of the radial fixed-point condition.
struct RadiusSensitivity {
    double radius = 0.0;
    double d_mu0 = 0.0;
    double d_a2 = 0.0;
};

std::optional<RadiusSensitivity> branch_radius_sensitivity(const NormalFormParams& p, double mu,
                                                           Stability stability);

}  // namespace hopf
