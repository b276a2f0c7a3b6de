#pragma once

#include <complex>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hopf/dataset.hpp"

namespace hopf {

// f(x, mu) of an autonomous system
using VectorField = std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)>;

struct ReferenceSystem {
    std::string name;
    int dim = 0;
    VectorField rhs;
    std::vector<int> observed;  // state indices exported as z1..zm
    std::vector<std::string> state_names;
    std::vector<std::string> units;
    std::string mu_units;
    Eigen::VectorXd initial_state;  // start of simulate_lco
    int amplitude_index = 0;        // coordinate used for amplitude measures
    int phase_index = 1;            // its velocity, zero at the Poincare section
    // Acceleration produced by a unit control force, as a full state vector.
    // Empty when the system has no actuator.
    std::function<Eigen::VectorXd(double mu)> control_input;
    int control_dof = -1;           // displacement index the controller tracks
    int control_rate = -1;          // its velocity index
};

Eigen::VectorXd rk4_step(const VectorField& f, const Eigen::VectorXd& x, double mu, double h);

// Integrates `steps` RK4 steps of size h and returns the final state.
Eigen::VectorXd rk4_flow(const VectorField& f, Eigen::VectorXd x, double mu, double h, long steps);

// ---- Van der Pol --------------------------------------------------------

Eigen::Vector2d vdp_rhs(double z1, double z2, double mu);
ReferenceSystem vdp_system();

// ---- 3-DOF pitch/heave/aerodynamic-state aerofoil -------------------------

struct AeroParams {
    double U = 17.0;       // airspeed, m/s
    double b = 0.15;       // semi-chord, m
    double a = -0.5;       // elastic axis position
    double rho = 1.204;    // kg/m^3
    double m_w = 5.3;      // kg
    double m_T = 16.9;     // kg
    double I_alpha = 0.1726;
    double c_alpha = 0.5628;
    double c_h = 15.443;
    double k_alpha = 54.1162;
    double k_alpha2 = 751.6;
    double k_alpha3 = 5006.7;
    double k_h = 3529.4;
    double x_alpha = 0.234;
    double c0 = 1.0;
    double c1 = 0.1650;
    double c2 = 0.0455;
    double c3 = 0.335;
    double c4 = 0.3;
    // Density factor on the heave/aerodynamic-state coupling terms D13, K13.
    bool density_on_heave_coupling = true;

    double c_hat() const { return c0 - c1 - c3; }
};

struct AeroMatrices {
    Eigen::Matrix3d M;
    Eigen::Matrix3d D;
    Eigen::Matrix3d K;
};

AeroMatrices aero_matrices(const AeroParams& p);

// State (h, alpha, w, h', alpha', w'). Throws InvalidArgument on a singular mass matrix.
Eigen::VectorXd aero_rhs(const Eigen::VectorXd& state, const AeroParams& p);

// Linearization about the origin, 6x6.
Eigen::MatrixXd aero_linearization(const AeroParams& p);

// Largest real part of the linearization eigenvalues.
double aero_max_real_eigenvalue(const AeroParams& p);

// Airspeed where the leading eigenvalue pair crosses the imaginary axis, by bisection.
double aero_hopf_speed(AeroParams p, double u_lo = 14.0, double u_hi = 19.0, double tol = 1e-8);

// Imaginary part of the critical eigenvalue pair at p.U.
double aero_flutter_frequency(const AeroParams& p);

ReferenceSystem aero_system(const AeroParams& base = {}, bool observe_w = false);

// ---- LCO generation -------------------------------------------------------

struct SimulationOptions {
    double dt = 0.02;          // sampling interval
    double settle_time = 100.0;
    double record_time = 10.0;
    int substeps = 1;          // RK4 steps per sampling interval
    double settle_tolerance = 5e-3;
};

// Integrates from the system's initial state, discards settle_time and records
// record_time. Throws NoLco when the response decays and NotSettled when the
// first and last period amplitudes differ by more than the tolerance.
LcoRecord simulate_lco(const ReferenceSystem& sys, double mu, const SimulationOptions& opt);

// Same, from an explicit initial state.
LcoRecord simulate_lco_from(const ReferenceSystem& sys, double mu, const Eigen::VectorXd& x0,
                            const SimulationOptions& opt);

struct ShootingOptions {
    int max_iterations = 50;
    double tolerance = 1e-9;
    int steps_per_period = 4000;
    double fd_step = 1e-7;
    bool require_unstable = true;
};

struct PeriodicOrbit {
    double mu = 0.0;
    double period = 0.0;
    Eigen::VectorXd x0;
    std::vector<std::complex<double>> multipliers;
    double residual = 0.0;
    int iterations = 0;

    // Largest multiplier modulus after removing the one closest to +1.
    double max_nontrivial_multiplier() const;
    bool unstable() const { return max_nontrivial_multiplier() > 1.0; }
};

// Newton on (x(T) - x(0), <f(x_g), x(0) - x_g>) over (x(0), T). Monodromy by
// central differences of the flow map. Throws NoConvergence, and NoLco when
// require_unstable is set and no multiplier leaves the unit circle.
PeriodicOrbit shoot_periodic_orbit(const ReferenceSystem& sys, double mu, double period_guess,
                                   const Eigen::VectorXd& state_guess, const ShootingOptions& opt = {});

// Samples a periodic orbit on t = 0, dt, ... for record_time (periodic extension).
LcoRecord sample_periodic_orbit(const ReferenceSystem& sys, const PeriodicOrbit& orbit, double dt,
                                double record_time, Stability stability, const std::string& provenance);

LcoRecord find_unstable_lco_shooting(const ReferenceSystem& sys, double mu, double period_guess,
                                     const Eigen::VectorXd& state_guess, double dt, double record_time,
                                     const ShootingOptions& opt = {});

struct PdGains {
    double kp = 0.0;
    double kd = 0.0;
};

struct PdTarget {
    double amplitude = 0.0;  // fundamental cosine amplitude of the tracked coordinate
    double omega = 0.0;      // rad/s
};

struct PdOptions {
    double settle_time = 4.0;
    double record_time = 1.0;
    double dt = 0.001;
    int harmonics = 7;
    int steps_per_period = 800;
    int max_newton = 30;
    int picard_sweeps = 4;
    double tolerance = 1e-6;          // on the fundamental control components, relative to kp * amplitude
    double invasiveness_limit = 1e-2;  // control power / response power
    double divergence_limit = 10.0;   // any state beyond this is a failure
};

struct PdResult {
    LcoRecord record;
    double amplitude = 0.0;
    double omega = 0.0;
    double control_power_ratio = 0.0;
    int newton_iterations = 0;
};

// Control-based continuation emulation: PD force on the tracked coordinate,
// multi-harmonic target with Picard updates of the higher harmonics and Newton
// on the fundamental (amplitude, frequency) until the control is non-invasive.
// Throws NotStabilized or Invasive.
PdResult find_unstable_lco_pd(const ReferenceSystem& sys, double mu, const PdGains& gains,
                              const PdTarget& target, const PdOptions& opt = {});

// Periodic-orbit branch parameterised by the amplitude coordinate at the
// Poincare section (its velocity zero): unknowns (x0, T, mu).
struct BranchPoint {
    double mu = 0.0;
    double amplitude = 0.0;  // x0[amplitude_index]
    double period = 0.0;
    Eigen::VectorXd x0;
};

// Settles onto the attracting orbit at mu from the system's initial state and
// returns the first state on the section together with a period estimate.
BranchPoint section_start(const ReferenceSystem& sys, double mu, double settle_time, double h);

BranchPoint solve_at_amplitude(const ReferenceSystem& sys, double amplitude, const BranchPoint& guess,
                               const ShootingOptions& opt = {});

// Natural continuation in amplitude from `start` to amp_to in `points` steps.
std::vector<BranchPoint> trace_branch(const ReferenceSystem& sys, const BranchPoint& start, double amp_to,
                                      int points, const ShootingOptions& opt = {});

struct FoldLocation {
    double mu = 0.0;
    double amplitude = 0.0;
    double period = 0.0;
};

// Minimum of mu along a traced branch, refined by golden-section search.
FoldLocation locate_fold(const ReferenceSystem& sys, const std::vector<BranchPoint>& branch,
                         const ShootingOptions& opt = {});

// Orbit at mu on the stable (amplitude above the fold) or unstable side of a traced branch.
BranchPoint branch_point_at_mu(const ReferenceSystem& sys, const std::vector<BranchPoint>& branch, double mu,
                               Stability side, const ShootingOptions& opt = {});

// ---- datasets --------------------------------------------------------------

struct DatasetConfig {
    std::vector<double> mu;           // vdp: stable records
    std::vector<double> mu_stable;    // aero
    std::vector<double> mu_unstable;  // aero
    double dt = 0.0;
    double record_time = 0.0;
    double settle_time = 0.0;
    int substeps = 0;
    bool observe_w = false;
    std::string unstable_method = "pd";  // pd | shooting
    PdGains gains{1000.0, 200.0};

    static DatasetConfig vdp_defaults();
    static DatasetConfig aero_defaults();
};

TrainingDataset make_reference_dataset(const std::string& which, const DatasetConfig& cfg);

// Single stable or unstable aero record at mu with the dataset conventions.
LcoRecord aero_record(const ReferenceSystem& sys, double mu, Stability stability, const DatasetConfig& cfg);

}  // namespace hopf
