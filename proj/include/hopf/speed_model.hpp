#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hopf/coordinate_map.hpp"
#include "hopf/dataset.hpp"
#include "hopf/mlp.hpp"
#include "hopf/normal_form.hpp"

namespace hopf {

struct HybridModel;

enum class SpeedMode { ConstantCorrection, FourierCorrection };

const char* to_string(SpeedMode m);
SpeedMode speed_mode_from_string(const std::string& s);

// Oscillation speed on the LCO.
//   constant: omega0 + NN(r cos theta, r sin theta, mu)            (3 -> 1)
//   fourier:  omega0 + NN(r, mu)^T [1, cos k theta.., sin k theta..] (2 -> 2 n_h + 1)
struct SpeedModel {
    double omega0 = 1.0;
    SpeedMode mode = SpeedMode::ConstantCorrection;
    int n_h_speed = 0;
    Mlp nn{std::vector<int>{3, 1}};
    // network sees (mu - mu_center) / mu_scale
    double mu_center = 0.0;
    double mu_scale = 1.0;

    static SpeedModel constant(double omega0, const std::vector<int>& hidden = {});
    static SpeedModel fourier(double omega0, int n_h_speed, const std::vector<int>& hidden = {});
    void validate() const;
};

// Raw Omega; no positivity check.
double omega_eval(const SpeedModel& s, double r, double theta, double mu);

// Classical RK4 on theta' = Omega(r, theta, mu) with `substeps` steps per grid
// interval. Throws NonPositiveSpeed if Omega <= 0 at any stage and
// NumericalFailure (with the step index) on non-finite values.
std::vector<double> integrate_phase(const SpeedModel& s, double r, double mu, double theta0,
                                    std::span<const double> t_grid, int substeps = 1);

struct PredictedTimeSeries {
    double mu = 0.0;
    double radius = 0.0;
    std::vector<double> t;
    std::vector<double> theta;
    Eigen::MatrixXd z;  // samples x observed states
};

PredictedTimeSeries predict_timeseries(const HybridModel& model, double mu, Stability stability,
                                       const Eigen::Vector2d& z_init, std::span<const double> t_grid,
                                       int substeps = 1);

// Time for one revolution, integral of dtheta / Omega over the orbit.
double predicted_period(const HybridModel& model, double mu, Stability stability, int samples = 4096);

// One record prepared for the speed loss: LCO radius and matched initial phase
// are fixed by the (frozen) map and normal form.
struct SpeedTarget {
    std::string id;
    double mu = 0.0;
    double radius = 0.0;
    double theta0 = 0.0;
    std::vector<double> t;
    Eigen::Matrix2Xd z;  // measured (z1, z2)
};

std::vector<SpeedTarget> speed_targets(const TrainingDataset& data, const CoordinateMap& map,
                                       const NormalFormParams& p, int downsample_limit = 0);

struct SpeedLossOptions {
    bool training = false;
    int substeps = 1;
    double clamp = 1e-6;             // training-mode floor on Omega
    double clamp_penalty = 1e3;      // per unit of Omega below the floor
};

struct SpeedLossTerms {
    double total = 0.0;
    std::vector<double> per_record;
    int clamped_stages = 0;
};

// Sum over records and samples of |U12(u(t_j), mu) - z(t_j)|. The gradient is
// w.r.t. [omega0, speed network parameters...], via reverse mode through the
// unrolled RK4 steps.
SpeedLossTerms speed_loss_terms(const std::vector<SpeedTarget>& targets, const CoordinateMap& map,
                                const SpeedModel& speed, const SpeedLossOptions& options,
                                Eigen::VectorXd* gradient = nullptr);

// Evaluation-mode loss over the full dataset.
double speed_loss(const TrainingDataset& data, const HybridModel& model);

}  // namespace hopf
