#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "hopf/dataset.hpp"
#include "hopf/mlp.hpp"
#include "hopf/normal_form.hpp"
#include "hopf/orbit_geometry.hpp"

namespace hopf {

// Rows 1-2 of the 3x3 linear map on (u1, u2, mu); row 3 is fixed to (0, 0, 1)
// so that mu passes through unchanged.
struct LinearMap {
    Eigen::Matrix<double, 2, 3> rows = (Eigen::Matrix<double, 2, 3>() << 1, 0, 0, 0, 1, 0).finished();

    Eigen::Matrix3d full() const;
    Eigen::Matrix2d block() const { return rows.leftCols<2>(); }
    double determinant() const { return block().determinant(); }
    void validate() const;  // |det| > 1e-10
};

struct TranslationOffset {
    double s1 = 0.0;
    double s2 = 0.0;

    Eigen::Vector2d vec() const { return {s1, s2}; }
};

// Cubic polynomial ridge regression from (u1, u2, mu) to one extra observed state.
struct AuxiliaryMap {
    static constexpr int kFeatureCount = 11;
    using Features = Eigen::Matrix<double, kFeatureCount, 1>;

    Eigen::VectorXd coefficients = Eigen::VectorXd::Zero(kFeatureCount);
    double ridge = 1e-8;

    // [1, u1, u2, mu, u1^2, u1 u2, u2^2, u1^3, u1^2 u2, u1 u2^2, u2^3]
    static Features features(double u1, double u2, double mu);
    double eval(double u1, double u2, double mu) const;
};

struct CoordinateMap {
    LinearMap linear;
    TranslationOffset offset;
    Mlp nn{std::vector<int>{3, 2}};
    std::vector<AuxiliaryMap> aux;
    // mu enters the linear part and the network as (mu - mu_center) / mu_scale
    double mu_center = 0.0;
    double mu_scale = 1.0;

    double scaled_mu(double mu) const { return (mu - mu_center) / mu_scale; }

    // Identity linear part, zero offset, zero-weight correction network.
    static CoordinateMap identity(const std::vector<int>& hidden = {});
    void validate() const;
};

Eigen::Vector2d map_forward(const CoordinateMap& map, double u1, double u2, double mu);

// Columns of `inputs` are (u1, u2, mu), mu unscaled.
Eigen::Matrix2Xd map_forward_batch(const CoordinateMap& map, const Eigen::Matrix3Xd& inputs);

// All observed states: (z1, z2) from the planar map followed by the auxiliary maps.
Eigen::VectorXd map_observation(const CoordinateMap& map, double u1, double u2, double mu);

// d(z1, z2)/d(u1, u2)
Eigen::Matrix2d map_jacobian(const CoordinateMap& map, double u1, double u2, double mu);

// Newton solve of map_forward(u) = z. Throws NoConvergence or SingularJacobian.
Eigen::Vector2d map_inverse(const CoordinateMap& map, const Eigen::Vector2d& z, double mu,
                            std::optional<Eigen::Vector2d> guess = std::nullopt);

// n_points equi-spaced normal-form phases on the LCO of the requested stability,
// mapped to observation space. Centre = centroid of the mapped points.
PlanarOrbit predicted_orbit(const CoordinateMap& map, const NormalFormParams& p, double mu,
                            Stability stability, int n_points = 100);

// Normal-form point on the LCO whose mapped image has the same phase angle as
// z_init, angles measured about `center` (default: predicted orbit centroid).
Eigen::Vector2d match_initial_phase(const CoordinateMap& map, const NormalFormParams& p,
                                    const Eigen::Vector2d& z_init, double mu, Stability stability,
                                    std::optional<Eigen::Vector2d> center = std::nullopt);

// Ridge regression of z3..zm on inverse-mapped normal-form coordinates.
std::vector<AuxiliaryMap> fit_auxiliary_maps(const TrainingDataset& data, const CoordinateMap& map,
                                             double ridge = 1e-8);

struct InvertibilityGrid {
    int radii = 13;
    int angles = 48;
    int mus = 9;
};

struct InvertibilityReport {
    double min_abs_det = 0.0;
    double max_abs_det = 0.0;
    Eigen::Vector3d argmin = Eigen::Vector3d::Zero();  // (u1, u2, mu)
    int samples = 0;
    int sign_changes = 0;  // samples whose det sign differs from the majority
    double max_radius = 0.0;

    bool invertible() const { return min_abs_det > 0.0 && sign_changes == 0; }
};

// |det J| over the annulus r in [0, 1.2 max LCO radius] for mu in [mu_lo, mu_hi].
InvertibilityReport invertibility_report(const CoordinateMap& map, const NormalFormParams& p, double mu_lo,
                                         double mu_hi, const InvertibilityGrid& grid = {});

}  // namespace hopf
