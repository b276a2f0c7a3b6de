#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hopf/coordinate_map.hpp"
#include "hopf/dataset.hpp"
#include "hopf/normal_form.hpp"
#include "hopf/orbit_geometry.hpp"

namespace hopf {

// Measured orbit reduced to what the shape loss needs.
struct ShapeTarget {
    std::string id;
    double mu = 0.0;
    Stability stability = Stability::Stable;
    Eigen::Vector2d center = Eigen::Vector2d::Zero();  // polar centre, shared with the prediction
    OrbitDescriptor descriptor;
};

// Descriptors of every record, fitted to all samples about the record's centroid.
std::vector<ShapeTarget> shape_targets(const TrainingDataset& data, int n_h = 10);

struct ShapeLossOptions {
    int n_points = 100;
    int n_h = 10;
    // Training mode turns missing branches and degenerate fits into penalties
    // instead of errors.
    bool training = false;
};

struct ShapeLossGradient {
    Eigen::Matrix<double, 2, 3> linear = Eigen::Matrix<double, 2, 3>::Zero();
    Eigen::Vector2d offset = Eigen::Vector2d::Zero();
    Eigen::VectorXd nn;
    double mu0 = 0.0;
    double a2 = 0.0;
};

struct ShapeLossTerms {
    double total = 0.0;
    std::vector<double> per_orbit;
    int penalized = 0;  // orbits that fell back to the penalty
};

// Sum over targets of |Phi(R_i) - Phi(R_hat_i)|, optionally with the gradient
// w.r.t. the map and (mu0, a2). Terms are summed in target order.
ShapeLossTerms shape_loss_terms(const std::vector<ShapeTarget>& targets, const CoordinateMap& map,
                                const NormalFormParams& p, const ShapeLossOptions& options,
                                ShapeLossGradient* gradient = nullptr);

// Evaluation-mode loss (MissingBranch and RankDeficient propagate).
double shape_loss(const TrainingDataset& data, const CoordinateMap& map, const NormalFormParams& p,
                  int n_points = 100, int n_h = 10);

}  // namespace hopf
