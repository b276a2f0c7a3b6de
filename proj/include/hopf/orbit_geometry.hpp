#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hopf {

// Closed planar curve sampled over at least one revolution about `center`.
struct PlanarOrbit {
    std::vector<Eigen::Vector2d> points;
    Eigen::Vector2d center = Eigen::Vector2d::Zero();

    // Orbit centred on the arithmetic mean of its samples.
    static PlanarOrbit centered(std::vector<Eigen::Vector2d> points);
};

Eigen::Vector2d centroid(std::span<const Eigen::Vector2d> points);

struct PolarSample {
    double theta = 0.0;   // in [0, 2 pi)
    double radius = 0.0;
};

// Radius/angle about the orbit centre, sorted by angle. Points must be in
// traversal order. Throws NonStarShaped when the polar angle backs up by more
// than 2 pi / (8 n_h) against the net direction of travel.
std::vector<PolarSample> to_polar(const PlanarOrbit& orbit, int n_h = 10);

// Truncated Fourier series of R(theta):  a0 + sum a_k cos k theta + b_k sin k theta.
struct OrbitDescriptor {
    int n_h = 0;
    Eigen::VectorXd a;  // a0 .. a_nh
    Eigen::VectorXd b;  // b1 .. b_nh

    static OrbitDescriptor zero(int n_h);
    // [a0..a_nh, b1..b_nh]
    Eigen::VectorXd coefficients() const;
    static OrbitDescriptor from_coefficients(const Eigen::VectorXd& c);
};

// Basis row [1, cos theta .. cos n_h theta, sin theta .. sin n_h theta].
void fourier_basis(double theta, int n_h, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row);
// d/dtheta of the basis row.
void fourier_basis_derivative(double theta, int n_h, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row);

// Least-squares (pseudo-inverse) fit. Throws RankDeficient when the design matrix
// condition number exceeds 1e12.
OrbitDescriptor fourier_fit(std::span<const PolarSample> samples, int n_h);

double fourier_eval(const OrbitDescriptor& d, double theta);

// Euclidean norm of the coefficient difference. Throws HarmonicMismatch.
double descriptor_distance(const OrbitDescriptor& d1, const OrbitDescriptor& d2);

// fourier_fit(to_polar(orbit)).
OrbitDescriptor orbit_descriptor(const PlanarOrbit& orbit, int n_h = 10);

// Least-squares solve with the factorisation kept, for reverse-mode use.
struct FourierLeastSquares {
    Eigen::MatrixXd design;        // samples x (2 n_h + 1)
    Eigen::VectorXd coefficients;
    Eigen::VectorXd residual;      // R - design * coefficients
    Eigen::MatrixXd right_vectors; // V of the thin SVD
    Eigen::VectorXd singular_values;

    // (A^T A)^{-1} v
    Eigen::VectorXd normal_inverse(const Eigen::VectorXd& v) const;
};

FourierLeastSquares fourier_least_squares(std::span<const double> theta, std::span<const double> radius,
                                          int n_h);

}  // namespace hopf
