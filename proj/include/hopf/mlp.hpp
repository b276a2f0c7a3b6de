#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace hopf {

// Dense feed-forward network: tanh on hidden layers, identity on the output layer.
// Parameters live in one flat vector, layer by layer, each layer stored as a
// row-major (n_out x n_in) weight block followed by n_out biases.
class Mlp {
public:
    Mlp() = default;
    explicit Mlp(std::vector<int> layer_sizes);  // all parameters zero

    // Glorot-uniform weights, zero biases. Deterministic in the seed.
    static Mlp glorot(std::vector<int> layer_sizes, std::uint64_t seed);

    const std::vector<int>& layer_sizes() const { return sizes_; }
    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }
    int layer_count() const { return static_cast<int>(sizes_.size()) - 1; }
    Eigen::Index parameter_count() const { return params_.size(); }

    const Eigen::VectorXd& parameters() const { return params_; }
    Eigen::VectorXd& parameters() { return params_; }
    void set_parameters(const Eigen::VectorXd& p);

    using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMajorMatrix> weights(int layer) const;
    Eigen::Map<RowMajorMatrix> weights(int layer);
    Eigen::Map<const Eigen::VectorXd> biases(int layer) const;
    Eigen::Map<Eigen::VectorXd> biases(int layer);

    // Column-batched evaluation: x is (n_in x batch).
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;

    // Forward intermediates (post-activation of every layer, input first).
    struct Tape {
        std::vector<Eigen::MatrixXd> activations;
    };
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape& tape) const;

    // Reverse pass for sum over the batch of upstream^T f(x). Adds the parameter
    // gradient into param_grad (resized and zeroed when empty) and returns the
    // input cotangent (n_in x batch).
    Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& upstream,
                             Eigen::VectorXd& param_grad) const;

    // d f / d x at a single input, (n_out x n_in).
    Eigen::MatrixXd input_jacobian(const Eigen::VectorXd& x) const;

    bool all_finite() const { return params_.allFinite(); }

private:
    void build_offsets();
    void check_input(Eigen::Index rows) const;

    std::vector<int> sizes_;
    std::vector<Eigen::Index> offsets_;  // start of each layer's weight block
    Eigen::VectorXd params_;
};

Eigen::Index mlp_parameter_count(const std::vector<int>& layer_sizes);

}  // namespace hopf
