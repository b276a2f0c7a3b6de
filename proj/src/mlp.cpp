#include "hopf/mlp.hpp"

#include <cmath>
#include <random>
#include <string>

#include "hopf/error.hpp"

namespace hopf {

Eigen::Index mlp_parameter_count(const std::vector<int>& layer_sizes)
{
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
        n += static_cast<Eigen::Index>(layer_sizes[l] + 1) * layer_sizes[l + 1];
    return n;
}

Mlp::Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes))
{
    require(sizes_.size() >= 2, ErrorKind::InvalidArgument, "network needs at least two layers");
    for (int s : sizes_)
        require(s >= 1, ErrorKind::InvalidArgument, "layer sizes must be >= 1");
    build_offsets();
    params_ = Eigen::VectorXd::Zero(mlp_parameter_count(sizes_));
}

Mlp Mlp::glorot(std::vector<int> layer_sizes, std::uint64_t seed)
{
    Mlp net(std::move(layer_sizes));
    std::mt19937_64 rng(seed);
    // 53-bit uniform in [0,1); independent of the standard library's distributions
    auto uniform01 = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    for (int l = 0; l < net.layer_count(); ++l) {
        const int n_in = net.sizes_[static_cast<std::size_t>(l)];
        const int n_out = net.sizes_[static_cast<std::size_t>(l) + 1];
        const double limit = std::sqrt(6.0 / (n_in + n_out));
        auto w = net.weights(l);
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                w(i, j) = limit * (2.0 * uniform01() - 1.0);
    }
    return net;
}

void Mlp::build_offsets()
{
    offsets_.clear();
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        offsets_.push_back(offset);
        offset += static_cast<Eigen::Index>(sizes_[l] + 1) * sizes_[l + 1];
    }
}

void Mlp::set_parameters(const Eigen::VectorXd& p)
{
    require(p.size() == params_.size(), ErrorKind::InvalidArgument,
            "parameter vector has length " + std::to_string(p.size()) + ", expected " +
                std::to_string(params_.size()));
    params_ = p;
}

Eigen::Map<const Mlp::RowMajorMatrix> Mlp::weights(int layer) const
{
    const auto l = static_cast<std::size_t>(layer);
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}

Eigen::Map<Mlp::RowMajorMatrix> Mlp::weights(int layer)
{
    const auto l = static_cast<std::size_t>(layer);
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::biases(int layer) const
{
    const auto l = static_cast<std::size_t>(layer);
    return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1],
            sizes_[l + 1]};
}

Eigen::Map<Eigen::VectorXd> Mlp::biases(int layer)
{
    const auto l = static_cast<std::size_t>(layer);
    return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1],
            sizes_[l + 1]};
}

void Mlp::check_input(Eigen::Index rows) const
{
    require(!sizes_.empty() && rows == sizes_.front(), ErrorKind::InvalidArgument,
            "network input has " + std::to_string(rows) + " rows, expected " +
                std::to_string(sizes_.empty() ? 0 : sizes_.front()));
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const
{
    check_input(x.rows());
    Eigen::MatrixXd a = x;
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::MatrixXd z = weights(l) * a;
        z.colwise() += biases(l);
        if (l + 1 < layer_count()) z = z.array().tanh().matrix();
        a = std::move(z);
    }
    return a;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const
{
    return forward(Eigen::MatrixXd(x));
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Tape& tape) const
{
    check_input(x.rows());
    tape.activations.clear();
    tape.activations.reserve(static_cast<std::size_t>(layer_count()) + 1);
    tape.activations.push_back(x);
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::MatrixXd z = weights(l) * tape.activations.back();
        z.colwise() += biases(l);
        if (l + 1 < layer_count()) z = z.array().tanh().matrix();
        tape.activations.push_back(std::move(z));
    }
    return tape.activations.back();
}

Eigen::MatrixXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& upstream,
                              Eigen::VectorXd& param_grad) const
{
    require(tape.activations.size() == static_cast<std::size_t>(layer_count()) + 1,
            ErrorKind::InvalidArgument, "tape does not match network depth");
    require(upstream.rows() == output_size() && upstream.cols() == tape.activations.back().cols(),
            ErrorKind::InvalidArgument, "upstream cotangent has wrong shape");
    if (param_grad.size() == 0) param_grad = Eigen::VectorXd::Zero(params_.size());
    require(param_grad.size() == params_.size(), ErrorKind::InvalidArgument,
            "gradient buffer has wrong length");

    Eigen::MatrixXd delta = upstream;  // cotangent of the pre-activation of layer l
    for (int l = layer_count() - 1; l >= 0; --l) {
        const auto ll = static_cast<std::size_t>(l);
        const Eigen::MatrixXd& input = tape.activations[ll];
        const Eigen::Index w_off = offsets_[ll];
        const Eigen::Index n_in = sizes_[ll];
        const Eigen::Index n_out = sizes_[ll + 1];
        Eigen::Map<RowMajorMatrix> gw(param_grad.data() + w_off, n_out, n_in);
        Eigen::Map<Eigen::VectorXd> gb(param_grad.data() + w_off + n_in * n_out, n_out);
        gw.noalias() += delta * input.transpose();
        gb += delta.rowwise().sum();
        Eigen::MatrixXd back = weights(l).transpose() * delta;
        if (l > 0) back.array() *= 1.0 - input.array().square();  // tanh' from the stored activation
        delta = std::move(back);
    }
    return delta;
}

Eigen::MatrixXd Mlp::input_jacobian(const Eigen::VectorXd& x) const
{
    check_input(x.size());
    // forward-mode: propagate d a / d x alongside a
    Eigen::VectorXd a = x;
    Eigen::MatrixXd da = Eigen::MatrixXd::Identity(x.size(), x.size());
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::VectorXd z = weights(l) * a + biases(l);
        Eigen::MatrixXd dz = weights(l) * da;
        if (l + 1 < layer_count()) {
            a = z.array().tanh().matrix();
            dz = (1.0 - a.array().square()).matrix().asDiagonal() * dz;
        } else {
            a = z;
        }
        da = std::move(dz);
    }
    return da;
}

}  // namespace hopf
