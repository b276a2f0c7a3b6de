#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <string>

#include "hopf/error.hpp"
#include "hopf/mlp.hpp"
#include "hopf/optim.hpp"
#include "test_util.hpp"

using namespace hopf;

TEST_CASE("parameter counts")
{
    CHECK(mlp_parameter_count({1, 1}) == 2);
    CHECK(mlp_parameter_count({3, 32, 32, 2}) == 3 * 32 + 32 + 32 * 32 + 32 + 32 * 2 + 2);
    CHECK(mlp_parameter_count({3, 32, 32, 2}) == 1250);
    CHECK(Mlp({3, 32, 32, 2}).parameter_count() == 1250);
    CHECK_THROWS_AS(Mlp(std::vector<int>{3}), Error);
    CHECK_THROWS_AS(Mlp(std::vector<int>{3, 0, 2}), Error);
}

TEST_CASE("glorot init is deterministic and bounded")
{
    const auto a = Mlp::glorot({3, 32, 32, 2}, 17);
    const auto b = Mlp::glorot({3, 32, 32, 2}, 17);
    const auto c = Mlp::glorot({3, 32, 32, 2}, 18);
    CHECK(a.parameters() == b.parameters());
    CHECK(a.parameters() != c.parameters());
    for (int l = 0; l < a.layer_count(); ++l) {
        const double lim = std::sqrt(6.0 / (a.layer_sizes()[l] + a.layer_sizes()[l + 1]));
        CHECK(a.weights(l).cwiseAbs().maxCoeff() <= lim);
        CHECK(a.weights(l).cwiseAbs().maxCoeff() > 0.5 * lim);
        CHECK(a.biases(l).isZero(0.0));
    }
}

TEST_CASE("forward examples")
{
    Mlp zero({3, 8, 2});
    CHECK(zero.forward(Eigen::VectorXd(Eigen::Vector3d(1, 2, 3))).isZero(0.0));

    Mlp lin({3, 2});
    lin.weights(0) << 1, 2, 3, 4, 5, 6;
    lin.biases(0) << 0.5, -0.5;
    const Eigen::VectorXd x = Eigen::Vector3d(1, -1, 2);
    const Eigen::VectorXd y = lin.forward(x);
    CHECK(y[0] == doctest::Approx(1 - 2 + 6 + 0.5));
    CHECK(y[1] == doctest::Approx(4 - 5 + 12 - 0.5));

    const auto net = Mlp::glorot({3, 16, 16, 2}, 3);
    Mlp shifted = net;
    shifted.biases(2) << 0.3, -0.7;
    const Eigen::VectorXd out = shifted.forward(Eigen::VectorXd(Eigen::Vector3d(10, -20, 5)));
    for (int i = 0; i < 2; ++i) {
        // tanh in (-1, 1): |y_i| <= ||row_i of W_out||_1 + |b_i|
        CHECK(std::abs(out[i]) <= shifted.weights(2).row(i).cwiseAbs().sum() + std::abs(shifted.biases(2)[i]));
    }
    CHECK_THROWS_AS(net.forward(Eigen::VectorXd(Eigen::Vector2d(1, 2))), Error);

    // batch evaluation equals column-wise evaluation
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(3, 5);
    const Eigen::MatrixXd Y = net.forward(X);
    for (int j = 0; j < 5; ++j) CHECK((Y.col(j) - net.forward(Eigen::VectorXd(X.col(j)))).norm() < 1e-15);
}

TEST_CASE("backward on a linear layer is the outer product")
{
    Mlp lin = Mlp::glorot({3, 2}, 1);
    Eigen::MatrixXd x(3, 1);
    x << 0.5, -1.0, 2.0;
    Eigen::MatrixXd up(2, 1);
    up << 3.0, -4.0;
    Mlp::Tape tape;
    lin.forward(x, tape);
    Eigen::VectorXd g;
    const Eigen::MatrixXd dx = lin.backward(tape, up, g);
    // row-major weights then biases
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 3; ++j) CHECK(g[3 * i + j] == doctest::Approx(up(i, 0) * x(j, 0)));
        CHECK(g[6 + i] == doctest::Approx(up(i, 0)));
    }
    CHECK((dx - lin.weights(0).transpose() * up).norm() < 1e-15);

    Eigen::VectorXd g0;
    const Eigen::MatrixXd dx0 = lin.backward(tape, Eigen::MatrixXd::Zero(2, 1), g0);
    CHECK(g0.isZero(0.0));
    CHECK(dx0.isZero(0.0));
}

TEST_CASE("backward matches central differences on the architectures in use")
{
    const std::vector<std::vector<int>> archs = {{3, 32, 32, 2}, {2, 21, 21, 3},  {3, 21, 21, 1},
                                                 {3, 31, 31, 1}, {3, 11, 11, 2}, {3, 32, 32, 13}};
    std::mt19937_64 rng(99);
    std::normal_distribution<double> g(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto& sizes = archs[trial % archs.size()];
        const auto net = Mlp::glorot(sizes, 1000 + trial);
        Eigen::MatrixXd x(sizes.front(), 1);
        for (auto& v : x.reshaped()) v = g(rng);
        Eigen::MatrixXd up(sizes.back(), 1);
        for (auto& v : up.reshaped()) v = g(rng);

        Mlp::Tape tape;
        net.forward(x, tape);
        Eigen::VectorXd pg;
        const Eigen::MatrixXd xg = net.backward(tape, up, pg);

        auto f_params = [&](const Eigen::VectorXd& p) {
            Mlp n = net;
            n.set_parameters(p);
            return up.col(0).dot(n.forward(Eigen::VectorXd(x.col(0))));
        };
        auto f_input = [&](const Eigen::VectorXd& xi) { return up.col(0).dot(net.forward(xi)); };
        const double ep = testutil::rel_error(pg, testutil::fd_gradient(f_params, net.parameters()));
        const double ex = testutil::rel_error(xg.col(0), testutil::fd_gradient(f_input, x.col(0)));
        worst = std::max({worst, ep, ex});

        // forward-mode input Jacobian agrees with the reverse pass
        CHECK((net.input_jacobian(x.col(0)).transpose() * up.col(0) - xg.col(0)).norm() < 1e-12 * (1 + xg.norm()));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("adam on x^2")
{
    const Objective f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = 2.0 * x;
        return x.squaredNorm();
    };
    const auto res = adam_minimize(f, Eigen::VectorXd::Constant(1, 1.0), 20, 0.1);
    REQUIRE(res.trace.size() == 20);

    // independent scalar ADAM
    double x = 1.0, m = 0.0, v = 0.0;
    std::vector<double> xs;
    for (int k = 1; k <= 20; ++k) {
        const double g = 2.0 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.1 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
        xs.push_back(x);
        CHECK(res.trace[k - 1] == doctest::Approx(x * x).epsilon(1e-12));
    }
    CHECK(res.x[0] == doctest::Approx(xs.back()).epsilon(1e-12));
    // momentum carries x through zero at step 12; |x| decreases strictly before that
    for (int k = 1; k < 11; ++k) CHECK(std::abs(xs[k]) < std::abs(xs[k - 1]));
    CHECK(xs[10] > 0.0);
    CHECK(xs[11] < 0.0);

    AdamState st;
    Eigen::VectorXd p = Eigen::Vector3d(1, 2, 3);
    adam_step(st, p, Eigen::VectorXd::Zero(3), 0.1);
    CHECK(p == Eigen::VectorXd(Eigen::Vector3d(1, 2, 3)));
}

TEST_CASE("lbfgs on a quadratic bowl")
{
    Eigen::MatrixXd A(4, 4);
    A << 4, 1, 0, 0, 1, 3, 0.5, 0, 0, 0.5, 2, 0.2, 0, 0, 0.2, 1;
    const Eigen::VectorXd b = Eigen::Vector4d(1, -2, 0.5, 3);
    const Eigen::VectorXd xstar = A.ldlt().solve(b);
    const Objective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = A * x - b;
        return 0.5 * x.dot(A * x) - b.dot(x);
    };
    LbfgsOptions opt;
    opt.max_iterations = 50;
    opt.step_scale = 0.1;
    const auto res = lbfgs_minimize(f, Eigen::VectorXd::Zero(4), opt);
    CHECK((res.x - xstar).norm() < 1e-8);
    CHECK(res.iterations <= 50);
    for (std::size_t k = 1; k < res.trace.size(); ++k) CHECK(res.trace[k] <= res.trace[k - 1]);
}

TEST_CASE("non-finite gradient aborts with the iteration index")
{
    int calls = 0;
    const Objective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = 2.0 * x;
        if (++calls == 4) g[0] = std::nan("");
        return x.squaredNorm();
    };
    try {
        adam_minimize(f, Eigen::VectorXd::Constant(1, 1.0), 10, 0.1);
        FAIL("expected failure");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NumericalFailure);
        CHECK(std::string(e.what()).find("iteration 3") != std::string::npos);
    }
}

TEST_CASE("training is deterministic")
{
    const auto net = Mlp::glorot({3, 11, 11, 2}, 5);
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(3, 20);
    const Eigen::MatrixXd T = Eigen::MatrixXd::Random(2, 20);
    const Objective f = [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
        Mlp n = net;
        n.set_parameters(p);
        Mlp::Tape tape;
        const Eigen::MatrixXd r = n.forward(X, tape) - T;
        g.resize(0);
        n.backward(tape, r, g);
        return 0.5 * r.squaredNorm();
    };
    const auto a = adam_minimize(f, net.parameters(), 30, 0.01);
    const auto b = adam_minimize(f, net.parameters(), 30, 0.01);
    CHECK(a.x == b.x);
    LbfgsOptions opt;
    opt.max_iterations = 30;
    opt.step_scale = 1e-3;
    CHECK(lbfgs_minimize(f, a.x, opt).x == lbfgs_minimize(f, a.x, opt).x);
}
