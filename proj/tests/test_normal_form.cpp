#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hopf/error.hpp"
#include "hopf/normal_form.hpp"

using namespace hopf;

namespace {

// independent oracle: roots of (mu - mu0) + a2 s - q s^2 = 0 in s = r^2, then r = sqrt(s)
std::vector<double> oracle_radii(double mu0, double a2, bool quintic, double mu)
{
    const double c = mu - mu0;
    std::vector<double> out;
    if (!quintic) {
        const double s = -c / a2;
        if (s > 0) out.push_back(std::sqrt(s));
        return out;
    }
    const double disc = a2 * a2 + 4.0 * c;
    if (disc < 0) return out;
    for (double s : {(a2 + std::sqrt(disc)) / 2.0, (a2 - std::sqrt(disc)) / 2.0})
        if (s > 0) out.push_back(std::sqrt(s));
    return out;
}

// long-time integration of r' from r_start, explicit Euler with a small step
double settle_radius(const NormalFormParams& p, double mu, double r_start)
{
    double r = r_start;
    for (int i = 0; i < 400000; ++i) r += 1e-4 * radial_flow(p, r, mu);
    return r;
}

}  // namespace

TEST_CASE("radial flow examples")
{
    const auto sup = NormalFormParams::supercritical(0.0, -1.0);
    CHECK(radial_flow(sup, 0.0, 3.7) == 0.0);
    CHECK(radial_flow(sup, 0.5, 0.25) == doctest::Approx(0.0).epsilon(1e-15));
    const auto sub = NormalFormParams::subcritical(18.28, 3.65);
    CHECK(std::abs(radial_flow(sub, std::sqrt(3.65), 18.28)) < 1e-12);
    // direct polynomial
    CHECK(radial_flow(sub, 1.3, 16.0) == doctest::Approx((16.0 - 18.28) * 1.3 + 3.65 * std::pow(1.3, 3) - std::pow(1.3, 5)));
}

TEST_CASE("lco radii examples")
{
    const auto sup = NormalFormParams::supercritical(0.0, -1.0);
    auto r = lco_radii(sup, 0.25);
    REQUIRE(r.size() == 1);
    CHECK(r[0].radius == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(r[0].stable);

    const auto sub = NormalFormParams::subcritical(18.28, 3.65);
    r = lco_radii(sub, 18.28);
    REQUIRE(r.size() == 1);
    CHECK(r[0].radius == doctest::Approx(std::sqrt(3.65)).epsilon(1e-12));
    CHECK(r[0].stable);
    // independent check: integrating r' from nearby settles on the same radius
    CHECK(settle_radius(sub, 18.28, 1.5) == doctest::Approx(r[0].radius).epsilon(1e-6));

    CHECK(lco_radii(sub, 14.0).empty());
    CHECK(lco_radii(sup, -0.1).empty());
}

TEST_CASE("saddle node")
{
    CHECK(saddle_node_mu(NormalFormParams::subcritical(0.0, 2.0)) == doctest::Approx(-1.0));
    const auto p = NormalFormParams::subcritical(18.28, 3.65);
    const double sn = saddle_node_mu(p);
    CHECK(sn == doctest::Approx(18.28 - 3.65 * 3.65 / 4.0).epsilon(1e-14));
    CHECK(sn == doctest::Approx(14.949).epsilon(1e-4));
    auto r = lco_radii(p, sn);
    REQUIRE(r.size() == 1);
    CHECK_FALSE(r[0].stable);
    CHECK(r[0].radius * r[0].radius == doctest::Approx(3.65 / 2.0).epsilon(1e-9));

    CHECK_THROWS_AS(saddle_node_mu(NormalFormParams::supercritical(0.0)), Error);

    // a2 implied by a Hopf point 17.67 and fold 14.66
    const double a2 = 2.0 * std::sqrt(17.67 - 14.66);
    CHECK(a2 == doctest::Approx(3.47).epsilon(1e-3));
    CHECK(saddle_node_mu(NormalFormParams::subcritical(17.67, a2)) == doctest::Approx(14.66).epsilon(1e-12));
}

TEST_CASE("radius branch")
{
    const auto sup = NormalFormParams::supercritical(0.0, -1.0);
    auto b = radius_branch(sup, {0.1, 0.4});
    REQUIRE(b.size() == 2);
    CHECK(b[0].solutions.at(0).radius == doctest::Approx(std::sqrt(0.1)));
    CHECK(b[1].solutions.at(0).radius == doctest::Approx(std::sqrt(0.4)));
    CHECK(radius_branch(sup, {}).empty());

    const auto sub = NormalFormParams::subcritical(18.28, 3.65);
    std::vector<double> grid;
    for (int i = 0; i <= 34; ++i) grid.push_back(14.9 + 0.1 * i);
    b = radius_branch(sub, grid);
    REQUIRE(b.size() == grid.size());
    double gap_prev = 1e9;
    for (const auto& s : b) {
        if (s.mu < saddle_node_mu(sub)) {
            CHECK(s.solutions.empty());
        } else if (s.mu < sub.mu0) {
            REQUIRE(s.solutions.size() == 2);
            CHECK(s.solutions[0].stable);
            CHECK_FALSE(s.solutions[1].stable);
            CHECK(s.solutions[0].radius > s.solutions[1].radius);
            const double gap = s.solutions[0].radius - s.solutions[1].radius;
            // branches separate as mu moves away from the fold
            if (gap_prev < 1e9) CHECK(gap > gap_prev);
            gap_prev = gap;
        } else {
            CHECK(s.solutions.size() == 1);
        }
    }
}

TEST_CASE("validate invariants")
{
    CHECK_THROWS_AS(NormalFormParams::subcritical(0.0, -1.0).validate(), Error);
    CHECK_THROWS_AS(NormalFormParams::supercritical(0.0, 1.0).validate(), Error);
    NormalFormParams bad = NormalFormParams::subcritical(0.0, 1.0);
    bad.quintic_enabled = false;
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK_NOTHROW(NormalFormParams::subcritical(18.0, 3.5).validate());
}

TEST_CASE("random draws against the closed form")
{
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int checked = 0;
    for (int k = 0; k < 1000; ++k) {
        const bool sub = k % 2 == 0;
        const double mu0 = -5.0 + 10.0 * u(rng);
        const double a2 = sub ? 0.1 + 5.0 * u(rng) : -(0.1 + 5.0 * u(rng));
        const auto p = sub ? NormalFormParams::subcritical(mu0, a2) : NormalFormParams::supercritical(mu0, a2);
        const double lo = sub ? mu0 - a2 * a2 / 4.0 - 1.0 : mu0 - 1.0;
        const double mu = lo + (mu0 + 2.0 - lo) * u(rng);

        const auto got = lco_radii(p, mu);
        const auto want = oracle_radii(mu0, a2, sub, mu);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].radius == doctest::Approx(want[i]).epsilon(1e-10));
            CHECK(std::abs(radial_flow(p, got[i].radius, mu)) < 1e-10 * std::max(1.0, got[i].radius));
            const double h = 1e-6;
            const double fd = (radial_flow(p, got[i].radius + h, mu) - radial_flow(p, got[i].radius - h, mu)) / (2 * h);
            CHECK(got[i].stable == (fd < 0.0));
            ++checked;
        }
        if (!sub && mu > mu0 && a2 == -1.0) CHECK(got[0].radius == doctest::Approx(std::sqrt(mu - mu0)).epsilon(1e-12));

        // coexistence counts
        if (sub) {
            const double sn = mu0 - a2 * a2 / 4.0;
            const std::size_t expect = mu < sn ? 0 : (mu < mu0 ? 2 : 1);
            if (std::abs(mu - sn) > 1e-6 && std::abs(mu - mu0) > 1e-6) CHECK(got.size() == expect);
        }
    }
    CHECK(checked > 700);
}

TEST_CASE("supercritical cubic radius is sqrt(mu - mu0)")
{
    const auto p = NormalFormParams::supercritical(0.3, -1.0);
    for (double mu : {0.31, 0.5, 1.0, 7.5}) {
        auto r = lco_radii(p, mu);
        REQUIRE(r.size() == 1);
        CHECK(std::abs(r[0].radius - std::sqrt(mu - 0.3)) < 1e-12);
    }
}

TEST_CASE("find branch and sensitivities")
{
    const auto p = NormalFormParams::subcritical(18.0, 3.6);
    CHECK(find_branch(p, 17.0, Stability::Stable).has_value());
    CHECK(find_branch(p, 17.0, Stability::Unstable).has_value());
    CHECK_FALSE(find_branch(p, 18.5, Stability::Unstable).has_value());
    CHECK_FALSE(find_branch(p, 10.0, Stability::Stable).has_value());

    for (auto st : {Stability::Stable, Stability::Unstable}) {
        const auto s = branch_radius_sensitivity(p, 16.5, st);
        REQUIRE(s.has_value());
        const double h = 1e-6;
        auto rad = [&](double mu0, double a2) {
            return find_branch(NormalFormParams::subcritical(mu0, a2), 16.5, st)->radius;
        };
        CHECK(s->d_mu0 == doctest::Approx((rad(18.0 + h, 3.6) - rad(18.0 - h, 3.6)) / (2 * h)).epsilon(1e-6));
        CHECK(s->d_a2 == doctest::Approx((rad(18.0, 3.6 + h) - rad(18.0, 3.6 - h)) / (2 * h)).epsilon(1e-6));
    }
}
