#include "optomech2d/dynamics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace optomech2d;

namespace {

Environment cold() {
    Environment e;
    e.temperature = 0.0;
    return e;
}

double sample_variance(const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

// Free decay from rest at q0: q0 exp(-G t / 2) (cos wd t + G / (2 wd) sin wd t).
double free_decay(double q0, double omega, double gamma, double t) {
    const double wd = std::sqrt(omega * omega - 0.25 * gamma * gamma);
    return q0 * std::exp(-0.5 * gamma * t) *
           (std::cos(wd * t) + 0.5 * gamma / wd * std::sin(wd * t));
}

} // namespace

TEST(Langevin, ExactPropagatorReproducesFreeDecay) {
    auto p = ModalParams::from_quality_factor(1e-15, 1e3, 1.3e3, 20.0, 0.4);
    const double dt = max_time_step(p);
    LangevinOptions o{.dt = dt, .duration = 0.05, .seed = 1, .decimation = 7,
                      .initial_displacement = 1e-9 * p.e1(), .initial_velocity = {}};
    const auto tr = simulate_langevin(p, nullptr, {}, 0.0, cold(), o);
    ASSERT_FALSE(tr.diverged);
    const auto q1 = tr.modal(p, 0);
    const auto q2 = tr.modal(p, 1);
    for (std::size_t k = 0; k < tr.size(); k += 13) {
        const double t = static_cast<double>(k) * tr.sample_interval();
        EXPECT_NEAR(q1[k], free_decay(1e-9, p.omega1, p.gamma, t), 1e-9 * 1e-9);
        EXPECT_NEAR(q2[k], 0.0, 1e-24);
    }
}

TEST(Langevin, EulerIsCloseButNotExact) {
    auto p = ModalParams::from_quality_factor(1e-15, 1e3, 1.3e3, 20.0, 0.0);
    LangevinOptions o{.dt = max_time_step(p), .duration = 0.01, .seed = 1, .decimation = 1,
                      .initial_displacement = {1e-9, 0.0}, .initial_velocity = {},
                      .integrator = Integrator::semi_implicit_euler};
    const auto tr = simulate_langevin(p, nullptr, {}, 0.0, cold(), o);
    double worst = 0.0;
    for (std::size_t k = 0; k < tr.size(); ++k) {
        const double t = static_cast<double>(k) * tr.dt;
        worst = std::max(worst, std::abs(tr.position[k].x - free_decay(1e-9, p.omega1, p.gamma, t)));
    }
    EXPECT_LT(worst, 0.1e-9);
    EXPECT_GT(worst, 1e-15);
}

TEST(Langevin, RejectsBadOptions) {
    const auto p = desk_device();
    LangevinOptions o{.dt = 2.0 * max_time_step(p), .duration = 1.0, .seed = 1};
    EXPECT_THROW(simulate_langevin(p, nullptr, {}, 0.0, Environment{}, o), InvalidArgument);
    o.dt = max_time_step(p);
    o.duration = 0.0;
    EXPECT_THROW(simulate_langevin(p, nullptr, {}, 0.0, Environment{}, o), InvalidArgument);
    o.duration = 1.0;
    o.decimation = 0;
    EXPECT_THROW(simulate_langevin(p, nullptr, {}, 0.0, Environment{}, o), InvalidArgument);
    o.decimation = 1;
    EXPECT_THROW(simulate_langevin(p, nullptr, {}, -1.0, Environment{}, o), InvalidArgument);
}

TEST(Langevin, ShortRunWarns) {
    const auto p = desk_device();
    LangevinOptions o{.dt = max_time_step(p), .duration = 0.1, .seed = 3};
    const auto tr = simulate_langevin(p, nullptr, {}, 0.0, Environment{}, o);
    EXPECT_FALSE(tr.warnings.empty());
}

TEST(Langevin, SeedDeterminism) {
    const auto p = desk_device();
    LangevinOptions o{.dt = max_time_step(p), .duration = 0.5, .seed = 42, .decimation = 3};
    const auto a = simulate_langevin(p, nullptr, {}, 0.0, Environment{}, o);
    const auto b = simulate_langevin(p, nullptr, {}, 0.0, Environment{}, o);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) ASSERT_EQ(a.position[k], b.position[k]);
    o.seed = 43;
    const auto c = simulate_langevin(p, nullptr, {}, 0.0, Environment{}, o);
    EXPECT_NE(a.position.back(), c.position.back());
}

TEST(Langevin, ThermalVarianceNearEquipartition) {
    // 400 damping times per run, 4 seeds: relative std of the pooled estimate ~ 3.5%
    auto p = ModalParams::from_quality_factor(1e-15, 1e3, 1.2e3, 200.0, 0.7);
    const Environment env;
    double r1 = 0.0, r2 = 0.0;
    for (std::uint64_t s = 1; s <= 4; ++s) {
        LangevinOptions o{.dt = max_time_step(p), .duration = 400.0 / p.gamma, .seed = s,
                          .decimation = 5};
        const auto tr = simulate_langevin(p, nullptr, {}, 0.0, env, o);
        r1 += sample_variance(tr.modal(p, 0)) / equipartition_variance(p, 0, env) / 4.0;
        r2 += sample_variance(tr.modal(p, 1)) / equipartition_variance(p, 1, env) / 4.0;
    }
    EXPECT_NEAR(r1, 1.0, 0.12);
    EXPECT_NEAR(r2, 1.0, 0.12);
}

TEST(Langevin, FieldLeavingDomainFlagsDivergence) {
    const auto p = desk_device();
    TabulatedField t;
    t.grid = RectGrid::uniform(-1e-9, 1e-9, 3, -1e-9, 1e-9, 3);
    t.values.assign(9, Vec2{});
    t.ref_power = 1.0;
    const ForceField f(t);
    LangevinOptions o{.dt = max_time_step(p), .duration = 1.0, .seed = 1,
                      .initial_displacement = {0.0, 0.0}, .initial_velocity = {1e-3, 0.0}};
    const auto tr = simulate_langevin(p, &f, {}, 1.0, cold(), o);
    EXPECT_TRUE(tr.diverged);
    EXPECT_LT(tr.halt_time, 1.0);
}

TEST(Langevin, StaticDeflectionIsFixedPoint) {
    // Uniform plus linear field: the deflection solves (K - G^T) d = F0 exactly.
    const auto p = desk_device();
    const double k = p.stiffness(0);
    LinearField lf{{}, {1e-12, -2e-12}, {0.01 * k, 0.003 * k, -0.002 * k, 0.02 * k}, 1.0};
    const ForceField f(lf);
    const auto d = static_deflection(p, f, {}, 1.0);
    const Vec2 F = f.force(d.deflection, 1.0);
    const Vec2 restoring = p.to_lab({p.stiffness(0) * dot(d.deflection, p.e1()),
                                     p.stiffness(1) * dot(d.deflection, p.e2())});
    EXPECT_NEAR(F.x, restoring.x, 1e-3 * F.norm());
    EXPECT_NEAR(F.z, restoring.z, 1e-3 * F.norm());

    // T = 0 run started there stays put
    LangevinOptions o{.dt = max_time_step(p), .duration = 0.05, .seed = 1,
                      .initial_displacement = d.deflection};
    const auto tr = simulate_langevin(p, &f, {}, 1.0, cold(), o);
    EXPECT_NEAR((tr.position.back() - d.deflection).norm(), 0.0, 1e-3 * d.deflection.norm());
}

TEST(Langevin, StaticDeflectionOutsideDomain) {
    const auto p = desk_device();
    TabulatedField t;
    t.grid = RectGrid::uniform(-1e-9, 1e-9, 2, -1e-9, 1e-9, 2);
    t.values.assign(4, Vec2{1e-6, 0.0});
    t.ref_power = 1.0;
    EXPECT_THROW(static_deflection(p, ForceField(t), {}, 1.0), StaticDeflectionError);
}

TEST(Linearize, ExactForLinearFieldAndDomainChecked) {
    LinearField lf{{}, {}, {1.0, 2.0, 3.0, 4.0}, 2.0};
    const auto G = linearize_field(ForceField(lf), {1e-6, 2e-6}, 4.0);
    EXPECT_NEAR(G.d_xFx, 2.0, 1e-6);
    EXPECT_NEAR(G.d_xFz, 4.0, 1e-6);
    EXPECT_NEAR(G.d_zFx, 6.0, 1e-6);
    EXPECT_NEAR(G.d_zFz, 8.0, 1e-6);
    TabulatedField t;
    t.grid = RectGrid::uniform(0, 1e-6, 3, 0, 1e-6, 3);
    t.values.assign(9, Vec2{});
    t.ref_power = 1.0;
    EXPECT_THROW(linearize_field(ForceField(t), {0.0, 0.5e-6}, 1.0), OutOfRangeError);
}

TEST(Susceptibility, ResonanceValues) {
    const auto p = reference_device();
    const auto chi = susceptibility(p, 0, p.omega1);
    EXPECT_NEAR(std::abs(chi), 1.0 / (p.mass * p.omega1 * p.gamma), 1e-9 / (p.mass * p.omega1 * p.gamma));
    EXPECT_NEAR(std::arg(chi), kPi / 2.0, 1e-12);
    EXPECT_NEAR(susceptibility(p, 1, 0.0).real(), 1.0 / p.stiffness(1), 1e-12 / p.stiffness(1));
}

TEST(DrivenResponse, SumsModalContributions) {
    const auto p = reference_device();
    const Vec2 eb = unit_vector(0.3);
    const Vec2 dF{1e-15, -2e-15};
    const auto w = response_frequency_grid(p, 5.0, 3.0);
    const auto s = driven_response_analytic(p, eb, dF, 0.4, w);
    ASSERT_EQ(s.response.size(), w.size());
    for (std::size_t k = 0; k < w.size(); k += 7) {
        std::complex<double> ref = 0.0;
        for (int i = 0; i < 2; ++i)
            ref += susceptibility(p, i, w[k]) * dot(dF, p.mode_direction(i)) *
                   dot(p.mode_direction(i), eb);
        ref *= std::polar(1.0, 0.4);
        EXPECT_NEAR(std::abs(s.response[k] - ref), 0.0, 1e-12 * std::abs(ref));
    }
    EXPECT_THROW(driven_response_analytic(p, {1.0, 1.0}, dF, 0.0, w), InvalidArgument);
}

TEST(DrivenResponse, FrequencyGrid) {
    const auto p = reference_device();
    const auto w = response_frequency_grid(p, 10.0, 10.0);
    EXPECT_NEAR(w.front(), p.omega1 - 10.0 * p.gamma, 1e-6);
    EXPECT_GE(w.back(), p.omega2 + 10.0 * p.gamma - 1e-6);
    EXPECT_NEAR(w[1] - w[0], p.gamma / 10.0, 1e-9);
    EXPECT_THROW(response_frequency_grid(p, 0.0, 1.0), InvalidArgument);
}
