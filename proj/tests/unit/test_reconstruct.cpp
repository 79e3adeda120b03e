#include "optomech2d/reconstruct.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace optomech2d;

namespace {

TransmissionMap linear_map(double a, double b) {
    TransmissionMap m;
    m.grid = RectGrid::uniform(-1e-6, 1e-6, 21, -1e-6, 1e-6, 21);
    for (std::size_t k = 0; k < m.grid.size(); ++k) {
        const Vec2 r = m.grid.node(k);
        m.values.push_back(a * r.x + b * r.z);
    }
    return m;
}

MeasurementVector along(double angle) { return {1e6 * unit_vector(angle), {}}; }

} // namespace

TEST(Transmission, GradientMatchesFiniteDifference) {
    const auto t = SyntheticTransmission::from_beam(GaussianBeamField::preset_532nm(), 2.0);
    for (Vec2 r : {Vec2{0.1e-6, 0.3e-6}, Vec2{-0.4e-6, -1.0e-6}, Vec2{0.0, 0.0}}) {
        const double h = 1e-12;
        const Vec2 g = t.gradient(r);
        EXPECT_NEAR(g.x, (t.value(r + Vec2{h, 0}) - t.value(r - Vec2{h, 0})) / (2 * h), 1e-6 * std::abs(t.v0 / t.waist));
        EXPECT_NEAR(g.z, (t.value(r + Vec2{0, h}) - t.value(r - Vec2{0, h})) / (2 * h), 1e-6 * std::abs(t.v0 / t.waist));
    }
    EXPECT_DOUBLE_EQ(t.value({-0.2e-6, 0.1e-6}), -t.value({0.2e-6, 0.1e-6}));
}

TEST(Readout, LinearMapIsExact) {
    const auto m = linear_map(3e5, -1e5);
    const auto b = measurement_vector(m, {0.2e-6, -0.3e-6});
    EXPECT_NEAR(b.beta.x, 3e5, 1e-6);
    EXPECT_NEAR(b.beta.z, -1e5, 1e-6);
    EXPECT_NEAR(b.direction().norm(), 1.0, 1e-15);
}

TEST(Readout, DegenerateAndEdgeCases) {
    TransmissionMap flat = linear_map(0.0, 0.0);
    for (auto& v : flat.values) v = 0.5;
    EXPECT_THROW(measurement_vector(flat, {}), DegenerateReadoutError);
    EXPECT_THROW(measurement_vector(linear_map(1e5, 0), {1e-6, 0.0}), OutOfRangeError);
    EXPECT_THROW(measurement_vector(linear_map(1.0, 0), {}, 10.0), DegenerateReadoutError);
}

TEST(FitForce, NoiselessRecoveryIsExact) {
    const auto p = reference_device();
    const LinearField lf{{}, {3e-15, -7e-15}, {}, 100e-6};
    const ForceField f(lf);
    MeasurementProtocol pr;
    pr.noise_scale = 0.0;
    const auto w = response_frequency_grid(p);
    for (double angle : {0.1, 0.9, 2.0}) {
        const auto m = synthesize_measurement(p, f, {}, along(angle), pr, w, Environment{}, 1);
        const auto fit = fit_force(m.sweep, p, along(angle));
        EXPECT_NEAR((fit.force() - m.delta_force).norm() / m.delta_force.norm(), 0.0, 1e-9);
        EXPECT_NEAR(fit.phase, 0.0, 1e-9);
        EXPECT_NEAR(fit.phase_spread, 0.0, 1e-9);
    }
}

TEST(FitForce, RecoversCommonPhase) {
    const auto p = reference_device();
    const Vec2 dF{2e-15, 1e-15};
    const auto w = response_frequency_grid(p);
    const auto s = driven_response_analytic(p, unit_vector(0.7), dF, 0.4, w);
    const auto fit = fit_force(s, p, along(0.7));
    EXPECT_NEAR(fit.phase, 0.4, 1e-9);
    EXPECT_NEAR(fit.magnitude, dF.norm(), 1e-9 * dF.norm());
    // a half-turn phase is indistinguishable from a reversed force
    const auto flipped = driven_response_analytic(p, unit_vector(0.7), dF, kPi, w);
    const auto ff = fit_force(flipped, p, along(0.7));
    EXPECT_NEAR(ff.phase, 0.0, 1e-9);
    EXPECT_NEAR((ff.force() + dF).norm(), 0.0, 1e-9 * dF.norm());
}

TEST(FitForce, PerpendicularReadoutIsPartial) {
    const auto p = reference_device();
    const auto w = response_frequency_grid(p);
    const auto s = driven_response_analytic(p, p.e1(), {1e-15, 1e-15}, 0.0, w);
    try {
        fit_force(s, p, {p.e1(), {}});
        FAIL() << "expected PartialResultError";
    } catch (const PartialResultError& e) {
        EXPECT_EQ(e.unconstrained_mode(), 1);
    }
    ResponseSweep tiny{{1.0, 2.0}, {0.0, 0.0}, {}};
    EXPECT_THROW(fit_force(tiny, p, along(0.5)), InvalidArgument);
}

TEST(FitForce, ReportedUncertaintyMatchesScatter) {
    const auto p = reference_device();
    const ForceField f(GaussianBeamField::preset_532nm());
    MeasurementProtocol pr;
    pr.noise_scale = 30.0; // inflate the noise so the scatter is measurable
    const auto w = response_frequency_grid(p);
    const Vec2 r0{0.3e-6, 0.2e-6};
    std::vector<double> mags;
    double sigma = 0.0;
    const int n = 300;
    for (int s = 0; s < n; ++s) {
        const auto m = synthesize_measurement(p, f, r0, along(1.0), pr, w, Environment{}, 1000 + s);
        const auto fit = fit_force(m.sweep, p, along(1.0));
        mags.push_back(fit.magnitude);
        sigma += fit.sigma_magnitude / n;
    }
    const double mean = std::accumulate(mags.begin(), mags.end(), 0.0) / n;
    double var = 0.0;
    for (double v : mags) var += (v - mean) * (v - mean) / (n - 1);
    // sample std of 300 draws is within ~12% of the truth at 3 sigma
    EXPECT_NEAR(std::sqrt(var) / sigma, 1.0, 0.15);
}

TEST(Synthesize, NoiseVarianceFromThermalForce) {
    const auto p = reference_device();
    const ForceField f(LinearField{{}, {1e-15, 0.0}, {}, 100e-6});
    MeasurementProtocol pr;
    pr.bandwidth_hz = 5.0;
    const std::vector<double> w{p.omega1};
    const auto m = synthesize_measurement(p, f, {}, along(0.3), pr, w, Environment{}, 9);
    ASSERT_EQ(m.sweep.sigma.size(), 1u);
    double var = 0.0;
    for (int i = 0; i < 2; ++i)
        var += std::norm(susceptibility(p, i, p.omega1)) * std::pow(dot(p.mode_direction(i), unit_vector(0.3)), 2) *
               4.0 * p.mass * p.gamma * kBoltzmann * 300.0 * 5.0;
    EXPECT_NEAR(m.sweep.sigma[0], std::sqrt(var), 1e-9 * std::sqrt(var));
    EXPECT_DOUBLE_EQ(m.bandwidth_hz, 5.0);
    pr.delta_p_over_p = 0.0;
    EXPECT_THROW(synthesize_measurement(p, f, {}, along(0.3), pr, w, Environment{}, 9), InvalidArgument);
}

TEST(ForceMapTest, NoiselessMapAndThreadInvariance) {
    const auto p = reference_device();
    const auto beam = GaussianBeamField::preset_532nm();
    const ForceField f(beam);
    const auto tgrid = RectGrid::uniform(-1e-6, 1e-6, 201, -1.7e-6, 1.7e-6, 341);
    const auto tmap = SyntheticTransmission::from_beam(beam).tabulate(tgrid);
    const auto grid = RectGrid::uniform(-0.8e-6, 0.8e-6, 8, -1.5e-6, 1.5e-6, 8);
    ForceMapOptions o;
    o.protocol.noise_scale = 0.0;
    const auto a = map_force_field(p, f, tmap, grid, o, Environment{}, 5);
    ASSERT_TRUE(a.stats);
    EXPECT_LT(a.stats->max_relative_error, 1e-6);
    EXPECT_GT(a.stats->n_measured, 30u);

    o.protocol.noise_scale = 1.0;
    o.threads = 1;
    const auto b = map_force_field(p, f, tmap, grid, o, Environment{}, 5);
    o.threads = 3;
    const auto c = map_force_field(p, f, tmap, grid, o, Environment{}, 5);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        ASSERT_EQ(b.nodes[k].has_value(), c.nodes[k].has_value());
        if (b.nodes[k]) EXPECT_EQ(b.nodes[k]->magnitude, c.nodes[k]->magnitude);
    }
    o.compare_to_truth = false;
    EXPECT_FALSE(map_force_field(p, f, tmap, grid, o, Environment{}, 5).stats.has_value());
}

TEST(ForceMapTest, GapsCarryReasons) {
    const auto p = reference_device();
    const ForceField f(GaussianBeamField::preset_532nm());
    const auto tmap = linear_map(0.0, 1e5); // readout along z only
    auto q = p;
    q.theta1 = 0.0; // e2 along z, so e1 is unseen everywhere
    const auto grid = RectGrid::uniform(-0.5e-6, 0.5e-6, 3, -0.5e-6, 0.5e-6, 3);
    const auto m = map_force_field(q, f, tmap, grid, {}, Environment{}, 1);
    EXPECT_EQ(m.gaps(), grid.size());
    for (const auto& r : m.gap_reason) EXPECT_NE(r.find("e1"), std::string::npos);
}

TEST(PauliMapsTest, LinearFieldGivesConstantCoefficients) {
    const GradientMatrix G{1.0, 2.0, -0.5, 3.0};
    const auto grid = RectGrid::uniform(0, 1, 5, 0, 2, 4);
    std::vector<Vec2> F;
    for (std::size_t k = 0; k < grid.size(); ++k) F.push_back(G.apply(grid.node(k)));
    const auto pm = pauli_maps(grid, F);
    const auto ref = pauli_decompose(G);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        EXPECT_NEAR(pm.c0[k], ref.c0, 1e-12);
        EXPECT_NEAR(pm.cx[k], ref.cx, 1e-12);
        EXPECT_NEAR(pm.cy[k], ref.cy, 1e-12);
        EXPECT_NEAR(pm.cz[k], ref.cz, 1e-12);
    }
    F[grid.index(2, 2)] = {NAN, NAN};
    const auto holes = pauli_maps(grid, F);
    EXPECT_TRUE(std::isnan(holes.cy[grid.index(2, 1)]));
    EXPECT_FALSE(std::isnan(holes.cy[grid.index(0, 0)]));
}

TEST(PauliMapsTest, Correlation) {
    const std::vector<double> a{1, 2, 3, 4, NAN}, b{2, 4, 6, 8, 1};
    EXPECT_NEAR(map_correlation(a, b), 1.0, 1e-12);
    const std::vector<double> c{-1, -2, -3, -4, 0};
    EXPECT_NEAR(map_correlation(a, c), -1.0, 1e-12);
}

TEST(SplittingComparisonTest, ZeroPowerGivesBareSplitting) {
    const auto p = ModalParams::from_quality_factor(376e-18, 113e3, 113.5e3, 2890.0, 20.0 * kPi / 180);
    const ForceField f(GaussianBeamField::preset_532nm());
    const auto grid = RectGrid::uniform(-0.4e-6, 0.4e-6, 3, -0.5e-6, 0.5e-6, 3);
    const auto s = splitting_comparison(p, f, grid, 0.0, Environment{}, 3);
    EXPECT_EQ(s.n_used, grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        ASSERT_TRUE(s.predicted[k] && s.direct[k]);
        EXPECT_NEAR(*s.predicted[k], s.bare_splitting, 1e-9 * s.bare_splitting);
        EXPECT_NEAR(*s.direct[k] / s.bare_splitting, 1.0, 0.02);
    }
}

TEST(SplittingComparisonTest, UnstableNodesExcluded) {
    const auto p = reference_device();
    const ForceField f(GaussianBeamField::preset_532nm());
    const auto grid = RectGrid::uniform(0.1e-6, 0.4e-6, 3, -0.3e-6, 0.1e-6, 3);
    const auto s = splitting_comparison(p, f, grid, 400e-6, Environment{}, 3);
    std::size_t excluded = 0;
    for (const auto& r : s.excluded) excluded += !r.empty();
    EXPECT_GT(excluded, 0u);
    EXPECT_EQ(excluded + s.n_used, grid.size());
}
