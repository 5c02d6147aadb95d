// SPDX-License-Identifier: Apache-2.0
//
// mbsat - joint precoding optimization for multibeam satellite forward links
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------


#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace mbsat;

namespace {

// Moves `user` onto the centre of beam `beam` and refreshes its off-axis angles.
void place_at_center(BeamGeometry &g, std::size_t user, std::size_t beam, const ScenarioConfig &c)
{
    g.user_positions[user] = g.beam_centers[beam];
    g.serving_beam[user] = beam;
    for (std::size_t b = 0; b < g.num_beams(); ++b)
        g.offaxis_angles(user, b) = std::atan(distance(g.user_positions[user], g.beam_centers[b]) / c.orbit_distance);
}

RainSample clear_sky(std::size_t areas)
{
    RainSample r;
    r.attenuation_db.assign(areas, 0.0);
    r.phase.assign(areas, 0.3);
    r.dualpol_db.assign(areas, {{{0.0, 0.0}, {0.0, 0.0}}});
    return r;
}

} // namespace

TEST(Geometry, SevenBeamRing)
{
    ScenarioConfig c;
    Rng rng(1);
    const BeamGeometry g = build_geometry(c, rng);
    ASSERT_EQ(g.num_beams(), 7u);
    EXPECT_EQ(g.center_distances[0], 0.0);
    for (std::size_t b = 1; b < 7; ++b)
        EXPECT_NEAR(g.center_distances[b], 250e3, 1e-6);
    // Neighbouring outer beams are also one diameter apart.
    for (std::size_t b = 1; b < 7; ++b) {
        double nearest = 1e30;
        for (std::size_t o = 1; o < 7; ++o)
            if (o != b)
                nearest = std::min(nearest, distance(g.beam_centers[b], g.beam_centers[o]));
        EXPECT_NEAR(nearest, 250e3, 1e-6);
    }
}

TEST(Geometry, SingleBeam)
{
    ScenarioConfig c;
    c.num_beams = 1;
    c.traffic_mean = {1e9};
    Rng rng(2);
    const BeamGeometry g = build_geometry(c, rng);
    ASSERT_EQ(g.num_beams(), 1u);
    EXPECT_EQ(g.center_distances[0], 0.0);
}

TEST(Geometry, UsersInsideTheirBeam)
{
    ScenarioConfig c;
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng(s);
        const BeamGeometry g = build_geometry(c, rng);
        ASSERT_EQ(g.user_positions.size(), 28u);
        for (std::size_t u = 0; u < g.user_positions.size(); ++u) {
            EXPECT_LE(distance(g.user_positions[u], g.beam_centers[g.serving_beam[u]]), 125e3 + 1e-6);
            for (std::size_t b = 0; b < 7; ++b)
                EXPECT_GE(g.offaxis_angles(u, b), 0.0);
        }
    }
}

TEST(Geometry, UserAtCenterHasZeroAngle)
{
    ScenarioConfig c;
    Rng rng(3);
    BeamGeometry g = build_geometry(c, rng);
    place_at_center(g, 5, 2, c);
    EXPECT_EQ(g.offaxis_angles(5, 2), 0.0);
}

TEST(Geometry, RejectsNonPositiveBeams)
{
    ScenarioConfig c;
    c.num_beams = 0;
    Rng rng(1);
    EXPECT_THROW(build_geometry(c, rng), std::invalid_argument);
}

TEST(FreeSpaceLoss, BeamCenterAt20GHz)
{
    const ScenarioConfig c;
    EXPECT_NEAR(c.wavelength(), 0.014990, 1e-6);
    const double v = fsl_coefficient(c.wavelength(), 0.0, 35786e3);
    EXPECT_NEAR(v, 1.1115e-21, 0.0005e-21);
    EXPECT_NEAR(linear_to_db(v), -209.54, 0.01);
    EXPECT_LE(std::abs(linear_to_db(v) + 210.0), 0.6);
}

TEST(FreeSpaceLoss, ScalingLaws)
{
    const double d0 = 35786e3;
    const double base = fsl_coefficient(0.015, 0.0, d0);
    EXPECT_NEAR(fsl_coefficient(0.015, d0, d0), 0.5 * base, 1e-15 * base);
    EXPECT_NEAR(fsl_coefficient(0.030, 0.0, d0), 4.0 * base, 1e-15 * base);
    EXPECT_THROW(fsl_coefficient(0.0, 0.0, d0), std::invalid_argument);
    EXPECT_THROW(fsl_coefficient(0.015, -1.0, d0), std::invalid_argument);
}

TEST(BeamGain, Boresight) { EXPECT_EQ(beam_gain(0.0, deg_to_rad(0.4)), 1.0); }

TEST(BeamGain, HalfPowerPoint)
{
    for (double t : {0.2, 0.4, 1.0}) {
        const double th = deg_to_rad(t);
        EXPECT_NEAR(beam_gain(th, th), 0.5, 0.005);
        // Same quantity through the extended-precision Bessel series.
        const double u = 2.07123;
        const double v = bessel_j(1, u) / (2.0 * u) + 36.0 * bessel_j(3, u) / (u * u * u);
        EXPECT_NEAR(beam_gain(th, th), v * v, 1e-12);
    }
}

TEST(BeamGain, MainLobeDecay)
{
    const double th = deg_to_rad(0.4);
    EXPECT_LT(beam_gain(2.0 * th, th), 0.5);
    double prev = 1.0;
    for (int i = 1; i <= 100; ++i) {
        const double v = beam_gain(th * i / 50.0, th);
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(BeamGain, SmallArgumentBranchIsContinuous)
{
    const double th = deg_to_rad(0.4);
    // u crosses the series cut-off around theta = 1e-4 * sin(th) / 2.07123.
    const double cut = std::asin(1e-4 * std::sin(th) / 2.07123);
    EXPECT_NEAR(beam_gain(cut * (1.0 - 1e-7), th), beam_gain(cut * (1.0 + 1e-7), th), 1e-14);
}

TEST(BeamGain, SpacingMatchesFullBeamwidth)
{
    // Adjacent beam centres sit at the edge of the one-sided half-power angle.
    const ScenarioConfig c;
    EXPECT_NEAR(2.0 * c.orbit_distance * std::tan(0.5 * c.theta_3db), c.beam_diameter, 0.001 * c.beam_diameter);
}

TEST(Rain, LognormalMoments)
{
    Rng rng(99);
    const std::size_t n = 1000000;
    const RainSample s = sample_rain(rng, -2.6, 1.63, n, false);
    double mean = 0.0;
    for (double a : s.attenuation_db) {
        ASSERT_GT(a, 0.0);
        mean += std::log(a);
    }
    mean /= n;
    double var = 0.0;
    for (double a : s.attenuation_db)
        var += (std::log(a) - mean) * (std::log(a) - mean);
    var /= (n - 1);
    EXPECT_NEAR(mean, -2.6, 0.01);
    EXPECT_NEAR(std::sqrt(var), 1.63, 0.01);
    for (double p : s.phase) {
        ASSERT_GE(p, 0.0);
        ASSERT_LT(p, 2.0 * std::numbers::pi);
    }
}

TEST(Rain, DegenerateSigma)
{
    Rng rng(5);
    const RainSample s = sample_rain(rng, -2.6, 0.0, 7, true);
    for (std::size_t a = 0; a < 7; ++a) {
        EXPECT_DOUBLE_EQ(s.attenuation_db[a], std::exp(-2.6));
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                EXPECT_DOUBLE_EQ(s.dualpol_db[a][i][j], std::exp(-2.6));
    }
}

TEST(Noise, TableValue)
{
    const ScenarioConfig c;
    EXPECT_NEAR(c.noise_power(), 1.429e-12, 0.0005e-12);
    EXPECT_NEAR(linear_to_db(c.noise_power()), -118.45, 0.01);
}

TEST(MisoChannel, ClearSkyLinkBudget)
{
    const ScenarioConfig c;
    Rng rng(4);
    BeamGeometry g = build_geometry(c, rng);
    place_at_center(g, 0, 0, c);
    const ComplexVector h = build_miso_channel(g, clear_sky(7), c, 0);
    const double expected = db_to_linear(52.0 + 41.7) * fsl_coefficient(c.wavelength(), 0.0, c.orbit_distance);
    EXPECT_NEAR(std::norm(h[0]), expected, 1e-12 * expected);
    EXPECT_NEAR(std::norm(h[0]), 2.60e-12, 0.01e-12);
    // 80 W on the centre beam: about 21.6 dB SNR.
    EXPECT_NEAR(linear_to_db(80.0 * std::norm(h[0]) / c.noise_power()), 21.64, 0.02);
}

TEST(MisoChannel, CommonPhaseAndServingPeak)
{
    const ScenarioConfig c;
    Rng rng(6);
    BeamGeometry g = build_geometry(c, rng);
    const RainSample rain = sample_rain(rng, c.rain_mu, c.rain_sigma, 7, true);
    place_at_center(g, 9, 2, c);
    const ComplexVector h = build_miso_channel(g, rain, c, 9);
    for (std::size_t j = 1; j < h.size(); ++j)
        EXPECT_NEAR(std::arg(h[j]), std::arg(h[0]), 1e-12);
    const RealVector b = user_beam_gains(g, 9, c);
    for (std::size_t j = 0; j < b.size(); ++j) {
        if (j != 2) {
            EXPECT_LT(b[j], b[2]);
        }
    }
}

TEST(MisoChannel, SameAreaSharesRain)
{
    const ScenarioConfig c;
    Rng rng(7);
    const BeamGeometry g = build_geometry(c, rng);
    const RainSample rain = sample_rain(rng, c.rain_mu, c.rain_sigma, 7, false);
    // Users 0..3 share beam 0: identical rain amplitude and phase.
    const ComplexVector a = build_miso_channel(g, rain, c, 0);
    const ComplexVector b = build_miso_channel(g, rain, c, 1);
    const double scale_a = std::sqrt(c.antenna_gain() * user_fsl(g, 0, c));
    const double scale_b = std::sqrt(c.antenna_gain() * user_fsl(g, 1, c));
    const RealVector ga = user_beam_gains(g, 0, c);
    const RealVector gb = user_beam_gains(g, 1, c);
    EXPECT_NEAR(std::abs(a[0]) / (scale_a * std::sqrt(ga[0])), std::abs(b[0]) / (scale_b * std::sqrt(gb[0])), 1e-12);
    EXPECT_NEAR(std::arg(a[0]), std::arg(b[0]), 1e-12);
}

TEST(CopolChannel, IdenticalRows)
{
    std::mt19937_64 rng(8);
    const ComplexVector h = test::random_vector(rng, 7);
    const ComplexMatrix m = build_copol_channel(h);
    ASSERT_EQ(m.rows(), 2u);
    for (std::size_t j = 0; j < 7; ++j)
        EXPECT_EQ(m(0, j), m(1, j));
    EXPECT_NEAR(frobenius_sq(m), 2.0 * norm_sq(h), 1e-12 * norm_sq(h));
    // Either antenna alone sees h.
    const ComplexVector e = effective_channel(ComplexVector{1.0, 0.0}, m);
    for (std::size_t j = 0; j < 7; ++j)
        EXPECT_EQ(e[j], h[j]);
    const ComplexMatrix one = build_copol_channel(ComplexVector{cdouble(0.5, -1.0)});
    EXPECT_EQ(one(0, 0), one(1, 0));
}

TEST(DualpolChannel, NormalizationTraceRatio)
{
    ScenarioConfig c;
    const PolarizationModel pol = PolarizationModel::from_xpd(c.xpd_db, c.polarization_rho);
    for (std::uint64_t s = 0; s < 50; ++s) {
        Rng rng(s);
        const BeamGeometry g = build_geometry(c, rng);
        const RainSample rain = sample_rain(rng, c.rain_mu, c.rain_sigma, 7, true);
        for (std::size_t u : {0u, 5u, 27u}) {
            const ComplexMatrix hb = build_dualpol_channel(g, rain, pol, c, u);
            const ComplexMatrix hc = build_copol_channel(build_miso_channel(g, rain, c, u));
            EXPECT_NEAR(frobenius_sq(hb) / frobenius_sq(hc), 1.0, 1e-9);
        }
    }
}

TEST(DualpolChannel, NoCrossPolarLeakage)
{
    const ScenarioConfig c;
    Rng rng(9);
    const BeamGeometry g = build_geometry(c, rng);
    RainSample rain = sample_rain(rng, c.rain_mu, c.rain_sigma, 7, true);
    for (auto &m : rain.dualpol_db)
        m = {{{0.4, 0.4}, {0.4, 0.4}}};
    const ComplexMatrix hb = build_dualpol_channel(g, rain, PolarizationModel::with_alpha(0.0, 0.0), c, 3);
    for (std::size_t f = 0; f < 7; ++f) {
        EXPECT_EQ(hb(0, 2 * f + 1), cdouble{});
        EXPECT_EQ(hb(1, 2 * f), cdouble{});
        EXPECT_NEAR(std::abs(hb(0, 2 * f)), std::abs(hb(1, 2 * f + 1)), 1e-15 * std::abs(hb(0, 2 * f)));
    }
}

TEST(DualpolChannel, FullCorrelationIsRankOne)
{
    // rho = 1 makes R^(1/2) = sqrt(2) u u^T with u = (1, 1)/sqrt(2). The
    // polarization mask enters through a Hadamard product, so the rows are only
    // proportional when the mask is rank one too (alpha = 1).
    const ScenarioConfig c;
    Rng rng(10);
    const BeamGeometry g = build_geometry(c, rng);
    const RainSample rain = sample_rain(rng, c.rain_mu, c.rain_sigma, 7, true);
    const PolarizationModel pol = PolarizationModel::with_alpha(1.0, 1.0);
    const RealMatrix rs = pol.r_sqrt();
    EXPECT_NEAR(rs(0, 0), std::sqrt(2.0) / 2.0, 1e-15);
    EXPECT_NEAR(rs(0, 1), std::sqrt(2.0) / 2.0, 1e-15);
    const ComplexMatrix hb = build_dualpol_channel(g, rain, pol, c, 12);
    // 2x2 minors of the 2 x 2N matrix vanish.
    double scale = 0.0;
    for (const auto &v : hb.entries())
        scale = std::max(scale, std::norm(v));
    for (std::size_t a = 0; a < hb.cols(); ++a)
        for (std::size_t b = a + 1; b < hb.cols(); ++b)
            EXPECT_LE(std::abs(hb(0, a) * hb(1, b) - hb(0, b) * hb(1, a)), 1e-12 * scale);
}

TEST(Polarization, ModelMatrices)
{
    const PolarizationModel m = PolarizationModel::from_xpd(20.0, 0.9);
    EXPECT_NEAR(m.alpha, 0.1, 1e-15);
    EXPECT_EQ(m.p(0, 0), 1.0);
    EXPECT_EQ(m.p(0, 1), m.alpha);
    EXPECT_EQ(m.r(1, 0), 0.9);
    const RealMatrix rs = m.r_sqrt();
    const RealMatrix sq = rs * rs;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            EXPECT_NEAR(sq(i, j), m.r(i, j), 1e-15);
    EXPECT_THROW(PolarizationModel::with_alpha(0.1, 1.5), std::invalid_argument);
}

TEST(Traffic, SupportAndMean)
{
    Rng rng(12);
    const std::vector<double> m{4e9, 0.8e9, 0.8e9, 0.8e9, 2e9, 2e9, 2e9};
    EXPECT_EQ(ScenarioConfig{}.traffic_mean, m);
    RealVector mean(7, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const RealVector f = sample_traffic(rng, m);
        ASSERT_GE(f[0], 2e9);
        ASSERT_LE(f[0], 6e9);
        for (int k = 0; k < 7; ++k)
            mean[k] += f[k] / n;
    }
    for (int k = 0; k < 7; ++k)
        EXPECT_NEAR(mean[k], m[k], 0.01 * m[k]);
    EXPECT_THROW(sample_traffic(rng, std::vector<double>{1.0, 0.0}), std::invalid_argument);
}

TEST(Determinism, SameSeedSameDrop)
{
    const ScenarioConfig c;
    const DropInstance a = make_drop(c, 42, 3);
    const DropInstance b = make_drop(c, 42, 3);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.demands, b.demands);
    for (std::size_t k = 0; k < 7; ++k) {
        EXPECT_EQ(a.channels.miso[k], b.channels.miso[k]);
        EXPECT_EQ(a.channels.dualpol[k].entries(), b.channels.dualpol[k].entries());
    }
    EXPECT_NE(make_drop(c, 42, 4).demands, a.demands);
}

TEST(Determinism, DropSeedIsCounterBased)
{
    EXPECT_EQ(drop_seed(7, 0), splitmix64(splitmix64(7) ^ 0));
    EXPECT_EQ(drop_seed(7, 5), splitmix64(splitmix64(7) ^ 5));
    EXPECT_NE(drop_seed(7, 5), drop_seed(8, 5));
}

TEST(Config, Validation)
{
    ScenarioConfig c;
    EXPECT_NO_THROW(c.validate());
    c.polarization_rho = 1.2;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.traffic_mean.pop_back();
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.xpd_db = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}
