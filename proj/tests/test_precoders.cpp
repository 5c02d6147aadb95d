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

using namespace mbsat;

namespace {

constexpr double kBeamLimit = 80.0;

// Drop with demands scaled up so the alternation (not the fast path) runs.
test::TableDrop loaded_drop(std::size_t index, double scale = 2.0)
{
    auto d = test::table_drop(1, index);
    for (auto &f : d.demands)
        f *= scale;
    return d;
}

PowerConstraintSet per_beam(std::size_t k) { return PowerConstraintSet::per_beam(BeamLayout::single(k), kBeamLimit); }

void expect_valid(const SchemeResult &r, std::span<const double> demands, const PowerConstraintSet &cs)
{
    ASSERT_EQ(r.rates.size(), demands.size());
    for (std::size_t k = 0; k < demands.size(); ++k)
        EXPECT_LE(r.rates[k], demands[k] * (1.0 + 1e-9)) << r.scheme << " user " << k;
    const ConstraintReport rep = evaluate_constraints(cs, r.precoders);
    EXPECT_LE(rep.worst_linear_ratio, 1.0 + 1e-8) << r.scheme;
    EXPECT_LE(rep.worst_nonlinear_ratio, 1.0 + 1e-8) << r.scheme;
    for (std::size_t i = 1; i < r.trace.size(); ++i)
        EXPECT_LE(r.trace[i], r.trace[i - 1] * (1.0 + 1e-12) + 1e-12) << r.scheme << " outer " << i;
    for (double p : r.powers)
        EXPECT_GE(p, 0.0);
}

double cost_of(const RealVector &rates, std::span<const double> demands)
{
    return evaluate_objective(ObjectiveSpec::rate_matching(2), rates, demands);
}

} // namespace

TEST(ZeroForcing, NullsInterference)
{
    std::mt19937_64 rng(1);
    for (std::size_t k : {2u, 4u, 7u}) {
        std::vector<ComplexVector> h;
        for (std::size_t i = 0; i < k; ++i)
            h.push_back(test::random_vector(rng, k + 1));
        const auto w = zf_precoders(h);
        for (std::size_t i = 0; i < k; ++i) {
            EXPECT_NEAR(norm(w[i]), 1.0, 1e-12);
            for (std::size_t j = 0; j < k; ++j) {
                if (i != j) {
                    EXPECT_LE(std::abs(inner(h[j], w[i])), 1e-10 * norm(h[j]));
                }
            }
            EXPECT_GT(std::abs(inner(h[i], w[i])), 0.0);
        }
    }
}

TEST(ZeroForcing, RejectsUnderdeterminedOrCollinear)
{
    std::mt19937_64 rng(2);
    std::vector<ComplexVector> h;
    for (int i = 0; i < 3; ++i)
        h.push_back(test::random_vector(rng, 2));
    EXPECT_THROW(zf_precoders(h), std::invalid_argument);
    const ComplexVector a = test::random_vector(rng, 3);
    EXPECT_ANY_THROW(zf_precoders(std::vector<ComplexVector>{a, scaled(a, cdouble(0.0, 2.0))}));
}

TEST(RegularizedZf, Limits)
{
    std::mt19937_64 rng(3);
    std::vector<ComplexVector> h;
    for (int i = 0; i < 4; ++i)
        h.push_back(test::random_vector(rng, 4));
    const auto zf = zf_precoders(h);
    const auto near_zf = rzf_precoders(h, 1e-12, 1.0);
    const auto near_mrt = rzf_precoders(h, 1e12, 1.0);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_NEAR(std::abs(inner(zf[k], near_zf[k])), 1.0, 1e-9);
        EXPECT_NEAR(std::abs(inner(normalized(h[k]), near_mrt[k])), 1.0, 1e-9);
    }
    EXPECT_THROW(rzf_precoders(h, 1.0, 0.0), std::invalid_argument);
}

TEST(Conventional, ReuseRates)
{
    const std::vector<ComplexVector> h{{cdouble(2.0), 0.0}, {0.0, cdouble(0.0, 1.0)}};
    const RealVector f{10.0, 0.5};
    const ConventionalResult c = conventional_rates(h, f, 4.0, 1.0, 4, 3.0);
    // User 0: saturated at 3 W over a quarter of the band; user 1: demand met.
    EXPECT_EQ(c.powers[0], 3.0);
    EXPECT_NEAR(c.rates[0], 1.0 * std::log2(1.0 + 4.0 * 3.0 * 4.0), 1e-12);
    EXPECT_NEAR(c.rates[1], 0.5, 1e-12);
    EXPECT_NEAR(c.powers[1], std::expm1(0.5 * std::numbers::ln2) / 4.0, 1e-12);
    EXPECT_THROW(conventional_rates(h, f, 4.0, 1.0, 0, 3.0), std::invalid_argument);
}

TEST(DpcOrder, SortsByNormalizedDemand)
{
    const std::vector<ComplexVector> h{{cdouble(1.0)}, {cdouble(3.0)}, {cdouble(1.0)}, {cdouble(0.5)}};
    const RealVector f{2.0, 2.0, 1.0, 2.0};
    // Metrics: 2/1, 2/log2(10), 1/1, 2/log2(1.25).
    EXPECT_EQ(dpc_order(h, f, 1.0), (std::vector<std::size_t>{1, 2, 0, 3}));
    // Ties keep index order.
    EXPECT_EQ(dpc_order(std::vector<ComplexVector>{{cdouble(1.0)}, {cdouble(1.0)}}, RealVector{1.0, 1.0}),
              (std::vector<std::size_t>{0, 1}));
    EXPECT_THROW(dpc_order(std::vector<ComplexVector>{{cdouble(0.0)}}, RealVector{1.0}), std::invalid_argument);
}

class DropSchemes : public ::testing::TestWithParam<int> {};

TEST_P(DropSchemes, GenericMisoIsValidAndBeatsFixedDirections)
{
    const auto d = loaded_drop(static_cast<std::size_t>(GetParam()));
    const auto &h = d.channels.miso;
    const PowerConstraintSet cs = per_beam(h.size());
    const double noise = d.config.noise_power();
    const double w = d.config.bandwidth;

    const SchemeResult miso = generic_miso(h, d.demands, cs, noise, w);
    expect_valid(miso, d.demands, cs);
    EXPECT_TRUE(miso.converged);
    EXPECT_LE(miso.max_raw_increase, 1e-9);
    EXPECT_FALSE(miso.demand_met);
    EXPECT_GE(miso.trace.size(), 2u);

    const SchemeResult zf = linear_baseline("zf", zf_precoders(h), h, d.demands, cs, noise, w);
    const SchemeResult rzf = linear_baseline("rzf", rzf_precoders(h, noise, kBeamLimit), h, d.demands, cs, noise, w);
    expect_valid(zf, d.demands, cs);
    expect_valid(rzf, d.demands, cs);
    // The alternation starts from the better baseline and never increases its cost.
    EXPECT_LE(miso.objective_value, std::min(zf.objective_value, rzf.objective_value) * (1.0 + 1e-9));

    // Reported rates agree with a direct SINR evaluation of the precoders.
    for (std::size_t k = 0; k < h.size(); ++k)
        EXPECT_NEAR(miso.rates[k], std::min(rate(sinr_miso(h[k], miso.precoders, noise, k), w), d.demands[k]),
                    1e-9 * d.demands[k]);
    EXPECT_NEAR(miso.objective_value, cost_of(miso.rates, d.demands), 1e-9 * std::max(1.0, miso.objective_value));
}

TEST_P(DropSchemes, DirtyPaperIsValid)
{
    const auto d = loaded_drop(static_cast<std::size_t>(GetParam()));
    const auto &h = d.channels.miso;
    const PowerConstraintSet cs = per_beam(h.size());
    const double noise = d.config.noise_power();
    const auto order = dpc_order(h, d.demands, noise);
    const SchemeResult dpc = generic_dpc(h, d.demands, cs, noise, d.config.bandwidth, order);
    expect_valid(dpc, d.demands, cs);
    EXPECT_EQ(dpc.order, order);
    for (std::size_t k = 0; k < h.size(); ++k)
        EXPECT_NEAR(dpc.rates[k],
                    std::min(rate(sinr_dpc(h[k], dpc.precoders, noise, k, order), d.config.bandwidth), d.demands[k]),
                    1e-9 * d.demands[k]);
}

INSTANTIATE_TEST_SUITE_P(TableDrops, DropSchemes, ::testing::Values(0, 5, 11));

TEST(GenericMiso, FeasibleDemandIsServedExactly)
{
    auto d = test::table_drop(1, 4);
    for (auto &f : d.demands)
        f *= 0.2;
    const auto &h = d.channels.miso;
    const PowerConstraintSet cs = per_beam(h.size());
    const SchemeResult r = generic_miso(h, d.demands, cs, d.config.noise_power(), d.config.bandwidth);
    EXPECT_TRUE(r.demand_met);
    EXPECT_LE(r.objective_value, 1e-12 * cost_of(RealVector(h.size(), 0.0), d.demands));
    for (std::size_t k = 0; k < h.size(); ++k)
        EXPECT_NEAR(r.rates[k], d.demands[k], 1e-7 * d.demands[k]);
    expect_valid(r, d.demands, cs);
}

TEST(GenericMiso, FastPathOffStillReachesDemand)
{
    auto d = test::table_drop(1, 4);
    for (auto &f : d.demands)
        f *= 0.2;
    const auto &h = d.channels.miso;
    const PowerConstraintSet cs = per_beam(h.size());
    GenericOptions o;
    o.feasibility_fast_path = false;
    const SchemeResult r = generic_miso(h, d.demands, cs, d.config.noise_power(), d.config.bandwidth, o);
    EXPECT_FALSE(r.demand_met);
    expect_valid(r, d.demands, cs);
    EXPECT_LE(r.objective_value, 1e-6 * cost_of(RealVector(h.size(), 0.0), d.demands));
}

TEST(GenericMiso, NonlinearAndSharedConstraints)
{
    const auto d = test::table_drop(1, 7);
    const auto &h = d.channels.miso;
    PowerConstraintSet cs = PowerConstraintSet::shared(BeamLayout::single(7), {{0, 1, 2}, {3, 4, 5, 6}}, kBeamLimit);
    cs.add_nonlinear(PowerMap::square_root(kBeamLimit), 6.0 * kBeamLimit);
    const SchemeResult r = generic_miso(h, d.demands, cs, d.config.noise_power(), d.config.bandwidth);
    expect_valid(r, d.demands, cs);
}

TEST(GenericMiso, ThroughputObjective)
{
    const auto d = test::table_drop(1, 9);
    const auto &h = d.channels.miso;
    const PowerConstraintSet cs = per_beam(h.size());
    GenericOptions o;
    o.objective = ObjectiveSpec::throughput();
    const SchemeResult r = generic_miso(h, d.demands, cs, d.config.noise_power(), d.config.bandwidth, o);
    expect_valid(r, d.demands, cs);
    double unmet = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k)
        unmet += d.demands[k] - r.rates[k];
    EXPECT_NEAR(r.objective_value, unmet, 1e-9 * unmet + 1e-3);
}

TEST(Fairness, BisectionBracketsThreshold)
{
    for (std::size_t drop : {2u, 8u}) {
        const auto d = test::table_drop(1, drop);
        const auto &h = d.channels.miso;
        const PowerConstraintSet cs = per_beam(h.size());
        const double noise = d.config.noise_power();
        const double eps = 1e-3;
        const SchemeResult r = fairness_bisection(h, d.demands, cs, noise, d.config.bandwidth, eps);
        EXPECT_TRUE(r.fairness_monotone);
        expect_valid(r, d.demands, cs);
        double worst = 1.0;
        for (std::size_t k = 0; k < h.size(); ++k)
            worst = std::min(worst, r.rates[k] / d.demands[k]);
        EXPECT_GE(worst, r.fairness * (1.0 - 1e-7));
        if (r.fairness < 1.0) {
            RealVector above = d.demands;
            for (auto &f : above)
                f *= r.fairness + eps;
            EXPECT_FALSE(check_feasibility(h, above, d.config.bandwidth, noise, cs).feasible);
        }
    }
    EXPECT_THROW(fairness_bisection(std::vector<ComplexVector>{{cdouble(1.0)}}, RealVector{1.0}, per_beam(1), 1.0, 1.0, 0.0),
                 std::invalid_argument);
}

TEST(Fairness, ConvexNonlinearConstraint)
{
    const auto d = test::table_drop(1, 3);
    const auto &h = d.channels.miso;
    PowerConstraintSet cs = per_beam(h.size());
    cs.add_nonlinear(PowerMap::quadratic(kBeamLimit), 2.0);
    const SchemeResult r = fairness_bisection(h, d.demands, cs, d.config.noise_power(), d.config.bandwidth, 1e-2);
    expect_valid(r, d.demands, cs);
    PowerConstraintSet bad = per_beam(h.size());
    bad.add_nonlinear(PowerMap::square_root(), 2.0);
    EXPECT_THROW(fairness_bisection(h, d.demands, bad, d.config.noise_power(), d.config.bandwidth), std::invalid_argument);
}

TEST(Combiners, MmseMaximizesSinr)
{
    std::mt19937_64 rng(4);
    const ComplexMatrix h = test::random_matrix(rng, 2, 4);
    std::vector<ComplexVector> t;
    for (int j = 0; j < 3; ++j)
        t.push_back(test::random_vector(rng, 4));
    const ComplexVector u = mmse_combiner(h, t, 0.3, 1);
    EXPECT_NEAR(norm(u), 1.0, 1e-12);
    const double best = sinr_mimo(u, h, t, 0.3, 1);
    for (int trial = 0; trial < 200; ++trial)
        EXPECT_LE(sinr_mimo(test::random_vector(rng, 2), h, t, 0.3, 1), best * (1.0 + 1e-12));
}

TEST(Combiners, DominantDirectionIsEigenvector)
{
    std::mt19937_64 rng(5);
    const ComplexMatrix h = test::random_matrix(rng, 2, 6);
    const ComplexVector u = dominant_receive_direction(h);
    const ComplexVector hu = effective_channel(u, h); // H^H u
    const ComplexVector g = h * hu;                   // H H^H u
    const cdouble lambda = inner(u, g);
    for (std::size_t i = 0; i < 2; ++i)
        EXPECT_NEAR(std::abs(g[i] - lambda * u[i]), 0.0, 1e-10 * std::abs(lambda));
    // Largest eigenvalue: at least the Rayleigh quotient of either basis vector.
    for (std::size_t i = 0; i < 2; ++i) {
        ComplexVector e(2, cdouble{});
        e[i] = 1.0;
        EXPECT_GE(lambda.real(), norm_sq(effective_channel(e, h)) * (1.0 - 1e-12));
    }
}

TEST(GenericMimo, CopolMatchesMisoWithArrayGain)
{
    // Identical rows: the combiner (1, 1)/sqrt(2) turns each user into a MISO
    // channel sqrt(2) h, so both schemes solve the same problem.
    const auto d = loaded_drop(6);
    const auto &h = d.channels.miso;
    const PowerConstraintSet cs = per_beam(h.size());
    const double noise = d.config.noise_power();
    std::vector<ComplexVector> boosted;
    for (const auto &v : h)
        boosted.push_back(scaled(v, cdouble(std::sqrt(2.0))));
    const SchemeResult mimo = generic_mimo(d.channels.copol, d.demands, cs, noise, d.config.bandwidth);
    const SchemeResult miso = generic_miso(boosted, d.demands, cs, noise, d.config.bandwidth);
    EXPECT_NEAR(mimo.objective_value, miso.objective_value, 1e-6 * std::max(1.0, miso.objective_value));
    for (const auto &u : mimo.combiners) {
        EXPECT_NEAR(std::abs(u[0]), 1.0 / std::sqrt(2.0), 1e-9);
        EXPECT_NEAR(std::abs(u[1]), 1.0 / std::sqrt(2.0), 1e-9);
    }
    expect_valid(mimo, d.demands, cs);
}

TEST(GenericMimo, DualPolarizationIsValid)
{
    const auto d = loaded_drop(6);
    const std::size_t k = d.channels.dualpol.size();
    const PowerConstraintSet cs = PowerConstraintSet::per_beam(BeamLayout::dual(k), kBeamLimit);
    const SchemeResult r =
        generic_mimo(d.channels.dualpol, d.demands, cs, d.config.noise_power(), d.config.bandwidth, {}, "mimo-dualpol");
    expect_valid(r, d.demands, cs);
    ASSERT_EQ(r.combiners.size(), k);
    for (std::size_t u = 0; u < k; ++u) {
        const double s = sinr_mimo(r.combiners[u], d.channels.dualpol[u], r.precoders, d.config.noise_power(), u);
        EXPECT_NEAR(r.rates[u], std::min(rate(s, d.config.bandwidth), d.demands[u]), 1e-9 * d.demands[u]);
    }
}

TEST(Polarization, SelectionAndAlternation)
{
    ComplexMatrix h(2, 4);
    for (std::size_t c = 0; c < 4; ++c) {
        h(0, c) = cdouble(1.0 + c, 0.5);
        h(1, c) = cdouble(0.0, 2.0 + c);
    }
    EXPECT_EQ(polarization_selection(h), 1u);
    ComplexMatrix tie(2, 1);
    tie(0, 0) = 1.0;
    tie(1, 0) = cdouble(0.0, 1.0);
    EXPECT_EQ(polarization_selection(tie), 0u);

    const ComplexVector r1 = row_channel(h, 1);
    for (std::size_t c = 0; c < 4; ++c)
        EXPECT_EQ(r1[c], std::conj(h(1, c)));
    EXPECT_THROW(row_channel(h, 2), std::out_of_range);

    const ComplexMatrix alt = alternating_polarization_channel(h);
    ASSERT_EQ(alt.cols(), 2u);
    EXPECT_EQ(alt(0, 0), h(0, 0)); // feed 0, polarization 0
    EXPECT_EQ(alt(1, 1), h(1, 3)); // feed 1, polarization 1
    EXPECT_THROW(alternating_polarization_channel(ComplexMatrix(2, 3)), std::invalid_argument);
}
