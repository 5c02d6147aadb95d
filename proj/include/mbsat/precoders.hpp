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

#pragma once

#include "mbsat/constraints.hpp"
#include "mbsat/dualsolver.hpp"
#include "mbsat/numerics.hpp"
#include "mbsat/objectives.hpp"
#include "mbsat/powergrad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbsat {

struct SchemeResult {
    std::string scheme;
    std::vector<ComplexVector> precoders;
    std::vector<ComplexVector> directions;
    std::vector<ComplexVector> combiners; // unit norm, receive-combining schemes only
    RealVector powers;
    RealVector rates;
    RealVector beam_powers;
    double objective_value = 0.0;
    int iterations = 0;
    bool converged = false;
    bool demand_met = false;           // the demand was feasible and is served exactly
    RealVector trace;                  // objective after every outer iteration, starting at the initial point
    double max_raw_increase = 0.0;     // largest relative objective increase proposed by an outer iteration
    std::vector<std::size_t> order;    // encoding order (dirty-paper coding)
    double fairness = 0.0;             // certified min_k r_k / F_k (fairness bisection)
    bool fairness_monotone = true;     // feasibility was monotone in gamma along the search
};

struct GenericOptions {
    ObjectiveSpec objective = ObjectiveSpec::rate_matching(2);
    int max_outer = 200;
    double tolerance = 1e-5; // relative objective improvement ending the outer loop
    bool feasibility_fast_path = true;
    PowerOptions power;
    double dual_gap = 1e-4;
    int dual_iterations = 2000;
};

// ------------------------------------------------------------------------
// Baselines
// ------------------------------------------------------------------------

struct ConventionalResult {
    RealVector rates;
    RealVector powers; // one per beam
};

/// Frequency-reuse baseline without co-channel interference. Beam k serves its
/// user over W / reuse with power min(saturation, demand-matching power).
inline ConventionalResult conventional_rates(std::span<const ComplexVector> channels, std::span<const double> demands,
                                             double bandwidth, double noise, int reuse, double saturation)
{
    if (reuse < 1)
        throw std::invalid_argument("conventional_rates: reuse factor must be >= 1");
    const double n = static_cast<double>(reuse);
    ConventionalResult out;
    for (std::size_t k = 0; k < channels.size(); ++k) {
        const double g = std::norm(channels[k].at(k));
        const double p_demand = sinr_target(n * demands[k], bandwidth) * noise / (n * g);
        const double p = std::min(saturation, p_demand);
        out.powers.push_back(p);
        out.rates.push_back(std::min(rate(n * p * g / noise, bandwidth / n), demands[k]));
    }
    return out;
}

namespace detail {

// Columns of H^H (H H^H + a I)^{-1}, normalized, where row k of H is h_k^H.
inline std::vector<ComplexVector> regularized_inverse_directions(std::span<const ComplexVector> channels, double a)
{
    const std::size_t k_users = channels.size();
    ComplexMatrix gram(k_users, k_users);
    for (std::size_t i = 0; i < k_users; ++i)
        for (std::size_t j = 0; j < k_users; ++j)
            gram(i, j) = inner(channels[i], channels[j]);
    for (std::size_t i = 0; i < k_users; ++i)
        gram(i, i) += a;
    const Cholesky chol(gram);
    std::vector<ComplexVector> dirs;
    for (std::size_t j = 0; j < k_users; ++j) {
        ComplexVector e(k_users, cdouble{});
        e[j] = 1.0;
        const ComplexVector c = chol.solve(e);
        ComplexVector w(channels[0].size(), cdouble{});
        for (std::size_t i = 0; i < k_users; ++i)
            for (std::size_t p = 0; p < w.size(); ++p)
                w[p] += channels[i][p] * c[i];
        dirs.push_back(normalized(w));
    }
    return dirs;
}

} // namespace detail

/// Zero-forcing directions: normalized columns of the channel pseudo-inverse.
inline std::vector<ComplexVector> zf_precoders(std::span<const ComplexVector> channels)
{
    if (channels.empty() || channels.size() > channels[0].size())
        throw std::invalid_argument("zf_precoders: need 1 <= users <= transmit ports");
    // Scale-aware rank check: the Gram matrix of the normalized channels must be well conditioned.
    std::vector<ComplexVector> unit;
    for (const auto &h : channels)
        unit.push_back(normalized(h));
    ComplexMatrix gram(unit.size(), unit.size());
    for (std::size_t i = 0; i < unit.size(); ++i)
        for (std::size_t j = 0; j < unit.size(); ++j)
            gram(i, j) = inner(unit[i], unit[j]);
    Cholesky check(gram);
    (void)check;
    return detail::regularized_inverse_directions(channels, 0.0);
}

/// Regularized zero-forcing directions with a = N0W / P0.
inline std::vector<ComplexVector> rzf_precoders(std::span<const ComplexVector> channels, double noise, double p0)
{
    if (!(p0 > 0))
        throw std::invalid_argument("rzf_precoders: P0 must be positive");
    return detail::regularized_inverse_directions(channels, noise / p0);
}

namespace detail {

inline PowerProblem make_power_problem(std::span<const ComplexVector> channels, std::span<const ComplexVector> directions,
                                       const InterferenceMask &mask, double noise, double bandwidth,
                                       const PowerConstraintSet &constraints, std::span<const double> demands)
{
    PowerProblem pp;
    pp.channels.assign(channels.begin(), channels.end());
    pp.directions.assign(directions.begin(), directions.end());
    pp.mask = mask;
    pp.noise = noise;
    pp.bandwidth = bandwidth;
    pp.constraints = constraints;
    pp.demands.assign(demands.begin(), demands.end());
    return pp;
}

// Small positive powers strictly inside every constraint.
inline RealVector initial_powers(const PowerProblem &prob)
{
    const std::size_t k_users = prob.users();
    double p0 = 1e-6 * prob.constraints.nominal_beam_power() / static_cast<double>(k_users);
    RealVector p(k_users, p0);
    for (int i = 0; i < 60 && !power_feasible(prob, p); ++i) {
        p0 *= 0.1;
        std::fill(p.begin(), p.end(), p0);
    }
    for (std::size_t k = 0; k < k_users; ++k)
        if (!(prob.demands[k] > 0))
            p[k] = 0.0;
    if (!power_feasible(prob, p))
        std::fill(p.begin(), p.end(), 0.0);
    return p;
}

inline void fill_result(SchemeResult &r, std::span<const ComplexVector> channels,
                        std::span<const ComplexVector> directions, std::span<const double> powers,
                        const InterferenceMask &mask, double noise, double bandwidth, const PowerConstraintSet &cs,
                        std::span<const double> demands, const ObjectiveSpec &spec)
{
    r.directions.assign(directions.begin(), directions.end());
    r.powers.assign(powers.begin(), powers.end());
    r.precoders.clear();
    for (std::size_t k = 0; k < powers.size(); ++k)
        r.precoders.push_back(scaled(directions[k], std::sqrt(powers[k])));
    const LinkGains link = LinkGains::build(channels, directions, mask, noise, bandwidth);
    r.rates = link.rates(powers);
    r.beam_powers = beam_powers(cs.layout, r.precoders);
    r.objective_value = evaluate_objective(spec, r.rates, demands);
}

} // namespace detail

/// Locally optimal powers on fixed directions, from a small feasible start.
inline RealVector waterfill_baseline_powers(std::span<const ComplexVector> directions,
                                            std::span<const ComplexVector> channels,
                                            const PowerConstraintSet &constraints, std::span<const double> demands,
                                            const ObjectiveSpec &spec, double noise, double bandwidth,
                                            const PowerOptions &opts = {})
{
    const PowerProblem pp = detail::make_power_problem(channels, directions, InterferenceMask::linear(channels.size()),
                                                       noise, bandwidth, constraints, demands);
    const RealVector p0 = detail::initial_powers(pp);
    return optimize_power(spec, pp, p0, opts).powers;
}

/// Fixed-direction baseline (ZF or R-ZF) with optimized powers.
inline SchemeResult linear_baseline(const std::string &name, std::span<const ComplexVector> directions,
                                    std::span<const ComplexVector> channels, std::span<const double> demands,
                                    const PowerConstraintSet &constraints, double noise, double bandwidth,
                                    const GenericOptions &opts = {})
{
    SchemeResult r;
    r.scheme = name;
    const RealVector p = waterfill_baseline_powers(directions, channels, constraints, demands, opts.objective, noise,
                                                   bandwidth, opts.power);
    detail::fill_result(r, channels, directions, p, InterferenceMask::linear(channels.size()), noise, bandwidth,
                        constraints, demands, opts.objective);
    r.converged = true;
    r.trace = {r.objective_value};
    return r;
}

// ------------------------------------------------------------------------
// Alternating precoder / power optimization
// ------------------------------------------------------------------------

namespace detail {

struct AlternatingState {
    std::vector<ComplexVector> directions;
    RealVector powers;
    double cost = 0.0;
    std::optional<DualState> dual;
};

// Step 3 then step 4 of one outer iteration. Returns nullopt when no valid update exists.
inline std::optional<AlternatingState> alternating_step(const AlternatingState &cur,
                                                        std::span<const ComplexVector> channels,
                                                        std::span<const double> demands, const InterferenceMask &mask,
                                                        double noise, double bandwidth,
                                                        const PowerConstraintSet &constraints,
                                                        const GenericOptions &opts)
{
    const std::size_t k_users = channels.size();
    const LinkGains link = LinkGains::build(channels, cur.directions, mask, noise, bandwidth);
    const RealVector r = link.rates(cur.powers);

    std::vector<ComplexVector> t;
    for (std::size_t k = 0; k < k_users; ++k)
        t.push_back(scaled(cur.directions[k], std::sqrt(cur.powers[k])));

    PowerMinProblem pm;
    pm.channels.assign(channels.begin(), channels.end());
    pm.rate_targets = r;
    pm.bandwidth = bandwidth;
    pm.noise = noise;
    pm.constraints = constraints;
    pm.reference_powers = beam_powers(constraints.layout, t);
    pm.mask = mask;
    PowerMinOptions po;
    po.gap_tolerance = opts.dual_gap;
    po.max_iterations = opts.dual_iterations;
    po.warm_start = cur.dual;

    PrecodeSolution sol;
    try {
        sol = solve_power_min(pm, po);
    } catch (const InfeasibleError &) {
        return std::nullopt;
    } catch (const SingularMatrixError &) {
        return std::nullopt;
    }
    // An inexact solve may leave gamma marginally above 1; scaling all powers by
    // 1/gamma restores every beam power to at most its incoming value.
    const double back = sol.gamma > 1.0 ? 1.0 / sol.gamma : 1.0;

    PowerProblem pp = make_power_problem(channels, sol.directions, mask, noise, bandwidth, constraints, demands);
    // The powers meet the current rates with equality; a relative shrink absorbs rounding at active caps.
    RealVector p0;
    for (double shrink : {0.0, 1e-12, 1e-10, 1e-8, 1e-6}) {
        RealVector p = sol.powers;
        for (auto &v : p)
            v *= back * (1.0 - shrink);
        if (power_feasible(pp, p)) {
            p0 = std::move(p);
            break;
        }
    }
    if (p0.empty())
        return std::nullopt;
    const PowerResult pr = optimize_power(opts.objective, pp, p0, opts.power);

    AlternatingState next;
    next.directions = sol.directions;
    next.powers = pr.powers;
    next.cost = pr.cost;
    next.dual = sol.dual;
    return next;
}

// Increase measured against the magnitude of the run's starting objective, so
// that rounding near a zero cost is not mistaken for a regression.
inline double relative_increase(double prev, double next, double start)
{
    return (next - prev) / std::max({1.0, std::abs(prev), std::abs(start)});
}

// Starting point of the alternation: the better of ZF and R-ZF directions, each
// with locally optimized powers.
inline AlternatingState initial_state(std::span<const ComplexVector> channels, std::span<const double> demands,
                                      const InterferenceMask &mask, double noise, double bandwidth,
                                      const PowerConstraintSet &constraints, const GenericOptions &opts)
{
    std::vector<std::vector<ComplexVector>> candidates;
    candidates.push_back(rzf_precoders(channels, noise, constraints.nominal_beam_power()));
    try {
        candidates.push_back(zf_precoders(channels));
    } catch (const std::exception &) {
        // More users than ports, or collinear channels: R-ZF only.
    }
    AlternatingState best;
    bool have = false;
    for (auto &dirs : candidates) {
        const PowerProblem pp = make_power_problem(channels, dirs, mask, noise, bandwidth, constraints, demands);
        const PowerResult pr = optimize_power(opts.objective, pp, initial_powers(pp), opts.power);
        if (!have || pr.cost < best.cost) {
            best.directions = std::move(dirs);
            best.powers = pr.powers;
            best.cost = pr.cost;
            have = true;
        }
    }
    return best;
}

inline SchemeResult alternating_miso(const std::string &name, std::span<const ComplexVector> channels,
                                     std::span<const double> demands, const PowerConstraintSet &constraints,
                                     const InterferenceMask &mask, double noise, double bandwidth,
                                     const GenericOptions &opts)
{
    const std::size_t k_users = channels.size();
    SchemeResult res;
    res.scheme = name;

    if (opts.feasibility_fast_path) {
        const FeasibilityResult fr = check_feasibility(channels, demands, bandwidth, noise, constraints, &mask);
        if (fr.feasible) {
            fill_result(res, channels, fr.solution->directions, fr.solution->powers, mask, noise, bandwidth,
                        constraints, demands, opts.objective);
            // Rounding can leave a rate a few ulps above its demand.
            for (std::size_t k = 0; k < k_users; ++k)
                res.rates[k] = std::min(res.rates[k], demands[k]);
            res.objective_value = evaluate_objective(opts.objective, res.rates, demands);
            res.trace = {res.objective_value};
            res.converged = true;
            res.demand_met = true;
            return res;
        }
    }

    AlternatingState cur = initial_state(channels, demands, mask, noise, bandwidth, constraints, opts);
    res.trace.push_back(cur.cost);

    int it = 0;
    for (; it < opts.max_outer; ++it) {
        auto next = alternating_step(cur, channels, demands, mask, noise, bandwidth, constraints, opts);
        if (!next) {
            res.converged = true;
            break;
        }
        res.max_raw_increase =
            std::max(res.max_raw_increase, relative_increase(cur.cost, next->cost, res.trace.front()));
        if (next->cost > cur.cost) {
            res.converged = true;
            break;
        }
        const double gain = cur.cost - next->cost;
        cur = std::move(*next);
        res.trace.push_back(cur.cost);
        if (gain <= opts.tolerance * std::abs(res.trace.front() == 0 ? 1.0 : cur.cost)) {
            res.converged = true;
            ++it;
            break;
        }
    }
    res.iterations = it;
    fill_result(res, channels, cur.directions, cur.powers, mask, noise, bandwidth, constraints, demands,
                opts.objective);
    return res;
}

} // namespace detail

/// Alternating precoder/power optimization with linear precoding.
inline SchemeResult generic_miso(std::span<const ComplexVector> channels, std::span<const double> demands,
                                 const PowerConstraintSet &constraints, double noise, double bandwidth,
                                 const GenericOptions &opts = {})
{
    return detail::alternating_miso("miso", channels, demands, constraints, InterferenceMask::linear(channels.size()),
                                    noise, bandwidth, opts);
}

/// Encoding order sorting F_k / log2(1 + ||h_k||^2 / N0W) ascending, ties by index.
inline std::vector<std::size_t> dpc_order(std::span<const ComplexVector> channels, std::span<const double> demands,
                                          double noise = 1.0)
{
    RealVector metric(channels.size());
    for (std::size_t k = 0; k < metric.size(); ++k) {
        const double snr = norm_sq(channels[k]) / noise;
        if (!(snr > 0))
            throw std::invalid_argument("dpc_order: zero channel");
        metric[k] = demands[k] / std::log2(1.0 + snr);
    }
    std::vector<std::size_t> order(metric.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return metric[a] < metric[b]; });
    return order;
}

/// Alternating optimization with dirty-paper coding in the given encoding order.
inline SchemeResult generic_dpc(std::span<const ComplexVector> channels, std::span<const double> demands,
                                const PowerConstraintSet &constraints, double noise, double bandwidth,
                                std::span<const std::size_t> order, const GenericOptions &opts = {})
{
    SchemeResult r = detail::alternating_miso("dpc", channels, demands, constraints,
                                              InterferenceMask::dirty_paper(order), noise, bandwidth, opts);
    r.order.assign(order.begin(), order.end());
    return r;
}

// ------------------------------------------------------------------------
// Max-min fairness
// ------------------------------------------------------------------------

/// Whether every user can be served at gamma * F_k. Convex nonlinear constraints
/// covering all beams are tested exactly; any other nonlinear constraint is
/// tested on the minimum beam-power solution.
inline std::optional<PrecodeSolution> fairness_feasible(std::span<const ComplexVector> channels,
                                                        std::span<const double> demands, double gamma,
                                                        const PowerConstraintSet &constraints, double noise,
                                                        double bandwidth)
{
    RealVector targets(demands.begin(), demands.end());
    for (auto &t : targets)
        t *= gamma;
    const bool exact = constraints.nonlinear.size() == 1 && constraints.nonlinear[0].convex() &&
                       constraints.nonlinear[0].beams.size() == constraints.layout.num_beams();
    if (!exact) {
        FeasibilityResult fr = check_feasibility(channels, targets, bandwidth, noise, constraints);
        if (!fr.feasible)
            return std::nullopt;
        return fr.solution;
    }
    // Linear part first: a violated linear constraint makes the nonlinear search pointless.
    PowerConstraintSet linear_only = constraints;
    linear_only.nonlinear.clear();
    if (!check_feasibility(channels, targets, bandwidth, noise, linear_only).feasible)
        return std::nullopt;
    PowerMinProblem pm;
    pm.channels.assign(channels.begin(), channels.end());
    pm.rate_targets = targets;
    pm.bandwidth = bandwidth;
    pm.noise = noise;
    pm.constraints = linear_only;
    try {
        NonlinearMinResult nr = minimize_nonlinear_power(pm, constraints.nonlinear[0], true);
        if (!nr.decision.value_or(false))
            return std::nullopt;
        return nr.solution;
    } catch (const InfeasibleError &) {
        return std::nullopt;
    }
}

/// Bisection on gamma in [0, 1] for max min_k r_k / F_k.
inline SchemeResult fairness_bisection(std::span<const ComplexVector> channels, std::span<const double> demands,
                                       const PowerConstraintSet &constraints, double noise, double bandwidth,
                                       double epsilon = 1e-3, const ObjectiveSpec &spec = ObjectiveSpec::rate_matching(2))
{
    if (!(epsilon > 0))
        throw std::invalid_argument("fairness_bisection: epsilon must be positive");
    for (const auto &c : constraints.nonlinear)
        if (!c.convex())
            throw std::invalid_argument("fairness_bisection: nonlinear maps must be convex");
    SchemeResult res;
    res.scheme = "fairness";

    auto finish = [&](const PrecodeSolution &sol, double gamma) {
        detail::fill_result(res, channels, sol.directions, sol.powers, InterferenceMask::linear(channels.size()), noise,
                            bandwidth, constraints, demands, spec);
        res.fairness = gamma;
        res.converged = true;
        res.trace = {res.objective_value};
        return res;
    };

    if (auto top = fairness_feasible(channels, demands, 1.0, constraints, noise, bandwidth)) {
        res.demand_met = true;
        return finish(*top, 1.0);
    }
    auto bottom = fairness_feasible(channels, demands, 0.0, constraints, noise, bandwidth);
    if (!bottom)
        throw std::invalid_argument("fairness_bisection: zero rates are infeasible; check the power limits");

    double lo = 0.0;
    double hi = 1.0;
    PrecodeSolution best = *bottom;
    const int steps = static_cast<int>(std::ceil(std::log2(1.0 / epsilon)));
    std::vector<std::pair<double, bool>> probes;
    for (int i = 0; i < steps; ++i) {
        const double mid = 0.5 * (lo + hi);
        auto sol = fairness_feasible(channels, demands, mid, constraints, noise, bandwidth);
        probes.emplace_back(mid, sol.has_value());
        if (sol) {
            lo = mid;
            best = std::move(*sol);
        } else {
            hi = mid;
        }
    }
    for (const auto &[g1, f1] : probes)
        for (const auto &[g2, f2] : probes)
            if (g2 < g1 && f1 && !f2)
                res.fairness_monotone = false;
    res.iterations = steps;
    return finish(best, lo);
}

// ------------------------------------------------------------------------
// Multi-antenna terminals
// ------------------------------------------------------------------------

/// Unit-norm MMSE receive combiner (sum_j H t_j t_j^H H^H + N0W I)^{-1} H t_k,
/// phase-rotated so its largest entry is real and positive.
inline ComplexVector mmse_combiner(const ComplexMatrix &h, std::span<const ComplexVector> precoders, double noise,
                                   std::size_t k)
{
    const std::size_t n = h.rows();
    ComplexMatrix cov = ComplexMatrix::identity(n);
    cov *= cdouble(noise);
    ComplexVector signal;
    for (std::size_t j = 0; j < precoders.size(); ++j) {
        const ComplexVector ht = h * precoders[j];
        add_outer(cov, ht, 1.0);
        if (j == k)
            signal = ht;
    }
    ComplexVector u = hermitian_solve(cov, signal);
    if (norm_sq(u) == 0.0) {
        u.assign(n, cdouble{});
        u[0] = 1.0;
        return u;
    }
    std::size_t big = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (std::abs(u[i]) > std::abs(u[big]))
            big = i;
    const cdouble rot = std::conj(u[big]) / std::abs(u[big]);
    for (auto &v : u)
        v *= rot;
    return normalized(u);
}

/// Dominant eigenvector of H H^H (power iteration), unit norm with a real positive largest entry.
inline ComplexVector dominant_receive_direction(const ComplexMatrix &h)
{
    const std::size_t n = h.rows();
    ComplexMatrix g(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < h.cols(); ++c)
                g(i, j) += h(i, c) * std::conj(h(j, c));
    ComplexVector u(n, cdouble(1.0 / std::sqrt(static_cast<double>(n))));
    for (int it = 0; it < 500; ++it) {
        ComplexVector next = g * u;
        const double nn = norm(next);
        if (nn == 0.0)
            break;
        for (auto &v : next)
            v /= nn;
        double diff = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            diff = std::max(diff, std::abs(next[i] - u[i]));
        u = std::move(next);
        if (diff < 1e-15)
            break;
    }
    std::size_t big = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (std::abs(u[i]) > std::abs(u[big]))
            big = i;
    const cdouble rot = std::conj(u[big]) / std::abs(u[big]);
    for (auto &v : u)
        v *= rot;
    return normalized(u);
}

/// Alternating optimization for multi-antenna terminals: the MISO update runs on
/// the effective channels H_k^H u_k, then each combiner is refreshed by MMSE and
/// kept only if the new rate stays below the demand.
inline SchemeResult generic_mimo(std::span<const ComplexMatrix> channels, std::span<const double> demands,
                                 const PowerConstraintSet &constraints, double noise, double bandwidth,
                                 const GenericOptions &opts = {}, const std::string &name = "mimo")
{
    const std::size_t k_users = channels.size();
    const InterferenceMask mask = InterferenceMask::linear(k_users);
    SchemeResult res;
    res.scheme = name;

    std::vector<ComplexVector> u;
    std::vector<ComplexVector> heff;
    for (const auto &h : channels) {
        u.push_back(dominant_receive_direction(h));
        heff.push_back(effective_channel(u.back(), h));
    }

    if (opts.feasibility_fast_path) {
        const FeasibilityResult fr = check_feasibility(heff, demands, bandwidth, noise, constraints, &mask);
        if (fr.feasible) {
            detail::fill_result(res, heff, fr.solution->directions, fr.solution->powers, mask, noise, bandwidth,
                                constraints, demands, opts.objective);
            for (std::size_t k = 0; k < k_users; ++k)
                res.rates[k] = std::min(res.rates[k], demands[k]);
            res.objective_value = evaluate_objective(opts.objective, res.rates, demands);
            res.combiners = u;
            res.trace = {res.objective_value};
            res.converged = true;
            res.demand_met = true;
            return res;
        }
    }

    detail::AlternatingState cur = detail::initial_state(heff, demands, mask, noise, bandwidth, constraints, opts);
    res.trace.push_back(cur.cost);

    int it = 0;
    for (; it < opts.max_outer; ++it) {
        auto next = detail::alternating_step(cur, heff, demands, mask, noise, bandwidth, constraints, opts);
        if (!next) {
            res.converged = true;
            break;
        }
        // Combiner refresh at the new precoders.
        std::vector<ComplexVector> t;
        for (std::size_t k = 0; k < k_users; ++k)
            t.push_back(scaled(next->directions[k], std::sqrt(next->powers[k])));
        std::vector<ComplexVector> u_next = u;
        std::vector<ComplexVector> heff_next = heff;
        for (std::size_t k = 0; k < k_users; ++k) {
            const ComplexVector cand = mmse_combiner(channels[k], t, noise, k);
            const double r_new = rate(sinr_mimo(cand, channels[k], t, noise, k), bandwidth);
            if (r_new < demands[k]) {
                u_next[k] = cand;
                heff_next[k] = effective_channel(cand, channels[k]);
            }
        }
        next->cost = evaluate_objective(
            opts.objective, LinkGains::build(heff_next, next->directions, mask, noise, bandwidth).rates(next->powers),
            demands);

        res.max_raw_increase =
            std::max(res.max_raw_increase, detail::relative_increase(cur.cost, next->cost, res.trace.front()));
        if (next->cost > cur.cost) {
            res.converged = true;
            break;
        }
        const double gain = cur.cost - next->cost;
        cur = std::move(*next);
        u = std::move(u_next);
        heff = std::move(heff_next);
        res.trace.push_back(cur.cost);
        if (gain <= opts.tolerance * std::abs(cur.cost)) {
            res.converged = true;
            ++it;
            break;
        }
    }
    res.iterations = it;
    detail::fill_result(res, heff, cur.directions, cur.powers, mask, noise, bandwidth, constraints, demands,
                        opts.objective);
    res.combiners = u;
    return res;
}

/// Row with the largest norm; ties resolve to the lower index.
inline std::size_t polarization_selection(const ComplexMatrix &h)
{
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t r = 0; r < h.rows(); ++r) {
        double n = 0.0;
        for (std::size_t c = 0; c < h.cols(); ++c)
            n += std::norm(h(r, c));
        if (n > best_norm) {
            best = r;
            best_norm = n;
        }
    }
    return best;
}

/// MISO channel seen through one receive antenna (conjugated row, so that SINR uses h^H t).
inline ComplexVector row_channel(const ComplexMatrix &h, std::size_t row)
{
    ComplexVector e(h.rows(), cdouble{});
    e.at(row) = 1.0;
    return effective_channel(e, h);
}

/// Feed n keeps polarization n mod 2: column n of the result is column 2n + (n mod 2).
inline ComplexMatrix alternating_polarization_channel(const ComplexMatrix &hbar)
{
    if (hbar.cols() % 2 != 0)
        throw std::invalid_argument("alternating_polarization_channel: expected 2N columns");
    const std::size_t n = hbar.cols() / 2;
    ComplexMatrix out(hbar.rows(), n);
    for (std::size_t r = 0; r < hbar.rows(); ++r)
        for (std::size_t f = 0; f < n; ++f)
            out(r, f) = hbar(r, 2 * f + (f % 2));
    return out;
}

} // namespace mbsat
