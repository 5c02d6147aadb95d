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

// Minimum beam-power precoding under rate targets, solved through its
// Lagrangian dual: for fixed multipliers the weighted power-minimization
// subproblem is solved exactly by the virtual-uplink fixed point, and the
// multipliers are moved by projected (sub)gradient ascent.
//
//   min_{t, gamma} gamma
//   s.t. SINR_k(t) >= 2^(R_k/W) - 1                  for every user k
//        sum_k t_k^H Q_l t_k <= q_l                   for every linear constraint l
//        sum_k t_k^H D_j t_k <= gamma * Pref_j        for every beam j

#pragma once

#include "mbsat/constraints.hpp"
#include "mbsat/numerics.hpp"
#include "mbsat/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace mbsat {

/// Floor applied to reference beam powers so that constraint (gamma * Pref_j) stays well posed.
inline constexpr double kMinReferencePower = 1e-9;

/// sum_j mu_j D_j + sum_l lambda_l Q_l
inline ComplexMatrix weighted_shaping(const BeamLayout &layout, std::span<const double> mu,
                                      std::span<const LinearConstraint> linear, std::span<const double> lambda)
{
    ComplexMatrix m(layout.num_ports, layout.num_ports);
    for (std::size_t j = 0; j < layout.num_beams(); ++j)
        for (std::size_t p : layout.beam_ports[j])
            m(p, p) += mu[j];
    for (std::size_t l = 0; l < linear.size(); ++l)
        if (lambda[l] != 0.0)
            m += linear[l].shaping * cdouble(lambda[l]);
    return m;
}

// ------------------------------------------------------------------------
// Virtual uplink powers
// ------------------------------------------------------------------------

struct FixedPointOptions {
    double tolerance = 1e-12;
    int max_iterations = 100000;
    /// Starting point; empty means alpha = 0.
    RealVector initial;
    /// Called with every iterate (after the update), e.g. to check monotonicity.
    std::function<void(std::span<const double>)> on_iterate;
};

namespace detail {

// base + sum over users i with mask.interferes(i, k) of alpha_i h_i h_i^H. With a
// linear mask this is the interference covariance of the dual uplink for user k.
inline ComplexMatrix uplink_covariance(const ComplexMatrix &base, std::span<const ComplexVector> h,
                                       std::span<const double> alpha, const InterferenceMask &mask, std::size_t k)
{
    ComplexMatrix m = base;
    for (std::size_t i = 0; i < h.size(); ++i)
        if (i != k && alpha[i] > 0.0 && mask.interferes(i, k))
            add_outer(m, h[i], alpha[i]);
    return m;
}

} // namespace detail

/// Fixed point of alpha_k = [(1 + 1/s_k) h_k^H M_k(alpha)^{-1} h_k]^{-1}, where
/// M_k = base + alpha_k h_k h_k^H + sum of alpha_i h_i h_i^H over users i that k
/// interferes with. The update is evaluated in the equivalent form
/// alpha_k = s_k / (h_k^H N_k^{-1} h_k) with N_k = M_k - alpha_k h_k h_k^H, which
/// shares the fixed point and converges faster at high SINR targets.
inline RealVector fixed_point_alpha(std::span<const ComplexVector> h, std::span<const double> sinr_targets,
                                    const ComplexMatrix &base, const InterferenceMask &mask,
                                    const FixedPointOptions &opts = {})
{
    const std::size_t k_users = h.size();
    if (sinr_targets.size() != k_users || mask.users() != k_users)
        throw std::invalid_argument("fixed_point_alpha: dimension mismatch");

    RealVector alpha = opts.initial.empty() ? RealVector(k_users, 0.0) : opts.initial;
    if (alpha.size() != k_users)
        throw std::invalid_argument("fixed_point_alpha: initial point has wrong size");

    // Scale of the first iterate from zero, used to detect divergence.
    const Cholesky base_factor(base);
    double ref = 0.0;
    for (std::size_t k = 0; k < k_users; ++k)
        if (sinr_targets[k] > 0)
            ref = std::max(ref, sinr_targets[k] / base_factor.inverse_quad(h[k]));
    if (ref == 0.0)
        return RealVector(k_users, 0.0);
    for (std::size_t k = 0; k < k_users; ++k)
        if (!(sinr_targets[k] > 0))
            alpha[k] = 0.0;

    RealVector next(k_users, 0.0);
    for (int it = 0; it < opts.max_iterations; ++it) {
        double change = 0.0;
        for (std::size_t k = 0; k < k_users; ++k) {
            if (!(sinr_targets[k] > 0)) {
                next[k] = 0.0;
                continue;
            }
            const Cholesky nk(detail::uplink_covariance(base, h, alpha, mask, k));
            next[k] = sinr_targets[k] / nk.inverse_quad(h[k]);
            change = std::max(change, std::abs(next[k] - alpha[k]) / next[k]);
        }
        alpha.swap(next);
        if (opts.on_iterate)
            opts.on_iterate(alpha);
        const double top = *std::max_element(alpha.begin(), alpha.end());
        if (!std::isfinite(top) || top > 1e12 * ref)
            throw InfeasibleError("fixed_point_alpha: virtual uplink powers diverge; rate targets infeasible");
        if (change < opts.tolerance)
            return alpha;
    }
    return alpha;
}

/// Unnormalized downlink direction for user k: M_k(alpha)^{-1} h_k.
inline ComplexVector precoder_direction(std::size_t k, std::span<const ComplexVector> h, std::span<const double> alpha,
                                        const ComplexMatrix &base, const InterferenceMask &mask)
{
    ComplexMatrix m = detail::uplink_covariance(base, h, alpha, mask, k);
    add_outer(m, h[k], alpha[k]);
    return hermitian_solve(m, h[k]);
}

inline std::vector<ComplexVector> precoder_directions(std::span<const ComplexVector> h, std::span<const double> alpha,
                                                      const ComplexMatrix &base, const InterferenceMask &mask)
{
    std::vector<ComplexVector> dirs;
    dirs.reserve(h.size());
    for (std::size_t k = 0; k < h.size(); ++k)
        dirs.push_back(precoder_direction(k, h, alpha, base, mask));
    return dirs;
}

/// Powers delta that make the directions meet every SINR target with equality:
/// G delta = 1 N0W with G_kk = |d_k^H h_k|^2 / s_k and G_kj = -|d_j^H h_k|^2 for
/// interfering j. Users with a zero target get zero power.
inline RealVector downlink_power(std::span<const ComplexVector> directions, std::span<const ComplexVector> h,
                                 std::span<const double> sinr_targets, double noise, const InterferenceMask &mask)
{
    const std::size_t k_users = h.size();
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < k_users; ++k)
        if (sinr_targets[k] > 0)
            active.push_back(k);
    RealVector delta(k_users, 0.0);
    if (active.empty())
        return delta;

    const std::size_t n = active.size();
    RealMatrix g(n, n);
    for (std::size_t a = 0; a < n; ++a) {
        const std::size_t k = active[a];
        for (std::size_t b = 0; b < n; ++b) {
            const std::size_t j = active[b];
            if (j == k)
                g(a, b) = std::norm(inner(directions[k], h[k])) / sinr_targets[k];
            else if (mask.interferes(k, j))
                g(a, b) = -std::norm(inner(directions[j], h[k]));
        }
    }
    const RealVector x = solve_linear_real(std::move(g), RealVector(n, noise));
    for (std::size_t a = 0; a < n; ++a) {
        if (!(x[a] >= 0) || !std::isfinite(x[a]))
            throw InfeasibleError("downlink_power: negative power; targets infeasible for these directions");
        delta[active[a]] = x[a];
    }
    return delta;
}

// ------------------------------------------------------------------------
// Dual ascent
// ------------------------------------------------------------------------

struct DualState {
    RealVector alpha;  // virtual uplink powers
    RealVector lambda; // linear-constraint prices
    RealVector mu;     // per-beam prices
    RealVector eta;    // step sizes for lambda
    RealVector rho;    // step sizes for mu
};

/// Euclidean projection of mu onto {mu >= 0 : sum_j mu_j P_j <= sum_j P_j}.
inline RealVector project_mu_budget(RealVector mu, std::span<const double> ref)
{
    double budget = 0.0;
    for (double p : ref)
        budget += p;
    for (auto &m : mu)
        m = std::max(m, 0.0);
    auto weighted = [&](double tau) {
        double acc = 0.0;
        for (std::size_t j = 0; j < mu.size(); ++j)
            acc += std::max(mu[j] - tau * ref[j], 0.0) * ref[j];
        return acc;
    };
    if (weighted(0.0) <= budget)
        return mu;
    // weighted(tau) is continuous and nonincreasing; bisect for weighted(tau) = budget.
    double lo = 0.0;
    double hi = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j)
        hi = std::max(hi, mu[j] / ref[j]);
    for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (weighted(mid) > budget ? lo : hi) = mid;
    }
    for (std::size_t j = 0; j < mu.size(); ++j)
        mu[j] = std::max(mu[j] - hi * ref[j], 0.0);
    return mu;
}

/// One projected subgradient step on the multipliers given the current primal precoders.
/// lambda_l <- max(0, lambda_l + eta_l (sum_k t_k^H Q_l t_k - q_l))
/// mu_j     <- max(0, mu_j + rho_j (P_j - gamma Pref_j)), then projected onto the budget set.
inline DualState dual_ascent_step(DualState state, std::span<const ComplexVector> precoders,
                                  const PowerConstraintSet &constraints, std::span<const double> reference)
{
    const RealVector bp = beam_powers(constraints.layout, precoders);
    double gamma = 0.0;
    for (std::size_t j = 0; j < bp.size(); ++j)
        gamma = std::max(gamma, bp[j] / reference[j]);
    for (std::size_t l = 0; l < constraints.linear.size(); ++l) {
        const auto &c = constraints.linear[l];
        state.lambda[l] = std::max(0.0, state.lambda[l] + state.eta[l] * (c.evaluate(precoders) - c.limit));
    }
    for (std::size_t j = 0; j < bp.size(); ++j)
        state.mu[j] = std::max(0.0, state.mu[j] + state.rho[j] * (bp[j] - gamma * reference[j]));
    state.mu = project_mu_budget(std::move(state.mu), reference);
    return state;
}

// ------------------------------------------------------------------------
// Per-beam power minimization
// ------------------------------------------------------------------------

struct PowerMinProblem {
    std::vector<ComplexVector> channels; // effective MISO channels, one per user
    RealVector rate_targets;             // bit/s
    double bandwidth = 1.0;              // Hz
    double noise = 1.0;                  // N0 W
    PowerConstraintSet constraints;      // linear part is enforced; nonlinear part is ignored here
    RealVector reference_powers;         // Pref_j per beam
    InterferenceMask mask = InterferenceMask::linear(0);

    RealVector sinr_targets() const
    {
        RealVector s(rate_targets.size());
        for (std::size_t k = 0; k < s.size(); ++k)
            s[k] = sinr_target(std::max(rate_targets[k], 0.0), bandwidth);
        return s;
    }
};

struct PowerMinOptions {
    double gap_tolerance = 1e-8;  // relative primal-dual gap declaring convergence
    int max_iterations = 10000;   // dual ascent iterations
    double alpha_tolerance = 1e-12;
    /// If set, stop as soon as gamma <= threshold is certified (primal) or refuted (dual bound).
    std::optional<double> decision_threshold;
    /// Multipliers to start from (mu, lambda); defaults to mu = 1, lambda = 0.
    std::optional<DualState> warm_start;
};

struct PrecodeSolution {
    std::vector<ComplexVector> precoders;  // t_k
    std::vector<ComplexVector> directions; // w_k = t_k / ||t_k|| (zero-power users keep the dual direction)
    RealVector powers;                     // ||t_k||^2
    RealVector beam_powers;                // P_j
    double gamma = 0.0;                    // max_j P_j / Pref_j
    double lower_bound = 0.0;              // dual bound on the optimal gamma
    double dual_objective = 0.0;           // N0W sum alpha - sum lambda q at the best multipliers
    DualState dual;
    int iterations = 0;
    bool converged = false;
    bool approximate = false;
    std::optional<bool> decision; // set when a decision threshold was requested and resolved

    double gap() const { return gamma > 0 ? (gamma - lower_bound) / gamma : 0.0; }
};

namespace detail {

struct DualCandidate {
    RealVector mu, lambda, alpha;
    std::vector<ComplexVector> directions; // unnormalized
    std::vector<ComplexVector> precoders;
    RealVector beam_powers;
    RealVector linear_values;
    double gamma = 0.0;
    double dual = 0.0;  // N0W sum alpha - sum lambda q
    double bound = 0.0; // dual / sum_j mu_j Pref_j
    bool linear_feasible = false;
};

inline DualCandidate evaluate_duals(const PowerMinProblem &prob, std::span<const double> sinr, RealVector mu,
                                    RealVector lambda, const RealVector &alpha_init, double alpha_tol)
{
    const auto &cs = prob.constraints;
    DualCandidate c;
    c.mu = std::move(mu);
    c.lambda = std::move(lambda);
    const ComplexMatrix base = weighted_shaping(cs.layout, c.mu, cs.linear, c.lambda);
    FixedPointOptions fp;
    fp.tolerance = alpha_tol;
    fp.initial = alpha_init;
    c.alpha = fixed_point_alpha(prob.channels, sinr, base, prob.mask, fp);
    c.directions = precoder_directions(prob.channels, c.alpha, base, prob.mask);
    const RealVector delta = downlink_power(c.directions, prob.channels, sinr, prob.noise, prob.mask);
    c.precoders.resize(prob.channels.size());
    for (std::size_t k = 0; k < delta.size(); ++k)
        c.precoders[k] = scaled(c.directions[k], std::sqrt(delta[k]));
    c.beam_powers = beam_powers(cs.layout, c.precoders);
    for (std::size_t j = 0; j < c.beam_powers.size(); ++j)
        c.gamma = std::max(c.gamma, c.beam_powers[j] / prob.reference_powers[j]);
    c.linear_feasible = true;
    double priced = 0.0;
    for (std::size_t l = 0; l < cs.linear.size(); ++l) {
        c.linear_values.push_back(cs.linear[l].evaluate(c.precoders));
        if (c.linear_values.back() > cs.linear[l].limit * (1.0 + 1e-9))
            c.linear_feasible = false;
        priced += c.lambda[l] * cs.linear[l].limit;
    }
    double asum = 0.0;
    for (double a : c.alpha)
        asum += a;
    c.dual = prob.noise * asum - priced;
    double mass = 0.0;
    for (std::size_t j = 0; j < c.mu.size(); ++j)
        mass += c.mu[j] * prob.reference_powers[j];
    c.bound = c.dual / mass;
    return c;
}

inline PrecodeSolution to_solution(const DualCandidate &c)
{
    PrecodeSolution s;
    s.precoders = c.precoders;
    s.beam_powers = c.beam_powers;
    s.gamma = c.gamma;
    for (std::size_t k = 0; k < c.precoders.size(); ++k) {
        const double p = norm_sq(c.precoders[k]);
        s.powers.push_back(p);
        s.directions.push_back(p > 0 ? scaled(c.precoders[k], 1.0 / std::sqrt(p)) : normalized(c.directions[k]));
    }
    return s;
}

} // namespace detail

/// Minimizes the largest normalized beam power subject to the rate targets and the
/// linear power constraints. Rates of the returned precoders equal the targets.
/// Throws InfeasibleError when the targets cannot be met.
inline PrecodeSolution solve_power_min(PowerMinProblem prob, const PowerMinOptions &opts = {})
{
    const std::size_t k_users = prob.channels.size();
    const auto &cs = prob.constraints;
    const std::size_t n_beams = cs.layout.num_beams();
    if (prob.rate_targets.size() != k_users)
        throw std::invalid_argument("solve_power_min: one rate target per user required");
    if (prob.mask.users() != k_users)
        prob.mask = InterferenceMask::linear(k_users);
    if (prob.reference_powers.size() != n_beams)
        throw std::invalid_argument("solve_power_min: one reference power per beam required");
    for (const auto &h : prob.channels)
        if (h.size() != cs.layout.num_ports)
            throw std::invalid_argument("solve_power_min: channel dimension differs from the port count");
    for (auto &p : prob.reference_powers)
        p = std::max(p, kMinReferencePower);

    const RealVector sinr = prob.sinr_targets();
    const std::size_t n_lin = cs.linear.size();

    if (std::all_of(sinr.begin(), sinr.end(), [](double s) { return !(s > 0); })) {
        PrecodeSolution s;
        s.precoders.assign(k_users, ComplexVector(cs.layout.num_ports, cdouble{}));
        for (std::size_t k = 0; k < k_users; ++k)
            s.directions.push_back(normalized(prob.channels[k]));
        s.powers.assign(k_users, 0.0);
        s.beam_powers.assign(n_beams, 0.0);
        s.dual.alpha.assign(k_users, 0.0);
        s.dual.mu.assign(n_beams, 1.0);
        s.dual.lambda.assign(n_lin, 0.0);
        s.converged = true;
        s.decision = opts.decision_threshold ? std::optional<bool>(true) : std::nullopt;
        return s;
    }

    double budget = 0.0;
    for (double p : prob.reference_powers)
        budget += p;

    RealVector mu(n_beams, 1.0);
    RealVector lambda(n_lin, 0.0);
    RealVector alpha;
    if (opts.warm_start) {
        if (opts.warm_start->mu.size() == n_beams)
            mu = opts.warm_start->mu;
        if (opts.warm_start->lambda.size() == n_lin)
            lambda = opts.warm_start->lambda;
        if (opts.warm_start->alpha.size() == k_users)
            alpha = opts.warm_start->alpha;
        double mass = 0.0;
        for (std::size_t j = 0; j < n_beams; ++j)
            mass += mu[j] * prob.reference_powers[j];
        if (!(mass > 0)) {
            mu.assign(n_beams, 1.0);
            lambda.assign(n_lin, 0.0);
            alpha.clear();
        } else {
            for (auto &m : mu)
                m *= budget / mass;
            for (auto &l : lambda)
                l *= budget / mass;
            for (auto &a : alpha)
                a *= budget / mass;
        }
    }

    detail::DualCandidate current =
        detail::evaluate_duals(prob, sinr, std::move(mu), std::move(lambda), alpha, opts.alpha_tolerance);
    const double initial_bound = current.bound;
    std::optional<detail::DualCandidate> best_primal;
    if (current.linear_feasible)
        best_primal = current;
    detail::DualCandidate best_dual = current;

    double step_mu = 1.0;
    double step_lambda = 1.0;
    int flat = 0;
    int it = 0;
    bool converged = false;
    bool stalled = false;
    std::optional<bool> decision;

    auto certified_gap = [&] {
        if (!best_primal)
            return std::numeric_limits<double>::infinity();
        return (best_primal->gamma - best_dual.bound) / best_primal->gamma;
    };

    for (; it < opts.max_iterations; ++it) {
        if (certified_gap() <= opts.gap_tolerance) {
            converged = true;
            break;
        }
        if (opts.decision_threshold) {
            if (best_primal && best_primal->gamma <= *opts.decision_threshold) {
                decision = true;
                break;
            }
            if (best_dual.bound > *opts.decision_threshold * (1.0 + 1e-12)) {
                decision = false;
                break;
            }
        }
        if (!best_primal && best_dual.bound > 1e8 * initial_bound)
            throw InfeasibleError("solve_power_min: dual objective unbounded; linear constraints cannot be met");

        // Multiplicative steps on mu (rho_j = s mu_j / (gamma Pref_j)), additive steps on lambda.
        bool accepted = false;
        for (int ls = 0; ls < 60 && !accepted; ++ls) {
            DualState st;
            st.mu = current.mu;
            st.lambda = current.lambda;
            st.rho.resize(n_beams);
            st.eta.resize(n_lin);
            double mu_mean = 0.0;
            for (std::size_t j = 0; j < n_beams; ++j) {
                st.rho[j] = step_mu * current.mu[j] / (current.gamma * prob.reference_powers[j]);
                mu_mean += current.mu[j] / static_cast<double>(n_beams);
            }
            for (std::size_t l = 0; l < n_lin; ++l)
                st.eta[l] = step_lambda * mu_mean / cs.linear[l].limit;
            st = dual_ascent_step(std::move(st), current.precoders, cs, prob.reference_powers);

            // The dual function is positively homogeneous in (mu, lambda): rescaling onto
            // the budget boundary can only improve it.
            double mass = 0.0;
            double mu_max = 0.0;
            for (std::size_t j = 0; j < n_beams; ++j) {
                mass += st.mu[j] * prob.reference_powers[j];
                mu_max = std::max(mu_max, st.mu[j]);
            }
            if (!(mass > 0)) {
                step_mu *= 0.5;
                step_lambda *= 0.5;
                continue;
            }
            const double scale = budget / mass;
            for (auto &m : st.mu)
                m = std::max(m * scale, 1e-12 * mu_max * scale);
            for (auto &l : st.lambda)
                l *= scale;
            RealVector warm = current.alpha;
            for (auto &a : warm)
                a *= scale;

            try {
                detail::DualCandidate trial =
                    detail::evaluate_duals(prob, sinr, std::move(st.mu), std::move(st.lambda), warm, opts.alpha_tolerance);
                if (trial.bound >= current.bound - 1e-15 * std::abs(current.bound)) {
                    const double gain = (trial.bound - current.bound) / std::abs(current.bound);
                    flat = gain < 1e-13 ? flat + 1 : 0;
                    current = std::move(trial);
                    accepted = true;
                }
            } catch (const SingularMatrixError &) {
            } catch (const InfeasibleError &) {
            }
            if (accepted) {
                step_mu = std::min(1.0, 2.0 * step_mu);
                step_lambda = std::min(1e6, 2.0 * step_lambda);
            } else {
                step_mu *= 0.5;
                step_lambda *= 0.5;
            }
        }
        if (!accepted) {
            stalled = true;
            break;
        }
        if (current.bound > best_dual.bound)
            best_dual = current;
        if (current.linear_feasible && (!best_primal || current.gamma < best_primal->gamma))
            best_primal = current;
        if (flat >= 50) {
            stalled = true;
            break;
        }
    }

    if (!best_primal)
        throw InfeasibleError("solve_power_min: no multiplier produced precoders meeting the linear constraints");

    PrecodeSolution sol = detail::to_solution(*best_primal);
    sol.lower_bound = best_dual.bound;
    sol.dual_objective = best_dual.dual;
    sol.dual.alpha = best_dual.alpha;
    sol.dual.mu = best_dual.mu;
    sol.dual.lambda = best_dual.lambda;
    sol.iterations = it;
    sol.converged = converged || (stalled && sol.gap() <= 1e-6);
    sol.approximate = !sol.converged;
    sol.decision = decision;
    if (opts.decision_threshold && !sol.decision)
        sol.decision = sol.gamma <= *opts.decision_threshold * (1.0 + 1e-9);
    return sol;
}

// ------------------------------------------------------------------------
// Nonlinear power minimization (convex maps), used for exact feasibility tests
// ------------------------------------------------------------------------

namespace detail {

// Convex conjugate of a convex increasing map on z >= 0: sup_z mu z - g(z).
inline double conjugate(const PowerMap &g, double mu, double *argmax = nullptr)
{
    if (mu <= g.derivative(0.0)) {
        if (argmax)
            *argmax = 0.0;
        return 0.0;
    }
    double hi = 1.0;
    while (g.derivative(hi) < mu && hi < 1e300)
        hi *= 2.0;
    double lo = 0.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (g.derivative(mid) < mu ? lo : hi) = mid;
    }
    const double z = 0.5 * (lo + hi);
    if (argmax)
        *argmax = z;
    return mu * z - g(z);
}

} // namespace detail

struct NonlinearMinResult {
    PrecodeSolution solution; // best primal found (rates equal targets)
    double value = 0.0;       // sum_b g_b(P_b) of `solution`
    double lower_bound = 0.0;
    bool converged = false;
    std::optional<bool> decision;
};

/// Minimizes sum_b g_b(P_b) over precoders meeting the rate targets and the linear
/// constraints, for a constraint whose maps are convex and cover every beam.
/// With `decide` set to true the search stops once value <= limit or bound > limit.
inline NonlinearMinResult minimize_nonlinear_power(PowerMinProblem prob, const NonlinearConstraint &target,
                                                   bool decide = false, int max_iterations = 5000)
{
    const auto &cs = prob.constraints;
    const std::size_t n_beams = cs.layout.num_beams();
    const std::size_t n_lin = cs.linear.size();
    if (prob.mask.users() != prob.channels.size())
        prob.mask = InterferenceMask::linear(prob.channels.size());
    if (!target.convex())
        throw std::invalid_argument("minimize_nonlinear_power: maps must be convex");
    std::vector<const PowerMap *> map(n_beams, nullptr);
    for (std::size_t i = 0; i < target.beams.size(); ++i)
        map.at(target.beams[i]) = &target.maps[i];
    for (const auto *m : map)
        if (m == nullptr)
            throw std::invalid_argument("minimize_nonlinear_power: constraint must cover every beam");

    prob.reference_powers.assign(n_beams, 1.0);
    const RealVector sinr = prob.sinr_targets();
    NonlinearMinResult out;
    if (std::all_of(sinr.begin(), sinr.end(), [](double s) { return !(s > 0); })) {
        out.solution = solve_power_min(prob);
        out.converged = true;
        out.decision = true;
        return out;
    }

    auto dual_value = [&](const detail::DualCandidate &c) {
        double v = c.dual;
        for (std::size_t j = 0; j < n_beams; ++j)
            v -= detail::conjugate(*map[j], c.mu[j]);
        return v;
    };
    auto primal_value = [&](const detail::DualCandidate &c) { return target.evaluate(c.beam_powers); };

    detail::DualCandidate current =
        detail::evaluate_duals(prob, sinr, RealVector(n_beams, 1.0), RealVector(n_lin, 0.0), {}, 1e-12);
    double current_dual = dual_value(current);
    std::optional<detail::DualCandidate> best;
    double best_value = std::numeric_limits<double>::infinity();
    double best_bound = current_dual;
    auto consider = [&](const detail::DualCandidate &c) {
        if (c.linear_feasible && primal_value(c) < best_value) {
            best = c;
            best_value = primal_value(c);
        }
    };
    consider(current);

    double step = 1.0;
    double step_lambda = 1.0;
    for (int it = 0; it < max_iterations; ++it) {
        if (best && best_value - best_bound <= 1e-9 * std::max(std::abs(best_value), 1e-300)) {
            out.converged = true;
            break;
        }
        if (decide) {
            if (best && best_value <= target.limit) {
                out.decision = true;
                break;
            }
            if (best_bound > target.limit * (1.0 + 1e-12)) {
                out.decision = false;
                break;
            }
        }
        bool accepted = false;
        for (int ls = 0; ls < 60 && !accepted; ++ls) {
            RealVector mu(n_beams), lambda(n_lin);
            double mu_max = 0.0;
            for (std::size_t j = 0; j < n_beams; ++j) {
                mu[j] = (1.0 - step) * current.mu[j] + step * map[j]->derivative(current.beam_powers[j]);
                mu_max = std::max(mu_max, mu[j]);
            }
            if (!(mu_max > 0)) {
                step *= 0.5;
                continue;
            }
            for (auto &m : mu)
                m = std::max(m, 1e-12 * mu_max);
            double mu_mean = 0.0;
            for (double m : mu)
                mu_mean += m / static_cast<double>(n_beams);
            for (std::size_t l = 0; l < n_lin; ++l)
                lambda[l] = std::max(0.0, current.lambda[l] + step_lambda * mu_mean *
                                                                   (current.linear_values[l] - cs.linear[l].limit) /
                                                                   cs.linear[l].limit);
            try {
                detail::DualCandidate trial =
                    detail::evaluate_duals(prob, sinr, std::move(mu), std::move(lambda), current.alpha, 1e-12);
                const double v = dual_value(trial);
                if (v >= current_dual - 1e-15 * std::abs(current_dual)) {
                    current = std::move(trial);
                    current_dual = v;
                    accepted = true;
                }
            } catch (const SingularMatrixError &) {
            } catch (const InfeasibleError &) {
            }
            if (accepted) {
                step = std::min(1.0, 2.0 * step);
                step_lambda = std::min(1e6, 2.0 * step_lambda);
            } else {
                step *= 0.5;
                step_lambda *= 0.5;
            }
        }
        if (!accepted)
            break;
        best_bound = std::max(best_bound, current_dual);
        consider(current);
    }
    if (!best)
        throw InfeasibleError("minimize_nonlinear_power: linear constraints cannot be met");
    out.solution = detail::to_solution(*best);
    out.value = best_value;
    out.lower_bound = best_bound;
    if (decide && !out.decision)
        out.decision = best_value <= target.limit * (1.0 + 1e-9);
    return out;
}

// ------------------------------------------------------------------------
// Demand feasibility
// ------------------------------------------------------------------------

struct FeasibilityResult {
    bool feasible = false;
    std::optional<PrecodeSolution> solution;
};

/// True when every demand can be met simultaneously: the minimum beam-power
/// problem with R = F has gamma <= 1 against the per-beam caps implied by the
/// linear constraints, and the solution also satisfies the nonlinear constraints.
inline FeasibilityResult check_feasibility(std::span<const ComplexVector> channels, std::span<const double> demands,
                                           double bandwidth, double noise, const PowerConstraintSet &constraints,
                                           const InterferenceMask *mask = nullptr)
{
    FeasibilityResult res;
    const bool any_demand = std::any_of(demands.begin(), demands.end(), [](double f) { return f > 0; });
    for (const auto &c : constraints.linear)
        if (!(c.limit > 0) && any_demand)
            return res;

    PowerMinProblem prob;
    prob.channels.assign(channels.begin(), channels.end());
    prob.rate_targets.assign(demands.begin(), demands.end());
    prob.bandwidth = bandwidth;
    prob.noise = noise;
    prob.constraints = constraints;
    prob.mask = mask ? *mask : InterferenceMask::linear(channels.size());

    const auto caps = constraints.beam_caps();
    const bool all_capped = std::all_of(caps.begin(), caps.end(), [](const auto &c) { return c.has_value(); });
    prob.reference_powers.resize(caps.size());
    for (std::size_t j = 0; j < caps.size(); ++j)
        prob.reference_powers[j] = caps[j].value_or(1.0);

    PowerMinOptions opts;
    if (all_capped)
        opts.decision_threshold = 1.0;
    try {
        PrecodeSolution sol = solve_power_min(prob, opts);
        bool ok = all_capped ? sol.decision.value_or(false) : true;
        if (ok) {
            const RealVector bp = beam_powers(constraints.layout, sol.precoders);
            for (const auto &c : constraints.nonlinear)
                if (c.evaluate(bp) > c.limit * (1.0 + 1e-9))
                    ok = false;
        }
        res.feasible = ok;
        res.solution = std::move(sol);
    } catch (const InfeasibleError &) {
        res.feasible = false;
    }
    return res;
}

} // namespace mbsat
