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

// Power allocation with fixed precoding directions.
//
// With the directions fixed, both the linear power constraints and the rate
// caps r_k <= F_k are linear inequalities in the power vector p (the cap is
// p_k a_kk <= s_k (N0W + sum_j a_kj p_j) with s_k = 2^(F_k/W) - 1). Only the
// nonlinear beam-power constraints are curved. The optimizer is a scaled
// projected gradient method: the search direction is projected onto the cone
// of the nearly active constraints, the step is capped by a ratio test on the
// linear rows, and curved constraints and sufficient decrease are enforced by
// backtracking.

#pragma once

#include "mbsat/constraints.hpp"
#include "mbsat/numerics.hpp"
#include "mbsat/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace mbsat {

/// Fixed-direction power allocation problem.
struct PowerProblem {
    std::vector<ComplexVector> channels;   // effective MISO channel per user
    std::vector<ComplexVector> directions; // unit-norm w_k
    InterferenceMask mask = InterferenceMask::linear(0);
    double noise = 1.0;     // N0 W
    double bandwidth = 1.0; // W
    PowerConstraintSet constraints;
    RealVector demands; // F_k, bit/s

    std::size_t users() const { return channels.size(); }
};

struct PowerOptions {
    int max_iterations = 5000;
    double stationarity_tolerance = 1e-6;
    double armijo = 1e-4;
    double min_step = 1e-12;
};

struct PowerResult {
    RealVector powers;
    double cost = 0.0;
    int iterations = 0;
    bool converged = false; // stationarity reached (as opposed to cap or stall)
    RealVector cost_trace;  // cost after every accepted step, starting with the initial cost
};

namespace detail {

// Linear inequalities rows * p <= rhs in power space.
struct LinearRows {
    std::vector<RealVector> rows;
    RealVector rhs;
};

struct PowerModel {
    const PowerProblem *prob = nullptr;
    LinkGains link;
    LinearRows lin;
    std::vector<RealVector> beam_share; // beam_share[b][k] = sum_{port in b} |w_k[port]|^2
    double power_scale = 1.0;

    explicit PowerModel(const PowerProblem &p)
        : prob(&p), link(LinkGains::build(p.channels, p.directions, p.mask, p.noise, p.bandwidth))
    {
        const std::size_t k_users = p.users();
        const auto &cs = p.constraints;
        for (const auto &c : cs.linear) {
            RealVector row(k_users);
            for (std::size_t k = 0; k < k_users; ++k)
                row[k] = quad_form(c.shaping, p.directions[k]);
            lin.rows.push_back(std::move(row));
            lin.rhs.push_back(c.limit);
        }
        for (std::size_t k = 0; k < k_users; ++k) {
            const double s = sinr_target(p.demands[k], p.bandwidth);
            RealVector row(k_users, 0.0);
            row[k] = link.gain(k, k);
            for (std::size_t j = 0; j < k_users; ++j)
                if (p.mask.interferes(k, j))
                    row[j] -= s * link.gain(k, j);
            lin.rows.push_back(std::move(row));
            lin.rhs.push_back(s * p.noise);
        }
        beam_share.assign(cs.layout.num_beams(), RealVector(k_users, 0.0));
        for (std::size_t b = 0; b < beam_share.size(); ++b)
            for (std::size_t k = 0; k < k_users; ++k)
                for (std::size_t port : cs.layout.beam_ports[b])
                    beam_share[b][k] += std::norm(p.directions[k][port]);
        power_scale = cs.nominal_beam_power();
    }

    RealVector beam_powers(std::span<const double> p) const
    {
        RealVector bp(beam_share.size(), 0.0);
        for (std::size_t b = 0; b < bp.size(); ++b)
            for (std::size_t k = 0; k < p.size(); ++k)
                bp[b] += beam_share[b][k] * p[k];
        return bp;
    }

    double cost(const ObjectiveSpec &spec, std::span<const double> p) const
    {
        return evaluate_objective(spec, link.rates(p), prob->demands);
    }

    // Slack of each linear row, scaled by the row's natural magnitude.
    double row_scale(std::size_t i, std::span<const double> p) const
    {
        double s = std::abs(lin.rhs[i]);
        for (std::size_t k = 0; k < p.size(); ++k)
            s += std::abs(lin.rows[i][k] * p[k]);
        return s;
    }

    bool feasible(std::span<const double> p, double tol = 1e-12) const
    {
        for (double v : p)
            if (v < 0)
                return false;
        for (std::size_t i = 0; i < lin.rows.size(); ++i) {
            double v = 0.0;
            for (std::size_t k = 0; k < p.size(); ++k)
                v += lin.rows[i][k] * p[k];
            if (v > lin.rhs[i] + tol * row_scale(i, p))
                return false;
        }
        const RealVector bp = beam_powers(p);
        for (const auto &c : prob->constraints.nonlinear)
            if (c.evaluate(bp) > c.limit * (1.0 + tol))
                return false;
        return true;
    }

    // Gradient of sum_b g_b(P_b) with respect to p.
    RealVector nonlinear_gradient(const NonlinearConstraint &c, std::span<const double> bp) const
    {
        RealVector g(prob->users(), 0.0);
        for (std::size_t i = 0; i < c.beams.size(); ++i) {
            const std::size_t b = c.beams[i];
            double d = c.maps[i].derivative(bp[b]);
            if (!std::isfinite(d))
                d = c.maps[i].derivative(1e-12 * power_scale);
            for (std::size_t k = 0; k < g.size(); ++k)
                g[k] += d * beam_share[b][k];
        }
        return g;
    }
};

// Solves min g.d + d^T H d / 2 subject to a_i . d <= 0 for the given rows, with
// H positive definite and supplied through its Cholesky factor. The minimizer is
// d = -H^{-1}(g + sum_i nu_i a_i), nu >= 0; nu is found by dual coordinate ascent.
inline RealVector constrained_newton_direction(const Cholesky &hess, std::span<const double> grad,
                                               std::span<const RealVector> active)
{
    const std::size_t n = grad.size();
    auto solve = [&](std::span<const double> v) {
        ComplexVector b(v.begin(), v.end());
        const ComplexVector x = hess.solve(b);
        RealVector out(n);
        for (std::size_t k = 0; k < n; ++k)
            out[k] = x[k].real();
        return out;
    };
    RealVector d = solve(grad);
    for (auto &v : d)
        v = -v;
    if (active.empty())
        return d;

    const std::size_t m = active.size();
    std::vector<RealVector> z; // H^{-1} a_i
    RealVector curv(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        z.push_back(solve(active[i]));
        for (std::size_t k = 0; k < n; ++k)
            curv[i] += active[i][k] * z[i][k];
    }
    RealVector nu(m, 0.0);
    for (int sweep = 0; sweep < 1000; ++sweep) {
        double worst = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            if (!(curv[i] > 0))
                continue;
            double ad = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                ad += active[i][k] * d[k];
            const double next = std::max(0.0, nu[i] + ad / curv[i]);
            const double delta = next - nu[i];
            if (delta != 0.0) {
                for (std::size_t k = 0; k < n; ++k)
                    d[k] -= delta * z[i][k];
                nu[i] = next;
                worst = std::max(worst, std::abs(delta) * std::sqrt(curv[i]));
            }
        }
        double dn = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            dn += d[k] * d[k];
        if (worst <= 1e-13 * (std::sqrt(dn) + 1e-300) || worst == 0.0)
            break;
    }
    return d;
}

// Symmetric finite-difference Hessian of the cost with respect to the powers.
inline RealMatrix cost_hessian(const ObjectiveSpec &spec, const PowerModel &model, std::span<const double> p,
                               double floor_power)
{
    const std::size_t n = p.size();
    RealMatrix h(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        const double step = 1e-5 * (p[j] + floor_power);
        RealVector up(p.begin(), p.end());
        RealVector down(p.begin(), p.end());
        up[j] += step;
        down[j] = std::max(0.0, down[j] - step);
        const double span = up[j] - down[j];
        const RealVector gu = objective_gradient(spec, up, model.link, model.prob->demands);
        const RealVector gd = objective_gradient(spec, down, model.link, model.prob->demands);
        for (std::size_t i = 0; i < n; ++i)
            h(i, j) = (gu[i] - gd[i]) / span;
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double avg = 0.5 * (h(i, j) + h(j, i));
            h(i, j) = avg;
            h(j, i) = avg;
        }
    return h;
}

// Cholesky factor of H + tau diag, with the smallest tau from a geometric
// schedule that makes the matrix positive definite.
inline Cholesky regularized_factor(const RealMatrix &h, std::span<const double> diag_scale, double damping = 0.0)
{
    const std::size_t n = h.rows();
    double top = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        top = std::max(top, std::abs(h(i, i)) / diag_scale[i]);
    if (!(top > 0) || !std::isfinite(top))
        top = 1.0;
    for (double tau = damping * top;; tau = tau == 0.0 ? 1e-10 * top : tau * 10.0) {
        ComplexMatrix m(n, n);
        bool finite = true;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                m(i, j) = h(i, j);
                finite = finite && std::isfinite(h(i, j));
            }
        if (!finite) {
            m = ComplexMatrix(n, n);
            tau = std::max(tau, top);
        }
        for (std::size_t i = 0; i < n; ++i)
            m(i, i) += tau * diag_scale[i];
        try {
            return Cholesky(m);
        } catch (const SingularMatrixError &) {
        }
        if (tau > 1e30 * top)
            throw SingularMatrixError("optimize_power: cannot regularize the Hessian");
    }
}

} // namespace detail

/// True when p satisfies the power constraints and the rate caps.
inline bool power_feasible(const PowerProblem &prob, std::span<const double> p, double tol = 1e-12)
{
    return detail::PowerModel(prob).feasible(p, tol);
}

/// Moves from the feasible point `from` towards `to` as far as the constraints
/// allow: halving from s = 1 to the first feasible point, then bisection between
/// that point and the last infeasible one.
inline RealVector project_feasible(const PowerProblem &prob, std::span<const double> from, std::span<const double> to)
{
    const detail::PowerModel model(prob);
    auto at = [&](double s) {
        RealVector p(from.size());
        for (std::size_t k = 0; k < p.size(); ++k)
            p[k] = std::max(0.0, from[k] + s * (to[k] - from[k]));
        return p;
    };
    if (model.feasible(to))
        return RealVector(to.begin(), to.end());
    double hi = 1.0;
    double lo = 0.5;
    while (lo > 1e-30 && !model.feasible(at(lo))) {
        hi = lo;
        lo *= 0.5;
    }
    if (lo <= 1e-30)
        return RealVector(from.begin(), from.end());
    for (int i = 0; i < 60 && hi - lo > 1e-15 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (model.feasible(at(mid)) ? lo : hi) = mid;
    }
    return at(lo);
}

/// Locally minimizes the cost over the powers by projected Newton steps: the
/// direction solves the quadratic model over the cone of nearly active
/// constraints, the step is limited by a ratio test on the linear rows and then
/// backtracked for the curved constraints and sufficient decrease. The result is
/// never worse than p_init.
inline PowerResult optimize_power(const ObjectiveSpec &spec, const PowerProblem &input, std::span<const double> p_init,
                                  const PowerOptions &opts = {})
{
    PowerProblem prob = input;
    const std::size_t k_users = prob.users();
    if (prob.mask.users() != k_users)
        prob.mask = InterferenceMask::linear(k_users);
    if (p_init.size() != k_users || prob.directions.size() != k_users || prob.demands.size() != k_users)
        throw std::invalid_argument("optimize_power: dimension mismatch");
    const detail::PowerModel model(prob);
    if (!model.feasible(p_init, 1e-9))
        throw std::invalid_argument("optimize_power: initial powers violate the constraints");

    RealVector p(p_init.begin(), p_init.end());
    for (auto &v : p)
        v = std::max(v, 0.0);
    PowerResult res;
    double cost = model.cost(spec, p);
    res.cost_trace.push_back(cost);

    const double floor_power = 1e-9 * model.power_scale;
    const std::size_t n_lin = model.lin.rows.size();
    int stall = 0;

    for (int it = 0; it < opts.max_iterations; ++it) {
        res.iterations = it;
        const RealVector grad = objective_gradient(spec, p, model.link, prob.demands);

        // Nearly active constraints.
        std::vector<RealVector> active;
        for (std::size_t i = 0; i < n_lin; ++i) {
            double v = 0.0;
            for (std::size_t k = 0; k < k_users; ++k)
                v += model.lin.rows[i][k] * p[k];
            if (model.lin.rhs[i] - v <= 1e-9 * model.row_scale(i, p))
                active.push_back(model.lin.rows[i]);
        }
        for (std::size_t k = 0; k < k_users; ++k)
            if (p[k] <= 0.0) {
                RealVector row(k_users, 0.0);
                row[k] = -1.0;
                active.push_back(std::move(row));
            }
        const RealVector bp = model.beam_powers(p);
        for (const auto &c : prob.constraints.nonlinear)
            if (c.evaluate(bp) >= c.limit * (1.0 - 1e-6))
                active.push_back(model.nonlinear_gradient(c, bp));

        // Work in the scaled variables x_k = p_k / sigma_k, which keeps the metric well conditioned.
        RealVector sigma(k_users);
        for (std::size_t k = 0; k < k_users; ++k)
            sigma[k] = p[k] + floor_power;
        RealVector gs(k_users);
        for (std::size_t k = 0; k < k_users; ++k)
            gs[k] = sigma[k] * grad[k];
        std::vector<RealVector> active_s;
        for (const auto &row : active) {
            RealVector r(k_users);
            for (std::size_t k = 0; k < k_users; ++k)
                r[k] = sigma[k] * row[k];
            active_s.push_back(std::move(r));
        }
        const RealVector unit_diag(k_users, 1.0);

        // Candidate metrics: the regularized Hessian with increasing damping, which
        // shortens the step towards the gradient, and a scaled identity.
        std::vector<RealVector> directions;
        try {
            RealMatrix hs = detail::cost_hessian(spec, model, p, floor_power);
            for (std::size_t i = 0; i < k_users; ++i)
                for (std::size_t j = 0; j < k_users; ++j)
                    hs(i, j) *= sigma[i] * sigma[j];
            for (double damping : {0.0, 1e-2, 1e-1, 1.0, 10.0})
                directions.push_back(detail::constrained_newton_direction(
                    detail::regularized_factor(hs, unit_diag, damping), gs, active_s));
        } catch (const SingularMatrixError &) {
        }
        {
            double gscale = 0.0;
            for (double v : gs)
                gscale = std::max(gscale, std::abs(v));
            ComplexMatrix dm = ComplexMatrix::identity(k_users);
            dm *= cdouble(gscale > 0 ? gscale : 1.0);
            directions.push_back(detail::constrained_newton_direction(Cholesky(dm), gs, active_s));
        }
        for (auto &d : directions)
            for (std::size_t k = 0; k < k_users; ++k)
                d[k] *= sigma[k];

        bool stationary = false;
        RealVector best_p;
        double best_cost = cost;
        for (std::size_t attempt = 0; attempt < directions.size(); ++attempt) {
            const RealVector &d = directions[attempt];
            double slope = 0.0;
            for (std::size_t k = 0; k < k_users; ++k)
                slope += grad[k] * d[k];
            // Predicted decrease of the quadratic model, relative to the cost.
            if (attempt == 0 && -slope <= opts.stationarity_tolerance * opts.stationarity_tolerance *
                                              (1.0 + std::abs(cost))) {
                stationary = true;
                break;
            }
            if (!(slope < 0))
                continue;

            // Ratio test over the inactive linear rows; nonnegativity is handled by
            // clamping (a bent search path) and active rows by the feasibility check.
            double s_max = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n_lin; ++i) {
                double ad = 0.0;
                double v = 0.0;
                for (std::size_t k = 0; k < k_users; ++k) {
                    ad += model.lin.rows[i][k] * d[k];
                    v += model.lin.rows[i][k] * p[k];
                }
                const double slack = model.lin.rhs[i] - v;
                if (ad > 0 && slack > 1e-9 * model.row_scale(i, p))
                    s_max = std::min(s_max, slack / ad);
            }
            double unit = 0.0;
            for (std::size_t k = 0; k < k_users; ++k)
                unit = std::max(unit, std::abs(d[k]) / (p[k] + floor_power));

            for (double s = std::min(1.0, s_max); s > 0 && s * unit >= opts.min_step; s *= 0.5) {
                RealVector trial(k_users);
                for (std::size_t k = 0; k < k_users; ++k)
                    trial[k] = std::max(0.0, p[k] + s * d[k]);
                if (!model.feasible(trial))
                    continue;
                const double c_new = model.cost(spec, trial);
                if (c_new <= cost + opts.armijo * s * slope) {
                    if (c_new < best_cost) {
                        best_cost = c_new;
                        best_p = std::move(trial);
                    }
                    break;
                }
            }
        }
        const bool accepted = !best_p.empty();
        if (accepted && !stationary) {
            const double gain = cost - best_cost;
            p = std::move(best_p);
            cost = best_cost;
            res.cost_trace.push_back(cost);
            stall = gain <= 1e-14 * std::abs(cost) ? stall + 1 : 0;
        }
        if (stationary) {
            res.converged = true;
            break;
        }
        if (!accepted || stall >= 20)
            break;
    }
    res.powers = std::move(p);
    res.cost = cost;
    return res;
}

} // namespace mbsat
