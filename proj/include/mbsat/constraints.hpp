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

#include "mbsat/numerics.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbsat {

/// Mapping of transmit ports (precoder entries) onto beams. A single-polarized
/// feed is one port; a dual-polarized feed contributes two adjacent ports.
struct BeamLayout {
    std::size_t num_ports = 0;
    std::vector<std::vector<std::size_t>> beam_ports;

    std::size_t num_beams() const { return beam_ports.size(); }

    static BeamLayout single(std::size_t beams)
    {
        BeamLayout l;
        l.num_ports = beams;
        for (std::size_t b = 0; b < beams; ++b)
            l.beam_ports.push_back({b});
        return l;
    }

    /// Two ports per feed: beam n owns ports 2n and 2n + 1.
    static BeamLayout dual(std::size_t beams)
    {
        BeamLayout l;
        l.num_ports = 2 * beams;
        for (std::size_t b = 0; b < beams; ++b)
            l.beam_ports.push_back({2 * b, 2 * b + 1});
        return l;
    }

    /// D_j as a dense diagonal selector over the ports.
    ComplexMatrix selector(std::size_t beam) const
    {
        ComplexMatrix d(num_ports, num_ports);
        for (std::size_t p : beam_ports.at(beam))
            d(p, p) = 1.0;
        return d;
    }
};

/// Output power of each beam, sum_k t_k^H D_j t_k.
inline RealVector beam_powers(const BeamLayout &layout, std::span<const ComplexVector> precoders)
{
    RealVector out(layout.num_beams(), 0.0);
    for (const auto &t : precoders)
        for (std::size_t b = 0; b < out.size(); ++b)
            for (std::size_t p : layout.beam_ports[b])
                out[b] += std::norm(t[p]);
    return out;
}

/// Linear constraint sum_k t_k^H Q t_k <= limit.
struct LinearConstraint {
    ComplexMatrix shaping;
    double limit = 0.0;
    std::string label;

    double evaluate(std::span<const ComplexVector> precoders) const
    {
        double acc = 0.0;
        for (const auto &t : precoders)
            acc += quad_form(shaping, t);
        return acc;
    }

    bool is_diagonal() const
    {
        for (std::size_t i = 0; i < shaping.rows(); ++i)
            for (std::size_t j = 0; j < shaping.cols(); ++j)
                if (i != j && shaping(i, j) != cdouble{})
                    return false;
        return true;
    }
};

/// Continuous, strictly increasing map from beam output power to the
/// constrained quantity (e.g. DC power drawn by the amplifier), with f(0) = 0.
struct PowerMap {
    std::string name;
    std::function<double(double)> value;
    std::function<double(double)> derivative;
    bool convex = false;

    double operator()(double z) const { return value(z); }

    /// (z / scale)^2
    static PowerMap quadratic(double scale = 1.0)
    {
        if (!(scale > 0))
            throw std::invalid_argument("PowerMap::quadratic: scale must be positive");
        return {"quadratic",
                [scale](double z) { return (z / scale) * (z / scale); },
                [scale](double z) { return 2.0 * z / (scale * scale); },
                true};
    }

    /// sqrt(scale * z)
    static PowerMap square_root(double scale = 1.0)
    {
        if (!(scale > 0))
            throw std::invalid_argument("PowerMap::square_root: scale must be positive");
        return {"sqrt",
                [scale](double z) { return std::sqrt(scale * std::max(z, 0.0)); },
                [scale](double z) {
                    return z > 0 ? 0.5 * std::sqrt(scale / z) : std::numeric_limits<double>::infinity();
                },
                false};
    }

    static PowerMap identity()
    {
        return {"linear", [](double z) { return z; }, [](double) { return 1.0; }, true};
    }
};

/// Nonlinear constraint sum_{b in beams} map_b(P_b) <= limit.
struct NonlinearConstraint {
    std::vector<std::size_t> beams;
    std::vector<PowerMap> maps; // one per entry of `beams`
    double limit = 0.0;
    std::string label;

    double evaluate(std::span<const double> beam_power) const
    {
        double acc = 0.0;
        for (std::size_t i = 0; i < beams.size(); ++i)
            acc += maps[i](beam_power[beams[i]]);
        return acc;
    }

    bool convex() const
    {
        for (const auto &m : maps)
            if (!m.convex)
                return false;
        return true;
    }
};

/// Linear shaping constraints together with nonlinear per-beam constraints.
struct PowerConstraintSet {
    BeamLayout layout;
    std::vector<LinearConstraint> linear;
    std::vector<NonlinearConstraint> nonlinear;

    static PowerConstraintSet per_beam(const BeamLayout &layout, double limit)
    {
        PowerConstraintSet s;
        s.layout = layout;
        for (std::size_t b = 0; b < layout.num_beams(); ++b)
            s.linear.push_back({layout.selector(b), limit, "beam" + std::to_string(b)});
        return s;
    }

    static PowerConstraintSet total(const BeamLayout &layout, double limit)
    {
        PowerConstraintSet s;
        s.layout = layout;
        s.linear.push_back({ComplexMatrix::identity(layout.num_ports), limit, "total"});
        return s;
    }

    /// Power sharing: the beams of each group draw from a common pool of `limit_per_beam * |group|`.
    static PowerConstraintSet shared(const BeamLayout &layout, const std::vector<std::vector<std::size_t>> &groups,
                                     double limit_per_beam)
    {
        PowerConstraintSet s;
        s.layout = layout;
        for (const auto &g : groups) {
            ComplexMatrix q(layout.num_ports, layout.num_ports);
            std::string label = "shared";
            for (std::size_t b : g) {
                for (std::size_t p : layout.beam_ports.at(b))
                    q(p, p) = 1.0;
                label += ":" + std::to_string(b);
            }
            s.linear.push_back({q, limit_per_beam * static_cast<double>(g.size()), label});
        }
        return s;
    }

    /// Adds sum over all beams of map(P_b) <= limit.
    PowerConstraintSet &add_nonlinear(const PowerMap &map, double limit)
    {
        NonlinearConstraint c;
        for (std::size_t b = 0; b < layout.num_beams(); ++b) {
            c.beams.push_back(b);
            c.maps.push_back(map);
        }
        c.limit = limit;
        c.label = map.name;
        nonlinear.push_back(std::move(c));
        return *this;
    }

    void validate() const
    {
        const std::size_t n = layout.num_ports;
        for (const auto &c : linear) {
            if (c.shaping.rows() != n || c.shaping.cols() != n)
                throw std::invalid_argument("PowerConstraintSet: shaping matrix dimension mismatch");
            if (!(c.limit > 0))
                throw std::invalid_argument("PowerConstraintSet: linear limits must be positive");
            if (!is_hermitian(c.shaping))
                throw std::invalid_argument("PowerConstraintSet: shaping matrix is not Hermitian");
            // PSD check: Q + eps I must admit a Cholesky factor.
            double scale = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                scale = std::max(scale, c.shaping(i, i).real());
            if (scale <= 0)
                throw std::invalid_argument("PowerConstraintSet: shaping matrix must be nonzero PSD");
            ComplexMatrix shifted = c.shaping;
            for (std::size_t i = 0; i < n; ++i)
                shifted(i, i) += 1e-10 * scale;
            try {
                Cholesky chk(shifted);
            } catch (const SingularMatrixError &) {
                throw std::invalid_argument("PowerConstraintSet: shaping matrix is not positive semidefinite");
            }
        }
        for (const auto &c : nonlinear) {
            if (!(c.limit > 0))
                throw std::invalid_argument("PowerConstraintSet: nonlinear limits must be positive");
            if (c.beams.size() != c.maps.size())
                throw std::invalid_argument("PowerConstraintSet: nonlinear constraint needs one map per beam");
            for (std::size_t b : c.beams)
                if (b >= layout.num_beams())
                    throw std::invalid_argument("PowerConstraintSet: nonlinear constraint beam out of range");
            for (const auto &m : c.maps)
                if (std::abs(m(0.0)) > 1e-15)
                    throw std::invalid_argument("PowerConstraintSet: nonlinear maps must vanish at zero");
        }
    }

    /// Per-beam reference power implied by diagonal linear constraints, if any
    /// constraint bounds the beam on its own.
    std::vector<std::optional<double>> beam_caps() const
    {
        std::vector<std::optional<double>> caps(layout.num_beams());
        for (const auto &c : linear) {
            if (!c.is_diagonal())
                continue;
            for (std::size_t b = 0; b < layout.num_beams(); ++b) {
                double w = std::numeric_limits<double>::infinity();
                for (std::size_t p : layout.beam_ports[b])
                    w = std::min(w, c.shaping(p, p).real());
                if (w > 0 && std::isfinite(w)) {
                    const double cap = c.limit / w;
                    if (!caps[b] || cap < *caps[b])
                        caps[b] = cap;
                }
            }
        }
        return caps;
    }

    /// Largest single-beam power any linear constraint allows; used to size initial points.
    double nominal_beam_power() const
    {
        double lo = std::numeric_limits<double>::infinity();
        for (const auto &c : beam_caps())
            if (c)
                lo = std::min(lo, *c);
        return std::isfinite(lo) ? lo : 1.0;
    }
};

/// Constraint residual summary of a set of precoders (positive = violated).
struct ConstraintReport {
    double worst_linear_ratio = 0.0;    // max_l value_l / limit_l
    double worst_nonlinear_ratio = 0.0; // max_j value_j / limit_j
};

inline ConstraintReport evaluate_constraints(const PowerConstraintSet &cs, std::span<const ComplexVector> precoders)
{
    ConstraintReport r;
    for (const auto &c : cs.linear)
        r.worst_linear_ratio = std::max(r.worst_linear_ratio, c.evaluate(precoders) / c.limit);
    const RealVector bp = beam_powers(cs.layout, precoders);
    for (const auto &c : cs.nonlinear)
        r.worst_nonlinear_ratio = std::max(r.worst_nonlinear_ratio, c.evaluate(bp) / c.limit);
    return r;
}

} // namespace mbsat
