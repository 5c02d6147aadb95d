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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbsat {

/// Which users' signals reach user k as interference. Linear precoding: every
/// other user. Dirty-paper coding with encoding order pi: only users encoded after k.
class InterferenceMask {
  public:
    static InterferenceMask linear(std::size_t users)
    {
        InterferenceMask m(users);
        for (std::size_t k = 0; k < users; ++k)
            for (std::size_t j = 0; j < users; ++j)
                m.set(k, j, j != k);
        return m;
    }

    /// `order[i]` is the user encoded at position i.
    static InterferenceMask dirty_paper(std::span<const std::size_t> order)
    {
        const std::size_t n = order.size();
        std::vector<std::size_t> position(n);
        for (std::size_t i = 0; i < n; ++i)
            position.at(order[i]) = i;
        InterferenceMask m(n);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j)
                m.set(k, j, position[j] > position[k]);
        return m;
    }

    std::size_t users() const { return n_; }
    /// True when user j's signal interferes at user k.
    bool interferes(std::size_t k, std::size_t j) const { return bits_[k * n_ + j] != 0; }

  private:
    explicit InterferenceMask(std::size_t n) : n_(n), bits_(n * n, 0) {}
    void set(std::size_t k, std::size_t j, bool v) { bits_[k * n_ + j] = v ? 1 : 0; }

    std::size_t n_ = 0;
    std::vector<unsigned char> bits_;
};

// ------------------------------------------------------------------------
// SINR and rate
// ------------------------------------------------------------------------

inline double sinr_masked(std::span<const cdouble> h_k, std::span<const ComplexVector> precoders, double noise,
                          std::size_t k, const InterferenceMask &mask)
{
    const double signal = std::norm(inner(h_k, precoders[k]));
    double interf = 0.0;
    for (std::size_t j = 0; j < precoders.size(); ++j)
        if (mask.interferes(k, j))
            interf += std::norm(inner(h_k, precoders[j]));
    return signal / (interf + noise);
}

/// |h_k^H t_k|^2 / (sum_{j != k} |h_k^H t_j|^2 + N0 W)
inline double sinr_miso(std::span<const cdouble> h_k, std::span<const ComplexVector> precoders, double noise,
                        std::size_t k)
{
    return sinr_masked(h_k, precoders, noise, k, InterferenceMask::linear(precoders.size()));
}

/// SINR when only users encoded after k interfere.
inline double sinr_dpc(std::span<const cdouble> h_k, std::span<const ComplexVector> precoders, double noise,
                       std::size_t k, std::span<const std::size_t> order)
{
    return sinr_masked(h_k, precoders, noise, k, InterferenceMask::dirty_paper(order));
}

/// Effective MISO channel seen through a receive combiner: h_eff = H^H u.
inline ComplexVector effective_channel(std::span<const cdouble> u, const ComplexMatrix &h)
{
    if (u.size() != h.rows())
        throw std::invalid_argument("effective_channel: combiner dimension mismatch");
    ComplexVector e(h.cols(), cdouble{});
    for (std::size_t r = 0; r < h.rows(); ++r)
        for (std::size_t c = 0; c < h.cols(); ++c)
            e[c] += std::conj(h(r, c)) * u[r];
    return e;
}

/// |u^H H t_k|^2 / (sum_{j != k} |u^H H t_j|^2 + N0 W ||u||^2); invariant to scaling u.
inline double sinr_mimo(std::span<const cdouble> u, const ComplexMatrix &h, std::span<const ComplexVector> precoders,
                        double noise, std::size_t k)
{
    const ComplexVector e = effective_channel(u, h);
    return sinr_miso(e, precoders, noise * norm_sq(u), k);
}

/// W log2(1 + sinr)
inline double rate(double sinr, double bandwidth)
{
    if (sinr < 0)
        throw std::invalid_argument("rate: negative SINR");
    return bandwidth * std::log1p(sinr) / std::numbers::ln2;
}

/// SINR needed for a rate target: 2^(R/W) - 1.
inline double sinr_target(double rate_bps, double bandwidth) { return std::expm1(rate_bps / bandwidth * std::numbers::ln2); }

// ------------------------------------------------------------------------
// Power-domain link model: fixed directions, variable powers
// ------------------------------------------------------------------------

/// Cross gains a_kj = |h_k^H w_j|^2 for fixed unit-norm directions, plus the
/// quantities needed to evaluate SINR and rates as functions of the powers.
struct LinkGains {
    RealMatrix gain; // K x K
    InterferenceMask mask = InterferenceMask::linear(0);
    double noise = 1.0;     // N0 W
    double bandwidth = 1.0; // W

    static LinkGains build(std::span<const ComplexVector> channels, std::span<const ComplexVector> directions,
                           const InterferenceMask &mask, double noise, double bandwidth)
    {
        const std::size_t k = channels.size();
        if (directions.size() != k || mask.users() != k)
            throw std::invalid_argument("LinkGains: users mismatch");
        LinkGains g{RealMatrix(k, k), mask, noise, bandwidth};
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b)
                g.gain(a, b) = std::norm(inner(channels[a], directions[b]));
        return g;
    }

    std::size_t users() const { return gain.rows(); }

    double interference(std::span<const double> p, std::size_t k) const
    {
        double acc = noise;
        for (std::size_t j = 0; j < users(); ++j)
            if (mask.interferes(k, j))
                acc += p[j] * gain(k, j);
        return acc;
    }

    RealVector sinr(std::span<const double> p) const
    {
        RealVector s(users());
        for (std::size_t k = 0; k < s.size(); ++k)
            s[k] = p[k] * gain(k, k) / interference(p, k);
        return s;
    }

    RealVector rates(std::span<const double> p) const
    {
        RealVector r = sinr(p);
        for (auto &v : r)
            v = rate(std::max(v, 0.0), bandwidth);
        return r;
    }
};

// ------------------------------------------------------------------------
// Objectives (all expressed as costs; lower is better)
// ------------------------------------------------------------------------

enum class ObjectiveKind { Throughput, RateBalancing, RateMatching };

struct ObjectiveSpec {
    ObjectiveKind kind = ObjectiveKind::RateMatching;
    int matching_order = 2;

    static ObjectiveSpec throughput() { return {ObjectiveKind::Throughput, 1}; }
    static ObjectiveSpec rate_balancing() { return {ObjectiveKind::RateBalancing, 1}; }
    static ObjectiveSpec rate_matching(int n)
    {
        if (n < 1)
            throw std::invalid_argument("ObjectiveSpec: matching order must be >= 1");
        return {ObjectiveKind::RateMatching, n};
    }
};

inline std::string to_string(ObjectiveKind k)
{
    switch (k) {
    case ObjectiveKind::Throughput: return "throughput";
    case ObjectiveKind::RateBalancing: return "balancing";
    case ObjectiveKind::RateMatching: return "matching";
    }
    return "unknown";
}

inline ObjectiveKind parse_objective_kind(const std::string &s)
{
    if (s == "throughput")
        return ObjectiveKind::Throughput;
    if (s == "balancing" || s == "rate-balancing")
        return ObjectiveKind::RateBalancing;
    if (s == "matching" || s == "rate-matching" || s == "l2")
        return ObjectiveKind::RateMatching;
    throw std::invalid_argument("unknown objective '" + s + "'");
}

inline double evaluate_objective(const ObjectiveSpec &spec, std::span<const double> r, std::span<const double> f)
{
    if (r.size() != f.size())
        throw std::invalid_argument("evaluate_objective: rate and demand vectors differ in length");
    double acc = 0.0;
    switch (spec.kind) {
    case ObjectiveKind::Throughput:
        for (std::size_t k = 0; k < r.size(); ++k)
            acc += f[k] - r[k];
        return acc;
    case ObjectiveKind::RateBalancing: {
        double lo = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < r.size(); ++k)
            lo = std::min(lo, r[k] / f[k]);
        return -lo;
    }
    case ObjectiveKind::RateMatching:
        for (std::size_t k = 0; k < r.size(); ++k)
            acc += std::pow(std::abs(f[k] - r[k]), spec.matching_order);
        return acc;
    }
    return acc;
}

/// d cost / d r_k. Rate balancing averages over the users attaining the minimum.
inline RealVector objective_rate_gradient(const ObjectiveSpec &spec, std::span<const double> r,
                                          std::span<const double> f)
{
    RealVector g(r.size(), 0.0);
    switch (spec.kind) {
    case ObjectiveKind::Throughput:
        std::fill(g.begin(), g.end(), -1.0);
        break;
    case ObjectiveKind::RateBalancing: {
        double lo = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < r.size(); ++k)
            lo = std::min(lo, r[k] / f[k]);
        std::vector<std::size_t> active;
        for (std::size_t k = 0; k < r.size(); ++k)
            if (r[k] / f[k] <= lo + 1e-12 * std::max(1.0, std::abs(lo)))
                active.push_back(k);
        for (std::size_t k : active)
            g[k] = -1.0 / (f[k] * static_cast<double>(active.size()));
        break;
    }
    case ObjectiveKind::RateMatching: {
        const int n = spec.matching_order;
        for (std::size_t k = 0; k < r.size(); ++k) {
            const double d = f[k] - r[k];
            const double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            g[k] = -n * std::pow(std::abs(d), n - 1) * sgn;
        }
        break;
    }
    }
    return g;
}

/// Gradient of the cost with respect to the user powers, by the chain rule
/// through the SINR expressions.
inline RealVector objective_gradient(const ObjectiveSpec &spec, std::span<const double> p, const LinkGains &link,
                                     std::span<const double> f)
{
    const std::size_t k_users = link.users();
    const RealVector r = link.rates(p);
    const RealVector dc_dr = objective_rate_gradient(spec, r, f);
    const double c = link.bandwidth / std::numbers::ln2;
    RealVector grad(k_users, 0.0);
    for (std::size_t k = 0; k < k_users; ++k) {
        if (dc_dr[k] == 0.0)
            continue;
        const double interf = link.interference(p, k);
        const double akk = link.gain(k, k);
        const double total = interf + p[k] * akk;
        grad[k] += dc_dr[k] * c * akk / total;
        for (std::size_t j = 0; j < k_users; ++j)
            if (link.mask.interferes(k, j))
                grad[j] -= dc_dr[k] * c * p[k] * akk * link.gain(k, j) / (interf * total);
    }
    return grad;
}

/// Convenience overload taking the unit-norm directions and MISO channels.
inline RealVector objective_gradient(const ObjectiveSpec &spec, std::span<const double> p,
                                     std::span<const ComplexVector> directions,
                                     std::span<const ComplexVector> channels, double noise, double bandwidth,
                                     std::span<const double> f)
{
    const LinkGains link =
        LinkGains::build(channels, directions, InterferenceMask::linear(channels.size()), noise, bandwidth);
    return objective_gradient(spec, p, link, f);
}

} // namespace mbsat
