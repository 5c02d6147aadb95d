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

// Shared helpers for the test suite.

#pragma once

#include "mbsat/mbsat.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace mbsat::test {

inline ComplexVector random_vector(std::mt19937_64 &rng, std::size_t n, double scale = 1.0)
{
    std::normal_distribution<double> g(0.0, scale);
    ComplexVector v(n);
    for (auto &x : v)
        x = {g(rng), g(rng)};
    return v;
}

inline ComplexMatrix random_matrix(std::mt19937_64 &rng, std::size_t r, std::size_t c)
{
    std::normal_distribution<double> g(0.0, 1.0);
    ComplexMatrix m(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            m(i, j) = {g(rng), g(rng)};
    return m;
}

inline ComplexMatrix adjoint(const ComplexMatrix &m)
{
    ComplexMatrix a(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            a(j, i) = std::conj(m(i, j));
    return a;
}

/// M M^H + shift I for a random square M.
inline ComplexMatrix random_hpd(std::mt19937_64 &rng, std::size_t n, double shift = 1.0)
{
    const ComplexMatrix m = random_matrix(rng, n, n);
    ComplexMatrix a = m * adjoint(m);
    for (std::size_t i = 0; i < n; ++i)
        a(i, i) += shift;
    return a;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

/// One Table I drop: the TDM-active users' channels and demands.
struct TableDrop {
    ScenarioConfig config;
    RealVector demands;
    ChannelSet channels;
};

inline TableDrop table_drop(std::uint64_t master, std::size_t index)
{
    TableDrop t;
    const DropInstance d = make_drop(t.config, master, index);
    t.demands = d.demands;
    t.channels = d.channels;
    return t;
}

} // namespace mbsat::test
