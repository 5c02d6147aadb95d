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

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace mbsat {

inline constexpr double kBoltzmann = 1.380649e-23;    // J/K
inline constexpr double kSpeedOfLight = 299792458.0; // m/s

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double v) { return 10.0 * std::log10(v); }
inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

/// Physical and system parameters of one campaign. Defaults reproduce the GEO
/// Ka-band 7-beam cluster used throughout the test suite.
struct ScenarioConfig {
    double carrier_frequency = 20e9;          // Hz
    int num_beams = 7;                        // K
    double beam_diameter = 250e3;             // m
    double theta_3db = deg_to_rad(0.4);       // rad
    double rain_mu = -2.6;                    // mean of ln(attenuation in dB)
    double rain_sigma = 1.63;                 // std of ln(attenuation in dB)
    double sat_tx_gain_dbi = 52.0;            // dBi
    double terminal_rx_gain_dbi = 41.7;       // dBi
    double bandwidth = 500e6;                 // Hz
    double receiver_temperature = 207.0;      // K
    double orbit_distance = 35786e3;          // m
    std::vector<double> traffic_mean = {4e9, 0.8e9, 0.8e9, 0.8e9, 2e9, 2e9, 2e9}; // bit/s per beam
    int users_per_beam = 4;
    double polarization_rho = 0.9;
    double xpd_db = 20.0;
    int reuse_factor = 4;
    double twta_saturation = 80.0; // W

    double wavelength() const { return kSpeedOfLight / carrier_frequency; }
    /// N0 * W in Watts.
    double noise_power() const { return kBoltzmann * receiver_temperature * bandwidth; }
    double antenna_gain() const { return db_to_linear(sat_tx_gain_dbi + terminal_rx_gain_dbi); }
    std::size_t beams() const { return static_cast<std::size_t>(num_beams); }

    void validate() const
    {
        if (num_beams < 1)
            throw std::invalid_argument("config: num_beams must be >= 1");
        if (!(bandwidth > 0) || !(beam_diameter > 0) || !(theta_3db > 0) || !(orbit_distance > 0))
            throw std::invalid_argument("config: bandwidth, beam_diameter, theta_3db and orbit_distance must be positive");
        if (!(carrier_frequency > 0) || !(receiver_temperature > 0))
            throw std::invalid_argument("config: carrier_frequency and receiver_temperature must be positive");
        if (polarization_rho < 0.0 || polarization_rho > 1.0)
            throw std::invalid_argument("config: polarization_rho must lie in [0, 1]");
        if (!(xpd_db > 0))
            throw std::invalid_argument("config: xpd_db must be positive");
        if (rain_sigma < 0)
            throw std::invalid_argument("config: rain_sigma must be nonnegative");
        if (traffic_mean.size() != beams())
            throw std::invalid_argument("config: traffic_mean must have one entry per beam");
        for (double m : traffic_mean)
            if (!(m > 0))
                throw std::invalid_argument("config: traffic_mean entries must be positive");
        if (users_per_beam < 1)
            throw std::invalid_argument("config: users_per_beam must be >= 1");
        if (reuse_factor < 1)
            throw std::invalid_argument("config: reuse_factor must be >= 1");
        if (!(twta_saturation > 0))
            throw std::invalid_argument("config: twta_saturation must be positive");
    }
};

// ------------------------------------------------------------------------
// Random streams
// ------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed for drop `index` of a campaign: splitmix64(splitmix64(master) ^ index).
/// Counter based, so any drop can be regenerated independently of the others.
inline std::uint64_t drop_seed(std::uint64_t master, std::uint64_t index)
{
    return splitmix64(splitmix64(master) ^ index);
}

using Rng = std::mt19937_64;

// ------------------------------------------------------------------------
// Geometry
// ------------------------------------------------------------------------

struct GroundPoint {
    double x = 0.0; // m
    double y = 0.0; // m
};

inline double distance(const GroundPoint &a, const GroundPoint &b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct BeamGeometry {
    std::vector<GroundPoint> beam_centers;    // K
    std::vector<double> center_distances;     // d(k), K
    std::vector<GroundPoint> user_positions;  // K * users_per_beam, beam-major
    std::vector<std::size_t> serving_beam;    // per user
    RealMatrix offaxis_angles;                // users x beams, rad
    std::size_t users_per_beam = 0;

    std::size_t num_beams() const { return beam_centers.size(); }
    std::size_t user_index(std::size_t beam, std::size_t slot) const { return beam * users_per_beam + slot; }
};

/// Hexagonal lattice with spacing `spacing`, filled ring by ring from the origin.
inline std::vector<GroundPoint> hex_lattice(std::size_t count, double spacing)
{
    std::vector<GroundPoint> pts;
    pts.reserve(count);
    auto to_xy = [&](int q, int r) {
        return GroundPoint{spacing * (q + 0.5 * r), spacing * (std::sqrt(3.0) / 2.0 * r)};
    };
    if (count == 0)
        return pts;
    pts.push_back({0.0, 0.0});
    static constexpr std::array<std::array<int, 2>, 6> dirs{{{1, 0}, {0, 1}, {-1, 1}, {-1, 0}, {0, -1}, {1, -1}}};
    for (int ring = 1; pts.size() < count; ++ring) {
        int q = dirs[4][0] * ring;
        int r = dirs[4][1] * ring;
        for (int side = 0; side < 6 && pts.size() < count; ++side)
            for (int step = 0; step < ring && pts.size() < count; ++step) {
                pts.push_back(to_xy(q, r));
                q += dirs[side][0];
                r += dirs[side][1];
            }
    }
    return pts;
}

inline BeamGeometry build_geometry(const ScenarioConfig &config, Rng &rng)
{
    if (config.num_beams <= 0)
        throw std::invalid_argument("build_geometry: num_beams must be positive");
    if (config.users_per_beam <= 0)
        throw std::invalid_argument("build_geometry: users_per_beam must be positive");
    const std::size_t k = config.beams();
    const std::size_t upb = static_cast<std::size_t>(config.users_per_beam);

    BeamGeometry g;
    g.users_per_beam = upb;
    g.beam_centers = hex_lattice(k, config.beam_diameter);
    for (const auto &c : g.beam_centers)
        g.center_distances.push_back(std::hypot(c.x, c.y));

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double radius = 0.5 * config.beam_diameter;
    for (std::size_t b = 0; b < k; ++b)
        for (std::size_t u = 0; u < upb; ++u) {
            const double rr = radius * std::sqrt(unit(rng));
            const double ang = 2.0 * std::numbers::pi * unit(rng);
            g.user_positions.push_back({g.beam_centers[b].x + rr * std::cos(ang), g.beam_centers[b].y + rr * std::sin(ang)});
            g.serving_beam.push_back(b);
        }

    g.offaxis_angles = RealMatrix(g.user_positions.size(), k);
    for (std::size_t u = 0; u < g.user_positions.size(); ++u)
        for (std::size_t b = 0; b < k; ++b)
            g.offaxis_angles(u, b) = std::atan(distance(g.user_positions[u], g.beam_centers[b]) / config.orbit_distance);
    return g;
}

/// Free-space loss coefficient (lambda / 4 pi)^2 / (d0^2 + d_k^2).
inline double fsl_coefficient(double wavelength, double d_k, double d0)
{
    if (!(wavelength > 0) || !(d0 > 0) || d_k < 0)
        throw std::invalid_argument("fsl_coefficient: requires wavelength > 0, d0 > 0, d_k >= 0");
    const double a = wavelength / (4.0 * std::numbers::pi);
    return a * a / (d0 * d0 + d_k * d_k);
}

/// Normalized beam pattern (J1(u)/(2u) + 36 J3(u)/u^3)^2, u = 2.07123 sin(theta)/sin(theta_3db).
inline double beam_gain(double theta, double theta_3db)
{
    const double u = 2.07123 * std::sin(theta) / std::sin(theta_3db);
    if (std::abs(u) < 1e-4) {
        // J1(u)/(2u) -> 1/4 - u^2/32, 36 J3(u)/u^3 -> 3/4 - 3u^2/64
        const double v = 1.0 - 5.0 * u * u / 64.0;
        return v * v;
    }
    const double v = bessel_j(1, u) / (2.0 * u) + 36.0 * bessel_j(3, u) / (u * u * u);
    return v * v;
}

// ------------------------------------------------------------------------
// Rain fading
// ------------------------------------------------------------------------

/// One rain realization. Each beam is a correlated area: every user located in
/// beam b sees attenuation_db[b] and phase[b]. attenuation_db[b] equals the
/// (0,0) entry of dualpol_db[b].
struct RainSample {
    std::vector<double> attenuation_db;
    std::vector<double> phase;
    std::vector<std::array<std::array<double, 2>, 2>> dualpol_db;
};

inline RainSample sample_rain(Rng &rng, double mu, double sigma, std::size_t num_areas, bool dual_pol)
{
    if (sigma < 0)
        throw std::invalid_argument("sample_rain: sigma must be nonnegative");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw = [&] { return std::exp(mu + sigma * gauss(rng)); };

    RainSample s;
    s.attenuation_db.resize(num_areas);
    s.phase.resize(num_areas);
    if (dual_pol)
        s.dualpol_db.resize(num_areas);
    for (std::size_t a = 0; a < num_areas; ++a) {
        s.attenuation_db[a] = draw();
        s.phase[a] = 2.0 * std::numbers::pi * unit(rng);
        if (dual_pol) {
            auto &m = s.dualpol_db[a];
            m[0][0] = s.attenuation_db[a];
            m[0][1] = draw();
            m[1][0] = draw();
            m[1][1] = draw();
        }
    }
    return s;
}

/// Channel amplitude factor for an attenuation given in dB.
inline double rain_amplitude(double attenuation_db) { return std::pow(10.0, -attenuation_db / 40.0); }

// ------------------------------------------------------------------------
// Polarization
// ------------------------------------------------------------------------

struct PolarizationModel {
    double alpha = 0.0; // power imbalance, 10^(-XPD/20)
    double rho = 0.0;
    RealMatrix p{{1.0, 0.0}, {0.0, 1.0}};
    RealMatrix r{{1.0, 0.0}, {0.0, 1.0}};

    static PolarizationModel from_xpd(double xpd_db, double rho)
    {
        return with_alpha(std::pow(10.0, -xpd_db / 20.0), rho);
    }

    static PolarizationModel with_alpha(double alpha, double rho)
    {
        if (rho < 0 || rho > 1)
            throw std::invalid_argument("PolarizationModel: rho must lie in [0, 1]");
        PolarizationModel m;
        m.alpha = alpha;
        m.rho = rho;
        m.p = RealMatrix{{1.0, alpha}, {alpha, 1.0}};
        m.r = RealMatrix{{1.0, rho}, {rho, 1.0}};
        return m;
    }

    /// Principal square root of R.
    RealMatrix r_sqrt() const
    {
        const double a = std::sqrt(1.0 + rho);
        const double b = std::sqrt(1.0 - rho);
        return RealMatrix{{0.5 * (a + b), 0.5 * (a - b)}, {0.5 * (a - b), 0.5 * (a + b)}};
    }
};

// ------------------------------------------------------------------------
// Channels
// ------------------------------------------------------------------------

/// Channels of the K users active in one TDM slot (user k is served by beam k).
struct ChannelSet {
    std::vector<ComplexVector> miso;       // h_k, K entries
    std::vector<ComplexMatrix> copol;      // 2 x K
    std::vector<ComplexMatrix> dualpol;    // 2 x 2K, column 2n + a = feed n, polarization a
    std::vector<RealVector> beam_gains;    // b for each user, K entries
    std::vector<double> fsl;               // b_max of each user

    std::size_t users() const { return miso.size(); }
};

/// Active user of each beam in a TDM slot (round robin).
inline std::vector<std::size_t> active_users(const BeamGeometry &g, std::size_t slot)
{
    std::vector<std::size_t> users;
    for (std::size_t b = 0; b < g.num_beams(); ++b)
        users.push_back(g.user_index(b, slot % g.users_per_beam));
    return users;
}

// theta_3db is the full 3-dB beamwidth (the beam spacing D equals 2 d0 tan(theta_3db / 2)), while the
// pattern reaches half power at the one-sided angle passed to beam_gain.
inline RealVector user_beam_gains(const BeamGeometry &g, std::size_t user, const ScenarioConfig &config)
{
    RealVector b(g.num_beams());
    for (std::size_t j = 0; j < b.size(); ++j)
        b[j] = beam_gain(g.offaxis_angles(user, j), 0.5 * config.theta_3db);
    return b;
}

inline double user_fsl(const BeamGeometry &g, std::size_t user, const ScenarioConfig &config)
{
    return fsl_coefficient(config.wavelength(), g.center_distances[g.serving_beam[user]], config.orbit_distance);
}

/// h = sqrt(G_tx G_rx b_max) * (10^(-xi/40) e^{-j phi} 1_K) .* b^(1/2)
inline ComplexVector build_miso_channel(const BeamGeometry &g, const RainSample &rain, const ScenarioConfig &config,
                                        std::size_t user)
{
    const std::size_t area = g.serving_beam[user];
    const double scale = std::sqrt(config.antenna_gain() * user_fsl(g, user, config));
    const cdouble fade = rain_amplitude(rain.attenuation_db[area]) * std::polar(1.0, -rain.phase[area]);
    const RealVector b = user_beam_gains(g, user, config);
    ComplexVector h(b.size());
    for (std::size_t j = 0; j < b.size(); ++j)
        h[j] = scale * fade * std::sqrt(b[j]);
    return h;
}

/// 1_2 (x) h^H: both receive antennas see the same row, so that the
/// effective channel H^H e_r equals h.
inline ComplexMatrix build_copol_channel(std::span<const cdouble> h)
{
    ComplexMatrix m(2, h.size());
    for (std::size_t j = 0; j < h.size(); ++j) {
        m(0, j) = std::conj(h[j]);
        m(1, j) = std::conj(h[j]);
    }
    return m;
}

inline double frobenius_sq(const ComplexMatrix &m)
{
    double acc = 0.0;
    for (const auto &v : m.entries())
        acc += std::norm(v);
    return acc;
}

/// Kronecker-correlated dual-polarization channel, scaled so that
/// trace(Hbar Hbar^H) equals trace(H H^H) of the co-polar channel of the same user.
inline ComplexMatrix build_dualpol_channel(const BeamGeometry &g, const RainSample &rain, const PolarizationModel &pol,
                                           const ScenarioConfig &config, std::size_t user)
{
    const std::size_t area = g.serving_beam[user];
    if (rain.dualpol_db.size() <= area)
        throw std::invalid_argument("build_dualpol_channel: rain sample lacks dual-polarization attenuations");
    const std::size_t n = g.num_beams();
    const double bmax = user_fsl(g, user, config);
    const RealVector b = user_beam_gains(g, user, config);

    const cdouble phase = std::polar(1.0, -rain.phase[area]);
    ComplexMatrix fade(2, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            fade(i, j) = rain_amplitude(rain.dualpol_db[area][i][j]) * phase;

    const RealMatrix rs = pol.r_sqrt();
    ComplexMatrix rs_c(2, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            rs_c(i, j) = rs(i, j);
    const ComplexMatrix core = rs_c * fade * rs_c;

    ComplexMatrix hbar(2, 2 * n);
    for (std::size_t feed = 0; feed < n; ++feed)
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t a = 0; a < 2; ++a)
                hbar(i, 2 * feed + a) = std::sqrt(bmax) * std::sqrt(b[feed]) * core(i, a) * pol.p(i, a);

    const ComplexVector h = build_miso_channel(g, rain, config, user);
    const double target = 2.0 * norm_sq(h);
    const double have = frobenius_sq(hbar);
    if (have > 0.0)
        hbar *= cdouble(std::sqrt(target / have));
    return hbar;
}

inline ChannelSet build_channels(const BeamGeometry &g, const RainSample &rain, const ScenarioConfig &config,
                                 std::span<const std::size_t> users, const PolarizationModel *pol = nullptr)
{
    ChannelSet cs;
    for (std::size_t u : users) {
        cs.miso.push_back(build_miso_channel(g, rain, config, u));
        cs.copol.push_back(build_copol_channel(cs.miso.back()));
        if (pol != nullptr)
            cs.dualpol.push_back(build_dualpol_channel(g, rain, *pol, config, u));
        cs.beam_gains.push_back(user_beam_gains(g, u, config));
        cs.fsl.push_back(user_fsl(g, u, config));
    }
    return cs;
}

// ------------------------------------------------------------------------
// Traffic
// ------------------------------------------------------------------------

/// F_k ~ U[0.5 m_k, 1.5 m_k].
inline RealVector sample_traffic(Rng &rng, std::span<const double> traffic_mean)
{
    RealVector f(traffic_mean.size());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t k = 0; k < f.size(); ++k) {
        if (!(traffic_mean[k] > 0))
            throw std::invalid_argument("sample_traffic: means must be positive");
        f[k] = traffic_mean[k] * (0.5 + unit(rng));
    }
    return f;
}

} // namespace mbsat
