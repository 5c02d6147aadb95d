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
#include "mbsat/objectives.hpp"
#include "mbsat/precoders.hpp"
#include "mbsat/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mbsat {

/// Raised for unreadable or unwritable files; the message carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration text or values.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ------------------------------------------------------------------------
// Configuration
// ------------------------------------------------------------------------

enum class ConstraintKind { PerBeam, Total, Shared };

struct NonlinearSpec {
    std::string map = "none"; // none | quadratic | sqrt | linear
    double scale = 1.0;
    double limit = 0.0;
};

struct CampaignConfig {
    ScenarioConfig scenario;
    std::uint64_t seed = 1;
    int drops = 50;
    std::vector<std::string> schemes = {"conventional", "zf", "rzf", "miso", "dpc"};
    ObjectiveSpec objective = ObjectiveSpec::rate_matching(2);
    ConstraintKind constraints = ConstraintKind::PerBeam;
    std::vector<std::vector<std::size_t>> shared_groups;
    double beam_power_limit = 80.0; // W
    NonlinearSpec nonlinear;
    double fairness_epsilon = 1e-3;
    int parallelism = 1;
    int max_outer = 200;
    double tolerance = 1e-5;

    void validate() const
    {
        scenario.validate();
        if (drops < 1)
            throw ConfigError("config: drops must be >= 1");
        if (parallelism < 1)
            throw ConfigError("config: parallelism must be >= 1");
        if (!(beam_power_limit > 0))
            throw ConfigError("config: beam_power_limit_w must be positive");
        if (!(fairness_epsilon > 0) || fairness_epsilon >= 1)
            throw ConfigError("config: fairness_epsilon must lie in (0, 1)");
        if (max_outer < 1 || !(tolerance > 0))
            throw ConfigError("config: max_outer must be >= 1 and tolerance positive");
        if (constraints == ConstraintKind::Shared) {
            if (shared_groups.empty())
                throw ConfigError("config: shared constraints need at least one group");
            for (const auto &g : shared_groups)
                for (std::size_t b : g)
                    if (b >= scenario.beams())
                        throw ConfigError("config: shared group beam index out of range");
        }
        if (nonlinear.map != "none") {
            if (nonlinear.map != "quadratic" && nonlinear.map != "sqrt" && nonlinear.map != "linear")
                throw ConfigError("config: nonlinear map must be none, quadratic, sqrt or linear");
            if (!(nonlinear.limit > 0) || !(nonlinear.scale > 0))
                throw ConfigError("config: nonlinear scale and limit must be positive");
        }
        static const std::vector<std::string> known = {"conventional", "zf",          "rzf",           "miso",
                                                       "dpc",          "miso-total",  "fairness",      "mimo-copol",
                                                       "mimo-dualpol", "pol-selection", "pol-alternating"};
        for (const auto &s : schemes)
            if (std::find(known.begin(), known.end(), s) == known.end())
                throw ConfigError("config: unknown scheme '" + s + "'");
    }
};

namespace detail {

inline std::string trim(const std::string &s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string &s, char sep)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep))
        out.push_back(trim(item));
    return out;
}

inline double parse_double(const std::string &key, const std::string &v)
{
    char *end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x))
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    return x;
}

inline long long parse_int(const std::string &key, const std::string &v)
{
    char *end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size())
        throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
    return x;
}

inline std::uint64_t parse_seed(const std::string &key, const std::string &v)
{
    char *end = nullptr;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || v[0] == '-' || end != v.c_str() + v.size())
        throw ConfigError("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
    return x;
}

} // namespace detail

/// Parses "per-beam", "total" or "shared:<groups>", where groups are separated
/// by ';' and beams within a group by ','.
inline void parse_constraints(CampaignConfig &c, const std::string &value)
{
    c.shared_groups.clear();
    if (value == "per-beam") {
        c.constraints = ConstraintKind::PerBeam;
    } else if (value == "total") {
        c.constraints = ConstraintKind::Total;
    } else if (value.rfind("shared:", 0) == 0) {
        c.constraints = ConstraintKind::Shared;
        for (const auto &grp : detail::split(value.substr(7), ';')) {
            std::vector<std::size_t> beams;
            for (const auto &b : detail::split(grp, ','))
                beams.push_back(static_cast<std::size_t>(detail::parse_int("constraints", b)));
            if (beams.empty())
                throw ConfigError("config: empty shared group");
            c.shared_groups.push_back(std::move(beams));
        }
    } else {
        throw ConfigError("config: constraints must be per-beam, total or shared:<groups>");
    }
}

inline std::string constraints_to_string(const CampaignConfig &c)
{
    switch (c.constraints) {
    case ConstraintKind::PerBeam: return "per-beam";
    case ConstraintKind::Total: return "total";
    case ConstraintKind::Shared: {
        std::string s = "shared:";
        for (std::size_t g = 0; g < c.shared_groups.size(); ++g) {
            if (g)
                s += ';';
            for (std::size_t i = 0; i < c.shared_groups[g].size(); ++i) {
                if (i)
                    s += ',';
                s += std::to_string(c.shared_groups[g][i]);
            }
        }
        return s;
    }
    }
    return "per-beam";
}

inline ObjectiveSpec make_objective(const std::string &kind, int order)
{
    switch (parse_objective_kind(kind)) {
    case ObjectiveKind::Throughput: return ObjectiveSpec::throughput();
    case ObjectiveKind::RateBalancing: return ObjectiveSpec::rate_balancing();
    case ObjectiveKind::RateMatching: return ObjectiveSpec::rate_matching(order);
    }
    return ObjectiveSpec::rate_matching(order);
}

/// Applies one `key = value` setting.
inline void apply_setting(CampaignConfig &c, const std::string &key, const std::string &value)
{
    using detail::parse_double;
    using detail::parse_int;
    ScenarioConfig &s = c.scenario;
    if (key == "carrier_frequency_hz")
        s.carrier_frequency = parse_double(key, value);
    else if (key == "num_beams")
        s.num_beams = static_cast<int>(parse_int(key, value));
    else if (key == "beam_diameter_m")
        s.beam_diameter = parse_double(key, value);
    else if (key == "theta_3db_deg")
        s.theta_3db = deg_to_rad(parse_double(key, value));
    else if (key == "rain_mu")
        s.rain_mu = parse_double(key, value);
    else if (key == "rain_sigma")
        s.rain_sigma = parse_double(key, value);
    else if (key == "sat_tx_gain_dbi")
        s.sat_tx_gain_dbi = parse_double(key, value);
    else if (key == "terminal_rx_gain_dbi")
        s.terminal_rx_gain_dbi = parse_double(key, value);
    else if (key == "bandwidth_hz")
        s.bandwidth = parse_double(key, value);
    else if (key == "receiver_temperature_k")
        s.receiver_temperature = parse_double(key, value);
    else if (key == "orbit_distance_m")
        s.orbit_distance = parse_double(key, value);
    else if (key == "traffic_mean_bps") {
        s.traffic_mean.clear();
        for (const auto &v : detail::split(value, ','))
            s.traffic_mean.push_back(parse_double(key, v));
    } else if (key == "users_per_beam")
        s.users_per_beam = static_cast<int>(parse_int(key, value));
    else if (key == "polarization_rho")
        s.polarization_rho = parse_double(key, value);
    else if (key == "xpd_db")
        s.xpd_db = parse_double(key, value);
    else if (key == "reuse_factor")
        s.reuse_factor = static_cast<int>(parse_int(key, value));
    else if (key == "twta_saturation_w")
        s.twta_saturation = parse_double(key, value);
    else if (key == "seed")
        c.seed = detail::parse_seed(key, value);
    else if (key == "drops")
        c.drops = static_cast<int>(parse_int(key, value));
    else if (key == "schemes")
        c.schemes = detail::split(value, ',');
    else if (key == "objective")
        c.objective = make_objective(value, c.objective.matching_order);
    else if (key == "matching_order") {
        const int n = static_cast<int>(parse_int(key, value));
        if (n < 1)
            throw ConfigError("config: matching_order must be >= 1");
        c.objective.matching_order = n;
    } else if (key == "constraints")
        parse_constraints(c, value);
    else if (key == "beam_power_limit_w")
        c.beam_power_limit = parse_double(key, value);
    else if (key == "nonlinear") {
        // none | <map>:<scale>:<limit>
        if (value == "none") {
            c.nonlinear = {};
        } else {
            const auto parts = detail::split(value, ':');
            if (parts.size() != 3)
                throw ConfigError("config: nonlinear expects none or <map>:<scale>:<limit>");
            c.nonlinear.map = parts[0];
            c.nonlinear.scale = parse_double(key, parts[1]);
            c.nonlinear.limit = parse_double(key, parts[2]);
        }
    } else if (key == "fairness_epsilon")
        c.fairness_epsilon = parse_double(key, value);
    else if (key == "parallelism")
        c.parallelism = static_cast<int>(parse_int(key, value));
    else if (key == "max_outer")
        c.max_outer = static_cast<int>(parse_int(key, value));
    else if (key == "tolerance")
        c.tolerance = parse_double(key, value);
    else
        throw ConfigError("config: unknown key '" + key + "'");
}

/// Parses the flat `key = value` format; '#' starts a comment.
inline CampaignConfig parse_config(const std::string &text, CampaignConfig base = {})
{
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        line = detail::trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        try {
            apply_setting(base, key, value);
        } catch (const ConfigError &e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    base.validate();
    return base;
}

inline std::string read_file(const std::string &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string &path, const std::string &text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out)
        throw IoError("write to '" + path + "' failed");
}

/// Loads the config at `path`; the MBSAT_CONFIG environment variable, when set,
/// replaces the path. An empty path and no variable yields the defaults.
inline CampaignConfig load_config(const std::string &path)
{
    std::string p = path;
    if (const char *env = std::getenv("MBSAT_CONFIG"); env != nullptr && *env != '\0')
        p = env;
    if (p.empty()) {
        CampaignConfig c;
        c.validate();
        return c;
    }
    return parse_config(read_file(p));
}

/// Canonical text of every setting, in a fixed order.
inline std::string canonical_config(const CampaignConfig &c)
{
    const ScenarioConfig &s = c.scenario;
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    std::ostringstream o;
    o << "carrier_frequency_hz=" << num(s.carrier_frequency) << '\n'
      << "num_beams=" << s.num_beams << '\n'
      << "beam_diameter_m=" << num(s.beam_diameter) << '\n'
      << "theta_3db_rad=" << num(s.theta_3db) << '\n'
      << "rain_mu=" << num(s.rain_mu) << '\n'
      << "rain_sigma=" << num(s.rain_sigma) << '\n'
      << "sat_tx_gain_dbi=" << num(s.sat_tx_gain_dbi) << '\n'
      << "terminal_rx_gain_dbi=" << num(s.terminal_rx_gain_dbi) << '\n'
      << "bandwidth_hz=" << num(s.bandwidth) << '\n'
      << "receiver_temperature_k=" << num(s.receiver_temperature) << '\n'
      << "orbit_distance_m=" << num(s.orbit_distance) << '\n';
    o << "traffic_mean_bps=";
    for (std::size_t i = 0; i < s.traffic_mean.size(); ++i)
        o << (i ? "," : "") << num(s.traffic_mean[i]);
    o << '\n'
      << "users_per_beam=" << s.users_per_beam << '\n'
      << "polarization_rho=" << num(s.polarization_rho) << '\n'
      << "xpd_db=" << num(s.xpd_db) << '\n'
      << "reuse_factor=" << s.reuse_factor << '\n'
      << "twta_saturation_w=" << num(s.twta_saturation) << '\n'
      << "seed=" << c.seed << '\n'
      << "drops=" << c.drops << '\n';
    o << "schemes=";
    for (std::size_t i = 0; i < c.schemes.size(); ++i)
        o << (i ? "," : "") << c.schemes[i];
    o << '\n'
      << "objective=" << to_string(c.objective.kind) << '\n'
      << "matching_order=" << c.objective.matching_order << '\n'
      << "constraints=" << constraints_to_string(c) << '\n'
      << "beam_power_limit_w=" << num(c.beam_power_limit) << '\n'
      << "nonlinear=" << c.nonlinear.map << ':' << num(c.nonlinear.scale) << ':' << num(c.nonlinear.limit) << '\n'
      << "fairness_epsilon=" << num(c.fairness_epsilon) << '\n'
      << "max_outer=" << c.max_outer << '\n'
      << "tolerance=" << num(c.tolerance) << '\n';
    return o.str();
}

/// FNV-1a of the canonical config. Parallelism is excluded: it never changes results.
inline std::uint64_t config_hash(const CampaignConfig &c)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical_config(c)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Power constraints of the campaign over `layout`. Shared and total pools are
/// sized as beam_power_limit times the number of beams they cover.
inline PowerConstraintSet build_constraints(const CampaignConfig &c, const BeamLayout &layout)
{
    PowerConstraintSet cs;
    switch (c.constraints) {
    case ConstraintKind::PerBeam: cs = PowerConstraintSet::per_beam(layout, c.beam_power_limit); break;
    case ConstraintKind::Total:
        cs = PowerConstraintSet::total(layout, c.beam_power_limit * static_cast<double>(layout.num_beams()));
        break;
    case ConstraintKind::Shared: cs = PowerConstraintSet::shared(layout, c.shared_groups, c.beam_power_limit); break;
    }
    if (c.nonlinear.map == "quadratic")
        cs.add_nonlinear(PowerMap::quadratic(c.nonlinear.scale), c.nonlinear.limit);
    else if (c.nonlinear.map == "sqrt")
        cs.add_nonlinear(PowerMap::square_root(c.nonlinear.scale), c.nonlinear.limit);
    else if (c.nonlinear.map == "linear")
        cs.add_nonlinear(PowerMap::identity(), c.nonlinear.limit);
    cs.validate();
    return cs;
}

// ------------------------------------------------------------------------
// Drops
// ------------------------------------------------------------------------

struct SchemeOutcome {
    std::string scheme;
    std::optional<SchemeResult> result;
    std::string error; // set when the scheme threw
    PowerConstraintSet constraints;
};

struct DropResult {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    RealVector demands;
    double mean_attenuation_db = 0.0;
    double max_attenuation_db = 0.0;
    std::vector<SchemeOutcome> schemes;

    const SchemeOutcome *find(const std::string &name) const
    {
        for (const auto &s : schemes)
            if (s.scheme == name)
                return &s;
        return nullptr;
    }
};

/// One drop's realization: the channels of the TDM-active users and their demands.
struct DropInstance {
    std::uint64_t seed = 0;
    BeamGeometry geometry;
    RainSample rain;
    RealVector demands;
    std::vector<std::size_t> users;
    ChannelSet channels;
};

inline DropInstance make_drop(const ScenarioConfig &config, std::uint64_t master_seed, std::size_t index)
{
    DropInstance d;
    d.seed = drop_seed(master_seed, index);
    Rng rng(d.seed);
    d.geometry = build_geometry(config, rng);
    d.rain = sample_rain(rng, config.rain_mu, config.rain_sigma, config.beams(), true);
    d.demands = sample_traffic(rng, config.traffic_mean);
    d.users = active_users(d.geometry, index % static_cast<std::size_t>(config.users_per_beam));
    const PolarizationModel pol = PolarizationModel::from_xpd(config.xpd_db, config.polarization_rho);
    d.channels = build_channels(d.geometry, d.rain, config, d.users, &pol);
    return d;
}

namespace detail {

inline GenericOptions generic_options(const CampaignConfig &c)
{
    GenericOptions o;
    o.objective = c.objective;
    o.max_outer = c.max_outer;
    o.tolerance = c.tolerance;
    return o;
}

inline SchemeResult run_scheme(const std::string &name, const CampaignConfig &c, const DropInstance &d,
                               PowerConstraintSet &used)
{
    const ScenarioConfig &s = c.scenario;
    const std::size_t k = d.channels.users();
    const double noise = s.noise_power();
    const double w = s.bandwidth;
    const GenericOptions opts = generic_options(c);
    const auto &h = d.channels.miso;
    const auto &f = d.demands;
    used = build_constraints(c, BeamLayout::single(k));

    if (name == "conventional") {
        const ConventionalResult cr = conventional_rates(h, f, w, noise, s.reuse_factor, s.twta_saturation);
        SchemeResult r;
        r.scheme = name;
        r.rates = cr.rates;
        r.beam_powers = cr.powers;
        r.powers = cr.powers;
        r.objective_value = evaluate_objective(c.objective, r.rates, f);
        r.converged = true;
        r.trace = {r.objective_value};
        // Each beam runs on its own sub-band; only the saturation limit applies.
        used = PowerConstraintSet::per_beam(BeamLayout::single(k), s.twta_saturation);
        return r;
    }
    if (name == "zf")
        return linear_baseline(name, zf_precoders(h), h, f, used, noise, w, opts);
    if (name == "rzf")
        return linear_baseline(name, rzf_precoders(h, noise, s.twta_saturation), h, f, used, noise, w, opts);
    if (name == "miso")
        return generic_miso(h, f, used, noise, w, opts);
    if (name == "miso-total") {
        CampaignConfig total = c;
        total.constraints = ConstraintKind::Total;
        used = build_constraints(total, BeamLayout::single(k));
        SchemeResult r = generic_miso(h, f, used, noise, w, opts);
        r.scheme = name;
        return r;
    }
    if (name == "dpc")
        return generic_dpc(h, f, used, noise, w, dpc_order(h, f, noise), opts);
    if (name == "fairness")
        return fairness_bisection(h, f, used, noise, w, c.fairness_epsilon, c.objective);
    if (name == "mimo-copol")
        return generic_mimo(d.channels.copol, f, used, noise, w, opts, name);
    if (name == "mimo-dualpol") {
        used = build_constraints(c, BeamLayout::dual(k));
        return generic_mimo(d.channels.dualpol, f, used, noise, w, opts, name);
    }
    if (name == "pol-selection") {
        used = build_constraints(c, BeamLayout::dual(k));
        std::vector<ComplexVector> rows;
        for (const auto &hb : d.channels.dualpol)
            rows.push_back(row_channel(hb, polarization_selection(hb)));
        SchemeResult r = generic_miso(rows, f, used, noise, w, opts);
        r.scheme = name;
        return r;
    }
    if (name == "pol-alternating") {
        std::vector<ComplexMatrix> alt;
        for (const auto &hb : d.channels.dualpol)
            alt.push_back(alternating_polarization_channel(hb));
        return generic_mimo(alt, f, used, noise, w, opts, name);
    }
    throw std::invalid_argument("unknown scheme '" + name + "'");
}

} // namespace detail

/// Runs every requested scheme on one drop. A failing scheme is recorded with
/// its error message and does not abort the drop.
inline DropResult run_drop(const CampaignConfig &config, std::size_t index, const std::vector<std::string> &schemes)
{
    const DropInstance d = make_drop(config.scenario, config.seed, index);
    DropResult out;
    out.index = index;
    out.seed = d.seed;
    out.demands = d.demands;
    for (double a : d.rain.attenuation_db) {
        out.mean_attenuation_db += a / static_cast<double>(d.rain.attenuation_db.size());
        out.max_attenuation_db = std::max(out.max_attenuation_db, a);
    }
    for (const auto &name : schemes) {
        SchemeOutcome so;
        so.scheme = name;
        try {
            so.result = detail::run_scheme(name, config, d, so.constraints);
        } catch (const std::exception &e) {
            so.error = e.what();
        }
        out.schemes.push_back(std::move(so));
    }
    return out;
}

inline DropResult run_drop(const CampaignConfig &config, std::size_t index)
{
    return run_drop(config, index, config.schemes);
}

// ------------------------------------------------------------------------
// Campaign
// ------------------------------------------------------------------------

struct SchemeAggregate {
    std::string scheme;
    int drops = 0;        // successful runs
    int failures = 0;     // runs that threw
    int nonconverged = 0; // runs flagged as not converged
    double mean_throughput = 0.0;  // bit/s
    double mean_l2_cost = 0.0;     // rate matching cost of order matching_order
    double mean_objective = 0.0;   // configured objective
    RealVector mean_rate;          // per beam, bit/s
    RealVector mean_power;         // per beam, W
    RealVector rate_efficiency;    // mean_rate / mean_power, bit/s/W
    RealVector objective_trace;    // of the lowest-index successful drop
};

struct CampaignReport {
    std::vector<SchemeAggregate> schemes;
    int drops = 0;
    std::uint64_t config_hash = 0;
    int matching_order = 2;

    const SchemeAggregate *find(const std::string &name) const
    {
        for (const auto &s : schemes)
            if (s.scheme == name)
                return &s;
        return nullptr;
    }
    bool all_converged() const
    {
        for (const auto &s : schemes)
            if (s.failures > 0 || s.nonconverged > 0)
                return false;
        return true;
    }
};

/// Runs drops 0..n-1 on up to `parallelism` threads.
inline std::vector<DropResult> run_drops(const CampaignConfig &config, int n_drops, int parallelism)
{
    if (n_drops < 1)
        throw std::invalid_argument("run_drops: n_drops must be >= 1");
    std::vector<DropResult> drops(static_cast<std::size_t>(n_drops));
    const int workers = std::max(1, std::min(parallelism, n_drops));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= drops.size())
                return;
            try {
                drops[i] = run_drop(config, i);
            } catch (...) {
                const std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t)
            pool.emplace_back(work);
        for (auto &t : pool)
            t.join();
    }
    if (failure)
        std::rethrow_exception(failure);
    return drops;
}

/// Arithmetic means over drops, folded in drop-index order.
inline CampaignReport aggregate(const CampaignConfig &config, const std::vector<DropResult> &drops)
{
    CampaignReport rep;
    rep.drops = static_cast<int>(drops.size());
    rep.config_hash = config_hash(config);
    rep.matching_order = config.objective.matching_order;
    const ObjectiveSpec l2 = ObjectiveSpec::rate_matching(config.objective.matching_order);
    const std::size_t k = config.scenario.beams();
    for (const auto &name : config.schemes) {
        SchemeAggregate a;
        a.scheme = name;
        a.mean_rate.assign(k, 0.0);
        a.mean_power.assign(k, 0.0);
        for (const auto &d : drops) {
            const SchemeOutcome *so = d.find(name);
            if (so == nullptr)
                continue;
            if (!so->result) {
                ++a.failures;
                continue;
            }
            const SchemeResult &r = *so->result;
            if (!r.converged)
                ++a.nonconverged;
            if (a.drops == 0)
                a.objective_trace = r.trace;
            ++a.drops;
            for (std::size_t b = 0; b < k; ++b) {
                a.mean_rate[b] += r.rates[b];
                a.mean_power[b] += r.beam_powers[b];
                a.mean_throughput += r.rates[b];
            }
            a.mean_l2_cost += evaluate_objective(l2, r.rates, d.demands);
            a.mean_objective += r.objective_value;
        }
        if (a.drops > 0) {
            const double n = static_cast<double>(a.drops);
            for (std::size_t b = 0; b < k; ++b) {
                a.mean_rate[b] /= n;
                a.mean_power[b] /= n;
            }
            a.mean_throughput /= n;
            a.mean_l2_cost /= n;
            a.mean_objective /= n;
        }
        a.rate_efficiency.resize(k);
        for (std::size_t b = 0; b < k; ++b)
            a.rate_efficiency[b] = a.mean_power[b] > 0 ? a.mean_rate[b] / a.mean_power[b] : 0.0;
        rep.schemes.push_back(std::move(a));
    }
    return rep;
}

inline CampaignReport run_campaign(const CampaignConfig &config, int n_drops, int parallelism)
{
    return aggregate(config, run_drops(config, n_drops, parallelism));
}

inline CampaignReport run_campaign(const CampaignConfig &config)
{
    return run_campaign(config, config.drops, config.parallelism);
}

// ------------------------------------------------------------------------
// Compliance
// ------------------------------------------------------------------------

struct ComplianceTolerances {
    double linear = 1e-8;     // relative excess over a linear limit
    double nonlinear = 1e-8;  // relative excess over a nonlinear limit
    double demand = 1e-9;     // relative excess of a rate over its demand
    double monotone = 1e-9;   // relative objective increase between outer iterations
};

/// Violations found in one drop, one human-readable line each.
inline std::vector<std::string> check_drop(const DropResult &d, const ComplianceTolerances &tol = {})
{
    std::vector<std::string> out;
    auto tag = [&](const std::string &scheme) { return "drop " + std::to_string(d.index) + " " + scheme + ": "; };
    for (const auto &so : d.schemes) {
        if (!so.result) {
            out.push_back(tag(so.scheme) + "failed: " + so.error);
            continue;
        }
        const SchemeResult &r = *so.result;
        for (std::size_t k = 0; k < r.rates.size(); ++k)
            if (r.rates[k] > d.demands[k] * (1.0 + tol.demand))
                out.push_back(tag(so.scheme) + "rate of user " + std::to_string(k) + " exceeds its demand");
        if (!r.precoders.empty()) {
            const ConstraintReport cr = evaluate_constraints(so.constraints, r.precoders);
            if (cr.worst_linear_ratio > 1.0 + tol.linear)
                out.push_back(tag(so.scheme) + "linear power constraint exceeded (ratio " +
                              std::to_string(cr.worst_linear_ratio) + ")");
            if (cr.worst_nonlinear_ratio > 1.0 + tol.nonlinear)
                out.push_back(tag(so.scheme) + "nonlinear power constraint exceeded (ratio " +
                              std::to_string(cr.worst_nonlinear_ratio) + ")");
        } else {
            for (std::size_t b = 0; b < r.beam_powers.size(); ++b)
                for (const auto &c : so.constraints.linear)
                    if (c.shaping(b, b).real() > 0 && r.beam_powers[b] > c.limit * (1.0 + tol.linear))
                        out.push_back(tag(so.scheme) + "beam " + std::to_string(b) + " exceeds its power limit");
        }
        for (std::size_t i = 1; i < r.trace.size(); ++i)
            if (r.trace[i] - r.trace[i - 1] >
                tol.monotone * std::max({1.0, std::abs(r.trace[i - 1]), std::abs(r.trace.front())}))
                out.push_back(tag(so.scheme) + "objective increased at outer iteration " + std::to_string(i));
        if (r.max_raw_increase > tol.monotone)
            out.push_back(tag(so.scheme) + "an outer iteration proposed an objective increase");
    }
    return out;
}

// ------------------------------------------------------------------------
// CSV
// ------------------------------------------------------------------------

inline constexpr const char *kCsvHeader =
    "scheme,beam,mean_rate_bps,mean_power_W,rate_efficiency_bps_per_W,throughput_bps,l2_cost";

namespace detail {
inline std::string sci(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17e", v);
    return buf;
}
} // namespace detail

/// One row per (scheme, beam), then one summary row per scheme with beam "all".
/// Per-beam rows leave the summary columns empty and vice versa.
inline std::string format_csv(const CampaignReport &rep)
{
    using detail::sci;
    std::ostringstream o;
    o << kCsvHeader << '\n';
    for (const auto &s : rep.schemes)
        for (std::size_t b = 0; b < s.mean_rate.size(); ++b)
            o << s.scheme << ',' << b << ',' << sci(s.mean_rate[b]) << ',' << sci(s.mean_power[b]) << ','
              << sci(s.rate_efficiency[b]) << ",,\n";
    for (const auto &s : rep.schemes)
        o << s.scheme << ",all,,,," << sci(s.mean_throughput) << ',' << sci(s.mean_l2_cost) << '\n';
    return o.str();
}

inline void emit_csv(const CampaignReport &rep, const std::string &path) { write_file(path, format_csv(rep)); }

/// Rebuilds the per-scheme means from CSV text written by format_csv.
inline CampaignReport parse_csv(const std::string &text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != kCsvHeader)
        throw std::invalid_argument("csv: missing or unexpected header");
    CampaignReport rep;
    auto scheme = [&](const std::string &name) -> SchemeAggregate & {
        for (auto &s : rep.schemes)
            if (s.scheme == name)
                return s;
        rep.schemes.push_back({});
        rep.schemes.back().scheme = name;
        return rep.schemes.back();
    };
    auto num = [](const std::string &v) {
        char *end = nullptr;
        const double x = std::strtod(v.c_str(), &end);
        if (v.empty() || end != v.c_str() + v.size())
            throw std::invalid_argument("csv: bad number '" + v + "'");
        return x;
    };
    while (std::getline(in, line)) {
        if (detail::trim(line).empty())
            continue;
        std::vector<std::string> f;
        std::string item;
        std::istringstream ls(line);
        while (std::getline(ls, item, ','))
            f.push_back(item);
        while (f.size() < 7)
            f.emplace_back();
        SchemeAggregate &s = scheme(f[0]);
        if (f[1] == "all") {
            s.mean_throughput = num(f[5]);
            s.mean_l2_cost = num(f[6]);
        } else {
            const auto b = static_cast<std::size_t>(std::stoul(f[1]));
            if (s.mean_rate.size() <= b) {
                s.mean_rate.resize(b + 1);
                s.mean_power.resize(b + 1);
                s.rate_efficiency.resize(b + 1);
            }
            s.mean_rate[b] = num(f[2]);
            s.mean_power[b] = num(f[3]);
            s.rate_efficiency[b] = num(f[4]);
        }
    }
    return rep;
}

// ------------------------------------------------------------------------
// Plots (SVG)
// ------------------------------------------------------------------------

enum class PlotKind { Rates, Powers, Efficiency, ObjectiveTrace };

inline PlotKind parse_plot_kind(const std::string &s)
{
    if (s == "rates")
        return PlotKind::Rates;
    if (s == "powers")
        return PlotKind::Powers;
    if (s == "efficiency")
        return PlotKind::Efficiency;
    if (s == "objective_trace")
        return PlotKind::ObjectiveTrace;
    throw std::invalid_argument("unknown plot kind '" + s + "'");
}

namespace detail {

inline std::string svg_color(std::size_t i)
{
    static const char *palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return palette[i % (sizeof palette / sizeof palette[0])];
}

inline std::string fmt(double v, const char *f = "%.4g")
{
    char buf[40];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

} // namespace detail

/// Grouped bars per beam index, or one polyline of objective versus outer iteration per scheme.
inline std::string format_plot(const CampaignReport &rep, PlotKind kind)
{
    using detail::fmt;
    if (rep.schemes.empty())
        throw std::invalid_argument("plot: report has no schemes");
    const double width = 800, height = 480, left = 80, right = 160, top = 40, bottom = 60;
    const double pw = width - left - right;
    const double ph = height - top - bottom;
    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

    std::string title;
    std::string ylabel;
    if (kind == PlotKind::ObjectiveTrace) {
        title = "Objective per outer iteration";
        ylabel = "objective";
        std::size_t longest = 1;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (const auto &s : rep.schemes) {
            longest = std::max(longest, s.objective_trace.size());
            for (double v : s.objective_trace) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        if (!std::isfinite(lo)) {
            lo = 0;
            hi = 1;
        }
        if (hi <= lo)
            hi = lo + 1;
        const double xs = longest > 1 ? pw / static_cast<double>(longest - 1) : pw;
        for (std::size_t si = 0; si < rep.schemes.size(); ++si) {
            const auto &t = rep.schemes[si].objective_trace;
            if (t.empty())
                continue;
            o << "<polyline class=\"trace\" fill=\"none\" stroke=\"" << detail::svg_color(si)
              << "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < t.size(); ++i)
                o << (i ? " " : "") << fmt(left + xs * static_cast<double>(i), "%.3f") << ','
                  << fmt(top + ph * (hi - t[i]) / (hi - lo), "%.3f");
            o << "\"/>\n";
        }
        o << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 15
          << "\" text-anchor=\"middle\" font-size=\"14\">outer iteration</text>\n";
        o << "<text x=\"" << left - 8 << "\" y=\"" << top + 5 << "\" text-anchor=\"end\" font-size=\"11\">"
          << fmt(hi) << "</text>\n";
        o << "<text x=\"" << left - 8 << "\" y=\"" << top + ph << "\" text-anchor=\"end\" font-size=\"11\">"
          << fmt(lo) << "</text>\n";
    } else {
        auto values = [&](const SchemeAggregate &s) -> const RealVector & {
            switch (kind) {
            case PlotKind::Rates: return s.mean_rate;
            case PlotKind::Powers: return s.mean_power;
            default: return s.rate_efficiency;
            }
        };
        title = kind == PlotKind::Rates    ? "Mean rate per beam"
                : kind == PlotKind::Powers ? "Mean power per beam"
                                           : "Rate efficiency per beam";
        ylabel = kind == PlotKind::Rates ? "bit/s" : kind == PlotKind::Powers ? "W" : "bit/s/W";
        std::size_t beams = 0;
        double hi = 0.0;
        for (const auto &s : rep.schemes) {
            beams = std::max(beams, values(s).size());
            for (double v : values(s))
                hi = std::max(hi, v);
        }
        if (!(hi > 0))
            hi = 1.0;
        const double group = beams ? pw / static_cast<double>(beams) : pw;
        const double bar = 0.8 * group / static_cast<double>(rep.schemes.size());
        for (std::size_t b = 0; b < beams; ++b) {
            const double gx = left + group * static_cast<double>(b);
            o << "<g class=\"group\" id=\"beam" << b << "\">\n";
            for (std::size_t si = 0; si < rep.schemes.size(); ++si) {
                const RealVector &v = values(rep.schemes[si]);
                const double val = b < v.size() ? v[b] : 0.0;
                const double hgt = ph * val / hi;
                o << "<rect x=\"" << fmt(gx + 0.1 * group + bar * static_cast<double>(si), "%.3f") << "\" y=\""
                  << fmt(top + ph - hgt, "%.3f") << "\" width=\"" << fmt(bar, "%.3f") << "\" height=\""
                  << fmt(hgt, "%.3f") << "\" fill=\"" << detail::svg_color(si) << "\"/>\n";
            }
            o << "<text x=\"" << fmt(gx + group / 2, "%.3f") << "\" y=\"" << top + ph + 18
              << "\" text-anchor=\"middle\" font-size=\"12\">" << b + 1 << "</text>\n</g>\n";
        }
        o << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 15
          << "\" text-anchor=\"middle\" font-size=\"14\">beam index</text>\n";
        o << "<text x=\"" << left - 8 << "\" y=\"" << top + 5 << "\" text-anchor=\"end\" font-size=\"11\">"
          << fmt(hi) << "</text>\n";
    }
    o << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n"
      << "<text x=\"20\" y=\"" << top + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 20 " << top + ph / 2
      << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
    for (std::size_t si = 0; si < rep.schemes.size(); ++si) {
        const double y = top + 20.0 * static_cast<double>(si);
        o << "<rect x=\"" << width - right + 15 << "\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\""
          << detail::svg_color(si) << "\"/>\n"
          << "<text x=\"" << width - right + 32 << "\" y=\"" << y + 11 << "\" font-size=\"12\">"
          << rep.schemes[si].scheme << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

inline void emit_plot(const CampaignReport &rep, const std::string &path, PlotKind kind)
{
    write_file(path, format_plot(rep, kind));
}

} // namespace mbsat
