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
//
// Command-line front end: run, check, plot, feasibility.
// Exit codes: 0 success, 1 configuration error, 2 nonconvergence or failed
// check (outputs still written), 3 I/O error.

#include "mbsat/mbsat.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitSolver = 2;
constexpr int kExitIo = 3;

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> drops;
    std::optional<std::string> schemes;
    std::optional<std::string> objective;
    std::optional<int> matching_order;
    std::optional<std::string> constraints;
    std::optional<int> parallelism;
};

void add_common(CLI::App *cmd, Overrides &o)
{
    cmd->add_option("--config", o.config, "Config file (MBSAT_CONFIG overrides)");
    cmd->add_option("--seed", o.seed, "Master seed");
    cmd->add_option("--drops", o.drops, "Number of drops");
    cmd->add_option("--schemes", o.schemes, "Comma-separated scheme list");
    cmd->add_option("--objective", o.objective, "throughput | balancing | matching");
    cmd->add_option("--matching-order", o.matching_order, "Rate matching order n");
    cmd->add_option("--constraints", o.constraints, "per-beam | total | shared:<groups>");
    cmd->add_option("--parallelism", o.parallelism, "Concurrent drops");
}

mbsat::CampaignConfig resolve(const Overrides &o)
{
    mbsat::CampaignConfig c = mbsat::load_config(o.config);
    if (o.seed)
        c.seed = *o.seed;
    if (o.drops)
        mbsat::apply_setting(c, "drops", std::to_string(*o.drops));
    if (o.schemes)
        mbsat::apply_setting(c, "schemes", *o.schemes);
    if (o.matching_order)
        mbsat::apply_setting(c, "matching_order", std::to_string(*o.matching_order));
    if (o.objective)
        mbsat::apply_setting(c, "objective", *o.objective);
    if (o.constraints)
        mbsat::apply_setting(c, "constraints", *o.constraints);
    if (o.parallelism)
        c.parallelism = *o.parallelism;
    c.validate();
    return c;
}

void print_summary(const mbsat::CampaignReport &rep)
{
    std::printf("%-16s %6s %16s %16s %6s\n", "scheme", "drops", "throughput_bps", "l2_cost", "fail");
    for (const auto &s : rep.schemes)
        std::printf("%-16s %6d %16.6e %16.6e %6d\n", s.scheme.c_str(), s.drops, s.mean_throughput, s.mean_l2_cost,
                    s.failures + s.nonconverged);
}

int cmd_run(const Overrides &o, const std::string &out)
{
    const mbsat::CampaignConfig c = resolve(o);
    const mbsat::CampaignReport rep = mbsat::run_campaign(c);
    mbsat::emit_csv(rep, out);
    print_summary(rep);
    std::printf("report: %s (config hash %016llx)\n", out.c_str(), static_cast<unsigned long long>(rep.config_hash));
    return rep.all_converged() ? kExitOk : kExitSolver;
}

int cmd_check(const Overrides &o)
{
    const mbsat::CampaignConfig c = resolve(o);
    const auto drops = mbsat::run_drops(c, c.drops, c.parallelism);
    std::size_t violations = 0;
    for (const auto &d : drops)
        for (const auto &line : mbsat::check_drop(d)) {
            std::puts(line.c_str());
            ++violations;
        }
    std::printf("checked %zu drops x %zu schemes: %zu violation(s)\n", drops.size(), c.schemes.size(), violations);
    return violations == 0 ? kExitOk : kExitSolver;
}

int cmd_plot(const Overrides &o, const std::string &out, const std::string &report)
{
    std::filesystem::create_directories(out);
    mbsat::CampaignReport rep;
    bool with_trace = true;
    bool converged = true;
    if (!report.empty()) {
        rep = mbsat::parse_csv(mbsat::read_file(report));
        with_trace = false;
    } else {
        const mbsat::CampaignConfig c = resolve(o);
        rep = mbsat::run_campaign(c);
        converged = rep.all_converged();
    }
    for (const char *kind : {"rates", "powers", "efficiency", "objective_trace"}) {
        if (!with_trace && std::string(kind) == "objective_trace")
            continue;
        const std::string path = (std::filesystem::path(out) / (std::string(kind) + ".svg")).string();
        mbsat::emit_plot(rep, path, mbsat::parse_plot_kind(kind));
        std::printf("wrote %s\n", path.c_str());
    }
    return converged ? kExitOk : kExitSolver;
}

int cmd_feasibility(const Overrides &o, std::size_t drop)
{
    const mbsat::CampaignConfig c = resolve(o);
    const mbsat::DropInstance d = mbsat::make_drop(c.scenario, c.seed, drop);
    const auto cs = mbsat::build_constraints(c, mbsat::BeamLayout::single(d.channels.users()));
    const auto fr = mbsat::check_feasibility(d.channels.miso, d.demands, c.scenario.bandwidth,
                                             c.scenario.noise_power(), cs);
    std::printf("drop %zu (seed %llu): demand %s\n", drop, static_cast<unsigned long long>(d.seed),
                fr.feasible ? "feasible" : "infeasible");
    if (fr.solution) {
        std::printf("minimum normalized beam power gamma = %.9g\n", fr.solution->gamma);
        for (std::size_t b = 0; b < fr.solution->beam_powers.size(); ++b)
            std::printf("  beam %zu: demand %.6e bit/s, power %.6e W\n", b + 1, d.demands[b],
                        fr.solution->beam_powers[b]);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Multibeam satellite precoding simulator"};
    app.require_subcommand(1);

    Overrides run_o, check_o, plot_o, feas_o;
    std::string run_out = "report.csv";
    std::string plot_out = "plots";
    std::string plot_report;
    std::size_t feas_drop = 0;

    auto *run = app.add_subcommand("run", "Run a Monte-Carlo campaign and write the CSV report");
    add_common(run, run_o);
    run->add_option("--out", run_out, "CSV output path");

    auto *check = app.add_subcommand("check", "Run drops and verify constraint, demand-cap and monotonicity invariants");
    add_common(check, check_o);

    auto *plot = app.add_subcommand("plot", "Write SVG figures of a campaign");
    add_common(plot, plot_o);
    plot->add_option("--out", plot_out, "Output directory");
    plot->add_option("--report", plot_report, "Plot an existing CSV report instead of running a campaign");

    auto *feas = app.add_subcommand("feasibility", "Test whether one drop's demand can be met exactly");
    add_common(feas, feas_o);
    feas->add_option("--drop", feas_drop, "Drop index");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run)
            return cmd_run(run_o, run_out);
        if (*check)
            return cmd_check(check_o);
        if (*plot)
            return cmd_plot(plot_o, plot_out, plot_report);
        if (*feas)
            return cmd_feasibility(feas_o, feas_drop);
    } catch (const mbsat::IoError &e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::filesystem::filesystem_error &e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::invalid_argument &e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitSolver;
    }
    return kExitOk;
}
