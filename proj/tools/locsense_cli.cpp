// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: bandwidth sweeps, SNR calibration, resolution
// tables, PEB/OEB bound maps, and Monte-Carlo simulation runs, all driven
// by a sectioned key-value config file. CSV goes to --out.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "locsense/locsense.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNonIdentifiable = 3;

struct CommonArgs {
    std::string config_path;
    std::string out_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    long long trials = 0;

    locsense::ConfigFile load() const {
        if (config_path.empty()) return locsense::ConfigFile::from_string("");
        return locsense::ConfigFile::from_file(config_path);
    }

    void apply_overrides(locsense::CaseStudyConfig& cfg) const {
        if (seed_set) cfg.master_seed = seed;
        if (trials > 0) cfg.trials = int(trials);
    }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "scenario config file");
    cmd->add_option("--out", args.out_path, "output CSV path");
    cmd->add_option("--seed", args.seed, "master seed override")
        ->each([&](const std::string&) { args.seed_set = true; });
    cmd->add_option("--trials", args.trials, "Monte-Carlo trial count override");
}

int run_sweep(const CommonArgs& args, const std::string& plot_dir) {
    auto cfg_file = args.load();
    auto cfg = locsense::CaseStudyConfig::from_config(cfg_file);
    cfg_file.finish();
    args.apply_overrides(cfg);
    locsense::SweepResult result = locsense::run_case_study(cfg);
    locsense::CsvTable csv = locsense::sweep_csv(result);
    if (!args.out_path.empty()) {
        csv.write(args.out_path);
        std::printf("wrote %zu sweep rows to %s\n", csv.n_rows(), args.out_path.c_str());
    } else {
        std::fputs(csv.to_string().c_str(), stdout);
    }
    if (!plot_dir.empty()) {
        locsense::write_plot_data(result, plot_dir);
        std::printf("wrote plot data to %s\n", plot_dir.c_str());
    }
    return kExitOk;
}

int run_calibrate(const CommonArgs& args) {
    auto cfg_file = args.load();
    auto cfg = locsense::CaseStudyConfig::from_config(cfg_file);
    cfg_file.finish();
    locsense::Calibration cal = locsense::calibrate_snr(cfg);
    locsense::CsvTable csv({"per_path_snr_db", "per_path_snr_linear", "achieved_crb_m",
                            "closed_form_crb_m", "reference_comparable"});
    csv.add_row({cal.per_path_snr_db, cal.per_path_snr, cal.achieved_crb_m,
                 cal.closed_form_crb_m,
                 std::string(cal.reference_comparable ? "true" : "false")});
    if (!args.out_path.empty())
        csv.write(args.out_path);
    else
        std::fputs(csv.to_string().c_str(), stdout);
    return kExitOk;
}

int run_resolve(const CommonArgs& args) {
    auto cfg_file = args.load();
    auto cfg = locsense::CaseStudyConfig::from_config(cfg_file);
    cfg_file.finish();
    locsense::CsvTable csv({"bandwidth_mhz", "delay_res_s", "delay_res_m",
                            "doppler_res_hz", "velocity_res_mps"});
    for (double w : cfg.bandwidths_hz) {
        locsense::GridConfig grid = cfg.grid_for(w);
        auto r = locsense::resolution_limits(grid, locsense::ArrayGeometry::single());
        csv.add_row({w / 1e6, r.delay_res_s, r.delay_res_m, r.doppler_res_hz,
                     r.velocity_res_mps});
    }
    if (!args.out_path.empty())
        csv.write(args.out_path);
    else
        std::fputs(csv.to_string().c_str(), stdout);
    return kExitOk;
}

int run_bound(const CommonArgs& args) {
    auto cfg_file = args.load();
    auto cfg = locsense::BoundMapConfig::from_config(cfg_file);
    cfg_file.finish();
    auto cells = locsense::run_bound_map(cfg);
    bool any_identifiable = false;
    for (const auto& c : cells) any_identifiable = any_identifiable || c.identifiable;
    locsense::CsvTable csv = locsense::bound_map_csv(cells);
    if (!args.out_path.empty())
        csv.write(args.out_path);
    else
        std::fputs(csv.to_string().c_str(), stdout);
    if (!any_identifiable) {
        std::fputs("error: scenario is non-identifiable everywhere on the map\n", stderr);
        return kExitNonIdentifiable;
    }
    return kExitOk;
}

int run_simulate(const CommonArgs& args, const std::string& mode, double bandwidth_mhz) {
    auto cfg_file = args.load();
    if (mode == "sensing") {
        auto cfg = locsense::CaseStudyConfig::from_config(cfg_file);
        cfg_file.finish();
        args.apply_overrides(cfg);
        double w = bandwidth_mhz > 0.0 ? bandwidth_mhz * 1e6 : cfg.bandwidths_hz.back();
        auto per_trial = locsense::run_detection_sim(cfg, w, cfg.trials);
        locsense::CsvTable csv = locsense::detections_csv(per_trial);
        if (!args.out_path.empty())
            csv.write(args.out_path);
        else
            std::fputs(csv.to_string().c_str(), stdout);
        return kExitOk;
    }
    if (mode == "localization") {
        auto cfg = locsense::LocalizationSimConfig::from_config(cfg_file);
        cfg_file.finish();
        if (args.seed_set) cfg.master_seed = args.seed;
        if (args.trials > 0) cfg.trials = int(args.trials);
        auto estimates = locsense::run_localization_sim(cfg);
        locsense::CsvTable csv = locsense::states_csv(estimates);
        if (!args.out_path.empty())
            csv.write(args.out_path);
        else
            std::fputs(csv.to_string().c_str(), stdout);
        return kExitOk;
    }
    throw locsense::ConfigError("simulate mode must be sensing or localization");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"radio localization and sensing toolkit"};
    app.require_subcommand(1);

    CommonArgs sweep_args, cal_args, res_args, bound_args, sim_args;
    std::string plot_dir;
    std::string sim_mode = "sensing";
    double sim_bandwidth_mhz = 0.0;

    auto* sweep = app.add_subcommand("sweep", "bandwidth sweep with bounds and RMSE");
    add_common(sweep, sweep_args);
    sweep->add_option("--plot-data", plot_dir, "directory for per-curve x/y files");

    auto* cal = app.add_subcommand("calibrate", "solve the per-path SNR scaling");
    add_common(cal, cal_args);

    auto* res = app.add_subcommand("resolve", "resolution limits per bandwidth");
    add_common(res, res_args);

    auto* bound = app.add_subcommand("bound", "PEB/OEB map over an area");
    add_common(bound, bound_args);

    auto* sim = app.add_subcommand("simulate", "Monte-Carlo estimation runs");
    add_common(sim, sim_args);
    sim->add_option("--mode", sim_mode, "sensing or localization");
    sim->add_option("--bandwidth-mhz", sim_bandwidth_mhz, "sensing-mode bandwidth");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sweep->parsed()) return run_sweep(sweep_args, plot_dir);
        if (cal->parsed()) return run_calibrate(cal_args);
        if (res->parsed()) return run_resolve(res_args);
        if (bound->parsed()) return run_bound(bound_args);
        if (sim->parsed()) return run_simulate(sim_args, sim_mode, sim_bandwidth_mhz);
    } catch (const locsense::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const locsense::NonIdentifiableError& e) {
        std::fprintf(stderr, "non-identifiable scenario: %s\n", e.what());
        return kExitNonIdentifiable;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return kExitOk;
}
