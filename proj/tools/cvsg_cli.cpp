// cvsg: run, sweep, select and report for the guidance experiments.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvsg/harness.hpp"

namespace fs = std::filesystem;
using namespace cvsg;

namespace {

struct Options {
    std::string config;
    std::string out = "cvsg_out";
    std::optional<long long> seed;
    std::string method;
};

// error kinds map to exit codes
enum class Failure { usage = 2, contract = 3, numerical = 4, io = 5, internal = 1 };

int fail(Failure kind, const std::string& command, const std::string& message)
{
    static const char* names[] = {"", "internal", "usage", "contract", "numerical", "io"};
    nlohmann::json j{{"status", "error"},
                     {"kind", names[static_cast<int>(kind)]},
                     {"command", command},
                     {"message", message}};
    std::cerr << j.dump() << "\n";
    return static_cast<int>(kind);
}

KeyValues load_config(const std::string& path)
{
    if (path.empty()) return {};
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config " + path);
    return parse_key_values(is);
}

ExperimentConfig make_config(const Options& opt, const KeyValues& kv)
{
    ExperimentConfig c = config_from_key_values(kv);
    if (opt.seed) {
        require(*opt.seed >= 0, "--seed must be nonnegative");
        c.seeds = {static_cast<std::uint64_t>(*opt.seed)};
    }
    if (!opt.method.empty()) c.method = parse_method(opt.method);
    c.validate();
    return c;
}

SweepGrid grid_from(const KeyValues& kv)
{
    SweepGrid grid;
    for (const auto& [key, v] : kv) {
        if (key.rfind("sweep.", 0) != 0) continue;
        auto& axis = grid[key.substr(6)];
        for (const auto& tok : detail::split(v, ',')) axis.push_back(detail::to_double(key, tok));
        apply_grid_value(ExperimentConfig{}, key.substr(6), axis.empty() ? 1.0 : axis.front());
    }
    return grid;
}

void write_config(const fs::path& p, const ExperimentConfig& c)
{
    auto os = open_out(p);
    for (const auto& [k, v] : to_key_values(c)) os << k << "=" << v << "\n";
}

void write_scenario(const fs::path& p, const ScenarioBundle& b)
{
    auto os = open_out(p);
    write_bundle(os, b);
}

void write_diagnostics(const fs::path& p, const std::vector<RunRecord>& records)
{
    auto os = open_out(p);
    os << "# label method hash trajectories guided_steps min_guided max_guided degenerate clipped bandwidth seconds_per_sample errors\n";
    for (const auto& r : records) {
        const auto& d = r.diagnostics;
        os << (r.label.empty() ? "-" : r.label) << " " << to_string(r.config.method) << " " << hash_hex(r.hash) << " "
           << d.trajectories << " " << d.guided_steps << " " << d.min_guided_steps << " " << d.max_guided_steps << " "
           << d.degenerate_fallbacks << " " << d.clipped << " " << d.bandwidth << " " << d.seconds_per_sample << " "
           << r.errors.size() << "\n";
        for (const auto& e : r.errors) os << "#   error: " << e << "\n";
    }
}

std::vector<ResultRow> load_results(const fs::path& dir)
{
    const auto p = dir / "results.csv";
    std::ifstream is(p);
    if (!is) throw IoError("cannot read " + p.string());
    return read_results_table(is);
}

void write_selection(std::ostream& os, const std::map<int, std::string>& chosen)
{
    os << "# region chosen_config\n";
    for (const auto& [region, label] : chosen) os << region << " " << label << "\n";
}

std::size_t error_count(const std::vector<RunRecord>& records)
{
    std::size_t n = 0;
    for (const auto& r : records) n += r.errors.size();
    return n;
}

int cmd_run(const Options& opt)
{
    const auto c = make_config(opt, load_config(opt.config));
    const auto bundle = build_scenario(c.scenario);
    const auto rec = run_experiment(c, bundle);
    const std::vector<RunRecord> records{rec};
    const fs::path out = ensure_dir(opt.out);
    emit_reports(records, out);
    write_config(out / "config.txt", c);
    write_scenario(out / "scenario.txt", bundle);
    write_diagnostics(out / "diagnostics.txt", records);
    if (rec.seeds.empty()) throw std::runtime_error(rec.errors.empty() ? "no seed completed" : rec.errors.front());
    const auto& a = rec.aggregate;
    std::printf("%s %s avg_f1=%.4f worst_f1=%.4f worst_region=%s errors=%zu\n", to_string(c.method).c_str(),
                hash_hex(rec.hash).c_str(), a.average.f1, a.worst.f1,
                c.scenario.regions[static_cast<std::size_t>(a.worst_region)].c_str(), rec.errors.size());
    return 0;
}

int cmd_sweep(const Options& opt)
{
    const auto kv = load_config(opt.config);
    const auto c = make_config(opt, kv);
    const auto grid = grid_from(kv);
    const auto records = sweep(c, grid);
    const fs::path out = ensure_dir(opt.out);
    emit_reports(records, out);
    write_config(out / "config.txt", c);
    write_scenario(out / "scenario.txt", build_scenario(c.scenario));
    write_diagnostics(out / "diagnostics.txt", records);
    std::vector<RunRecord> complete;
    for (const auto& r : records)
        if (!r.seeds.empty()) complete.push_back(r);
    if (!complete.empty()) {
        auto os = open_out(out / "selection.txt");
        write_selection(os, one_region_out_select(complete));
    }
    std::printf("points=%zu completed=%zu errors=%zu\n", records.size(), complete.size(), error_count(records));
    return 0;
}

int cmd_select(const Options& opt)
{
    const fs::path dir = opt.out;
    std::vector<SelectionEntry> entries;
    for (const auto& r : aggregate_rows(load_results(dir))) {
        SelectionEntry e{r.config == "-" ? r.hash : r.config, {}};
        for (const auto& [region, m] : r.aggregate.per_region) e.region_f1[region] = m.f1;
        entries.push_back(std::move(e));
    }
    const auto chosen = one_region_out_select(entries);
    {
        auto os = open_out(dir / "selection.txt");
        write_selection(os, chosen);
    }
    write_selection(std::cout, chosen);
    return 0;
}

int cmd_report(const Options& opt)
{
    const fs::path dir = opt.out;
    const auto records = aggregate_rows(load_results(dir));
    std::vector<std::string> names;
    if (!opt.config.empty()) names = make_config(opt, load_config(opt.config)).scenario.regions;
    {
        auto os = open_out(dir / "summary.txt");
        write_summary(os, records, names);
    }
    write_summary(std::cout, records, names);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Vendi Score guidance experiments on synthetic region x object worlds"};
    app.require_subcommand(1);
    Options opt;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "flat key=value config file");
        sub->add_option("--out", opt.out, "output directory");
        sub->add_option("--seed", opt.seed, "single seed replacing the configured seed list");
        sub->add_option("--method", opt.method, "baseline, fg_loss, fg_entropy, vsg, cvsg or context_only");
    };
    auto* run = app.add_subcommand("run", "run one configuration and write reports");
    auto* sw = app.add_subcommand("sweep", "run the grid given by sweep.<axis>=v1,v2 keys");
    auto* sel = app.add_subcommand("select", "one-region-out selection over <out>/results.csv");
    auto* rep = app.add_subcommand("report", "rebuild summary.txt from <out>/results.csv");
    for (auto* s : {run, sw, sel, rep}) add_common(s);

    std::string command = "cvsg";
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(Failure::usage, command, e.what());
    }

    try {
        command = app.get_subcommands().front()->get_name();
        if (run->parsed()) return cmd_run(opt);
        if (sw->parsed()) return cmd_sweep(opt);
        if (sel->parsed()) return cmd_select(opt);
        if (rep->parsed()) return cmd_report(opt);
    } catch (const ContractViolation& e) {
        return fail(Failure::contract, command, e.what());
    } catch (const NumericalError& e) {
        return fail(Failure::numerical, command, e.what());
    } catch (const ScheduleInvariantError& e) {
        return fail(Failure::numerical, command, e.what());
    } catch (const IoError& e) {
        return fail(Failure::io, command, e.what());
    } catch (const std::exception& e) {
        return fail(Failure::internal, command, e.what());
    }
    return fail(Failure::usage, command, "no subcommand");
}
