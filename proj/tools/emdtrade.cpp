// Command-line front end. Exit codes: 0 success, 2 config error, 3 input error.
// EMDTRADE_LOG=quiet|info|debug controls stderr chatter (default info).

#include "emdtrade/emdtrade.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

namespace {

using namespace emdtrade;

enum class LogLevel { Quiet, Info, Debug };

LogLevel log_level() {
    const char* v = std::getenv("EMDTRADE_LOG");
    if (!v) return LogLevel::Info;
    const std::string s(v);
    if (s == "quiet" || s == "0") return LogLevel::Quiet;
    if (s == "debug" || s == "2") return LogLevel::Debug;
    return LogLevel::Info;
}

void info(const std::string& msg) {
    if (log_level() != LogLevel::Quiet) std::cerr << "emdtrade: " << msg << '\n';
}

int run_command(const std::string& config_path, const std::string& out_dir, std::size_t jobs, const std::string& only) {
    const auto cfg = pipeline::ExperimentConfig::load(config_path);
    const auto filter = pipeline::OnlyFilter::parse(only);
    info("running " + std::to_string(cfg.markets.size()) + " market(s) with " + std::to_string(jobs) + " job(s)" +
         (cfg.flags.causal_emd ? "" : "; EMD mode LOOK-AHEAD"));
    const auto report = pipeline::run_experiment(cfg, jobs, filter);
    pipeline::emit_report(report, out_dir);
    std::size_t skipped = 0;
    for (const auto& r : report.rows) skipped += r.skipped();
    info("wrote " + std::to_string(report.rows.size()) + " rows (" + std::to_string(skipped) + " skipped) to " + out_dir);
    if (log_level() == LogLevel::Debug)
        for (const auto& r : report.rows)
            if (r.skipped())
                std::cerr << "  skipped " << r.market << '/' << pipeline::cluster_name(r.cluster) << '/'
                          << pipeline::source_name(r.source) << '/' << learners::kind_name(r.learner) << '/'
                          << pipeline::fraction_name(r.test_fraction) << ": " << r.skip_reason << '\n';
    return 0;
}

int synth_command(const std::string& spec_path, const std::string& out) {
    auto kv = KeyValueConfig::load(spec_path);
    const auto spec = synth::SynthSpec::from_config(kv);
    const auto m = synth::generate(spec);
    write_candles(m.candles, out);

    const auto policy = synth::bayes_policy(m.returns, spec);
    const auto realised = apc(policy, m.returns).apc;
    const auto b = synth::bayes_summary(spec);
    nlohmann::ordered_json meta;
    meta["spec"] = kv.echo();
    meta["bayes"] = {{"p_trigger_quiet", b.p_trigger_quiet},
                     {"p_trigger_after", b.p_trigger_after},
                     {"stationary_trigger_probability", b.pi},
                     {"expected_apc_per_step", b.apc_per_step},
                     {"expected_apc_total", b.apc_per_step * static_cast<double>(m.returns.size())},
                     {"realised_apc_total", realised}};
    std::ofstream f(out + ".meta.json");
    if (!f) throw InputError("cannot write '" + out + ".meta.json'");
    f << meta.dump(2) << '\n';
    info("wrote " + std::to_string(m.candles.size()) + " candles to " + out);
    return 0;
}

int decompose_command(const std::string& input, const std::string& column, const std::string& out) {
    const auto table = csv::read_table(input);
    const auto idx = table.column_index(column);
    if (!idx) throw InputError(input + ": no column named '" + column + "'");
    std::vector<double> x;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        auto v = *idx < table.rows[r].size() ? csv::parse_double(table.rows[r][*idx]) : std::nullopt;
        if (!v) throw InputError(input + ":" + std::to_string(table.line_numbers[r]) + ": bad value in '" + column + "'");
        x.push_back(*v);
    }
    if (x.size() < emd::kMinDecomposeLength) throw InputError(input + ": need at least 8 values to decompose");
    const auto d = emd::decompose(x, {}, column);
    emd::write_decomposition(d, x, out);
    info("wrote " + std::to_string(d.imf_count()) + " IMFs to " + out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EMD + GMM market-movement experiments"};
    app.require_subcommand(1);

    std::string config, out_dir, only;
    std::size_t jobs = 1;
    auto* run = app.add_subcommand("run", "Run the experiment grid from a config file");
    run->add_option("--config", config, "Experiment config (key = value)")->required();
    run->add_option("--out", out_dir, "Output directory")->required();
    run->add_option("--jobs", jobs, "Worker threads (0 = hardware concurrency)");
    run->add_option("--only", only, "Cell filter, e.g. market=SYN,cluster=all,source=high,learner=knn,fraction=0.3");

    std::string spec_path, synth_out;
    auto* syn = app.add_subcommand("synth", "Generate a synthetic candle file with a planted regime");
    syn->add_option("--spec", spec_path, "Synthetic market spec (key = value)")->required();
    syn->add_option("--out", synth_out, "Candle CSV to write")->required();

    std::string input, column, dec_out;
    auto* dec = app.add_subcommand("decompose", "Decompose one column of a CSV file into IMFs");
    dec->add_option("--input", input, "CSV file with a header row")->required();
    dec->add_option("--column", column, "Column name")->required();
    dec->add_option("--out", dec_out, "Output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*run) {
            if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
            return run_command(config, out_dir, jobs, only);
        }
        if (*syn) return synth_command(spec_path, synth_out);
        if (*dec) return decompose_command(input, column, dec_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
