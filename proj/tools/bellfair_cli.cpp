// Command-line front end: run, chsh, sweep, control, classify.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "bellfair/bellfair.hpp"
#include "bellfair/io.hpp"

namespace
{
using namespace bellfair;
using io::Format;
using io::json;
using io::RunMode;

constexpr char const kSeedEnv[] = "BELLFAIR_SEED";

struct CommonOptions
{
    std::optional<std::uint64_t> seed;
    std::optional<std::uint32_t> shards;
    std::string config_path;
    std::string out_path;
    std::string format = "csv";
};

void add_common(CLI::App* cmd, CommonOptions& o)
{
    cmd->add_option("--seed", o.seed, "Master seed (overrides config and $BELLFAIR_SEED)");
    cmd->add_option("--shards", o.shards, "Number of contiguous trial shards")
        ->check(CLI::Range(1u, 4096u));
    cmd->add_option("--config", o.config_path, "JSON configuration document")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out_path, "Output file (default: stdout)");
    cmd->add_option("--format", o.format, "csv or json-lines")
        ->check(CLI::IsMember({"csv", "json-lines", "jsonl"}));
}

std::string read_file(std::string const& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t env_default_seed()
{
    char const* v = std::getenv(kSeedEnv);
    if (!v || !*v)
        return 0;
    char* end = nullptr;
    errno = 0;
    unsigned long long const s = std::strtoull(v, &end, 10);
    if (errno != 0 || *end != '\0' || v[0] == '-')
        throw ConfigError(kSeedEnv, "expected an unsigned 64-bit integer");
    return s;
}

io::ResolvedConfig load_config(CommonOptions const& o, RunMode mode)
{
    std::string const text = o.config_path.empty() ? "{}" : read_file(o.config_path);
    io::ResolvedConfig cfg = io::parse_config(text, mode, env_default_seed());
    if (o.seed)
        io::set_seed(cfg, *o.seed);
    if (o.shards)
        io::set_shards(cfg, *o.shards);
    return cfg;
}

//! Destination for results plus the manifest that accompanies them.
class Output
{
  public:
    Output(CommonOptions const& o) : path_(o.out_path), format_(io::parse_format(o.format))
    {
        if (!path_.empty())
        {
            file_ = std::make_unique<std::ofstream>(path_, std::ios::binary);
            if (!*file_)
                throw std::runtime_error("cannot open output " + path_);
        }
    }

    std::ostream& stream() { return file_ ? *file_ : std::cout; }
    Format format() const { return format_; }

    //! JSON-lines streams carry the manifest as their first record; CSV gets
    //! a companion <out>.manifest.json (or stderr when writing to stdout).
    void manifest(io::RunManifest const& m)
    {
        if (format_ == Format::json_lines)
        {
            io::write_manifest(stream(), m);
        }
        else if (!path_.empty())
        {
            std::ofstream side(path_ + ".manifest.json", std::ios::binary);
            io::write_manifest(side, m);
        }
        else
        {
            io::write_manifest(std::cerr, m);
        }
    }

    void finish()
    {
        stream().flush();
        if (!stream())
            throw std::runtime_error("failed writing output "
                                     + (path_.empty() ? std::string("<stdout>") : path_));
    }

  private:
    std::string path_;
    Format format_;
    std::unique_ptr<std::ofstream> file_;
};

void cmd_run(CommonOptions const& o, std::string const& event_log)
{
    io::ResolvedConfig cfg = load_config(o, RunMode::run);
    if (!event_log.empty())
        cfg.event_log = event_log;
    Output out(o);
    out.manifest(io::make_manifest(cfg));

    CoincidenceCounts counts;
    if (!cfg.event_log.empty())
    {
        std::ofstream log(cfg.event_log, std::ios::binary);
        if (!log)
            throw std::runtime_error("cannot open event log " + cfg.event_log);
        io::EventLogWriter writer(log);
        counts = run_batch(cfg.experiment, std::ref(writer));
        if (!log.flush())
            throw std::runtime_error("failed writing event log " + cfg.event_log);
    }
    else
    {
        counts = run_batch(cfg.experiment);
    }
    io::write_counts(out.stream(), cfg.experiment, counts, out.format());
    out.finish();
}

void cmd_chsh(CommonOptions const& o)
{
    io::ResolvedConfig cfg = load_config(o, RunMode::chsh);
    Output out(o);
    out.manifest(io::make_manifest(cfg));
    ChshResult const r = chsh(cfg.experiment, cfg.chsh_angles);
    io::write_chsh(out.stream(), r, out.format());
    out.finish();
}

void report_verdict(FairnessVerdict const& v, std::string const& verdict_path,
                    Format fmt, std::ostream* inline_stream)
{
    if (!verdict_path.empty())
    {
        std::ofstream vf(verdict_path, std::ios::binary);
        if (!vf)
            throw std::runtime_error("cannot open " + verdict_path);
        io::write_verdict(vf, v, fmt);
    }
    if (inline_stream)
        io::write_verdict(*inline_stream, v, Format::json_lines);
    std::cerr << "verdict: " << to_string(v.classification)
              << " (max harmonic " << io::format_real(v.significance_sigma)
              << " sigma, p_flat " << io::format_real(v.spectrum.p_flat) << ")\n";
}

void cmd_sweep(CommonOptions const& o, std::string const& verdict_path)
{
    io::ResolvedConfig cfg = load_config(o, RunMode::sweep);
    Output out(o);
    out.manifest(io::make_manifest(cfg));
    SweepResult const sweep = run_sweep(cfg.sweep);
    io::write_sweep(out.stream(), sweep, out.format());
    FairnessVerdict const v = classify(sweep, cfg.thresholds);
    report_verdict(v, verdict_path, out.format(),
                   out.format() == Format::json_lines ? &out.stream() : nullptr);
    out.finish();
}

void cmd_control(CommonOptions const& o)
{
    io::ResolvedConfig cfg = load_config(o, RunMode::control);
    Output out(o);
    out.manifest(io::make_manifest(cfg));
    ControlReport const r = singlet_control(cfg.experiment, cfg.control_settings);
    io::write_control(out.stream(), r, out.format());
    out.finish();
}

void cmd_classify(CommonOptions const& o, std::string const& input)
{
    // Only thresholds matter here; the rest of the document is still validated
    io::ResolvedConfig cfg = load_config(o, RunMode::sweep);
    std::ifstream in(input, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open sweep table " + input);
    SweepResult const sweep = io::sweep_from_points(io::read_sweep_csv(in));
    Output out(o);
    json m = io::to_json(io::make_manifest(cfg));
    m["input_digest"] = io::sha256_hex(read_file(input));
    if (out.format() == Format::json_lines)
        out.stream() << m.dump() << '\n';
    else
        std::cerr << m.dump() << '\n';
    io::write_verdict(out.stream(), classify(sweep, cfg.thresholds), out.format());
    out.finish();
}

int fail(char const* kind, std::string const& message, int code,
         std::string const& key = {})
{
    json err = {{"record", "error"}, {"kind", kind}, {"message", message}};
    if (!key.empty())
        err["key"] = key;
    std::cerr << err.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Monte Carlo fair-sampling test for two-channel Bell experiments"};
    app.set_version_flag("--version", std::string(bellfair::kVersion));
    app.require_subcommand(1);

    CommonOptions opts;
    std::string event_log, verdict_path, input;

    auto* run = app.add_subcommand("run", "Single analyzer setting: coincidence counts");
    add_common(run, opts);
    run->add_option("--event-log", event_log, "Write per-trial events to this file");

    auto* chsh_cmd = app.add_subcommand("chsh", "CHSH value from four setting pairs");
    add_common(chsh_cmd, opts);

    auto* sweep = app.add_subcommand("sweep", "Source-angle sweep at fixed analyzers");
    add_common(sweep, opts);
    sweep->add_option("--verdict-out", verdict_path, "Also write the verdict here");

    auto* control = app.add_subcommand("control", "R_d of the singlet source across settings");
    add_common(control, opts);

    auto* classify_cmd
        = app.add_subcommand("classify", "Re-analyze a stored sweep CSV table");
    add_common(classify_cmd, opts);
    classify_cmd->add_option("input", input, "Sweep CSV")->required()->check(
        CLI::ExistingFile);

    try
    {
        app.parse(argc, argv);
    }
    catch (CLI::Success const& e)
    {
        return app.exit(e);
    }
    catch (CLI::ParseError const& e)
    {
        return fail("usage", e.what(), e.get_exit_code() ? e.get_exit_code() : 2);
    }

    try
    {
        if (run->parsed())
            cmd_run(opts, event_log);
        else if (chsh_cmd->parsed())
            cmd_chsh(opts);
        else if (sweep->parsed())
            cmd_sweep(opts, verdict_path);
        else if (control->parsed())
            cmd_control(opts);
        else if (classify_cmd->parsed())
            cmd_classify(opts, input);
    }
    catch (bellfair::ConfigError const& e)
    {
        return fail("config", e.what(), 2, e.key());
    }
    catch (bellfair::ProtocolError const& e)
    {
        return fail("protocol", e.what(), 3);
    }
    catch (bellfair::NoDataError const& e)
    {
        return fail("no_data", e.what(), 4);
    }
    catch (std::exception const& e)
    {
        return fail("runtime", e.what(), 1);
    }
    return 0;
}
