#include "cli_commands.hpp"

#include "ssm/errors.hpp"
#include "ssm/http_service.hpp"
#include "ssm/mesh_io.hpp"
#include "ssm/observation_io.hpp"
#include "ssm/posterior.hpp"
#include "ssm/statismo_io.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace ssm::cli {

namespace {

using nlohmann::json;

class UsageError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, std::string_view bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw DataError("cannot write '" + path + "'");
    }
}

BasisConvention convention_from(const std::string& text)
{
    if (text == "auto") return BasisConvention::automatic;
    if (text == "orthonormal") return BasisConvention::orthonormal;
    if (text == "prescaled") return BasisConvention::prescaled;
    throw UsageError("--basis must be auto, orthonormal or prescaled");
}

PlyFormat ply_format_from(const std::string& text)
{
    if (text == "binary") return PlyFormat::binary_little_endian;
    if (text == "ascii") return PlyFormat::ascii;
    throw UsageError("--format must be ascii or binary");
}

LoadedModel load_model(const std::string& path, const std::string& basis)
{
    const std::string bytes = read_file(path);
    try {
        return load_statismo_detailed(bytes, convention_from(basis));
    } catch (const StatismoError& e) {
        throw DataError("'" + path + "': " + e.what());
    }
}

json vector_json(const Vector& v)
{
    return json(std::vector<double>(v.data(), v.data() + v.size()));
}

std::vector<double> parse_coefficient_list(const std::string& text)
{
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw UsageError("--coeffs entry '" + item + "' is not a number");
        }
    }
    return values;
}

struct Options
{
    std::string model;
    std::string basis = "auto";
    std::string output;
    std::string format = "binary";
    bool as_json = false;

    // sample
    std::optional<std::uint64_t> seed;
    std::string coeffs;
    std::string report;

    // posterior
    std::string obs;
    std::optional<double> rcond;

    // serve
    std::string host = "127.0.0.1";
    int port = 8080;
    double max_model_mib = 512;
    long long session_ttl = 1800;
    double default_rcond = kDefaultRcond;
    double async_threshold = 1e7;
    std::string ui_dir;
};

int cmd_info(const Options& o, std::ostream& out)
{
    const LoadedModel loaded = load_model(o.model, o.basis);
    const ShapeModel& m = loaded.model;
    if (o.as_json) {
        json meta = json::object();
        for (const auto& [k, v] : m.metadata()) meta[k] = v;
        out << json{{"path", o.model},
                    {"version", std::to_string(loaded.major_version) + "." + std::to_string(loaded.minor_version)},
                    {"n_vertices", m.num_vertices()},
                    {"n_components", m.num_components()},
                    {"n_triangles", m.triangles().size()},
                    {"variances", vector_json(m.variances())},
                    {"noise_variance", m.noise_variance()},
                    {"basis_convention", std::string(to_string(loaded.stored_convention))},
                    {"metadata", meta}}
                   .dump(2)
            << '\n';
        return kSuccess;
    }
    out << "model:            " << o.model << '\n'
        << "version:          " << loaded.major_version << '.' << loaded.minor_version << '\n'
        << "vertices (N):     " << m.num_vertices() << '\n'
        << "components (M):   " << m.num_components() << '\n'
        << "triangles:        " << m.triangles().size() << '\n'
        << "noise variance:   " << m.noise_variance() << '\n'
        << "basis convention: " << to_string(loaded.stored_convention) << '\n'
        << "variances:\n";
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < m.variances().size(); ++i) {
        out << "  " << i << ": " << m.variances()(i) << '\n';
    }
    for (const auto& [k, v] : m.metadata()) {
        out << "meta " << k << ": " << v << '\n';
    }
    return kSuccess;
}

int cmd_sample(const Options& o, std::ostream& out)
{
    if (o.seed && !o.coeffs.empty()) {
        throw UsageError("--seed and --coeffs are mutually exclusive");
    }
    const PlyFormat format = ply_format_from(o.format);
    const ShapeModel model = load_model(o.model, o.basis).model;
    Coefficients alpha;
    if (!o.coeffs.empty()) {
        const auto values = parse_coefficient_list(o.coeffs);
        if (static_cast<Eigen::Index>(values.size()) != model.num_components()) {
            throw UsageError("--coeffs has " + std::to_string(values.size()) + " entries but the model has " +
                             std::to_string(model.num_components()) + " components");
        }
        alpha = Coefficients(Eigen::Map<const Vector>(values.data(), model.num_components()));
    } else {
        alpha = sample_coefficients(model.num_components(), o.seed.value_or(0));
    }
    write_file(o.output, export_ply(instance(model, alpha), format));
    if (!o.report.empty()) {
        write_file(o.report, json{{"alpha", vector_json(alpha.values)}}.dump(2) + "\n");
    }
    out << "wrote " << o.output << '\n';
    return kSuccess;
}

int cmd_posterior(const Options& o, std::ostream& out, std::ostream& err)
{
    const PlyFormat format = ply_format_from(o.format);
    const ShapeModel model = load_model(o.model, o.basis).model;
    ObservationDocument doc;
    try {
        doc = parse_observation_document(read_file(o.obs));
    } catch (const ObservationFormatError& e) {
        throw DataError("'" + o.obs + "': " + e.what());
    }
    const double rcond = o.rcond.value_or(doc.rcond.value_or(kDefaultRcond));
    if (!(rcond > 0.0 && rcond < 1.0)) {
        throw UsageError("--rcond must lie in (0, 1)");
    }

    // Without session state the current shape is the mean.
    const TriangleMesh mean = mean_shape(model);
    ObservationSet obs;
    try {
        obs = resolve_observations(doc, mean);
    } catch (const std::exception& e) {
        throw DataError("'" + o.obs + "': " + e.what());
    }
    if (obs.empty()) {
        err << "warning: no observations in '" << o.obs << "'; writing the mean shape\n";
    }
    const PosteriorResult result = posterior_mean(model, obs, rcond);
    write_file(o.output, export_ply(result.mesh, format));

    if (!o.report.empty()) {
        double max_residual = 0.0;
        for (const auto& [vid, ob] : obs) {
            max_residual = std::max(max_residual, (result.mesh.vertex(vid) - ob.target).cwiseAbs().maxCoeff());
        }
        write_file(o.report, json{{"alpha", vector_json(result.alpha.values)},
                                  {"rcond", rcond},
                                  {"observation_count", obs.size()},
                                  {"max_abs_residual", max_residual}}
                                     .dump(2) +
                                 "\n");
    }
    out << "wrote " << o.output << '\n';
    return kSuccess;
}

int cmd_validate(const Options& o, std::ostream& out)
{
    const ValidationReport report = validate_statismo(read_file(o.model), convention_from(o.basis));
    if (o.as_json) {
        json list = json::array();
        for (const auto& v : report) list.push_back({{"code", v.code}, {"path", v.path}, {"message", v.message}});
        out << json{{"path", o.model}, {"valid", report.empty()}, {"violations", list}}.dump(2) << '\n';
    } else if (report.empty()) {
        out << o.model << ": valid\n";
    } else {
        out << o.model << ": " << report.size() << " violation(s)\n";
        for (const auto& v : report) out << "  " << v.code << " (" << v.path << "): " << v.message << '\n';
    }
    return report.empty() ? kSuccess : kDataError;
}

int cmd_convert(const Options& o, std::ostream& out)
{
    const LoadedModel loaded = load_model(o.model, o.basis);
    write_file(o.output, save_statismo(loaded.model));
    out << "wrote " << o.output << " (" << loaded.model.num_components() << " components, source basis "
        << to_string(loaded.stored_convention) << ")\n";
    return kSuccess;
}

int cmd_serve(const Options& o, std::ostream& out)
{
    ServiceConfig config;
    config.max_model_bytes = static_cast<std::size_t>(o.max_model_mib * 1024.0 * 1024.0);
    config.session_ttl = std::chrono::seconds(o.session_ttl);
    config.default_rcond = o.default_rcond;
    config.async_threshold = o.async_threshold;
    if (!(config.default_rcond > 0.0 && config.default_rcond < 1.0)) {
        throw UsageError("--rcond must lie in (0, 1)");
    }
    SessionManager sessions(config);
    HttpService service(sessions);
    if (!o.ui_dir.empty() && !service.mount_static(o.ui_dir)) {
        throw DataError("cannot serve static files from '" + o.ui_dir + "'");
    }
    int port = o.port;
    if (port == 0) {
        port = service.bind_any_port(o.host);
        if (port < 0) throw DataError("cannot bind " + o.host);
    } else if (!service.bind(o.host, port)) {
        throw DataError("cannot bind " + o.host + ":" + std::to_string(port));
    }
    out << "listening on http://" << o.host << ':' << port << std::endl;
    return service.run() ? kSuccess : kDataError;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Statistical shape model engine: inspect, sample, reconstruct, convert, validate, serve"};
    app.require_subcommand(1);
    Options o;

    auto add_model = [&o](CLI::App* cmd) {
        cmd->add_option("model", o.model, "Statismo HDF5 model file")->required();
        cmd->add_option("--basis", o.basis, "Stored basis convention: auto, orthonormal or prescaled")
            ->capture_default_str();
    };

    auto* info = app.add_subcommand("info", "Print model dimensions, variances and metadata");
    add_model(info);
    info->add_flag("--json", o.as_json, "Emit JSON");

    auto* sample = app.add_subcommand("sample", "Write a model instance as PLY");
    add_model(sample);
    sample->add_option("--seed", o.seed, "Seed for standard-normal coefficients (default 0)");
    sample->add_option("--coeffs", o.coeffs, "Comma-separated coefficients, one per component");
    sample->add_option("-o,--output", o.output, "Output PLY path")->required();
    sample->add_option("--format", o.format, "ascii or binary")->capture_default_str();
    sample->add_option("--report", o.report, "Write the coefficients as JSON");

    auto* post = app.add_subcommand("posterior", "Reconstruct the posterior mean shape from observations");
    add_model(post);
    post->add_option("--obs", o.obs, "Observation JSON file")->required();
    post->add_option("--rcond", o.rcond, "Relative singular value cut-off (default: file value or 1e-10)");
    post->add_option("-o,--output", o.output, "Output PLY path")->required();
    post->add_option("--format", o.format, "ascii or binary")->capture_default_str();
    post->add_option("--report", o.report, "Write coefficients and residuals as JSON");

    auto* validate = app.add_subcommand("validate", "Check a Statismo file and list every violation");
    add_model(validate);
    validate->add_flag("--json", o.as_json, "Emit JSON");

    auto* convert = app.add_subcommand("convert", "Rewrite a model in the canonical Statismo 0.9 layout");
    add_model(convert);
    convert->add_option("-o,--output", o.output, "Output HDF5 path")->required();

    auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
    serve->add_option("--host", o.host, "Bind address")->envname("SSMKIT_HOST")->capture_default_str();
    serve->add_option("--port", o.port, "Port, 0 for any free port")->envname("SSMKIT_PORT")->capture_default_str();
    serve->add_option("--max-model-mib", o.max_model_mib, "Upload size cap in MiB")
        ->envname("SSMKIT_MAX_MODEL_MIB")
        ->capture_default_str();
    serve->add_option("--session-ttl", o.session_ttl, "Idle seconds before a session is evicted")
        ->envname("SSMKIT_SESSION_TTL")
        ->capture_default_str();
    serve->add_option("--rcond", o.default_rcond, "Default rcond for new sessions")
        ->envname("SSMKIT_RCOND")
        ->capture_default_str();
    serve->add_option("--async-threshold", o.async_threshold, "3N*M above which posteriors run in the background")
        ->envname("SSMKIT_ASYNC_THRESHOLD")
        ->capture_default_str();
    serve->add_option("--ui-dir", o.ui_dir, "Directory with the browser UI to serve at /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kSuccess;
    } catch (const CLI::CallForVersion&) {
        out << "ssmkit\n";
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
            err << sub->help();
        }
        return kUsage;
    }

    try {
        if (info->parsed()) return cmd_info(o, out);
        if (sample->parsed()) return cmd_sample(o, out);
        if (post->parsed()) return cmd_posterior(o, out, err);
        if (validate->parsed()) return cmd_validate(o, out);
        if (convert->parsed()) return cmd_convert(o, out);
        if (serve->parsed()) return cmd_serve(o, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    }
    return kUsage;
}

} // namespace ssm::cli
