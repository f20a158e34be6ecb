#include "runner.hpp"

#include "experiments.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#ifndef GXR_VERSION
#define GXR_VERSION "0.0.0"
#endif

namespace gxr::cli {

void Plan::add(const std::string& k, double v) { add(k, fmt(v)); }

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

int dimension(const Config& c) {
    c.require_section("domain");
    const long n = c.integer("domain", "dim", 2);
    if (n != 2 && n != 3) throw ConfigError("'dim' must be 2 or 3", c.line_of("domain", "dim"));
    return static_cast<int>(n);
}

namespace {

int workers(const Config& c) {
    const long w = c.integer("run", "workers", 1);
    if (w < 1) throw ConfigError("'workers' must be positive", c.line_of("run", "workers"));
    return static_cast<int>(w);
}

}  // namespace

XrayOptions xray_options(const Config& c) {
    XrayOptions o;
    o.flow.step = c.positive("flow", "step", o.flow.step);
    o.flow.rho_pad = c.positive("flow", "rho_pad", o.flow.rho_pad);
    o.flow.mu_min = c.positive("flow", "mu_min", o.flow.mu_min);
    o.substeps = static_cast<int>(c.integer("flow", "substeps", o.substeps));
    if (o.substeps < 1) throw ConfigError("'substeps' must be positive", c.line_of("flow", "substeps"));
    o.sphere_nodes = static_cast<int>(c.integer("sphere", "nodes", o.sphere_nodes));
    if (o.sphere_nodes < 4) throw ConfigError("'nodes' must be at least 4", c.line_of("sphere", "nodes"));
    o.coarse_nodes = static_cast<int>(c.integer("sphere", "coarse", o.coarse_nodes));
    if (o.coarse_nodes < 0) throw ConfigError("'coarse' must be nonnegative", c.line_of("sphere", "coarse"));
    o.workers = workers(c);
    return o;
}

ConjugacyOptions conjugacy_options(const Config& c) {
    ConjugacyOptions o;
    const std::string s = "conjugacy";
    o.tol_rank = c.positive(s, "tol_rank", o.tol_rank);
    o.dip_threshold = c.positive(s, "dip_threshold", o.dip_threshold);
    o.flag_threshold = c.positive(s, "flag_threshold", o.flag_threshold);
    o.stencil_radius = c.positive(s, "stencil_radius", o.stencil_radius);
    o.base_offset = c.positive(s, "base_offset", o.base_offset);
    o.fd_step = c.positive(s, "fd_step", o.fd_step);
    o.tol_graph = c.positive(s, "tol_graph", o.tol_graph);
    o.first_only = c.integer(s, "first_only", 1) != 0;
    o.workers = workers(c);
    return o;
}

std::uint64_t seed(const Config& c) {
    const long s = c.integer("run", "seed", 1);
    if (s < 0) throw ConfigError("'seed' must be nonnegative", c.line_of("run", "seed"));
    return static_cast<std::uint64_t>(s);
}

namespace {

struct Experiment {
    std::string name;
    void (*plan)(const Config&, Plan&);
    int (*run)(const Config&, Context&);
};

const std::vector<Experiment>& registry() {
    static const std::vector<Experiment> r{
        {"forward", plan_forward, run_forward},         {"adjoint-check", plan_adjoint_check, run_adjoint_check},
        {"normal", plan_normal, run_normal},            {"conjugates", plan_conjugates, run_conjugates},
        {"graph-test", plan_graph_test, run_graph_test}, {"probe", plan_probe, run_probe},
        {"psf", plan_psf, run_psf},                     {"invert", plan_invert, run_invert},
        {"rate", plan_rate, run_rate},                  {"spectrum", plan_spectrum, run_spectrum},
    };
    return r;
}

std::string joined_selectors() {
    std::string s;
    for (const auto& e : registry()) s += (s.empty() ? "" : ", ") + e.name;
    return s;
}

const Experiment& select(const Config& c) {
    c.require_section("experiment");
    const std::string name = c.str("experiment", "selector");
    for (const auto& e : registry())
        if (e.name == name) return e;
    throw ConfigError("unknown selector '" + name + "'; valid selectors: " + joined_selectors(),
                      c.line_of("experiment", "selector"));
}

/// Builds the plan, validating every key the experiment reads, then rejects unread keys.
Plan validate(const Config& c, const Experiment& e) {
    Plan p;
    const int n = dimension(c);
    seed(c);
    n == 2 ? with_metric<2>(c, [](const auto&) {}) : with_metric<3>(c, [](const auto&) {});
    p.add("metric", c.str("metric", "family"));
    e.plan(c, p);
    const auto extra = c.unused();
    if (!extra.empty()) {
        std::string keys;
        for (const auto& [k, line] : extra) keys += (keys.empty() ? "" : ", ") + k;
        throw ConfigError("unknown or unused keys for selector '" + e.name + "': " + keys, extra.front().second);
    }
    return p;
}

std::string sha256(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) return "";
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (is.read(buf, sizeof buf) || is.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

std::string timestamp(const char* format) {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, format, &tm);
    return buf;
}

std::filesystem::path fresh_directory(const std::string& selector) {
    const char* env = std::getenv("GXR_RUNS_DIR");
    const std::filesystem::path root = env && *env ? env : "runs";
    std::filesystem::create_directories(root);
    const std::string base = timestamp("%Y%m%dT%H%M%SZ") + "-" + selector;
    for (int k = 1;; ++k) {
        const auto dir = root / (k == 1 ? base : base + "-" + std::to_string(k));
        if (std::filesystem::create_directory(dir)) return dir;
    }
}

void write_manifest(const Context& ctx, const Config& c, const std::string& selector, const std::string& started,
                    double wall, const std::string& status, int code, const std::string& error) {
    Json m = Json::object();
    m["tool"] = "gxr";
    m["version"] = GXR_VERSION;
    m["selector"] = selector;
    m["config_file"] = "config.cfg";
    m["config_origin"] = c.origin();
    m["config"] = c.text();
    m["seed"] = seed(c);
    m["ray_parameterization"] = dimension(c) == 2 ? "boundary angle x inward angle from the normal"
                                                  : "boundary polar x azimuth, inward direction polar x azimuth about the normal";
    m["started"] = started;
    m["wall_seconds"] = wall;
    m["status"] = status;
    m["exit_code"] = code;
    if (!error.empty()) m["error"] = error;
    m["warnings"] = ctx.warnings;
    Json outs = Json::array();
    for (const auto& name : ctx.outputs) {
        const auto path = ctx.dir / name;
        Json o = Json::object();
        o["file"] = name;
        o["exists"] = std::filesystem::exists(path);
        if (std::filesystem::exists(path)) {
            o["bytes"] = std::filesystem::file_size(path);
            o["sha256"] = sha256(path);
        }
        outs.push_back(o);
    }
    m["outputs"] = outs;
    m["summary"] = ctx.summary;
    std::ofstream(ctx.dir / "manifest.json") << m.dump(2) << '\n';
}

template <class Body> int guarded(std::ostream& err, Body&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "gxr: " << e.what() << '\n';
        return 2;
    } catch (const PreconditionError& e) {
        err << "gxr: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "gxr: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

std::vector<std::string> selectors() {
    std::vector<std::string> out;
    for (const auto& e : registry()) out.push_back(e.name);
    return out;
}

int describe(const std::string& path, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const Config c = Config::load(path);
        const auto& e = select(c);
        const Plan p = validate(c, e);
        out << "selector: " << e.name << '\n';
        out << "dimension: " << dimension(c) << '\n';
        out << "seed: " << seed(c) << '\n';
        for (const auto& [k, v] : p.lines) out << k << ": " << v << '\n';
        out << "estimated work units: " << fmt(p.work) << '\n';
        return 0;
    });
}

int run(const std::string& path, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const Config c = Config::load(path);
        const auto& e = select(c);
        validate(c, e);
        Context ctx;
        ctx.dir = fresh_directory(e.name);
        ctx.log = &out;
        std::ofstream(ctx.dir / "config.cfg") << c.text();
        const std::string started = timestamp("%Y-%m-%dT%H:%M:%SZ");
        const auto t0 = std::chrono::steady_clock::now();
        int code = 0;
        std::string status = "ok", error;
        try {
            code = e.run(c, ctx);
            if (code != 0) status = "failed";
        } catch (const ConfigError& x) {
            code = 2, status = "invalid", error = x.what();
        } catch (const PreconditionError& x) {
            code = 2, status = "invalid", error = x.what();
        } catch (const std::exception& x) {
            code = 1, status = "failed", error = x.what();
        }
        if (!error.empty()) {
            ctx.warn(error);
            err << "gxr: " << error << '\n';
        }
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_manifest(ctx, c, e.name, started, wall, status, code, error);
        out << "run directory: " << ctx.dir.string() << '\n';
        return code;
    });
}

}  // namespace gxr::cli
