#include "experiments.hpp"

#include <map>

namespace gxr::cli {

namespace {

struct ScanSpec {
    std::size_t max_rays = 0;
    bool lemma = true;
};

ScanSpec scan_spec(const Config& c) {
    ScanSpec s;
    const long mr = c.integer("conjugates", "max_rays", 0);
    if (mr < 0) throw ConfigError("'max_rays' must be nonnegative", c.line_of("conjugates", "max_rays"));
    s.max_rays = static_cast<std::size_t>(mr);
    s.lemma = c.integer("conjugates", "lemma", 1) != 0;
    return s;
}

template <int N> void scan_plan(const Config& c, Plan& p, bool graph) {
    const auto d = domain<N>(c);
    const auto fan = ray_grid<N>(c, d, "conjugates");
    const auto s = scan_spec(c);
    conjugacy_options(c);
    const std::size_t rays = s.max_rays ? std::min(s.max_rays, fan.size()) : fan.size();
    p.add("fan rays", static_cast<double>(rays));
    p.add("neighbor stencil", static_cast<double>(2 * (2 * N - 2)));
    p.add("lemma residuals", s.lemma ? "yes" : "no");
    const double steps = d.diameter() / xray_options(c).flow.step;
    p.work += rays * (1 + 2 * (2 * N - 2)) * steps * (N + 1);
    if (graph) {
        p.add("graph chart step", c.positive("graph", "h", xray_options(c).flow.step));
        p.work += rays * 4 * N * steps * (N + 1);
    }
}

template <int N> int scan_run(const Config& c, Context& ctx, bool graph) {
    const auto d = domain<N>(c);
    const auto fan = ray_grid<N>(c, d, "conjugates");
    const auto s = scan_spec(c);
    const auto co = conjugacy_options(c);
    const auto fo = xray_options(c).flow;
    const double gh = graph ? c.positive("graph", "h", fo.step) : 0;
    with_metric<N>(c, [&](const auto& m) {
        auto sample = locus_scan(m, d, fan, fo, co, s.max_rays);
        if (sample.partial) ctx.warn("fan truncated to max_rays = " + std::to_string(s.max_rays));
        if (s.lemma)
            for (auto& e : sample.entries)
                if (e.regular) e.lemma = etalem_check(m, d, e.record, fo, co);
        if (graph) graph_test(m, sample, gh, co);
        write_locus_csv(sample, ctx.file("locus.csv"));
        std::map<int, int> orders;
        double smin = std::numeric_limits<double>::infinity(), smax = 0, worst_lemma = 0;
        int unconverged = 0, graph_fail = 0, graph_checked = 0;
        for (const auto& e : sample.entries) {
            ++orders[e.record.k];
            smin = std::min(smin, e.record.s);
            smax = std::max(smax, e.record.s);
            if (!e.record.converged) ++unconverged;
            if (e.regular && e.lemma.ok)
                worst_lemma = std::max({worst_lemma, e.lemma.residual_base, e.lemma.residual_conj});
            if (graph && e.record.k == 1) {
                ++graph_checked;
                if (!e.graph_pass) ++graph_fail;
            }
        }
        ctx.summary["rays_scanned"] = sample.rays_scanned;
        ctx.summary["records"] = sample.entries.size();
        Json hist = Json::object();
        for (const auto& [k, n] : orders) hist[std::to_string(k)] = n;
        ctx.summary["orders"] = hist;
        ctx.summary["singular_rate"] = sample.singular_rate();
        if (!sample.entries.empty()) {
            ctx.summary["s_min"] = smin;
            ctx.summary["s_max"] = smax;
        }
        if (s.lemma) ctx.summary["max_lemma_residual"] = worst_lemma;
        if (unconverged) ctx.warn("conjugate times flagged unconverged: " + std::to_string(unconverged));
        const int singular = static_cast<int>(std::lround(sample.singular_rate() * sample.entries.size()));
        if (singular) ctx.warn("records flagged singular: " + std::to_string(singular));
        if (graph) {
            ctx.summary["graph_checked"] = graph_checked;
            ctx.summary["graph_failed"] = graph_fail;
        }
        ctx.say("conjugate records: " + std::to_string(sample.entries.size()) + " from " +
                std::to_string(sample.rays_scanned) + " rays");
    });
    return 0;
}

}  // namespace

void plan_conjugates(const Config& c, Plan& p) {
    dimension(c) == 2 ? scan_plan<2>(c, p, false) : scan_plan<3>(c, p, false);
}
int run_conjugates(const Config& c, Context& x) {
    return dimension(c) == 2 ? scan_run<2>(c, x, false) : scan_run<3>(c, x, false);
}
void plan_graph_test(const Config& c, Plan& p) {
    dimension(c) == 2 ? scan_plan<2>(c, p, true) : scan_plan<3>(c, p, true);
}
int run_graph_test(const Config& c, Context& x) {
    return dimension(c) == 2 ? scan_run<2>(c, x, true) : scan_run<3>(c, x, true);
}

}  // namespace gxr::cli
