#include "experiments.hpp"

#include <gxr/microlocal.hpp>

namespace gxr::cli {

namespace {

template <int N> ProbeSpec<N> probe_spec(const Config& c) {
    c.require_section("probe");
    ProbeSpec<N> s;
    s.x0 = vec<N>(c, "probe", "x0", s.x0);
    s.xi0 = vec<N>(c, "probe", "xi0", s.xi0);
    if (s.xi0.norm() == 0) throw ConfigError("'xi0' must be nonzero", c.line_of("probe", "xi0"));
    s.xi0.normalize();
    s.ladder = c.list("probe", "ladder", s.ladder);
    s.width = c.positive("probe", "width", s.width);
    s.roi_factor = c.positive("probe", "roi_factor", s.roi_factor);
    s.cutoff = c.positive("probe", "cutoff", s.cutoff);
    s.roi_spacing = c.num("probe", "roi_spacing", 0.0);
    s.artifact_spacing = c.num("probe", "artifact_spacing", 0.0);
    s.sphere_nodes = static_cast<int>(c.integer("probe", "sphere_nodes", 0));
    s.nodes_per_radian = c.num("probe", "nodes_per_radian", 0.0);
    try {
        s.validate(domain<N>(c));
    } catch (const PreconditionError& e) {
        throw ConfigError(e.what(), c.section_line("probe"));
    }
    return s;
}

std::string probe_kind(const Config& c) { return c.choice("probe", "kind", {"order", "artifact"}, "order"); }

template <int N> void probe_plan(const Config& c, Plan& p) {
    const auto s = probe_spec<N>(c);
    const std::string kind = probe_kind(c);
    weight<N>(c);
    const auto d = domain<N>(c);
    const auto roi = roi_lattice(d, s.x0, s.roi_radius(), s.spacing());
    p.add("probe", kind);
    p.add("ladder", [&] {
        std::string l;
        for (double v : s.ladder) l += (l.empty() ? "" : " ") + fmt(v);
        return l;
    }());
    p.add("region points", static_cast<double>(roi.size()));
    std::string nodes;
    double per_point = 0;
    const double steps = d.diameter() / xray_options(c).flow.step;
    for (double lam : s.ladder) {
        nodes += (nodes.empty() ? "" : " ") + std::to_string(s.nodes_for(lam));
        per_point += s.nodes_for(lam) * steps;
    }
    p.add("sphere rule nodes per frequency", nodes);
    p.work += per_point * roi.size() * (kind == "artifact" ? 2 : 1);
}

template <int N> int probe_run(const Config& c, Context& ctx) {
    const auto s = probe_spec<N>(c);
    const auto d = domain<N>(c);
    const auto phi = weight<N>(c);
    const auto o = xray_options(c);
    const auto co = conjugacy_options(c);
    const std::string kind = probe_kind(c);
    with_metric<N>(c, [&](const auto& m) {
        if (kind == "order") {
            const auto r = order_probe(m, d, phi, s, o);
            for (const auto& w : r.warnings) ctx.warn(w);
            write_fit_csv(ctx.file("probe.csv"), s.ladder, {{"amplitude", r.fit.amplitudes}}, {{"order", r.fit}});
            ctx.summary["slope"] = r.fit.slope;
            ctx.summary["residual"] = r.fit.residual;
            ctx.summary["half_width"] = r.fit.half_width;
            if (!r.fit.conclusive) ctx.warn("order fit inconclusive");
            ctx.say("order probe slope " + fmt(r.fit.slope));
        } else {
            const auto r = artifact_probe(m, d, phi, s, o, co);
            for (const auto& w : r.primary.warnings) ctx.warn(w);
            write_fit_csv(ctx.file("probe.csv"), s.ladder,
                          {{"primary", r.primary.fit.amplitudes},
                           {"artifact", r.artifact.fit.amplitudes},
                           {"ratio", r.ratio.amplitudes},
                           {"centroid_offset", r.centroid_offsets}},
                          {{"primary", r.primary.fit}, {"artifact", r.artifact.fit}, {"ratio", r.ratio}});
            ctx.summary["primary_slope"] = r.primary.fit.slope;
            ctx.summary["artifact_slope"] = r.artifact.fit.slope;
            ctx.summary["ratio_slope"] = r.ratio.slope;
            ctx.summary["expected_ratio_slope"] = -(N - 2) / 2.0;
            Json xt = Json::array();
            for (int k = 0; k < N; ++k) xt.push_back(r.target.record.conj.x[k]);
            ctx.summary["conjugate_image"] = xt;
            ctx.summary["conjugate_time"] = r.target.record.s;
            ctx.summary["max_centroid_offset"] = *std::max_element(r.centroid_offsets.begin(), r.centroid_offsets.end());
            if (!r.ratio.conclusive) ctx.warn("ratio fit inconclusive");
            ctx.say("artifact ratio slope " + fmt(r.ratio.slope));
        }
    });
    return 0;
}

}  // namespace

void plan_probe(const Config& c, Plan& p) { dimension(c) == 2 ? probe_plan<2>(c, p) : probe_plan<3>(c, p); }
int run_probe(const Config& c, Context& x) { return dimension(c) == 2 ? probe_run<2>(c, x) : probe_run<3>(c, x); }

}  // namespace gxr::cli
