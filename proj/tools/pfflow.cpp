// pfflow - command-line driver: validate, flow, sweep, overlap, report

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pfflow/cache.hpp"
#include "pfflow/coherent.hpp"
#include "pfflow/config.hpp"
#include "pfflow/hamiltonian.hpp"
#include "pfflow/iapt.hpp"
#include "pfflow/massshell.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace pfflow;

namespace {

constexpr const char* kVersion = "pfflow 0.1.0";

enum Exit { kPass = 0, kCheckFailed = 1, kUsage = 2 };

struct Flags {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    std::string cache;
    int workers = 0;
    long long seed = -1;
    bool allow_deep = false;
    std::string P = "0,0,0";
    std::string Q = "0,0,0";
};

struct Context {
    std::string command;
    RunConfig cfg;
    std::uint64_t hash = 0;
    fs::path out;
    FlowCache cache{fs::path()};
    std::atomic<int> hits{0}, misses{0};
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
};

Vec3 parse_vec3(const std::string& s, const char* what) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(detail::parse_double(what, detail::trim(item)));
    if (v.size() != 3) throw ConfigError(std::string(what) + " expects three comma-separated numbers");
    return {v[0], v[1], v[2]};
}

RunConfig build_config(const Flags& f) {
    RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
    for (const auto& kv : f.sets) apply_override(c, kv);
    if (!f.out.empty()) c.output_dir = f.out;
    if (!f.cache.empty()) c.cache_dir = f.cache;
    if (f.workers > 0) c.worker_count = f.workers;
    if (f.allow_deep) c.allow_deep = true;
    if (f.seed >= 0) {
        if (c.quadrature_mode != QuadratureMode::monte_carlo) throw ConfigError("--seed applies to quadrature_mode = monte-carlo only");
        c.seed = static_cast<std::uint64_t>(f.seed);
    }
    validate_config(c);
    return c;
}

json config_json(const RunConfig& c) {
    json j = json::object();
    std::stringstream ss(canonical_config(c));
    std::string line;
    while (std::getline(ss, line)) {
        const auto eq = line.find('=');
        j[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return j;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

void write_json(const fs::path& p, const json& j) { atomic_write(p, j.dump(2) + "\n"); }

json header(const Context& ctx) {
    const auto& w = weyl_convention();
    return {{"config_hash", hex64(ctx.hash)},
            {"config", config_json(ctx.cfg)},
            {"version", kVersion},
            {"weyl", {{"nu", w.nu}, {"eta", w.eta}, {"c_exp", w.c_exp}}}};
}

void write_sidecar(Context& ctx) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.t0).count();
    json j = {{"command", ctx.command},
              {"config_hash", hex64(ctx.hash)},
              {"version", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"wall_seconds", wall},
              {"cache_hits", ctx.hits.load()},
              {"cache_misses", ctx.misses.load()}};
    write_json(ctx.out / ("run_" + ctx.command + ".json"), j);
}

FlowCacheEntry flow_through_cache(Context& ctx, const FlowOptions& opt, const Vec3& P, double e) {
    bool hit = false;
    auto entry = cached_flow(ctx.cache, opt, P, e, &hit);
    (hit ? ctx.hits : ctx.misses)++;
    return entry;
}

json scale_row(const ScaleSummary& s) {
    return {{"j", s.j},
            {"rho_j", s.rho},
            {"fock_dim", s.fock_dim},
            {"E_j", s.E},
            {"gap_j", s.j == 0 ? json(nullptr) : finite_or_null(s.gap)},
            {"multiplicity", s.multiplicity},
            {"gradE", vec_json(s.grad)},
            {"hess_eigenvalues", vec_json(s.hess_eigenvalues)},
            {"K1", s.k1},
            {"K05", s.k05},
            {"proj_increment_norm", s.j == 0 ? json(nullptr) : finite_or_null(s.proj_increment)},
            {"N_expect", s.N_expect},
            {"ir_max_ratio", s.ir_max_ratio}};
}

/// Per-e output directory: the output dir itself for a single coupling.
fs::path e_dir(const Context& ctx, std::size_t i) {
    if (ctx.cfg.e.size() == 1) return ctx.out;
    fs::path d = ctx.out / ("e_" + std::to_string(i));
    fs::create_directories(d);
    return d;
}

// ---------------------------------------------------------------------------------------------

struct Check {
    std::string name;
    std::string status;  // pass | fail | skipped
    double value = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

int cmd_validate(Context& ctx) {
    const RunConfig& c = ctx.cfg;
    const FlowOptions opt = flow_options(c);
    const int j = std::min(c.j_max, 2);
    std::vector<Check> checks;
    std::vector<std::string> warnings;
    auto add = [&](std::string name, double value, double tol, std::string detail = {}) {
        checks.push_back({std::move(name), value <= tol ? "pass" : "fail", value, tol, std::move(detail)});
    };

    add("clifford", clifford_defect(), 0.0);

    const FockBasis basis = scale_basis(opt.geometry, j, opt.resolution, c.n_max_total, c.n_max_per_mode);
    const auto ccr = ccr_audit(basis);
    add("ccr_sub_cap", ccr.sub_cap_defect, 1e-13);
    add("ccr_cap_defect", ccr.cap_defect, 1e-13, std::to_string(ccr.blocked_states) + " blocked states");

    const auto w = calibrate_weyl();
    add("weyl_overlap", w.overlap_residual, 1e-10, "c_exp = " + detail::fmt_double(w.c_exp));
    add("weyl_nu_eta", std::abs(w.nu - w.eta), 1e-12);

    double free_err = 0.0;
    for (double p : {0.0, 0.3, 0.6, 1.5}) {
        const Vec3 P(p, 0, 0);
        const auto set = assemble_hamiltonian(P, 0.0, basis, c.kappa, j, j, c.spinor_dim);
        const auto fs_ = solve_fiber(set, c.cluster_tol, j);
        free_err = std::max(free_err, std::abs(fs_.record.E - std::sqrt(p * p + 1.0)));
        if (basis.size() > 1) free_err = std::max(free_err, std::abs(fs_.record.gap - free_gap(P, basis)));
        if (fs_.record.multiplicity != c.spinor_dim) free_err = std::max(free_err, 1.0);
    }
    add("free_case", free_err, 1e-10);

    const double e0 = c.e.front();
    const Vec3 P03(0.3, 0, 0);
    {
        const auto set = assemble_hamiltonian(P03, e0, basis, c.kappa, j, j, 4);
        add("block_equivalence", block_equivalence_check(set).max_discrepancy, 1e-9);
    }

    if (c.n_max_total == 0 && e0 > 0) {
        checks.push_back({"hf_vs_fd", "skipped", 0.0, 1e-6, "no photon dynamics at n_max_total = 0"});
        warnings.push_back("hf_vs_fd skipped: n_max_total = 0 leaves no photon dynamics");
    } else {
        double g_err = 0.0, h_err = 0.0;
        for (const Vec3& P : {Vec3::Zero().eval(), P03}) {
            const auto set = assemble_hamiltonian(P, e0, basis, c.kappa, j, j, c.spinor_dim);
            const auto fs_ = solve_fiber(set, c.cluster_tol, j);
            const auto d = fiber_derivatives(set, fs_, true);
            const Vec3 gfd = fd_gradient(P, e0, basis, c.kappa, j, j, c.fd_step);
            const Eigen::Matrix3d hfd = fd_hessian(P, e0, basis, c.kappa, j, j, c.fd_hess_step);
            g_err = std::max(g_err, (d.grad - gfd).norm() / std::max(1.0, d.grad.norm()));
            h_err = std::max(h_err, (d.hess - hfd).norm() / d.hess.norm());
        }
        add("hf_vs_fd_gradient", g_err, 1e-6);
        add("hf_vs_fd_hessian", h_err, 1e-4);
    }

    if (ctx.cache.enabled()) {
        const int n = ctx.cache.verify_all();
        FlowOptions small = opt;
        small.geometry.j_max = j;
        const auto cached = flow_through_cache(ctx, small, P03, e0);
        const auto fresh = summarize(run_flow(P03, e0, j, small), true);
        double diff = cached.scales.size() == fresh.size() ? 0.0 : 1.0;
        for (std::size_t s = 0; s < std::min(fresh.size(), cached.scales.size()); ++s) {
            diff = std::max(diff, std::abs(cached.scales[s].E - fresh[s].E));
            diff = std::max(diff, projection_distance(cached.scales[s].block_vectors, fresh[s].block_vectors));
        }
        add("cache_spot_check", diff, 1e-12, std::to_string(n) + " entries verified");
    }

    bool ok = true;
    json jc = json::array();
    for (const auto& ch : checks) {
        ok = ok && ch.status != "fail";
        jc.push_back({{"name", ch.name}, {"status", ch.status}, {"value", ch.value}, {"tolerance", ch.tolerance}, {"detail", ch.detail}});
    }
    json report = header(ctx);
    report["status"] = ok ? "pass" : "fail";
    report["checks"] = jc;
    report["warnings"] = warnings;
    write_json(ctx.out / "validate.json", report);
    std::cout << report.dump(2) << "\n";
    for (const auto& wmsg : warnings) std::cerr << "warning: " << wmsg << "\n";
    if (!ok)
        for (const auto& ch : checks)
            if (ch.status == "fail") {
                std::cerr << "validate: " << ch.name << " failed: " << ch.value << " > " << ch.tolerance << "\n";
                break;
            }
    return ok ? kPass : kCheckFailed;
}

int cmd_flow(Context& ctx, const Vec3& P) {
    const FlowOptions opt = flow_options(ctx.cfg);
    json runs = json::array();
    bool complete = true;
    for (double e : ctx.cfg.e) {
        const auto entry = flow_through_cache(ctx, opt, P, e);
        json rows = json::array();
        for (const auto& s : entry.scales) rows.push_back(scale_row(s));
        runs.push_back({{"e", e}, {"complete", entry.complete}, {"failure", entry.failure}, {"rows", rows}});
        complete = complete && entry.complete;
    }
    json m = header(ctx);
    m["P"] = vec_json(P);
    m["runs"] = runs;
    write_json(ctx.out / "flow.json", m);
    return complete ? kPass : kCheckFailed;
}

json rate_json(const std::vector<RateFit>& fits) {
    json a = json::array();
    for (const auto& f : fits)
        a.push_back({{"name", f.name},
                     {"slope", f.degenerate ? json(nullptr) : json(f.fit.slope)},
                     {"r_squared", f.degenerate ? json(nullptr) : json(f.fit.r_squared)},
                     {"points", f.fit.points},
                     {"target", f.target},
                     {"tolerance", f.tolerance},
                     {"j_from", f.j_from},
                     {"j_to", f.j_to},
                     {"degenerate", f.degenerate},
                     {"pass", f.pass}});
    return a;
}

int cmd_sweep(Context& ctx) {
    bool ok = true;
    for (std::size_t i = 0; i < ctx.cfg.e.size(); ++i) {
        const double e = ctx.cfg.e[i];
        SweepOptions so = sweep_options(ctx.cfg, e);
        so.evaluate = [&ctx](const Vec3& P, const SweepOptions& o) {
            MassShellPoint pt;
            pt.P = P;
            pt.pnorm = P.norm();
            try {
                auto entry = flow_through_cache(ctx, o.flow, P, o.e);
                for (auto& s : entry.scales) s.block_vectors.resize(0, 0);
                pt.scales = std::move(entry.scales);
                pt.complete = entry.complete;
                pt.failure = entry.failure;
            } catch (const CacheIntegrityError&) {
                throw;
            } catch (const Error& err) {
                pt.failure = err.what();
            }
            return pt;
        };
        const MassShellTable t = sweep(so);
        const fs::path dir = e_dir(ctx, i);
        std::ostringstream csv;
        write_massshell_csv(csv, t);
        atomic_write(dir / "massshell.csv", csv.str());

        const auto shape = shape_report(t);
        json fits = header(ctx);
        fits["e"] = e;
        fits["proxy_scale"] = ctx.cfg.j_max;
        fits["fit_from"] = so.fit_from;
        fits["raw"] = rate_json(t.fits.raw);
        fits["richardson"] = rate_json(t.fits.richardson);
        fits["isotropy"] = {{"residual", t.isotropy_residual}, {"tolerance", 1e-8}, {"pass", t.isotropy_residual < 1e-8}};
        fits["convexity"] = {{"min_hessian_eigenvalue", finite_or_null(t.min_hessian_eigenvalue)},
                             {"min_second_difference", finite_or_null(shape.min_second_difference)},
                             {"convex", shape.convex}};
        fits["shape"] = {{"increasing", shape.increasing},
                         {"minimum_at_zero", shape.minimum_at_zero},
                         {"grad_at_zero", finite_or_null(shape.grad_at_zero)},
                         {"envelope_C", finite_or_null(shape.envelope_C)}};
        if (t.points.size() >= 3) {
            const auto q = lipschitz_audit(t), qr = lipschitz_audit(t, true);
            fits["lipschitz"] = {{"q_fit", q.q_fit}, {"q_fit_reversed", qr.q_fit}, {"admissible", q.admissible}, {"pairs", q.pairs}};
        } else {
            fits["lipschitz"] = nullptr;
        }
        json inc = json::array(), ratio = json::array();
        for (double v : shape.max_increment) inc.push_back(v);
        for (double v : shape.increment_ratio) ratio.push_back(finite_or_null(v));
        fits["scale_convergence"] = {{"max_increment", inc}, {"ratio", ratio}};
        fits["failures"] = t.failures;
        write_json(dir / "fits.json", fits);
        ok = ok && t.failures.empty();
    }
    return ok ? kPass : kCheckFailed;
}

int cmd_overlap(Context& ctx, const Vec3& P, const Vec3& Q) {
    const FlowOptions opt = flow_options(ctx.cfg);
    const double c_exp = weyl_convention().c_exp;
    bool ok = true;
    for (std::size_t i = 0; i < ctx.cfg.e.size(); ++i) {
        const double e = ctx.cfg.e[i];
        const auto fp = flow_through_cache(ctx, opt, P, e);
        const auto fq = P == Q ? fp : flow_through_cache(ctx, opt, Q, e);
        const std::size_t n = std::min(fp.scales.size(), fq.scales.size());
        if (n == 0) throw RegimeError("overlap: no completed scales (" + fp.failure + fq.failure + ")");
        std::vector<Vec3> gp, gq;
        for (std::size_t j = 0; j < n; ++j) {
            gp.push_back(fp.scales[j].grad);
            gq.push_back(fq.scales[j].grad);
        }
        // exact symmetry at P = 0: the gradient vanishes identically
        if (P.isZero(0.0)) std::fill(gp.begin(), gp.end(), Vec3::Zero());
        if (Q.isZero(0.0)) std::fill(gq.begin(), gq.end(), Vec3::Zero());
        const auto led = overlap_ledger(opt.geometry, P, Q, gp, gq, e, c_exp);
        const fs::path dir = e_dir(ctx, i);
        std::ostringstream csv;
        write_overlap_csv(csv, led);
        atomic_write(dir / "overlap.csv", csv.str());
        json m = header(ctx);
        m["e"] = e;
        m["P"] = vec_json(P);
        m["Q"] = vec_json(Q);
        m["c_exp"] = c_exp;
        m["proxy_scale"] = static_cast<int>(n) - 1;
        m["threshold"] = led.threshold;
        m["crossing_J"] = led.crossing_J < 0 ? json(nullptr) : json(led.crossing_J);
        m["final_partial_product"] = led.rows.back().partial_product;
        m["complete"] = fp.complete && fq.complete;
        write_json(dir / "overlap.json", m);
        ok = ok && fp.complete && fq.complete;
    }
    return ok ? kPass : kCheckFailed;
}

int cmd_report(Context& ctx) {
    int found = 0;
    json rep = {{"config_hash", hex64(ctx.hash)}};
    auto load = [&](const fs::path& p) -> std::optional<json> {
        if (!fs::exists(p)) return std::nullopt;
        std::ifstream in(p);
        try {
            return json::parse(in);
        } catch (const json::exception& ex) {
            throw ConfigError("report: cannot parse " + p.string() + ": " + ex.what());
        }
    };
    if (auto v = load(ctx.out / "validate.json")) {
        ++found;
        rep["validate"] = (*v)["status"];
        std::cout << "validate: " << (*v)["status"].get<std::string>() << "\n";
    }
    if (auto f = load(ctx.out / "flow.json")) {
        ++found;
        json runs = json::array();
        for (const auto& r : (*f)["runs"]) {
            const auto& last = r["rows"].back();
            runs.push_back({{"e", r["e"]}, {"deepest_j", last["j"]}, {"E", last["E_j"]}, {"complete", r["complete"]}});
            std::cout << "flow e=" << r["e"] << ": j=" << last["j"] << " E=" << last["E_j"] << "\n";
        }
        rep["flow"] = runs;
    }
    for (const auto& name : {"fits.json", "overlap.json"}) {
        if (auto f = load(ctx.out / name)) {
            ++found;
            if (std::string(name) == "fits.json") {
                json s = json::array();
                for (const auto& r : (*f)["raw"]) s.push_back({{"name", r["name"]}, {"slope", r["slope"]}, {"pass", r["pass"]}});
                rep["fits"] = {{"e", (*f)["e"]}, {"raw", s}, {"convexity", (*f)["convexity"]}, {"lipschitz", (*f)["lipschitz"]}};
                std::cout << "sweep e=" << (*f)["e"] << ": convex=" << (*f)["convexity"]["convex"] << "\n";
            } else {
                rep["overlap"] = {{"crossing_J", (*f)["crossing_J"]}, {"final_partial_product", (*f)["final_partial_product"]}};
                std::cout << "overlap: crossing_J=" << (*f)["crossing_J"] << "\n";
            }
        }
    }
    if (found == 0) throw ConfigError("report: no artifacts in " + ctx.out.string());
    write_json(ctx.out / "report.json", rep);
    return kPass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Iterative perturbation theory for the semi-relativistic Pauli-Fierz fiber Hamiltonian"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    Flags flags;
    auto common = [&flags](CLI::App* sub) {
        sub->add_option("--config", flags.config, "flat key = value config file");
        sub->add_option("--set", flags.sets, "override, key=value (repeatable)");
        sub->add_option("--out", flags.out, "output directory");
        sub->add_option("--cache", flags.cache, "cache directory");
        sub->add_option("--workers", flags.workers, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--seed", flags.seed, "seed, monte-carlo quadrature only")->check(CLI::NonNegativeNumber);
        sub->add_flag("--allow-deep", flags.allow_deep, "lift the j_max <= 12 guard");
    };
    auto* validate = app.add_subcommand("validate", "run the property suite");
    auto* flow = app.add_subcommand("flow", "scale flow at one total momentum");
    auto* sweep_cmd = app.add_subcommand("sweep", "mass-shell sweep over |P|");
    auto* overlap = app.add_subcommand("overlap", "coherent-factor overlap ledger for a pair P, Q");
    auto* report = app.add_subcommand("report", "summarize the artifacts in the output directory");
    for (auto* s : {validate, flow, sweep_cmd, overlap, report}) common(s);
    flow->add_option("--P", flags.P, "total momentum x,y,z");
    overlap->add_option("--P", flags.P, "first momentum x,y,z")->required();
    overlap->add_option("--Q", flags.Q, "second momentum x,y,z")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? kPass : kUsage;
    }

    Context ctx;
    try {
        ctx.command = app.get_subcommands().front()->get_name();
        ctx.cfg = build_config(flags);
        ctx.hash = config_hash(ctx.cfg);
        ctx.out = ctx.cfg.output_dir;
        fs::create_directories(ctx.out);
        ctx.cache = FlowCache(ctx.cfg.cache_dir);
        int rc = kPass;
        if (ctx.command == "validate") rc = cmd_validate(ctx);
        else if (ctx.command == "flow") rc = cmd_flow(ctx, parse_vec3(flags.P, "--P"));
        else if (ctx.command == "sweep") rc = cmd_sweep(ctx);
        else if (ctx.command == "overlap") rc = cmd_overlap(ctx, parse_vec3(flags.P, "--P"), parse_vec3(flags.Q, "--Q"));
        else rc = cmd_report(ctx);
        if (ctx.command != "report") write_sidecar(ctx);
        return rc;
    } catch (const CacheIntegrityError& err) {
        std::cerr << "cache integrity error: " << err.what() << "\n";
        return kUsage;
    } catch (const ConfigError& err) {
        std::cerr << err.what() << "\n";
        return kUsage;
    } catch (const IoError& err) {
        std::cerr << "i/o error: " << err.what() << "\n";
        return kUsage;
    } catch (const fs::filesystem_error& err) {
        std::cerr << "i/o error: " << err.what() << "\n";
        return kUsage;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kCheckFailed;
    }
}
