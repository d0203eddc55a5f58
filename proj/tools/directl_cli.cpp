// Command-line front end: precompute, render, compare, bench.
//
// Exit codes: 0 success, 1 usage error, 2 data or format error.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "directl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace directl;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct RenderArgs {
    std::string mode = "directl";
    std::string profile;
    std::string cache;
    std::string scene;
    std::string analytic;
    std::string poses;
    std::string out;
    std::string view_res = "hr";
    double radius = 0.0;
    std::size_t steps = kDefaultMarchSteps;
    std::size_t heap = 128;
    std::size_t frames = 1;
    bool no_standard = false;
};

void add_render_options(CLI::App* cmd, RenderArgs& a, bool need_out) {
    cmd->add_option("--mode", a.mode, "directl or standard")->check(CLI::IsMember({"directl", "standard"}));
    cmd->add_option("--profile", a.profile, "built-in profile name or JSON file")->required();
    cmd->add_option("--cache", a.cache, "precompute cache (directl mode)");
    auto* scene = cmd->add_option("--scene", a.scene, "Gaussian scene file");
    auto* analytic = cmd->add_option("--analytic", a.analytic, "constant_sphere, two_spheres or gradient_box")
                         ->check(CLI::IsMember({"constant_sphere", "two_spheres", "gradient_box"}));
    scene->excludes(analytic);
    cmd->add_option("--poses", a.poses, "pose file, one 4x4 row-major matrix per frame")->required();
    auto* out = cmd->add_option("--out", a.out, need_out ? "output directory" : "write the report here as JSON");
    if (need_out) out->required();
    cmd->add_option("--view-res", a.view_res, "per-view resolution in standard mode")->check(CLI::IsMember({"lr", "mr", "hr"}));
    cmd->add_option("--radius", a.radius, "arc radius (default: fit the scene bounds)")->check(CLI::PositiveNumber);
    cmd->add_option("--steps", a.steps, "march steps for analytic fields")->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));
    cmd->add_option("--ch", a.heap, "hit heap capacity for Gaussian scenes")->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));
}

LoadedField field_for(const RenderArgs& a) {
    if (a.scene.empty() == a.analytic.empty()) throw UsageError("give exactly one of --scene or --analytic");
    FieldSpec spec;
    spec.scene = a.scene;
    spec.analytic = a.analytic;
    spec.steps = a.steps;
    spec.heap_capacity = a.heap;
    return load_field(spec);
}

std::string frame_name(std::size_t i) {
    std::ostringstream s;
    s << "frame_" << std::setw(4) << std::setfill('0') << i << ".ppm";
    return s.str();
}

int cmd_precompute(const std::string& profile_spec, std::size_t pw, bool no_repurpose, const std::string& out) {
    const DisplayProfile profile = resolve_profile(profile_spec);
    const PrecomputeCache cache = precompute(profile, pw, !no_repurpose);
    save_cache(out, cache);
    std::cout << "beta " << std::setprecision(6) << std::fixed << cache.beta() << "\n"
              << "n_rays " << cache.rays.n_rays() << "\n";
    return 0;
}

int cmd_render(const RenderArgs& a) {
    const DisplayProfile profile = resolve_profile(a.profile);
    const bool directl = a.mode == "directl";
    if (directl && a.cache.empty()) throw UsageError("directl mode needs --cache");
    const ViewResolution res = view_resolution(profile, parse_view_res(a.view_res));
    if (!directl && (res.width == 0 || res.height == 0)) throw UsageError("profile has no " + a.view_res + " resolution");

    const LoadedField lf = field_for(a);
    const auto poses = load_poses(a.poses);
    std::optional<PrecomputeCache> cache;
    if (directl) cache = load_cache(a.cache, profile);
    const std::optional<ViewpointMatrix> V = directl ? std::nullopt : std::optional(viewpoint_matrix(profile));
    const double radius = a.radius > 0 ? a.radius : default_arc_radius(profile, lf.bounding_radius);

    fs::create_directories(a.out);
    OutputSet outputs;
    std::ostringstream csv;
    bool header = false;
    for (std::size_t f = 0; f < poses.size(); ++f) {
        const CameraRig rig = camera_rig(profile, poses[f], radius);
        const FrameResult fr = directl ? render_directl(*lf.field, rig, profile, cache->rays)
                                       : render_standard(*lf.field, rig, profile, *V, res);
        const auto t0 = Clock::now();
        const fs::path path = fs::path(a.out) / frame_name(f);
        {
            AtomicFile file(path);
            write_ppm(file.stream(), quantize(fr.encoded));
            file.commit();
        }
        outputs.add(path);
        const double write_s = seconds_since(t0);
        if (!header) {
            csv << "frame,mode";
            for (const auto& st : fr.stages) csv << "," << st.name << "_s";
            csv << ",write_s,total_s,rays,rays_per_s\n";
            header = true;
        }
        const double total = fr.total_seconds() + write_s;
        csv << f << "," << a.mode;
        for (const auto& st : fr.stages) csv << "," << st.seconds;
        csv << "," << write_s << "," << total << "," << fr.rays << ","
            << (fr.total_seconds() > 0 ? static_cast<double>(fr.rays) / fr.total_seconds() : 0.0) << "\n";
    }
    const fs::path log = fs::path(a.out) / "timing.csv";
    {
        AtomicFile file(log);
        file.stream() << csv.str();
        file.commit();
    }
    outputs.add(log);
    outputs.finish();
    std::cout << "wrote " << poses.size() << " frame(s) to " << a.out << "\n";
    return 0;
}

int cmd_compare(const std::string& a, const std::string& b) {
    const double e = rmse(read_ppm(a), read_ppm(b));
    std::cout << std::setprecision(6) << std::fixed << e << "\n";
    return 0;
}

nlohmann::json run_json(const BenchRun& r) {
    return {{"label", r.label},
            {"rays", r.rays},
            {"frames", r.frame_seconds.size()},
            {"frame_seconds", r.frame_seconds},
            {"mean_frame_seconds", r.mean_seconds()},
            {"rays_per_second", r.rays_per_second()}};
}

int cmd_bench(const RenderArgs& a) {
    const DisplayProfile profile = resolve_profile(a.profile);
    const ViewResolution res = view_resolution(profile, parse_view_res(a.view_res));
    if (res.width == 0 || res.height == 0) throw UsageError("profile has no " + a.view_res + " resolution");
    if (a.mode == "directl" && a.cache.empty()) throw UsageError("directl mode needs --cache");
    const LoadedField lf = field_for(a);
    const auto poses = load_poses(a.poses);
    const double radius = a.radius > 0 ? a.radius : default_arc_radius(profile, lf.bounding_radius);
    const ViewpointMatrix V = viewpoint_matrix(profile);

    nlohmann::json report;
    report["profile"] = profile.name;
    std::vector<BenchRun> runs;
    std::optional<PrecomputeCache> cache;
    RaySet identity;
    if (a.mode == "directl") {
        cache = load_cache(a.cache, profile);
        std::vector<std::pair<std::string, const RaySet*>> sets{{"directl", &cache->rays}};
        if (cache->repurposed) {
            identity = build_rayset(identity_index_matrix(V));
            sets.emplace_back("no_repurpose", &identity);
        }
        runs = bench_directl(*lf.field, profile, poses, radius, a.frames, sets);
        report["beta"] = cache->beta();
        report["three_over_beta"] = 3.0 / cache->beta();
        if (runs.size() == 2) {
            report["ray_ratio"] = static_cast<double>(runs[1].rays) / static_cast<double>(runs[0].rays);
            report["time_ratio"] = runs[1].mean_seconds() / runs[0].mean_seconds();
        }
    }
    if (a.mode == "standard" || !a.no_standard) {
        BenchRun st{"standard_" + a.view_res, profile.num_views * res.width * res.height, {}};
        for (std::size_t f = 0; f < a.frames; ++f) {
            const CameraRig rig = camera_rig(profile, poses[f % poses.size()], radius);
            st.frame_seconds.push_back(render_standard(*lf.field, rig, profile, V, res).total_seconds());
        }
        if (!runs.empty()) report["standard_over_directl"] = st.mean_seconds() / runs[0].mean_seconds();
        runs.push_back(std::move(st));
    }
    for (const auto& r : runs) report["runs"].push_back(run_json(r));

    const std::string text = report.dump(2);
    if (!a.out.empty()) {
        AtomicFile file(a.out);
        file.stream() << text << "\n";
        file.commit();
    }
    std::cout << text << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ray-order rendering for lenticular light field displays"};
    app.require_subcommand(1);

    std::string profile_spec, out;
    std::size_t pw = 2;
    bool no_repurpose = false;
    auto* pre = app.add_subcommand("precompute", "build the ray set and index cache for a display profile");
    pre->add_option("--profile", profile_spec, "built-in profile name or JSON file")->required();
    pre->add_option("--pw", pw, "repurposing area width in grating units")->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));
    pre->add_flag("--no-repurpose", no_repurpose, "emit the one-to-one mapping");
    pre->add_option("--out", out, "cache file")->required();

    RenderArgs render_args;
    auto* render = app.add_subcommand("render", "render encoded frames");
    add_render_options(render, render_args, true);

    std::string img_a, img_b;
    auto* compare = app.add_subcommand("compare", "RMSE between two encoded images on the 0-255 scale");
    compare->add_option("a", img_a)->required();
    compare->add_option("b", img_b)->required();

    RenderArgs bench_args;
    auto* bench = app.add_subcommand("bench", "time repeated frames");
    add_render_options(bench, bench_args, false);
    bench->add_option("--frames", bench_args.frames, "frames per run")->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));
    bench->add_flag("--no-standard", bench_args.no_standard, "skip the multi-view baseline in directl mode");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*pre) return cmd_precompute(profile_spec, pw, no_repurpose, out);
        if (*render) return cmd_render(render_args);
        if (*compare) return cmd_compare(img_a, img_b);
        if (*bench) return cmd_bench(bench_args);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return kExitData;
    }
    return kExitUsage;
}
