// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "directl/pipeline.hpp"
#include "golden.hpp"
#include "oracles.hpp"
#include "scenes.hpp"

using namespace directl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void fail_if(bool bad, const std::string& why) {
        if (bad) {
            pass = false;
            detail << " [" << why << "]";
        }
    }
};

// Largest |sum(alpha_i T_i) + T_final - 1| seen on any composited ray in this run.
double g_norm_err = 0.0;

void track(const Composite& c) { g_norm_err = std::max(g_norm_err, std::abs(c.weight_sum + c.t_final - 1.0)); }

double seconds(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

DisplayProfile random_toy(std::mt19937& rng) {
    DisplayProfile p;
    p.name = "toy";
    p.width_px = std::uniform_int_distribution<std::size_t>(8, 48)(rng);
    p.height_px = std::uniform_int_distribution<std::size_t>(8, 48)(rng);
    p.line_count = std::uniform_real_distribution<double>(3.0, 9.0)(rng);
    p.tilt_angle = deg_to_rad(std::uniform_real_distribution<double>(-15.0, 15.0)(rng));
    p.offset = std::uniform_real_distribution<double>(-4.0, 4.0)(rng);
    p.num_views = std::uniform_int_distribution<std::size_t>(2, 40)(rng);
    p.fov = deg_to_rad(40.0);
    p.focal_px = static_cast<double>(p.height_px);
    return p;
}

Ray random_ray(std::mt19937& rng, double dist, double spread) {
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(-spread, spread);
    const Vec3 o = dist * Vec3(g(rng), g(rng), g(rng)).normalized();
    return Ray{o, (Vec3(u(rng), u(rng), u(rng)) - o).normalized()};
}

// ---------------------------------------------------------------------------------------------

void paradigm_equivalence(Outcome& r) {
    for (const auto& p : {profile_desk(), profile_7_9_inch()}) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto cache = precompute(p, 2, false);
        const ViewpointMatrix V = viewpoint_matrix(p);
        std::vector<std::pair<std::string, std::unique_ptr<RadianceField>>> fields;
        fields.emplace_back("two_spheres", make_analytic_field(AnalyticKind::two_spheres, 16));
        fields.emplace_back("gauss500", std::make_unique<GaussianField>(testscene::random_scene(500, 77, 1.0, 1)));
        for (const auto& [name, field] : fields) {
            const double radius = default_arc_radius(p, 1.2);
            const CameraRig rig = camera_rig(p, look_at(Vec3(0.0, 0.0, radius), Vec3::Zero()), radius);
            const auto direct = quantize(render_directl(*field, rig, p, cache.rays).encoded);
            const auto standard = quantize(render_standard(*field, rig, p, V, view_resolution(p, ViewRes::hr)).encoded);
            const double e = rmse(direct, standard);
            r.detail << " " << p.name << "/" << name << " rmse=" << e;
            r.fail_if(e != 0.0, p.name + "/" + name + " frames differ");
        }
        r.detail << " (" << p.name << " " << std::setprecision(3) << seconds(t0) << "s)" << std::setprecision(6);
    }
}

const double kTable[3][4] = {{1.4764, 1.4467, 1.3044, 1.0790}, {1.3701, 1.3694, 1.2868, 1.1109}, {1.5613, 1.3708, 1.2440, 1.2222}};

void pixel_ratio(Outcome& r) {
    const DisplayProfile profiles[3] = {profile_7_9_inch(), profile_15_6_inch(), profile_65_inch()};
    double worst = 0.0;
    r.detail << std::fixed << std::setprecision(4);
    for (int i = 0; i < 3; ++i) {
        const auto& p = profiles[i];
        double beta[4];
        {
            const ViewpointMatrix V = viewpoint_matrix(p);
            for (int k = 0; k < 4; ++k) beta[k] = build_index_matrix(p, V, {static_cast<std::size_t>(k + 1), true}).beta;
        }
        r.detail << " " << p.name << "=[";
        for (int k = 0; k < 4; ++k) {
            r.detail << (k ? " " : "") << beta[k] << "/" << kTable[i][k];
            worst = std::max(worst, std::abs(beta[k] - kTable[i][k]));
            r.fail_if(beta[k] < 1.0 || beta[k] > 3.0, p.name + " beta outside [1,3]");
            r.fail_if(k > 0 && beta[k] > beta[k - 1], p.name + " P_w=" + std::to_string(k + 1) + " increases beta");
            r.fail_if(std::abs(beta[k] - kTable[i][k]) > 0.1, p.name + " P_w=" + std::to_string(k + 1) + " off the table by >0.1");
        }
        r.detail << "]";
    }
    r.detail << " max|diff|=" << worst << std::defaultfloat;
}

void repurposing_fidelity(Outcome& r) {
    std::mt19937 rng(2024);
    std::size_t stacks = 0, mismatches = 0;
    for (int t = 0; t < 10; ++t) {
        const DisplayProfile p = random_toy(rng);
        const auto limit = static_cast<std::size_t>(std::floor(3.0 * static_cast<double>(p.width_px) / p.line_count));
        const std::size_t pw = 1 + static_cast<std::size_t>(t) % std::min<std::size_t>(4, limit);
        const auto m = build_index_matrix(p, viewpoint_matrix(p), {pw, true});
        const auto rs = build_rayset(m);
        for (int s = 0; s < 10; ++s) {
            MultiViewStack<std::uint8_t> stack;
            for (std::size_t v = 0; v < p.num_views; ++v) {
                Image8 img(p.height_px, p.width_px);
                for (auto& c : img.data()) c = static_cast<std::uint8_t>(rng());
                stack.push_back(std::move(img));
            }
            ++stacks;
            if (reorder_to_encoded(sample_rays(stack, rs), rs) != assemble_encoded(m, stack)) ++mismatches;
        }
    }
    r.detail << " stacks=" << stacks << " mismatches=" << mismatches;
    r.fail_if(stacks != 100 || mismatches != 0, "routing disagrees with the index matrix");
}

void raycaster_oracle(Outcome& r) {
    std::mt19937 rng(99);
    double max_diff = 0.0;
    std::size_t rays = 0, violations = 0;
    const std::size_t caps[] = {16, 32, 64, 128, 256};
    double sum_err[5] = {0, 0, 0, 0, 0};
    // Dense scenes so most rays meet more than 16 Gaussians.
    const std::pair<std::size_t, double> configs[] = {{1000, 0.6}, {700, 0.8}, {400, 0.5}, {1000, 1.0}};
    for (std::size_t si = 0; si < 4; ++si) {
        const auto s = testscene::random_scene(configs[si].first, static_cast<unsigned>(100 + si), configs[si].second,
                                               static_cast<int>(si % 4), 0.05, 0.2);
        const Bvh bvh = build_bvh(s);
        for (int i = 0; i < 250; ++i, ++rays) {
            const Ray ray = random_ray(rng, 3.0, configs[si].second * 0.8);
            RaycastOptions full;
            full.heap_capacity = s.size();
            full.background = Rgb(0.3, 0.5, 0.7);
            const Composite a = trace_ray_composite(bvh, s, ray, full), b = brute_force_composite(s, ray, full);
            track(a);
            track(b);
            max_diff = std::max(max_diff, (a.color - b.color).cwiseAbs().maxCoeff());
            // Error trend against the oracle on a black background.
            const Rgb ref = brute_force_ray(s, ray);
            double prev = std::numeric_limits<double>::infinity();
            for (int c = 0; c < 5; ++c) {
                RaycastOptions o;
                o.heap_capacity = caps[c];
                const Composite comp = trace_ray_composite(bvh, s, ray, o);
                track(comp);
                const double e = (comp.color - ref).squaredNorm();
                if (e > prev + 1e-15) ++violations;
                prev = e;
                sum_err[c] += e;
            }
        }
    }
    r.detail << " rays=" << rays << " max|trace-oracle|=" << max_diff << " mse(c_h=16..256)=";
    for (int c = 0; c < 5; ++c) r.detail << (c ? "," : "") << sum_err[c] / (3.0 * static_cast<double>(rays));
    r.detail << " trend_violations=" << violations;
    r.fail_if(max_diff > 1e-5, "full-heap trace differs from the oracle");
    r.fail_if(violations != 0, "error grew with a larger heap");
    r.fail_if(!(sum_err[0] > sum_err[4]), "heap capacity has no effect on these scenes");
}

void volume_rendering(Outcome& r) {
    const auto f = make_analytic_field(AnalyticKind::constant_sphere, 512);
    double worst = 0.0;
    std::size_t n = 0;
    for (int i = 0; i <= 40; ++i) {
        const double b = 0.99 * i / 40.0;
        const Composite c = f->march(Ray{Vec3(b * std::cos(i), b * std::sin(i), 6.0), Vec3(0, 0, -1)});
        track(c);
        const double chord = 2.0 * std::sqrt(1.0 - b * b);
        const double want = 1.0 - std::exp(-0.5 * chord);
        worst = std::max(worst, (c.color - Rgb::Constant(want)).cwiseAbs().maxCoeff());
        ++n;
    }
    // Whole views of every analytic field also feed the normalization check.
    const DisplayProfile p = profile_desk();
    const CameraRig rig = camera_rig(p, look_at(Vec3(0, 0, 3), Vec3::Zero()), 3.0);
    const RayGenerator gen(rig, p);
    for (auto kind : {AnalyticKind::constant_sphere, AnalyticKind::two_spheres, AnalyticKind::gradient_box}) {
        const auto field = make_analytic_field(kind, 64);
        for (std::size_t v = 0; v < p.num_views; v += 3)
            for (std::size_t x = 0; x < p.height_px; x += 2)
                for (std::size_t y = 0; y < p.width_px; y += 2) track(field->march(gen(v, static_cast<double>(x), static_cast<double>(y))));
    }
    r.detail << " chords=" << n << " max|C-(1-e^-sigma*l)|=" << worst << " max|sum(aT)+T-1|=" << g_norm_err;
    r.fail_if(worst > 1e-3, "Beer-Lambert mismatch");
    r.fail_if(g_norm_err > 1e-12, "weights do not sum to one");
}

void interlacing_math(Outcome& r) {
    std::size_t n = 0, oracle_bad = 0, lib_bad = 0, wraps = 0;
    for (const auto& g : golden::kGolden) {
        const auto ex = golden::exact_params(g.panel);
        if (oracle::view(g.x, g.y, g.k, ex.tan_a, ex.L, ex.K, ex.N) != g.view) ++oracle_bad;
        const DisplayProfile p = golden::profile_named(g.panel);
        if (subpixel_view(p, g.x, g.y, g.k) != g.view) ++lib_bad;
        if (SubpixelViewMapper(p).distance_offset(g.x, g.y, g.k) < 0.0) ++wraps;
        ++n;
    }
    r.detail << " cases=" << n << " negative_offset=" << wraps << " oracle_mismatch=" << oracle_bad << " library_mismatch=" << lib_bad;
    r.fail_if(n < 50, "fewer than 50 cases");
    r.fail_if(wraps == 0, "no negative-offset cases");
    r.fail_if(oracle_bad + lib_bad != 0, "viewpoint mismatch");
}

void throughput_scaling(Outcome& r) {
    const DisplayProfile p = profile_desk();
    const auto field = make_analytic_field(AnalyticKind::gradient_box, kDefaultMarchSteps);
    const auto on = precompute(p, 2, true), off = precompute(p, 2, false);
    const std::size_t pixels = p.width_px * p.height_px;
    const double beta = on.beta();
    const double ray_ratio = static_cast<double>(off.rays.n_rays()) / static_cast<double>(on.rays.n_rays());
    // 3/beta = 3wh/n_on, so the ratio is exact when the baseline renders exactly 3wh rays.
    r.fail_if(off.rays.n_rays() != 3 * pixels, "baseline ray count is not 3wh");
    r.fail_if(std::abs(ray_ratio - 3.0 / beta) > 1e-12 * ray_ratio, "ray ratio differs from 3/beta");

    // The box fills every view, so each ray costs the same number of march steps.
    const double radius = 1.5;
    const Mat4 pose = look_at(Vec3(0, 0, radius), Vec3::Zero());
    const CameraRig rig = camera_rig(p, pose, radius);
    render_directl(*field, rig, p, on.rays);
    render_directl(*field, rig, p, off.rays);
    std::vector<double> t_on, t_off;
    for (int f = 0; f < 7; ++f) {
        t_off.push_back(render_directl(*field, rig, p, off.rays).total_seconds());
        t_on.push_back(render_directl(*field, rig, p, on.rays).total_seconds());
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    const double time_ratio = median(t_off) / median(t_on);
    const double rel = time_ratio / (3.0 / beta) - 1.0;
    r.detail << " beta=" << beta << " rays_off=" << off.rays.n_rays() << " rays_on=" << on.rays.n_rays()
             << " ray_ratio=" << ray_ratio << " 3/beta=" << 3.0 / beta << " time_ratio=" << time_ratio
             << " deviation=" << std::setprecision(3) << 100.0 * rel << "%" << std::setprecision(6);
    r.fail_if(std::abs(rel) > 0.30, "frame-time ratio outside 30% of 3/beta");
}

// Command-line robustness --------------------------------------------------------------------

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DIRECTL_CLI) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::size_t entries_in(const fs::path& dir) {
    if (!fs::exists(dir)) return 0;
    std::size_t n = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
    return n;
}

void robustness(Outcome& r) {
    std::random_device rd;
    const fs::path dir = fs::temp_directory_path() / ("directl_acceptance_" + std::to_string(rd()));
    fs::create_directories(dir);
    const fs::path poses = dir / "poses.txt", cache = dir / "desk.dlrc", ply = dir / "good.ply";
    {
        std::ofstream o(poses);
        write_poses(o, {look_at(Vec3(0, 0, 4), Vec3::Zero()), look_at(Vec3(0.4, 0, 4), Vec3::Zero())});
    }
    save_gaussian_scene(ply, testscene::random_scene(50, 5));
    std::size_t checks = 0, failures = 0;
    auto expect = [&](const std::string& what, const std::string& args, int code, const fs::path& out) {
        ++checks;
        const int rc = run_cli(args);
        const std::size_t left = out.empty() ? 0 : entries_in(out);
        if (rc != code || left != 0) {
            ++failures;
            r.detail << " {" << what << ": exit " << rc << " want " << code << ", " << left << " file(s) left}";
        }
    };
    if (run_cli("precompute --profile desk --pw 2 --out " + q(cache)) != 0) {
        r.fail_if(true, "precompute failed");
        return;
    }
    const std::string field = " --analytic constant_sphere --steps 4 --poses " + q(poses);
    auto render = [&](const std::string& out) { return "render --profile desk --cache " + q(cache) + field + " --out " + q(dir / out); };

    // Malformed scenes.
    std::string good;
    {
        std::ifstream in(ply, std::ios::binary);
        good.assign(std::istreambuf_iterator<char>(in), {});
    }
    const auto header_end = good.find("end_header\n") + 11;
    const std::pair<std::string, std::string> bad_scenes[] = {
        {"truncated", good.substr(0, good.size() - 7)},
        {"no_opacity", [&] {
             std::string s = good;
             const auto at = s.find("property float opacity");
             s.replace(at, 22, "property float opakity");
             return s;
         }()},
        {"nan", [&] {
             std::string s = good;
             const float nan = std::numeric_limits<float>::quiet_NaN();
             std::memcpy(&s[header_end + 4], &nan, 4);
             return s;
         }()},
        {"ascii", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n0\n"},
        {"empty", ""},
    };
    for (const auto& [name, bytes] : bad_scenes) {
        const fs::path f = dir / (name + ".ply");
        std::ofstream(f, std::ios::binary) << bytes;
        expect("scene " + name,
               "render --profile desk --cache " + q(cache) + " --scene " + q(f) + " --poses " + q(poses) + " --out " + q(dir / ("o_" + name)),
               2, dir / ("o_" + name));
    }

    // Cache built for a different profile, and a damaged cache.
    auto other = profile_desk();
    other.name = "desk_b";
    other.tilt_angle += 0.01;
    save_profile(dir / "other.json", other);
    expect("hash mismatch",
           "render --profile " + q(dir / "other.json") + " --cache " + q(cache) + field + " --out " + q(dir / "o_hash"), 2,
           dir / "o_hash");
    std::ofstream(dir / "cut.dlrc", std::ios::binary) << std::string(40, 'x');
    expect("damaged cache", "render --profile desk --cache " + q(dir / "cut.dlrc") + field + " --out " + q(dir / "o_cut"), 2,
           dir / "o_cut");

    // Out-of-range arguments.
    expect("pw 0", "precompute --profile desk --pw 0 --out " + q(dir / "r1" / "c.dlrc"), 1, dir / "r1");
    expect("pw too wide", "precompute --profile desk --pw 1000 --out " + q(dir / "r2" / "c.dlrc"), 1, dir / "r2");
    expect("negative radius", render("o_r3") + " --radius -2", 1, dir / "o_r3");
    expect("zero steps", render("o_r4") + " --steps 0", 1, dir / "o_r4");
    expect("zero heap", render("o_r5") + " --ch 0", 1, dir / "o_r5");
    expect("bad view res", render("o_r6") + " --mode standard --view-res xr", 1, dir / "o_r6");
    expect("bad mode", render("o_r7") + " --mode fast", 1, dir / "o_r7");
    expect("no subcommand", "", 1, {});

    // A failure on the second frame must take the first one with it.
    fs::create_directories(dir / "o_mid" / "frame_0001.ppm");
    ++checks;
    {
        const int rc = run_cli(render("o_mid"));
        const bool first_left = fs::exists(dir / "o_mid" / "frame_0000.ppm");
        if (rc != 2 || first_left || entries_in(dir / "o_mid") != 1) {
            ++failures;
            r.detail << " {mid-render failure: exit " << rc << ", first frame left=" << first_left << "}";
        }
    }

    // The happy path leaves exactly the frames and the timing log.
    ++checks;
    if (run_cli(render("o_ok")) != 0 || entries_in(dir / "o_ok") != 3) {
        ++failures;
        r.detail << " {valid render did not produce 3 files}";
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    r.detail << " checks=" << checks << " failures=" << failures;
    r.fail_if(failures != 0, "CLI robustness");
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
        {"1 paradigm equivalence", paradigm_equivalence},
        {"2 pixel ratio beta", pixel_ratio},
        {"3 repurposing fidelity", repurposing_fidelity},
        {"4 ray-caster oracle", raycaster_oracle},
        {"5 volume rendering", volume_rendering},
        {"6 interlacing math", interlacing_math},
        {"7 throughput scaling", throughput_scaling},
        {"8 robustness", robustness},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome r;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            fn(r);
        } catch (const std::exception& e) {
            r.fail_if(true, std::string("exception: ") + e.what());
        }
        if (!r.pass) ++failed;
        std::cout << (r.pass ? "PASS " : "FAIL ") << name << ":" << r.detail.str() << " (" << std::fixed
                  << std::setprecision(1) << seconds(t0) << "s)" << std::defaultfloat << std::setprecision(6) << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
