#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "geonew/data.hpp"
#include "geonew/feec.hpp"
#include "geonew/mesh.hpp"

using namespace geonew;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::map<std::size_t, double> square_dirichlet(const mesh::Mesh& m,
                                               double (*f)(double, double)) {
    std::map<std::size_t, double> d;
    auto mask = m.boundary_mask();
    for (std::size_t i = 0; i < m.n_nodes(); ++i)
        if (mask[i]) d[i] = f(m.nodes[i][0], m.nodes[i][1]);
    return d;
}

}  // namespace

TEST_CASE("reference solve: manufactured solution converges at rate >= 1.8") {
    // u = x(1-x) y(1-y), f = -lap u = 2 [x(1-x) + y(1-y)]
    auto exact = [](double x, double y) { return x * (1 - x) * y * (1 - y); };
    auto forcing = [](double x, double y) { return 2.0 * (x * (1 - x) + y * (1 - y)); };
    std::vector<double> errors;
    for (int n : {8, 16, 32}) {
        auto m = mesh::make_rectangle(n, n);
        auto fine = feec::assemble(m);
        std::vector<double> f(m.n_nodes());
        for (std::size_t i = 0; i < m.n_nodes(); ++i)
            f[i] = forcing(m.nodes[i][0], m.nodes[i][1]);
        auto dirichlet = square_dirichlet(m, [](double, double) { return 0.0; });
        auto u = data::reference_poisson_solve(m, fine, f, dirichlet);
        CHECK(data::reference_residual(m, fine, f, dirichlet, u) <= 1e-10);
        // mass-weighted nodal l2 error
        std::vector<double> e(m.n_nodes());
        for (std::size_t i = 0; i < m.n_nodes(); ++i)
            e[i] = u[i] - exact(m.nodes[i][0], m.nodes[i][1]);
        auto me = fine.m0.multiply(e);
        double err2 = 0.0;
        for (std::size_t i = 0; i < e.size(); ++i) err2 += e[i] * me[i];
        errors.push_back(std::sqrt(err2));
    }
    const double rate1 = std::log2(errors[0] / errors[1]);
    const double rate2 = std::log2(errors[1] / errors[2]);
    CHECK(rate1 >= 1.8);
    CHECK(rate2 >= 1.8);
}

TEST_CASE("reference solve: constant boundary data gives the constant solution") {
    mesh::GeometrySpec s;
    auto m = mesh::generate_annulus_polygon(s);
    auto fine = feec::assemble(m);
    std::vector<double> f(m.n_nodes(), 0.0);
    auto dirichlet = square_dirichlet(m, [](double, double) { return 2.5; });
    auto u = data::reference_poisson_solve(m, fine, f, dirichlet);
    for (double v : u) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("reference solve: reflected problem reproduces the solution") {
    // the structured triangulation itself is not mirror-symmetric (fixed quad
    // diagonal), so reflect the whole problem: mirrored coordinates with
    // orientation-restoring connectivity must give the same nodal solution
    mesh::GeometrySpec s;
    s.n_sides = 4;
    s.rotation = 0.0;
    s.radial_layers = 3;
    s.angular_resolution = 16;
    auto m = mesh::generate_annulus_polygon(s);
    mesh::Mesh refl = m;
    for (auto& p : refl.nodes) p[1] = -p[1];
    for (auto& tri : refl.triangles) std::swap(tri[1], tri[2]);
    refl.validate();
    auto solve_on = [](const mesh::Mesh& mm) {
        auto fine = feec::assemble(mm);
        std::vector<double> f(mm.n_nodes(), 1.0);
        std::map<std::size_t, double> dirichlet;
        for (std::size_t i : mm.sidesets.at("inner").nodes) dirichlet[i] = 1.0;
        for (std::size_t i : mm.sidesets.at("outer").nodes) dirichlet[i] = 0.0;
        return data::reference_poisson_solve(mm, feec::assemble(mm), f, dirichlet);
    };
    auto u = solve_on(m);
    auto ur = solve_on(refl);
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(std::abs(u[i] - ur[i]) <= 1e-10);
}

TEST_CASE("generate_dataset: splits respect the n<5 / n>5 rule; deterministic bytes") {
    TempDir dir("geonew_data_test");
    data::DatasetConfig cfg;
    cfg.n_train = 4;
    cfg.n_test_id = 2;
    cfg.n_test_ood = 2;
    cfg.radial_layers = 2;
    cfg.angular_resolution = 10;
    cfg.seed = 7;
    auto manifest = data::generate_dataset(cfg, (dir.path / "run1").string());
    CHECK(manifest.samples.size() == 8);
    for (const auto& r : manifest.samples) {
        if (r.split == "test_ood")
            CHECK(r.n_sides > 5);
        else
            CHECK(r.n_sides < 5);
    }
    // byte-identical on re-run with the same seed
    data::generate_dataset(cfg, (dir.path / "run2").string());
    for (const auto& r : manifest.samples) {
        CHECK(slurp((dir.path / "run1" / r.file).string()) ==
              slurp((dir.path / "run2" / r.file).string()));
        CHECK(slurp((dir.path / "run1" / r.mesh_file).string()) ==
              slurp((dir.path / "run2" / r.mesh_file).string()));
    }
    CHECK(slurp((dir.path / "run1/manifest.json").string()) ==
          slurp((dir.path / "run2/manifest.json").string()));
}

TEST_CASE("sample container round trip and stored-solution re-verification") {
    TempDir dir("geonew_data_io");
    data::DatasetConfig cfg;
    cfg.n_train = 2;
    cfg.n_test_id = 1;
    cfg.n_test_ood = 1;
    cfg.radial_layers = 2;
    cfg.angular_resolution = 10;
    cfg.seed = 3;
    auto manifest = data::generate_dataset(cfg, dir.path.string());
    auto s = data::load_sample((dir.path / manifest.samples[0].file).string());
    CHECK(s.split == "train");
    CHECK(s.u.rows == 30);  // (radial_layers + 1) * angular_resolution nodes
    CHECK(s.boundary_data.at("inner").size() == 10);
    // loading the dataset re-verifies each solution against the residual
    geofeat::FeatureConfig fcfg;
    fcfg.n_times = 4;
    fcfg.n_eigs = 4;
    fcfg.harmonic_pairs = {{"inner", "outer"}};
    auto all = data::load_dataset((dir.path / "manifest.json").string(), fcfg,
                                  (dir.path / "cache").string());
    CHECK(all.size() == 4);
    // iteration order matches the manifest order
    for (std::size_t i = 0; i < all.size(); ++i)
        CHECK(all[i]->sample.split == manifest.samples[i].split);
    // split filter selects only matching samples
    auto ood = data::load_dataset((dir.path / "manifest.json").string(), fcfg,
                                  (dir.path / "cache").string(), "test_ood");
    CHECK(ood.size() == 1);
    CHECK(ood[0]->sample.spec.n_sides > 5);

    // corrupting the stored solution trips the residual re-check
    auto bad = s;
    bad.u(bad.u.rows / 2, 0) += 0.37;
    data::save_sample(bad, (dir.path / manifest.samples[0].file).string());
    CHECK_THROWS_AS(data::load_dataset((dir.path / "manifest.json").string(), fcfg,
                                       (dir.path / "cache").string()),
                    std::runtime_error);
}

TEST_CASE("feature cache: hit returns identical features, corruption detected") {
    TempDir dir("geonew_cache_test");
    data::DatasetConfig cfg;
    cfg.n_train = 1;
    cfg.n_test_id = 1;
    cfg.n_test_ood = 1;
    cfg.radial_layers = 2;
    cfg.angular_resolution = 12;
    cfg.seed = 11;
    data::generate_dataset(cfg, dir.path.string());
    geofeat::FeatureConfig fcfg;
    fcfg.n_times = 4;
    fcfg.n_eigs = 6;
    fcfg.harmonic_pairs = {{"inner", "outer"}};
    const std::string manifest = (dir.path / "manifest.json").string();
    const std::string cache = (dir.path / "cache").string();
    auto fresh = data::load_dataset(manifest, fcfg, cache);
    auto cached = data::load_dataset(manifest, fcfg, cache);  // second load hits the cache
    for (std::size_t i = 0; i < fresh.size(); ++i)
        CHECK(fresh[i]->features.features.a == cached[i]->features.features.a);
    // corrupt every cache file; loader must detect and recompute identically
    for (const auto& entry : fs::directory_iterator(cache)) {
        std::ofstream out(entry.path(), std::ios::binary);
        out << "GNWFgarbage";
    }
    auto recomputed = data::load_dataset(manifest, fcfg, cache);
    for (std::size_t i = 0; i < fresh.size(); ++i)
        CHECK(fresh[i]->features.features.a == recomputed[i]->features.features.a);
}

TEST_CASE("manifest: split-rule violations rejected on load") {
    TempDir dir("geonew_manifest_test");
    data::DatasetManifest m;
    m.seed = 1;
    m.samples.push_back({"samples/s0000.gnwd", "meshes/m0000.json", "train", 6});
    data::save_manifest(m, (dir.path / "manifest.json").string());
    CHECK_THROWS_AS(data::load_manifest((dir.path / "manifest.json").string()),
                    std::invalid_argument);
    m.samples[0] = {"samples/s0000.gnwd", "meshes/m0000.json", "test_ood", 4};
    data::save_manifest(m, (dir.path / "manifest.json").string());
    CHECK_THROWS_AS(data::load_manifest((dir.path / "manifest.json").string()),
                    std::invalid_argument);
}

TEST_CASE("reference solve: rejects uncovered boundary and empty interior") {
    auto m = mesh::make_rectangle(2, 2);
    auto fine = feec::assemble(m);
    std::vector<double> f(m.n_nodes(), 0.0);
    CHECK_THROWS_AS(data::reference_poisson_solve(m, fine, f, {}), std::invalid_argument);
}
