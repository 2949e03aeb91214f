#include "geonew/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "geonew/log.hpp"

namespace geonew::data {

namespace fs = std::filesystem;
using linalg::DenseMatrix;
using nlohmann::json;

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::invalid_argument("cannot write '" + path + "'");
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

void append_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::string& s, std::size_t& pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t((unsigned char)s.at(pos++)) << (8 * i);
    return v;
}

void append_f64_array(std::string& s, const std::vector<double>& v) {
    const std::size_t off = s.size();
    s.resize(off + v.size() * 8);
    std::memcpy(s.data() + off, v.data(), v.size() * 8);
}

std::vector<double> read_f64_array(const std::string& s, std::size_t& pos, std::size_t n) {
    if (pos + n * 8 > s.size()) throw std::invalid_argument("sample file truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), s.data() + pos, n * 8);
    pos += n * 8;
    return v;
}

json spec_to_json(const mesh::GeometrySpec& s) {
    return json{{"n_sides", s.n_sides},
                {"poly_radius", s.poly_radius},
                {"outer_radius", s.outer_radius},
                {"rotation", s.rotation},
                {"radial_layers", s.radial_layers},
                {"angular_resolution", s.angular_resolution},
                {"seed", s.seed}};
}

mesh::GeometrySpec spec_from_json(const json& j) {
    mesh::GeometrySpec s;
    s.n_sides = j.at("n_sides").get<int>();
    s.poly_radius = j.at("poly_radius").get<double>();
    s.outer_radius = j.at("outer_radius").get<double>();
    s.rotation = j.at("rotation").get<double>();
    s.radial_layers = j.at("radial_layers").get<int>();
    s.angular_resolution = j.at("angular_resolution").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

constexpr double kTwoPi = 6.28318530717958647692;

}  // namespace

json dataset_config_to_json(const DatasetConfig& c) {
    return json{{"n_train", c.n_train},
                {"n_test_id", c.n_test_id},
                {"n_test_ood", c.n_test_ood},
                {"train_sides", c.train_sides},
                {"ood_sides", c.ood_sides},
                {"poly_radius_min", c.poly_radius_min},
                {"poly_radius_max", c.poly_radius_max},
                {"outer_radius", c.outer_radius},
                {"radial_layers", c.radial_layers},
                {"angular_resolution", c.angular_resolution},
                {"inner_value", c.inner_value},
                {"outer_value", c.outer_value},
                {"randomize_amplitude", c.randomize_amplitude},
                {"f_const", c.f_const},
                {"seed", c.seed}};
}

DatasetConfig dataset_config_from_json(const json& j) {
    DatasetConfig c;
    for (const auto& [key, val] : j.items()) {
        if (key == "n_train")
            c.n_train = val.get<std::size_t>();
        else if (key == "n_test_id")
            c.n_test_id = val.get<std::size_t>();
        else if (key == "n_test_ood")
            c.n_test_ood = val.get<std::size_t>();
        else if (key == "train_sides")
            c.train_sides = val.get<std::vector<int>>();
        else if (key == "ood_sides")
            c.ood_sides = val.get<std::vector<int>>();
        else if (key == "poly_radius_min")
            c.poly_radius_min = val.get<double>();
        else if (key == "poly_radius_max")
            c.poly_radius_max = val.get<double>();
        else if (key == "outer_radius")
            c.outer_radius = val.get<double>();
        else if (key == "radial_layers")
            c.radial_layers = val.get<int>();
        else if (key == "angular_resolution")
            c.angular_resolution = val.get<int>();
        else if (key == "inner_value")
            c.inner_value = val.get<double>();
        else if (key == "outer_value")
            c.outer_value = val.get<double>();
        else if (key == "randomize_amplitude")
            c.randomize_amplitude = val.get<bool>();
        else if (key == "f_const")
            c.f_const = val.get<double>();
        else if (key == "seed")
            c.seed = val.get<std::uint64_t>();
        else
            throw std::invalid_argument("unknown dataset config key '" + key + "'");
    }
    return c;
}

std::vector<double> reference_poisson_solve(const mesh::Mesh& m,
                                            const feec::FineOperators& fine,
                                            const std::vector<double>& f_nodal,
                                            const std::map<std::size_t, double>& dirichlet) {
    const std::size_t n = m.n_nodes();
    auto bmask = m.boundary_mask();
    for (std::size_t i = 0; i < n; ++i)
        if (bmask[i] && !dirichlet.count(i))
            throw std::invalid_argument("reference_poisson_solve: boundary node " +
                                        std::to_string(i) + " has no Dirichlet value");
    std::vector<std::size_t> free_idx;
    for (std::size_t i = 0; i < n; ++i)
        if (!dirichlet.count(i)) free_idx.push_back(i);
    if (free_idx.empty()) throw std::invalid_argument("reference_poisson_solve: empty interior");
    const DenseMatrix k = fine.k.to_dense();
    auto mf = fine.m0.multiply(f_nodal);
    std::vector<double> rhs(free_idx.size());
    for (std::size_t r = 0; r < free_idx.size(); ++r) {
        double s = mf[free_idx[r]];
        for (const auto& [c, val] : dirichlet) s -= k(free_idx[r], c) * val;
        rhs[r] = s;
    }
    DenseMatrix kff = linalg::submatrix(k, free_idx, free_idx);
    for (std::size_t i = 0; i < kff.rows; ++i)
        for (std::size_t j = i + 1; j < kff.cols; ++j)
            kff(i, j) = kff(j, i) = 0.5 * (kff(i, j) + kff(j, i));
    auto uf = linalg::solve_spd(kff, rhs);
    std::vector<double> u(n, 0.0);
    for (const auto& [c, val] : dirichlet) u[c] = val;
    for (std::size_t r = 0; r < free_idx.size(); ++r) u[free_idx[r]] = uf[r];
    return u;
}

double reference_residual(const mesh::Mesh& m, const feec::FineOperators& fine,
                          const std::vector<double>& f_nodal,
                          const std::map<std::size_t, double>& dirichlet,
                          const std::vector<double>& u) {
    auto ku = fine.k.multiply(u);
    auto mf = fine.m0.multiply(f_nodal);
    double s = 0.0;
    for (std::size_t i = 0; i < m.n_nodes(); ++i) {
        if (dirichlet.count(i)) continue;
        const double r = ku[i] - mf[i];
        s += r * r;
    }
    return std::sqrt(s);
}

void save_sample(const Sample& s, const std::string& path) {
    json header;
    header["mesh"] = s.mesh_file;
    header["split"] = s.split;
    header["spec"] = spec_to_json(s.spec);
    json arrays = json::array();
    arrays.push_back({{"name", "u"}, {"rows", s.u.rows}, {"cols", s.u.cols}});
    for (const auto& [name, vals] : s.boundary_data)
        arrays.push_back({{"name", "ub_" + name}, {"rows", vals.size()}, {"cols", 1}});
    header["arrays"] = arrays;
    const std::string hdr = header.dump();
    std::string out = "GNWD";
    append_u32(out, 1);
    append_u32(out, std::uint32_t(hdr.size()));
    out += hdr;
    append_f64_array(out, s.u.a);
    for (const auto& [name, vals] : s.boundary_data) append_f64_array(out, vals);
    write_file(path, out);
}

Sample load_sample(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 12 || bytes.substr(0, 4) != "GNWD")
        throw std::invalid_argument("not a GNWD sample file: " + path);
    std::size_t pos = 4;
    const std::uint32_t version = read_u32(bytes, pos);
    if (version != 1) throw std::invalid_argument("unsupported GNWD version");
    const std::uint32_t hlen = read_u32(bytes, pos);
    json header = json::parse(bytes.substr(pos, hlen));
    pos += hlen;
    Sample s;
    s.mesh_file = header.at("mesh").get<std::string>();
    s.split = header.at("split").get<std::string>();
    s.spec = spec_from_json(header.at("spec"));
    for (const auto& arr : header.at("arrays")) {
        const std::string name = arr.at("name").get<std::string>();
        const std::size_t rows = arr.at("rows").get<std::size_t>();
        const std::size_t cols = arr.at("cols").get<std::size_t>();
        auto vals = read_f64_array(bytes, pos, rows * cols);
        if (name == "u") {
            s.u = DenseMatrix(rows, cols);
            s.u.a = std::move(vals);
        } else if (name.rfind("ub_", 0) == 0) {
            s.boundary_data[name.substr(3)] = std::move(vals);
        } else {
            throw std::invalid_argument("unknown array '" + name + "' in sample file");
        }
    }
    return s;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    json j;
    j["format_version"] = m.format_version;
    j["seed"] = m.seed;
    j["config"] = dataset_config_to_json(m.config);
    json samples = json::array();
    for (const auto& r : m.samples)
        samples.push_back(
            {{"file", r.file}, {"mesh", r.mesh_file}, {"split", r.split}, {"n_sides", r.n_sides}});
    j["samples"] = samples;
    write_file(path, j.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::string& path) {
    json j = json::parse(read_file(path));
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = dataset_config_from_json(j.at("config"));
    for (const auto& s : j.at("samples")) {
        SampleRecord r;
        r.file = s.at("file").get<std::string>();
        r.mesh_file = s.at("mesh").get<std::string>();
        r.split = s.at("split").get<std::string>();
        r.n_sides = s.at("n_sides").get<int>();
        // split rules: train and test_id stay below 5 sides, ood above 5
        if ((r.split == "train" || r.split == "test_id") && r.n_sides >= 5)
            throw std::invalid_argument("manifest: " + r.split + " sample with n_sides " +
                                        std::to_string(r.n_sides) + " >= 5");
        if (r.split == "test_ood" && r.n_sides <= 5)
            throw std::invalid_argument("manifest: test_ood sample with n_sides " +
                                        std::to_string(r.n_sides) + " <= 5");
        m.samples.push_back(std::move(r));
    }
    return m;
}

namespace {

Sample make_sample(const DatasetConfig& cfg, const mesh::GeometrySpec& spec,
                   const std::string& split, double inner_value) {
    Sample s;
    s.split = split;
    s.spec = spec;
    auto m = mesh::generate_annulus_polygon(spec);
    auto fine = feec::assemble(m);
    s.boundary_data["inner"] =
        std::vector<double>(m.sidesets.at("inner").nodes.size(), inner_value);
    s.boundary_data["outer"] =
        std::vector<double>(m.sidesets.at("outer").nodes.size(), cfg.outer_value);
    std::map<std::size_t, double> dirichlet;
    for (const auto& [name, vals] : s.boundary_data) {
        const auto& nodes = m.sidesets.at(name).nodes;
        for (std::size_t i = 0; i < nodes.size(); ++i) dirichlet[nodes[i]] = vals[i];
    }
    std::vector<double> f(m.n_nodes(), cfg.f_const);
    auto u = reference_poisson_solve(m, fine, f, dirichlet);
    const double res = reference_residual(m, fine, f, dirichlet, u);
    if (res > 1e-10)
        throw std::runtime_error("reference solve residual " + std::to_string(res) +
                                 " above tolerance");
    s.u = DenseMatrix(m.n_nodes(), 1);
    s.u.a = std::move(u);
    return s;
}

}  // namespace

DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    fs::create_directories(fs::path(out_dir) / "meshes");
    fs::create_directories(fs::path(out_dir) / "samples");
    DatasetManifest manifest;
    manifest.seed = cfg.seed;
    manifest.config = cfg;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> radius(cfg.poly_radius_min, cfg.poly_radius_max);
    std::uniform_real_distribution<double> angle(0.0, kTwoPi);
    std::uniform_real_distribution<double> amp(0.5, 2.0);
    std::size_t idx = 0;
    auto emit = [&](const std::string& split, std::size_t count, const std::vector<int>& sides) {
        std::uniform_int_distribution<std::size_t> side_pick(0, sides.size() - 1);
        for (std::size_t i = 0; i < count; ++i, ++idx) {
            mesh::GeometrySpec spec;
            spec.n_sides = sides[side_pick(rng)];
            spec.poly_radius = radius(rng);
            spec.outer_radius = cfg.outer_radius;
            spec.rotation = angle(rng);
            spec.radial_layers = cfg.radial_layers;
            spec.angular_resolution = cfg.angular_resolution;
            spec.seed = cfg.seed;
            const double inner_value =
                cfg.randomize_amplitude ? cfg.inner_value * amp(rng) : cfg.inner_value;
            char mesh_name[32], sample_name[32];
            std::snprintf(mesh_name, sizeof(mesh_name), "meshes/m%04zu.json", idx);
            std::snprintf(sample_name, sizeof(sample_name), "samples/s%04zu.gnwd", idx);
            Sample s = make_sample(cfg, spec, split, inner_value);
            s.mesh_file = mesh_name;
            mesh::save_mesh(mesh::generate_annulus_polygon(spec),
                            (fs::path(out_dir) / mesh_name).string());
            save_sample(s, (fs::path(out_dir) / sample_name).string());
            manifest.samples.push_back({sample_name, mesh_name, split, spec.n_sides});
            log::debug("generated %s (%s, n=%d)", sample_name, split.c_str(), spec.n_sides);
        }
    };
    emit("train", cfg.n_train, cfg.train_sides);
    emit("test_id", cfg.n_test_id, cfg.train_sides);
    emit("test_ood", cfg.n_test_ood, cfg.ood_sides);
    save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

namespace {

std::string feature_config_key(const geofeat::FeatureConfig& fcfg) {
    std::ostringstream os;
    os << "v1;times=" << fcfg.n_times << ";eigs=" << fcfg.n_eigs << ";pairs=";
    for (const auto& [a, b] : fcfg.harmonic_pairs) os << a << ":" << b << ",";
    return os.str();
}

void append_matrix(std::string& bytes, json& arrays, const std::string& name,
                   const DenseMatrix& m) {
    arrays.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
    append_f64_array(bytes, m.a);
}

bool load_cached_features(const std::string& path, std::uint64_t expect_hash,
                          geofeat::GeoFeatures& out) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) return false;
    std::string bytes;
    {
        std::ostringstream os;
        os << probe.rdbuf();
        bytes = os.str();
    }
    if (bytes.size() < 12 || bytes.substr(0, 4) != "GNWF") return false;
    std::size_t pos = 4;
    if (read_u32(bytes, pos) != 1) return false;
    const std::uint32_t hlen = read_u32(bytes, pos);
    json header;
    try {
        header = json::parse(bytes.substr(pos, hlen));
    } catch (...) {
        return false;
    }
    pos += hlen;
    if (header.value("hash", std::string()) != std::to_string(expect_hash)) return false;
    try {
        out.times = header.at("times").get<std::vector<double>>();
        for (const auto& arr : header.at("arrays")) {
            const std::string name = arr.at("name").get<std::string>();
            DenseMatrix m(arr.at("rows").get<std::size_t>(),
                          arr.at("cols").get<std::size_t>());
            m.a = read_f64_array(bytes, pos, m.rows * m.cols);
            if (name == "hks")
                out.hks = std::move(m);
            else if (name == "hks_grad")
                out.hks_grad = std::move(m);
            else if (name == "harmonic")
                out.harmonic = std::move(m);
            else if (name == "sdf")
                out.sdf = std::move(m);
            else if (name == "labels")
                out.labels = std::move(m);
            else if (name == "features")
                out.features = std::move(m);
        }
    } catch (...) {
        return false;
    }
    return true;
}

void save_cached_features(const std::string& path, std::uint64_t hash,
                          const geofeat::GeoFeatures& g) {
    json header;
    header["hash"] = std::to_string(hash);
    header["times"] = g.times;
    json arrays = json::array();
    std::string data;
    append_matrix(data, arrays, "hks", g.hks);
    append_matrix(data, arrays, "hks_grad", g.hks_grad);
    append_matrix(data, arrays, "harmonic", g.harmonic);
    append_matrix(data, arrays, "sdf", g.sdf);
    append_matrix(data, arrays, "labels", g.labels);
    append_matrix(data, arrays, "features", g.features);
    header["arrays"] = arrays;
    const std::string hdr = header.dump();
    std::string out = "GNWF";
    append_u32(out, 1);
    append_u32(out, std::uint32_t(hdr.size()));
    out += hdr;
    out += data;
    write_file(path, out);
}

}  // namespace

std::vector<std::shared_ptr<LoadedSample>> load_dataset(const std::string& manifest_path,
                                                        const geofeat::FeatureConfig& fcfg,
                                                        const std::string& cache_dir,
                                                        const std::string& split) {
    const fs::path root = fs::path(manifest_path).parent_path();
    DatasetManifest manifest = load_manifest(manifest_path);
    if (!cache_dir.empty()) fs::create_directories(cache_dir);
    std::vector<std::shared_ptr<LoadedSample>> out;
    for (const auto& rec : manifest.samples) {
        if (!split.empty() && rec.split != split) continue;
        auto ls = std::make_shared<LoadedSample>();
        ls->sample = load_sample((root / rec.file).string());
        const std::string mesh_bytes = read_file((root / rec.mesh_file).string());
        ls->mesh = mesh::mesh_from_json(mesh_bytes);
        ls->fine = feec::assemble(ls->mesh);
        // re-verify the stored solution against the reference system
        std::map<std::size_t, double> dirichlet;
        for (const auto& [name, vals] : ls->sample.boundary_data) {
            const auto& nodes = ls->mesh.sidesets.at(name).nodes;
            for (std::size_t i = 0; i < nodes.size(); ++i) dirichlet[nodes[i]] = vals[i];
            ls->dirichlet.push_back({name, vals});
        }
        std::vector<double> f(ls->mesh.n_nodes(), manifest.config.f_const);
        const double res = reference_residual(ls->mesh, ls->fine, f, dirichlet, ls->sample.u.a);
        if (res > 1e-8)
            throw std::runtime_error("sample " + rec.file + " failed residual re-check (" +
                                     std::to_string(res) + ")");
        const std::uint64_t hash = fnv1a64(mesh_bytes + feature_config_key(fcfg));
        bool cached = false;
        std::string cache_path;
        if (!cache_dir.empty()) {
            std::ostringstream os;
            os << cache_dir << "/" << std::hex << hash << ".gnwf";
            cache_path = os.str();
            cached = load_cached_features(cache_path, hash, ls->features);
            if (!cached && fs::exists(cache_path))
                log::warn("feature cache mismatch for %s, recomputing", rec.mesh_file.c_str());
        }
        if (!cached) {
            ls->features = geofeat::compute(ls->mesh, ls->fine, fcfg);
            if (!cache_dir.empty()) save_cached_features(cache_path, hash, ls->features);
        }
        out.push_back(std::move(ls));
    }
    return out;
}

}  // namespace geonew::data
