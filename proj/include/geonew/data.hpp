#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "geonew/feec.hpp"
#include "geonew/geofeat.hpp"
#include "geonew/linalg.hpp"
#include "geonew/mesh.hpp"

namespace geonew::data {

struct DatasetConfig {
    std::size_t n_train = 200;
    std::size_t n_test_id = 50;
    std::size_t n_test_ood = 50;
    std::vector<int> train_sides = {3, 4};  // also the in-distribution test family
    std::vector<int> ood_sides = {6, 8};
    double poly_radius_min = 0.30;
    double poly_radius_max = 0.50;
    double outer_radius = 1.0;
    int radial_layers = 4;
    int angular_resolution = 20;
    double inner_value = 1.0;  // Dirichlet data on the cutout
    double outer_value = 0.0;  // Dirichlet data on the circle
    bool randomize_amplitude = false;  // inner value ~ U[0.5, 2] per sample
    double f_const = 0.0;              // forcing (harmonic interiors by default)
    std::uint64_t seed = 0;
};
nlohmann::json dataset_config_to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

struct Sample {
    std::string mesh_file;
    std::string split;
    mesh::GeometrySpec spec;
    std::map<std::string, std::vector<double>> boundary_data;  // per-sideset nodal values
    linalg::DenseMatrix u;  // N x 1 fine solution
};

struct SampleRecord {
    std::string file;
    std::string mesh_file;
    std::string split;
    int n_sides = 0;
};

struct DatasetManifest {
    int format_version = 1;
    std::uint64_t seed = 0;
    DatasetConfig config;
    std::vector<SampleRecord> samples;
};

/// P1 Galerkin solve of -div(grad u) = f with boundary lifting:
/// K_ff u_f = (M f)_f - K_fc u_c. f given nodally; dirichlet maps boundary
/// node -> value and must cover all boundary nodes.
std::vector<double> reference_poisson_solve(const mesh::Mesh& m,
                                            const feec::FineOperators& fine,
                                            const std::vector<double>& f_nodal,
                                            const std::map<std::size_t, double>& dirichlet);

/// l2 norm of the interior residual of the reference discrete system at u.
double reference_residual(const mesh::Mesh& m, const feec::FineOperators& fine,
                          const std::vector<double>& f_nodal,
                          const std::map<std::size_t, double>& dirichlet,
                          const std::vector<double>& u);

/// Generates meshes/ and samples/ under out_dir plus manifest.json.
/// Deterministic given the config (same seed -> byte-identical files).
/// Every stored solution is re-verified against the reference residual.
DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir);

// Sample container: magic "GNWD", u32 version, u32 header length, JSON header
// (shapes, field names, mesh path, spec), little-endian f64 arrays.
void save_sample(const Sample& s, const std::string& path);
Sample load_sample(const std::string& path);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);  // validates split rules

struct LoadedSample {
    Sample sample;
    mesh::Mesh mesh;
    feec::FineOperators fine;
    geofeat::GeoFeatures features;
    std::vector<std::pair<std::string, std::vector<double>>> dirichlet;
};

/// Loads samples of one split (empty = all), re-verifies stored solutions
/// (residual <= 1e-8), and computes geometry features through an on-disk
/// cache keyed by a content hash of the mesh file and feature config.
std::vector<std::shared_ptr<LoadedSample>> load_dataset(const std::string& manifest_path,
                                                        const geofeat::FeatureConfig& fcfg,
                                                        const std::string& cache_dir,
                                                        const std::string& split = "");

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace geonew::data
