#include "geonew/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "geonew/data.hpp"
#include "geonew/log.hpp"
#include "geonew/model.hpp"
#include "geonew/parallel.hpp"
#include "geonew/train.hpp"

namespace geonew::cli {

namespace fs = std::filesystem;
using linalg::DenseMatrix;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& section) {
    for (const auto& [key, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw std::invalid_argument("unknown config key '" + key + "' in " + section);
    }
}

geofeat::FeatureConfig features_from_json(const json& j) {
    check_keys(j, {"n_times", "n_eigs", "harmonic_pairs"}, "features");
    geofeat::FeatureConfig c;
    c.harmonic_pairs = {{"inner", "outer"}};
    if (j.contains("n_times")) c.n_times = j.at("n_times").get<int>();
    if (j.contains("n_eigs")) c.n_eigs = j.at("n_eigs").get<int>();
    if (j.contains("harmonic_pairs")) {
        c.harmonic_pairs.clear();
        for (const auto& p : j.at("harmonic_pairs"))
            c.harmonic_pairs.push_back({p.at(0).get<std::string>(), p.at(1).get<std::string>()});
    }
    return c;
}

std::size_t feature_dim(const geofeat::FeatureConfig& c) {
    return std::size_t(c.n_times) * 3 + c.harmonic_pairs.size() + 1 + mesh::kNumSidesetLabels;
}

model::ModelConfig model_from_json(const json& j, const geofeat::FeatureConfig& fcfg) {
    check_keys(j,
               {"d_model", "n_blocks", "n_heads", "n_anchors", "ffn_width", "n_context",
                "p_free", "w_hidden", "d_op", "mean_channel", "epsilon", "eps_h",
                "hyper_hidden", "hodge_hidden", "beta_log_init", "gamma_log_init",
                "n_fixed_partitions", "seed"},
               "model");
    model::ModelConfig c;
    if (j.contains("d_model")) c.encoder.d_model = j.at("d_model").get<int>();
    if (j.contains("n_blocks")) c.encoder.n_blocks = j.at("n_blocks").get<int>();
    if (j.contains("n_heads")) c.encoder.n_heads = j.at("n_heads").get<int>();
    if (j.contains("n_anchors")) c.encoder.n_anchors = j.at("n_anchors").get<int>();
    if (j.contains("ffn_width")) c.encoder.ffn_width = j.at("ffn_width").get<int>();
    if (j.contains("n_context")) c.n_context = j.at("n_context").get<std::size_t>();
    if (j.contains("p_free")) c.p_free = j.at("p_free").get<std::size_t>();
    if (j.contains("w_hidden")) c.w_hidden = j.at("w_hidden").get<std::size_t>();
    if (j.contains("d_op")) c.flux_cfg.d_op = j.at("d_op").get<int>();
    if (j.contains("mean_channel")) c.flux_cfg.mean_channel = j.at("mean_channel").get<bool>();
    if (j.contains("epsilon")) c.flux_cfg.epsilon = j.at("epsilon").get<double>();
    if (j.contains("eps_h")) c.flux_cfg.eps_h = j.at("eps_h").get<double>();
    if (j.contains("hyper_hidden"))
        c.flux_cfg.hyper_hidden = j.at("hyper_hidden").get<std::size_t>();
    if (j.contains("hodge_hidden"))
        c.flux_cfg.hodge_hidden = j.at("hodge_hidden").get<std::size_t>();
    if (j.contains("beta_log_init"))
        c.flux_cfg.beta_log_init = j.at("beta_log_init").get<double>();
    if (j.contains("gamma_log_init"))
        c.flux_cfg.gamma_log_init = j.at("gamma_log_init").get<double>();
    if (j.contains("n_fixed_partitions"))
        c.n_fixed_partitions = j.at("n_fixed_partitions").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.d_in = feature_dim(fcfg);
    if (c.encoder.d_model % c.encoder.n_heads != 0)
        throw std::invalid_argument("model: d_model must be divisible by n_heads");
    return c;
}

train::TrainConfig train_from_json(const json& jt, const json& js) {
    check_keys(jt,
               {"epochs", "batch_size", "max_lr", "min_lr", "zeta_refresh_steps",
                "zeta_subset", "checkpoint_every", "eval_every", "seed"},
               "train");
    train::TrainConfig c;
    if (jt.contains("epochs")) c.epochs = jt.at("epochs").get<int>();
    if (jt.contains("batch_size")) c.batch_size = jt.at("batch_size").get<std::size_t>();
    if (jt.contains("max_lr")) c.max_lr = jt.at("max_lr").get<double>();
    if (jt.contains("min_lr")) c.min_lr = jt.at("min_lr").get<double>();
    if (jt.contains("zeta_refresh_steps"))
        c.zeta_refresh_steps = jt.at("zeta_refresh_steps").get<int>();
    if (jt.contains("zeta_subset")) c.zeta_subset = jt.at("zeta_subset").get<std::size_t>();
    if (jt.contains("checkpoint_every"))
        c.checkpoint_every = jt.at("checkpoint_every").get<int>();
    if (jt.contains("eval_every")) c.eval_every = jt.at("eval_every").get<int>();
    if (jt.contains("seed")) c.seed = jt.at("seed").get<std::uint64_t>();
    check_keys(js, {"tol", "max_iter", "accept_threshold", "line_search", "max_retries"},
               "solver");
    if (js.contains("tol")) c.solve.tol = js.at("tol").get<double>();
    if (js.contains("max_iter")) c.solve.max_iter = js.at("max_iter").get<int>();
    if (js.contains("accept_threshold"))
        c.solve.accept_threshold = js.at("accept_threshold").get<double>();
    if (js.contains("line_search")) c.solve.line_search = js.at("line_search").get<bool>();
    if (js.contains("max_retries")) c.solve.max_retries = js.at("max_retries").get<int>();
    return c;
}

mesh::GeometrySpec geometry_from_json(const json& j) {
    check_keys(j,
               {"n_sides", "poly_radius", "outer_radius", "rotation", "radial_layers",
                "angular_resolution", "seed"},
               "geometry");
    mesh::GeometrySpec s;
    if (j.contains("n_sides")) s.n_sides = j.at("n_sides").get<int>();
    if (j.contains("poly_radius")) s.poly_radius = j.at("poly_radius").get<double>();
    if (j.contains("outer_radius")) s.outer_radius = j.at("outer_radius").get<double>();
    if (j.contains("rotation")) s.rotation = j.at("rotation").get<double>();
    if (j.contains("radial_layers")) s.radial_layers = j.at("radial_layers").get<int>();
    if (j.contains("angular_resolution"))
        s.angular_resolution = j.at("angular_resolution").get<int>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

struct RunContext {
    json config;
    fs::path out;
    std::uint64_t seed_override = 0;
    bool has_seed_override = false;
    unsigned workers = 1;
    double rotate_deg = 0.0;
    bool has_rotate = false;
    std::string split = "test_id";
};

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config parse error: ") + e.what());
    }
    check_keys(j,
               {"dataset", "features", "model", "train", "solver", "manifest", "checkpoint",
                "mesh", "geometry", "inject"},
               "config root");
    return j;
}

void write_provenance(const RunContext& ctx) {
    fs::create_directories(ctx.out);
    std::ofstream out(ctx.out / "config.json");
    out << ctx.config.dump(2) << "\n";
}

mesh::Mesh mesh_from_config(const RunContext& ctx) {
    if (ctx.config.contains("mesh"))
        return mesh::load_mesh(ctx.config.at("mesh").get<std::string>());
    if (ctx.config.contains("geometry"))
        return mesh::generate_annulus_polygon(geometry_from_json(ctx.config.at("geometry")));
    throw std::invalid_argument("config needs a \"mesh\" path or a \"geometry\" spec");
}

std::vector<std::pair<std::string, std::vector<double>>> boundary_data_from_config(
    const RunContext& ctx, const mesh::Mesh& m) {
    data::DatasetConfig dcfg;
    if (ctx.config.contains("dataset"))
        dcfg = data::dataset_config_from_json(ctx.config.at("dataset"));
    std::vector<std::pair<std::string, std::vector<double>>> out;
    out.push_back({"inner", std::vector<double>(m.sidesets.at("inner").nodes.size(),
                                                dcfg.inner_value)});
    out.push_back({"outer", std::vector<double>(m.sidesets.at("outer").nodes.size(),
                                                dcfg.outer_value)});
    return out;
}

int cmd_generate(RunContext& ctx) {
    data::DatasetConfig dcfg = data::dataset_config_from_json(ctx.config.at("dataset"));
    if (ctx.has_seed_override) dcfg.seed = ctx.seed_override;
    write_provenance(ctx);
    auto manifest = data::generate_dataset(dcfg, ctx.out.string());
    std::size_t train_n = 0, id_n = 0, ood_n = 0;
    for (const auto& r : manifest.samples) {
        if (r.split == "train") ++train_n;
        if (r.split == "test_id") ++id_n;
        if (r.split == "test_ood") ++ood_n;
    }
    std::printf("manifest: %s\n", (ctx.out / "manifest.json").c_str());
    std::printf("samples: train=%zu test_id=%zu test_ood=%zu\n", train_n, id_n, ood_n);
    return 0;
}

struct LoadedRun {
    geofeat::FeatureConfig fcfg;
    model::ModelConfig mcfg;
    train::TrainConfig tcfg;
    std::string manifest;
};

LoadedRun run_setup(RunContext& ctx) {
    LoadedRun r;
    r.fcfg = features_from_json(ctx.config.value("features", json::object()));
    r.mcfg = model_from_json(ctx.config.value("model", json::object()), r.fcfg);
    r.tcfg = train_from_json(ctx.config.value("train", json::object()),
                             ctx.config.value("solver", json::object()));
    if (ctx.has_seed_override) {
        r.mcfg.seed = ctx.seed_override;
        r.tcfg.seed = ctx.seed_override;
    }
    if (ctx.config.contains("manifest"))
        r.manifest = ctx.config.at("manifest").get<std::string>();
    return r;
}

int cmd_train(RunContext& ctx) {
    auto run = run_setup(ctx);
    if (run.manifest.empty()) throw std::invalid_argument("train needs a \"manifest\" path");
    write_provenance(ctx);
    const std::string cache = (ctx.out / "cache").string();
    auto train_set = data::load_dataset(run.manifest, run.fcfg, cache, "train");
    if (train_set.empty()) throw std::invalid_argument("train split is empty");
    std::vector<std::shared_ptr<data::LoadedSample>> id_set;
    if (run.tcfg.eval_every > 0)
        id_set = data::load_dataset(run.manifest, run.fcfg, cache, "test_id");

    train::Trainer tr;
    if (ctx.config.contains("checkpoint")) {
        auto loaded = train::load_checkpoint(ctx.config.at("checkpoint").get<std::string>(),
                                             run.mcfg, run.tcfg);
        tr = std::move(loaded.trainer);
        log::info("resumed from step %ld", tr.step);
    } else {
        tr.model = model::GeoNewModel::init(run.mcfg);
        tr.cfg = run.tcfg;
    }
    const long steps_per_epoch =
        long((train_set.size() + run.tcfg.batch_size - 1) / run.tcfg.batch_size);
    tr.total_steps = steps_per_epoch * run.tcfg.epochs;

    const std::string metrics_path = (ctx.out / "metrics.csv").string();
    const int start_epoch = int(tr.step / std::max(1l, steps_per_epoch));
    for (int e = start_epoch; e < run.tcfg.epochs; ++e) {
        auto m = tr.train_epoch(train_set, e);
        train::append_metrics_csv(metrics_path, m);
        log::info("epoch %d loss %.4e conv %.2f zeta %.3e lr %.2e (%.1fs)", e, m.loss,
                  m.conv_frac, m.zeta, m.lr, m.seconds);
        if (run.tcfg.eval_every > 0 && (e + 1) % run.tcfg.eval_every == 0) {
            auto me = tr.evaluate(id_set, "test_id", e);
            train::append_metrics_csv(metrics_path, me);
            log::info("epoch %d [test_id] eps_l2 %.4e conv %.2f", e, me.eps_l2, me.conv_frac);
        }
        if (run.tcfg.checkpoint_every > 0 && (e + 1) % run.tcfg.checkpoint_every == 0)
            train::save_checkpoint(tr, ctx.config.dump(),
                                   (ctx.out / ("ckpt_" + std::to_string(e + 1) + ".gnwc"))
                                       .string());
    }
    train::save_checkpoint(tr, ctx.config.dump(), (ctx.out / "model.gnwc").string());
    std::printf("checkpoint: %s\n", (ctx.out / "model.gnwc").c_str());
    std::printf("metrics: %s\n", metrics_path.c_str());
    return 0;
}

int cmd_eval(RunContext& ctx) {
    auto run = run_setup(ctx);
    if (run.manifest.empty()) throw std::invalid_argument("eval needs a \"manifest\" path");
    write_provenance(ctx);
    train::Trainer tr;
    if (ctx.config.contains("checkpoint")) {
        tr = train::load_checkpoint(ctx.config.at("checkpoint").get<std::string>(), run.mcfg,
                                    run.tcfg)
                 .trainer;
    } else {
        tr.model = model::GeoNewModel::init(run.mcfg);
        tr.cfg = run.tcfg;
    }
    auto samples = data::load_dataset(run.manifest, run.fcfg, (ctx.out / "cache").string(),
                                      ctx.split);
    if (samples.empty()) throw std::invalid_argument("split '" + ctx.split + "' is empty");
    auto m = tr.evaluate(samples, ctx.split, 0);
    train::append_metrics_csv((ctx.out / "metrics.csv").string(), m);
    // per-sample field dumps
    fs::create_directories(ctx.out / "fields");
    parallel::parallel_for(samples.size(), ctx.workers, [&](std::size_t k) {
        auto in = train::sample_inputs(*samples[k]);
        auto arng = tr.anchor_rng(-1, k);
        auto sg = model::build_sample(tr.model, in, 0.0, arng);
        solver::SolveConfig scfg = tr.cfg.solve;
        scfg.max_retries = 2;
        std::mt19937_64 srng(tr.cfg.seed ^ (0xd6e8feb86659fd93ull * (k + 1)));
        auto res = solver::newton_solve(sg->sys, scfg, srng);
        auto ev = model::evaluate_solution(*sg, in);
        json dump;
        dump["sample"] = samples[k]->sample.mesh_file;
        dump["converged"] = res.converged;
        dump["iterations"] = res.iterations;
        dump["rel_l2"] = ev.rel_l2;
        dump["boundary_err"] = ev.boundary_error;
        dump["u_fine"] = ev.u_fine.a;
        char name[32];
        std::snprintf(name, sizeof(name), "fields/f%04zu.json", k);
        std::ofstream out(ctx.out / name);
        out << dump.dump() << "\n";
    });
    std::printf("split %s: eps_l2 %.6e boundary_err %.3e conv %.3f iters %.2f\n",
                ctx.split.c_str(), m.eps_l2, m.boundary_err, m.conv_frac,
                m.mean_newton_iters);
    return m.conv_frac == 1.0 ? 0 : 2;
}

int cmd_solve(RunContext& ctx) {
    auto run = run_setup(ctx);
    write_provenance(ctx);
    auto m = mesh_from_config(ctx);
    train::Trainer tr;
    if (ctx.config.contains("checkpoint")) {
        tr = train::load_checkpoint(ctx.config.at("checkpoint").get<std::string>(), run.mcfg,
                                    run.tcfg)
                 .trainer;
    } else {
        tr.model = model::GeoNewModel::init(run.mcfg);
        tr.cfg = run.tcfg;
    }
    auto fine = feec::assemble(m);
    auto feats = geofeat::compute(m, fine, run.fcfg);
    model::SampleInputs in;
    in.mesh = &m;
    in.fine = &fine;
    in.features = &feats.features;
    in.dirichlet = boundary_data_from_config(ctx, m);
    std::mt19937_64 arng(run.mcfg.seed);
    auto sg = model::build_sample(tr.model, in, 0.0, arng);
    solver::SolveConfig scfg = tr.cfg.solve;
    scfg.max_retries = 2;
    std::mt19937_64 srng(run.tcfg.seed + 1);
    auto res = solver::newton_solve(sg->sys, scfg, srng);
    auto ev = model::evaluate_solution(*sg, in);
    json dump;
    dump["converged"] = res.converged;
    dump["iterations"] = res.iterations;
    dump["residual"] = res.residual_norm;
    dump["boundary_err"] = ev.boundary_error;
    dump["zeta"] = sg->zeta_sample;
    dump["u_fine"] = ev.u_fine.a;
    std::ofstream out(ctx.out / "solution.json");
    out << dump.dump() << "\n";
    std::printf("solution: %s (converged=%d, iters=%d)\n", (ctx.out / "solution.json").c_str(),
                int(res.converged), res.iterations);
    return res.converged ? 0 : 2;
}

int cmd_features(RunContext& ctx) {
    auto fcfg = features_from_json(ctx.config.value("features", json::object()));
    write_provenance(ctx);
    auto m = mesh_from_config(ctx);
    auto fine = feec::assemble(m);
    auto g = geofeat::compute(m, fine, fcfg);
    json dump;
    auto put = [&](const char* name, const DenseMatrix& mat) {
        dump[name] = {{"rows", mat.rows}, {"cols", mat.cols}, {"values", mat.a}};
    };
    put("hks", g.hks);
    put("hks_grad", g.hks_grad);
    put("harmonic", g.harmonic);
    put("sdf", g.sdf);
    put("labels", g.labels);
    put("features", g.features);
    dump["times"] = g.times;
    if (ctx.has_rotate) {
        const double angle = ctx.rotate_deg * kPi / 180.0;
        auto mt = mesh::transformed(m, angle, 0.7, -0.3);
        auto finet = feec::assemble(mt);
        auto gt = geofeat::compute(mt, finet, fcfg);
        const double hks_dev = linalg::max_abs(linalg::sub(g.hks, gt.hks));
        const double harm_dev = linalg::max_abs(linalg::sub(g.harmonic, gt.harmonic));
        dump["rotate_check"] = {{"degrees", ctx.rotate_deg},
                                {"hks_deviation", hks_dev},
                                {"harmonic_deviation", harm_dev},
                                {"invariant", hks_dev <= 1e-9 && harm_dev <= 1e-9}};
    }
    std::ofstream out(ctx.out / "features.json");
    out << dump.dump() << "\n";
    std::printf("features: %s\n", (ctx.out / "features.json").c_str());
    if (ctx.has_rotate && !dump["rotate_check"]["invariant"].get<bool>()) return 2;
    return 0;
}

int cmd_verify(RunContext& ctx) {
    auto run = run_setup(ctx);
    write_provenance(ctx);
    auto m = mesh_from_config(ctx);
    train::Trainer tr;
    if (ctx.config.contains("checkpoint")) {
        tr = train::load_checkpoint(ctx.config.at("checkpoint").get<std::string>(), run.mcfg,
                                    run.tcfg)
                 .trainer;
    } else {
        tr.model = model::GeoNewModel::init(run.mcfg);
        tr.cfg = run.tcfg;
    }
    auto fine = feec::assemble(m);
    auto feats = geofeat::compute(m, fine, run.fcfg);
    model::SampleInputs in;
    in.mesh = &m;
    in.fine = &fine;
    in.features = &feats.features;
    in.dirichlet = boundary_data_from_config(ctx, m);
    std::mt19937_64 arng(run.mcfg.seed + 7);
    auto sg = model::build_sample(tr.model, in, 0.0, arng);

    DenseMatrix w = sg->w_values();
    double column_scale = 1.0;
    if (ctx.config.contains("inject")) {
        check_keys(ctx.config.at("inject"), {"w_column_scale"}, "inject");
        column_scale = ctx.config.at("inject").value("w_column_scale", 1.0);
        for (std::size_t i = 0; i < w.rows; ++i) w(i, 0) *= column_scale;  // corrupt column 0
    }

    json checks;
    bool all_pass = true;
    auto record = [&](const std::string& name, double value, double tol, bool pass) {
        checks[name] = {{"value", value}, {"tolerance", tol}, {"pass", pass}};
        all_pass = all_pass && pass;
    };

    // partition of unity: max |1 - column sum|
    double pou = 0.0;
    for (std::size_t j = 0; j < w.cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < w.rows; ++i) s += w(i, j);
        pou = std::max(pou, std::abs(1.0 - s));
    }
    record("partition_of_unity", pou, 1e-12, pou <= 1e-12);

    // projection identity d0' W^T = W1^T d0 on the (possibly corrupted) W
    reduced::PartitionMatrix pm;
    pm.w = w;
    pm.p_free = run.mcfg.p_free;
    auto rs = reduced::project_operators(fine, pm);
    {
        ad::Tape t;
        auto wv = t.constant(ad::Tensor::from_dense(w));
        auto edges_ptr = std::make_shared<const std::vector<std::array<std::size_t, 2>>>(
            rs.edges);
        auto proj = reduced::project_on_tape(t, wv, fine, rs.d0, edges_ptr);
        DenseMatrix w1 = t.val(proj.w1).to_dense();
        DenseMatrix lhs = fine.d0.multiply_dense(linalg::transpose(w));
        DenseMatrix rhs = linalg::matmul(linalg::transpose(w1), rs.d0);
        const double dev = linalg::max_abs(linalg::sub(lhs, rhs));
        record("projection_identity", dev, 1e-10, dev <= 1e-10);
    }

    // reduced stiffness two ways: W K_fine W^T vs d0^T M1 d0
    {
        DenseMatrix kfw = linalg::matmul(
            linalg::matmul(w, fine.k.to_dense()), linalg::transpose(w));
        const double dev = linalg::max_abs(linalg::sub(kfw, rs.k));
        record("stiffness_projection", dev, 1e-10, dev <= 1e-10);
        const double fine_dev = feec::stiffness_identity_check(fine);
        record("fine_stiffness_identity", fine_dev, 1e-10, fine_dev <= 1e-10);
    }

    // solve, then conservation and Dirichlet exactness at the solution
    solver::SolveConfig scfg = tr.cfg.solve;
    scfg.max_retries = 2;
    std::mt19937_64 srng(3);
    auto res = solver::newton_solve(sg->sys, scfg, srng);
    record("solver_converged", res.residual_norm, scfg.tol, res.converged);
    {
        double total = 0.0;
        for (double v : sg->tape->val(sg->divergence).v) total += v;
        record("conservation_sum", std::abs(total), 1e-12, std::abs(total) <= 1e-12);
    }
    {
        auto ev = model::evaluate_solution(*sg, in);
        record("dirichlet_exactness", ev.boundary_error, 1e-14, ev.boundary_error <= 1e-14);
    }

    // certified vs empirical Lipschitz, and the contraction number tau
    {
        const double cert = flux::certified_lipschitz(*sg->tape, sg->fv);
        std::mt19937_64 rng(11);
        std::normal_distribution<double> nd(0.0, 1.0);
        double worst = 0.0;
        const std::size_t pt = sg->p_total;
        for (int trial = 0; trial < 200; ++trial) {
            ad::Tensor u1(pt, 1), u2(pt, 1);
            for (auto& v : u1.v) v = nd(rng);
            for (auto& v : u2.v) v = nd(rng);
            auto& t = *sg->tape;
            auto xi1 = flux::edge_features(t, t.constant(u1), sg->edges, sg->fv.pi.weight,
                                           sg->fv.mean_channel);
            auto xi2 = flux::edge_features(t, t.constant(u2), sg->edges, sg->fv.pi.weight,
                                           sg->fv.mean_channel);
            auto g1 = flux::dual_flux(t, flux::primal_flux(t, xi1, sg->fv), sg->fv);
            auto g2 = flux::dual_flux(t, flux::primal_flux(t, xi2, sg->fv), sg->fv);
            double dn = 0.0, un = 0.0;
            for (std::size_t q = 0; q < t.val(g1).v.size(); ++q) {
                const double d = t.val(g1).v[q] - t.val(g2).v[q];
                dn += d * d;
            }
            for (std::size_t q = 0; q < u1.v.size(); ++q) {
                const double d = u1.v[q] - u2.v[q];
                un += d * d;
            }
            if (un > 0.0) worst = std::max(worst, std::sqrt(dn / un));
        }
        record("empirical_lipschitz", worst, cert, worst <= cert * (1.0 + 1e-12));
        auto kf = sg->k_free_values();
        for (std::size_t i = 0; i < kf.rows; ++i)
            for (std::size_t j = i + 1; j < kf.cols; ++j)
                kf(i, j) = kf(j, i) = 0.5 * (kf(i, j) + kf(j, i));
        auto eig = linalg::sym_eig(kf);
        const double tau = run.mcfg.flux_cfg.epsilon * cert *
                           (1.0 / eig.eigenvalues.front()) * linalg::op_norm_2(sg->d0);
        record("tau", tau, 1.0, tau < 1.0);
    }

    json report;
    report["checks"] = checks;
    report["pass"] = all_pass;
    std::ofstream out(ctx.out / "report.json");
    out << report.dump(2) << "\n";
    std::printf("%s\n", report.dump(2).c_str());
    return all_pass ? 0 : 2;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"geometry-conditioned reduced finite element surrogate"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand name
    RunContext ctx;
    std::string config_path, out_dir = "out";
    app.add_option("--config", config_path, "JSON run configuration")->required();
    app.add_option("--out", out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", ctx.seed_override, "seed override");
    app.add_option("--workers", ctx.workers, "worker thread count");
    auto* rot_opt =
        app.add_option("--rotate", ctx.rotate_deg, "rigid-rotation feature check (degrees)");
    app.add_option("--split", ctx.split, "dataset split (train, test_id, test_ood)")
        ->check(CLI::IsMember({"train", "test_id", "test_ood"}));

    auto* c_generate = app.add_subcommand("generate", "generate a Poly-Poisson dataset");
    auto* c_train = app.add_subcommand("train", "train a model");
    auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    auto* c_solve = app.add_subcommand("solve", "solve one geometry");
    auto* c_features = app.add_subcommand("features", "dump geometry features");
    auto* c_verify = app.add_subcommand("verify", "structure verification report");

    ctx.workers = parallel::default_workers();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        ctx.config = load_config(config_path);
        ctx.out = out_dir;
        ctx.has_seed_override = seed_opt->count() > 0;
        ctx.has_rotate = rot_opt->count() > 0;
        if (c_generate->parsed()) return cmd_generate(ctx);
        if (c_train->parsed()) return cmd_train(ctx);
        if (c_eval->parsed()) return cmd_eval(ctx);
        if (c_solve->parsed()) return cmd_solve(ctx);
        if (c_features->parsed()) return cmd_features(ctx);
        if (c_verify->parsed()) return cmd_verify(ctx);
        return 1;
    } catch (const std::invalid_argument& e) {
        log::error("%s", e.what());
        return 1;
    } catch (const std::exception& e) {
        log::error("%s", e.what());
        return 2;
    }
}

}  // namespace geonew::cli
