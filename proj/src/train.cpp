#include "geonew/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "geonew/log.hpp"

namespace geonew::train {

using linalg::DenseMatrix;
using nlohmann::json;

double relative_l2(const DenseMatrix& pred, const DenseMatrix& target) {
    if (pred.a.size() != target.a.size())
        throw std::invalid_argument("relative_l2: size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < pred.a.size(); ++k) {
        const double d = pred.a[k] - target.a[k];
        num += d * d;
        den += target.a[k] * target.a[k];
    }
    if (den == 0.0) throw std::invalid_argument("relative_l2: zero target norm");
    return std::sqrt(num / den);
}

double normalized_l2(const std::vector<double>& per_sample) {
    if (per_sample.empty()) return 0.0;
    double s = 0.0;
    for (double v : per_sample) s += v;
    return s / double(per_sample.size());
}

double cosine_lr(double max_lr, double min_lr, long step, long total_steps) {
    if (total_steps <= 1) return max_lr;
    const double f = double(std::min(step, total_steps - 1)) / double(total_steps - 1);
    return min_lr + 0.5 * (max_lr - min_lr) * (1.0 + std::cos(M_PI * f));
}

void Adam::step(nn::ParamBundle& params, const std::vector<ad::Tensor>& grads, double lr) {
    if (m.empty()) {
        m.resize(params.values.size());
        v.resize(params.values.size());
        for (std::size_t i = 0; i < params.values.size(); ++i) {
            m[i].assign(params.values[i].size(), 0.0);
            v[i].assign(params.values[i].size(), 0.0);
        }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        if (grads[i].v.empty()) continue;
        auto& p = params.values[i].v;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double g = grads[i].v[k];
            m[i][k] = beta1 * m[i][k] + (1.0 - beta1) * g;
            v[i][k] = beta2 * v[i][k] + (1.0 - beta2) * g * g;
            const double mhat = m[i][k] / bc1;
            const double vhat = v[i][k] / bc2;
            p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

model::SampleInputs sample_inputs(const data::LoadedSample& ls) {
    model::SampleInputs in;
    in.mesh = &ls.mesh;
    in.fine = &ls.fine;
    in.features = &ls.features.features;
    in.dirichlet = ls.dirichlet;
    in.target = &ls.sample.u;
    return in;
}

std::mt19937_64 Trainer::anchor_rng(long epoch, std::size_t sample_index) const {
    // splitmix-style combination keeps streams decorrelated and reproducible
    std::uint64_t s = cfg.seed;
    s ^= 0x9e3779b97f4a7c15ull * (std::uint64_t(epoch) + 1);
    s ^= 0xbf58476d1ce4e5b9ull * (sample_index + 1);
    return std::mt19937_64(s);
}

Metrics Trainer::train_epoch(const std::vector<std::shared_ptr<data::LoadedSample>>& samples,
                             int epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Metrics metrics;
    metrics.epoch = epoch;
    metrics.split = "train";
    if (samples.empty()) throw std::invalid_argument("train_epoch: empty dataset");

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.seed ^ (0x5851f42d4c957f2dull * std::uint64_t(epoch + 1)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    // bootstrap the budget from the first sample's geometry pass
    if (!model.budget.initialized) {
        auto arng = anchor_rng(epoch, order[0]);
        auto in = sample_inputs(*samples[order[0]]);
        auto sg = model::build_sample(model, in, 0.0, arng);
        model.budget.update(sg->zeta_sample);
    }

    double loss_sum = 0.0;
    std::size_t n_converged = 0, n_solved = 0;
    long iter_sum = 0;
    double lr = cfg.max_lr;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
        const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
        std::vector<std::unique_ptr<model::SampleGraph>> graphs;
        std::vector<model::SampleInputs> inputs;
        std::vector<bool> converged;
        std::vector<double> zetas;
        for (std::size_t k = b0; k < b1; ++k) {
            const auto& ls = *samples[order[k]];
            auto in = sample_inputs(ls);
            auto arng = anchor_rng(epoch, order[k]);
            auto sg = model::build_sample(model, in, model.budget.zeta_eff(), arng);
            std::mt19937_64 srng(cfg.seed ^ (0x94d049bb133111ebull * (order[k] + 1)) ^
                                 std::uint64_t(epoch));
            auto res = solver::newton_solve(sg->sys, cfg.solve, srng);
            converged.push_back(res.converged);
            zetas.push_back(sg->zeta_sample);
            iter_sum += res.iterations;
            ++n_solved;
            if (res.converged) ++n_converged;
            graphs.push_back(std::move(sg));
            inputs.push_back(in);
        }
        if (solver::accept_batch(converged, cfg.solve.accept_threshold)) {
            std::vector<ad::Tensor> grads(model.params.values.size());
            double batch_loss = 0.0;
            for (std::size_t k = 0; k < graphs.size(); ++k) {
                if (!converged[k]) continue;
                batch_loss += model::adjoint_gradients(*graphs[k], inputs[k], grads);
            }
            lr = cosine_lr(cfg.max_lr, cfg.min_lr, step, total_steps);
            adam.step(model.params, grads, lr);
            loss_sum += batch_loss;
        } else {
            ++metrics.skipped_batches;
            log::warn("epoch %d: batch at %zu rejected (%zu/%zu converged)", epoch, b0,
                      std::count(converged.begin(), converged.end(), true), converged.size());
        }
        // periodic budget refresh from a random subset of the batch; samples
        // with singular projections contribute nothing
        if (cfg.zeta_refresh_steps > 0 && step % cfg.zeta_refresh_steps == 0) {
            std::mt19937_64 pick(cfg.seed ^ std::uint64_t(step));
            std::shuffle(zetas.begin(), zetas.end(), pick);
            double zmean = 0.0;
            std::size_t taken = 0;
            for (std::size_t k = 0; k < zetas.size() && taken < cfg.zeta_subset; ++k) {
                if (zetas[k] <= 0.0) continue;
                zmean += zetas[k];
                ++taken;
            }
            if (taken > 0) model.budget.update(zmean / double(taken));
        }
        ++step;
    }
    metrics.loss = n_converged ? loss_sum / double(n_converged) : 0.0;
    metrics.conv_frac = n_solved ? double(n_converged) / double(n_solved) : 0.0;
    metrics.mean_newton_iters = n_solved ? double(iter_sum) / double(n_solved) : 0.0;
    metrics.zeta = model.budget.zeta;
    metrics.lr = lr;
    metrics.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

Metrics Trainer::evaluate(const std::vector<std::shared_ptr<data::LoadedSample>>& samples,
                          const std::string& split, int epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Metrics metrics;
    metrics.epoch = epoch;
    metrics.split = split;
    std::vector<double> rels;
    std::size_t n_converged = 0;
    long iter_sum = 0;
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& ls = *samples[k];
        auto in = sample_inputs(ls);
        auto arng = anchor_rng(-1, k);
        auto sg = model::build_sample(model, in, 0.0, arng);  // per-sample budget
        solver::SolveConfig scfg = cfg.solve;
        scfg.max_retries = 2;
        std::mt19937_64 srng(cfg.seed ^ (0xd6e8feb86659fd93ull * (k + 1)));
        auto res = solver::newton_solve(sg->sys, scfg, srng);
        iter_sum += res.iterations;
        if (!res.converged) {
            log::warn("eval %s sample %zu did not converge (residual %g)", split.c_str(), k,
                      res.residual_norm);
            continue;
        }
        ++n_converged;
        auto ev = model::evaluate_solution(*sg, in);
        rels.push_back(ev.rel_l2);
        loss_sum += ev.loss;
        metrics.boundary_err = std::max(metrics.boundary_err, ev.boundary_error);
    }
    metrics.eps_l2 = normalized_l2(rels);
    metrics.conv_frac = samples.empty() ? 0.0 : double(n_converged) / double(samples.size());
    metrics.mean_newton_iters =
        samples.empty() ? 0.0 : double(iter_sum) / double(samples.size());
    metrics.zeta = model.budget.zeta;
    metrics.loss = n_converged ? loss_sum / double(n_converged) : 0.0;
    metrics.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

namespace {

void append_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::string& s, std::size_t& pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t((unsigned char)s.at(pos++)) << (8 * i);
    return v;
}

void append_f64(std::string& s, const std::vector<double>& v) {
    const std::size_t off = s.size();
    s.resize(off + v.size() * 8);
    std::memcpy(s.data() + off, v.data(), v.size() * 8);
}

std::vector<double> read_f64(const std::string& s, std::size_t& pos, std::size_t n) {
    if (pos + n * 8 > s.size()) throw std::invalid_argument("checkpoint truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), s.data() + pos, n * 8);
    pos += n * 8;
    return v;
}

}  // namespace

void save_checkpoint(const Trainer& tr, const std::string& provenance_json,
                     const std::string& path) {
    json header;
    header["step"] = tr.step;
    header["total_steps"] = tr.total_steps;
    header["adam_t"] = tr.adam.t;
    header["zeta"] = tr.model.budget.zeta;
    header["zeta_initialized"] = tr.model.budget.initialized;
    header["provenance"] = provenance_json;
    header["has_adam"] = !tr.adam.m.empty();
    json params = json::array();
    for (std::size_t i = 0; i < tr.model.params.names.size(); ++i)
        params.push_back({{"name", tr.model.params.names[i]},
                          {"rows", tr.model.params.values[i].rows},
                          {"cols", tr.model.params.values[i].cols}});
    header["params"] = params;
    const std::string hdr = header.dump();
    std::string out = "GNWC";
    append_u32(out, 1);
    append_u32(out, std::uint32_t(hdr.size()));
    out += hdr;
    for (const auto& v : tr.model.params.values) append_f64(out, v.v);
    if (!tr.adam.m.empty())
        for (std::size_t i = 0; i < tr.adam.m.size(); ++i) {
            append_f64(out, tr.adam.m[i]);
            append_f64(out, tr.adam.v[i]);
        }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("cannot write checkpoint '" + path + "'");
    f.write(out.data(), std::streamsize(out.size()));
}

LoadedCheckpoint load_checkpoint(const std::string& path, const model::ModelConfig& mcfg,
                                 const TrainConfig& tcfg) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("cannot open checkpoint '" + path + "'");
    std::ostringstream os;
    os << f.rdbuf();
    const std::string bytes = os.str();
    if (bytes.size() < 12 || bytes.substr(0, 4) != "GNWC")
        throw std::invalid_argument("not a GNWC checkpoint: " + path);
    std::size_t pos = 4;
    if (read_u32(bytes, pos) != 1) throw std::invalid_argument("unsupported GNWC version");
    const std::uint32_t hlen = read_u32(bytes, pos);
    json header = json::parse(bytes.substr(pos, hlen));
    pos += hlen;

    LoadedCheckpoint out;
    out.trainer.model = model::GeoNewModel::init(mcfg);
    out.trainer.cfg = tcfg;
    out.trainer.step = header.at("step").get<long>();
    out.trainer.total_steps = header.at("total_steps").get<long>();
    out.trainer.adam.t = header.at("adam_t").get<long>();
    out.trainer.model.budget.zeta = header.at("zeta").get<double>();
    out.trainer.model.budget.initialized = header.at("zeta_initialized").get<bool>();
    out.provenance_json = header.at("provenance").get<std::string>();
    const auto& plist = header.at("params");
    if (plist.size() != out.trainer.model.params.names.size())
        throw std::invalid_argument("checkpoint parameter count does not match the config");
    for (std::size_t i = 0; i < plist.size(); ++i) {
        const std::string name = plist[i].at("name").get<std::string>();
        if (name != out.trainer.model.params.names[i])
            throw std::invalid_argument("checkpoint parameter order mismatch at '" + name + "'");
        auto& tensor = out.trainer.model.params.values[i];
        if (plist[i].at("rows").get<std::size_t>() != tensor.rows ||
            plist[i].at("cols").get<std::size_t>() != tensor.cols)
            throw std::invalid_argument("checkpoint shape mismatch at '" + name + "'");
        tensor.v = read_f64(bytes, pos, tensor.size());
    }
    if (header.at("has_adam").get<bool>()) {
        out.trainer.adam.m.resize(plist.size());
        out.trainer.adam.v.resize(plist.size());
        for (std::size_t i = 0; i < plist.size(); ++i) {
            const std::size_t n = out.trainer.model.params.values[i].size();
            out.trainer.adam.m[i] = read_f64(bytes, pos, n);
            out.trainer.adam.v[i] = read_f64(bytes, pos, n);
        }
    }
    return out;
}

void append_metrics_csv(const std::string& path, const Metrics& m) {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream f(path, std::ios::app);
    if (!f) throw std::invalid_argument("cannot open metrics file '" + path + "'");
    if (fresh)
        f << "epoch,split,eps_l2,boundary_err,conv_frac,mean_newton_iters,zeta,lr,seconds\n";
    char line[360];
    std::snprintf(line, sizeof(line), "%d,%s,%.12g,%.12g,%.6g,%.6g,%.12g,%.12g,%.3f\n",
                  m.epoch, m.split.c_str(), m.eps_l2, m.boundary_err, m.conv_frac,
                  m.mean_newton_iters, m.zeta, m.lr, m.seconds);
    f << line;
}

}  // namespace geonew::train
