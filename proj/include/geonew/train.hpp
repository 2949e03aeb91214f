#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "geonew/data.hpp"
#include "geonew/model.hpp"
#include "geonew/solver.hpp"

namespace geonew::train {

struct TrainConfig {
    int epochs = 300;
    std::size_t batch_size = 16;
    double max_lr = 1e-3;
    double min_lr = 1e-5;  // max_lr / 100
    int zeta_refresh_steps = 10;
    std::size_t zeta_subset = 4;
    int checkpoint_every = 0;  // epochs; 0 = only at the end
    int eval_every = 0;        // epochs; 0 = never during training
    std::uint64_t seed = 0;
    solver::SolveConfig solve;
};

struct Metrics {
    int epoch = 0;
    std::string split;
    double eps_l2 = 0.0;
    double boundary_err = 0.0;
    double conv_frac = 0.0;
    double mean_newton_iters = 0.0;
    double zeta = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
    double loss = 0.0;
    int skipped_batches = 0;
};

/// Relative l2 error of one sample on fine nodal values. Requires a nonzero
/// target norm.
double relative_l2(const linalg::DenseMatrix& pred, const linalg::DenseMatrix& target);

/// Mean over samples of the per-sample relative l2 errors.
double normalized_l2(const std::vector<double>& per_sample);

/// lr(0) = max_lr, lr(total_steps - 1) = min_lr, cosine in between.
double cosine_lr(double max_lr, double min_lr, long step, long total_steps);

struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<std::vector<double>> m, v;

    void step(nn::ParamBundle& params, const std::vector<ad::Tensor>& grads, double lr);
};

struct Trainer {
    model::GeoNewModel model;
    TrainConfig cfg;
    Adam adam;
    long step = 0;
    long total_steps = 0;

    /// One pass over the training samples in a seeded shuffled order:
    /// per batch, independent solves, Appendix-D acceptance, adjoint
    /// gradients of converged samples, Adam update with the cosine schedule.
    /// Skipped (rejected) batches are counted and logged.
    Metrics train_epoch(const std::vector<std::shared_ptr<data::LoadedSample>>& samples,
                        int epoch);

    /// No parameter updates; per-sample zeta; retries enabled. Reports the
    /// normalized l2, worst boundary error, convergence stats.
    Metrics evaluate(const std::vector<std::shared_ptr<data::LoadedSample>>& samples,
                     const std::string& split, int epoch);

    /// Deterministic per-(epoch, sample) stream for the anchor sampling.
    std::mt19937_64 anchor_rng(long epoch, std::size_t sample_index) const;
};

model::SampleInputs sample_inputs(const data::LoadedSample& ls);

// Checkpoint container: magic "GNWC", u32 version, u32 header length, JSON
// header (config provenance, step, zeta, parameter names and shapes, Adam
// state flag), then flat little-endian f64 arrays in declared name order.
void save_checkpoint(const Trainer& tr, const std::string& provenance_json,
                     const std::string& path);
struct LoadedCheckpoint {
    Trainer trainer;
    std::string provenance_json;
};
LoadedCheckpoint load_checkpoint(const std::string& path, const model::ModelConfig& mcfg,
                                 const TrainConfig& tcfg);

/// Appends one metrics row; writes the header when creating the file.
/// Columns: epoch,split,eps_l2,boundary_err,conv_frac,mean_newton_iters,zeta,lr,seconds
void append_metrics_csv(const std::string& path, const Metrics& m);

}  // namespace geonew::train
