#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "udream/losses.hpp"
#include "udream/networks.hpp"
#include "udream/optim.hpp"
#include "udream/pairs.hpp"

namespace udream::train {

enum class Method { UDream, N2N };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct TrainConfig {
    Method method = Method::UDream;
    int64_t steps = 2000;
    int64_t alternation_period = 1;  // batches per network before switching
    double lr_rec = 1e-4;
    double lr_reg = 1e-4;
    int64_t batch_size = 4;          // pairs per step
    double lambda = 0.1;
    uint64_t seed = 0;
    int64_t eval_every = 0;          // 0: evaluate at step 0 and at the end only
    int64_t warmup_steps = 100;      // steps at the start that update only the reconstruction net
    bool reverse_augment = true;     // N2N only: train on both orders of every pair
    int64_t lcc_window = 9;
    double lcc_eps = 1e-5;

    void validate() const;
    loss::LossConfig loss_config() const;
};

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MetricRow {
    int64_t step = 0;
    double l_rec = 0.0;
    double l_reg = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct MetricLog {
    std::vector<MetricRow> rows;
    /// Rows must arrive in increasing step order.
    void append(const MetricRow& row);
};

struct Checkpoint {
    nets::NetworkConfig net;
    nets::ReconNetParams theta;
    nets::RegNetParams phi;
};

Checkpoint initial_checkpoint(const nets::NetworkConfig& net);

struct StepResult {
    double loss = 0.0;              // value before the update
    size_t frozen_grad_entries = 0; // gradient entries found for the frozen network (always 0)
};

/// One Adam step on the registration loss w.r.t. phi; theta is read only.
StepResult train_step_reg(const nets::NetworkConfig& net, nets::RegNetParams& phi, const nets::ReconNetParams& theta,
                          const PairTensors& batch, const loss::LossConfig& cfg, ad::AdamState& opt);

/// One Adam step on the reconstruction loss w.r.t. theta; phi is read only.
StepResult train_step_rec(const nets::NetworkConfig& net, nets::ReconNetParams& theta, const nets::RegNetParams& phi,
                          const PairTensors& batch, ad::AdamState& opt);

/// One Adam step on the unregistered cross-prediction loss.
StepResult train_step_n2n(const nets::NetworkConfig& net, nets::ReconNetParams& theta, const PairTensors& tuples,
                          ad::AdamState& opt);

struct SampleMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
};

struct Evaluation {
    std::vector<SampleMetrics> samples;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

/// Reconstruction of the reference member, in groundtruth units.
std::vector<mri::ComplexImage> reconstruct(const nets::NetworkConfig& net, const nets::ReconNetParams& theta,
                                           const std::vector<EvalSample>& samples, int64_t batch = 8);

Evaluation evaluate(const nets::NetworkConfig& net, const nets::ReconNetParams& theta,
                    const std::vector<EvalSample>& samples, int64_t batch = 8);

/// Validation losses of the whole split at the given parameters.
std::pair<double, double> validation_losses(const nets::NetworkConfig& net, const Checkpoint& ck,
                                            const std::vector<EvalSample>& samples, const TrainConfig& cfg);

struct TrainResult {
    Checkpoint checkpoint;
    MetricLog log;
};

/// Called at every evaluation point with the parameters at that step.
using CheckpointSink = std::function<void(const Checkpoint&, const MetricRow&)>;

TrainResult train(const TrainConfig& cfg, const nets::NetworkConfig& net, const PairBatch& train_pairs,
                  const std::vector<EvalSample>& validation, const CheckpointSink& sink = {});

}  // namespace udream::train
