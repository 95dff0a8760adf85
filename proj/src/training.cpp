#include "udream/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "udream/autodiff.hpp"
#include "udream/metrics.hpp"

namespace udream::train {

namespace {

size_t count_entries(const ad::Gradients& g, const std::vector<ad::Tensor>& frozen) {
    size_t n = 0;
    for (const auto& t : frozen) n += g.map().count(t.id());
    return n;
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) {
        std::ostringstream os;
        os << what << " is not finite (" << v << ")";
        throw NonFiniteLoss(os.str());
    }
}

std::vector<ad::Array> grads_of(const ad::Gradients& g, const std::vector<ad::Tensor>& params) {
    std::vector<ad::Array> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(g.of(p));
    return out;
}

// Runs loss_fn under a clean record, differentiates and applies Adam to params.
template <typename LossFn>
StepResult descend(nets::ParamSet& params, const std::vector<ad::Tensor>& frozen, ad::AdamState& opt,
                   const char* what, LossFn&& loss_fn, const std::vector<ad::Tensor>& trainable) {
    ad::reset_record();
    StepResult r;
    ad::Tensor loss;
    try {
        loss = loss_fn();
        r.loss = loss.item();
        check_finite(r.loss, what);
    } catch (...) {
        ad::reset_record();
        throw;
    }
    const ad::Gradients g = ad::backward(loss);
    r.frozen_grad_entries = count_entries(g, frozen);
    ad::adam_step(params.values, grads_of(g, trainable), opt);
    return r;
}

PairBatch select(const PairBatch& all, const std::vector<size_t>& order, size_t begin, size_t count) {
    PairBatch b;
    b.reserve(count);
    for (size_t i = 0; i < count; ++i) b.push_back(all[order[(begin + i) % order.size()]]);
    return b;
}

}  // namespace

std::string to_string(Method m) { return m == Method::UDream ? "udream" : "n2n"; }

Method parse_method(const std::string& s) {
    if (s == "udream") return Method::UDream;
    if (s == "n2n") return Method::N2N;
    throw std::invalid_argument("unknown training method '" + s + "' (expected udream or n2n)");
}

void TrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    if (alternation_period < 1) throw std::invalid_argument("alternation_period must be >= 1");
    if (!(lr_rec > 0.0) || !(lr_reg > 0.0)) throw std::invalid_argument("learning rates must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (eval_every < 0 || warmup_steps < 0) throw std::invalid_argument("eval_every and warmup_steps must be >= 0");
    loss_config().validate();
}

loss::LossConfig TrainConfig::loss_config() const { return loss::LossConfig{lcc_window, lcc_eps, lambda}; }

void MetricLog::append(const MetricRow& row) {
    if (!rows.empty() && row.step <= rows.back().step) throw std::logic_error("MetricLog rows must be ordered by step");
    rows.push_back(row);
}

Checkpoint initial_checkpoint(const nets::NetworkConfig& net) {
    net.validate();
    auto [theta, phi] = nets::init_params(net);
    return Checkpoint{net, std::move(theta), std::move(phi)};
}

StepResult train_step_reg(const nets::NetworkConfig& net, nets::RegNetParams& phi, const nets::ReconNetParams& theta,
                          const PairTensors& batch, const loss::LossConfig& cfg, ad::AdamState& opt) {
    const auto th = nets::bind(theta.params, false);
    const auto ph = nets::bind(phi.params, true);
    return descend(
        phi.params, th, opt, "registration loss",
        [&] { return loss::registration_loss(net, th, ph, batch, cfg); }, ph);
}

StepResult train_step_rec(const nets::NetworkConfig& net, nets::ReconNetParams& theta, const nets::RegNetParams& phi,
                          const PairTensors& batch, ad::AdamState& opt) {
    const auto th = nets::bind(theta.params, true);
    const auto ph = nets::bind(phi.params, false);
    return descend(
        theta.params, ph, opt, "reconstruction loss",
        [&] { return loss::reconstruction_loss(net, th, ph, batch); }, th);
}

StepResult train_step_n2n(const nets::NetworkConfig& net, nets::ReconNetParams& theta, const PairTensors& tuples,
                          ad::AdamState& opt) {
    const auto th = nets::bind(theta.params, true);
    return descend(
        theta.params, {}, opt, "unregistered N2N loss", [&] { return loss::n2n_loss(net, th, tuples); }, th);
}

std::vector<mri::ComplexImage> reconstruct(const nets::NetworkConfig& net, const nets::ReconNetParams& theta,
                                           const std::vector<EvalSample>& samples, int64_t batch) {
    if (batch < 1) throw std::invalid_argument("reconstruct: batch must be >= 1");
    const auto th = nets::bind(theta.params, false);
    std::vector<mri::ComplexImage> out;
    out.reserve(samples.size());
    for (size_t begin = 0; begin < samples.size(); begin += static_cast<size_t>(batch)) {
        const size_t end = std::min(samples.size(), begin + static_cast<size_t>(batch));
        std::vector<ad::Tensor> inputs;
        for (size_t i = begin; i < end; ++i) {
            ad::Array a = samples[i].pair.xhat_ref.to_array();
            inputs.push_back(ad::Tensor::constant(ad::Shape{1, 2, a.shape[1], a.shape[2]}, std::move(a.data)));
        }
        const ad::Tensor y = nets::recon_forward(net, th, ad::concat_batch(inputs));
        for (size_t i = begin; i < end; ++i) {
            mri::ComplexImage img = mri::ComplexImage::from_array(y.value(), static_cast<int64_t>(i - begin));
            const double inv = 1.0 / samples[i].pair.scale;
            for (auto& v : img.re) v *= inv;
            for (auto& v : img.im) v *= inv;
            out.push_back(std::move(img));
        }
    }
    ad::reset_record();
    return out;
}

Evaluation evaluate(const nets::NetworkConfig& net, const nets::ReconNetParams& theta,
                    const std::vector<EvalSample>& samples, int64_t batch) {
    if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
    for (const auto& s : samples) {
        if (s.x_ref.re.empty()) throw std::invalid_argument("evaluate: sample '" + s.pair.id + "' has no groundtruth");
    }
    const auto recon = reconstruct(net, theta, samples, batch);
    Evaluation e;
    for (size_t i = 0; i < samples.size(); ++i) {
        SampleMetrics m{metrics::psnr(recon[i], samples[i].x_ref), metrics::ssim(recon[i], samples[i].x_ref)};
        e.mean_psnr += m.psnr;
        e.mean_ssim += m.ssim;
        e.samples.push_back(m);
    }
    e.mean_psnr /= static_cast<double>(samples.size());
    e.mean_ssim /= static_cast<double>(samples.size());
    return e;
}

std::pair<double, double> validation_losses(const nets::NetworkConfig& net, const Checkpoint& ck,
                                            const std::vector<EvalSample>& samples, const TrainConfig& cfg) {
    PairBatch pairs;
    for (const auto& s : samples) pairs.push_back(s.pair);
    const PairTensors t = stack(pairs);
    const auto th = nets::bind(ck.theta.params, false);
    const auto ph = nets::bind(ck.phi.params, false);
    const loss::JointForward f = loss::joint_forward(net, th, ph, t);
    const double rec = loss::reconstruction_loss(f, t).item();
    const double reg = loss::registration_loss(f, t, cfg.loss_config()).item();
    ad::reset_record();
    return {rec, reg};
}

TrainResult train(const TrainConfig& cfg, const nets::NetworkConfig& net, const PairBatch& train_pairs,
                  const std::vector<EvalSample>& validation, const CheckpointSink& sink) {
    cfg.validate();
    net.validate();
    TrainResult result{initial_checkpoint(net), {}};
    if (cfg.steps == 0) return result;
    if (train_pairs.empty()) throw std::invalid_argument("train: empty training set");
    const int64_t h = train_pairs.front().xhat_ref.height, w = train_pairs.front().xhat_ref.width;
    if (h % net.size_multiple() != 0 || w % net.size_multiple() != 0) {
        throw std::invalid_argument("train: image size " + std::to_string(h) + "x" + std::to_string(w) +
                                    " not divisible by " + std::to_string(net.size_multiple()));
    }

    Checkpoint& ck = result.checkpoint;
    ad::AdamState opt_rec(cfg.lr_rec, ck.theta.params.values);
    ad::AdamState opt_reg(cfg.lr_reg, ck.phi.params.values);
    const loss::LossConfig lcfg = cfg.loss_config();

    auto record = [&](int64_t step) {
        MetricRow row;
        row.step = step;
        if (!validation.empty()) {
            std::tie(row.l_rec, row.l_reg) = validation_losses(net, ck, validation, cfg);
            const Evaluation e = evaluate(net, ck.theta, validation);
            row.psnr = e.mean_psnr;
            row.ssim = e.mean_ssim;
        }
        result.log.append(row);
        if (sink) sink(ck, row);
    };
    record(0);

    // Fixed shuffling: one permutation per pass over the training pairs.
    std::mt19937_64 rng(cfg.seed);
    std::vector<size_t> order(train_pairs.size());
    size_t cursor = order.size();
    auto next_batch = [&] {
        const size_t k = static_cast<size_t>(cfg.batch_size);
        if (cursor + k > order.size()) {
            std::iota(order.begin(), order.end(), size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        PairBatch b = select(train_pairs, order, cursor, k);
        cursor += k;
        return b;
    };
    auto fail = [](int64_t step, const char* net_name, const NonFiniteLoss& e) {
        throw NonFiniteLoss("step " + std::to_string(step) + " (" + net_name + "): " + e.what());
    };

    int64_t step = 0;
    while (step < cfg.steps) {
        const int64_t block = std::min(cfg.alternation_period, cfg.steps - step);
        std::vector<PairTensors> batches;
        for (int64_t i = 0; i < block; ++i) {
            PairBatch b = next_batch();
            if (cfg.method == Method::N2N && cfg.reverse_augment) b = augment_reverse_pairs(b);
            batches.push_back(stack(b));
        }
        if (cfg.method == Method::N2N) {
            for (int64_t i = 0; i < block; ++i) {
                try {
                    train_step_n2n(net, ck.theta, batches[static_cast<size_t>(i)], opt_rec);
                } catch (const NonFiniteLoss& e) {
                    fail(step + i + 1, "reconstruction", e);
                }
            }
        } else {
            for (int64_t i = 0; i < block; ++i) {
                if (step + i < cfg.warmup_steps) continue;
                try {
                    train_step_reg(net, ck.phi, ck.theta, batches[static_cast<size_t>(i)], lcfg, opt_reg);
                } catch (const NonFiniteLoss& e) {
                    fail(step + i + 1, "registration", e);
                }
            }
            for (int64_t i = 0; i < block; ++i) {
                try {
                    train_step_rec(net, ck.theta, ck.phi, batches[static_cast<size_t>(i)], opt_rec);
                } catch (const NonFiniteLoss& e) {
                    fail(step + i + 1, "reconstruction", e);
                }
            }
        }
        const int64_t before = step;
        step += block;
        const bool due = cfg.eval_every > 0 && (step / cfg.eval_every) > (before / cfg.eval_every);
        if (due || step == cfg.steps) record(step);
    }
    return result;
}

}  // namespace udream::train
