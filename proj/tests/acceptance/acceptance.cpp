// Acceptance runner: one PASS/FAIL line per criterion.
//
//   udream_acceptance [--only N[,M...]]
//
// Exit status is 0 only if every selected criterion passes.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "../support.hpp"
#include "udream/autodiff.hpp"
#include "udream/baselines.hpp"
#include "udream/data.hpp"
#include "udream/deformation.hpp"
#include "udream/losses.hpp"
#include "udream/metrics.hpp"
#include "udream/mri.hpp"
#include "udream/networks.hpp"
#include "udream/training.hpp"

using namespace udream;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void info(const std::string& s) { std::cout << "  " << s << std::endl; }

// Reduced networks used wherever training is involved. See README for the rationale.
nets::NetworkConfig desk_net(uint64_t seed) {
    nets::NetworkConfig n;
    n.channels = 8;
    n.blocks = 2;
    n.levels = 3;
    n.reg_channels = 8;
    n.seed = seed;
    return n;
}

data::DatasetConfig desk_dataset(double sigma, uint64_t seed) {
    data::DatasetConfig cfg;  // 64x64, 48/6/6, 25% Cartesian with 8% center, 40 dB
    cfg.deform.sigma = sigma;
    cfg.deform.peak_normalize = true;
    cfg.seed = seed;
    return cfg;
}

train::TrainConfig desk_train(train::Method m, uint64_t seed) {
    train::TrainConfig c;
    c.method = m;
    c.steps = 2000;
    c.batch_size = 4;
    c.lr_rec = 1e-3;
    c.lr_reg = 1e-3;
    // Field TV is a sum over 2HW entries and the similarity a pixel mean; the default 0.1 pins the field at zero.
    c.lambda = 1e-5;
    c.seed = seed;
    return c;
}

// ---------------------------------------------------------------- 1

Outcome criterion1() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20261015);
    std::uniform_int_distribution<int64_t> side(8, 64);
    double worst_round = 0.0, worst_parseval = 0.0, worst_adjoint = 0.0;
    const int instances = 120;
    for (int t = 0; t < instances; ++t) {
        const int64_t h = side(rng), w = side(rng);
        const auto x = random_image(h, w, rng());
        const auto k = mri::fft2_centered(x);
        const auto back = mri::ifft2_centered(k);
        double num = 0.0;
        for (size_t i = 0; i < x.re.size(); ++i) num += std::pow(back.re[i] - x.re[i], 2) + std::pow(back.im[i] - x.im[i], 2);
        worst_round = std::max(worst_round, std::sqrt(num) / mri::norm(x));
        worst_parseval = std::max(worst_parseval, std::abs(mri::norm(k) - mri::norm(x)) / mri::norm(x));

        const double rate = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
        const auto mask = mri::make_cartesian_mask(h, w, rate, std::min(rate, 0.1), rng());
        mri::KSpaceMeasurement y{random_image(h, w, rng()), mask};
        for (size_t i = 0; i < mask.values.size(); ++i) {
            y.values.re[i] *= mask.values[i];
            y.values.im[i] *= mask.values[i];
        }
        const double lhs = mri::inner(mri::forward(x, mask).values, y.values);
        const double rhs = mri::inner(x, mri::adjoint(y));
        worst_adjoint = std::max(worst_adjoint, std::abs(lhs - rhs));
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = worst_round <= 1e-10 && worst_parseval <= 1e-10 && worst_adjoint <= 1e-10 && secs < 10.0;
    o.detail = std::to_string(instances) + " instances, round trip " + fmt("%.2e", worst_round) + ", Parseval " +
               fmt("%.2e", worst_parseval) + ", adjoint gap " + fmt("%.2e", worst_adjoint) + ", " + fmt("%.2f", secs) + " s";
    return o;
}

// ---------------------------------------------------------------- 2

struct GradCase {
    double tolerance;
    std::function<double()> run;
};

std::map<std::string, GradCase> primitive_checks() {
    using ad::Tensor;
    const double lin = 1e-8, nonlin = 1e-4;
    const Array a = random_array({2, 3, 6, 6}, 1);
    const Array b = random_array({2, 3, 6, 6}, 2);
    const Array pos = random_array({2, 3, 6, 6}, 3, 0.5, 2.0);
    const Array s = signed_away_from_zero({2, 3, 6, 6}, 4);
    const Tensor bc = Tensor::constant(b), pc = Tensor::constant(pos);
    auto u = [](std::function<Tensor(const Tensor&)> f, Array x) { return [f, x] { return check_unary(f, x); }; };

    Array hub = signed_away_from_zero({60}, 5, 0.05, 0.9);
    for (size_t i = 0; i < hub.data.size(); i += 2) hub.data[i] *= 3.0;
    const Array field = [] {
        Array f = random_array({2, 2, 6, 6}, 6, 0.1, 0.4);
        for (size_t i = 0; i < f.data.size(); i += 3) f.data[i] = -1.3 + 0.1 * f.data[i];
        return f;
    }();
    const Array img2 = random_array({2, 2, 6, 6}, 7);
    const Array w = random_array({4, 3, 3, 3}, 8);
    const Array bias = random_array({4}, 9);

    std::map<std::string, GradCase> m;
    m["abs"] = {nonlin, u([](const Tensor& t) { return ad::abs(t); }, s)};
    m["add"] = {lin, u([bc](const Tensor& t) { return ad::add(t, bc); }, a)};
    m["add_scalar"] = {lin, u([](const Tensor& t) { return ad::add_scalar(t, 0.7); }, a)};
    m["avgpool2"] = {lin, u([](const Tensor& t) { return ad::avgpool2(t); }, a)};
    m["box_sum2d"] = {lin, u([](const Tensor& t) { return ad::box_sum2d(t, 3); }, a)};
    m["clamp"] = {nonlin, u([](const Tensor& t) { return ad::clamp(t, -0.1, 0.1); }, s)};
    m["concat_batch"] = {lin, u([bc](const Tensor& t) { return ad::concat_batch({t, bc, t}); }, a)};
    m["concat_channels"] = {lin, u([bc](const Tensor& t) { return ad::concat_channels({bc, t}); }, a)};
    m["conv2d_same"] = {lin, [a, w, bias] {
                            const Tensor ac = Tensor::constant(a), wc = Tensor::constant(w), bb = Tensor::constant(bias);
                            return std::max({check_unary([&](const Tensor& t) { return ad::conv2d_same(t, wc, bb); }, a),
                                             check_unary([&](const Tensor& t) { return ad::conv2d_same(ac, t, bb); }, w),
                                             check_unary([&](const Tensor& t) { return ad::conv2d_same(ac, wc, t); }, bias)});
                        }};
    m["div"] = {nonlin, [s, pos, pc] {
                    const Tensor sc = Tensor::constant(s);
                    return std::max(check_unary([&](const Tensor& t) { return ad::div(t, pc); }, s),
                                    check_unary([&](const Tensor& t) { return ad::div(sc, t); }, pos));
                }};
    m["fft2c"] = {lin, u([](const Tensor& t) { return mri::fft2c(t); }, img2)};
    m["forward_diff"] = {lin, [a] {
                             return std::max(check_unary([](const Tensor& t) { return ad::forward_diff(t, 2); }, a),
                                             check_unary([](const Tensor& t) { return ad::forward_diff(t, 3); }, a));
                         }};
    m["huber_elem"] = {nonlin, u([](const Tensor& t) { return ad::huber_elem(t); }, hub)};
    m["ifft2c"] = {lin, u([](const Tensor& t) { return mri::ifft2c(t); }, img2)};
    m["leaky_relu"] = {nonlin, u([](const Tensor& t) { return ad::leaky_relu(t, 0.2); }, s)};
    m["matmul"] = {lin, [] {
                       const Array x = random_array({3, 5}, 10), y = random_array({5, 2}, 11);
                       const Tensor xc = Tensor::constant(x), yc = Tensor::constant(y);
                       return std::max(check_unary([&](const Tensor& t) { return ad::matmul(t, yc); }, x),
                                       check_unary([&](const Tensor& t) { return ad::matmul(xc, t); }, y));
                   }};
    m["mul"] = {lin, u([bc](const Tensor& t) { return ad::mul(t, bc); }, a)};
    m["reduce_mean"] = {lin, u([](const Tensor& t) { return ad::reduce_mean(t); }, a)};
    m["reduce_sum"] = {lin, u([](const Tensor& t) { return ad::reduce_sum(t); }, a)};
    m["relu"] = {nonlin, u([](const Tensor& t) { return ad::relu(t); }, s)};
    m["reshape"] = {lin, u([](const Tensor& t) { return ad::reshape(t, {6, 36}); }, a)};
    m["scale"] = {lin, u([](const Tensor& t) { return ad::scale(t, -1.5); }, a)};
    m["slice_batch"] = {lin, u([](const Tensor& t) { return ad::slice_batch(t, 1, 2); }, a)};
    m["slice_channels"] = {lin, u([](const Tensor& t) { return ad::slice_channels(t, 0, 2); }, a)};
    m["sqrt_eps"] = {nonlin, u([](const Tensor& t) { return ad::sqrt_eps(t); }, pos)};
    m["square"] = {nonlin, u([](const Tensor& t) { return ad::square(t); }, s)};
    m["sub"] = {lin, u([bc](const Tensor& t) { return ad::sub(bc, t); }, a)};
    m["upsample2_nearest"] = {lin, u([](const Tensor& t) { return ad::upsample2_nearest(t); }, a)};
    // The image side is checked separately at the linear tolerance.
    m["warp"] = {nonlin, [img2, field] {
                     const Tensor ic = Tensor::constant(img2);
                     return check_unary([&](const Tensor& t) { return deform::warp(ic, t); }, field);
                 }};
    return m;
}

Outcome criterion2() {
    const auto t0 = Clock::now();
    mri::register_primitives();
    deform::register_primitives();
    Outcome o;
    auto checks = primitive_checks();
    int checked = 0;
    std::vector<std::string> failures;
    for (const auto& name : ad::registered_primitives()) {
        auto it = checks.find(name);
        if (it == checks.end()) {
            failures.push_back(name + " (no check)");
            continue;
        }
        const double err = it->second.run();
        ++checked;
        if (!(err <= it->second.tolerance)) failures.push_back(name + " " + fmt("%.2e", err));
    }

    const Array wimg = random_array({2, 2, 6, 6}, 24);
    const ad::Tensor wfield = ad::Tensor::constant(random_array({2, 2, 6, 6}, 25, -1.5, 1.5));
    const double e_warp_img = check_unary([&](const ad::Tensor& t) { return deform::warp(t, wfield); }, wimg);
    if (!(e_warp_img <= 1e-8)) failures.push_back("warp (image) " + fmt("%.2e", e_warp_img));

    // Composite losses.
    const Array x = random_array({1, 2, 10, 10}, 20, 0.2, 1.0);
    const Array y = random_array({1, 2, 10, 10}, 21, 0.2, 1.0);
    loss::LossConfig lc;
    lc.lcc_window = 5;
    const double e_lcc = ad::gradient_check(
        [&](const ad::Tensor& t) { return loss::lcc_similarity(t, ad::Tensor::constant(y), lc); }, x);
    const double e_tv = ad::gradient_check([](const ad::Tensor& t) { return loss::tv_field(t); },
                                           signed_away_from_zero({1, 2, 8, 8}, 22));
    Array hub = signed_away_from_zero({40}, 23, 0.05, 0.9);
    for (size_t i = 0; i < hub.data.size(); i += 2) hub.data[i] *= 3.0;
    const double e_hub = ad::gradient_check([](const ad::Tensor& t) { return loss::huber_sum(t); }, hub);
    if (!(e_lcc <= 1e-4)) failures.push_back("lcc " + fmt("%.2e", e_lcc));
    if (!(e_tv <= 1e-4)) failures.push_back("tv " + fmt("%.2e", e_tv));
    if (!(e_hub <= 1e-4)) failures.push_back("huber " + fmt("%.2e", e_hub));

    // End to end on a 16x16 instance.
    data::DatasetConfig dc;
    dc.size = 16;
    dc.n_train = 1;
    dc.n_val = 1;
    dc.n_test = 1;
    dc.deform.points = 20;
    dc.deform.sigma = 1.5;
    dc.deform.peak_normalize = true;
    dc.seed = 3;
    const auto batch = stack(data::Dataset::build_phantoms(dc).pairs(data::Split::Train));
    nets::NetworkConfig net;
    net.channels = 4;
    net.blocks = 1;
    net.levels = 2;
    net.reg_channels = 4;
    auto [theta, phi] = nets::init_params(net, 5);
    auto& flow = phi.params.at("flow.w");
    flow = random_array(flow.shape, 6, -0.05, 0.05);
    double e_rec = 0.0, e_reg = 0.0;
    for (size_t p = 0; p < theta.params.values.size(); p += 2) {
        e_rec = std::max(e_rec, ad::gradient_check(
                                    [&](const ad::Tensor& t) {
                                        auto th = nets::bind(theta.params, false);
                                        th[p] = t;
                                        return loss::reconstruction_loss(net, th, nets::bind(phi.params, false), batch);
                                    },
                                    theta.params.values[p], 1e-6));
    }
    for (size_t p = 0; p < phi.params.values.size(); p += 2) {
        e_reg = std::max(e_reg, ad::gradient_check(
                                    [&](const ad::Tensor& t) {
                                        auto ph = nets::bind(phi.params, false);
                                        ph[p] = t;
                                        return loss::registration_loss(net, nets::bind(theta.params, false), ph, batch, lc);
                                    },
                                    phi.params.values[p], 1e-6));
    }
    if (!(e_rec <= 1e-3)) failures.push_back("L_rec end-to-end " + fmt("%.2e", e_rec));
    if (!(e_reg <= 1e-3)) failures.push_back("L_reg end-to-end " + fmt("%.2e", e_reg));

    const double secs = seconds_since(t0);
    if (secs >= 120.0) failures.push_back("runtime " + fmt("%.1f", secs) + " s");
    o.pass = failures.empty();
    std::ostringstream d;
    d << checked << " primitives + lcc/tv/huber, end-to-end L_rec " << fmt("%.2e", e_rec) << ", L_reg "
      << fmt("%.2e", e_reg) << ", " << fmt("%.1f", secs) << " s";
    for (const auto& f : failures) d << "; failed: " << f;
    o.detail = d.str();
    return o;
}

// ---------------------------------------------------------------- 3

Outcome criterion3() {
    std::vector<std::string> failures;
    const Array img = random_array({3, 2, 17, 13}, 30);
    const ad::Tensor warped = deform::warp(ad::Tensor::constant(img), ad::Tensor::zeros({3, 2, 17, 13}));
    if (!std::equal(img.data.begin(), img.data.end(), warped.data().begin())) failures.push_back("warp(., 0) not bit-exact");
    const auto ci = random_image(17, 13, 31);
    const auto cw = deform::warp_image(ci, deform::DeformationField(17, 13));
    if (cw.re != ci.re || cw.im != ci.im) failures.push_back("warp_image(., 0) not bit-exact");

    nets::NetworkConfig net = desk_net(1);
    auto theta = nets::init_params(net).first;
    for (auto& v : theta.params.values) std::fill(v.data.begin(), v.data.end(), 0.0);
    Array xa = random_image(32, 32, 32).to_array();
    xa.shape.insert(xa.shape.begin(), 1);
    const ad::Tensor out = nets::recon_forward(net, nets::bind(theta.params, false), ad::Tensor::constant(xa));
    const double p_id = metrics::psnr(mri::ComplexImage::from_array(out.value(), 0), mri::ComplexImage::from_array(xa, 0));
    if (p_id != metrics::kPsnrCap) failures.push_back("zero-weight recon PSNR " + fmt("%.3f", p_id));

    const auto ds = data::Dataset::build_phantoms(desk_dataset(2.5, 33));
    const auto pairs = ds.pairs(data::Split::Train);
    const PairBatch few(pairs.begin(), pairs.begin() + 4);
    const auto [th, ph] = nets::init_params(net);
    const auto tt = nets::bind(th.params, false), pt = nets::bind(ph.params, false);
    const double ud = loss::reconstruction_loss(net, tt, pt, stack(few)).item();
    const double n2n = loss::n2n_loss(net, tt, stack(augment_reverse_pairs(few))).item();
    const double gap = std::abs(ud - n2n);
    if (!(gap <= 1e-12 * std::max(1.0, std::abs(n2n)))) failures.push_back("U-Dream vs N2N gap " + fmt("%.2e", gap));

    double worst_ratio = 0.0;
    for (double snr : {0.0, 10.0, 25.0, 40.0}) {
        const auto y = pairs[0].y_ref;
        const auto noisy = mri::add_noise(y, snr, 34);
        mri::ComplexImage n(y.values.height, y.values.width);
        for (size_t i = 0; i < n.re.size(); ++i) {
            n.re[i] = noisy.values.re[i] - y.values.re[i];
            n.im[i] = noisy.values.im[i] - y.values.im[i];
        }
        const double ratio = mri::inner(n, n) / mri::inner(y.values, y.values);
        const double target = std::pow(10.0, -snr / 10.0);
        worst_ratio = std::max(worst_ratio, std::abs(ratio - target) / target);
    }
    if (!(worst_ratio <= 1e-9)) failures.push_back("noise ratio error " + fmt("%.2e", worst_ratio));

    Outcome o;
    o.pass = failures.empty();
    o.detail = "recon identity PSNR " + fmt("%.0f", p_id) + ", U-Dream/N2N gap " + fmt("%.1e", gap) +
               ", noise ratio rel. error " + fmt("%.1e", worst_ratio);
    for (const auto& f : failures) o.detail += "; failed: " + f;
    return o;
}

// ---------------------------------------------------------------- 4

Outcome criterion4() {
    std::vector<std::string> failures;
    const double h05 = loss::huber_sum(ad::Tensor::scalar(0.5)).item();
    const double h2 = loss::huber_sum(ad::Tensor::scalar(2.0)).item();
    if (std::abs(h05 - 0.125) > 1e-12) failures.push_back("H(0.5) = " + fmt("%.6f", h05));
    if (std::abs(h2 - 1.5) > 1e-12) failures.push_back("H(2) = " + fmt("%.6f", h2));

    // Textured content, so that no 9x9 window is flat. Flat windows score 0 by construction (zero numerator).
    const ad::Tensor a4 = ad::Tensor::constant(random_array({1, 2, 32, 32}, 40, 0.1, 1.0));
    const double lcc = loss::lcc_similarity(a4, a4, loss::LossConfig{}).item();
    if (!(lcc >= 0.999)) failures.push_back("LCC(a,a) = " + fmt("%.6f", lcc));
    const ad::Tensor ph = ad::reshape(ad::Tensor::constant(data::make_phantom(32, 32, 40).to_array()), {1, 2, 32, 32});
    info("LCC(a,a) on a piecewise-constant phantom: " + fmt("%.4f", loss::lcc_similarity(ph, ph, loss::LossConfig{}).item()));

    Array ramp({1, 2, 4, 4}, 0.0);
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j) ramp.data[static_cast<size_t>(i * 4 + j)] = static_cast<double>(j);
    const double tv = loss::tv_field(ad::Tensor::constant(ramp)).item();
    if (std::abs(tv - 12.0) > 1e-4) failures.push_back("TV(ramp) = " + fmt("%.6f", tv));

    const auto img = data::make_phantom(32, 32, 41).magnitude();
    const double s = metrics::ssim(img, img, 32, 32);
    if (std::abs(s - 1.0) > 1e-12) failures.push_back("SSIM(x,x) = " + fmt("%.12f", s));

    std::vector<double> gt(100, 0.0), est(100, 0.1);
    gt[0] = 1.0;
    est[0] = 1.1;
    const double p = metrics::psnr(est, gt);
    if (std::abs(p - 20.0) > 1e-9) failures.push_back("PSNR = " + fmt("%.9f", p));

    Outcome o;
    o.pass = failures.empty();
    o.detail = "H(0.5)=" + fmt("%.6g", h05) + " H(2)=" + fmt("%.6g", h2) + " LCC(a,a)=" + fmt("%.6f", lcc) +
               " TV(ramp)=" + fmt("%.6f", tv) + " SSIM=" + fmt("%.6f", s) + " PSNR=" + fmt("%.6f", p);
    for (const auto& f : failures) o.detail += "; failed: " + f;
    return o;
}

// ---------------------------------------------------------------- 5

struct MethodScore {
    double psnr = 0.0;
    double ssim = 0.0;
};

void parallel_for(size_t n, const std::function<void(size_t)>& job) {
    const size_t workers = std::max<size_t>(1, std::min<size_t>(n, std::thread::hardware_concurrency()));
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    auto loop = [&] {
        ad::PrecisionGuard guard(ad::Precision::F32);
        for (size_t i = next++; i < n; i = next++) job(i);
    };
    for (size_t w = 1; w < workers; ++w) pool.emplace_back(loop);
    loop();
    for (auto& t : pool) t.join();
}

Outcome criterion5() {
    const auto t0 = Clock::now();
    const std::vector<double> sigmas{2.5, 4.5};
    const std::vector<uint64_t> seeds{1, 2, 3};
    const uint64_t dataset_seed = 7;

    struct Job {
        size_t sigma_index;
        train::Method method;
        uint64_t seed;
    };
    std::vector<Job> jobs;
    for (size_t s = 0; s < sigmas.size(); ++s)
        for (auto seed : seeds)
            for (auto m : {train::Method::UDream, train::Method::N2N}) jobs.push_back({s, m, seed});

    std::vector<data::Dataset> sets;
    for (double sg : sigmas) sets.push_back(data::Dataset::build_phantoms(desk_dataset(sg, dataset_seed)));

    std::vector<MethodScore> job_scores(jobs.size());
    std::mutex log_mutex;
    parallel_for(jobs.size(), [&](size_t i) {
        const Job& j = jobs[i];
        const auto& ds = sets[j.sigma_index];
        const auto net = desk_net(j.seed);
        const auto result = train::train(desk_train(j.method, j.seed), net, ds.pairs(data::Split::Train), {});
        const auto ev = train::evaluate(net, result.checkpoint.theta, ds.evaluation(data::Split::Test));
        job_scores[i] = {ev.mean_psnr, ev.mean_ssim};
        std::lock_guard lock(log_mutex);
        info("sigma " + fmt("%.1f", sigmas[j.sigma_index]) + " " + train::to_string(j.method) + " seed " +
             std::to_string(j.seed) + ": PSNR " + fmt("%.3f", ev.mean_psnr) + " SSIM " + fmt("%.4f", ev.mean_ssim) +
             " (" + fmt("%.0f", seconds_since(t0)) + " s elapsed)");
    });

    bool pass = true;
    std::ostringstream d;
    for (size_t s = 0; s < sigmas.size(); ++s) {
        const auto& ds = sets[s];
        MethodScore ud, n2n, tv, zf;
        for (size_t i = 0; i < jobs.size(); ++i) {
            if (jobs[i].sigma_index != s) continue;
            auto& dst = jobs[i].method == train::Method::UDream ? ud : n2n;
            dst.psnr += job_scores[i].psnr / static_cast<double>(seeds.size());
            dst.ssim += job_scores[i].ssim / static_cast<double>(seeds.size());
        }
        const auto val = ds.evaluation(data::Split::Val);
        const auto test = ds.evaluation(data::Split::Test);
        const auto search = baselines::grid_search_tau(val, baselines::default_tau_grid(), {},
                                                       static_cast<int>(std::thread::hardware_concurrency()));
        baselines::TVSolverConfig tv_cfg;
        tv_cfg.tau = search.best_tau;
        for (const auto& smp : test) {
            const auto r_tv = baselines::tv_reconstruct_sample(smp, tv_cfg);
            const auto r_zf = baselines::zero_filled_sample(smp);
            const double n = static_cast<double>(test.size());
            tv.psnr += metrics::psnr(r_tv, smp.x_ref) / n;
            tv.ssim += metrics::ssim(r_tv, smp.x_ref) / n;
            zf.psnr += metrics::psnr(r_zf, smp.x_ref) / n;
            zf.ssim += metrics::ssim(r_zf, smp.x_ref) / n;
        }
        info("sigma " + fmt("%.1f", sigmas[s]) + " test means: U-Dream " + fmt("%.3f", ud.psnr) + "/" + fmt("%.4f", ud.ssim) +
             ", N2N " + fmt("%.3f", n2n.psnr) + "/" + fmt("%.4f", n2n.ssim) + ", TV(tau=" + fmt("%.3g", search.best_tau) +
             ") " + fmt("%.3f", tv.psnr) + "/" + fmt("%.4f", tv.ssim) + ", ZF " + fmt("%.3f", zf.psnr) + "/" +
             fmt("%.4f", zf.ssim));

        std::vector<std::string> broken;
        if (!(ud.psnr >= n2n.psnr + 0.3)) broken.push_back("PSNR U-Dream - N2N = " + fmt("%.3f", ud.psnr - n2n.psnr) + " < 0.3");
        if (!(ud.psnr > tv.psnr)) broken.push_back("PSNR U-Dream <= TV");
        if (!(tv.psnr > zf.psnr)) broken.push_back("PSNR TV <= ZF");
        if (!(ud.ssim > n2n.ssim)) broken.push_back("SSIM U-Dream <= N2N");
        if (!(ud.ssim > tv.ssim)) broken.push_back("SSIM U-Dream <= TV");
        if (!(tv.ssim > zf.ssim)) broken.push_back("SSIM TV <= ZF");
        d << "sigma " << fmt("%.1f", sigmas[s]) << ": ";
        if (broken.empty()) {
            d << "ordering holds";
        } else {
            pass = false;
            for (size_t i = 0; i < broken.size(); ++i) d << (i ? ", " : "") << broken[i];
        }
        d << "; ";
    }
    const double secs = seconds_since(t0);
    d << fmt("%.0f", secs) << " s on " << std::thread::hardware_concurrency() << " core(s)";
    return {pass, d.str()};
}

// ---------------------------------------------------------------- 6

Outcome criterion6() {
    const auto t0 = Clock::now();
    ad::PrecisionGuard guard(ad::Precision::F32);
    const auto ds = data::Dataset::build_phantoms(desk_dataset(2.5, 7));
    const PairBatch one{ds.pairs(data::Split::Train)[0]};
    const auto net = desk_net(1);
    auto cfg = desk_train(train::Method::UDream, 1);
    cfg.steps = 500;
    cfg.batch_size = 1;
    cfg.warmup_steps = 0;
    const auto batch = stack(one);
    auto l_rec = [&](const train::Checkpoint& ck) {
        return loss::reconstruction_loss(net, nets::bind(ck.theta.params, false), nets::bind(ck.phi.params, false), batch).item();
    };
    const double before = l_rec(train::initial_checkpoint(net));
    const auto result = train::train(cfg, net, one, {});
    const double after = l_rec(result.checkpoint);
    const double factor = before / after;
    return {factor >= 10.0, "L_rec " + fmt("%.4g", before) + " -> " + fmt("%.4g", after) + " (" + fmt("%.1f", factor) +
                                "x) after 500 alternating steps, " + fmt("%.0f", seconds_since(t0)) + " s"};
}

// ---------------------------------------------------------------- 7

Outcome criterion7() {
    std::vector<std::string> failures;
    const auto ds = data::Dataset::build_phantoms(desk_dataset(2.5, 7));
    const auto val = ds.evaluation(data::Split::Val);
    size_t increases = 0, checked = 0;
    for (size_t i = 0; i < 3; ++i) {
        for (double tau : {1e-3, 1e-2}) {
            baselines::TVSolverConfig cfg;
            cfg.tau = tau;
            cfg.tolerance = 0.0;
            const auto r = baselines::tv_reconstruct(val[i].pair.y_ref, cfg);
            for (size_t k = 1; k < r.objective.size(); ++k) {
                ++checked;
                if (r.objective[k] > r.objective[k - 1]) ++increases;
            }
        }
    }
    if (increases) failures.push_back(std::to_string(increases) + " objective increases");

    const auto x = val[0].x_ref;
    const auto full = mri::make_cartesian_mask(x.height, x.width, 1.0, 0.08, 0);
    baselines::TVSolverConfig cfg;
    cfg.tau = 1e-6;
    const auto r = baselines::tv_reconstruct(mri::forward(x, full), cfg);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < x.re.size(); ++i) {
        num += std::pow(r.image.re[i] - x.re[i], 2) + std::pow(r.image.im[i] - x.im[i], 2);
        den += x.re[i] * x.re[i] + x.im[i] * x.im[i];
    }
    const double rel = std::sqrt(num / den);
    if (!(rel <= 1e-4)) failures.push_back("full-sampling error " + fmt("%.2e", rel));
    if (r.iterations > 100) failures.push_back("iterations " + std::to_string(r.iterations));

    Outcome o;
    o.pass = failures.empty();
    o.detail = std::to_string(checked) + " outer iterations monotone check, full-sampling rel. error " + fmt("%.2e", rel) +
               " in " + std::to_string(r.iterations) + " iterations";
    for (const auto& f : failures) o.detail += "; failed: " + f;
    return o;
}

// ---------------------------------------------------------------- 8

int run_cli(const std::vector<std::string>& args) {
    std::string cmd = std::string("\"") + UDREAM_CLI_PATH + "\"";
    for (const auto& a : args) cmd += " \"" + a + "\"";
    cmd += " > /dev/null";
    return std::system(cmd.c_str());
}

Outcome criterion8() {
    TempDir root("acceptance8");
    std::vector<std::string> failures;
    for (const std::string run : {"a", "b"}) {
        const std::string data = (root / (run + "_data")).string();
        const std::string out = (root / (run + "_run")).string();
        if (run_cli({"--seed", "11", "--out", data, "gen-data", "--size", "32", "--n", "12", "--peak-normalize"}) != 0)
            failures.push_back("gen-data failed");
        if (run_cli({"--seed", "11", "--out", out, "--precision", "f32", "train", "--data", data, "--steps", "12",
                     "--eval-every", "5", "--channels", "4", "--blocks", "1", "--levels", "2", "--batch", "2",
                     "--warmup", "2"}) != 0)
            failures.push_back("train failed");
    }
    int identical = 0;
    for (const auto& [dir, file] : std::vector<std::pair<std::string, std::string>>{{"data", data::kManifestFile},
                                                                                     {"data", data::kSamplesFile},
                                                                                     {"run", data::kCheckpointFile},
                                                                                     {"run", data::kMetricsFile}}) {
        try {
            if (data::read_file(root / ("a_" + dir) / file) == data::read_file(root / ("b_" + dir) / file))
                ++identical;
            else
                failures.push_back(file + " differs");
        } catch (const std::exception& e) {
            failures.push_back(e.what());
        }
    }

    try {
        const auto ds = data::Dataset::load(root / "a_data", data::Dataset::Access::Evaluation);
        ds.save(root / "copy");
        for (const char* f : {data::kManifestFile, data::kSamplesFile})
            if (data::read_file(root / "copy" / f) != data::read_file(root / "a_data" / f))
                failures.push_back(std::string("dataset round trip changed ") + f);
        data::Dataset::load(root / "copy", data::Dataset::Access::Training);
        const auto bytes = data::read_file(root / "a_run" / data::kCheckpointFile);
        if (data::encode_checkpoint(data::decode_checkpoint(bytes)) != bytes) failures.push_back("checkpoint round trip");
    } catch (const std::exception& e) {
        failures.push_back(e.what());
    }

    Outcome o;
    o.pass = failures.empty();
    o.detail = std::to_string(identical) + "/4 artifacts bit-identical across runs, dataset and checkpoint round trips " +
               (o.pass ? "exact" : "checked");
    for (const auto& f : failures) o.detail += "; failed: " + f;
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"udream acceptance criteria"};
    std::vector<int> only;
    app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                         criterion5, criterion6, criterion7, criterion8};
    const std::set<int> selected(only.begin(), only.end());
    int failed = 0;
    for (int i = 1; i <= 8; ++i) {
        if (!selected.empty() && !selected.count(i)) continue;
        Outcome o;
        try {
            o = criteria[static_cast<size_t>(i - 1)]();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cout << "criterion " << i << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << std::endl;
        if (!o.pass) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
