#include "udream/losses.hpp"

#include <stdexcept>

#include "udream/autodiff.hpp"
#include "udream/deformation.hpp"
#include "udream/mri.hpp"

namespace udream::loss {

using ad::Tensor;

void LossConfig::validate() const {
    if (lcc_window < 3 || lcc_window % 2 == 0) throw std::invalid_argument("lcc_window must be odd and >= 3");
    if (!(lcc_eps > 0.0)) throw std::invalid_argument("lcc_eps must be > 0");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
}

Tensor huber_sum(const Tensor& residual) { return ad::reduce_sum(ad::huber_elem(residual)); }

Tensor magnitude(const Tensor& x) {
    if (x.rank() != 4 || x.dim(1) != 2) throw ad::ShapeError("magnitude expects [N,2,H,W]");
    Tensor re = ad::slice_channels(x, 0, 1);
    Tensor im = ad::slice_channels(x, 1, 2);
    return ad::sqrt_eps(ad::add(ad::square(re), ad::square(im)));
}

Tensor lcc_map(const Tensor& a, const Tensor& b, int64_t window, double eps) {
    if (a.shape() != b.shape()) throw ad::ShapeError("lcc: shapes differ");
    if (a.rank() < 2) throw ad::ShapeError("lcc: need at least 2 dims");
    if (window > a.dim(a.rank() - 2) || window > a.dim(a.rank() - 1)) {
        throw ad::ShapeError("lcc: window " + std::to_string(window) + " larger than image " + ad::to_string(a.shape()));
    }
    const double inv_n = 1.0 / static_cast<double>(window * window);
    Tensor sa = ad::box_sum2d(a, window);
    Tensor sb = ad::box_sum2d(b, window);
    Tensor saa = ad::box_sum2d(ad::square(a), window);
    Tensor sbb = ad::box_sum2d(ad::square(b), window);
    Tensor sab = ad::box_sum2d(ad::mul(a, b), window);
    // sum_w (a - mean_a)(b - mean_b) = sum ab - sum a * sum b / n, and likewise for the variances.
    Tensor cross = ad::sub(sab, ad::scale(ad::mul(sa, sb), inv_n));
    Tensor var_a = ad::sub(saa, ad::scale(ad::square(sa), inv_n));
    Tensor var_b = ad::sub(sbb, ad::scale(ad::square(sb), inv_n));
    return ad::div(ad::square(cross), ad::add_scalar(ad::mul(var_a, var_b), eps));
}

Tensor lcc_similarity(const Tensor& a, const Tensor& b, const LossConfig& cfg) {
    return ad::reduce_mean(lcc_map(magnitude(a), magnitude(b), cfg.lcc_window, cfg.lcc_eps));
}

Tensor tv_field(const Tensor& field) {
    auto smooth_abs = [](const Tensor& t) { return ad::sqrt_eps(ad::square(t)); };
    Tensor rows = smooth_abs(ad::forward_diff(field, -2));
    Tensor cols = smooth_abs(ad::forward_diff(field, -1));
    return ad::add(ad::reduce_sum(rows), ad::reduce_sum(cols));
}

JointForward joint_forward(const nets::NetworkConfig& cfg, std::span<const Tensor> theta, std::span<const Tensor> phi,
                           const PairTensors& pairs) {
    const int64_t k = pairs.count;
    JointForward f;
    f.recon = nets::recon_forward(cfg, theta, ad::concat_batch({pairs.xhat_ref, pairs.xhat_mov}));
    Tensor r = ad::slice_batch(f.recon, 0, k);
    Tensor m = ad::slice_batch(f.recon, k, 2 * k);
    f.sources = ad::concat_batch({m, r});
    f.targets = ad::concat_batch({r, m});
    f.fields = nets::reg_forward(cfg, phi, f.sources, f.targets);
    f.warped = deform::warp(f.sources, f.fields);
    return f;
}

Tensor registration_loss(const JointForward& f, const PairTensors& pairs, const LossConfig& cfg) {
    const int64_t k = pairs.count;
    const double pixels = static_cast<double>(f.targets.dim(2) * f.targets.dim(3));
    // sum over 2k directions of (1 - mean_p cc) = 2k - sum(cc) / pixels
    Tensor cc = lcc_map(magnitude(f.targets), magnitude(f.warped), cfg.lcc_window, cfg.lcc_eps);
    Tensor dissimilarity = ad::add_scalar(ad::scale(ad::reduce_sum(cc), -1.0 / pixels), static_cast<double>(2 * k));
    Tensor total = ad::add(dissimilarity, ad::scale(tv_field(f.fields), cfg.lambda));
    return ad::scale(total, 1.0 / static_cast<double>(k));
}

Tensor registration_loss(const nets::NetworkConfig& net, std::span<const Tensor> theta, std::span<const Tensor> phi,
                         const PairTensors& pairs, const LossConfig& cfg) {
    return registration_loss(joint_forward(net, theta, phi, pairs), pairs, cfg);
}

Tensor reconstruction_loss(const JointForward& f, const PairTensors& pairs) {
    Tensor y = ad::concat_batch({pairs.y_ref, pairs.y_mov});
    Tensor mask = ad::concat_batch({pairs.mask_ref, pairs.mask_mov});
    Tensor residual = ad::sub(y, mri::forward_op(f.warped, mask));
    return ad::scale(huber_sum(residual), 1.0 / static_cast<double>(pairs.count));
}

Tensor reconstruction_loss(const nets::NetworkConfig& net, std::span<const Tensor> theta, std::span<const Tensor> phi,
                           const PairTensors& pairs) {
    return reconstruction_loss(joint_forward(net, theta, phi, pairs), pairs);
}

Tensor n2n_loss(const nets::NetworkConfig& net, std::span<const Tensor> theta, const PairTensors& tuples) {
    Tensor predicted = nets::recon_forward(net, theta, tuples.xhat_mov);
    Tensor residual = ad::sub(tuples.y_ref, mri::forward_op(predicted, tuples.mask_ref));
    return ad::scale(huber_sum(residual), 2.0 / static_cast<double>(tuples.count));
}

}  // namespace udream::loss
