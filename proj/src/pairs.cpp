#include "udream/pairs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace udream {

namespace {

double max_magnitude(const mri::ComplexImage& img) {
    double m = 0.0;
    for (size_t i = 0; i < img.re.size(); ++i) m = std::max(m, std::hypot(img.re[i], img.im[i]));
    return m;
}

void scale_in_place(mri::KSpaceMeasurement& y, double s) {
    for (auto& v : y.values.re) v *= s;
    for (auto& v : y.values.im) v *= s;
}

ad::Tensor stack_images(const PairBatch& batch, const mri::ComplexImage MeasurementPair::*member) {
    const auto& first = batch.front().*member;
    const int64_t hw = first.size();
    std::vector<double> data;
    data.reserve(static_cast<size_t>(batch.size() * 2 * hw));
    for (const auto& p : batch) {
        const auto& img = p.*member;
        if (img.height != first.height || img.width != first.width) throw ad::ShapeError("stack: pair sizes differ");
        data.insert(data.end(), img.re.begin(), img.re.end());
        data.insert(data.end(), img.im.begin(), img.im.end());
    }
    return ad::Tensor::constant({static_cast<int64_t>(batch.size()), 2, first.height, first.width}, std::move(data));
}

ad::Tensor stack_kspace(const PairBatch& batch, bool ref) {
    std::vector<double> data;
    const auto& first = ref ? batch.front().y_ref : batch.front().y_mov;
    for (const auto& p : batch) {
        const auto& y = ref ? p.y_ref : p.y_mov;
        if (y.values.height != first.values.height || y.values.width != first.values.width) {
            throw ad::ShapeError("stack: pair sizes differ");
        }
        data.insert(data.end(), y.values.re.begin(), y.values.re.end());
        data.insert(data.end(), y.values.im.begin(), y.values.im.end());
    }
    return ad::Tensor::constant({static_cast<int64_t>(batch.size()), 2, first.values.height, first.values.width},
                                std::move(data));
}

ad::Tensor stack_masks(const PairBatch& batch, bool ref) {
    std::vector<double> data;
    const auto& first = ref ? batch.front().y_ref.mask : batch.front().y_mov.mask;
    for (const auto& p : batch) {
        const auto& m = ref ? p.y_ref.mask : p.y_mov.mask;
        data.insert(data.end(), m.values.begin(), m.values.end());
        data.insert(data.end(), m.values.begin(), m.values.end());
    }
    return ad::Tensor::constant({static_cast<int64_t>(batch.size()), 2, first.height, first.width}, std::move(data));
}

}  // namespace

MeasurementPair MeasurementPair::from_measurements(std::string id, mri::KSpaceMeasurement ref,
                                                   mri::KSpaceMeasurement mov) {
    const double peak = std::max(max_magnitude(mri::adjoint(ref)), max_magnitude(mri::adjoint(mov)));
    if (!(peak > 0.0)) throw std::invalid_argument("pair '" + id + "' has zero-energy measurements");
    MeasurementPair p;
    p.id = std::move(id);
    p.scale = 1.0 / peak;
    scale_in_place(ref, p.scale);
    scale_in_place(mov, p.scale);
    p.xhat_ref = mri::adjoint(ref);
    p.xhat_mov = mri::adjoint(mov);
    p.y_ref = std::move(ref);
    p.y_mov = std::move(mov);
    return p;
}

MeasurementPair MeasurementPair::reversed() const {
    MeasurementPair p = *this;
    std::swap(p.y_ref, p.y_mov);
    std::swap(p.xhat_ref, p.xhat_mov);
    return p;
}

PairTensors stack(const PairBatch& batch) {
    if (batch.empty()) throw std::invalid_argument("stack: empty batch");
    PairTensors t;
    t.count = static_cast<int64_t>(batch.size());
    t.y_ref = stack_kspace(batch, true);
    t.y_mov = stack_kspace(batch, false);
    t.mask_ref = stack_masks(batch, true);
    t.mask_mov = stack_masks(batch, false);
    t.xhat_ref = stack_images(batch, &MeasurementPair::xhat_ref);
    t.xhat_mov = stack_images(batch, &MeasurementPair::xhat_mov);
    return t;
}

PairBatch augment_reverse_pairs(const PairBatch& batch) {
    PairBatch out;
    out.reserve(2 * batch.size());
    for (const auto& p : batch) {
        out.push_back(p);
        out.push_back(p.reversed());
    }
    return out;
}

}  // namespace udream
