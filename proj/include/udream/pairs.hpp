#pragma once

#include <string>
#include <vector>

#include "udream/deformation.hpp"
#include "udream/mri.hpp"
#include "udream/tensor.hpp"

namespace udream {

/// One unregistered measurement pair, already scaled so that max |zero-filled| = 1.
/// Carries no groundtruth.
struct MeasurementPair {
    std::string id;
    mri::KSpaceMeasurement y_ref;
    mri::KSpaceMeasurement y_mov;
    mri::ComplexImage xhat_ref;  // adjoint(y_ref)
    mri::ComplexImage xhat_mov;  // adjoint(y_mov)
    double scale = 1.0;          // factor applied to the raw measurements

    /// Scales raw measurements by 1 / max(|adjoint(y_ref)|, |adjoint(y_mov)|) and caches the zero-filled images.
    static MeasurementPair from_measurements(std::string id, mri::KSpaceMeasurement ref, mri::KSpaceMeasurement mov);
    /// The same pair with reference and moving members swapped.
    MeasurementPair reversed() const;
};

/// A pair plus evaluation-only groundtruth (raw, unscaled units).
struct EvalSample {
    MeasurementPair pair;
    mri::ComplexImage x_ref;
    deform::DeformationField phi;
};

using PairBatch = std::vector<MeasurementPair>;

/// Batched tensors for k pairs; every tensor is a constant [k,2,H,W].
struct PairTensors {
    int64_t count = 0;
    ad::Tensor y_ref, y_mov;
    ad::Tensor mask_ref, mask_mov;
    ad::Tensor xhat_ref, xhat_mov;
};

PairTensors stack(const PairBatch& batch);

/// Each pair followed by its reverse: k pairs -> 2k ordered tuples.
PairBatch augment_reverse_pairs(const PairBatch& batch);

}  // namespace udream
