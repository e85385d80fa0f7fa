#pragma once

#include <cstdint>
#include <vector>

#include "hpl/tensor.hpp"

namespace hpl {

// Per-class prototypes eta (K x D). Rows of unseen classes stay zero and take
// no part in assignments.
struct PrototypeBank {
  Tensor prototypes;               // K x D
  std::vector<std::uint8_t> seen;  // K
  double momentum = 0.9;

  PrototypeBank() = default;
  PrototypeBank(std::size_t num_classes, std::size_t dim, double momentum);

  std::size_t num_classes() const { return seen.size(); }
  std::size_t dim() const { return prototypes.rank() == 2 ? prototypes.dim(1) : 0; }
  std::size_t seen_count() const;
  bool operator==(const PrototypeBank&) const = default;
};

// Class means over every pixel of the batch, then one momentum update per
// present class. First sighting copies the mean.
void update_prototypes(PrototypeBank& bank, const std::vector<const Tensor*>& features,
                       const std::vector<const LabelMap*>& labels);
void update_prototypes(PrototypeBank& bank, const Tensor& features, const LabelMap& labels);

// z over the seen prototypes, in ascending class order (`classes`).
struct SoftAssignment {
  std::vector<std::uint32_t> classes;
  Tensor z;         // K' x H x W
  Tensor distance;  // K' x H x W
};

// z_c = softmax_c(-||f - eta_c|| / tau). Throws EmptyBankError without a
// seen prototype.
SoftAssignment soft_assign(const Tensor& features, const PrototypeBank& bank, double tau);

// Mean over pixels of JS(z_a, z_b).
double js_alignment_value(const SoftAssignment& a, const SoftAssignment& b);

struct AlignmentGrad {
  double value = 0.0;
  Tensor d_a;  // w.r.t. features_a
  Tensor d_b;  // w.r.t. features_b
};

// Source alignment: features of the reconstructed image against features of
// its event voxel grid, both assigned to the same bank.
AlignmentGrad js_alignment_loss(const Tensor& features_a, const Tensor& features_b, const PrototypeBank& bank,
                                double tau);

// Intra-target alignment of labeled and unlabeled event features on the
// reconstruction bank; pixel i of one map is paired with pixel i of the other.
AlignmentGrad intra_target_loss(const Tensor& features_el, const Tensor& features_eu, const PrototypeBank& recon_bank,
                                double tau);

}  // namespace hpl
