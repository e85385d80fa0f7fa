#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hpl/trainer.hpp"

namespace hpl {

struct GradCheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-6;
  double tolerance = 1e-5;
  // Denominator floor of the relative error, as a fraction of the largest
  // analytic gradient entry of the term.
  double relative_floor = 1e-2;
  PrototypeSpace prototype_space = PrototypeSpace::kFeatures;
  bool inject_sign_flip = false;  // negative control: negates the L_l gradient
};

struct GradCheckTerm {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_parameter;  // tensor name and offset
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckTerm> terms;  // L_s, L_u, L_l, L_JS_S, L_JS_I, total
  bool passed() const;
};

// Random K=3, 8x8, D=4, batch-2 instance with every term active and no
// pre-activation within 1e-4 of a ReLU kink or map pixel within 2e-4 of a
// prototype.
FrozenBatch gradcheck_batch(std::uint64_t seed, PrototypeSpace space, SegNetParams& params_out);

GradCheckReport run_gradcheck(const GradCheckOptions& opt);

}  // namespace hpl
