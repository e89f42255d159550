#pragma once

#include <cstdint>

#include "omniseq/matrix.hpp"

namespace omniseq {

struct AdamHyperParams {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Matrix first_moment;
  Matrix second_moment;
  std::uint64_t step_count = 0;
  AdamHyperParams hyper;

  static AdamState for_shape(const Matrix& param, AdamHyperParams hyper = {});
};

// One bias-corrected Adam update of `param` in place.
void adam_step(Matrix& param, const Matrix& grad, AdamState& state);

}  // namespace omniseq
