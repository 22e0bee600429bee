#pragma once

#include <string>

namespace poda::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome criterion1_gradients();
Outcome criterion2_pointer_generator();
Outcome criterion3_noising();
Outcome criterion4_beam_oracle();
Outcome criterion5_copy_competence();
Outcome criterion6_denoising_overfit();
Outcome criterion7_transfer();
Outcome criterion8_few_shot();
Outcome criterion9_metric_oracles();
Outcome criterion10_engineering();

}  // namespace poda::acceptance
