#pragma once

#include <string>

#include "samplecrit/config.hpp"
#include "samplecrit/error.hpp"

namespace samplecrit::cli {

/// A threshold given with --assert was not met.
class AssertionFailed : public Error {
 public:
  using Error::Error;
};

void cmd_generate(const ExperimentConfig& cfg);
void cmd_train(ExperimentConfig cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_oracle(const ExperimentConfig& cfg);
void cmd_bench(const ExperimentConfig& cfg);
void cmd_grad_check(const ExperimentConfig& cfg);

}  // namespace samplecrit::cli
