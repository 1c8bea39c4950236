#pragma once

#include <stdexcept>
#include <string>

#include "run_config.hpp"

namespace fmue::cli {

// An upstream file a command depends on does not exist.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void cmd_synth(const RunConfig& cfg);
void cmd_split(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_calibrate(const RunConfig& cfg);
void cmd_evaluate(const RunConfig& cfg);
void cmd_ood(const RunConfig& cfg);
void cmd_explain(const RunConfig& cfg);
void cmd_plot(const RunConfig& cfg);

// Exit-code contract: 0 ok, 2 config, 3 missing artifact, 4 computation.
int exit_code_for_current_exception();

}  // namespace fmue::cli
