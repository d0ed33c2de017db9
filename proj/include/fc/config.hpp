#pragma once

#include <string>
#include <vector>

#include "fc/sim.hpp"

namespace fc {

// One validation line collected while a configuration is assembled: funnel
// class verdicts, feasibility inequality sides, consistency margins. `check`
// prints these and fails when any is not ok; `run` treats them as advisory.
struct ConfigNote {
  std::string line;
  bool ok = true;
};

// A fully assembled run: the guarded problem plus the integration and output
// choices from the document. The problem owns copies of everything it needs,
// so a RunConfig outlives its JSON source.
struct RunConfig {
  std::string name;
  ClosedLoopProblem problem;
  IntegrateOptions options;
  long long seed = 0;
  std::string csv_path;
  std::string report_path;
  std::vector<ConfigNote> notes;
};

// Assemble a run from a JSON document. Schema violations (unknown keys,
// missing sections, non-finite numbers, inadmissible funnel parameters) raise
// config_invalid; the underlying assembly keeps its own error codes.
RunConfig build_run(const std::string& json_text);
RunConfig build_run_file(const std::string& path);

// section parsers, exposed for tests and ad-hoc tooling
Signal signal_from_json(const std::string& json_text);
FunnelFunction funnel_from_json(const std::string& json_text);

}  // namespace fc
