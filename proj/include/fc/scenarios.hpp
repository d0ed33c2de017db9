#pragma once

#include <string>
#include <vector>

#include "fc/config.hpp"
#include "fc/sim.hpp"

namespace fc {

// A curated experiment: the JSON document is the single source of truth (the
// run is rebuilt from it, so saving and reloading the config reproduces the
// trajectory bit for bit), plus the assertions the run must satisfy.
struct Scenario {
  std::string name;
  std::string description;  // one line for the catalog listing
  std::string config_json;
  std::vector<InvariantCheck> checks;
};

const std::vector<Scenario>& scenario_catalog();

// the catalog entry with this name; unknown names raise invalid_argument
const Scenario& find_scenario(const std::string& name);

// convenience: build the scenario's run configuration from its document
RunConfig scenario_run(const Scenario& scenario);

}  // namespace fc
