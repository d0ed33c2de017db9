#include <cstdio>
#include <string>

#include "fc/scenarios.hpp"
#include "fc/sim.hpp"

// Refreshes the stored regression fixtures under tests/golden. Run from the
// repository root (or pass the output directory) after an intentional change
// to a pinned scenario, and review the diff before committing it.
int main(int argc, char** argv) {
  std::string dir = argc > 1 ? argv[1] : "tests/golden";
  for (const char* name :
       {"scalar_disturbance", "robot", "double_integrator_filter", "dae_synthetic"}) {
    fc::RunConfig cfg = fc::scenario_run(fc::find_scenario(name));
    fc::Trajectory tr = fc::integrate(cfg.problem, cfg.options);
    if (tr.termination != fc::Termination::Completed) {
      std::fprintf(stderr, "%s did not complete\n", name);
      return 1;
    }
    fc::Trajectory grid = fc::resample(cfg.problem, tr, 101);
    std::string path = dir + "/" + std::string(name) + ".csv";
    fc::write_csv(path, grid);
    std::printf("wrote %s (%zu rows)\n", path.c_str(), grid.samples.size());
  }
  return 0;
}
