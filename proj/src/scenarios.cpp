#include "fc/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fc/controllers.hpp"
#include "fc/errors.hpp"

namespace fc {

namespace {

// largest funnel margin over the whole run; every guarded channel must stay
// strictly inside the unit tube
InvariantCheck margins_stay_inside() {
  return [](const Trajectory& tr) {
    CheckResult c{"funnel margins stay below one", 0.0, 1.0, false};
    for (const auto& s : tr.samples)
      for (double m : s.margins) c.value = std::max(c.value, m);
    c.pass = c.value < c.bound;
    return c;
  };
}

InvariantCheck input_stays_below(double bound, const std::string& name, bool strict) {
  return [bound, name, strict](const Trajectory& tr) {
    CheckResult c{name, 0.0, bound, false};
    for (const auto& s : tr.samples) c.value = std::max(c.value, s.u.norm());
    c.pass = strict ? c.value < c.bound : c.value <= c.bound;
    return c;
  };
}

// |y(t)|^2 + drift and gain terms must cancel along the adaptation:
// residual of y^2 = y0^2 + 2 a (k - k0) - cb (k^2 - k0^2) for u = -k y
InvariantCheck gain_circle_conserved(double a, double cb, double y0, double k0, double tol) {
  return [a, cb, y0, k0, tol](const Trajectory& tr) {
    CheckResult c{"output energy and gain move on the conserved curve", 0.0, tol, false};
    for (const auto& s : tr.samples) {
      double k = s.gains.empty() ? k0 : s.gains[0];
      double expected = y0 * y0 + 2.0 * a * (k - k0) - cb * (k * k - k0 * k0);
      c.value = std::max(c.value, std::abs(s.y.squaredNorm() - expected));
    }
    c.pass = c.value < c.bound;
    return c;
  };
}

// same bookkeeping for u = N(k) y, integrating N through its antiderivative
InvariantCheck nussbaum_energy_identity(double a, double cb, double y0, double k0, double tol) {
  return [a, cb, y0, k0, tol](const Trajectory& tr) {
    CheckResult c{"probing-gain energy identity holds", 0.0, tol, false};
    const double F0 = nussbaum_antiderivative(k0);
    for (const auto& s : tr.samples) {
      double k = s.gains.empty() ? k0 : s.gains[0];
      double expected =
          y0 * y0 + 2.0 * a * (k - k0) + 2.0 * cb * (nussbaum_antiderivative(k) - F0);
      c.value = std::max(c.value, std::abs(s.y.squaredNorm() - expected));
    }
    c.pass = c.value < c.bound;
    return c;
  };
}

InvariantCheck output_settles(double tol) {
  return [tol](const Trajectory& tr) {
    CheckResult c{"output has settled by the end of the run", 0.0, tol, false};
    if (!tr.samples.empty()) c.value = tr.samples.back().y.norm();
    c.pass = c.value < c.bound;
    return c;
  };
}

// k(T) - k(T/2): the adaptation must have stopped moving in the second half
InvariantCheck gain_converged(int k_state_index, double tol) {
  return [k_state_index, tol](const Trajectory& tr) {
    CheckResult c{"adaptive gain converges", 0.0, tol, false};
    if (!tr.samples.empty() && !tr.samples.back().gains.empty()) {
      double k_end = tr.samples.back().gains[0];
      double k_mid = tr.state_at(tr.t_final / 2.0)(k_state_index);
      c.value = k_end - k_mid;
      c.pass = c.value < c.bound;
    }
    return c;
  };
}

InvariantCheck gain_never_decreases() {
  return [](const Trajectory& tr) {
    CheckResult c{"adaptive gain never decreases", 0.0, 1e-9, false};
    for (std::size_t i = 1; i < tr.samples.size(); ++i) {
      if (tr.samples[i].gains.empty() || tr.samples[i - 1].gains.empty()) continue;
      c.value = std::max(c.value, tr.samples[i - 1].gains[0] - tr.samples[i].gains[0]);
    }
    c.pass = c.value < c.bound;
    return c;
  };
}

InvariantCheck gain_stays_below(double bound) {
  return [bound](const Trajectory& tr) {
    CheckResult c{"adaptive gain stays bounded", 0.0, bound, false};
    for (const auto& s : tr.samples)
      if (!s.gains.empty()) c.value = std::max(c.value, s.gains[0]);
    c.pass = c.value < c.bound;
    return c;
  };
}

// distance to the lambda tube on the trailing tenth of the run
InvariantCheck tail_inside_tube(double lambda, double tol) {
  return [lambda, tol](const Trajectory& tr) {
    CheckResult c{"tail error settles into the tube", 0.0, tol, false};
    for (const auto& s : tr.samples)
      if (s.t >= 0.9 * tr.t_final)
        c.value = std::max(c.value, dist_lambda(s.e.norm(), lambda));
    c.pass = c.value < c.bound;
    return c;
  };
}

InvariantCheck follows_benchmark_closed_form(double tol) {
  return [tol](const Trajectory& tr) {
    CheckResult c{"output follows the closed-form solution", 0.0, tol, false};
    for (const auto& s : tr.samples)
      c.value = std::max(c.value, std::abs(s.y(0) - std::pow(1.0 + s.t, -1.0 / 3.0)));
    c.pass = c.value < c.bound;
    return c;
  };
}

InvariantCheck benchmark_state_oracles() {
  return [](const Trajectory& tr) {
    CheckResult c{"state and gain hit their closed-form values", 0.0, 1e-6, false};
    if (tr.t_final >= 7.0) {
      double x3 = tr.state_at(3.0)(0) - std::pow(4.0, -1.0 / 3.0);
      double k7 = tr.state_at(7.0)(1) - 3.0;
      c.value = std::max(std::abs(x3), std::abs(k7));
      c.pass = c.value < c.bound;
    }
    return c;
  };
}

InvariantCheck boundary_stays_above(double floor, double slack) {
  return [floor, slack](const Trajectory& tr) {
    CheckResult c{"adaptive boundary stays above its floor", 0.0, floor - slack, false};
    c.value = std::numeric_limits<double>::infinity();
    for (const auto& s : tr.samples)
      if (!s.psi.empty()) c.value = std::min(c.value, s.psi[0]);
    c.pass = c.value >= c.bound;
    return c;
  };
}

// saturated law: gains[1] flags samples where the clamp is active
InvariantCheck saturation_events(bool expected) {
  return [expected](const Trajectory& tr) {
    std::string name = expected ? "saturation engages at least once"
                                : "saturation never engages";
    CheckResult c{name, 0.0, 1.0, false};
    for (const auto& s : tr.samples)
      if (s.gains.size() > 1 && s.gains[1] > 0.5) c.value += 1.0;
    c.pass = expected ? c.value >= c.bound : c.value < c.bound;
    return c;
  };
}

InvariantCheck residual_stays_tiny(double tol) {
  return [tol](const Trajectory& tr) {
    CheckResult c{"constraint residual stays tiny", tr.residual_max, tol, false};
    c.pass = c.value <= c.bound;
    return c;
  };
}

InvariantCheck run_completed() {
  return [](const Trajectory& tr) {
    CheckResult c{"run reaches the final time", tr.t_final, 0.0, false};
    c.pass = tr.termination == Termination::Completed;
    return c;
  };
}

std::vector<Scenario> make_catalog() {
  std::vector<Scenario> out;

  out.push_back(
      {"scalar_disturbance",
       "adaptive high-gain loop against a decaying disturbance, with a closed-form solution",
       R"({
  "name": "scalar_disturbance",
  "system": {"type": "scalar_linear", "a": 0.0, "b": 1.0, "c": 1.0, "y0": 1.0,
             "disturbance": {"type": "rational_pow", "c0": 3.0,
                             "c1": -3.3333333333333335, "c2": -3.0,
                             "p": -1.3333333333333333}},
  "controller": {"type": "high_gain", "k0": 0.0},
  "sim": {"t_end": 50.0}
})",
       {run_completed(), follows_benchmark_closed_form(1e-5), benchmark_state_oracles()}});

  out.push_back({"high_gain_conservation",
                 "undisturbed adaptive loop whose output energy and gain share a conserved circle",
                 R"({
  "name": "high_gain_conservation",
  "system": {"type": "scalar_linear", "a": 0.0, "b": 1.0, "c": 0.0, "y0": 1.0},
  "controller": {"type": "high_gain", "k0": 0.0},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), gain_circle_conserved(0.0, 1.0, 1.0, 0.0, 1e-6)}});

  out.push_back({"nussbaum_pos",
                 "probing-gain stabilization with the control direction aligned",
                 R"({
  "name": "nussbaum_pos",
  "system": {"type": "scalar_linear", "a": 1.0, "b": 1.0, "c": 0.0, "y0": 1.0},
  "controller": {"type": "nussbaum", "k0": 0.0},
  "sim": {"t_end": 50.0}
})",
                 {run_completed(), nussbaum_energy_identity(1.0, 1.0, 1.0, 0.0, 1e-5),
                  output_settles(1e-3), gain_converged(1, 1e-3)}});

  out.push_back({"nussbaum_neg",
                 "probing-gain stabilization with the control direction reversed",
                 R"({
  "name": "nussbaum_neg",
  "system": {"type": "scalar_linear", "a": 1.0, "b": -1.0, "c": 0.0, "y0": 1.0},
  "controller": {"type": "nussbaum", "k0": 0.0},
  "sim": {"t_end": 50.0}
})",
                 {run_completed(), nussbaum_energy_identity(1.0, -1.0, 1.0, 0.0, 1e-5),
                  output_settles(1e-3), gain_converged(1, 1e-3)}});

  out.push_back({"lambda_tracker",
                 "adaptation that freezes once the error settles into a fixed tube",
                 R"({
  "name": "lambda_tracker",
  "system": {"type": "scalar_linear", "a": 1.0, "b": 1.0, "c": 1.0, "y0": 0.5,
             "disturbance": {"type": "rational_pow", "c0": 0.0, "c1": 0.5, "c2": 0.0,
                             "p": -2.0}},
  "controller": {"type": "lambda_tracker", "lambda": 0.1, "k0": 0.0},
  "sim": {"t_end": 20.0}
})",
                 {run_completed(), tail_inside_tube(0.1, 1e-3), gain_never_decreases(),
                  gain_stays_below(100.0), gain_converged(1, 1e-3)}});

  out.push_back({"robot",
                 "two-link arm tracking a two-tone reference inside a shrinking tube",
                 R"({
  "name": "robot",
  "system": {"type": "robot", "m1": 1.0, "m2": 1.0, "l1": 1.0, "l2": 1.0, "g": 9.81,
             "x0": [0.0, 0.0, 0.0, 0.0]},
  "controller": {"type": "static_fc", "r": 2,
                 "alpha": {"type": "reciprocal"}, "N": {"type": "neg_identity"}},
  "reference": {"type": "harmonic", "amp": [1.0, 1.0], "omega": [1.0, 2.0],
                "phase": [0.0, 0.0]},
  "funnel": {"family": "exp_decay_reciprocal", "a": 4.0, "b": 2.0, "c": 0.1},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), margins_stay_inside(),
                  input_stays_below(1e3, "arm torques stay bounded", true)}});

  out.push_back({"robot_nonbackstep",
                 "the same arm under the gain-cascade law, for cross-checking the two designs",
                 R"({
  "name": "robot_nonbackstep",
  "system": {"type": "robot", "m1": 1.0, "m2": 1.0, "l1": 1.0, "l2": 1.0, "g": 9.81,
             "x0": [0.0, 0.0, 0.0, 0.0]},
  "controller": {"type": "nonbackstep", "r": 2},
  "reference": {"type": "harmonic", "amp": [1.0, 1.0], "omega": [1.0, 2.0],
                "phase": [0.0, 0.0]},
  "funnel": {"family": "exp_decay_reciprocal", "a": 4.0, "b": 2.0, "c": 0.1},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), margins_stay_inside(),
                  input_stays_below(1e3, "arm torques stay bounded", true)}});

  out.push_back({"double_integrator_filter",
                 "derivative-free control of a double integrator through a first-order filter",
                 R"({
  "name": "double_integrator_filter",
  "system": {"type": "integrator_chain", "r": 2, "m": 1, "gain": 1.0, "x0": [0.5, -0.5]},
  "controller": {"type": "filter", "r": 2, "mu": 1.0,
                 "alpha": {"type": "reciprocal"}, "N": {"type": "neg_identity"}},
  "funnel": {"family": "linear_ramp", "eps": 0.2, "T": 2.0},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), margins_stay_inside()}});

  out.push_back({"double_integrator_precomp",
                 "double integrator driven through a funnel pre-compensator and a surrogate chain",
                 R"({
  "name": "double_integrator_precomp",
  "system": {"type": "integrator_chain", "r": 2, "m": 1, "gain": 1.0, "x0": [0.5, -0.5]},
  "controller": {"type": "precomp", "r": 2,
                 "stages": [{"q": [1.0, 1.0], "phi_scale": 2.0}],
                 "alpha": {"type": "reciprocal"}, "N": {"type": "neg_identity"}},
  "funnel": {"family": "linear_ramp", "eps": 0.2, "T": 2.0},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), margins_stay_inside()}});

  out.push_back({"heat_modal",
                 "modal truncation of a boundary-damped diffusion tracking a sine wave",
                 R"({
  "name": "heat_modal",
  "system": {"type": "heat_modal", "n_modes": 10},
  "controller": {"type": "static_fc", "r": 1,
                 "alpha": {"type": "reciprocal"}, "N": {"type": "neg_identity"}},
  "reference": {"type": "harmonic", "amp": [1.0], "omega": [1.0], "phase": [0.0]},
  "funnel": {"family": "exp_decay_reciprocal", "a": 0.95, "b": 1.0, "c": 0.05},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), margins_stay_inside()}});

  out.push_back({"pd_funnel",
                 "proportional-derivative law with separate tubes on the error and its slope",
                 R"({
  "name": "pd_funnel",
  "system": {"type": "integrator_chain", "r": 2, "m": 1, "gain": 1.0, "x0": [0.3, 0.0]},
  "controller": {"type": "pd", "modified": false,
                 "phi1": {"family": "constant_reciprocal", "c": 1.0}},
  "reference": {"type": "harmonic", "amp": [0.5], "omega": [1.0], "phase": [0.0]},
  "funnel": {"family": "exp_decay_reciprocal", "a": 0.95, "b": 0.5, "c": 0.05},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), margins_stay_inside()}});

  out.push_back({"ppc",
                 "backstepping-style law keeping every stage of a chain in its own envelope",
                 R"({
  "name": "ppc",
  "system": {"type": "integrator_chain", "r": 2, "m": 1, "gain": 1.0, "x0": [0.3, 0.0]},
  "controller": {"type": "ppc", "k": [1.0, 1.5],
                 "phis": [{"family": "exp_decay_reciprocal", "a": 0.7, "b": 0.5, "c": 0.3},
                          {"family": "constant_reciprocal", "c": 1.25}]},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), margins_stay_inside()}});

  out.push_back({"saturated",
                 "funnel law under an input clamp, sized so the clamp engages but never loses",
                 R"({
  "name": "saturated",
  "system": {"type": "scalar_linear", "a": -0.5, "b": 1.0, "c": 0.0, "y0": 0.8},
  "controller": {"type": "saturated", "u_hat": 2.0},
  "reference": {"type": "harmonic", "amp": [0.4], "omega": [1.0], "phase": [0.0]},
  "funnel": {"family": "exp_decay_reciprocal", "a": 0.95, "b": 0.5, "c": 0.05},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), margins_stay_inside(),
                  input_stays_below(2.0, "input never exceeds the clamp level", false),
                  saturation_events(true)}});

  out.push_back({"saturated_strict",
                 "the clamped law started close enough that the clamp never engages",
                 R"({
  "name": "saturated_strict",
  "system": {"type": "scalar_linear", "a": -0.5, "b": 1.0, "c": 0.0, "y0": 0.5},
  "controller": {"type": "saturated", "u_hat": 2.0},
  "reference": {"type": "harmonic", "amp": [0.4], "omega": [1.0], "phase": [0.0]},
  "funnel": {"family": "exp_decay_reciprocal", "a": 0.95, "b": 0.5, "c": 0.05},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), margins_stay_inside(),
                  input_stays_below(2.0, "input never exceeds the clamp level", false),
                  saturation_events(false)}});

  out.push_back({"icfc",
                 "input-constrained law whose performance boundary widens under saturation",
                 R"({
  "name": "icfc",
  "system": {"type": "scalar_linear", "a": 0.0, "b": 1.0, "c": 0.0, "y0": 0.9},
  "controller": {"type": "icfc", "u_hat": 1.0, "alpha_d": 1.0, "beta_d": 0.5, "psi0": 1.0},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(),
                  input_stays_below(1.0, "input never exceeds the saturation level", false),
                  boundary_stays_above(0.5, 1e-9)}});

  out.push_back({"dae_synthetic",
                 "differential-algebraic loop: one funneled chain, one output pinned by a constraint",
                 R"({
  "name": "dae_synthetic",
  "system": {"type": "dae_normal_form", "r": 1, "ell": 1, "m": 2,
             "R1": [[[0.1]]], "R2": [[[0.4]]],
             "P1": [[0.1]], "P2": [[1.0]], "S1": [[0.1]], "S2": [[-0.3]],
             "Q": [[-1.0]], "A31": [[0.1, 0.1]],
             "Gamma_hat": [[1.0]], "Gamma_tilde": [[0.5]],
             "chain0": [0.2], "x30": [0.0]},
  "controller": {"type": "dae_fc", "k_hat": 1.5,
                 "alpha": {"type": "reciprocal"}, "N": {"type": "neg_identity"}},
  "reference": {"type": "harmonic", "amp": [0.3, 0.2], "omega": [1.0, 0.0],
                "phase": [0.0, 1.5707963267948966]},
  "funnel": {"family": "exp_decay_reciprocal", "a": 0.5, "b": 1.0, "c": 0.5},
  "sim": {"t_end": 10.0}
})",
                 {run_completed(), margins_stay_inside(), residual_stays_tiny(1e-8)}});

  return out;
}

}  // namespace

const std::vector<Scenario>& scenario_catalog() {
  static const std::vector<Scenario> catalog = make_catalog();
  return catalog;
}

const Scenario& find_scenario(const std::string& name) {
  for (const auto& s : scenario_catalog())
    if (s.name == name) return s;
  fail(Errc::invalid_argument, "unknown scenario '" + name + "'");
}

RunConfig scenario_run(const Scenario& scenario) { return build_run(scenario.config_json); }

}  // namespace fc
