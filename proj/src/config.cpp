#include "fc/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fc/controllers.hpp"
#include "fc/dae.hpp"
#include "fc/errors.hpp"
#include "fc/funnel.hpp"
#include "fc/lti.hpp"

namespace fc {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  fail(Errc::config_invalid, where + ": " + what);
}

const json& need(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) bad(where, std::string("missing key '") + key + "'");
  return *it;
}

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) bad(where, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) bad(where, "unknown key '" + it.key() + "'");
  }
}

double as_number(const json& v, const std::string& where, const char* key) {
  if (!v.is_number()) bad(where, std::string("'") + key + "' must be a number");
  double d = v.get<double>();
  if (!std::isfinite(d)) bad(where, std::string("'") + key + "' must be finite");
  return d;
}

double num(const json& obj, const char* key, const std::string& where) {
  return as_number(need(obj, key, where), where, key);
}

double num_or(const json& obj, const char* key, double fallback, const std::string& where) {
  auto it = obj.find(key);
  return it == obj.end() ? fallback : as_number(*it, where, key);
}

int integer(const json& obj, const char* key, const std::string& where) {
  const json& v = need(obj, key, where);
  if (!v.is_number_integer()) bad(where, std::string("'") + key + "' must be an integer");
  return v.get<int>();
}

int integer_or(const json& obj, const char* key, int fallback, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number_integer()) bad(where, std::string("'") + key + "' must be an integer");
  return it->get<int>();
}

std::string text_or(const json& obj, const char* key, const std::string& fallback,
                    const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_string()) bad(where, std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

VectorXd vec(const json& v, const std::string& where) {
  if (!v.is_array()) bad(where, "expected an array of numbers");
  VectorXd out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) =
      as_number(v[i], where, "entry");
  return out;
}

VectorXd vec_key(const json& obj, const char* key, const std::string& where) {
  return vec(need(obj, key, where), where + "." + key);
}

MatrixXd matrix(const json& v, const std::string& where) {
  if (!v.is_array()) bad(where, "expected an array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(v.size());
  if (rows == 0) return MatrixXd(0, 0);
  if (!v[0].is_array()) bad(where, "rows must be arrays");
  const Eigen::Index cols = static_cast<Eigen::Index>(v[0].size());
  MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!v[i].is_array() || static_cast<Eigen::Index>(v[i].size()) != cols)
      bad(where, "rows must all have the same length");
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = as_number(v[i][j], where, "entry");
  }
  return out;
}

MatrixXd matrix_key(const json& obj, const char* key, const std::string& where) {
  return matrix(need(obj, key, where), where + "." + key);
}

Signal build_signal(const json& j, const std::string& where) {
  check_keys(j, where, {"type", "dim", "value", "amp", "omega", "phase", "c0", "c1", "c2", "p"});
  std::string type = text_or(j, "type", "", where);
  if (type == "zero") {
    check_keys(j, where, {"type", "dim"});
    return Signal::zero(integer_or(j, "dim", 1, where));
  }
  if (type == "constant") {
    check_keys(j, where, {"type", "value"});
    return Signal::constant(vec_key(j, "value", where));
  }
  if (type == "harmonic") {
    check_keys(j, where, {"type", "amp", "omega", "phase"});
    VectorXd amp = vec_key(j, "amp", where);
    VectorXd omega = vec_key(j, "omega", where);
    VectorXd phase = j.contains("phase") ? vec_key(j, "phase", where)
                                         : VectorXd(VectorXd::Zero(amp.size()));
    if (omega.size() != amp.size() || phase.size() != amp.size())
      bad(where, "amp, omega, and phase must have the same length");
    return Signal::harmonic(amp, omega, phase);
  }
  if (type == "rational_pow") {
    check_keys(j, where, {"type", "c0", "c1", "c2", "p"});
    return Signal::rational_pow(num(j, "c0", where), num(j, "c1", where), num(j, "c2", where),
                                num(j, "p", where));
  }
  bad(where, "unknown signal type '" + type + "'");
}

FunnelFunction build_funnel(const json& j, const std::string& where) {
  check_keys(j, where, {"family", "a", "b", "c", "eps", "T", "q", "p"});
  std::string family = text_or(j, "family", "", where);
  if (family == "constant_reciprocal") {
    check_keys(j, where, {"family", "c"});
    return FunnelFunction::constant_reciprocal(num(j, "c", where));
  }
  if (family == "exp_decay_reciprocal") {
    check_keys(j, where, {"family", "a", "b", "c"});
    return FunnelFunction::exp_decay_reciprocal(num(j, "a", where), num(j, "b", where),
                                                num(j, "c", where));
  }
  if (family == "linear_ramp") {
    check_keys(j, where, {"family", "eps", "T"});
    return FunnelFunction::linear_ramp(num(j, "eps", where), num(j, "T", where));
  }
  if (family == "exp_growth") {
    check_keys(j, where, {"family", "q", "p"});
    double q = num(j, "q", where);
    double p = num(j, "p", where);
    if (q <= 0.0) bad(where, "exp_growth needs q > 0");
    if (p <= 0.0) bad(where, "exp_growth needs p > 0");
    if (p > 1.0)
      bad(where,
          "exp_growth with p > 1 is not an admissible weight: its slope outgrows every fixed "
          "multiple of 1 + the weight");
    auto eval = [q, p](double t, int order) {
      double f = std::exp(q * std::pow(t, p));
      if (order == 0) return f;
      // the slope q p t^{p-1} f diverges at t = 0 unless p = 1
      double slope = t == 0.0 ? (p == 1.0 ? q : std::numeric_limits<double>::infinity())
                              : q * p * std::pow(t, p - 1.0);
      if (order == 1) return slope * f;
      double curve = t == 0.0 ? (p == 1.0 ? 0.0 : -std::numeric_limits<double>::infinity())
                              : q * p * (p - 1.0) * std::pow(t, p - 2.0);
      return (curve + slope * slope) * f;
    };
    CustomFunnelTraits traits;
    traits.bounded = false;
    traits.liminf_positive = true;
    traits.zero_at_zero = false;
    traits.smoothness = 2;
    return FunnelFunction::custom(eval, traits);
  }
  bad(where, "unknown funnel family '" + family + "'");
}

AlphaMap build_alpha(const json& j, const std::string& where) {
  check_keys(j, where, {"type", "beta"});
  std::string type = text_or(j, "type", "", where);
  if (type == "reciprocal") {
    check_keys(j, where, {"type"});
    return AlphaMap::reciprocal();
  }
  if (type == "power_reciprocal") return AlphaMap::power_reciprocal(num(j, "beta", where));
  bad(where, "unknown gain map type '" + type + "'");
}

SurjectionMap build_surjection(const json& j, const std::string& where) {
  check_keys(j, where, {"type"});
  std::string type = text_or(j, "type", "", where);
  if (type == "neg_identity") return SurjectionMap::neg_identity();
  if (type == "pos_identity") return SurjectionMap::pos_identity();
  if (type == "s_sin_s") return SurjectionMap::s_sin_s();
  bad(where, "unknown direction map type '" + type + "'");
}

// what the system section produced: a state-space plant or a constrained
// normal form, plus the scalar-loop coefficients feasibility echoes need
struct SystemSpec {
  std::string type;
  int m = 1;
  std::optional<Plant> plant;
  std::optional<DaeNormalForm> nf;
  std::optional<double> drift_a, gain_cb;
};

LtiSystem heat_modal_system(int n_modes) {
  MatrixXd A = MatrixXd::Zero(n_modes, n_modes);
  for (int k = 0; k < n_modes; ++k) A(k, k) = -static_cast<double>(k) * k * M_PI * M_PI;
  MatrixXd B = MatrixXd::Zero(n_modes, 1);
  B(0, 0) = 1.0;  // spatially constant input only drives the constant mode
  MatrixXd C = MatrixXd::Zero(1, n_modes);
  C(0, 0) = 0.5;  // projections of the cos^2(pi x) output weight
  if (n_modes > 2) C(0, 2) = 0.25;
  return LtiSystem{A, B, C};
}

SystemSpec build_system(const json& j, const std::string& where) {
  SystemSpec spec;
  spec.type = text_or(j, "type", "", where);
  if (spec.type == "scalar_linear") {
    check_keys(j, where, {"type", "a", "b", "c", "y0", "disturbance"});
    double a = num(j, "a", where);
    double b = num(j, "b", where);
    double c = num_or(j, "c", 0.0, where);
    Signal d = j.contains("disturbance") ? build_signal(j["disturbance"], where + ".disturbance")
                                         : Signal::zero(1);
    spec.plant = Plant::scalar_linear(a, b, c, d, num(j, "y0", where));
    spec.m = 1;
    spec.drift_a = a;
    spec.gain_cb = b;
    return spec;
  }
  if (spec.type == "lti") {
    check_keys(j, where, {"type", "A", "B", "C", "x0"});
    LtiSystem sys{matrix_key(j, "A", where), matrix_key(j, "B", where),
                  matrix_key(j, "C", where)};
    sys.validate();
    spec.plant = Plant::from_lti(sys, vec_key(j, "x0", where));
    spec.m = sys.m();
    return spec;
  }
  if (spec.type == "integrator_chain") {
    check_keys(j, where, {"type", "r", "m", "gain", "x0"});
    int r = integer(j, "r", where);
    int m = integer_or(j, "m", 1, where);
    spec.plant = Plant::integrator_chain(r, m, num_or(j, "gain", 1.0, where),
                                         vec_key(j, "x0", where));
    spec.m = m;
    return spec;
  }
  if (spec.type == "robot") {
    check_keys(j, where, {"type", "m1", "m2", "l1", "l2", "g", "x0"});
    VectorXd x0 = j.contains("x0") ? vec_key(j, "x0", where) : VectorXd(VectorXd::Zero(4));
    if (x0.size() != 4) bad(where, "robot state must have 4 entries");
    spec.plant = Plant::robot_arm(num_or(j, "m1", 1.0, where), num_or(j, "m2", 1.0, where),
                                  num_or(j, "l1", 1.0, where), num_or(j, "l2", 1.0, where),
                                  num_or(j, "g", 9.81, where), Eigen::Vector4d(x0));
    spec.m = 2;
    return spec;
  }
  if (spec.type == "heat_modal") {
    check_keys(j, where, {"type", "n_modes", "x0"});
    int n = integer(j, "n_modes", where);
    if (n < 1) bad(where, "n_modes must be at least 1");
    LtiSystem sys = heat_modal_system(n);
    VectorXd x0;
    if (j.contains("x0")) {
      x0 = vec_key(j, "x0", where);
      if (x0.size() != n) bad(where, "x0 must list one coefficient per mode");
    } else {
      x0 = VectorXd::Zero(n);
      x0(0) = 0.5;
      if (n > 2) x0(2) = 0.5;
    }
    spec.plant = Plant::from_lti(sys, x0);
    spec.m = 1;
    return spec;
  }
  if (spec.type == "dae_normal_form") {
    check_keys(j, where,
               {"type", "r", "ell", "m", "R1", "R2", "P1", "P2", "S1", "S2", "Q", "A31",
                "Gamma_hat", "Gamma_tilde", "chain0", "x30", "yII0"});
    DaeNormalForm nf;
    nf.r = integer(j, "r", where);
    nf.ell = integer(j, "ell", where);
    nf.m = integer(j, "m", where);
    const json& r1 = need(j, "R1", where);
    const json& r2 = need(j, "R2", where);
    if (!r1.is_array() || !r2.is_array()) bad(where, "R1 and R2 must be arrays of matrices");
    for (const auto& blk : r1) nf.R1.push_back(matrix(blk, where + ".R1"));
    for (const auto& blk : r2) nf.R2.push_back(matrix(blk, where + ".R2"));
    nf.P1 = matrix_key(j, "P1", where);
    nf.P2 = matrix_key(j, "P2", where);
    nf.S1 = matrix_key(j, "S1", where);
    nf.S2 = matrix_key(j, "S2", where);
    nf.Q = matrix_key(j, "Q", where);
    nf.A31 = matrix_key(j, "A31", where);
    nf.Gamma_hat = matrix_key(j, "Gamma_hat", where);
    nf.Gamma_tilde = matrix_key(j, "Gamma_tilde", where);
    nf.chain0 = vec_key(j, "chain0", where);
    nf.x30 = vec_key(j, "x30", where);
    if (j.contains("yII0")) nf.yII0 = vec_key(j, "yII0", where);
    nf.validate();
    spec.nf = std::move(nf);
    spec.m = spec.nf->m;
    return spec;
  }
  bad(where, "unknown system type '" + spec.type + "'");
}

// sup-norm envelope of a reference described in the document; only the
// families with an obvious closed form participate in feasibility echoes
std::optional<std::pair<double, double>> signal_envelope(const json& j) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) return std::nullopt;
  std::string type = j["type"].get<std::string>();
  if (type == "zero") return std::make_pair(0.0, 0.0);
  if (type == "constant") {
    VectorXd v = vec(j["value"], "reference");
    return std::make_pair(v.cwiseAbs().maxCoeff(), 0.0);
  }
  if (type == "harmonic") {
    VectorXd amp = vec(j["amp"], "reference");
    VectorXd omega = vec(j["omega"], "reference");
    return std::make_pair(amp.cwiseAbs().maxCoeff(),
                          (amp.cwiseProduct(omega)).cwiseAbs().maxCoeff());
  }
  return std::nullopt;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

Signal signal_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& err) {
    bad("signal", std::string("not valid JSON: ") + err.what());
  }
  return build_signal(j, "signal");
}

FunnelFunction funnel_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& err) {
    bad("funnel", std::string("not valid JSON: ") + err.what());
  }
  return build_funnel(j, "funnel");
}

RunConfig build_run(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& err) {
    bad("config", std::string("not valid JSON: ") + err.what());
  }
  check_keys(root, "config",
             {"name", "system", "controller", "reference", "funnel", "funnel_II", "sim",
              "output"});

  RunConfig cfg;
  cfg.name = text_or(root, "name", "", "config");

  SystemSpec sys = build_system(need(root, "system", "config"), "system");

  const json& sim = need(root, "sim", "config");
  check_keys(sim, "sim", {"t_end", "rtol", "atol", "max_step", "seed"});
  double t_end = num(sim, "t_end", "sim");
  if (t_end <= 0.0) bad("sim", "t_end must be positive");
  cfg.options.rtol = num_or(sim, "rtol", 1e-9, "sim");
  cfg.options.atol = num_or(sim, "atol", 1e-9, "sim");
  cfg.options.max_step = num_or(sim, "max_step", 0.0, "sim");
  if (cfg.options.rtol <= 0.0 || cfg.options.atol <= 0.0)
    bad("sim", "tolerances must be positive");
  if (cfg.options.max_step < 0.0) bad("sim", "max_step must not be negative");
  cfg.seed = integer_or(sim, "seed", 0, "sim");

  if (root.contains("output")) {
    const json& output = root["output"];
    check_keys(output, "output", {"csv_path", "report_path"});
    cfg.csv_path = text_or(output, "csv_path", "", "output");
    cfg.report_path = text_or(output, "report_path", "", "output");
  }

  Signal reference =
      root.contains("reference") ? build_signal(root["reference"], "reference")
                                 : Signal::zero(sys.m);
  if (reference.dim != sys.m)
    bad("reference", "dimension " + std::to_string(reference.dim) +
                         " does not match the system output dimension " + std::to_string(sys.m));

  const json& ctrl = need(root, "controller", "config");
  std::string type = text_or(ctrl, "type", "", "controller");

  const bool takes_funnel = type == "static_fc" || type == "nonbackstep" || type == "filter" ||
                            type == "precomp" || type == "pd" || type == "saturated" ||
                            type == "dae_fc";
  if (root.contains("funnel") && !takes_funnel)
    bad("funnel", "controller '" + type + "' does not take a funnel section");
  if (root.contains("funnel_II") && type != "dae_fc")
    bad("funnel_II", "only the constrained-output law takes a second funnel");
  std::optional<FunnelFunction> funnel;
  if (root.contains("funnel")) funnel = build_funnel(root["funnel"], "funnel");
  if (takes_funnel && !funnel) bad("config", "controller '" + type + "' needs a funnel section");

  int class_check_r = 1;  // chain order the primary funnel is vetted against

  if (sys.nf) {
    if (type != "dae_fc")
      bad("controller", "a constrained system runs only with the two-component law");
    check_keys(ctrl, "controller", {"type", "k_hat", "r_hat", "alpha", "N"});
    DaeFc law;
    law.params.alpha = build_alpha(need(ctrl, "alpha", "controller"), "controller.alpha");
    law.params.N = build_surjection(need(ctrl, "N", "controller"), "controller.N");
    law.params.phi = *funnel;
    law.params.r = sys.nf->r;
    law.params.r_hat = integer_or(ctrl, "r_hat", sys.nf->r, "controller");
    law.phi_II = root.contains("funnel_II") ? build_funnel(root["funnel_II"], "funnel_II")
                                            : *funnel;
    law.k_hat = num(ctrl, "k_hat", "controller");
    law.ell = sys.nf->ell;
    law.m = sys.nf->m;
    class_check_r = sys.nf->r;

    cfg.problem = assemble_dae_closed_loop(*sys.nf, law, reference, 0.0, t_end);

    if (sys.nf->ell < sys.nf->m) {
      Eigen::JacobiSVD<MatrixXd> svd(sys.nf->P2);
      double p2 = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
      cfg.notes.push_back({"constrained-channel gain " + fmt(law.k_hat) +
                               " exceeds the output coupling norm " + fmt(p2),
                           law.k_hat > p2});
      if (sys.nf->yII0) {
        double res = dae_consistency_residual(*sys.nf, law, reference, 0.0, sys.nf->chain0,
                                              sys.nf->x30, *sys.nf->yII0);
        cfg.notes.push_back(
            {"declared algebraic start is consistent (residual " + fmt(res) + ")", res <= 1e-8});
      }
    }
  } else {
    const Plant& plant = *sys.plant;
    LoopController lc;
    if (type == "constant") {
      check_keys(ctrl, "controller", {"type", "value"});
      lc = constant_controller(vec_key(ctrl, "value", "controller"));
    } else if (type == "high_gain") {
      check_keys(ctrl, "controller", {"type", "k0"});
      lc = high_gain_controller(num_or(ctrl, "k0", 0.0, "controller"));
    } else if (type == "lambda_tracker") {
      check_keys(ctrl, "controller", {"type", "lambda", "k0"});
      lc = lambda_controller(num(ctrl, "lambda", "controller"),
                             num_or(ctrl, "k0", 0.0, "controller"), reference);
    } else if (type == "nussbaum") {
      check_keys(ctrl, "controller", {"type", "k0"});
      lc = nussbaum_controller(num_or(ctrl, "k0", 0.0, "controller"));
    } else if (type == "static_fc") {
      check_keys(ctrl, "controller", {"type", "r", "r_hat", "alpha", "N"});
      DesignParams params;
      params.alpha = build_alpha(need(ctrl, "alpha", "controller"), "controller.alpha");
      params.N = build_surjection(need(ctrl, "N", "controller"), "controller.N");
      params.phi = *funnel;
      params.r = integer(ctrl, "r", "controller");
      params.r_hat = integer_or(ctrl, "r_hat", params.r, "controller");
      class_check_r = params.r;
      lc = static_fc_controller(params, reference);
    } else if (type == "nonbackstep") {
      check_keys(ctrl, "controller", {"type", "r"});
      NonBackstepFc law;
      law.r = integer(ctrl, "r", "controller");
      law.m = plant.m;
      law.phis.assign(law.r, *funnel);
      class_check_r = law.r;
      lc = nonbackstep_controller(law, reference);
    } else if (type == "filter") {
      check_keys(ctrl, "controller", {"type", "r", "mu", "alpha", "N"});
      FilterFc law;
      law.params.alpha = build_alpha(need(ctrl, "alpha", "controller"), "controller.alpha");
      law.params.N = build_surjection(need(ctrl, "N", "controller"), "controller.N");
      law.params.phi = *funnel;
      law.params.r = integer(ctrl, "r", "controller");
      law.params.r_hat = 1;  // the filter law is derivative-free by design
      law.mu = num_or(ctrl, "mu", 1.0, "controller");
      law.m = plant.m;
      class_check_r = law.params.r;
      lc = filter_controller(law, VectorXd::Zero((law.params.r - 1) * law.m), reference);
    } else if (type == "precomp") {
      check_keys(ctrl, "controller", {"type", "r", "stages", "alpha", "N"});
      int r = integer(ctrl, "r", "controller");
      const json& stages = need(ctrl, "stages", "controller");
      if (!stages.is_array() || stages.empty())
        bad("controller", "precomp needs a non-empty stages array");
      PrecompCascade cascade;
      cascade.r = r;
      cascade.m = plant.m;
      for (const auto& sj : stages) {
        check_keys(sj, "controller.stages", {"q", "phi_scale", "gamma_tilde"});
        PrecompStage stage;
        stage.q = vec_key(sj, "q", "controller.stages");
        stage.p = precomp_design(stage.q, MatrixXd::Identity(r, r));
        stage.Gamma_tilde = sj.contains("gamma_tilde")
                                ? matrix(sj["gamma_tilde"], "controller.stages.gamma_tilde")
                                : MatrixXd(MatrixXd::Identity(plant.m, plant.m));
        stage.phi = funnel->scaled(num_or(sj, "phi_scale", 1.0, "controller.stages"));
        stage.r = r;
        stage.m = plant.m;
        cascade.stages.push_back(std::move(stage));
      }
      DesignParams surrogate;
      surrogate.alpha = build_alpha(need(ctrl, "alpha", "controller"), "controller.alpha");
      surrogate.N = build_surjection(need(ctrl, "N", "controller"), "controller.N");
      surrogate.phi = cascade.stages.back().phi;
      surrogate.r = r;
      surrogate.r_hat = r;
      class_check_r = r;
      lc = precomp_controller(cascade, surrogate, reference);
    } else if (type == "pd") {
      check_keys(ctrl, "controller", {"type", "modified", "phi1"});
      if (plant.m != 1) bad("controller", "the pd law is scalar");
      PdFunnel law;
      law.phi0 = *funnel;
      law.phi1 = build_funnel(need(ctrl, "phi1", "controller"), "controller.phi1");
      auto it = ctrl.find("modified");
      if (it != ctrl.end()) {
        if (!it->is_boolean()) bad("controller", "'modified' must be a boolean");
        law.modified = it->get<bool>();
      }
      auto pair = check_phi2_pair(law.phi0, law.phi1, t_end);
      cfg.notes.push_back(
          {"pd funnel pair keeps slack " + fmt(pair.delta) + " above zero", pair.ok});
      lc = pd_controller(law, reference);
    } else if (type == "ppc") {
      check_keys(ctrl, "controller", {"type", "k", "phis"});
      Ppc law;
      VectorXd gains = vec_key(ctrl, "k", "controller");
      law.k.assign(gains.data(), gains.data() + gains.size());
      const json& phis = need(ctrl, "phis", "controller");
      if (!phis.is_array() || phis.size() != law.k.size())
        bad("controller", "phis must list one funnel per stage gain");
      for (const auto& pj : phis) law.phi.push_back(build_funnel(pj, "controller.phis"));
      law.r = static_cast<int>(law.k.size());
      law.m = plant.m;
      lc = ppc_controller(law, reference);
    } else if (type == "saturated") {
      check_keys(ctrl, "controller", {"type", "u_hat"});
      double u_hat = num(ctrl, "u_hat", "controller");
      lc = saturated_controller(*funnel, u_hat, reference);
      if (sys.drift_a && sys.gain_cb) {
        auto env = signal_envelope(root.contains("reference") ? root["reference"] : json::object());
        if (!root.contains("reference")) env = std::make_pair(0.0, 0.0);
        if (env) {
          auto fr = feasibility_check(*sys.drift_a, *sys.gain_cb, u_hat, funnel->sup_psi(),
                                      funnel->sup_psi_dot(), env->first, env->second);
          cfg.notes.push_back({"saturation feasibility: authority " + fmt(fr.lhs) +
                                   " vs demand " + fmt(fr.rhs),
                               fr.feasible});
        }
      }
    } else if (type == "icfc") {
      check_keys(ctrl, "controller", {"type", "u_hat", "alpha_d", "beta_d", "psi0"});
      Icfc law;
      law.u_hat = num(ctrl, "u_hat", "controller");
      law.alpha_d = num(ctrl, "alpha_d", "controller");
      law.beta_d = num(ctrl, "beta_d", "controller");
      law.psi0 = num(ctrl, "psi0", "controller");
      cfg.notes.push_back({"adaptive boundary start " + fmt(law.psi0) + " exceeds its floor " +
                               fmt(law.beta_d / law.alpha_d),
                           law.psi0 > law.beta_d / law.alpha_d});
      lc = icfc_controller(law, reference);
    } else if (type == "dae_fc") {
      bad("controller", "the two-component law runs only on a constrained system");
    } else {
      bad("controller", "unknown controller type '" + type + "'");
    }
    cfg.problem = assemble(plant, lc, reference, 0.0, t_end);
  }

  if (funnel) {
    auto report = check_class(*funnel, class_check_r, t_end);
    std::string line = "funnel weight is an admissible performance weight";
    if (!report.in_phi) line += " (failed: " + report.detail + ")";
    cfg.notes.push_back({line, report.in_phi});
  }

  if (!cfg.name.empty()) cfg.problem.name = cfg.name;
  return cfg;
}

RunConfig build_run_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_failure, "cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (!in.good() && !in.eof()) fail(Errc::io_failure, "cannot read config file: " + path);
  return build_run(buffer.str());
}

}  // namespace fc
