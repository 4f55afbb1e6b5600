// otd: command-line driver for decomposition, certificates, assumptions,
// the moment SDP, phase-transition sweeps and the n=2 nuclear-norm oracle.
//
// Exit codes: 0 success, 1 solver failure, 2 usage error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "otd/otd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitSolver = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SolverFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options registered here can also be supplied through --config; a flag given
// on the command line wins over the config file.
class Bindings {
 public:
  explicit Bindings(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& name, T& var, const std::string& desc) {
    CLI::Option* opt = app_->add_option("--" + name, var, desc);
    entries_.push_back({name, opt, [&var, name](const json& j) {
                          try {
                            var = j.get<T>();
                          } catch (const json::exception& e) {
                            throw UsageError("config key '" + name + "': " + e.what());
                          }
                        }});
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& desc) {
    CLI::Option* opt = app_->add_flag("--" + name, var, desc);
    entries_.push_back({name, opt, [&var, name](const json& j) {
                          if (!j.is_boolean()) throw UsageError("config key '" + name + "' must be a boolean");
                          var = j.get<bool>();
                        }});
    return opt;
  }

  void apply_config(const std::string& path) const {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file '" + path + "'");
    json cfg;
    try {
      cfg = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config file '" + path + "': " + e.what());
    }
    if (!cfg.is_object()) throw UsageError("config file '" + path + "' must hold a JSON object");
    for (const auto& [key, value] : cfg.items()) {
      const Entry* hit = nullptr;
      for (const Entry& e : entries_)
        if (e.name == key) hit = &e;
      if (!hit) throw UsageError("config file '" + path + "': unknown key '" + key + "'");
      if (hit->opt->count() == 0) hit->set(value);
    }
  }

 private:
  struct Entry {
    std::string name;
    CLI::Option* opt;
    std::function<void(const json&)> set;
  };
  CLI::App* app_;
  std::vector<Entry> entries_;
};

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out = ".";
  int threads = 1;
};

void add_common(CLI::App* sub, Bindings& b, Common& c) {
  b.add("seed", c.seed, "master random seed");
  sub->add_option("--config", c.config, "JSON file with option values")->check(CLI::ExistingFile);
  b.add("out", c.out, "output directory");
  b.add("threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

void write_json(const fs::path& path, const json& j) {
  otd::write_text_file(path, j.dump(2) + "\n");
  std::cout << "wrote " << path.string() << "\n";
}

// A planted instance from --n/--r, or factors read from a file.
struct Instance {
  int n = 0, r = 0;
  std::string factors_path;
  std::string tensor_path;

  void bind(Bindings& b, bool allow_tensor) {
    b.add("n", n, "dimension of a planted random instance");
    b.add("r", r, "rank of a planted random instance");
    b.add("factors", factors_path, "fset-json file with planted factors");
    if (allow_tensor) b.add("input", tensor_path, "t3d-json tensor file");
  }

  int sources() const { return (n > 0 || r > 0) + !factors_path.empty() + !tensor_path.empty(); }

  static void require_file(const std::string& path) {
    if (!path.empty() && !fs::is_regular_file(path)) throw UsageError("no such file: '" + path + "'");
  }

  std::optional<otd::FactorSet> factors(std::uint64_t seed) const {
    if (!factors_path.empty()) return otd::read_fset_json(factors_path);
    if (n > 0 || r > 0) {
      if (n < 1 || r < 1) throw UsageError("--n and --r must both be positive");
      return otd::random_factor_set(n, r, seed);
    }
    return std::nullopt;
  }

  // Returns the tensor and, when known, the planted factors.
  std::pair<otd::Tensor3, std::optional<otd::FactorSet>> load(std::uint64_t seed) const {
    if (sources() != 1) throw UsageError("give exactly one of --input, --factors or --n/--r");
    require_file(tensor_path);
    require_file(factors_path);
    if (!tensor_path.empty()) return {otd::read_t3d_json(tensor_path), std::nullopt};
    auto f = factors(seed);
    return {otd::synthesize(*f), f};
  }

  otd::FactorSet load_factors(std::uint64_t seed) const {
    if (sources() != 1 || !tensor_path.empty()) throw UsageError("give exactly one of --factors or --n/--r");
    require_file(factors_path);
    return *factors(seed);
  }
};

struct AdmmFlags {
  double rho = otd::AdmmConfig{}.rho;
  int max_iter = otd::AdmmConfig{}.max_iter;
  double primal_tol = otd::AdmmConfig{}.primal_tol;
  double obj_tol = otd::AdmmConfig{}.obj_tol;

  void bind(Bindings& b) {
    b.add("rho", rho, "ADMM penalty (tensor is normalized to unit Frobenius norm)");
    b.add("max-iter", max_iter, "ADMM sweep limit");
    b.add("primal-tol", primal_tol, "relative residual tolerance");
    b.add("obj-tol", obj_tol, "relative objective-change tolerance");
  }

  otd::AdmmConfig config() const {
    otd::AdmmConfig c;
    c.rho = rho;
    c.max_iter = max_iter;
    c.primal_tol = primal_tol;
    c.obj_tol = obj_tol;
    return c;
  }
};

struct SdpFlags {
  double rho = otd::SdpConfig{}.rho;
  int max_iter = otd::SdpConfig{}.max_iter;
  double primal_tol = otd::SdpConfig{}.primal_tol;
  double dual_tol = otd::SdpConfig{}.dual_tol;

  void bind(Bindings& b, const std::string& prefix) {
    b.add(prefix + "rho", rho, "SDP ADMM penalty");
    b.add(prefix + "max-iter", max_iter, "SDP iteration limit");
    b.add(prefix + "primal-tol", primal_tol, "SDP primal residual tolerance");
    b.add(prefix + "dual-tol", dual_tol, "SDP dual residual tolerance");
  }

  otd::SdpConfig config() const {
    otd::SdpConfig c;
    c.rho = rho;
    c.max_iter = max_iter;
    c.primal_tol = primal_tol;
    c.dual_tol = dual_tol;
    return c;
  }
};

json factors_json(const otd::FactorSet& f) { return json::parse(otd::to_fset_json(f)); }

// ---- verbs -------------------------------------------------------------------------

struct DecomposeArgs {
  Common common;
  Instance inst;
  AdmmFlags admm;
  int rank = 0;
  std::string init = "power";
};

int run_decompose(const DecomposeArgs& a) {
  const auto [t, truth] = a.inst.load(a.common.seed);
  const int r_tilde = a.rank > 0 ? a.rank : (truth ? int(truth->r()) : 0);
  if (r_tilde < 1) throw UsageError("--rank is required when decomposing a tensor file");
  otd::AdmmConfig cfg = a.admm.config();
  if (a.init == "power")
    cfg.init = otd::InitMethod::power;
  else if (a.init == "random")
    cfg.init = otd::InitMethod::random;
  else
    throw UsageError("--init must be 'power' or 'random'");
  cfg.seed = otd::hash_combine(a.common.seed, otd::fnv1a("decompose"));

  const fs::path out = prepare_out(a.common.out);
  otd::DecompositionResult res;
  try {
    res = otd::decompose(t, r_tilde, cfg);
  } catch (const otd::DivergenceError& e) {
    throw SolverFailure(e.what());
  } catch (const otd::EmptyDecompositionError& e) {
    throw SolverFailure(e.what());
  }
  json j;
  j["rank"] = r_tilde;
  j["init"] = a.init;
  j["objective"] = res.objective;
  j["residual"] = res.residual;
  j["iterations"] = res.iterations;
  j["converged"] = res.converged;
  j["factors"] = factors_json(res.factors);
  if (truth) {
    j["truth"] = factors_json(*truth);
    try {
      const otd::Alignment al = otd::align_and_error(res.factors, *truth);
      j["alignment"] = {{"max_err", al.max_err}, {"coeff_err", al.coeff_err}, {"perm", al.perm}};
    } catch (const otd::AlignmentError& e) {
      j["alignment"] = {{"error", e.what()}};
    }
  }
  write_json(out / "decomposition.json", j);
  return kExitOk;
}

struct CertifyArgs {
  Common common;
  Instance inst;
  std::string method = "direct";
  double rho = 0.5;
  int max_iter = 10000;
  double tol = 1e-12;
  int samples = 10000;
  int restarts = 50;
  double exclusion_radius = 1e-3;
  double r_c = 0.125;
  int near_trials = 10;
  int theta_grid = 11;
  int atom = 0;
  long inequality_grid = 100000;
  bool spectral = false;
};

int run_certify(const CertifyArgs& a) {
  const otd::FactorSet f = a.inst.load_factors(a.common.seed);
  const fs::path out = prepare_out(a.common.out);
  otd::Certificate cert;
  json j;
  j["factors"] = factors_json(f);
  if (a.method == "direct" || a.method == "both") {
    try {
      cert = otd::solve_certificate_direct(f);
    } catch (const otd::InconsistentSystemError& e) {
      throw SolverFailure(e.what());
    }
  }
  if (a.method == "iterative" || a.method == "both") {
    otd::IterativeOptions io;
    io.rho = a.rho;
    io.max_iter = a.max_iter;
    io.tol = a.tol;
    otd::Certificate it = otd::solve_certificate_iterative(f, io);
    if (a.method == "both") {
      const double diff = std::sqrt((cert.A() - it.A()).squaredNorm() + (cert.B() - it.B()).squaredNorm() +
                                    (cert.C() - it.C()).squaredNorm());
      j["iterative"] = {{"status", otd::to_string(it.status)},
                        {"iterations", it.iterations},
                        {"solve_residual", it.solve_residual},
                        {"distance_to_direct", diff}};
    } else {
      cert = std::move(it);
    }
    if (it.status == otd::CertStatus::diverged) throw SolverFailure("iterative certificate solve diverged");
  }
  if (a.method != "direct" && a.method != "iterative" && a.method != "both")
    throw UsageError("--method must be direct, iterative or both");

  otd::VerifyOptions vo;
  vo.samples = a.samples;
  vo.ascent_restarts = a.restarts;
  vo.seed = a.common.seed;
  vo.exclusion_radius = a.exclusion_radius;
  vo.r_c = a.r_c;
  vo.threads = a.common.threads;
  const otd::CertificateReport rep = otd::verify_certificate(cert, f, vo);
  j["certificate"] = otd::to_json(cert);
  j["report"] = otd::to_json(rep);
  if (a.near_trials > 0) {
    if (a.atom < 0 || a.atom >= f.r()) throw UsageError("--atom out of range");
    j["near_region"] = otd::to_json(otd::near_region_check(cert, f, a.atom, a.near_trials, a.theta_grid,
                                                           otd::hash_combine(a.common.seed, 1), rep.tau_hat, a.r_c));
  }
  if (a.inequality_grid > 0) j["scalar_inequalities"] = otd::to_json(otd::scalar_inequality_checks(a.inequality_grid));
  if (a.spectral) j["spectral_bounds"] = otd::to_json(otd::spectral_bound_checks(f, a.r_c, rep.tau_hat, a.common.seed));
  write_json(out / "certificate.json", j);
  return kExitOk;
}

struct AssumptionsArgs {
  Common common;
  Instance inst;
  double tau = -1, kappa = -1, c = -1;
};

int run_assumptions(const AssumptionsArgs& a) {
  const otd::FactorSet f = a.inst.load_factors(a.common.seed);
  std::optional<otd::AssumptionThresholds> thr;
  const int given = (a.tau >= 0) + (a.kappa >= 0) + (a.c >= 0);
  if (given == 3)
    thr = otd::AssumptionThresholds{a.tau, a.kappa, a.c};
  else if (given != 0)
    throw UsageError("give all of --tau, --kappa, --c or none");
  const fs::path out = prepare_out(a.common.out);
  json j = otd::to_json(otd::assumption_report(f, thr));
  j["n"] = f.n();
  j["r"] = f.r();
  write_json(out / "assumptions.json", j);
  return kExitOk;
}

struct SosArgs {
  Common common;
  Instance inst;
  SdpFlags sdp;
  double moment_tol = 1e-3;
};

int run_sos(const SosArgs& a) {
  const auto [t, truth] = a.inst.load(a.common.seed);
  if (t.dims().n1 != t.dims().n2 || t.dims().n2 != t.dims().n3) throw UsageError("SOS needs a cubical tensor");
  const int n = int(t.dims().n1);
  const fs::path out = prepare_out(a.common.out);
  const otd::MomentSDP sdp = otd::build_moment_sdp(t, n);
  const otd::SdpResult res = otd::sdp_solve(sdp, a.sdp.config());
  json j;
  j["n"] = n;
  j["matrix_dim"] = sdp.matrix_dim;
  j["constraints"] = {{"tensor", sdp.tensor_constraints}, {"sphere", sdp.sphere_constraints}};
  j["status"] = otd::to_string(res.status);
  j["iterations"] = res.iterations;
  j["objective"] = res.objective;
  j["primal_residual"] = res.primal_residual;
  j["dual_residual"] = res.dual_residual;
  j["moments"] = otd::to_json(res.m);
  if (truth) {
    const double dist = otd::moment_distance(res.m, otd::symmetric_moment_vector(*truth));
    j["planted_mass"] = truth->lambda().sum();
    j["moment_distance"] = dist;
    j["success"] = dist < a.moment_tol;
  }
  write_json(out / "sos.json", j);
  if (res.status == otd::SdpStatus::infeasible_suspected) throw SolverFailure("SDP residuals stagnated (infeasible?)");
  return kExitOk;
}

struct PhaseArgs {
  Common common;
  std::vector<int> n_list{2, 4, 6, 8};
  std::vector<int> r_list{1, 2, 4, 6, 8};
  std::vector<std::string> methods{"ADMM-G", "ADMM-R", "SOS-2"};
  int trials = 5;
  double factor_tol = 1e-3;
  double moment_tol = 1e-3;
  int slack = 0;
  bool allow_large_sos = false;
  bool timing = false;
  AdmmFlags admm;
  SdpFlags sdp;
};

int run_phase(const PhaseArgs& a) {
  otd::PhaseTransitionConfig cfg;
  cfg.n_list = a.n_list;
  cfg.r_list = a.r_list;
  cfg.methods.clear();
  for (const std::string& m : a.methods) cfg.methods.push_back(otd::parse_method(m));
  cfg.trials = a.trials;
  cfg.master_seed = a.common.seed;
  cfg.factor_tol = a.factor_tol;
  cfg.moment_tol = a.moment_tol;
  cfg.r_tilde_slack = a.slack;
  cfg.allow_large_sos = a.allow_large_sos;
  cfg.record_timing = a.timing;
  cfg.threads = a.common.threads;
  cfg.admm = a.admm.config();
  cfg.sdp = a.sdp.config();
  const otd::GridResult g = otd::run_phase_transition(cfg);
  for (const fs::path& p : otd::emit_outputs(g, prepare_out(a.common.out))) std::cout << "wrote " << p.string() << "\n";
  for (const otd::CellResult& c : g.cells)
    std::cout << otd::to_string(c.method) << " n=" << c.n << " r=" << c.r << " " << c.successes << "/" << c.trials << "\n";
  return kExitOk;
}

struct OracleArgs {
  Common common;
  Instance inst;
  int steps = 720;
  bool with_admm = false;
  int admm_slack = 2;
  AdmmFlags admm;
};

int run_oracle(const OracleArgs& a) {
  const auto [t, truth] = a.inst.load(a.common.seed);
  const fs::path out = prepare_out(a.common.out);
  otd::OracleResult res;
  try {
    res = otd::nuclear_norm_oracle(t, a.steps);
  } catch (const otd::OracleError& e) {
    throw SolverFailure(e.what());
  }
  json j;
  j["angular_steps"] = a.steps;
  j["value"] = res.value;
  j["pivots"] = res.pivots;
  j["atoms"] = json::array();
  const double step = 2.0 * std::numbers::pi / a.steps;
  for (const otd::GridAtom& at : res.atoms)
    j["atoms"].push_back({{"weight", at.weight},
                          {"index", {at.a, at.b, at.c}},
                          {"theta", {at.a * step, at.b * step, at.c * step}}});
  if (truth) j["planted_mass"] = truth->lambda().sum();
  if (a.with_admm) {
    const int rank = (truth ? int(truth->r()) : 2) + a.admm_slack;
    otd::AdmmConfig cfg = a.admm.config();
    cfg.seed = otd::hash_combine(a.common.seed, otd::fnv1a("oracle-admm"));
    const otd::DecompositionResult d = otd::decompose(t, rank, cfg);
    j["admm"] = {{"rank", rank}, {"objective", d.objective}, {"residual", d.residual},
                 {"gap", d.objective - res.value}};
  }
  write_json(out / "oracle.json", j);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Overcomplete tensor decomposition via total mass minimization"};
  app.require_subcommand(1);

  DecomposeArgs dec;
  CLI::App* s_dec = app.add_subcommand("decompose", "ADMM nuclear-norm decomposition");
  Bindings b_dec(s_dec);
  add_common(s_dec, b_dec, dec.common);
  dec.inst.bind(b_dec, true);
  dec.admm.bind(b_dec);
  b_dec.add("rank", dec.rank, "number of atoms r~ (defaults to the planted rank)");
  b_dec.add("init", dec.init, "power | random");

  CertifyArgs cer;
  CLI::App* s_cer = app.add_subcommand("certify", "build and verify the minimal-energy dual certificate");
  Bindings b_cer(s_cer);
  add_common(s_cer, b_cer, cer.common);
  cer.inst.bind(b_cer, false);
  b_cer.add("method", cer.method, "direct | iterative | both");
  b_cer.add("rho", cer.rho, "iterative step size in (0, 1]");
  b_cer.add("max-iter", cer.max_iter, "iterative sweep limit");
  b_cer.add("tol", cer.tol, "iterative block-change tolerance");
  b_cer.add("samples", cer.samples, "random triples for the boundedness scan");
  b_cer.add("restarts", cer.restarts, "alternating-ascent restarts");
  b_cer.add("exclusion-radius", cer.exclusion_radius, "per-mode radius around the support orbit");
  b_cer.add("r-c", cer.r_c, "region exponent r_c in (0, 1/6)");
  b_cer.add("near-trials", cer.near_trials, "near-region trials (0 skips)");
  b_cer.add("theta-grid", cer.theta_grid, "near-region grid points per angle");
  b_cer.add("atom", cer.atom, "support atom for the near-region check");
  b_cer.add("inequality-grid", cer.inequality_grid, "scalar inequality grid size (0 skips)");
  b_cer.flag("spectral", cer.spectral, "also run the spectral and 2->p norm bounds");

  AssumptionsArgs asm_;
  CLI::App* s_asm = app.add_subcommand("assumptions", "measure incoherence, spectral and Gram conditions");
  Bindings b_asm(s_asm);
  add_common(s_asm, b_asm, asm_.common);
  asm_.inst.bind(b_asm, false);
  b_asm.add("tau", asm_.tau, "incoherence constant");
  b_asm.add("kappa", asm_.kappa, "Gram isometry constant");
  b_asm.add("c", asm_.c, "spectral constant");

  SosArgs sos;
  CLI::App* s_sos = app.add_subcommand("sos", "solve the degree-2 moment relaxation");
  Bindings b_sos(s_sos);
  add_common(s_sos, b_sos, sos.common);
  sos.inst.bind(b_sos, true);
  sos.sdp.bind(b_sos, "");
  b_sos.add("moment-tol", sos.moment_tol, "success threshold on moment distance");

  PhaseArgs ph;
  CLI::App* s_ph = app.add_subcommand("phase-transition", "success-rate sweep over an (n, r) grid");
  Bindings b_ph(s_ph);
  add_common(s_ph, b_ph, ph.common);
  b_ph.add("n-list", ph.n_list, "dimensions")->delimiter(',');
  b_ph.add("r-list", ph.r_list, "ranks")->delimiter(',');
  b_ph.add("methods", ph.methods, "ADMM-G, ADMM-R, SOS-2")->delimiter(',');
  b_ph.add("trials", ph.trials, "instances per cell");
  b_ph.add("factor-tol", ph.factor_tol, "ADMM success threshold on factor error");
  b_ph.add("moment-tol", ph.moment_tol, "SOS success threshold on moment distance");
  b_ph.add("slack", ph.slack, "extra atoms given to ADMM");
  b_ph.flag("allow-large-sos", ph.allow_large_sos, "permit SOS-2 for n > 8");
  b_ph.flag("timing", ph.timing, "record wall times (outputs are then not reproducible)");
  ph.admm.bind(b_ph);
  ph.sdp.bind(b_ph, "sdp-");

  OracleArgs orc;
  CLI::App* s_orc = app.add_subcommand("oracle", "grid-LP nuclear norm of a 2x2x2 tensor");
  Bindings b_orc(s_orc);
  add_common(s_orc, b_orc, orc.common);
  orc.inst.bind(b_orc, true);
  b_orc.add("steps", orc.steps, "angular grid steps per circle (multiple of 4, >= 180)");
  b_orc.flag("with-admm", orc.with_admm, "also run ADMM and report the gap");
  b_orc.add("admm-slack", orc.admm_slack, "extra atoms for the ADMM comparison");
  orc.admm.bind(b_orc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s_dec->parsed()) {
      b_dec.apply_config(dec.common.config);
      return run_decompose(dec);
    }
    if (s_cer->parsed()) {
      b_cer.apply_config(cer.common.config);
      return run_certify(cer);
    }
    if (s_asm->parsed()) {
      b_asm.apply_config(asm_.common.config);
      return run_assumptions(asm_);
    }
    if (s_sos->parsed()) {
      b_sos.apply_config(sos.common.config);
      return run_sos(sos);
    }
    if (s_ph->parsed()) {
      b_ph.apply_config(ph.common.config);
      return run_phase(ph);
    }
    if (s_orc->parsed()) {
      b_orc.apply_config(orc.common.config);
      return run_oracle(orc);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SolverFailure& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitUsage;
}
