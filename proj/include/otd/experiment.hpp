#pragma once

// Phase-transition experiment: success rate of each method over an (n, r) grid
// of planted random instances, plus CSV / JSON / SVG output.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "otd/admm.hpp"
#include "otd/factor_model.hpp"
#include "otd/lasserre.hpp"
#include "otd/random.hpp"
#include "otd/tensor.hpp"

namespace otd {

enum class Method { admm_g, admm_r, sos2 };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::admm_g: return "ADMM-G";
    case Method::admm_r: return "ADMM-R";
    case Method::sos2: return "SOS-2";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "ADMM-G") return Method::admm_g;
  if (s == "ADMM-R") return Method::admm_r;
  if (s == "SOS-2") return Method::sos2;
  throw std::invalid_argument("unknown method '" + s + "' (expected ADMM-G, ADMM-R or SOS-2)");
}

inline constexpr int kSosMaxN = 8;

struct PhaseTransitionConfig {
  std::vector<int> n_list;
  std::vector<int> r_list;
  int trials = 5;
  std::vector<Method> methods{Method::admm_g, Method::admm_r, Method::sos2};
  std::uint64_t master_seed = 0;
  double factor_tol = 1e-3;
  double moment_tol = 1e-3;
  int r_tilde_slack = 0;
  bool allow_large_sos = false;
  bool record_timing = false;  ///< wall times are zero unless set, keeping outputs reproducible
  int threads = 0;             ///< 0 = hardware concurrency
  AdmmConfig admm;
  SdpConfig sdp;

  void validate() const {
    if (trials < 1) throw std::invalid_argument("trials must be >= 1");
    if (!(factor_tol > 0) || !(moment_tol > 0)) throw std::invalid_argument("tolerances must be positive");
    if (r_tilde_slack < 0) throw std::invalid_argument("r_tilde_slack must be >= 0");
    for (int n : n_list)
      if (n < 1) throw std::invalid_argument("n values must be >= 1");
    for (int r : r_list)
      if (r < 1) throw std::invalid_argument("r values must be >= 1");
    if (!allow_large_sos && std::find(methods.begin(), methods.end(), Method::sos2) != methods.end())
      for (int n : n_list)
        if (n > kSosMaxN)
          throw std::invalid_argument("SOS-2 with n > " + std::to_string(kSosMaxN) +
                                      " is too expensive; pass allow_large_sos to force it");
    admm.validate();
  }
};

struct TrialRecord {
  int trial = 0;
  std::uint64_t instance_seed = 0;
  std::uint64_t method_seed = 0;
  bool success = false;
  double residual = 0.0;  ///< ADMM: relative fit residual; SOS: primal residual
  double error = 0.0;     ///< ADMM: aligned factor error; SOS: moment distance
  double seconds = 0.0;
  std::string status;
};

struct CellResult {
  Method method = Method::admm_g;
  int n = 0, r = 0;
  int trials = 0;
  int successes = 0;
  double rate = 0.0;
  double mean_residual = 0.0;
  double mean_seconds = 0.0;
  std::vector<TrialRecord> records;
};

struct GridResult {
  std::vector<CellResult> cells;  ///< ordered by (method, n, r) as configured
};

/// The planted instance depends on (n, r, trial) only, so all methods see the
/// same tensors; the method seed drives initialization.
inline std::uint64_t instance_seed(std::uint64_t master, int n, int r, int trial) {
  std::uint64_t h = fnv1a("instance");
  h = hash_combine(h, std::uint64_t(n));
  h = hash_combine(h, std::uint64_t(r));
  h = hash_combine(h, std::uint64_t(trial));
  return splitmix64(master ^ h);
}

inline std::uint64_t trial_seed(std::uint64_t master, Method m, int n, int r, int trial) {
  std::uint64_t h = fnv1a(to_string(m));
  h = hash_combine(h, std::uint64_t(n));
  h = hash_combine(h, std::uint64_t(r));
  h = hash_combine(h, std::uint64_t(trial));
  return splitmix64(master ^ h);
}

inline TrialRecord run_trial(const PhaseTransitionConfig& cfg, Method method, int n, int r, int trial) {
  TrialRecord rec;
  rec.trial = trial;
  rec.instance_seed = instance_seed(cfg.master_seed, n, r, trial);
  rec.method_seed = trial_seed(cfg.master_seed, method, n, r, trial);
  const auto t0 = std::chrono::steady_clock::now();
  const FactorSet truth = random_factor_set(n, r, rec.instance_seed);
  const Tensor3 t = synthesize(truth);
  try {
    if (method == Method::sos2) {
      const SdpResult res = sdp_solve(build_moment_sdp(t, n), cfg.sdp);
      rec.residual = res.primal_residual;
      rec.error = moment_distance(res.m, symmetric_moment_vector(truth));
      rec.status = to_string(res.status);
      rec.success = rec.error < cfg.moment_tol;
    } else {
      AdmmConfig ac = cfg.admm;
      ac.seed = rec.method_seed;
      ac.init = method == Method::admm_g ? InitMethod::power : InitMethod::random;
      const DecompositionResult res = decompose(t, r + cfg.r_tilde_slack, ac);
      rec.residual = res.residual;
      rec.status = res.converged ? "converged" : "max_iter";
      try {
        rec.error = align_and_error(res.factors, truth).max_err;
      } catch (const AlignmentError&) {
        rec.error = std::numeric_limits<double>::infinity();
        rec.status = "too_few_atoms";
      }
      rec.success = rec.error < cfg.factor_tol;
    }
  } catch (const std::exception& e) {
    rec.success = false;
    rec.error = std::numeric_limits<double>::infinity();
    rec.status = std::string("failed: ") + e.what();
  }
  if (cfg.record_timing) rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

/// Trials run on a bounded pool pulling from a shared job index; each result
/// lands in its preassigned slot, so the merge order never depends on timing.
inline GridResult run_phase_transition(const PhaseTransitionConfig& cfg) {
  cfg.validate();
  GridResult out;
  for (Method m : cfg.methods)
    for (int n : cfg.n_list)
      for (int r : cfg.r_list) {
        CellResult cell;
        cell.method = m;
        cell.n = n;
        cell.r = r;
        cell.trials = cfg.trials;
        cell.records.resize(std::size_t(cfg.trials));
        out.cells.push_back(std::move(cell));
      }
  const std::size_t jobs = out.cells.size() * std::size_t(cfg.trials);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      CellResult& cell = out.cells[j / std::size_t(cfg.trials)];
      const int trial = int(j % std::size_t(cfg.trials));
      cell.records[std::size_t(trial)] = run_trial(cfg, cell.method, cell.n, cell.r, trial);
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t threads = std::min<std::size_t>(cfg.threads > 0 ? std::size_t(cfg.threads) : hw, std::max<std::size_t>(jobs, 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  for (CellResult& cell : out.cells) {
    double res = 0.0, secs = 0.0;
    for (const TrialRecord& rec : cell.records) {
      cell.successes += rec.success ? 1 : 0;
      res += rec.residual;
      secs += rec.seconds;
    }
    cell.rate = double(cell.successes) / double(cell.trials);
    cell.mean_residual = res / cell.trials;
    cell.mean_seconds = secs / cell.trials;
  }
  return out;
}

// ---- output ------------------------------------------------------------------------

inline constexpr const char* kGridCsvHeader = "method,n,r,trials,successes,rate,mean_residual,mean_seconds";

inline std::string to_csv(const GridResult& g) {
  std::ostringstream os;
  os << kGridCsvHeader << '\n';
  for (const CellResult& c : g.cells)
    os << to_string(c.method) << ',' << c.n << ',' << c.r << ',' << c.trials << ',' << c.successes << ','
       << format_double(c.rate) << ',' << format_double(c.mean_residual) << ',' << format_double(c.mean_seconds)
       << '\n';
  return os.str();
}

/// Summary rows only; per-trial records are not part of the CSV.
inline GridResult parse_grid_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kGridCsvHeader) throw std::invalid_argument("grid CSV: bad header");
  GridResult g;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw std::invalid_argument("grid CSV: line " + std::to_string(lineno) + " needs 8 fields");
    CellResult c;
    c.method = parse_method(f[0]);
    c.n = std::stoi(f[1]);
    c.r = std::stoi(f[2]);
    c.trials = std::stoi(f[3]);
    c.successes = std::stoi(f[4]);
    c.rate = std::stod(f[5]);
    c.mean_residual = std::stod(f[6]);
    c.mean_seconds = std::stod(f[7]);
    g.cells.push_back(std::move(c));
  }
  return g;
}

inline nlohmann::json to_json(const TrialRecord& r) {
  nlohmann::json j;
  j["trial"] = r.trial;
  j["instance_seed"] = r.instance_seed;
  j["method_seed"] = r.method_seed;
  j["success"] = r.success;
  j["residual"] = r.residual;
  j["error"] = std::isfinite(r.error) ? nlohmann::json(r.error) : nlohmann::json(nullptr);
  j["seconds"] = r.seconds;
  j["status"] = r.status;
  return j;
}

inline nlohmann::json to_json(const GridResult& g) {
  nlohmann::json cells = nlohmann::json::array();
  for (const CellResult& c : g.cells) {
    nlohmann::json j;
    j["method"] = to_string(c.method);
    j["n"] = c.n;
    j["r"] = c.r;
    j["trials"] = c.trials;
    j["successes"] = c.successes;
    j["rate"] = c.rate;
    j["mean_residual"] = c.mean_residual;
    j["mean_seconds"] = c.mean_seconds;
    j["records"] = nlohmann::json::array();
    for (const TrialRecord& r : c.records) j["records"].push_back(to_json(r));
    cells.push_back(std::move(j));
  }
  return nlohmann::json{{"cells", cells}};
}

/// Heatmap of success rate: n along x, r along y (smallest r at the bottom),
/// white at rate 0 to dark blue at rate 1.
inline std::string to_svg_heatmap(const GridResult& g, Method method) {
  std::vector<int> ns, rs;
  std::map<std::pair<int, int>, double> rate;
  for (const CellResult& c : g.cells) {
    if (c.method != method) continue;
    if (std::find(ns.begin(), ns.end(), c.n) == ns.end()) ns.push_back(c.n);
    if (std::find(rs.begin(), rs.end(), c.r) == rs.end()) rs.push_back(c.r);
    rate[{c.n, c.r}] = c.rate;
  }
  std::sort(ns.begin(), ns.end());
  std::sort(rs.begin(), rs.end());
  constexpr int cell = 32, left = 60, top = 40, bottom = 50;
  const int width = left + cell * int(ns.size()) + 20;
  const int height = top + cell * int(rs.size()) + bottom;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << to_string(method) << " success rate</text>\n";
  for (std::size_t xi = 0; xi < ns.size(); ++xi)
    for (std::size_t yi = 0; yi < rs.size(); ++yi) {
      const int x = left + cell * int(xi);
      const int y = top + cell * int(rs.size() - 1 - yi);
      auto it = rate.find({ns[xi], rs[yi]});
      if (it == rate.end()) continue;
      const double v = std::clamp(it->second, 0.0, 1.0);
      const int red = int(std::lround(255.0 - v * (255.0 - 8.0)));
      const int green = int(std::lround(255.0 - v * (255.0 - 48.0)));
      const int blue = int(std::lround(255.0 - v * (255.0 - 107.0)));
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb("
         << red << ',' << green << ',' << blue << ")\" stroke=\"#999\"><title>n=" << ns[xi] << " r=" << rs[yi]
         << " rate=" << format_double(v) << "</title></rect>\n";
    }
  for (std::size_t xi = 0; xi < ns.size(); ++xi)
    os << "<text x=\"" << left + cell * int(xi) + cell / 2 << "\" y=\"" << top + cell * int(rs.size()) + 15
       << "\" text-anchor=\"middle\">" << ns[xi] << "</text>\n";
  for (std::size_t yi = 0; yi < rs.size(); ++yi)
    os << "<text x=\"" << left - 6 << "\" y=\"" << top + cell * int(rs.size() - 1 - yi) + cell / 2 + 4
       << "\" text-anchor=\"end\">" << rs[yi] << "</text>\n";
  os << "<text x=\"" << left + cell * int(ns.size()) / 2 << "\" y=\"" << height - 10
     << "\" text-anchor=\"middle\">n</text>\n";
  os << "<text x=\"15\" y=\"" << top + cell * int(rs.size()) / 2 << "\" text-anchor=\"middle\">r</text>\n";
  os << "</svg>\n";
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

struct OutputFormats {
  bool csv = true, json = true, svg = true;
};

/// Writes phase_transition.csv, phase_transition.json and heatmap_<method>.svg
/// under `dir`; returns the paths written.
inline std::vector<std::filesystem::path> emit_outputs(const GridResult& g, const std::filesystem::path& dir,
                                                       OutputFormats formats = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  if (formats.csv) {
    written.push_back(dir / "phase_transition.csv");
    write_text_file(written.back(), to_csv(g));
  }
  if (formats.json) {
    written.push_back(dir / "phase_transition.json");
    write_text_file(written.back(), to_json(g).dump(2) + "\n");
  }
  if (formats.svg) {
    std::vector<Method> seen;
    for (const CellResult& c : g.cells)
      if (std::find(seen.begin(), seen.end(), c.method) == seen.end()) seen.push_back(c.method);
    for (Method m : seen) {
      std::string name = to_string(m);
      std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return char(std::tolower(ch)); });
      written.push_back(dir / ("heatmap_" + name + ".svg"));
      write_text_file(written.back(), to_svg_heatmap(g, m));
    }
  }
  return written;
}

}  // namespace otd
