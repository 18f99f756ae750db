#include "pgdpo/config.hpp"

#include "pgdpo/io.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace pgdpo {

void EvalConfig::validate() const {
  require(grid_nt >= 1 && grid_nw >= 1, "evaluation: grid sizes must be >= 1");
  require(grid_w_lo > 0.0, "evaluation: grid_w_lo must be > 0");
  require(grid_w_hi > grid_w_lo, "evaluation: grid_w_hi must exceed grid_w_lo");
  require(surface_nw >= 1 && surface_ny >= 1, "evaluation: surface grid must be >= 1");
  require(n_seeds >= 1, "evaluation: n_seeds must be >= 1");
  require(bootstrap >= 0, "evaluation: bootstrap must be >= 0");
  require(mc_paths >= 2, "evaluation: mc_paths must be >= 2");
  require(value_eval_iterations >= 1, "evaluation: value_eval_iterations must be >= 1");
}

void IoConfig::validate() const {
  require(!out_dir.empty(), "io: out_dir must not be empty");
  require(checkpoint_cadence >= 0, "io: checkpoint_cadence must be >= 0");
  require(log_cadence >= 1, "io: log_cadence must be >= 1");
}

void RunConfig::validate() const {
  prob.validate();
  train.validate();
  eval.validate();
  io.validate();
  if (warm_start)
    require(!warm_start_path.empty(), "run: warm_start needs warm_start_path");
}

RunConfig default_config() {
  RunConfig cfg;
  cfg.prob.mkt = MarketParams::baseline();
  cfg.train.stop_tol = 1e-3;  // stabilization stop for the recursive runs
  cfg.train.stop_window = 100;
  return cfg;
}

RunConfig validation_config() {
  RunConfig cfg;
  cfg.prob.mkt = MarketParams::single_asset(0.10, 0.20);
  cfg.prob.ez.R = 1.5;
  cfg.prob.ez.psi = 1.0 / 1.5;  // CRRA limit: S = 1/psi = R
  cfg.prob.ez.c_bar = 0.99;    // never binds at the benchmark's fractions
  cfg.prob.pc.mode = PortfolioMode::capped;
  cfg.prob.pc.leverage_cap = 2.0;
  cfg.train.steps = 32;
  cfg.train.stop_tol = 0.0;  // fixed budget
  return cfg;
}

MertonParams induced_merton(const RunConfig& cfg) {
  const MarketParams& m = cfg.prob.mkt;
  const EZParams& ez = cfg.prob.ez;
  require(m.d == 1, "benchmark: single-asset market required");
  require(ez.crra_limit(), "benchmark: CRRA-limit preferences required (psi = 1/R)");
  require(m.beta_lrr[0] == 0.0 && m.rho[0] == 0.0,
          "benchmark: factor must be inert (rho = beta_lrr = 0)");
  MertonParams mp;
  mp.r = m.r;
  mp.mu = m.mu_bar[0];
  mp.sigma = m.sigma[0];
  mp.R = ez.R;
  mp.delta = ez.delta;
  mp.T = m.T;
  // the aggregator's delta-scaled CRRA limit trains delta * plain objective
  // with bequest weight kappa_bequest; in plain units the bequest is
  // kappa_bequest / delta
  mp.kappa = ez.kappa_bequest / ez.delta;
  mp.validate();
  return mp;
}

// -------------------------------------------------------------- parsing ----

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  require(!t.empty(), "config: empty value for " + key);
  char* end = nullptr;
  const double x = std::strtod(t.c_str(), &end);
  require(end && *end == '\0', "config: bad number for " + key + ": '" + v + "'");
  return x;
}

long parse_long(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  require(!t.empty(), "config: empty value for " + key);
  char* end = nullptr;
  const long x = std::strtol(t.c_str(), &end, 10);
  require(end && *end == '\0', "config: bad integer for " + key + ": '" + v + "'");
  return x;
}

int parse_int(const std::string& key, const std::string& v) {
  return static_cast<int>(parse_long(key, v));
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  require(!t.empty(), "config: empty value for " + key);
  char* end = nullptr;
  const unsigned long long x = std::strtoull(t.c_str(), &end, 10);
  require(end && *end == '\0', "config: bad seed for " + key + ": '" + v + "'");
  return static_cast<uint64_t>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true") return true;
  if (t == "false") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v +
                    "' (use true/false)");
}

Vec parse_vec(const std::string& key, const std::string& v) {
  std::vector<double> xs;
  std::string item;
  std::stringstream ss(v);
  while (std::getline(ss, item, ',')) xs.push_back(parse_double(key, item));
  require(!xs.empty(), "config: empty list for " + key);
  Vec out(static_cast<long>(xs.size()));
  for (size_t i = 0; i < xs.size(); ++i) out[static_cast<long>(i)] = xs[i];
  return out;
}

std::string join_vec(const Vec& v) {
  std::string s;
  for (long i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v[i]);
  }
  return s;
}

const char* bool_str(bool b) { return b ? "true" : "false"; }

void apply_key(RunConfig& cfg, const std::string& sec, const std::string& key,
               const std::string& val) {
  MarketParams& m = cfg.prob.mkt;
  EZParams& ez = cfg.prob.ez;
  PortfolioConstraint& pc = cfg.prob.pc;
  TrainConfig& tr = cfg.train;
  EvalConfig& ev = cfg.eval;
  IoConfig& io = cfg.io;
  auto unknown = [&]() -> void {
    throw ConfigError("config: unknown key '" + key + "' in [" + sec + "]");
  };
  if (sec == "market") {
    if (key == "r") m.r = parse_double(key, val);
    else if (key == "kappa_y") m.kappa_y = parse_double(key, val);
    else if (key == "y_bar") m.y_bar = parse_double(key, val);
    else if (key == "xi") m.xi = parse_double(key, val);
    else if (key == "T") m.T = parse_double(key, val);
    else if (key == "d") m.d = parse_int(key, val);
    else if (key == "mu_bar") m.mu_bar = parse_vec(key, val);
    else if (key == "sigma") m.sigma = parse_vec(key, val);
    else if (key == "rho") m.rho = parse_vec(key, val);
    else if (key == "beta_lrr") m.beta_lrr = parse_vec(key, val);
    else if (key == "w_min") m.w_min = parse_double(key, val);
    else if (key == "w_max") m.w_max = parse_double(key, val);
    else if (key == "w0") m.w0 = parse_double(key, val);
    else unknown();
  } else if (sec == "preferences") {
    if (key == "R") ez.R = parse_double(key, val);
    else if (key == "psi") ez.psi = parse_double(key, val);
    else if (key == "delta") ez.delta = parse_double(key, val);
    else if (key == "kappa_bequest") ez.kappa_bequest = parse_double(key, val);
    else if (key == "c_bar") ez.c_bar = parse_double(key, val);
    else if (key == "limit_tol") ez.limit_tol = parse_double(key, val);
    else unknown();
  } else if (sec == "constraints") {
    if (key == "mode") {
      const std::string t = trim(val);
      if (t == "equality") pc.mode = PortfolioMode::equality;
      else if (t == "capped") pc.mode = PortfolioMode::capped;
      else throw ConfigError("config: unknown constraint mode '" + t + "'");
    } else if (key == "budget") pc.budget = parse_double(key, val);
    else if (key == "leverage_cap") pc.leverage_cap = parse_double(key, val);
    else unknown();
  } else if (sec == "training") {
    if (key == "steps") tr.steps = parse_int(key, val);
    else if (key == "batch") tr.batch = parse_int(key, val);
    else if (key == "iterations") tr.iterations = parse_int(key, val);
    else if (key == "lr_value") tr.lr_value = parse_double(key, val);
    else if (key == "lr_costate") tr.lr_costate = parse_double(key, val);
    else if (key == "lr_policy") tr.lr_policy = parse_double(key, val);
    else if (key == "adam_beta1") tr.adam_beta1 = parse_double(key, val);
    else if (key == "adam_beta2") tr.adam_beta2 = parse_double(key, val);
    else if (key == "adam_eps") tr.adam_eps = parse_double(key, val);
    else if (key == "lambda_adj") tr.lambda_adj = parse_double(key, val);
    else if (key == "beta_reg") tr.beta_reg = parse_double(key, val);
    else if (key == "hidden_layers") tr.hidden_layers = parse_int(key, val);
    else if (key == "width") tr.width = parse_int(key, val);
    else if (key == "activation") tr.activation = activation_from_string(trim(val));
    else if (key == "seed") tr.seed = parse_u64(key, val);
    else if (key == "stop_tol") tr.stop_tol = parse_double(key, val);
    else if (key == "stop_window") tr.stop_window = parse_int(key, val);
    else if (key == "soft_penalty") tr.soft_penalty = parse_bool(key, val);
    else if (key == "penalty_weight") tr.penalty_weight = parse_double(key, val);
    else if (key == "enforce_floor") tr.enforce_floor = parse_bool(key, val);
    else if (key == "use_value_loss") tr.use_value_loss = parse_bool(key, val);
    else if (key == "use_adjoint_loss") tr.use_adjoint_loss = parse_bool(key, val);
    else if (key == "actor_second_order") tr.actor_second_order = parse_bool(key, val);
    else if (key == "second_order_source") {
      const std::string t = trim(val);
      if (t == "costate") tr.second_order_source = SecondOrderSource::costate;
      else if (t == "value") tr.second_order_source = SecondOrderSource::value;
      else throw ConfigError("config: unknown second_order_source '" + t + "'");
    } else if (key == "chunk") tr.chunk = parse_int(key, val);
    else unknown();
  } else if (sec == "evaluation") {
    if (key == "grid_nt") ev.grid_nt = parse_int(key, val);
    else if (key == "grid_nw") ev.grid_nw = parse_int(key, val);
    else if (key == "grid_w_lo") ev.grid_w_lo = parse_double(key, val);
    else if (key == "grid_w_hi") ev.grid_w_hi = parse_double(key, val);
    else if (key == "surface_nw") ev.surface_nw = parse_int(key, val);
    else if (key == "surface_ny") ev.surface_ny = parse_int(key, val);
    else if (key == "n_seeds") ev.n_seeds = parse_int(key, val);
    else if (key == "bootstrap") ev.bootstrap = parse_int(key, val);
    else if (key == "mc_paths") ev.mc_paths = parse_int(key, val);
    else if (key == "value_eval_iterations") ev.value_eval_iterations = parse_int(key, val);
    else if (key == "surface_dpi_dy") ev.surface_dpi_dy = parse_bool(key, val);
    else unknown();
  } else if (sec == "io") {
    if (key == "out_dir") io.out_dir = trim(val);
    else if (key == "checkpoint_cadence") io.checkpoint_cadence = parse_int(key, val);
    else if (key == "log_cadence") io.log_cadence = parse_int(key, val);
    else unknown();
  } else if (sec == "run") {
    if (key == "warm_start") cfg.warm_start = parse_bool(key, val);
    else if (key == "warm_start_path") cfg.warm_start_path = trim(val);
    else unknown();
  } else {
    throw ConfigError("config: unknown section [" + sec + "]");
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg = default_config();
  std::istringstream is(text);
  std::string line, sec;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      require(t.back() == ']', "config: malformed section at line " +
                                   std::to_string(lineno));
      sec = trim(t.substr(1, t.size() - 2));
      require(!sec.empty(), "config: empty section name at line " +
                                std::to_string(lineno));
      continue;
    }
    const size_t eq = t.find('=');
    require(eq != std::string::npos,
            "config: expected key = value at line " + std::to_string(lineno));
    const std::string key = trim(t.substr(0, eq));
    const std::string val = t.substr(eq + 1);
    require(!key.empty(), "config: empty key at line " + std::to_string(lineno));
    require(!sec.empty(),
            "config: key '" + key + "' appears before any [section]");
    apply_key(cfg, sec, key, val);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  const MarketParams& m = cfg.prob.mkt;
  const EZParams& ez = cfg.prob.ez;
  const PortfolioConstraint& pc = cfg.prob.pc;
  const TrainConfig& tr = cfg.train;
  const EvalConfig& ev = cfg.eval;
  const IoConfig& io = cfg.io;
  std::ostringstream os;
  os << "[market]\n";
  os << "r = " << format_double(m.r) << "\n";
  os << "kappa_y = " << format_double(m.kappa_y) << "\n";
  os << "y_bar = " << format_double(m.y_bar) << "\n";
  os << "xi = " << format_double(m.xi) << "\n";
  os << "T = " << format_double(m.T) << "\n";
  os << "d = " << m.d << "\n";
  os << "mu_bar = " << join_vec(m.mu_bar) << "\n";
  os << "sigma = " << join_vec(m.sigma) << "\n";
  os << "rho = " << join_vec(m.rho) << "\n";
  os << "beta_lrr = " << join_vec(m.beta_lrr) << "\n";
  os << "w_min = " << format_double(m.w_min) << "\n";
  os << "w_max = " << format_double(m.w_max) << "\n";
  os << "w0 = " << format_double(m.w0) << "\n";
  os << "\n[preferences]\n";
  os << "R = " << format_double(ez.R) << "\n";
  os << "psi = " << format_double(ez.psi) << "\n";
  os << "delta = " << format_double(ez.delta) << "\n";
  os << "kappa_bequest = " << format_double(ez.kappa_bequest) << "\n";
  os << "c_bar = " << format_double(ez.c_bar) << "\n";
  os << "limit_tol = " << format_double(ez.limit_tol) << "\n";
  os << "\n[constraints]\n";
  os << "mode = " << (pc.mode == PortfolioMode::equality ? "equality" : "capped")
     << "\n";
  os << "budget = " << format_double(pc.budget) << "\n";
  os << "leverage_cap = " << format_double(pc.leverage_cap) << "\n";
  os << "\n[training]\n";
  os << "steps = " << tr.steps << "\n";
  os << "batch = " << tr.batch << "\n";
  os << "iterations = " << tr.iterations << "\n";
  os << "lr_value = " << format_double(tr.lr_value) << "\n";
  os << "lr_costate = " << format_double(tr.lr_costate) << "\n";
  os << "lr_policy = " << format_double(tr.lr_policy) << "\n";
  os << "adam_beta1 = " << format_double(tr.adam_beta1) << "\n";
  os << "adam_beta2 = " << format_double(tr.adam_beta2) << "\n";
  os << "adam_eps = " << format_double(tr.adam_eps) << "\n";
  os << "lambda_adj = " << format_double(tr.lambda_adj) << "\n";
  os << "beta_reg = " << format_double(tr.beta_reg) << "\n";
  os << "hidden_layers = " << tr.hidden_layers << "\n";
  os << "width = " << tr.width << "\n";
  os << "activation = " << to_string(tr.activation) << "\n";
  os << "seed = " << tr.seed << "\n";
  os << "stop_tol = " << format_double(tr.stop_tol) << "\n";
  os << "stop_window = " << tr.stop_window << "\n";
  os << "soft_penalty = " << bool_str(tr.soft_penalty) << "\n";
  os << "penalty_weight = " << format_double(tr.penalty_weight) << "\n";
  os << "enforce_floor = " << bool_str(tr.enforce_floor) << "\n";
  os << "use_value_loss = " << bool_str(tr.use_value_loss) << "\n";
  os << "use_adjoint_loss = " << bool_str(tr.use_adjoint_loss) << "\n";
  os << "actor_second_order = " << bool_str(tr.actor_second_order) << "\n";
  os << "second_order_source = "
     << (tr.second_order_source == SecondOrderSource::costate ? "costate" : "value")
     << "\n";
  os << "chunk = " << tr.chunk << "\n";
  os << "\n[evaluation]\n";
  os << "grid_nt = " << ev.grid_nt << "\n";
  os << "grid_nw = " << ev.grid_nw << "\n";
  os << "grid_w_lo = " << format_double(ev.grid_w_lo) << "\n";
  os << "grid_w_hi = " << format_double(ev.grid_w_hi) << "\n";
  os << "surface_nw = " << ev.surface_nw << "\n";
  os << "surface_ny = " << ev.surface_ny << "\n";
  os << "n_seeds = " << ev.n_seeds << "\n";
  os << "bootstrap = " << ev.bootstrap << "\n";
  os << "mc_paths = " << ev.mc_paths << "\n";
  os << "value_eval_iterations = " << ev.value_eval_iterations << "\n";
  os << "surface_dpi_dy = " << bool_str(ev.surface_dpi_dy) << "\n";
  os << "\n[io]\n";
  os << "out_dir = " << io.out_dir << "\n";
  os << "checkpoint_cadence = " << io.checkpoint_cadence << "\n";
  os << "log_cadence = " << io.log_cadence << "\n";
  os << "\n[run]\n";
  os << "warm_start = " << bool_str(cfg.warm_start) << "\n";
  if (!cfg.warm_start_path.empty())
    os << "warm_start_path = " << cfg.warm_start_path << "\n";
  return os.str();
}

}  // namespace pgdpo
