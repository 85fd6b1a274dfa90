#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <iomanip>
#include <set>
#include <sstream>

#include <CLI11.hpp>

namespace mlglm::cli {

using nlohmann::json;

namespace {

std::string fmt(double x, int digits = 10) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

bool is_count(const json& v);

// Object view that rejects keys outside `allowed` up front.
class Reader {
 public:
  Reader(const json& j, std::string path, std::initializer_list<const char*> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j_.items())
      if (!ok.count(k)) throw ConfigError("unknown key '" + child(k) + "'");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& at(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing key '" + child(key) + "'");
    return j_.at(key);
  }

  double number(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number()) throw ConfigError("'" + child(key) + "' must be a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::uint64_t unsigned_int(const std::string& key) const {
    const json& v = at(key);
    if (!is_count(v)) throw ConfigError("'" + child(key) + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
  }
  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? unsigned_int(key) : fallback;
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_boolean()) throw ConfigError("'" + child(key) + "' must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_string()) throw ConfigError("'" + child(key) + "' must be a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) const {
    return has(key) ? string(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_array()) throw ConfigError("'" + child(key) + "' must be an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number())
        throw ConfigError("'" + child(key) + "[" + std::to_string(i) + "]' must be a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  const std::string& path() const { return path_; }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const json& j_;
  std::string path_;
};

bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::string indexed(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

// Runs a factory and turns its std::invalid_argument into a ConfigError at `path`.
template <class F>
auto checked(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

Prior parse_prior(const json& j, const std::string& path) {
  const Reader kind_reader(j, path, {"kind", "atoms", "mean", "variance", "sparsity"});
  const std::string kind = kind_reader.string("kind");
  if (kind == "discrete") {
    const Reader r(j, path, {"kind", "atoms"});
    const json& atoms = r.at("atoms");
    if (!atoms.is_array()) throw ConfigError("'" + r.child("atoms") + "' must be an array");
    std::vector<Atom> out;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      const Reader a(atoms[i], indexed(r.child("atoms"), i), {"value", "weight"});
      out.push_back({a.number("value"), a.number("weight")});
    }
    return checked(path, [&] { return Prior::discrete(out); });
  }
  if (kind == "gaussian") {
    const Reader r(j, path, {"kind", "mean", "variance"});
    return checked(path, [&] { return Prior::gaussian(r.number("mean", 0.0), r.number("variance", 1.0)); });
  }
  if (kind == "bernoulli_gaussian") {
    const Reader r(j, path, {"kind", "sparsity", "variance"});
    return checked(path, [&] {
      return Prior::bernoulli_gaussian(r.number("sparsity"), r.number("variance", 1.0));
    });
  }
  throw ConfigError("'" + kind_reader.child("kind") + "' must be discrete, gaussian or bernoulli_gaussian");
}

Activation parse_activation(const json& j, const std::string& path) {
  const Reader kind_reader(j, path, {"kind", "variance", "pre_noise_variance", "levels", "thresholds"});
  const std::string kind = kind_reader.string("kind");
  if (kind == "awgn") {
    const Reader r(j, path, {"kind", "variance"});
    return checked(path, [&] { return Activation::awgn(r.number("variance")); });
  }
  if (kind == "identity") {
    const Reader r(j, path, {"kind"});
    return Activation::identity();
  }
  if (kind == "sign") {
    const Reader r(j, path, {"kind", "pre_noise_variance"});
    return checked(path, [&] { return Activation::sign(r.number("pre_noise_variance", 0.0)); });
  }
  if (kind == "discrete_map") {
    const Reader r(j, path, {"kind", "levels", "thresholds", "pre_noise_variance"});
    return checked(path, [&] {
      return Activation::discrete_map(r.numbers("levels"), r.numbers("thresholds"),
                                      r.number("pre_noise_variance", 0.0));
    });
  }
  throw ConfigError("'" + kind_reader.child("kind") + "' must be awgn, identity, sign or discrete_map");
}

NetworkSpec parse_network(const json& j, const std::string& path) {
  const Reader r(j, path, {"prior", "layers"});
  Prior prior = parse_prior(r.at("prior"), r.child("prior"));
  const json& layers = r.at("layers");
  if (!layers.is_array() || layers.empty())
    throw ConfigError("'" + r.child("layers") + "' must be a nonempty array");
  std::vector<Layer> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = indexed(r.child("layers"), i);
    const Reader l(layers[i], lp, {"alpha", "activation"});
    out.push_back({l.number("alpha"), parse_activation(l.at("activation"), l.child("activation"))});
  }
  return checked(path, [&] { return NetworkSpec(std::move(prior), std::move(out)); });
}

SolverOptions parse_solver(const json& j, const std::string& path) {
  const Reader r(j, path, {"damping", "tol", "max_iter", "grid_order", "init", "start_fractions"});
  SolverOptions o;
  o.damping = r.number("damping", o.damping);
  o.tol = r.number("tol", o.tol);
  o.max_iter = static_cast<int>(r.unsigned_int("max_iter", static_cast<std::uint64_t>(o.max_iter)));
  o.grid_order = static_cast<int>(r.unsigned_int("grid_order", static_cast<std::uint64_t>(o.grid_order)));
  const std::string init = r.string("init", "cold");
  if (init == "cold")
    o.init = InitStyle::cold;
  else if (init == "multi_start")
    o.init = InitStyle::multi_start;
  else
    throw ConfigError("'" + r.child("init") + "' must be cold or multi_start");
  if (r.has("start_fractions")) o.start_fractions = r.numbers("start_fractions");
  checked(path, [&] {
    o.validate();
    return 0;
  });
  return o;
}

SimulateConfig parse_simulate(const json& j, const std::string& path, const NetworkSpec& net) {
  const Reader r(j, path,
                 {"dims", "n_in", "n_trials", "seed", "redraw_matrices", "oracle", "moments",
                  "z_threshold", "allowance"});
  SimulateConfig s;
  if (r.has("dims") == r.has("n_in"))
    throw ConfigError("'" + path + "' needs exactly one of 'dims' and 'n_in'");
  if (r.has("dims")) {
    const json& d = r.at("dims");
    if (!d.is_array()) throw ConfigError("'" + r.child("dims") + "' must be an array");
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!is_count(d[i]))
        throw ConfigError("'" + indexed(r.child("dims"), i) + "' must be a positive integer");
      s.dims.push_back(d[i].get<std::size_t>());
    }
    checked(r.child("dims"), [&] {
      check_dims(net, s.dims);
      return 0;
    });
  } else {
    s.dims = checked(r.child("n_in"), [&] { return dims_for(net, r.unsigned_int("n_in")); });
  }
  s.sim.n_trials = r.unsigned_int("n_trials", s.sim.n_trials);
  s.sim.seed = r.unsigned_int("seed", s.sim.seed);
  s.sim.redraw_matrices = r.boolean("redraw_matrices", s.sim.redraw_matrices);
  const std::string oracle = r.string("oracle", "brute_force");
  if (oracle == "brute_force")
    s.sim.oracle = OracleKind::brute_force;
  else if (oracle == "lmmse")
    s.sim.oracle = OracleKind::lmmse;
  else
    throw ConfigError("'" + r.child("oracle") + "' must be brute_force or lmmse");
  if (s.sim.oracle == OracleKind::lmmse)
    checked(r.child("oracle"), [&] {
      check_lmmse(net);
      return 0;
    });
  if (r.has("moments")) {
    const json& m = r.at("moments");
    if (!m.is_array()) throw ConfigError("'" + r.child("moments") + "' must be an array of [i, j] pairs");
    s.moments.clear();
    for (std::size_t k = 0; k < m.size(); ++k) {
      const json& p = m[k];
      if (!p.is_array() || p.size() != 2 || !is_count(p[0]) || !is_count(p[1]))
        throw ConfigError("'" + indexed(r.child("moments"), k) + "' must be a pair of non-negative integers");
      const int i = p[0].get<int>(), jj = p[1].get<int>();
      if (i + jj > 8) throw ConfigError("'" + indexed(r.child("moments"), k) + "' needs i + j <= 8");
      s.moments.push_back({i, jj});
    }
  }
  s.z_threshold = r.number("z_threshold", s.z_threshold);
  s.allowance = r.number("allowance", s.allowance);
  if (!(s.z_threshold > 0.0)) throw ConfigError("'" + r.child("z_threshold") + "' must be > 0");
  if (!(s.allowance >= 0.0)) throw ConfigError("'" + r.child("allowance") + "' must be >= 0");
  return s;
}

const char* axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::noise_variance:
      return "noise_variance";
    case SweepAxis::alpha_of_layer:
      return "alpha_of_layer";
    case SweepAxis::sparsity:
      return "sparsity";
  }
  return "";
}

SweepConfig parse_sweep(const json& j, const std::string& path, const NetworkSpec& net) {
  const Reader r(j, path, {"axis", "layer", "values", "parallel"});
  SweepConfig s;
  const std::string axis = r.string("axis");
  if (axis == "noise_variance")
    s.axis = SweepAxis::noise_variance;
  else if (axis == "alpha_of_layer")
    s.axis = SweepAxis::alpha_of_layer;
  else if (axis == "sparsity")
    s.axis = SweepAxis::sparsity;
  else
    throw ConfigError("'" + r.child("axis") + "' must be noise_variance, alpha_of_layer or sparsity");
  s.layer = r.unsigned_int("layer", 0);
  s.values = r.numbers("values");
  s.parallel = r.boolean("parallel", false);
  checked(path, [&] {
    SweepSpec{net, s.axis, s.layer, s.values}.validate();
    return 0;
  });
  return s;
}

OutputConfig parse_output(const json& j, const std::string& path) {
  const Reader r(j, path, {"path", "format"});
  OutputConfig o;
  o.path = r.string("path", "");
  const std::string format = r.string("format", "csv");
  if (format == "csv")
    o.format = OutputFormat::csv;
  else if (format == "table")
    o.format = OutputFormat::table;
  else
    throw ConfigError("'" + r.child("format") + "' must be csv or table");
  return o;
}

json prior_json(const Prior& p) {
  switch (p.kind()) {
    case Prior::Kind::discrete: {
      json atoms = json::array();
      for (const auto& a : p.atoms()) atoms.push_back({{"value", a.value}, {"weight", a.weight}});
      return {{"kind", "discrete"}, {"atoms", atoms}};
    }
    case Prior::Kind::gaussian:
      return {{"kind", "gaussian"}, {"mean", p.location()}, {"variance", p.variance()}};
    case Prior::Kind::bernoulli_gaussian:
      return {{"kind", "bernoulli_gaussian"}, {"sparsity", p.sparsity()}, {"variance", p.variance()}};
  }
  return {};
}

json activation_json(const Activation& a) {
  switch (a.kind()) {
    case Activation::Kind::awgn:
      return {{"kind", "awgn"}, {"variance", a.noise_variance()}};
    case Activation::Kind::identity:
      return {{"kind", "identity"}};
    case Activation::Kind::sign:
      return {{"kind", "sign"}, {"pre_noise_variance", a.pre_noise_variance()}};
    case Activation::Kind::discrete_map:
      return {{"kind", "discrete_map"},
              {"levels", std::vector<double>(a.levels().begin(), a.levels().end())},
              {"thresholds", std::vector<double>(a.thresholds().begin(), a.thresholds().end())},
              {"pre_noise_variance", a.pre_noise_variance()}};
  }
  return {};
}

// Writes to the configured path, or to `fallback` when none is set.
void emit(const OutputConfig& o, std::ostream& fallback, const std::function<void(std::ostream&)>& f) {
  if (o.path.empty()) {
    f(fallback);
    return;
  }
  std::ofstream file(o.path, std::ios::binary);
  if (!file) throw ConfigError("cannot open output file '" + o.path + "'");
  f(file);
  if (!file) throw std::runtime_error("failed writing '" + o.path + "'");
}

const char* yes_no(bool b) { return b ? "yes" : "no"; }

void print_predict(std::ostream& out, const ExperimentConfig& cfg, const FixedPointResult& r) {
  out << "eta         " << fmt(r.eta) << '\n';
  out << "avg_mse     " << fmt(r.avg_mse) << '\n';
  if (const auto ser = symbol_error_rate(cfg.network.prior(), r.eta)) out << "ser         " << fmt(*ser) << '\n';
  out << "iterations  " << r.iterations << '\n';
  out << "converged   " << yes_no(r.converged) << '\n';
  out << "residual    " << fmt(r.residual, 3) << '\n';
  out << "saturated   " << yes_no(r.saturated) << '\n';
  out << std::left << std::setw(6) << "layer" << std::setw(12) << "alpha" << std::setw(20) << "T"
      << std::setw(20) << "d" << std::setw(20) << "q" << "d_tilde" << '\n';
  for (std::size_t l = 0; l < cfg.network.depth(); ++l)
    out << std::setw(6) << l << std::setw(12) << fmt(cfg.network.layer(l).alpha) << std::setw(20)
        << fmt(r.state.T[l]) << std::setw(20) << fmt(r.state.d[l]) << std::setw(20)
        << fmt(r.state.q[l]) << fmt(r.state.d_tilde[l]) << '\n';
  if (r.all_solutions.size() > 1) {
    out << "distinct fixed points: " << r.all_solutions.size() << '\n';
    for (const auto& s : r.all_solutions)
      out << "  eta " << fmt(s.eta) << "  avg_mse " << fmt(s.avg_mse) << "  converged "
          << yes_no(s.converged) << '\n';
  }
  out << std::right;
}

void write_predict_csv(std::ostream& out, const ExperimentConfig& cfg, const FixedPointResult& r) {
  out << "layer,alpha,T,d,q,d_tilde,eta,avg_mse,iterations,converged\n";
  for (std::size_t l = 0; l < cfg.network.depth(); ++l)
    out << l << ',' << fmt(cfg.network.layer(l).alpha, 17) << ',' << fmt(r.state.T[l], 17) << ','
        << fmt(r.state.d[l], 17) << ',' << fmt(r.state.q[l], 17) << ',' << fmt(r.state.d_tilde[l], 17) << ','
        << fmt(r.eta, 17) << ',' << fmt(r.avg_mse, 17) << ',' << r.iterations << ',' << (r.converged ? 1 : 0)
        << '\n';
}

std::string dims_text(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s;
}

void print_validate(std::ostream& out, const SimulateConfig& s, const DecouplingReport& rep) {
  out << "trials " << rep.n_trials << "  dims " << dims_text(s.dims) << "  oracle "
      << (s.sim.oracle == OracleKind::brute_force ? "brute_force" : "lmmse") << "  seed " << s.sim.seed
      << "  redraw " << yes_no(s.sim.redraw_matrices) << '\n';
  out << "eta " << fmt(rep.fixed_point.eta) << "  avg_mse " << fmt(rep.fixed_point.avg_mse)
      << "  converged " << yes_no(rep.fixed_point.converged) << '\n';
  out << "z threshold " << fmt(s.z_threshold) << "  allowance " << fmt(s.allowance) << '\n';
  out << std::right << std::setw(3) << "i" << std::setw(3) << "j" << std::setw(16) << "empirical"
      << std::setw(14) << "std_error" << std::setw(16) << "predicted" << std::setw(11) << "z"
      << std::setw(11) << "z_allowed" << std::setw(6) << "pass" << '\n';
  for (const auto& row : rep.rows)
    out << std::setw(3) << row.pair.i << std::setw(3) << row.pair.j << std::setw(16)
        << fmt(row.empirical, 9) << std::setw(14) << fmt(row.std_error, 4) << std::setw(16)
        << fmt(row.predicted, 9) << std::setw(11) << fmt(row.z, 4) << std::setw(11)
        << fmt(row.z_allowed, 4) << std::setw(6) << yes_no(row.pass) << '\n';
  out << "orthogonality " << fmt(rep.orthogonality, 6) << " +- " << fmt(rep.orthogonality_se, 4)
      << "  pass " << yes_no(rep.orthogonality_pass) << '\n';
  out << "empirical mse " << fmt(rep.empirical_mse, 9) << " +- " << fmt(rep.empirical_mse_se, 4)
      << "  replica avg_mse " << fmt(rep.fixed_point.avg_mse, 9) << '\n';
  out << "result " << (rep.all_pass ? "PASS" : "FAIL") << '\n';
}

void write_validate_csv(std::ostream& out, const DecouplingReport& rep) {
  out << "i,j,empirical,std_error,predicted,z,z_allowed,pass\n";
  for (const auto& row : rep.rows)
    out << row.pair.i << ',' << row.pair.j << ',' << fmt(row.empirical, 17) << ','
        << fmt(row.std_error, 17) << ',' << fmt(row.predicted, 17) << ',' << fmt(row.z, 17) << ','
        << fmt(row.z_allowed, 17) << ',' << (row.pass ? 1 : 0) << '\n';
}

void print_sweep_table(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << std::setw(14) << "axis" << std::setw(20) << "eta" << std::setw(20) << "avg_mse"
      << std::setw(20) << "ser" << std::setw(11) << "iterations" << std::setw(11) << "converged" << '\n';
  for (const auto& r : rows) {
    const bool ok = r.error.empty();
    out << std::setw(14) << fmt(r.axis_value) << std::setw(20) << (ok ? fmt(r.eta) : "-")
        << std::setw(20) << (ok ? fmt(r.avg_mse) : "-") << std::setw(20)
        << (r.ser ? fmt(*r.ser) : "-") << std::setw(11) << r.iterations << std::setw(11)
        << yes_no(r.converged);
    if (!ok) out << "  error: " << r.error;
    out << '\n';
  }
}

const SimulateConfig& need_simulate(const ExperimentConfig& cfg) {
  if (!cfg.simulate) throw ConfigError("missing key 'simulate'");
  return *cfg.simulate;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig parse_config(const json& j) {
  const Reader r(j, "", {"network", "solver", "simulate", "sweep", "output"});
  NetworkSpec net = parse_network(r.at("network"), "network");
  ExperimentConfig cfg{net, {}, std::nullopt, std::nullopt, {}};
  if (r.has("solver")) cfg.solver = parse_solver(r.at("solver"), "solver");
  if (r.has("simulate")) cfg.simulate = parse_simulate(r.at("simulate"), "simulate", net);
  if (r.has("sweep")) cfg.sweep = parse_sweep(r.at("sweep"), "sweep", net);
  if (r.has("output")) cfg.output = parse_output(r.at("output"), "output");
  return cfg;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

json to_json(const ExperimentConfig& cfg) {
  json layers = json::array();
  for (const auto& l : cfg.network.layers())
    layers.push_back({{"alpha", l.alpha}, {"activation", activation_json(l.activation)}});
  json j;
  j["network"] = {{"prior", prior_json(cfg.network.prior())}, {"layers", layers}};
  const auto& s = cfg.solver;
  j["solver"] = {{"damping", s.damping},
                 {"tol", s.tol},
                 {"max_iter", s.max_iter},
                 {"grid_order", s.grid_order},
                 {"init", s.init == InitStyle::multi_start ? "multi_start" : "cold"},
                 {"start_fractions", s.start_fractions}};
  if (cfg.simulate) {
    const auto& m = *cfg.simulate;
    json moments = json::array();
    for (const auto& p : m.moments) moments.push_back({p.i, p.j});
    j["simulate"] = {{"dims", m.dims},
                     {"n_trials", m.sim.n_trials},
                     {"seed", m.sim.seed},
                     {"redraw_matrices", m.sim.redraw_matrices},
                     {"oracle", m.sim.oracle == OracleKind::lmmse ? "lmmse" : "brute_force"},
                     {"moments", moments},
                     {"z_threshold", m.z_threshold},
                     {"allowance", m.allowance}};
  }
  if (cfg.sweep)
    j["sweep"] = {{"axis", axis_name(cfg.sweep->axis)},
                  {"layer", cfg.sweep->layer},
                  {"values", cfg.sweep->values},
                  {"parallel", cfg.sweep->parallel}};
  j["output"] = {{"path", cfg.output.path},
                 {"format", cfg.output.format == OutputFormat::table ? "table" : "csv"}};
  return j;
}

void apply_overrides(ExperimentConfig& cfg, const Overrides& o) {
  if (o.out) cfg.output.path = *o.out;
  if (o.grid_order) {
    cfg.solver.grid_order = *o.grid_order;
    checked("--grid-order", [&] {
      cfg.solver.validate();
      return 0;
    });
  }
  if (o.threads) {
    if (*o.threads < 1) throw ConfigError("'--threads' must be >= 1");
    cfg.threads = *o.threads;
    if (cfg.simulate) cfg.simulate->sim.threads = *o.threads;
  }
  if (o.seed && cfg.simulate) cfg.simulate->sim.seed = *o.seed;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_predict(const ExperimentConfig& cfg, std::ostream& out, std::ostream&) {
  const FixedPointResult r = solve(cfg.network, cfg.solver);
  print_predict(out, cfg, r);
  if (!cfg.output.path.empty())
    emit(cfg.output, out, [&](std::ostream& o) {
      if (cfg.output.format == OutputFormat::csv)
        write_predict_csv(o, cfg, r);
      else
        print_predict(o, cfg, r);
    });
  return r.converged ? kOk : kNotConverged;
}

int cmd_simulate(const ExperimentConfig& cfg, std::ostream& out, std::ostream&) {
  const SimulateConfig& s = need_simulate(cfg);
  const TrialBatch batch = simulate(cfg.network, s.dims, s.sim);
  emit(cfg.output, out, [&](std::ostream& o) {
    o << "trial,coord,x0,xhat\n";
    for (std::size_t t = 0; t < batch.records.size(); ++t) {
      const auto& r = batch.records[t];
      for (Eigen::Index k = 0; k < r.x0.size(); ++k)
        o << t << ',' << k << ',' << fmt(r.x0(k), 17) << ',' << fmt(r.xhat(k), 17) << '\n';
    }
  });
  return kOk;
}

int cmd_validate(const ExperimentConfig& cfg, std::ostream& out, std::ostream&) {
  const SimulateConfig& s = need_simulate(cfg);
  ValidationOptions vo;
  vo.sim = s.sim;
  vo.moments = s.moments;
  vo.z_threshold = s.z_threshold;
  vo.allowance = s.allowance;
  vo.solver = cfg.solver;
  const DecouplingReport rep = decoupling_moment_test(cfg.network, s.dims, vo);
  print_validate(out, s, rep);
  if (!cfg.output.path.empty())
    emit(cfg.output, out, [&](std::ostream& o) {
      if (cfg.output.format == OutputFormat::csv)
        write_validate_csv(o, rep);
      else
        print_validate(o, s, rep);
    });
  if (!rep.fixed_point.converged) return kNotConverged;
  return rep.all_pass ? kOk : kValidationFailed;
}

int cmd_sweep(const ExperimentConfig& cfg, std::ostream& out, std::ostream&) {
  if (!cfg.sweep) throw ConfigError("missing key 'sweep'");
  const SweepSpec spec{cfg.network, cfg.sweep->axis, cfg.sweep->layer, cfg.sweep->values};
  SweepOptions so;
  so.solver = cfg.solver;
  so.parallel = cfg.sweep->parallel;
  so.threads = cfg.threads;
  const auto rows = run_sweep(spec, so);
  emit(cfg.output, out, [&](std::ostream& o) {
    if (cfg.output.format == OutputFormat::table)
      print_sweep_table(o, rows);
    else
      write_sweep_csv(o, rows);
  });
  for (const auto& r : rows)
    if (!r.converged) return kNotConverged;
  return kOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Replica predictions and Monte Carlo decoupling checks for multi-layer GLMs", "mlglm"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::string out_path;
  int threads = 1;
  int grid_order = 0;
  std::uint64_t seed = 0;
  struct Flags {
    CLI::Option* out;
    CLI::Option* threads;
    CLI::Option* grid;
    CLI::Option* seed;
  };
  std::vector<std::pair<CLI::App*, Flags>> subs;
  for (const auto& [name, help] :
       {std::pair{"predict", "Solve the fixed point and print eta, avg MSE and order parameters"},
        std::pair{"simulate", "Run Monte Carlo trials and write trial,coord,x0,xhat CSV"},
        std::pair{"validate", "Compare empirical joint moments with the scalar-channel predictions"},
        std::pair{"sweep", "Solve along one parameter axis and write the sweep CSV"}}) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON experiment config")->required();
    Flags f{};
    f.out = sub->add_option("--out", out_path, "Output path (overrides output.path)");
    f.threads = sub->add_option("--threads", threads, "Worker threads (default 1)");
    f.grid = sub->add_option("--grid-order", grid_order, "Quadrature order (overrides solver.grid_order)");
    f.seed = sub->add_option("--seed", seed, "Seed (overrides simulate.seed)");
    subs.push_back({sub, f});
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  CLI::App* chosen = nullptr;
  Flags flags{};
  for (const auto& [sub, f] : subs)
    if (sub->parsed()) {
      chosen = sub;
      flags = f;
    }
  const std::string name = chosen->get_name();

  try {
    ExperimentConfig cfg = load_config(config_path);
    Overrides o;
    if (flags.out->count()) o.out = out_path;
    if (flags.threads->count()) o.threads = threads;
    if (flags.grid->count()) o.grid_order = grid_order;
    if (flags.seed->count()) o.seed = seed;
    apply_overrides(cfg, o);
    if (name == "predict") return cmd_predict(cfg, out, err);
    if (name == "simulate") return cmd_simulate(cfg, out, err);
    if (name == "validate") return cmd_validate(cfg, out, err);
    return cmd_sweep(cfg, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const OracleInfeasible& e) {
    err << "oracle infeasible: " << e.what() << '\n';
    return kOracleInfeasible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace mlglm::cli
