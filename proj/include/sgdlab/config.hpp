#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <toml.hpp>
#include <vector>

#include "sgdlab/analytic.hpp"
#include "sgdlab/common.hpp"
#include "sgdlab/dynamics.hpp"

namespace sgdlab {

using Json = nlohmann::json;

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {
      "balance-linear",      "balance-relu",  "noether-contrast",      "stationary-depth0",
      "stationary-depth1",   "stationary-generalD", "sign-coherence-tanh", "regimes-grid",
      "fluctuation-inversion", "bayes-compare"};
  return names;
}

enum class KeyType { Int, Float, String, Bool, FloatList };

inline const char* key_type_name(KeyType t) {
  switch (t) {
    case KeyType::Int: return "integer";
    case KeyType::Float: return "number";
    case KeyType::String: return "string";
    case KeyType::Bool: return "boolean";
    case KeyType::FloatList: return "array of numbers";
  }
  return "?";
}

struct KeySpec {
  std::string name;
  KeyType type;
  std::string default_text;  // "required" or "unset" when there is no value
  std::string doc;
};

struct SectionSpec {
  std::string name;  // empty for top level
  std::vector<KeySpec> keys;
};

// Every documented default lives here; `--explain` prints this table.
inline const std::vector<SectionSpec>& config_schema() {
  static const std::vector<SectionSpec> s = {
      {"",
       {{"experiment", KeyType::String, "required", "one of the experiment names"},
        {"seed", KeyType::Int, "0", "master seed; trajectory i uses split_seed(seed, i)"},
        {"workers", KeyType::Int, "0", "worker count (0: --workers, SGDLAB_WORKERS, or hardware)"},
        {"output", KeyType::String, "out", "output directory"}}},
      {"dataset",
       {{"kind", KeyType::String, "linear", "linear | delta-zero | csv | relu"},
        {"k", KeyType::Float, "1.0", "slope of the teacher"},
        {"sigma", KeyType::Float, "1.0", "label noise (linear)"},
        {"c", KeyType::Float, "0.0", "offset in y = kx - c/x (delta-zero)"},
        {"n", KeyType::Int, "10000", "number of samples"},
        {"path", KeyType::String, "unset", "CSV with header x,y (csv)"},
        {"d", KeyType::Int, "20", "input/output dimension (relu)"},
        {"noise", KeyType::Float, "1.0", "label noise (relu)"},
        {"moments", KeyType::String, "population", "population | empirical (moments fed to analytic formulas)"}}},
      {"model",
       {{"kind", KeyType::String, "diagonal", "diagonal | tanh | relu"},
        {"depth", KeyType::Int, "1", "hidden layers D of the diagonal net; 0 or 1 for tanh"},
        {"width", KeyType::Int, "1", "width d of the diagonal net"},
        {"hidden", KeyType::Int, "20", "hidden units (relu)"},
        {"init", KeyType::FloatList, "unset", "initial parameters (diagonal: row-major width x (depth+1))"},
        {"init_scale", KeyType::Float, "0.5", "scale of random initialization when init is unset"},
        {"v0", KeyType::Float, "1.0", "initial output for ReducedSDE"}}},
      {"stepper",
       {{"mode", KeyType::String, "SGD", "SGD | GD | LangevinGD | SDE | ReducedSDE"},
        {"eta", KeyType::Float, "0.001", "learning rate"},
        {"S", KeyType::Int, "1", "batch size"},
        {"T", KeyType::Float, "eta/S", "temperature; must equal eta/S when given"},
        {"gamma", KeyType::Float, "0.0", "weight decay"},
        {"steps", KeyType::Int, "100000", "steps per trajectory"},
        {"record_every", KeyType::Int, "1", "recording stride"},
        {"noise_scale", KeyType::Float, "0.0", "LangevinGD noise amplitude"},
        {"dt", KeyType::Float, "eta", "SDE / ReducedSDE integration step"},
        {"trajectories", KeyType::Int, "1", "independent seeds"},
        {"temperatures", KeyType::FloatList, "unset", "sweep: for each T, eta = T*S"}}},
      {"density",
       {{"case", KeyType::String, "Depth1", "Depth0 | Depth1 | GeneralD | InfiniteD | InterpolationD1 | DeltaZeroC"},
        {"T", KeyType::Float, "stepper T", "temperature"},
        {"gamma", KeyType::Float, "stepper gamma", "weight decay"},
        {"D", KeyType::Int, "model depth", "depth (GeneralD)"},
        {"d", KeyType::Float, "model width", "effective width (GeneralD)"},
        {"ratio", KeyType::Float, "1.0", "d/D (InfiniteD)"},
        {"k", KeyType::Float, "dataset k", "slope (special cases)"},
        {"c", KeyType::Float, "dataset c", "offset (DeltaZeroC)"},
        {"branch", KeyType::Int, "1", "+1 (u = w) or -1 (u = -w)"},
        {"z", KeyType::Float, "0.0", "weight of the atom at 0"},
        {"v_min", KeyType::Float, "auto", "grid start"},
        {"v_max", KeyType::Float, "auto", "grid end"},
        {"points", KeyType::Int, "1000", "grid size"},
        {"log_grid", KeyType::Bool, "false", "log-uniform grid"}}},
      {"sweep",
       {{"sigmas", KeyType::FloatList, "unset", "sigma values (regimes-grid)"},
        {"temperatures", KeyType::FloatList, "unset", "absolute T values"},
        {"t_fractions", KeyType::FloatList, "unset", "T as fractions of T_c (fluctuation-inversion)"}}},
      {"compare",
       {{"trajectory", KeyType::String, "unset", "trajectory CSV (compare subcommand)"},
        {"column", KeyType::String, "v", "column to compare"},
        {"burn_in", KeyType::Float, "0.2", "burn-in fraction"},
        {"max_lag1", KeyType::Float, "0.5", "thinning target for lag-1 autocorrelation"},
        {"tail_q_lo", KeyType::Float, "0.95", "lower mass quantile of the tail fit"},
        {"tail_q_hi", KeyType::Float, "0.999", "upper mass quantile of the tail fit"}}},
  };
  return s;
}

inline std::string explain_config() {
  std::ostringstream o;
  o << "Config keys (TOML or JSON). Unknown keys are errors.\n";
  for (const auto& sec : config_schema()) {
    o << "\n[" << (sec.name.empty() ? "top level" : sec.name) << "]\n";
    for (const auto& k : sec.keys)
      o << "  " << k.name << " (" << key_type_name(k.type) << ", default " << k.default_text << "): " << k.doc << '\n';
  }
  o << "\nexperiments:";
  for (const auto& e : experiment_names()) o << ' ' << e;
  o << '\n';
  return o.str();
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string nearest_match(const std::string& key, const std::vector<std::string>& options) {
  std::string best;
  std::size_t bd = static_cast<std::size_t>(-1);
  for (const auto& o : options) {
    const std::size_t d = edit_distance(key, o);
    if (d < bd) {
      bd = d;
      best = o;
    }
  }
  return best;
}

// A parsed document plus the source line of every key path ("stepper.eta").
struct RawConfig {
  Json doc;
  std::map<std::string, int> lines;
  std::string path;

  std::string where(const std::string& key) const {
    auto it = lines.find(key);
    if (it == lines.end()) return path;
    return path + ":" + std::to_string(it->second);
  }
};

namespace detail {

inline Json toml_to_json(const toml::node& n, const std::string& prefix, std::map<std::string, int>& lines) {
  if (!prefix.empty()) lines[prefix] = static_cast<int>(n.source().begin.line);
  if (auto t = n.as_table()) {
    Json o = Json::object();
    for (auto&& [k, v] : *t) {
      const std::string key(k.str());
      o[key] = toml_to_json(v, prefix.empty() ? key : prefix + "." + key, lines);
    }
    return o;
  }
  if (auto a = n.as_array()) {
    Json arr = Json::array();
    std::size_t i = 0;
    for (auto&& e : *a) arr.push_back(toml_to_json(e, prefix + "[" + std::to_string(i++) + "]", lines));
    return arr;
  }
  if (auto v = n.as_integer()) return Json(v->get());
  if (auto v = n.as_floating_point()) return Json(v->get());
  if (auto v = n.as_boolean()) return Json(v->get());
  if (auto v = n.as_string()) return Json(v->get());
  throw ConfigError("unsupported TOML value type at '" + prefix + "'");
}

inline std::size_t line_of_offset(const std::string& text, std::size_t off) {
  return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(std::min(off, text.size())), '\n')) + 1;
}

}  // namespace detail

inline RawConfig parse_config_text(const std::string& text, const std::string& path) {
  RawConfig raw;
  raw.path = path;
  const bool is_json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  if (is_json) {
    try {
      raw.doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ConfigError(path + ":" + std::to_string(detail::line_of_offset(text, e.byte)) + ": JSON parse error: " + e.what());
    }
    if (!raw.doc.is_object()) throw ConfigError(path + ": top level must be an object");
  } else {
    try {
      const toml::table tbl = toml::parse(text, path);
      raw.doc = detail::toml_to_json(tbl, "", raw.lines);
    } catch (const toml::parse_error& e) {
      throw ConfigError(path + ":" + std::to_string(e.source().begin.line) + ": TOML parse error: " +
                        std::string(e.description()));
    }
  }
  return raw;
}

inline RawConfig load_raw_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

struct DatasetConfig {
  std::string kind = "linear";
  double k = 1.0, sigma = 1.0, c = 0.0;
  std::int64_t n = 10000;
  std::string path;
  std::int64_t d = 20;
  double noise = 1.0;
  std::string moments = "population";
};

struct ModelConfig {
  std::string kind = "diagonal";
  std::int64_t depth = 1, width = 1, hidden = 20;
  std::vector<double> init;
  double init_scale = 0.5;
  double v0 = 1.0;
};

struct StepperSection {
  StepperConfig cfg;
  std::int64_t trajectories = 1;
  std::vector<double> temperatures;
};

struct DensityConfig {
  bool present = false;
  DensitySpec spec;
  std::optional<double> v_min, v_max;
  std::int64_t points = 1000;
  bool log_grid = false;
};

struct SweepConfig {
  std::vector<double> sigmas, temperatures, t_fractions;
};

struct CompareConfig {
  std::string trajectory;
  std::string column = "v";
  double burn_in = 0.2, max_lag1 = 0.5, tail_q_lo = 0.95, tail_q_hi = 0.999;
};

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::int64_t workers = 0;
  std::string output = "out";
  DatasetConfig dataset;
  ModelConfig model;
  StepperSection stepper;
  DensityConfig density;
  SweepConfig sweep;
  CompareConfig compare;
  Json resolved;  // every key that affects results, with its effective value

  void set_seed(std::uint64_t s) {
    seed = s;
    stepper.cfg.seed = s;
    resolved["seed"] = s;
  }

  std::string hash() const {
    const std::string s = resolved.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    std::ostringstream o;
    o << std::hex << h;
    return o.str();
  }
};

namespace detail {

class Reader {
 public:
  explicit Reader(const RawConfig& raw) : raw_(raw) {}

  void check_keys() const {
    std::vector<std::string> sections;
    for (const auto& s : config_schema())
      if (!s.name.empty()) sections.push_back(s.name);
    for (auto it = raw_.doc.begin(); it != raw_.doc.end(); ++it) {
      const std::string& k = it.key();
      if (it->is_object()) {
        if (std::find(sections.begin(), sections.end(), k) == sections.end())
          fail(k, "unknown section '" + k + "' (did you mean '" + nearest_match(k, sections) + "'?)");
        check_section(k, *it);
      } else {
        check_section_key("", k);
      }
    }
  }

  template <class T>
  std::optional<T> get(const std::string& section, const std::string& key) const {
    const Json* node = lookup(section, key);
    if (!node) return std::nullopt;
    const KeySpec& spec = key_spec(section, key);
    const std::string path = join(section, key);
    if constexpr (std::is_same_v<T, double>) {
      if (!node->is_number()) fail(path, "'" + path + "' must be a number");
      return node->get<double>();
    } else if constexpr (std::is_same_v<T, std::int64_t>) {
      if (!node->is_number_integer()) fail(path, "'" + path + "' must be an integer");
      return node->get<std::int64_t>();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!node->is_boolean()) fail(path, "'" + path + "' must be a boolean");
      return node->get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!node->is_string()) fail(path, "'" + path + "' must be a string");
      return node->get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!node->is_array()) fail(path, "'" + path + "' must be an array of numbers");
      std::vector<double> v;
      for (const auto& e : *node) {
        if (!e.is_number()) fail(path, "'" + path + "' must be an array of numbers");
        v.push_back(e.get<double>());
      }
      return v;
    }
    (void)spec;
    return std::nullopt;
  }

  bool has_section(const std::string& s) const { return raw_.doc.contains(s); }

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    throw ConfigError(raw_.where(path) + ": " + msg);
  }

 private:
  const RawConfig& raw_;

  static std::string join(const std::string& s, const std::string& k) { return s.empty() ? k : s + "." + k; }

  const Json* lookup(const std::string& section, const std::string& key) const {
    const Json* base = &raw_.doc;
    if (!section.empty()) {
      auto it = raw_.doc.find(section);
      if (it == raw_.doc.end()) return nullptr;
      base = &*it;
    }
    auto it = base->find(key);
    return it == base->end() ? nullptr : &*it;
  }

  static const SectionSpec& section_spec(const std::string& name) {
    for (const auto& s : config_schema())
      if (s.name == name) return s;
    throw ConfigError("internal: unknown section " + name);
  }

  static const KeySpec& key_spec(const std::string& section, const std::string& key) {
    for (const auto& k : section_spec(section).keys)
      if (k.name == key) return k;
    throw ConfigError("internal: unknown key " + key);
  }

  void check_section_key(const std::string& section, const std::string& key) const {
    std::vector<std::string> names;
    for (const auto& k : section_spec(section).keys) names.push_back(k.name);
    if (std::find(names.begin(), names.end(), key) == names.end()) {
      const std::string path = join(section, key);
      fail(path, "unknown key '" + path + "' (nearest match: '" + join(section, nearest_match(key, names)) + "')");
    }
  }

  void check_section(const std::string& section, const Json& obj) const {
    for (auto it = obj.begin(); it != obj.end(); ++it) check_section_key(section, it.key());
  }
};

}  // namespace detail

// Strict parse of a config document into a fully resolved ExperimentConfig.
inline ExperimentConfig build_config(const RawConfig& raw) {
  detail::Reader r(raw);
  r.check_keys();
  ExperimentConfig c;

  auto exp = r.get<std::string>("", "experiment");
  if (!exp) r.fail("experiment", "missing required field 'experiment'");
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), *exp) == names.end())
    r.fail("experiment", "unknown experiment '" + *exp + "' (nearest match: '" + nearest_match(*exp, names) + "')");
  c.experiment = *exp;
  if (auto v = r.get<std::int64_t>("", "seed")) {
    if (*v < 0) r.fail("seed", "seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(*v);
  }
  if (auto v = r.get<std::int64_t>("", "workers")) {
    if (*v < 0) r.fail("workers", "workers must be non-negative");
    c.workers = *v;
  }
  if (auto v = r.get<std::string>("", "output")) c.output = *v;

  auto& ds = c.dataset;
  if (auto v = r.get<std::string>("dataset", "kind")) ds.kind = *v;
  if (ds.kind != "linear" && ds.kind != "delta-zero" && ds.kind != "csv" && ds.kind != "relu")
    r.fail("dataset.kind", "dataset.kind must be linear, delta-zero, csv or relu");
  if (auto v = r.get<double>("dataset", "k")) ds.k = *v;
  if (auto v = r.get<double>("dataset", "sigma")) ds.sigma = *v;
  if (auto v = r.get<double>("dataset", "c")) ds.c = *v;
  if (auto v = r.get<std::int64_t>("dataset", "n")) ds.n = *v;
  if (auto v = r.get<std::string>("dataset", "path")) ds.path = *v;
  if (auto v = r.get<std::int64_t>("dataset", "d")) ds.d = *v;
  if (auto v = r.get<double>("dataset", "noise")) ds.noise = *v;
  if (auto v = r.get<std::string>("dataset", "moments")) ds.moments = *v;
  if (ds.n < 2) r.fail("dataset.n", "dataset.n must be at least 2");
  if (ds.sigma < 0) r.fail("dataset.sigma", "dataset.sigma must be non-negative");
  if (ds.d < 1) r.fail("dataset.d", "dataset.d must be at least 1");
  if (ds.moments != "population" && ds.moments != "empirical")
    r.fail("dataset.moments", "dataset.moments must be population or empirical");
  if (ds.kind == "csv" && ds.path.empty()) r.fail("dataset", "missing field 'dataset.path' for a csv dataset");

  auto& md = c.model;
  if (auto v = r.get<std::string>("model", "kind")) md.kind = *v;
  if (md.kind != "diagonal" && md.kind != "tanh" && md.kind != "relu")
    r.fail("model.kind", "model.kind must be diagonal, tanh or relu");
  if (auto v = r.get<std::int64_t>("model", "depth")) md.depth = *v;
  if (auto v = r.get<std::int64_t>("model", "width")) md.width = *v;
  if (auto v = r.get<std::int64_t>("model", "hidden")) md.hidden = *v;
  if (auto v = r.get<std::vector<double>>("model", "init")) md.init = *v;
  if (auto v = r.get<double>("model", "init_scale")) md.init_scale = *v;
  if (auto v = r.get<double>("model", "v0")) md.v0 = *v;
  if (md.depth < 0) r.fail("model.depth", "model.depth must be non-negative");
  if (md.width < 1) r.fail("model.width", "model.width must be at least 1");
  if (md.hidden < 1) r.fail("model.hidden", "model.hidden must be at least 1");
  if (md.kind == "tanh" && md.depth > 1) r.fail("model.depth", "tanh model depth must be 0 or 1");
  if (md.kind == "diagonal" && !md.init.empty() &&
      md.init.size() != static_cast<std::size_t>(md.width * (md.depth + 1)))
    r.fail("model.init", "model.init must have width*(depth+1) entries");

  auto& st = c.stepper;
  auto& sc = st.cfg;
  sc.eta = 1e-3;
  sc.steps = 100000;
  if (auto v = r.get<std::string>("stepper", "mode")) {
    try {
      sc.mode = parse_mode(*v);
    } catch (const ConfigError& e) {
      r.fail("stepper.mode", e.what());
    }
  }
  if (auto v = r.get<double>("stepper", "eta")) sc.eta = *v;
  if (auto v = r.get<std::int64_t>("stepper", "S")) sc.S = *v;
  if (auto v = r.get<double>("stepper", "gamma")) sc.gamma = *v;
  if (auto v = r.get<std::int64_t>("stepper", "steps")) sc.steps = *v;
  if (auto v = r.get<std::int64_t>("stepper", "record_every")) sc.record_every = *v;
  if (auto v = r.get<double>("stepper", "noise_scale")) sc.noise_scale = *v;
  if (auto v = r.get<double>("stepper", "dt")) sc.dt = *v;
  if (auto v = r.get<std::int64_t>("stepper", "trajectories")) st.trajectories = *v;
  if (auto v = r.get<std::vector<double>>("stepper", "temperatures")) st.temperatures = *v;
  if (sc.S < 1) r.fail("stepper.S", "stepper.S must be at least 1");
  if (!(sc.eta > 0)) r.fail("stepper.eta", "stepper.eta must be positive");
  sc.T = sc.eta / static_cast<double>(sc.S);
  if (auto v = r.get<double>("stepper", "T")) {
    if (std::abs(*v - sc.T) > 1e-12 * std::max(1.0, std::abs(sc.T))) r.fail("stepper.T", "T must equal eta/S");
  }
  if (st.trajectories < 1) r.fail("stepper.trajectories", "stepper.trajectories must be at least 1");
  for (double T : st.temperatures)
    if (!(T > 0)) r.fail("stepper.temperatures", "stepper.temperatures must be positive");
  try {
    sc.seed = c.seed;
    sc.validate();
  } catch (const ConfigError& e) {
    r.fail("stepper", e.what());
  }

  auto& dn = c.density;
  dn.present = r.has_section("density");
  auto& s = dn.spec;
  if (auto v = r.get<std::string>("density", "case")) {
    try {
      s.kind = parse_density_case(*v);
    } catch (const ConfigError& e) {
      r.fail("density.case", e.what());
    }
  }
  s.T = r.get<double>("density", "T").value_or(sc.T);
  s.gamma = r.get<double>("density", "gamma").value_or(sc.gamma);
  s.D = static_cast<int>(r.get<std::int64_t>("density", "D").value_or(md.depth));
  s.d = r.get<double>("density", "d").value_or(static_cast<double>(md.width));
  s.ratio = r.get<double>("density", "ratio").value_or(1.0);
  s.k = r.get<double>("density", "k").value_or(ds.k);
  s.c = r.get<double>("density", "c").value_or(ds.c);
  s.branch = static_cast<int>(r.get<std::int64_t>("density", "branch").value_or(1));
  s.z = r.get<double>("density", "z").value_or(0.0);
  dn.v_min = r.get<double>("density", "v_min");
  dn.v_max = r.get<double>("density", "v_max");
  dn.points = r.get<std::int64_t>("density", "points").value_or(1000);
  dn.log_grid = r.get<bool>("density", "log_grid").value_or(false);
  if (!(s.T > 0)) r.fail("density.T", "density.T must be positive");
  if (s.branch != 1 && s.branch != -1) r.fail("density.branch", "density.branch must be 1 or -1");
  if (!(s.z >= 0 && s.z <= 1)) r.fail("density.z", "density.z must lie in [0, 1]");
  if (dn.points < 2) r.fail("density.points", "density.points must be at least 2");
  if (dn.v_min && dn.v_max && !(*dn.v_max > *dn.v_min)) r.fail("density.v_max", "density.v_max must exceed v_min");

  if (auto v = r.get<std::vector<double>>("sweep", "sigmas")) c.sweep.sigmas = *v;
  if (auto v = r.get<std::vector<double>>("sweep", "temperatures")) c.sweep.temperatures = *v;
  if (auto v = r.get<std::vector<double>>("sweep", "t_fractions")) c.sweep.t_fractions = *v;

  auto& cp = c.compare;
  if (auto v = r.get<std::string>("compare", "trajectory")) cp.trajectory = *v;
  if (auto v = r.get<std::string>("compare", "column")) cp.column = *v;
  if (auto v = r.get<double>("compare", "burn_in")) cp.burn_in = *v;
  if (auto v = r.get<double>("compare", "max_lag1")) cp.max_lag1 = *v;
  if (auto v = r.get<double>("compare", "tail_q_lo")) cp.tail_q_lo = *v;
  if (auto v = r.get<double>("compare", "tail_q_hi")) cp.tail_q_hi = *v;
  if (!(cp.burn_in >= 0 && cp.burn_in < 1)) r.fail("compare.burn_in", "compare.burn_in must lie in [0, 1)");
  if (!(cp.tail_q_lo < cp.tail_q_hi)) r.fail("compare.tail_q_hi", "compare.tail_q_hi must exceed tail_q_lo");

  Json& j = c.resolved;
  j["experiment"] = c.experiment;
  j["seed"] = c.seed;
  j["dataset"] = {{"kind", ds.kind}, {"k", ds.k}, {"sigma", ds.sigma}, {"c", ds.c}, {"n", ds.n},
                  {"path", ds.path}, {"d", ds.d}, {"noise", ds.noise}, {"moments", ds.moments}};
  j["model"] = {{"kind", md.kind}, {"depth", md.depth}, {"width", md.width}, {"hidden", md.hidden},
                {"init", md.init}, {"init_scale", md.init_scale}, {"v0", md.v0}};
  j["stepper"] = {{"mode", mode_name(sc.mode)}, {"eta", sc.eta}, {"S", sc.S}, {"T", sc.T},
                  {"gamma", sc.gamma}, {"steps", sc.steps}, {"record_every", sc.record_every},
                  {"noise_scale", sc.noise_scale}, {"dt", sc.time_step()},
                  {"trajectories", st.trajectories}, {"temperatures", st.temperatures}};
  j["density"] = {{"case", density_case_name(s.kind)}, {"T", s.T}, {"gamma", s.gamma}, {"D", s.D},
                  {"d", s.d}, {"ratio", s.ratio}, {"k", s.k}, {"c", s.c}, {"branch", s.branch},
                  {"z", s.z}, {"points", dn.points}, {"log_grid", dn.log_grid}};
  if (dn.v_min) j["density"]["v_min"] = *dn.v_min;
  if (dn.v_max) j["density"]["v_max"] = *dn.v_max;
  j["sweep"] = {{"sigmas", c.sweep.sigmas}, {"temperatures", c.sweep.temperatures},
                {"t_fractions", c.sweep.t_fractions}};
  j["compare"] = {{"trajectory", cp.trajectory}, {"column", cp.column}, {"burn_in", cp.burn_in},
                  {"max_lag1", cp.max_lag1}, {"tail_q_lo", cp.tail_q_lo}, {"tail_q_hi", cp.tail_q_hi}};
  return c;
}

inline ExperimentConfig validate_config(const std::string& path) { return build_config(load_raw_config(path)); }

}  // namespace sgdlab
