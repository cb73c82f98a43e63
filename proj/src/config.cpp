#include "prefsamp/config.hpp"

#include "prefsamp/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace prefsamp {

namespace {

namespace pt = boost::property_tree;

struct Field {
  std::string section, key;
  std::function<std::string()> get;
  std::function<void(const std::string &)> set;
};

[[noreturn]] void bad(const std::string &what) { throw std::invalid_argument(what); }

double to_double(const std::string &s) {
  double v;
  const char *b = s.data(), *e = b + s.size();
  if (b != e && *b == '+')
    ++b;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e)
    bad("expected a number, got '" + s + "'");
  return v;
}

template <typename I> I to_integer(const std::string &s) {
  I v;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    bad("expected an integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string &s) {
  if (s == "true" || s == "yes" || s == "1" || s == "on")
    return true;
  if (s == "false" || s == "no" || s == "0" || s == "off")
    return false;
  bad("expected true or false, got '" + s + "'");
}

class Binder {
public:
  std::vector<Field> fields;

  void num(const std::string &sec, const std::string &key, double &v) {
    fields.push_back({sec, key, [&v] { return format_double(v); }, [&v](const std::string &s) { v = to_double(s); }});
  }
  void integer(const std::string &sec, const std::string &key, int &v) {
    fields.push_back(
        {sec, key, [&v] { return std::to_string(v); }, [&v](const std::string &s) { v = to_integer<int>(s); }});
  }
  void size(const std::string &sec, const std::string &key, std::size_t &v) {
    fields.push_back({sec, key, [&v] { return std::to_string(v); },
                      [&v](const std::string &s) { v = to_integer<std::size_t>(s); }});
  }
  void u64(const std::string &sec, const std::string &key, std::uint64_t &v) {
    fields.push_back({sec, key, [&v] { return std::to_string(v); },
                      [&v](const std::string &s) { v = to_integer<std::uint64_t>(s); }});
  }
  void flag(const std::string &sec, const std::string &key, bool &v) {
    fields.push_back(
        {sec, key, [&v] { return std::string(v ? "true" : "false"); }, [&v](const std::string &s) { v = to_bool(s); }});
  }
  void text(const std::string &sec, const std::string &key, std::string &v) {
    fields.push_back({sec, key, [&v] { return v; }, [&v](const std::string &s) { v = s; }});
  }
  template <typename E> void choice(const std::string &sec, const std::string &key, E &v,
                                    std::vector<std::pair<E, std::string>> names) {
    fields.push_back({sec, key,
                      [&v, names] {
                        for (const auto &[e, n] : names)
                          if (e == v)
                            return n;
                        return std::string{};
                      },
                      [&v, names](const std::string &s) {
                        std::string options;
                        for (const auto &[e, n] : names) {
                          if (n == s) {
                            v = e;
                            return;
                          }
                          options += (options.empty() ? "" : ", ") + n;
                        }
                        bad("expected one of " + options + ", got '" + s + "'");
                      }});
  }
  void matern(const std::string &sec, const std::string &prefix, MaternParams &m) {
    num(sec, prefix + "_range", m.range);
    num(sec, prefix + "_sd", m.sd);
  }
  void list(const std::string &sec, const std::string &key, std::vector<double> &v) {
    fields.push_back({sec, key,
                      [&v] {
                        std::string s;
                        for (std::size_t k = 0; k < v.size(); ++k)
                          s += (k ? ", " : "") + format_double(v[k]);
                        return s;
                      },
                      [&v](const std::string &s) {
                        v.clear();
                        std::istringstream in(s);
                        std::string item;
                        while (std::getline(in, item, ',')) {
                          const auto b = item.find_first_not_of(' '), e = item.find_last_not_of(' ');
                          if (b == std::string::npos)
                            bad("empty list entry");
                          v.push_back(to_double(item.substr(b, e - b + 1)));
                        }
                        if (v.empty())
                          bad("empty list");
                      }});
  }
};

std::vector<std::pair<Lag, std::string>> lag_names() { return {{Lag::reactive, "reactive"}, {Lag::concurrent, "concurrent"}}; }

Binder bind(RunConfig &c) {
  Binder b;
  b.text("data", "sites", c.sites);
  b.text("data", "observations", c.observations);
  b.text("data", "domain", c.domain);
  b.text("data", "exclusions", c.exclusions);
  b.num("data", "min_capture", c.min_capture);

  JointModelSpec &s = c.spec;
  b.integer("model", "implementation", s.implementation);
  b.choice("model", "population", c.population,
           {{PopulationMode::network, "network"}, {PopulationMode::domain, "domain"}});
  b.num("model", "pseudo_spacing", c.pseudo_spacing);
  b.flag("model", "observation", s.observation);
  b.flag("model", "gamma1", s.gamma1);
  b.flag("model", "gamma2", s.gamma2);
  b.flag("model", "beta0", s.beta0);
  b.flag("model", "beta1", s.beta1);
  b.flag("model", "beta2", s.beta2);
  b.flag("model", "beta0_per_year", s.beta0_per_year);
  b.flag("model", "b_intercept", s.b_intercept);
  b.flag("model", "b_slope", s.b_slope);
  b.flag("model", "selection", s.selection);
  b.integer("model", "first_selection_year", s.first_selection_year);
  b.flag("model", "alpha1", s.alpha1);
  b.flag("model", "alpha2", s.alpha2);
  b.flag("model", "retention", s.retention);
  b.flag("model", "repulsion", s.repulsion);
  b.num("model", "repulsion_distance", s.repulsion_distance);
  b.flag("model", "beta_star0", s.beta_star0);
  b.flag("model", "beta_star1", s.beta_star1);
  b.flag("model", "share_b", s.share_b);
  b.flag("model", "share_beta", s.share_beta);
  b.choice("model", "lag", s.lag, lag_names());

  b.num("mesh", "min_edge", c.mesh.min_edge);
  b.num("mesh", "max_edge", c.mesh.max_edge);
  b.num("mesh", "min_angle", c.mesh.min_angle);
  b.flag("mesh", "exterior_band", c.mesh.exterior_band);
  b.num("mesh", "band_width", c.mesh.band_width);
  b.size("mesh", "max_vertices", c.mesh.max_vertices);

  PriorSettings &p = c.priors;
  b.num("priors", "gamma_shape", p.gamma_shape);
  b.num("priors", "gamma_rate", p.gamma_rate);
  b.num("priors", "wishart_dof", p.wishart_dof);
  b.num("priors", "pc_range0", p.pc_range0);
  b.num("priors", "pc_alpha_range", p.pc_alpha_range);
  b.num("priors", "pc_sd0", p.pc_sd0);
  b.num("priors", "pc_alpha_sd", p.pc_alpha_sd);
  b.num("priors", "ar1_z_variance", p.ar1_z_variance);
  b.num("priors", "d_variance", p.d_variance);
  b.num("priors", "fixed_precision", p.fixed_precision);

  b.num("optimizer", "spread_tol", c.outer.spread_tol);
  b.integer("optimizer", "max_evaluations", c.outer.max_evaluations);
  b.num("optimizer", "initial_step", c.outer.initial_step);
  b.integer("optimizer", "restarts", c.outer.restarts);
  b.num("optimizer", "hessian_step", c.outer.hessian_step);
  b.flag("optimizer", "compute_covariance", c.outer.compute_covariance);
  b.integer("optimizer", "inner_max_iter", c.inner.max_iter);
  b.num("optimizer", "inner_grad_tol", c.inner.grad_tol);
  b.integer("optimizer", "inner_max_halvings", c.inner.max_halvings);

  b.integer("posterior", "draws", c.draws);
  b.integer("posterior", "threads", c.threads);

  b.u64("run", "seed", c.seed);
  b.text("run", "output", c.output);

  SimConfig &m = c.sim;
  b.integer("simulation", "grid_n", m.grid_n);
  b.num("simulation", "extent", m.extent);
  b.integer("simulation", "n_population", m.n_population);
  b.integer("simulation", "n_initial", m.n_initial);
  b.integer("simulation", "years", m.N);
  b.choice("simulation", "design", m.design,
           {{TemporalDesign::rigid_quadratic, "rigid"}, {TemporalDesign::independent_fields, "independent"}});
  b.num("simulation", "gamma0", m.gamma[0]);
  b.num("simulation", "gamma1", m.gamma[1]);
  b.num("simulation", "gamma2", m.gamma[2]);
  b.matern("simulation", "beta0", m.beta[0]);
  b.matern("simulation", "beta1", m.beta[1]);
  b.matern("simulation", "beta2", m.beta[2]);
  b.num("simulation", "sd_b1", m.sd_b1);
  b.num("simulation", "sd_b2", m.sd_b2);
  b.num("simulation", "rho_b", m.rho_b);
  b.num("simulation", "sigma2_eps", m.sigma2_eps);
  b.num("simulation", "alpha0", m.alpha0);
  b.num("simulation", "alpha1", m.alpha1);
  b.num("simulation", "alpha2", m.alpha2);
  b.num("simulation", "alpha_ret", m.alpha_ret);
  b.num("simulation", "alpha_rep", m.alpha_rep);
  b.num("simulation", "repulsion_distance", m.repulsion_distance);
  b.matern("simulation", "beta_star0", m.beta_star0);
  b.num("simulation", "sigma2_a", m.sigma2_a);
  b.num("simulation", "rho_a", m.rho_a);
  b.num("simulation", "d_b", m.d_b);
  b.num("simulation", "d_beta", m.d_beta);
  b.choice("simulation", "lag", m.lag, lag_names());

  b.integer("study", "replicates", c.replicates);
  b.integer("study", "implementation", c.study_implementation);

  b.num("convergence", "extent", c.convergence.extent);
  b.num("convergence", "b0", c.convergence.b0);
  b.num("convergence", "b1", c.convergence.b1);
  b.integer("convergence", "replicates", c.convergence.replicates);
  b.list("convergence", "spacings", c.spacings);
  return b;
}

const std::vector<std::string> constant_keys{"global_mean", "coord_scale", "year_min", "year_max"};

// Line of each "[section] key" and section header, for error messages.
std::map<std::string, int> key_lines(const std::string &text) {
  std::map<std::string, int> out;
  std::istringstream in(text);
  std::string line, section;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == ';' || line[b] == '#')
      continue;
    if (line[b] == '[') {
      section = line.substr(b + 1, line.find(']') - b - 1);
      out.emplace("[" + section + "]", n);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      continue;
    std::string key = line.substr(b, eq - b);
    key.erase(key.find_last_not_of(" \t") + 1);
    out.emplace("[" + section + "] " + key, n);
  }
  return out;
}

void check_semantics(const RunConfig &c, const std::function<std::string(const std::string &)> &where) {
  auto fail = [&](const std::string &id, const std::string &what) { throw ConfigError(where(id), what); };
  if (c.spec.implementation < 1 || c.spec.implementation > 3)
    fail("[model] implementation", "must be 1, 2 or 3");
  if (c.study_implementation < 1 || c.study_implementation > 3)
    fail("[study] implementation", "must be 1, 2 or 3");
  if (!(c.min_capture >= 0.0 && c.min_capture <= 1.0))
    fail("[data] min_capture", "must lie in [0, 1]");
  if (c.pseudo_spacing < 0)
    fail("[model] pseudo_spacing", "must be nonnegative");
  if (c.draws < 1)
    fail("[posterior] draws", "must be positive");
  if (c.threads < 1)
    fail("[posterior] threads", "must be positive");
  if (c.replicates < 1)
    fail("[study] replicates", "must be positive");
  if (c.convergence.replicates < 1)
    fail("[convergence] replicates", "must be positive");
  for (double h : c.spacings)
    if (!(h > 0))
      fail("[convergence] spacings", "spacings must be positive");
  if (!(c.mesh.max_edge > 0) || c.mesh.min_edge < 0 || c.mesh.min_edge > c.mesh.max_edge)
    fail("[mesh] max_edge", "need 0 <= min_edge <= max_edge and max_edge > 0");
  try {
    c.spec.validate();
  } catch (const Error &e) {
    fail("[model]", e.what());
  }
  try {
    c.sim.validate();
  } catch (const Error &e) {
    fail("[simulation]", e.what());
  }
  namespace fs = std::filesystem;
  for (const auto &[id, p] : {std::pair<std::string, std::string>{"[data] sites", c.sites},
                              {"[data] observations", c.observations},
                              {"[data] domain", c.domain},
                              {"[data] exclusions", c.exclusions}})
    if (!p.empty() && !fs::exists(c.resolve(p)))
      fail(id, "file not found: " + c.resolve(p));
}

} // namespace

std::string RunConfig::resolve(const std::string &p) const {
  namespace fs = std::filesystem;
  if (p.empty() || fs::path(p).is_absolute() || base_dir.empty())
    return p;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

StudyOptions RunConfig::study_options() const {
  StudyOptions o;
  o.mesh = mesh;
  o.outer = outer;
  o.inner = inner;
  o.priors = priors;
  o.threads = threads;
  o.pseudo_spacing = pseudo_spacing;
  return o;
}

bool RunConfig::operator==(const RunConfig &o) const {
  RunConfig a = *this, b = o;
  a.base_dir.clear();
  b.base_dir.clear();
  return config_text(a) == config_text(b);
}

RunConfig parse_config(const std::string &text, const std::string &source, const std::string &base_dir) {
  const auto lines = key_lines(text);
  auto where = [&](const std::string &id) {
    const auto it = lines.find(id);
    return source + (it != lines.end() ? ":" + std::to_string(it->second) : std::string{}) + ": " + id;
  };
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error &e) {
    throw ConfigError(source + ":" + std::to_string(e.line()), e.message());
  }

  RunConfig c;
  c.base_dir = base_dir;
  Binder b = bind(c);
  std::map<std::string, Field *> index;
  for (auto &f : b.fields)
    index["[" + f.section + "] " + f.key] = &f;

  for (const auto &[section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError(where(section), "key outside any section");
    if (section == "constants") {
      PreprocessConstants k;
      std::set<std::string> seen;
      for (const auto &[key, v] : body) {
        const std::string id = "[constants] " + key;
        const std::string value = v.data();
        try {
          if (key == "global_mean")
            k.global_mean = to_double(value);
          else if (key == "coord_scale")
            k.coord_scale = to_double(value);
          else if (key == "year_min")
            k.year_min = to_integer<int>(value);
          else if (key == "year_max")
            k.year_max = to_integer<int>(value);
          else
            throw ConfigError(where(id), "unknown key");
        } catch (const std::invalid_argument &e) {
          throw ConfigError(where(id), e.what());
        }
        seen.insert(key);
      }
      for (const auto &key : constant_keys)
        if (!seen.count(key))
          throw ConfigError(where("[constants]"), "missing " + key);
      if (!(k.global_mean > 0) || !(k.coord_scale > 0) || k.year_max <= k.year_min)
        throw ConfigError(where("[constants]"), "constants must have positive mean and scale, year_max > year_min");
      c.constants = k;
      continue;
    }
    for (const auto &[key, v] : body) {
      const std::string id = "[" + section + "] " + key;
      const auto it = index.find(id);
      if (it == index.end())
        throw ConfigError(where(id), "unknown key");
      try {
        it->second->set(v.data());
      } catch (const std::invalid_argument &e) {
        throw ConfigError(where(id), e.what());
      }
    }
  }
  c.sim.seed = c.seed;
  c.convergence.seed = c.seed;
  check_semantics(c, where);
  return c;
}

RunConfig load_config(const std::string &path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError &e) {
    throw ConfigError(path, e.what());
  }
  return parse_config(text, path, std::filesystem::path(path).parent_path().string());
}

std::string config_text(const RunConfig &c) {
  RunConfig copy = c;
  Binder b = bind(copy);
  std::string out, section;
  for (const auto &f : b.fields) {
    if (f.section != section) {
      section = f.section;
      out += (out.empty() ? "" : "\n") + ("[" + section + "]\n");
    }
    out += f.key + " = " + f.get() + "\n";
    if (section == "model" && f.key == "lag" && c.constants) {
      const auto &k = *c.constants;
      out += "\n[constants]\nglobal_mean = " + format_double(k.global_mean) +
             "\ncoord_scale = " + format_double(k.coord_scale) + "\nyear_min = " + std::to_string(k.year_min) +
             "\nyear_max = " + std::to_string(k.year_max) + "\n";
      section = "constants";
    }
  }
  return out;
}

void save_config(const RunConfig &c, const std::string &path) { write_file_atomic(path, config_text(c)); }

} // namespace prefsamp
