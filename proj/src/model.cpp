#include "prefsamp/model.hpp"

#include "prefsamp/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

namespace prefsamp {

// ---------------------------------------------------------------- sites

std::vector<Index> SiteTable::observed_sites() const {
  std::vector<Index> out;
  for (Index i = 0; i < num_sites(); ++i)
    if (kind[i] == SiteKind::observed)
      out.push_back(i);
  return out;
}

std::vector<std::string> SiteTable::validate() const {
  const Index n = num_sites();
  const int N = num_years();
  if (N < 1)
    throw DataError("site table has no years");
  if (static_cast<Index>(site_id.size()) != n || static_cast<Index>(kind.size()) != n || r.rows() != n ||
      r.cols() != N || y.rows() != n || y.cols() != N)
    throw DataError("site table columns have inconsistent sizes");
  if (covariates.size() > 0 && covariates.rows() != n)
    throw DataError("site covariates need one row per site");
  std::vector<std::string> warnings;
  for (Index i = 0; i < n; ++i) {
    const std::string who = "site " + std::to_string(site_id[i]);
    bool any = false, removed = false;
    for (int j = 0; j < N; ++j) {
      const int rij = r(i, j);
      if (rij != 0 && rij != 1)
        throw DataError(who + ": selection indicator must be 0 or 1");
      if (kind[i] == SiteKind::pseudo && (rij == 1 || has_y(i, j)))
        throw DataError(who + ": pseudo sites carry no selections or responses");
      if (rij == 0 && has_y(i, j))
        throw DataError(who + ": response recorded in a year the site was not selected");
      if (kind[i] == SiteKind::observed && rij == 1 && !has_y(i, j))
        warnings.push_back(who + ": selected in year " + std::to_string(j + 1) + " without a response");
      if (rij == 1 && removed)
        warnings.push_back(who + ": re-installed in year " + std::to_string(j + 1) + " after removal");
      if (j > 0 && r(i, j - 1) == 1 && rij == 0)
        removed = true;
      any = any || rij == 1;
    }
    if (kind[i] == SiteKind::observed && !any)
      throw DataError(who + ": observed site never selected");
  }
  return warnings;
}

void SiteTable::add_pseudo_sites(const PointList &points, long first_id) {
  const Index n0 = num_sites(), n = n0 + static_cast<Index>(points.size());
  const int N = num_years();
  r.conservativeResize(n, N);
  y.conservativeResize(n, N);
  if (covariates.size() > 0)
    throw DataError("pseudo sites need covariate values; append them to the table directly");
  for (Index k = 0; k < static_cast<Index>(points.size()); ++k) {
    site_id.push_back(first_id + k);
    location.push_back(points[k]);
    kind.push_back(SiteKind::pseudo);
    r.row(n0 + k).setZero();
    y.row(n0 + k).setConstant(std::numeric_limits<double>::quiet_NaN());
  }
}

Vector unit_times(int years) {
  Vector t(years);
  for (int j = 0; j < years; ++j)
    t(j) = years > 1 ? static_cast<double>(j) / (years - 1) : 0.0;
  return t;
}

// ---------------------------------------------------------------- spec

namespace {

std::vector<CopySpec> derived_copies(const JointModelSpec &s) {
  if (!s.copies.empty())
    return s.copies;
  std::vector<CopySpec> out;
  if (!s.shares() || !s.observation)
    return out;
  if (s.share_b && s.b_intercept) {
    CopySpec c{{"b0"}, {TimeWeight::one}, s.lag, "d_b"};
    if (s.b_slope) {
      c.sources.push_back("b1");
      c.weights.push_back(TimeWeight::t);
    }
    out.push_back(c);
  }
  if (s.share_beta && (s.beta0 || s.beta1 || s.beta2)) {
    CopySpec c{{}, {}, s.lag, "d_beta"};
    const std::array<TimeWeight, 3> w{TimeWeight::one, TimeWeight::t, TimeWeight::t2};
    const std::array<bool, 3> on{s.beta0, s.beta1, s.beta2};
    for (int k = 0; k < 3; ++k)
      if (on[k]) {
        c.sources.push_back("beta" + std::to_string(k));
        c.weights.push_back(w[k]);
      }
    out.push_back(c);
  }
  return out;
}

double time_weight(TimeWeight w, double t) {
  switch (w) {
  case TimeWeight::one:
    return 1.0;
  case TimeWeight::t:
    return t;
  case TimeWeight::t2:
    return t * t;
  }
  return 0.0;
}

const std::array<std::string, 3> kBeta{"beta0", "beta1", "beta2"};

} // namespace

void JointModelSpec::validate() const {
  if (implementation < 1 || implementation > 3)
    throw ParameterError("implementation must be 1, 2 or 3");
  if (!observation && !selection)
    throw ParameterError("model needs an observation or a selection part");
  if (b_slope && !b_intercept)
    throw ParameterError("random slopes b1 need random intercepts b0");
  if (beta0_per_year && !beta0)
    throw ParameterError("beta0_per_year requires beta0");
  if (first_selection_year < 1)
    throw ParameterError("first_selection_year must be at least 1");
  if (repulsion && !(repulsion_distance > 0))
    throw ParameterError("repulsion distance c must be positive");
  if (selection_covariates < 0)
    throw ParameterError("selection_covariates must be non-negative");
  for (const auto &c : copies) {
    if (c.sources.size() != c.weights.size())
      throw ParameterError("copy term needs one time weight per source");
    if (c.scale_param != "d_b" && c.scale_param != "d_beta")
      throw ParameterError("copy scale must be d_b or d_beta, got '" + c.scale_param + "'");
  }
}

// ---------------------------------------------------------------- theta

ThetaCodec::ThetaCodec(const JointModelSpec &spec) : spec_(spec) {
  spec.validate();
  auto add = [&](std::string name, ThetaTransform t) { entries_.push_back({std::move(name), t}); };
  if (spec.observation) {
    add("log_sigma2_eps", ThetaTransform::log);
    const std::array<bool, 3> on{spec.beta0, spec.beta1, spec.beta2};
    for (int k = 0; k < 3; ++k)
      if (on[k]) {
        add("log_range_" + kBeta[k], ThetaTransform::log);
        add("log_sd_" + kBeta[k], ThetaTransform::log);
      }
    if (spec.b_intercept) {
      add("log_sd_b1", ThetaTransform::log);
      if (spec.b_slope) {
        add("log_sd_b2", ThetaTransform::log);
        add("z_b", ThetaTransform::corr_z);
      }
    }
  }
  if (spec.selection) {
    if (spec.beta_star0) {
      add("log_range_beta_star0", ThetaTransform::log);
      add("log_sd_beta_star0", ThetaTransform::log);
    }
    if (spec.beta_star1) {
      add("log_sigma2_a", ThetaTransform::log);
      add("z_a", ThetaTransform::corr_z);
    }
  }
  if (spec.shares()) {
    std::set<std::string> scales;
    for (const auto &c : derived_copies(spec))
      scales.insert(c.scale_param);
    for (const char *d : {"d_b", "d_beta"})
      if (scales.count(d))
        add(d, ThetaTransform::identity);
  }
}

std::vector<std::string> ThetaCodec::names() const {
  std::vector<std::string> out;
  for (const auto &e : entries_)
    out.push_back(e.name);
  return out;
}

Index ThetaCodec::find(const std::string &name) const {
  for (std::size_t k = 0; k < entries_.size(); ++k)
    if (entries_[k].name == name)
      return static_cast<Index>(k);
  return -1;
}

namespace {

// Natural-scale accessor for each named theta entry.
double *hyper_slot(Hyperparameters &h, const std::string &name) {
  if (name == "log_sigma2_eps")
    return &h.sigma2_eps;
  for (int k = 0; k < 3; ++k) {
    if (name == "log_range_" + kBeta[k])
      return &h.zeta[k].range;
    if (name == "log_sd_" + kBeta[k])
      return &h.zeta[k].sd;
  }
  if (name == "log_sd_b1")
    return &h.sd_b1;
  if (name == "log_sd_b2")
    return &h.sd_b2;
  if (name == "z_b")
    return &h.rho_b;
  if (name == "log_range_beta_star0")
    return &h.zeta_R.range;
  if (name == "log_sd_beta_star0")
    return &h.zeta_R.sd;
  if (name == "log_sigma2_a")
    return &h.sigma2_a;
  if (name == "z_a")
    return &h.rho_a;
  if (name == "d_b")
    return &h.d_b;
  if (name == "d_beta")
    return &h.d_beta;
  throw ParameterError("unknown hyperparameter '" + name + "'");
}

} // namespace

Vector ThetaCodec::encode(const Hyperparameters &h) const {
  Hyperparameters copy = h;
  Vector theta(size());
  for (Index k = 0; k < size(); ++k) {
    const double v = *hyper_slot(copy, entries_[k].name);
    switch (entries_[k].transform) {
    case ThetaTransform::log:
      if (!(v > 0))
        throw ParameterError(entries_[k].name + " requires a positive value");
      theta(k) = std::log(v);
      break;
    case ThetaTransform::corr_z:
      if (!(std::abs(v) < 1))
        throw ParameterError(entries_[k].name + " requires |rho| < 1");
      theta(k) = z_from_corr(v);
      break;
    case ThetaTransform::identity:
      theta(k) = v;
      break;
    }
  }
  return theta;
}

Hyperparameters ThetaCodec::decode(const Vector &theta, const Hyperparameters &base) const {
  if (theta.size() != size())
    throw ParameterError("theta has " + std::to_string(theta.size()) + " entries, expected " +
                         std::to_string(size()));
  Hyperparameters h = base;
  if (!spec_.shares()) {
    h.d_b = 0.0;
    h.d_beta = 0.0;
  }
  for (Index k = 0; k < size(); ++k) {
    double &v = *hyper_slot(h, entries_[k].name);
    switch (entries_[k].transform) {
    case ThetaTransform::log:
      v = std::exp(theta(k));
      break;
    case ThetaTransform::corr_z:
      v = corr_from_z(theta(k));
      break;
    case ThetaTransform::identity:
      v = theta(k);
      break;
    }
  }
  return h;
}

double ThetaCodec::log_prior(const Vector &theta, const PriorSettings &s) const {
  auto at = [&](const std::string &name) { return theta(find(name)); };
  double lp = 0.0;
  if (find("log_sigma2_eps") >= 0)
    lp += priors::gamma_precision_log_variance(at("log_sigma2_eps"), s.gamma_shape, s.gamma_rate);
  for (const std::string f : {"beta0", "beta1", "beta2", "beta_star0"})
    if (find("log_range_" + f) >= 0)
      lp += priors::pc_matern_internal(at("log_range_" + f), at("log_sd_" + f), s);
  if (find("z_b") >= 0)
    lp += priors::wishart2_internal(at("log_sd_b1"), at("log_sd_b2"), at("z_b"), s.wishart_dof);
  else if (find("log_sd_b1") >= 0)
    lp += priors::wishart1_internal(at("log_sd_b1"), s.wishart_dof);
  if (find("log_sigma2_a") >= 0) {
    lp += priors::gamma_precision_log_variance(at("log_sigma2_a"), s.gamma_shape, s.gamma_rate);
    lp += priors::gaussian_logpdf(at("z_a"), 0.0, s.ar1_z_variance);
  }
  for (const char *d : {"d_b", "d_beta"})
    if (find(d) >= 0)
      lp += priors::gaussian_logpdf(at(d), 0.0, s.d_variance);
  return lp;
}

// ---------------------------------------------------------------- layout

const Block *Layout::find(const std::string &name) const {
  for (const auto &b : blocks)
    if (b.name == name)
      return &b;
  return nullptr;
}

const Block &Layout::at(const std::string &name) const {
  const Block *b = find(name);
  if (!b)
    throw AssemblyError("layout has no block '" + name + "'");
  return *b;
}

Index Layout::fixed(const std::string &name) const {
  const auto it = std::find(fixed_names.begin(), fixed_names.end(), name);
  return it == fixed_names.end() ? -1 : static_cast<Index>(it - fixed_names.begin());
}

std::string Layout::to_text() const {
  std::ostringstream os;
  os << "block offset size\n";
  for (const auto &b : blocks)
    os << b.name << " " << b.offset << " " << b.size << "\n";
  for (std::size_t k = 0; k < fixed_names.size(); ++k)
    os << "fixed[" << k << "] " << fixed_names[k] << "\n";
  return os.str();
}

// ---------------------------------------------------------------- covariates

std::vector<int> repulsion_covariate(const SiteTable &sites, int year, double c) {
  const Index n = sites.num_sites();
  std::vector<int> out(n, 0);
  if (year <= 0 || n == 0)
    return out;
  // Bucket the sites online last year on a grid of cell size c.
  std::unordered_map<long long, std::vector<Index>> grid;
  auto key = [&](long long gx, long long gy) { return gx * 1000003LL + gy; };
  auto cell = [&](double v) { return static_cast<long long>(std::floor(v / c)); };
  for (Index l = 0; l < n; ++l)
    if (sites.r(l, year - 1) == 1)
      grid[key(cell(sites.location[l].x()), cell(sites.location[l].y()))].push_back(l);
  const double c2 = c * c;
  for (Index i = 0; i < n && !grid.empty(); ++i) {
    const Point &p = sites.location[i];
    const long long gx = cell(p.x()), gy = cell(p.y());
    for (long long dx = -1; dx <= 1 && !out[i]; ++dx)
      for (long long dy = -1; dy <= 1 && !out[i]; ++dy) {
        const auto it = grid.find(key(gx + dx, gy + dy));
        if (it == grid.end())
          continue;
        for (Index l : it->second)
          if (l != i && (sites.location[l] - p).squaredNorm() < c2) {
            out[i] = 1;
            break;
          }
      }
  }
  return out;
}

std::vector<LedgerEntry> zero_ledger(const SiteTable &sites, int implementation, int first_year) {
  std::vector<LedgerEntry> out;
  const int N = sites.num_years();
  for (int j = std::max(first_year, 0); j < N; ++j)
    for (Index i = 0; i < sites.num_sites(); ++i) {
      const bool pseudo = sites.kind[i] == SiteKind::pseudo;
      const int rij = sites.r(i, j);
      if (implementation != 3) {
        if (!pseudo)
          out.push_back({i, j, rij});
        continue;
      }
      if (rij == 1)
        out.push_back({i, j, 1});
      else if (pseudo)
        out.push_back({i, j, 0});
      else if (j > 0 && sites.r(i, j - 1) == 1)
        out.push_back({i, j, 0});
    }
  return out;
}

SpMat ar1_precision(int n, double rho, double sigma2) {
  if (!(sigma2 > 0) || !(std::abs(rho) < 1))
    throw ParameterError("AR1 needs sigma2 > 0 and |rho| < 1");
  std::vector<Triplet> t;
  const double s = 1.0 / (sigma2 * (1.0 - rho * rho));
  for (int k = 0; k < n; ++k) {
    const double diag = (k == 0 || k == n - 1) ? 1.0 : 1.0 + rho * rho;
    t.emplace_back(k, k, n == 1 ? 1.0 - rho * rho : diag);
    if (k + 1 < n) {
      t.emplace_back(k, k + 1, -rho);
      t.emplace_back(k + 1, k, -rho);
    }
  }
  SpMat Q(n, n);
  Q.setFromTriplets(t.begin(), t.end());
  return Q * s;
}

// ---------------------------------------------------------------- assembly

namespace {

struct RowBuilder {
  std::vector<Triplet> trips;
  Index rows = 0;
  void add(Index col, double v) {
    if (v != 0.0)
      trips.emplace_back(rows, col, v);
  }
  void next() { ++rows; }
  SpMat build(Index cols) const {
    SpMat m(rows, cols);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
  }
};

// Projector weights of one row of a row-major copy.
using Weights = std::vector<std::pair<Index, double>>;

std::vector<Weights> projector_rows(const SpMat &P) {
  std::vector<Weights> out(P.rows());
  for (Index k = 0; k < P.outerSize(); ++k)
    for (SpMat::InnerIterator it(P, k); it; ++it)
      out[it.row()].emplace_back(it.col(), it.value());
  for (auto &w : out)
    std::sort(w.begin(), w.end());
  return out;
}

} // namespace

AssembledModel assemble(const JointModelSpec &spec, const SiteTable &sites, const Mesh &mesh,
                        const PriorSettings &priors) {
  spec.validate();
  sites.validate();
  AssembledModel m;
  m.spec = spec;
  m.priors = priors;
  m.mesh = mesh;
  m.sites = sites;
  m.fem = fem_matrices(mesh);
  m.GCG = m.fem.G * m.fem.c.cwiseInverse().asDiagonal() * m.fem.G;
  m.codec = ThetaCodec(spec);
  m.copies = derived_copies(spec);

  const Index nv = mesh.num_vertices();
  const int N = sites.num_years();
  const Index n = sites.num_sites();
  if (spec.selection_covariates > 0 && sites.covariates.cols() < spec.selection_covariates)
    throw AssemblyError("spec uses " + std::to_string(spec.selection_covariates) +
                        " selection covariates but the site table has " +
                        std::to_string(sites.covariates.cols()));
  const int first_sel = spec.first_selection_year - 1;
  const bool sel_rows_later = spec.selection && N > std::max(first_sel, 1);
  const bool sel_rows_first = spec.selection && first_sel == 0;

  // Fixed effects.
  auto &fx = m.layout.fixed_names;
  if (spec.observation) {
    fx.push_back("gamma0");
    if (spec.gamma1)
      fx.push_back("gamma1");
    if (spec.gamma2)
      fx.push_back("gamma2");
  }
  if (spec.selection) {
    if (sel_rows_first)
      fx.push_back("alpha00");
    if (sel_rows_later)
      fx.push_back("alpha01");
    if (spec.alpha1)
      fx.push_back("alpha1");
    if (spec.alpha2)
      fx.push_back("alpha2");
    if (spec.retention && sel_rows_later)
      fx.push_back("alpha_ret");
    if (spec.repulsion && sel_rows_later)
      fx.push_back("alpha_rep");
    for (int k = 0; k < spec.selection_covariates; ++k)
      fx.push_back("alpha_cov" + std::to_string(k + 1));
  }

  // b effects only at observed sites.
  m.b_site.assign(n, -1);
  Index n_b = 0;
  if (spec.observation && spec.b_intercept)
    for (Index i = 0; i < n; ++i)
      if (sites.kind[i] == SiteKind::observed)
        m.b_site[i] = n_b++;
  const Index b_width = spec.b_slope ? 2 : 1;

  Index offset = 0;
  auto add_block = [&](const std::string &name, EffectKind kind, Index size) {
    m.layout.blocks.push_back({name, kind, offset, size});
    offset += size;
  };
  add_block("fixed", EffectKind::fixed_coeff, static_cast<Index>(fx.size()));
  m.effects.push_back({"fixed", EffectKind::fixed_coeff, {}, false, "fixed"});
  if (spec.observation) {
    const std::array<bool, 3> on{spec.beta0, spec.beta1, spec.beta2};
    for (int k = 0; k < 3; ++k) {
      if (!on[k])
        continue;
      const bool per_year = k == 0 && spec.beta0_per_year;
      add_block(kBeta[k], EffectKind::matern_field, per_year ? nv * N : nv);
      m.effects.push_back({kBeta[k], EffectKind::matern_field,
                           {"log_range_" + kBeta[k], "log_sd_" + kBeta[k]}, nv >= 2,
                           per_year ? "vertices x years" : "vertices"});
    }
    if (n_b > 0) {
      add_block("b", EffectKind::iid_bivariate, n_b * b_width);
      std::vector<std::string> hyper{"log_sd_b1"};
      if (spec.b_slope)
        hyper.insert(hyper.end(), {"log_sd_b2", "z_b"});
      m.effects.push_back({"b0", EffectKind::iid_bivariate, hyper, n_b >= 2, "sites"});
      if (spec.b_slope)
        m.effects.push_back({"b1", EffectKind::iid_bivariate, hyper, n_b >= 2, "sites"});
    }
  }
  if (spec.selection) {
    if (spec.beta_star0) {
      add_block("beta_star0", EffectKind::matern_field, nv);
      m.effects.push_back({"beta_star0", EffectKind::matern_field,
                           {"log_range_beta_star0", "log_sd_beta_star0"}, nv >= 2, "vertices"});
    }
    if (spec.beta_star1) {
      add_block("beta_star1", EffectKind::ar1, N);
      m.effects.push_back({"beta_star1", EffectKind::ar1, {"log_sigma2_a", "z_a"}, N >= 2, "years"});
    }
  }
  m.layout.size = offset;
  m.layout.n_vertices = nv;

  // Copies must reference declared effects.
  for (const auto &c : m.copies)
    for (const auto &src : c.sources) {
      const bool known = std::any_of(m.effects.begin(), m.effects.end(),
                                     [&](const EffectSpec &e) { return e.name == src; });
      if (!known || (src != "b0" && src != "b1" && src.rfind("beta", 0) != 0) || src == "beta_star0" ||
          src == "beta_star1")
        throw AssemblyError("copy term references undeclared or unsupported effect '" + src + "'");
    }

  // Projector rows of every site.
  const Projector proj = projector(mesh, sites.location);
  for (Index i = 0; i < n; ++i)
    if (proj.outside[i])
      throw AssemblyError("site " + std::to_string(sites.site_id[i]) + " lies outside the mesh");
  const std::vector<Weights> w = projector_rows(proj.matrix);

  auto beta_col = [&](int k, int year) -> Index {
    const Block &b = m.layout.at(kBeta[k]);
    return b.offset + (k == 0 && spec.beta0_per_year ? static_cast<Index>(year) * nv : 0);
  };
  auto fixed_col = [&](const std::string &name) { return m.layout.fixed(name); };

  // Observation rows.
  if (spec.observation) {
    RowBuilder rb;
    for (int j = 0; j < N; ++j)
      for (Index i = 0; i < n; ++i) {
        if (sites.kind[i] != SiteKind::observed || sites.r(i, j) != 1 || !sites.has_y(i, j))
          continue;
        const double t = sites.t_star(j);
        rb.add(fixed_col("gamma0"), 1.0);
        if (spec.gamma1)
          rb.add(fixed_col("gamma1"), t);
        if (spec.gamma2)
          rb.add(fixed_col("gamma2"), t * t);
        const std::array<bool, 3> on{spec.beta0, spec.beta1, spec.beta2};
        const std::array<double, 3> tw{1.0, t, t * t};
        for (int k = 0; k < 3; ++k)
          if (on[k])
            for (const auto &[v, wt] : w[i])
              rb.add(beta_col(k, j) + v, wt * tw[k]);
        if (m.b_site[i] >= 0) {
          const Index bo = m.layout.at("b").offset + m.b_site[i] * b_width;
          rb.add(bo, 1.0);
          if (spec.b_slope)
            rb.add(bo + 1, t);
        }
        m.obs_index.emplace_back(i, j);
        rb.next();
      }
    m.A_obs = rb.build(m.layout.size);
    m.y.resize(static_cast<Index>(m.obs_index.size()));
    for (std::size_t k = 0; k < m.obs_index.size(); ++k)
      m.y(k) = sites.y(m.obs_index[k].first, m.obs_index[k].second);
  } else {
    m.A_obs.resize(0, m.layout.size);
  }

  // Selection rows.
  if (spec.selection) {
    m.ledger = zero_ledger(sites, spec.implementation, first_sel);
    std::vector<std::vector<int>> rep(N);
    if (spec.repulsion)
      for (int j = 1; j < N; ++j)
        rep[j] = repulsion_covariate(sites, j, spec.repulsion_distance);
    RowBuilder rf, rbv, rbt;
    m.r_sel.resize(static_cast<Index>(m.ledger.size()));
    for (std::size_t e = 0; e < m.ledger.size(); ++e) {
      const auto [i, j, outcome] = m.ledger[e];
      m.r_sel(e) = outcome;
      const double t = sites.t_star(j);
      rf.add(fixed_col(j == 0 ? "alpha00" : "alpha01"), 1.0);
      if (spec.alpha1)
        rf.add(fixed_col("alpha1"), t);
      if (spec.alpha2)
        rf.add(fixed_col("alpha2"), t * t);
      if (j > 0 && spec.retention)
        rf.add(fixed_col("alpha_ret"), sites.r(i, j - 1));
      if (j > 0 && spec.repulsion)
        rf.add(fixed_col("alpha_rep"), rep[j][i]);
      for (int k = 0; k < spec.selection_covariates; ++k)
        rf.add(fixed_col("alpha_cov" + std::to_string(k + 1)), sites.covariates(i, k));
      if (spec.beta_star0)
        for (const auto &[v, wt] : w[i])
          rf.add(m.layout.at("beta_star0").offset + v, wt);
      if (spec.beta_star1)
        rf.add(m.layout.at("beta_star1").offset + j, 1.0);

      for (const auto &c : m.copies) {
        const int jl = lag_year(c.lag, j);
        const double tl = sites.t_star(jl);
        RowBuilder &target = c.scale_param == "d_b" ? rbv : rbt;
        for (std::size_t s = 0; s < c.sources.size(); ++s) {
          const double tw = time_weight(c.weights[s], tl);
          const std::string &src = c.sources[s];
          if (src == "b0" || src == "b1") {
            if (m.b_site[i] < 0)
              continue;
            const Index bo = m.layout.at("b").offset + m.b_site[i] * b_width + (src == "b1" ? 1 : 0);
            target.add(bo, tw);
          } else {
            const int k = src.back() - '0';
            for (const auto &[v, wt] : w[i])
              target.add(beta_col(k, jl) + v, wt * tw);
          }
        }
      }
      rf.next();
      rbv.next();
      rbt.next();
    }
    m.A_sel_fixed = rf.build(m.layout.size);
    m.A_sel_b = rbv.build(m.layout.size);
    m.A_sel_beta = rbt.build(m.layout.size);
  } else {
    m.A_sel_fixed.resize(0, m.layout.size);
    m.A_sel_b.resize(0, m.layout.size);
    m.A_sel_beta.resize(0, m.layout.size);
  }

  // Sum-to-zero constraints.
  RowBuilder rc;
  auto constrain = [&](const std::string &name, Index start, Index count, Index stride) {
    if (count < 2)
      return;
    for (Index k = 0; k < count; ++k)
      rc.add(start + k * stride, 1.0);
    m.constraint_names.push_back(name);
    rc.next();
  };
  for (const auto &e : m.effects) {
    if (!e.sum_to_zero)
      continue;
    if (e.name == "b0" || e.name == "b1") {
      const Block &b = m.layout.at("b");
      constrain(e.name, b.offset + (e.name == "b1" ? 1 : 0), n_b, b_width);
    } else if (e.name == "beta0" && spec.beta0_per_year) {
      for (int j = 0; j < N; ++j)
        constrain("beta0[" + std::to_string(j + 1) + "]", m.layout.at("beta0").offset + j * nv, nv, 1);
    } else {
      const Block &b = m.layout.at(e.name);
      constrain(e.name, b.offset, b.size, 1);
    }
  }
  m.constraints = rc.build(m.layout.size);
  m.CCt = Matrix(m.constraints * SpMat(m.constraints.transpose()));
  m.AtA_obs = SpMat(m.A_obs.transpose()) * m.A_obs;
  return m;
}

SpMat AssembledModel::Q_prior(const Hyperparameters &h) const {
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(n_latent()) * 20);
  const Block &fb = layout.at("fixed");
  for (Index k = 0; k < fb.size; ++k)
    t.emplace_back(fb.offset + k, fb.offset + k, priors.fixed_precision);

  auto add_matern = [&](Index off, const MaternParams &p) {
    if (!p.valid())
      throw ParameterError("invalid Matern parameters (range " + std::to_string(p.range) + ", sd " +
                           std::to_string(p.sd) + ")");
    const double kappa = p.kappa(), tau2 = p.tau() * p.tau(), k2 = kappa * kappa;
    for (Index v = 0; v < fem.size(); ++v)
      t.emplace_back(off + v, off + v, tau2 * k2 * k2 * fem.c(v));
    for (Index k = 0; k < fem.G.outerSize(); ++k)
      for (SpMat::InnerIterator it(fem.G, k); it; ++it)
        t.emplace_back(off + it.row(), off + it.col(), tau2 * 2.0 * k2 * it.value());
    for (Index k = 0; k < GCG.outerSize(); ++k)
      for (SpMat::InnerIterator it(GCG, k); it; ++it)
        t.emplace_back(off + it.row(), off + it.col(), tau2 * it.value());
  };
  for (int k = 0; k < 3; ++k) {
    const Block *b = layout.find(kBeta[k]);
    if (!b)
      continue;
    for (Index off = b->offset; off < b->offset + b->size; off += fem.size())
      add_matern(off, h.zeta[k]);
  }
  if (const Block *b = layout.find("beta_star0"))
    add_matern(b->offset, h.zeta_R);

  if (const Block *b = layout.find("b")) {
    if (spec.b_slope) {
      if (!(h.sd_b1 > 0 && h.sd_b2 > 0 && std::abs(h.rho_b) < 1))
        throw ParameterError("invalid site-effect covariance");
      const double s11 = h.sd_b1 * h.sd_b1, s22 = h.sd_b2 * h.sd_b2, s12 = h.rho_b * h.sd_b1 * h.sd_b2;
      const double det = s11 * s22 - s12 * s12;
      const double p11 = s22 / det, p22 = s11 / det, p12 = -s12 / det;
      for (Index k = 0; k < b->size; k += 2) {
        const Index o = b->offset + k;
        t.emplace_back(o, o, p11);
        t.emplace_back(o + 1, o + 1, p22);
        t.emplace_back(o, o + 1, p12);
        t.emplace_back(o + 1, o, p12);
      }
    } else {
      if (!(h.sd_b1 > 0))
        throw ParameterError("invalid site-effect sd");
      for (Index k = 0; k < b->size; ++k)
        t.emplace_back(b->offset + k, b->offset + k, 1.0 / (h.sd_b1 * h.sd_b1));
    }
  }
  if (const Block *b = layout.find("beta_star1")) {
    const SpMat A = ar1_precision(static_cast<int>(b->size), h.rho_a, h.sigma2_a);
    for (Index k = 0; k < A.outerSize(); ++k)
      for (SpMat::InnerIterator it(A, k); it; ++it)
        t.emplace_back(b->offset + it.row(), b->offset + it.col(), it.value());
  }
  SpMat Q(n_latent(), n_latent());
  Q.setFromTriplets(t.begin(), t.end());
  return Q;
}

SpMat AssembledModel::A_sel(const Hyperparameters &h) const {
  SpMat A = A_sel_fixed;
  if (A_sel_b.nonZeros() > 0)
    A += h.d_b * A_sel_b;
  if (A_sel_beta.nonZeros() > 0)
    A += h.d_beta * A_sel_beta;
  return A;
}

SpMat AssembledModel::prediction_matrix(const PointList &points, int year) const {
  if (!spec.observation)
    throw AssemblyError("prediction needs the observation model");
  if (year < 0 || year >= sites.num_years())
    throw ParameterError("prediction year out of range");
  const Projector proj = projector(mesh, points);
  for (std::size_t k = 0; k < points.size(); ++k)
    if (proj.outside[k])
      throw DataError("prediction point " + std::to_string(k) + " lies outside the mesh");
  const std::vector<Weights> w = projector_rows(proj.matrix);
  const double t = sites.t_star(year);
  const Index nv = fem.size();
  RowBuilder rb;
  for (std::size_t p = 0; p < points.size(); ++p) {
    rb.add(layout.fixed("gamma0"), 1.0);
    if (spec.gamma1)
      rb.add(layout.fixed("gamma1"), t);
    if (spec.gamma2)
      rb.add(layout.fixed("gamma2"), t * t);
    const std::array<double, 3> tw{1.0, t, t * t};
    for (int k = 0; k < 3; ++k)
      if (const Block *b = layout.find(kBeta[k])) {
        const Index off = b->offset + (k == 0 && spec.beta0_per_year ? year * nv : 0);
        for (const auto &[v, wt] : w[p])
          rb.add(off + v, wt * tw[k]);
      }
    rb.next();
  }
  return rb.build(n_latent());
}

SpMat AssembledModel::site_prediction_matrix(const std::vector<Index> &site_rows, int year) const {
  PointList pts;
  for (Index i : site_rows)
    pts.push_back(sites.location.at(i));
  SpMat P = prediction_matrix(pts, year);
  const Block *b = layout.find("b");
  if (!b)
    return P;
  const Index width = spec.b_slope ? 2 : 1;
  const double t = sites.t_star(year);
  std::vector<Triplet> extra;
  for (std::size_t k = 0; k < site_rows.size(); ++k) {
    const Index bi = b_site[site_rows[k]];
    if (bi < 0)
      continue;
    extra.emplace_back(k, b->offset + bi * width, 1.0);
    if (spec.b_slope)
      extra.emplace_back(k, b->offset + bi * width + 1, t);
  }
  SpMat B(P.rows(), P.cols());
  B.setFromTriplets(extra.begin(), extra.end());
  return P + B;
}

LinearPredictors linear_predictors(const AssembledModel &m, const Hyperparameters &h, const Vector &x) {
  if (x.size() != m.n_latent())
    throw ParameterError("latent vector has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(m.n_latent()));
  return {m.A_obs * x, m.A_sel(h) * x};
}

// ---------------------------------------------------------------- registry

std::vector<SymbolBinding> symbol_registry(const AssembledModel &m) {
  std::vector<SymbolBinding> out;
  auto fixed = [&](const std::string &s) {
    if (m.layout.fixed(s) >= 0)
      out.push_back({s, "fixed:" + s});
  };
  auto theta = [&](const std::string &s, const std::string &entry) {
    if (m.codec.find(entry) >= 0)
      out.push_back({s, "theta:" + entry});
  };
  auto matern = [&](const std::string &s, const std::string &f) {
    if (m.codec.find("log_range_" + f) >= 0)
      out.push_back({s, "theta:log_range_" + f + "+log_sd_" + f});
  };
  for (const char *s : {"gamma0", "gamma1", "gamma2"})
    fixed(s);
  if (m.layout.find("b")) {
    out.push_back({"b0", "block:b[intercept]"});
    if (m.spec.b_slope)
      out.push_back({"b1", "block:b[slope]"});
  }
  theta("sigma2_b1", "log_sd_b1");
  theta("sigma2_b2", "log_sd_b2");
  theta("rho_b", "z_b");
  for (int k = 0; k < 3; ++k)
    if (m.layout.find(kBeta[k])) {
      out.push_back({kBeta[k], "block:" + kBeta[k]});
      matern("zeta" + std::to_string(k), kBeta[k]);
    }
  theta("sigma2_eps", "log_sigma2_eps");
  for (const char *s : {"alpha00", "alpha01", "alpha1", "alpha2", "alpha_ret", "alpha_rep"})
    fixed(s);
  for (int k = 0; k < m.spec.selection_covariates; ++k)
    fixed("alpha_cov" + std::to_string(k + 1));
  if (m.layout.fixed("alpha_rep") >= 0) {
    out.push_back({"I", "covariate:repulsion"});
    out.push_back({"c", "setting:repulsion_distance"});
  }
  if (m.layout.find("beta_star0")) {
    out.push_back({"beta_star0", "block:beta_star0"});
    matern("zeta_R", "beta_star0");
  }
  if (m.layout.find("beta_star1")) {
    out.push_back({"beta_star1", "block:beta_star1"});
    theta("rho_a", "z_a");
    theta("sigma2_a", "log_sigma2_a");
  }
  theta("d_b", "d_b");
  theta("d_beta", "d_beta");
  out.push_back({"t_star", "data:t_star"});
  if (!m.copies.empty())
    out.push_back({"phi", std::string("lag:") + (m.copies.front().lag == Lag::reactive ? "reactive" : "concurrent")});
  return out;
}

std::vector<std::string> model_components(const AssembledModel &m) {
  std::vector<std::string> out;
  for (const auto &f : m.layout.fixed_names)
    out.push_back("fixed:" + f);
  for (const auto &b : m.layout.blocks) {
    if (b.name == "fixed")
      continue;
    if (b.name == "b") {
      out.push_back("block:b[intercept]");
      if (m.spec.b_slope)
        out.push_back("block:b[slope]");
    } else {
      out.push_back("block:" + b.name);
    }
  }
  for (const auto &e : m.codec.entries()) {
    if (e.name.rfind("log_sd_beta", 0) == 0)
      continue;
    if (e.name.rfind("log_range_", 0) == 0) {
      const std::string f = e.name.substr(10);
      out.push_back("theta:" + e.name + "+log_sd_" + f);
    } else {
      out.push_back("theta:" + e.name);
    }
  }
  if (m.layout.fixed("alpha_rep") >= 0) {
    out.push_back("covariate:repulsion");
    out.push_back("setting:repulsion_distance");
  }
  out.push_back("data:t_star");
  for (const auto &c : m.copies) {
    const std::string lag = std::string("lag:") + (c.lag == Lag::reactive ? "reactive" : "concurrent");
    if (std::find(out.begin(), out.end(), lag) == out.end())
      out.push_back(lag);
  }
  return out;
}

} // namespace prefsamp
