#include "prefsamp/inference.hpp"

#include "prefsamp/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace prefsamp {

// ---------------------------------------------------------------- factor

void SparseFactor::factorize(const SpMat &A, const std::string &context) {
  SpMat L = A.triangularView<Eigen::Lower>();
  L.makeCompressed();
  const std::vector<int> outer(L.outerIndexPtr(), L.outerIndexPtr() + L.outerSize() + 1);
  const std::vector<int> inner(L.innerIndexPtr(), L.innerIndexPtr() + L.nonZeros());
  if (!analyzed_ || outer != outer_ || inner != inner_) {
    ldlt_.analyzePattern(L);
    outer_ = outer;
    inner_ = inner;
    analyzed_ = true;
  }
  ldlt_.factorize(L);
  if (ldlt_.info() != Eigen::Success || !(ldlt_.vectorD().minCoeff() > 0.0))
    throw FactorizationError("matrix is not positive definite (" + context + ")");
}

double SparseFactor::log_det() const { return ldlt_.vectorD().array().log().sum(); }

Vector SparseFactor::sample_transform(const Vector &z) const {
  // P A P^T = L D L^T, so A^{-1} = P^T L^{-T} D^{-1} L^{-1} P.
  const Vector u = z.cwiseQuotient(ldlt_.vectorD().cwiseSqrt());
  const Vector w = ldlt_.matrixU().solve(u);
  return ldlt_.permutationPinv() * w;
}

// ---------------------------------------------------------------- terms

namespace {

double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
double sigmoid(double v) {
  if (v >= 0)
    return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

std::string theta_echo(const Hyperparameters &h) {
  std::ostringstream os;
  os.precision(6);
  os << "sigma2_eps=" << h.sigma2_eps;
  for (int k = 0; k < 3; ++k)
    os << " beta" << k << "=(" << h.zeta[k].range << "," << h.zeta[k].sd << ")";
  os << " b=(" << h.sd_b1 << "," << h.sd_b2 << "," << h.rho_b << ")"
     << " beta_star0=(" << h.zeta_R.range << "," << h.zeta_R.sd << ")"
     << " ar1=(" << h.rho_a << "," << h.sigma2_a << ")"
     << " d_b=" << h.d_b << " d_beta=" << h.d_beta;
  return os.str();
}

// Everything that depends on theta but not on x.
struct Evaluator {
  const AssembledModel &m;
  const Hyperparameters &h;
  SpMat Q, A_sel, A_sel_t;
  Matrix C; // dense constraint matrix (k x n)
  double inv_s2 = 0.0;

  Evaluator(const AssembledModel &m_, const Hyperparameters &h_) : m(m_), h(h_) {
    Q = m.Q_prior(h);
    A_sel = m.A_sel(h);
    A_sel_t = A_sel.transpose();
    C = Matrix(m.constraints);
    if (m.n_obs() > 0) {
      if (!(h.sigma2_eps > 0) || !std::isfinite(h.sigma2_eps))
        throw ParameterError("sigma2_eps must be positive");
      inv_s2 = 1.0 / h.sigma2_eps;
    }
  }

  struct Parts {
    double quad, obs, sel;
  };

  Parts parts(const Vector &x) const {
    Parts p{0.5 * x.dot(Q * x), 0.0, 0.0};
    if (m.n_obs() > 0) {
      const Vector res = m.y - m.A_obs * x;
      p.obs = 0.5 * inv_s2 * res.squaredNorm();
    }
    if (m.n_sel() > 0) {
      const Vector nu = A_sel * x;
      for (Index e = 0; e < nu.size(); ++e)
        p.sel += softplus(nu(e)) - m.r_sel(e) * nu(e);
    }
    return p;
  }

  double objective(const Vector &x) const {
    const Parts p = parts(x);
    return p.quad + p.obs + p.sel;
  }

  Vector gradient(const Vector &x) const {
    Vector g = Q * x;
    if (m.n_obs() > 0)
      g -= inv_s2 * (SpMat(m.A_obs.transpose()) * (m.y - m.A_obs * x));
    if (m.n_sel() > 0) {
      const Vector nu = A_sel * x;
      Vector res(nu.size());
      for (Index e = 0; e < nu.size(); ++e)
        res(e) = sigmoid(nu(e)) - m.r_sel(e);
      g += A_sel_t * res;
    }
    return g;
  }

  SpMat hessian(const Vector &x) const {
    SpMat H = Q;
    if (m.n_obs() > 0)
      H += inv_s2 * m.AtA_obs;
    if (m.n_sel() > 0) {
      const Vector nu = A_sel * x;
      Vector w(nu.size());
      for (Index e = 0; e < nu.size(); ++e) {
        const double p = sigmoid(nu(e));
        w(e) = p * (1.0 - p);
      }
      H += SpMat(A_sel_t * w.asDiagonal()) * A_sel;
    }
    return H;
  }

  // Orthogonal projection onto {Cx = 0}.
  Vector project(const Vector &v) const {
    if (C.rows() == 0)
      return v;
    return v - C.transpose() * m.CCt.ldlt().solve(C * v);
  }

  double loglik(const Vector &x) const {
    const Parts p = parts(x);
    double ll = -p.obs - p.sel;
    if (m.n_obs() > 0)
      ll -= 0.5 * static_cast<double>(m.n_obs()) * std::log(2.0 * std::numbers::pi * h.sigma2_eps);
    return ll;
  }
};

// log|C A^{-1} C^T| and A^{-1} C^T for a factorized A.
struct ConstraintTerms {
  Matrix W;
  Eigen::LDLT<Matrix> S;
  double log_det = 0.0;
};

ConstraintTerms constraint_terms(const SparseFactor &f, const Matrix &C) {
  ConstraintTerms t;
  if (C.rows() == 0)
    return t;
  t.W = f.solve(Matrix(C.transpose()));
  const Matrix S = C * t.W;
  t.S.compute(S);
  t.log_det = t.S.vectorD().array().log().sum();
  return t;
}

struct PriorDets {
  double logdet_q = 0.0;
  double logdet_cq = 0.0;
};

// log|Q| and log|C Q^{-1} C^T| from the block-diagonal structure of the
// prior: each layout block (each year of a replicated field) is factorized
// on its own and identical units reuse the previous result.
PriorDets prior_log_dets(const AssembledModel &m, const SpMat &Q, const Matrix &C, const std::string &context) {
  std::vector<std::pair<Index, Index>> units;
  for (const Block &b : m.layout.blocks) {
    if (b.size == 0)
      continue;
    if (b.name == "beta0" && m.spec.beta0_per_year && m.layout.n_vertices > 0) {
      for (Index o = 0; o < b.size; o += m.layout.n_vertices)
        units.emplace_back(b.offset + o, m.layout.n_vertices);
    } else {
      units.emplace_back(b.offset, b.size);
    }
  }
  PriorDets out;
  SpMat prev_q;
  Matrix prev_c;
  PriorDets prev;
  bool have_prev = false;
  for (const auto &[o, n] : units) {
    const SpMat sub = Q.block(o, o, n, n);
    std::vector<Index> rows;
    for (Index k = 0; k < C.rows(); ++k)
      if (C.row(k).segment(o, n).cwiseAbs().maxCoeff() > 0.0)
        rows.push_back(k);
    Matrix Cs(static_cast<Index>(rows.size()), n);
    for (std::size_t k = 0; k < rows.size(); ++k)
      Cs.row(static_cast<Index>(k)) = C.row(rows[k]).segment(o, n);
    PriorDets d;
    if (have_prev && prev_q.rows() == n && prev_c.rows() == Cs.rows() && (prev_c - Cs).cwiseAbs().maxCoeff() == 0.0 &&
        SpMat(sub - prev_q).norm() == 0.0) {
      d = prev;
    } else {
      SparseFactor f;
      f.factorize(sub, context);
      d.logdet_q = f.log_det();
      d.logdet_cq = constraint_terms(f, Cs).log_det;
      prev_q = sub;
      prev_c = Cs;
      prev = d;
      have_prev = true;
    }
    out.logdet_q += d.logdet_q;
    out.logdet_cq += d.logdet_cq;
  }
  return out;
}

} // namespace

// ---------------------------------------------------------------- inner

InnerResult inner_mode(const AssembledModel &m, const Hyperparameters &h, const Vector &x0,
                       const InnerOptions &opt, LaplaceWorkspace *ws) {
  LaplaceWorkspace local;
  LaplaceWorkspace &w = ws ? *ws : local;
  if (x0.size() != m.n_latent())
    throw ParameterError("inner_mode: starting point has wrong dimension");
  const Evaluator ev(m, h);
  InnerResult r;
  r.x = ev.project(x0);
  double f = ev.objective(r.x);
  Vector g = ev.gradient(r.x);
  const double g0 = ev.project(g).norm();
  const double tol = opt.grad_tol * (1.0 + g0);
  if (!std::isfinite(f))
    throw ConvergenceError("inner_mode: non-finite objective at the starting point; theta: " + theta_echo(h));

  for (;;) {
    r.gradient_norm = ev.project(g).norm();
    if (r.gradient_norm <= tol) {
      r.converged = true;
      break;
    }
    if (r.iterations >= opt.max_iter)
      break;
    const SpMat H = ev.hessian(r.x);
    w.h.factorize(H, "posterior precision; theta: " + theta_echo(h));
    Vector step = -w.h.solve(g);
    if (ev.C.rows() > 0) {
      const ConstraintTerms ct = constraint_terms(w.h, ev.C);
      step -= ct.W * ct.S.solve(ev.C * step);
    }
    const double slope = g.dot(step);
    // Newton decrement at the floating-point floor counts as converged.
    if (-slope <= 1e-14 * (1.0 + std::abs(f))) {
      r.converged = true;
      break;
    }
    double t = 1.0, fn = 0.0;
    Vector xn;
    bool accepted = false;
    for (int k = 0; k <= opt.max_halvings; ++k, t *= 0.5) {
      xn = r.x + t * step;
      fn = ev.objective(xn);
      if (std::isfinite(fn) && fn <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (std::abs(fn - f) <= 1e-12 * (1.0 + std::abs(f))) {
        r.converged = true;
        break;
      }
      break;
    }
    // Remove constraint drift from round-off.
    r.x = ev.project(xn);
    f = ev.objective(r.x);
    g = ev.gradient(r.x);
    ++r.iterations;
    r.trace.push_back(f);
  }
  r.objective = f;
  if (!r.converged) {
    std::ostringstream os;
    os << "inner_mode did not converge after " << r.iterations << " iterations (gradient "
       << r.gradient_norm << ", tolerance " << tol << "); objective trace:";
    for (double v : r.trace)
      os << " " << v;
    os << "; theta: " << theta_echo(h);
    throw ConvergenceError(os.str());
  }
  r.H = ev.hessian(r.x);
  w.h.factorize(r.H, "posterior precision at the mode; theta: " + theta_echo(h));
  return r;
}

// ---------------------------------------------------------------- laplace

LaplaceResult laplace(const AssembledModel &m, const Hyperparameters &h, const InnerOptions &opt,
                      LaplaceWorkspace *ws) {
  LaplaceWorkspace local;
  LaplaceWorkspace &w = ws ? *ws : local;
  const Evaluator ev(m, h);
  const PriorDets pd = prior_log_dets(m, ev.Q, ev.C, "prior precision; theta: " + theta_echo(h));
  const double logdet_q = pd.logdet_q;
  const double logdet_cq = pd.logdet_cq;

  const Vector x0 = (w.warm && w.warm->size() == m.n_latent()) ? *w.warm : Vector::Zero(m.n_latent());
  LaplaceResult out;
  out.inner = inner_mode(m, h, x0, opt, &w);
  const Vector &x = out.inner.x;
  const double logdet_h = w.h.log_det();
  const double logdet_ch = constraint_terms(w.h, ev.C).log_det;
  out.log_ml = 0.5 * logdet_q - 0.5 * x.dot(ev.Q * x) + 0.5 * logdet_cq + ev.loglik(x) - 0.5 * logdet_h -
               0.5 * logdet_ch;
  if (!std::isfinite(out.log_ml))
    throw ConvergenceError("non-finite Laplace marginal; theta: " + theta_echo(h));
  w.warm = x;
  return out;
}

double laplace_log_marginal(const AssembledModel &m, const Hyperparameters &h) { return laplace(m, h).log_ml; }

double neg_log_joint(const AssembledModel &m, const Vector &theta, const Vector &x) {
  if (x.size() != m.n_latent())
    throw ParameterError("neg_log_joint: latent vector has wrong dimension");
  const Hyperparameters h = m.codec.decode(theta);
  const Evaluator ev(m, h);
  SparseFactor q;
  q.factorize(ev.Q, "prior precision; theta: " + theta_echo(h));
  const Evaluator::Parts p = ev.parts(x);
  struct Term {
    const char *name;
    double value;
  };
  const double obs_norm =
      m.n_obs() > 0 ? 0.5 * static_cast<double>(m.n_obs()) * std::log(h.sigma2_eps) : 0.0;
  const Term terms[] = {
      {"latent quadratic form", p.quad},
      {"prior log-determinant", -0.5 * q.log_det()},
      {"constraint log-determinant", -0.5 * constraint_terms(q, ev.C).log_det},
      {"Gaussian observations", p.obs + obs_norm},
      {"Bernoulli selections", p.sel},
      {"hyperparameter prior", -m.codec.log_prior(theta, m.priors)},
  };
  double total = 0.0;
  for (const auto &t : terms) {
    if (!std::isfinite(t.value))
      throw ParameterError(std::string("neg_log_joint: non-finite ") + t.name + " term");
    total += t.value;
  }
  return total;
}

// ---------------------------------------------------------------- outer

namespace {

bool vertex_less(double fa, const Vector &a, double fb, const Vector &b) {
  if (fa != fb)
    return fa < fb || (std::isnan(fb) && !std::isnan(fa));
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

} // namespace

NelderMeadResult nelder_mead(const std::function<double(const Vector &)> &f, const Vector &x0,
                             const OuterOptions &opt,
                             const std::function<void(int, const Vector &, double)> &on_eval) {
  NelderMeadResult res;
  const Index n = x0.size();
  double best = std::numeric_limits<double>::infinity();
  Vector best_x = x0;
  auto eval = [&](const Vector &x) {
    double v = f(x);
    if (std::isnan(v))
      v = std::numeric_limits<double>::infinity();
    ++res.evaluations;
    if (v < best) {
      best = v;
      best_x = x;
    }
    res.best_trace.push_back(best);
    if (on_eval)
      on_eval(res.evaluations, x, v);
    return v;
  };

  const double f0 = eval(x0);
  if (!std::isfinite(f0))
    throw ParameterError("optimizer initialization: non-finite objective at the starting point");
  if (n == 0) {
    res.x = x0;
    res.f = f0;
    res.converged = true;
    return res;
  }

  Vector start = x0;
  double start_f = f0;
  for (int round = 0; round <= opt.restarts; ++round) {
    std::vector<Vector> xs(n + 1, start);
    std::vector<double> fs(n + 1, start_f);
    for (Index i = 0; i < n; ++i) {
      xs[i + 1](i) += opt.initial_step;
      fs[i + 1] = eval(xs[i + 1]);
    }
    bool converged = false;
    std::vector<Index> order(n + 1);
    while (res.evaluations < opt.max_evaluations) {
      for (Index i = 0; i <= n; ++i)
        order[i] = i;
      std::sort(order.begin(), order.end(),
                [&](Index a, Index b) { return vertex_less(fs[a], xs[a], fs[b], xs[b]); });
      std::vector<Vector> sx(n + 1);
      std::vector<double> sf(n + 1);
      for (Index i = 0; i <= n; ++i) {
        sx[i] = xs[order[i]];
        sf[i] = fs[order[i]];
      }
      xs.swap(sx);
      fs.swap(sf);
      if (std::isfinite(fs[n]) && fs[n] - fs[0] < opt.spread_tol) {
        converged = true;
        break;
      }
      Vector centroid = Vector::Zero(n);
      for (Index i = 0; i < n; ++i)
        centroid += xs[i];
      centroid /= static_cast<double>(n);
      const Vector &worst = xs[n];
      const Vector xr = centroid + (centroid - worst);
      const double fr = eval(xr);
      if (fr < fs[0]) {
        const Vector xe = centroid + 2.0 * (centroid - worst);
        const double fe = eval(xe);
        if (fe < fr) {
          xs[n] = xe;
          fs[n] = fe;
        } else {
          xs[n] = xr;
          fs[n] = fr;
        }
        continue;
      }
      if (fr < fs[n - 1]) {
        xs[n] = xr;
        fs[n] = fr;
        continue;
      }
      bool shrink = false;
      if (fr < fs[n]) {
        const Vector xc = centroid + 0.5 * (xr - centroid);
        const double fc = eval(xc);
        if (fc <= fr) {
          xs[n] = xc;
          fs[n] = fc;
        } else {
          shrink = true;
        }
      } else {
        const Vector xc = centroid + 0.5 * (worst - centroid);
        const double fc = eval(xc);
        if (fc < fs[n]) {
          xs[n] = xc;
          fs[n] = fc;
        } else {
          shrink = true;
        }
      }
      if (shrink)
        for (Index i = 1; i <= n && res.evaluations < opt.max_evaluations; ++i) {
          xs[i] = xs[0] + 0.5 * (xs[i] - xs[0]);
          fs[i] = eval(xs[i]);
        }
    }
    const double improvement = start_f - best;
    start = best_x;
    start_f = best;
    res.converged = converged;
    if (!converged || (round > 0 && improvement < opt.spread_tol))
      break;
  }
  res.x = best_x;
  res.f = best;
  return res;
}

std::pair<double, double> FitResult::interval(const std::string &name, double z) const {
  const auto it = std::find(theta_names.begin(), theta_names.end(), name);
  if (it == theta_names.end())
    throw ParameterError("fit has no hyperparameter '" + name + "'");
  const Index k = it - theta_names.begin();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (theta_cov.rows() != static_cast<Index>(theta_names.size()) || !(theta_cov(k, k) > 0))
    return {nan, nan};
  const double se = std::sqrt(theta_cov(k, k));
  return {theta(k) - z * se, theta(k) + z * se};
}

FitResult optimize_hyperparameters(const AssembledModel &m, const Hyperparameters &theta0,
                                   const OuterOptions &outer, const InnerOptions &inner) {
  FitResult fit;
  fit.theta_names = m.codec.names();
  const Vector t0 = m.codec.encode(theta0);
  LaplaceWorkspace ws;

  auto objective = [&](const Vector &t) -> double {
    try {
      const Hyperparameters h = m.codec.decode(t, theta0);
      const double lp = m.codec.log_prior(t, m.priors);
      if (!std::isfinite(lp))
        return std::numeric_limits<double>::infinity();
      const LaplaceResult lr = laplace(m, h, inner, &ws);
      return -(lr.log_ml + lp);
    } catch (const Error &) {
      return std::numeric_limits<double>::infinity();
    }
  };

  double best = -std::numeric_limits<double>::infinity();
  const NelderMeadResult nm = nelder_mead(objective, t0, outer, [&](int k, const Vector &t, double v) {
    best = std::max(best, -v);
    fit.trace.push_back({k, t, -v, best});
  });
  fit.theta = nm.x;
  fit.evaluations = nm.evaluations;
  fit.converged = nm.converged;
  fit.theta_hat = m.codec.decode(nm.x, theta0);

  const LaplaceResult lr = laplace(m, fit.theta_hat, inner, &ws);
  fit.x_mode = lr.inner.x;
  fit.Q_post = lr.inner.H;
  fit.log_ml = lr.log_ml;
  fit.objective = lr.log_ml + m.codec.log_prior(nm.x, m.priors);

  const Index d = nm.x.size();
  if (outer.compute_covariance && d > 0) {
    // Central differences of the negative log posterior in theta.
    const double hs = outer.hessian_step;
    const double fc = objective(nm.x);
    Matrix Hs(d, d);
    auto at = [&](Index i, double si, Index j, double sj) {
      Vector t = nm.x;
      t(i) += si;
      t(j) += sj;
      return objective(t);
    };
    for (Index i = 0; i < d; ++i) {
      Hs(i, i) = (at(i, hs, i, 0) - 2.0 * fc + at(i, -hs, i, 0)) / (hs * hs);
      for (Index j = 0; j < i; ++j) {
        Hs(i, j) = (at(i, hs, j, hs) - at(i, hs, j, -hs) - at(i, -hs, j, hs) + at(i, -hs, j, -hs)) / (4.0 * hs * hs);
        Hs(j, i) = Hs(i, j);
      }
    }
    Eigen::LLT<Matrix> llt(Hs);
    if (Hs.allFinite() && llt.info() == Eigen::Success)
      fit.theta_cov = llt.solve(Matrix::Identity(d, d));
  }
  return fit;
}

Matrix latent_covariance(const AssembledModel &m, const FitResult &fit, const std::vector<Index> &idx) {
  SparseFactor f;
  f.factorize(fit.Q_post, "posterior precision");
  Matrix E = Matrix::Zero(m.n_latent(), static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k)
    E(idx[k], static_cast<Index>(k)) = 1.0;
  const Matrix HinvE = f.solve(E);
  Matrix S(idx.size(), idx.size());
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = 0; b < idx.size(); ++b)
      S(a, b) = HinvE(idx[a], static_cast<Index>(b));
  const Matrix C = Matrix(m.constraints);
  if (C.rows() > 0) {
    const ConstraintTerms ct = constraint_terms(f, C);
    Matrix Wi(idx.size(), C.rows());
    for (std::size_t a = 0; a < idx.size(); ++a)
      Wi.row(static_cast<Index>(a)) = ct.W.row(idx[a]);
    S -= Wi * ct.S.solve(Matrix(Wi.transpose()));
  }
  return S;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t k) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

PosteriorEnsemble sample_posterior(const AssembledModel &m, const FitResult &fit, int M, std::uint64_t seed,
                                   int threads) {
  if (M <= 0)
    throw ParameterError("sample_posterior needs M > 0");
  SparseFactor f;
  f.factorize(fit.Q_post, "posterior precision");
  const Matrix C = Matrix(m.constraints);
  const ConstraintTerms ct = constraint_terms(f, C);

  PosteriorEnsemble ens;
  ens.theta = fit.theta_hat;
  ens.layout = m.layout;
  ens.seed = seed;
  ens.draws.resize(m.n_latent(), M);
  constexpr int chunk = 50;
  const int n_chunks = (M + chunk - 1) / chunk;
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int c = next++; c < n_chunks; c = next++) {
      std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
      std::normal_distribution<double> normal;
      for (int k = c * chunk; k < std::min(M, (c + 1) * chunk); ++k) {
        Vector z(m.n_latent());
        for (Index i = 0; i < z.size(); ++i)
          z(i) = normal(rng);
        Vector x = fit.x_mode + f.sample_transform(z);
        if (C.rows() > 0)
          x -= ct.W * ct.S.solve(C * x);
        ens.draws.col(k) = x;
      }
    }
  };
  const int nt = std::max(1, std::min(threads, n_chunks));
  std::vector<std::thread> pool;
  for (int t = 1; t < nt; ++t)
    pool.emplace_back(worker);
  worker();
  for (auto &t : pool)
    t.join();
  return ens;
}

} // namespace prefsamp
