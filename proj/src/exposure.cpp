#include "prefsamp/exposure.hpp"

#include "prefsamp/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace prefsamp {

PopulationRaster PopulationRaster::from_counts(PointList centroids, const Vector &counts) {
  if (static_cast<Index>(centroids.size()) != counts.size())
    throw DataError("raster has " + std::to_string(centroids.size()) + " centroids but " +
                    std::to_string(counts.size()) + " weights");
  if (counts.size() == 0)
    throw DataError("raster is empty");
  if ((counts.array() < 0).any() || !counts.allFinite())
    throw DataError("raster weights must be finite and nonnegative");
  const double total = counts.sum();
  if (!(total > 0))
    throw DataError("raster weights sum to zero");
  PopulationRaster r;
  r.centroids = std::move(centroids);
  r.renormalization = 1.0 / total;
  r.weights = counts * r.renormalization;
  return r;
}

void PopulationRaster::validate() const {
  if (static_cast<Index>(centroids.size()) != weights.size())
    throw DataError("raster centroids and weights differ in length");
  if ((weights.array() < 0).any())
    throw DataError("raster weights must be nonnegative");
  if (std::abs(weights.sum() - 1.0) > 1e-10)
    throw DataError("raster weights are not normalized (sum " + std::to_string(weights.sum()) + ")");
}

DrawSummary summarize_draws(const Vector &v, double level) {
  if (v.size() == 0)
    throw ParameterError("no draws to summarize");
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  const double a = (1.0 - level) / 2.0;
  return {v.mean(), quantile(a), quantile(1.0 - a)};
}

Matrix cell_values(const AssembledModel &m, const PosteriorEnsemble &ens, const SpMat &projector, int year,
                   const PreprocessConstants &back, const ExposureOptions &opt) {
  if (projector.cols() != ens.draws.rows())
    throw DataError("projector has " + std::to_string(projector.cols()) + " columns but draws have " +
                    std::to_string(ens.draws.rows()) + " latent entries");
  if (year < 0 || year >= m.sites.num_years())
    throw DataError("year index " + std::to_string(year) + " outside the fitted period");
  Matrix eta = projector * ens.draws;
  const bool has_b = m.spec.observation && m.spec.b_intercept;
  if (has_b && opt.b_mode == BEffectMode::fresh_draws) {
    const Hyperparameters &h = ens.theta;
    const double t = m.sites.t_star(year);
    const double s1 = h.sd_b1, s2 = m.spec.b_slope ? h.sd_b2 : 0.0, rho = m.spec.b_slope ? h.rho_b : 0.0;
    const double c = std::sqrt(1.0 - rho * rho);
    for (Index d = 0; d < eta.cols(); ++d) {
      std::mt19937_64 rng(derive_seed(opt.seed, static_cast<std::uint64_t>(year) * 1000003ULL + d));
      std::normal_distribution<double> z;
      for (Index i = 0; i < eta.rows(); ++i) {
        const double z0 = z(rng), z1 = z(rng);
        eta(i, d) += s1 * z0 + t * s2 * (rho * z0 + c * z1);
      }
    }
  }
  return eta.unaryExpr([&](double y) { return back.back_transform(y); });
}

PopulationMean population_mean(const Matrix &values, const PopulationRaster &raster) {
  raster.validate();
  if (values.rows() != raster.size())
    throw DataError("cell values do not match the raster");
  PopulationMean out;
  out.per_draw = values.transpose() * raster.weights;
  out.summary = summarize_draws(out.per_draw);
  return out;
}

Exceedance exceedance(const Matrix &values, const PopulationRaster &raster, double threshold) {
  raster.validate();
  if (values.rows() != raster.size())
    throw DataError("cell values do not match the raster");
  const Matrix above = (values.array() > threshold).cast<double>().matrix();
  Exceedance out;
  const double M = static_cast<double>(values.cols());
  out.cell_probability = above.rowwise().sum() / M;
  out.population_per_draw = above.transpose() * raster.weights;
  out.area_per_draw = above.colwise().sum().transpose() / static_cast<double>(values.rows());
  out.population = summarize_draws(out.population_per_draw);
  out.area = summarize_draws(out.area_per_draw);
  return out;
}

PopulationMean population_mean(const AssembledModel &m, const PosteriorEnsemble &ens, const PopulationRaster &raster,
                               const SpMat &projector, int year, const PreprocessConstants &back,
                               const ExposureOptions &opt) {
  if (projector.rows() != raster.size())
    throw DataError("projector rows do not match the raster cells");
  PopulationMean out = population_mean(cell_values(m, ens, projector, year, back, opt), raster);
  out.mode = opt.b_mode;
  return out;
}

Exceedance exceedance(const AssembledModel &m, const PosteriorEnsemble &ens, const PopulationRaster &raster,
                      const SpMat &projector, int year, double threshold, const PreprocessConstants &back,
                      const ExposureOptions &opt) {
  if (projector.rows() != raster.size())
    throw DataError("projector rows do not match the raster cells");
  return exceedance(cell_values(m, ens, projector, year, back, opt), raster, threshold);
}

ExposureSeries exposure_series(const AssembledModel &m, const PosteriorEnsemble &ens, const PopulationRaster &raster,
                               const std::vector<int> &calendar_years, double threshold,
                               const PreprocessConstants &back, const ExposureOptions &opt) {
  if (static_cast<int>(calendar_years.size()) != m.sites.num_years())
    throw DataError("calendar years do not match the fitted period");
  ExposureSeries out;
  out.mode = opt.b_mode;
  out.threshold = threshold;
  for (int j = 0; j < m.sites.num_years(); ++j) {
    const Matrix v = cell_values(m, ens, m.prediction_matrix(raster.centroids, j), j, back, opt);
    out.years.push_back(calendar_years[j]);
    out.population_mean.push_back(population_mean(v, raster).summary);
    const Exceedance e = exceedance(v, raster, threshold);
    out.population_exceedance.push_back(e.population);
    out.area_exceedance.push_back(e.area);
  }
  return out;
}

} // namespace prefsamp
