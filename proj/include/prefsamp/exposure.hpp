#pragma once

#include "prefsamp/inference.hpp"
#include "prefsamp/io.hpp"
#include "prefsamp/model.hpp"

#include <cstdint>
#include <vector>

namespace prefsamp {

/// Raster cell centroids with population weights summing to one.
struct PopulationRaster {
  PointList centroids;
  Vector weights;
  /// Factor the raw weights were multiplied by (1 when already normalized).
  double renormalization = 1.0;

  /// Normalizes raw counts. Throws DataError on negative or all-zero
  /// weights and on size mismatches.
  static PopulationRaster from_counts(PointList centroids, const Vector &counts);
  /// Throws DataError unless the weights are nonnegative and sum to 1.
  void validate() const;
  Index size() const { return static_cast<Index>(centroids.size()); }
};

enum class BEffectMode { fresh_draws, exclude };

struct ExposureOptions {
  /// Site effects for cells: a new (b0, b1) pair per cell and draw, or none.
  BEffectMode b_mode = BEffectMode::fresh_draws;
  std::uint64_t seed = 1;
};

/// Mean and equal-tailed 95% interval over draws.
struct DrawSummary {
  double mean = 0, lower = 0, upper = 0;
};

DrawSummary summarize_draws(const Vector &v, double level = 0.95);

/// Back-transformed field per cell (rows) and draw (columns). `projector`
/// maps the latent vector to the linear predictor at the cells in `year`
/// (AssembledModel::prediction_matrix).
Matrix cell_values(const AssembledModel &m, const PosteriorEnsemble &ens, const SpMat &projector, int year,
                   const PreprocessConstants &back, const ExposureOptions &opt = {});

struct PopulationMean {
  Vector per_draw;
  DrawSummary summary;
  BEffectMode mode = BEffectMode::fresh_draws;
};

PopulationMean population_mean(const AssembledModel &m, const PosteriorEnsemble &ens, const PopulationRaster &raster,
                               const SpMat &projector, int year, const PreprocessConstants &back,
                               const ExposureOptions &opt = {});

struct Exceedance {
  Vector cell_probability;
  Vector population_per_draw, area_per_draw;
  DrawSummary population, area;
};

Exceedance exceedance(const AssembledModel &m, const PosteriorEnsemble &ens, const PopulationRaster &raster,
                      const SpMat &projector, int year, double threshold, const PreprocessConstants &back,
                      const ExposureOptions &opt = {});

/// Same summaries from precomputed cell values (cells x draws).
PopulationMean population_mean(const Matrix &values, const PopulationRaster &raster);
Exceedance exceedance(const Matrix &values, const PopulationRaster &raster, double threshold);

struct ExposureSeries {
  std::vector<int> years;
  std::vector<DrawSummary> population_mean;
  std::vector<DrawSummary> population_exceedance;
  std::vector<DrawSummary> area_exceedance;
  BEffectMode mode = BEffectMode::fresh_draws;
  double threshold = 0;
};

ExposureSeries exposure_series(const AssembledModel &m, const PosteriorEnsemble &ens, const PopulationRaster &raster,
                               const std::vector<int> &calendar_years, double threshold,
                               const PreprocessConstants &back, const ExposureOptions &opt = {});

} // namespace prefsamp
