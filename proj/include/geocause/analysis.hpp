#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "geocause/estimator.hpp"

namespace geocause {

// ---------------------------------------------------------------------------
// Classifier discrimination
// ---------------------------------------------------------------------------

/// Probability that a random positive outranks a random negative, ties
/// counted one half (midrank construction). Throws DataError when only one
/// class is present.
double auc(std::span<const double> scores, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Salience matrices
// ---------------------------------------------------------------------------

struct SalienceMatrix {
  std::vector<std::string> covariate_names;  // row labels
  std::vector<int> sector_codes;             // column labels
  Eigen::MatrixXd entries;                   // signed mean sensitivities
  Funder funder = Funder::WorldBank;
  Specification specification = Specification::c2_m_x_fe;

  void validate() const;
};

/// Entrywise |a| - |b| after aligning `tabular_only` onto `with_images`'
/// labels. Positive entries mean the covariate matters more once images are
/// in the model. Label mismatches raise ValidationError listing the
/// differences.
Eigen::MatrixXd salience_delta(const SalienceMatrix& with_images,
                               const SalienceMatrix& tabular_only);

// ---------------------------------------------------------------------------
// Canonical correlation
// ---------------------------------------------------------------------------

struct CcaResult {
  double value = 0.0;          // leading canonical correlation, in [0, 1]
  double lambda = 0.0;         // ridge actually applied (reported)
  std::size_t sectors_used = 0;
};

/// Leading canonical correlation between two sector-by-covariate matrices.
/// Columns are standardized internally; both within-set covariances receive
/// ridge `lambda` before whitening (the covariate count typically exceeds
/// the sector count). Throws DataError with fewer than 3 shared rows.
CcaResult leading_canonical_correlation(const Eigen::MatrixXd& a,
                                        const Eigen::MatrixXd& b,
                                        double lambda = 1e-3);

// ---------------------------------------------------------------------------
// Meta-regression of ATE levels on specification structure
// ---------------------------------------------------------------------------

struct MetaCoefficient {
  std::string name;
  double estimate = 0.0;
  double std_error = 0.0;
};

struct MetaRegressionModel {
  std::vector<MetaCoefficient> coefficients;
  double r2 = 0.0;
  double adj_r2 = 0.0;
  std::size_t n = 0;
  std::vector<std::string> dropped;  // aliased columns removed for rank
};

struct MetaRegressionResult {
  // Model 1: additive indicators has_x, has_fe, has_m (+ funder dummy).
  MetaRegressionModel additive;
  // Model 2: one dummy per specification-structure combination (+ funder).
  MetaRegressionModel combinations;
};

MetaRegressionResult meta_regress_ate(std::span<const AteEstimate> estimates,
                                      bool inverse_variance_weighted = false);

/// Fixed-width text rendering of both coefficient tables.
std::string format_meta_regression(const MetaRegressionResult& res);

// ---------------------------------------------------------------------------
// Two-way fixed-effects robustness estimator
// ---------------------------------------------------------------------------

struct TwfePanelRow {
  std::string unit_id;
  int period_index = 0;
  double y = 0.0;
  int treated = 0;
  std::string cluster_id;
};

struct TwfeResult {
  double beta = 0.0;
  double clustered_se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_obs = 0;
  std::size_t n_units = 0;
  std::size_t n_periods = 0;
  std::size_t n_switchers = 0;  // units whose treatment status changes
  std::size_t cluster_count = 0;
};

/// Within-estimator for y_it = unit effect + period effect + beta * a_it + e:
/// both y and a are demeaned by alternating unit/period projections until the
/// largest cell change falls below 1e-10, then beta comes from the univariate
/// regression of the residualized outcome on the residualized treatment.
/// The variance is cluster-robust with a G/(G-1) small-sample factor.
TwfeResult twfe(std::span<const TwfePanelRow> rows,
                double z_value = 1.959963984540054);

}  // namespace geocause
