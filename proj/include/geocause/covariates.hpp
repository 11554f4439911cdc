#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "geocause/common.hpp"
#include "geocause/geo.hpp"

namespace geocause {

// ---------------------------------------------------------------------------
// Scalar transforms
// ---------------------------------------------------------------------------

/// ln(1 + x) for x >= 0. Negative input is a domain violation.
double log1p_transform(double x);

enum class AggMode { Mean, Sum };

/// Collapse a yearly series onto the three years strictly preceding
/// `period` (first_year-3 .. first_year-1). Stock-like covariates average,
/// flow-like covariates sum. All three years must be present; otherwise the
/// result is missing and `reason` (when non-null) says which year is absent.
std::optional<double> aggregate_period(const std::map<int, double>& yearly,
                                       const Period& period, AggMode mode,
                                       std::string* reason = nullptr);

// ---------------------------------------------------------------------------
// Political indicator covariates
// ---------------------------------------------------------------------------

struct IndicatorContext {
  std::string country_code;
  std::string adm1_id;
  Period period;  // indicators look at the 3 years before this period
  // Security-council membership and voting: for each year, was the country a
  // temporary member, and how many of its votes deviated from the U.S.
  std::map<int, bool> unsc_member;
  std::map<int, int> unsc_deviating_votes;
  // Leader birthplace: ADM1 of the sitting leader's birthplace per year.
  std::map<int, std::string> leader_birth_adm1;
  // National election years.
  std::set<int> election_years;
};

struct IndicatorValues {
  int unsc_aligned = 0;     // member with zero deviating votes in the window
  int unsc_nonaligned = 0;  // member with at least one deviating vote
  int leader_birthplace = 0;  // unit's ADM1 was the leader's birthplace in any year
  int election_year = 0;      // an election fell in any of the 3 years
};

/// Evaluate the four 0/1 indicator covariates over the 3 years preceding the
/// context period. Throws ValidationError if the records would set both
/// UNSC flags simultaneously.
IndicatorValues indicator_covariates(const IndicatorContext& ctx);

// ---------------------------------------------------------------------------
// Fold-aware standardization
// ---------------------------------------------------------------------------

struct StandardizeFit {
  std::vector<std::string> kept_names;
  std::vector<std::string> dropped_names;  // constant on the training fold
  Eigen::VectorXd mean;   // per kept column
  Eigen::VectorXd sd;     // population sd, floored at sd_floor
  std::vector<Eigen::Index> kept_cols;  // indices into the original matrix
};

/// Fit column means and population standard deviations on `train` only.
/// Columns whose training sd is exactly 0 are dropped (recorded in
/// dropped_names); surviving sds are floored at `sd_floor`.
StandardizeFit standardize_fit(const Eigen::MatrixXd& train,
                               const std::vector<std::string>& names,
                               double sd_floor = 1e-8);

/// Apply a fit to any matrix with the original column layout; returns only
/// the kept columns, centred and scaled with the training statistics.
Eigen::MatrixXd standardize_apply(const StandardizeFit& fit,
                                  const Eigen::MatrixXd& columns);

// ---------------------------------------------------------------------------
// Fixed-effect encodings
// ---------------------------------------------------------------------------

enum class FeLevel { Adm2, PeriodFe };

/// One-hot dummy coding with a reference category (the first in sorted
/// order), omitted so the design stays full rank next to an intercept.
/// Categories observed on fewer than `min_count` units collapse into a
/// shared "other" bucket before coding.
struct FixedEffectEncoding {
  FeLevel level = FeLevel::Adm2;
  std::vector<std::string> categories;  // sorted; [0] is the reference
  std::map<std::string, std::size_t> category_index;
  bool has_other_bucket = false;

  std::size_t width() const { return categories.size() - 1; }
  std::vector<std::string> column_names() const;
  /// Dummy row for a category; unknown categories map to the "other"
  /// bucket when present and are an error otherwise.
  std::vector<double> encode(const std::string& category) const;
};

FixedEffectEncoding make_fe_encoding(FeLevel level,
                                     const std::vector<std::string>& observed,
                                     std::size_t min_count = 5);

// ---------------------------------------------------------------------------
// Covariate schema (audit record emitted beside every panel)
// ---------------------------------------------------------------------------

struct CovariateSchemaEntry {
  std::string name;
  std::string transform;    // "log1p", "identity", "indicator", "dummy"
  std::string aggregation;  // "mean", "sum", "none"
  std::string source;       // source column or dataset tag
};

std::string covariate_schema_json(const std::vector<CovariateSchemaEntry>& entries);

}  // namespace geocause
