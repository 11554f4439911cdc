#include "geocause/covariates.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace geocause {

double log1p_transform(double x) {
  if (x < 0.0) {
    throw ValidationError("log1p_transform: negative input " +
                          format_double(x));
  }
  return std::log1p(x);
}

std::optional<double> aggregate_period(const std::map<int, double>& yearly,
                                       const Period& period, AggMode mode,
                                       std::string* reason) {
  double acc = 0.0;
  for (int year = period.first_year - 3; year <= period.first_year - 1; ++year) {
    auto it = yearly.find(year);
    if (it == yearly.end()) {
      if (reason)
        *reason = "missing year " + std::to_string(year) +
                  " for period starting " + std::to_string(period.first_year);
      return std::nullopt;
    }
    acc += it->second;
  }
  return mode == AggMode::Mean ? acc / 3.0 : acc;
}

IndicatorValues indicator_covariates(const IndicatorContext& ctx) {
  IndicatorValues out;
  bool ever_member = false;
  int deviating = 0;
  for (int year = ctx.period.first_year - 3; year <= ctx.period.first_year - 1;
       ++year) {
    auto mem = ctx.unsc_member.find(year);
    const bool member = mem != ctx.unsc_member.end() && mem->second;
    if (member) {
      ever_member = true;
      auto dev = ctx.unsc_deviating_votes.find(year);
      if (dev != ctx.unsc_deviating_votes.end()) deviating += dev->second;
    }
    auto leader = ctx.leader_birth_adm1.find(year);
    if (leader != ctx.leader_birth_adm1.end() && !ctx.adm1_id.empty() &&
        leader->second == ctx.adm1_id) {
      out.leader_birthplace = 1;
    }
    if (ctx.election_years.count(year)) out.election_year = 1;
  }
  if (ever_member) {
    if (deviating == 0) out.unsc_aligned = 1;
    else out.unsc_nonaligned = 1;
  }
  if (out.unsc_aligned && out.unsc_nonaligned) {
    throw ValidationError(
        "indicator_covariates: contradictory security-council records for " +
        ctx.country_code + " (aligned and nonaligned both set)");
  }
  return out;
}

StandardizeFit standardize_fit(const Eigen::MatrixXd& train,
                               const std::vector<std::string>& names,
                               double sd_floor) {
  if (static_cast<std::size_t>(train.cols()) != names.size()) {
    throw ValidationError("standardize_fit: " + std::to_string(train.cols()) +
                          " columns but " + std::to_string(names.size()) +
                          " names");
  }
  if (train.rows() == 0) {
    throw ValidationError("standardize_fit: empty training matrix");
  }
  StandardizeFit fit;
  std::vector<double> means, sds;
  const double n = static_cast<double>(train.rows());
  for (Eigen::Index j = 0; j < train.cols(); ++j) {
    const double mean = train.col(j).mean();
    const double var = (train.col(j).array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    if (sd == 0.0) {
      fit.dropped_names.push_back(names[static_cast<std::size_t>(j)]);
      continue;
    }
    fit.kept_cols.push_back(j);
    fit.kept_names.push_back(names[static_cast<std::size_t>(j)]);
    means.push_back(mean);
    sds.push_back(std::max(sd, sd_floor));
  }
  fit.mean = Eigen::Map<Eigen::VectorXd>(means.data(),
                                         static_cast<Eigen::Index>(means.size()));
  fit.sd = Eigen::Map<Eigen::VectorXd>(sds.data(),
                                       static_cast<Eigen::Index>(sds.size()));
  return fit;
}

Eigen::MatrixXd standardize_apply(const StandardizeFit& fit,
                                  const Eigen::MatrixXd& columns) {
  Eigen::MatrixXd out(columns.rows(),
                      static_cast<Eigen::Index>(fit.kept_cols.size()));
  for (std::size_t k = 0; k < fit.kept_cols.size(); ++k) {
    const Eigen::Index j = fit.kept_cols[k];
    if (j >= columns.cols()) {
      throw ValidationError(
          "standardize_apply: matrix has fewer columns than the fit");
    }
    out.col(static_cast<Eigen::Index>(k)) =
        (columns.col(j).array() - fit.mean[static_cast<Eigen::Index>(k)]) /
        fit.sd[static_cast<Eigen::Index>(k)];
  }
  return out;
}

std::vector<std::string> FixedEffectEncoding::column_names() const {
  const std::string prefix = level == FeLevel::Adm2 ? "fe_adm2_" : "fe_period_";
  std::vector<std::string> out;
  for (std::size_t i = 1; i < categories.size(); ++i)
    out.push_back(prefix + categories[i]);
  return out;
}

std::vector<double> FixedEffectEncoding::encode(
    const std::string& category) const {
  std::vector<double> row(width(), 0.0);
  auto it = category_index.find(category);
  if (it == category_index.end()) {
    if (has_other_bucket) it = category_index.find("other");
    if (it == category_index.end()) {
      throw ValidationError("fixed-effect encoding: unknown category '" +
                            category + "'");
    }
  }
  if (it->second > 0) row[it->second - 1] = 1.0;  // index 0 is the reference
  return row;
}

FixedEffectEncoding make_fe_encoding(FeLevel level,
                                     const std::vector<std::string>& observed,
                                     std::size_t min_count) {
  if (observed.empty()) {
    throw ValidationError("fixed-effect encoding: no observations");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& c : observed) ++counts[c];

  FixedEffectEncoding enc;
  enc.level = level;
  std::vector<std::string> cats;
  bool any_rare = false;
  for (const auto& [cat, cnt] : counts) {
    if (cnt < min_count) any_rare = true;
    else cats.push_back(cat);
  }
  std::sort(cats.begin(), cats.end());
  if (any_rare) {
    cats.push_back("other");
    enc.has_other_bucket = true;
  }
  if (cats.empty()) {
    // Everything was rare: a single "other" category carries no information.
    throw ValidationError(
        "fixed-effect encoding: all categories fall under the rare-category "
        "floor; nothing to encode");
  }
  enc.categories = cats;
  for (std::size_t i = 0; i < cats.size(); ++i) enc.category_index[cats[i]] = i;
  // Rare categories map onto the shared bucket.
  if (any_rare) {
    for (const auto& [cat, cnt] : counts) {
      if (cnt < min_count)
        enc.category_index[cat] = enc.category_index.at("other");
    }
  }
  return enc;
}

std::string covariate_schema_json(
    const std::vector<CovariateSchemaEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"name", e.name},
                   {"transform", e.transform},
                   {"aggregation", e.aggregation},
                   {"source", e.source}});
  }
  nlohmann::json doc;
  doc["covariates"] = arr;
  return doc.dump(2) + "\n";
}

}  // namespace geocause
