#include "geocause/analysis.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace geocause {

// ---------------------------------------------------------------------------
// AUC (midrank construction)
// ---------------------------------------------------------------------------

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("auc: score and label lengths differ");
  }
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) {
      throw ValidationError("auc: labels must be 0/1");
    }
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw DataError("auc: degenerate input, only one class present");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return scores[i] < scores[j];
  });
  // Midranks: tied scores share the average of their rank range.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) +
                                  static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos -
                   static_cast<double>(n_pos) *
                       (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Salience delta
// ---------------------------------------------------------------------------

void SalienceMatrix::validate() const {
  if (static_cast<std::size_t>(entries.rows()) != covariate_names.size() ||
      static_cast<std::size_t>(entries.cols()) != sector_codes.size()) {
    throw ValidationError("salience matrix: label counts do not match entries");
  }
  std::set<std::string> rows(covariate_names.begin(), covariate_names.end());
  std::set<int> cols(sector_codes.begin(), sector_codes.end());
  if (rows.size() != covariate_names.size() ||
      cols.size() != sector_codes.size()) {
    throw ValidationError("salience matrix: duplicate row or column labels");
  }
  if (!entries.allFinite()) {
    throw ValidationError("salience matrix: non-finite entries");
  }
}

Eigen::MatrixXd salience_delta(const SalienceMatrix& with_images,
                               const SalienceMatrix& tabular_only) {
  with_images.validate();
  tabular_only.validate();

  std::ostringstream diff;
  std::map<std::string, Eigen::Index> b_row;
  for (std::size_t i = 0; i < tabular_only.covariate_names.size(); ++i)
    b_row[tabular_only.covariate_names[i]] = static_cast<Eigen::Index>(i);
  std::map<int, Eigen::Index> b_col;
  for (std::size_t j = 0; j < tabular_only.sector_codes.size(); ++j)
    b_col[tabular_only.sector_codes[j]] = static_cast<Eigen::Index>(j);

  for (const auto& name : with_images.covariate_names)
    if (!b_row.count(name)) diff << " row '" << name << "' missing from second;";
  for (const auto& name : tabular_only.covariate_names)
    if (std::find(with_images.covariate_names.begin(),
                  with_images.covariate_names.end(),
                  name) == with_images.covariate_names.end())
      diff << " row '" << name << "' missing from first;";
  for (int s : with_images.sector_codes)
    if (!b_col.count(s)) diff << " sector " << s << " missing from second;";
  for (int s : tabular_only.sector_codes)
    if (std::find(with_images.sector_codes.begin(),
                  with_images.sector_codes.end(),
                  s) == with_images.sector_codes.end())
      diff << " sector " << s << " missing from first;";
  if (!diff.str().empty()) {
    throw ValidationError("salience_delta: label mismatch:" + diff.str());
  }

  Eigen::MatrixXd out(with_images.entries.rows(), with_images.entries.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const Eigen::Index bi =
          b_row.at(with_images.covariate_names[static_cast<std::size_t>(i)]);
      const Eigen::Index bj =
          b_col.at(with_images.sector_codes[static_cast<std::size_t>(j)]);
      out(i, j) = std::abs(with_images.entries(i, j)) -
                  std::abs(tabular_only.entries(bi, bj));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical correlation
// ---------------------------------------------------------------------------

namespace {

// Center and scale columns to unit population sd; constant columns are
// removed (they carry no correlation signal and break whitening).
Eigen::MatrixXd standardize_columns_dropping_constants(
    const Eigen::MatrixXd& m) {
  const double n = static_cast<double>(m.rows());
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double mean = m.col(j).mean();
    const double sd =
        std::sqrt((m.col(j).array() - mean).square().sum() / n);
    if (sd > 0.0) keep.push_back(j);
  }
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const Eigen::Index j = keep[k];
    const double mean = m.col(j).mean();
    const double sd =
        std::sqrt((m.col(j).array() - mean).square().sum() / n);
    out.col(static_cast<Eigen::Index>(k)) = (m.col(j).array() - mean) / sd;
  }
  return out;
}

Eigen::MatrixXd inverse_sqrt_spd(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  Eigen::VectorXd vals = eig.eigenvalues();
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    vals[i] = 1.0 / std::sqrt(std::max(vals[i], 1e-12));
  return eig.eigenvectors() * vals.asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

CcaResult leading_canonical_correlation(const Eigen::MatrixXd& a,
                                        const Eigen::MatrixXd& b,
                                        double lambda) {
  if (a.rows() != b.rows()) {
    throw ValidationError("canonical correlation: row counts differ (" +
                          std::to_string(a.rows()) + " vs " +
                          std::to_string(b.rows()) + ")");
  }
  if (a.rows() < 3) {
    throw DataError(
        "canonical correlation: fewer than 3 shared sectors (have " +
        std::to_string(a.rows()) + ")");
  }
  if (lambda < 0.0) {
    throw ValidationError("canonical correlation: negative ridge");
  }
  const Eigen::MatrixXd x = standardize_columns_dropping_constants(a);
  const Eigen::MatrixXd y = standardize_columns_dropping_constants(b);
  if (x.cols() == 0 || y.cols() == 0) {
    throw DataError("canonical correlation: a matrix has no varying columns");
  }
  const double n1 = static_cast<double>(x.rows() - 1);
  Eigen::MatrixXd sxx = x.transpose() * x / n1;
  Eigen::MatrixXd syy = y.transpose() * y / n1;
  const Eigen::MatrixXd sxy = x.transpose() * y / n1;
  sxx.diagonal().array() += lambda;
  syy.diagonal().array() += lambda;
  const Eigen::MatrixXd t =
      inverse_sqrt_spd(sxx) * sxy * inverse_sqrt_spd(syy);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(t);
  CcaResult res;
  res.value = std::clamp(svd.singularValues()[0], 0.0, 1.0);
  res.lambda = lambda;
  res.sectors_used = static_cast<std::size_t>(a.rows());
  return res;
}

// ---------------------------------------------------------------------------
// OLS with rank detection (shared by the meta-regression models)
// ---------------------------------------------------------------------------

namespace {

struct OlsFit {
  std::vector<MetaCoefficient> coefficients;
  double r2 = 0.0;
  double adj_r2 = 0.0;
  std::vector<std::string> dropped;
  Eigen::VectorXd residuals;
};

OlsFit ols_with_rank_detection(const Eigen::MatrixXd& x_full,
                               const std::vector<std::string>& names,
                               const Eigen::VectorXd& y) {
  const Eigen::Index n = x_full.rows();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x_full);
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();

  OlsFit fit;
  std::vector<Eigen::Index> kept;
  if (rank < x_full.cols()) {
    // The first `rank` pivot columns form an independent set; the rest are
    // linear combinations of them and get dropped with a notice.
    const auto& perm = qr.colsPermutation().indices();
    std::vector<bool> keep_mask(static_cast<std::size_t>(x_full.cols()), false);
    for (Eigen::Index i = 0; i < rank; ++i)
      keep_mask[static_cast<std::size_t>(perm[i])] = true;
    for (Eigen::Index j = 0; j < x_full.cols(); ++j) {
      if (keep_mask[static_cast<std::size_t>(j)]) kept.push_back(j);
      else fit.dropped.push_back(names[static_cast<std::size_t>(j)]);
    }
  } else {
    for (Eigen::Index j = 0; j < x_full.cols(); ++j) kept.push_back(j);
  }

  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = x_full.col(kept[k]);

  const Eigen::Index k = x.cols();
  if (n <= k) {
    throw DataError("regression: " + std::to_string(n) +
                    " rows cannot identify " + std::to_string(k) +
                    " coefficients");
  }
  const Eigen::VectorXd beta = x.householderQr().solve(y);
  const Eigen::VectorXd resid = y - x * beta;
  const double rss = resid.squaredNorm();
  const double ybar = y.mean();
  const double tss = (y.array() - ybar).square().sum();
  const double sigma2 = rss / static_cast<double>(n - k);
  const Eigen::MatrixXd xtx_inv =
      (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(k, k));

  for (std::size_t j = 0; j < kept.size(); ++j) {
    MetaCoefficient c;
    c.name = names[static_cast<std::size_t>(kept[j])];
    c.estimate = beta[static_cast<Eigen::Index>(j)];
    c.std_error = std::sqrt(std::max(
        0.0, sigma2 * xtx_inv(static_cast<Eigen::Index>(j),
                              static_cast<Eigen::Index>(j))));
    fit.coefficients.push_back(c);
  }
  fit.r2 = tss > 0.0 ? 1.0 - rss / tss : 1.0;
  fit.adj_r2 = 1.0 - (1.0 - fit.r2) * static_cast<double>(n - 1) /
                         static_cast<double>(n - k);
  fit.residuals = resid;
  return fit;
}

struct SpecFlags {
  int has_x, has_fe, has_m;
  std::string combo;
};

SpecFlags spec_flags(Specification s) {
  switch (s) {
    case Specification::a_diffmeans: return {0, 0, 0, "none"};
    case Specification::b_x_fe: return {1, 1, 0, "x_fe"};
    case Specification::c1_m: return {0, 0, 1, "m"};
    case Specification::c2_m_x_fe: return {1, 1, 1, "m_x_fe"};
  }
  return {0, 0, 0, "none"};
}

}  // namespace

MetaRegressionResult meta_regress_ate(std::span<const AteEstimate> estimates,
                                      bool inverse_variance_weighted) {
  if (estimates.size() < 2) {
    throw DataError("meta-regression: need at least 2 estimate rows, got " +
                    std::to_string(estimates.size()));
  }
  std::set<std::string> spec_set;
  std::set<Funder> funders;
  for (const auto& e : estimates) {
    spec_set.insert(specification_name(e.specification));
    funders.insert(e.funder);
  }
  if (spec_set.size() < 2) {
    throw DataError(
        "meta-regression: estimates cover a single specification; nothing to "
        "explain");
  }

  const Eigen::Index n = static_cast<Eigen::Index>(estimates.size());
  Eigen::VectorXd y(n);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = estimates[static_cast<std::size_t>(i)].ate;
    if (inverse_variance_weighted) {
      const double se = estimates[static_cast<std::size_t>(i)].std_error;
      w[i] = se > 0.0 ? 1.0 / (se * se) : 1.0;
    }
  }

  const bool funder_dummy = funders.size() > 1;

  MetaRegressionResult out;
  // Model 1: additive indicators.
  {
    std::vector<std::string> names{"intercept", "has_x", "has_fe", "has_m"};
    if (funder_dummy) names.push_back("funder_china");
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(names.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& e = estimates[static_cast<std::size_t>(i)];
      const SpecFlags f = spec_flags(e.specification);
      x(i, 0) = 1.0;
      x(i, 1) = f.has_x;
      x(i, 2) = f.has_fe;
      x(i, 3) = f.has_m;
      if (funder_dummy) x(i, 4) = e.funder == Funder::China ? 1.0 : 0.0;
    }
    Eigen::MatrixXd xw = x;
    Eigen::VectorXd yw = y;
    if (inverse_variance_weighted) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double s = std::sqrt(w[i]);
        xw.row(i) *= s;
        yw[i] *= s;
      }
    }
    auto fit = ols_with_rank_detection(xw, names, yw);
    out.additive.coefficients = fit.coefficients;
    out.additive.r2 = fit.r2;
    out.additive.adj_r2 = fit.adj_r2;
    out.additive.dropped = fit.dropped;
    out.additive.n = static_cast<std::size_t>(n);
    if (!funder_dummy)
      out.additive.dropped.push_back("funder_china (single funder)");
  }
  // Model 2: combination dummies, reference = unadjusted.
  {
    std::set<std::string> combos;
    for (const auto& e : estimates) {
      const std::string c = spec_flags(e.specification).combo;
      if (c != "none") combos.insert(c);
    }
    std::vector<std::string> names{"intercept"};
    for (const auto& c : combos) names.push_back("combo_" + c);
    if (funder_dummy) names.push_back("funder_china");
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(
        n, static_cast<Eigen::Index>(names.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& e = estimates[static_cast<std::size_t>(i)];
      x(i, 0) = 1.0;
      const std::string c = spec_flags(e.specification).combo;
      if (c != "none") {
        const auto it = std::find(names.begin(), names.end(), "combo_" + c);
        x(i, static_cast<Eigen::Index>(it - names.begin())) = 1.0;
      }
      if (funder_dummy)
        x(i, static_cast<Eigen::Index>(names.size()) - 1) =
            e.funder == Funder::China ? 1.0 : 0.0;
    }
    Eigen::MatrixXd xw = x;
    Eigen::VectorXd yw = y;
    if (inverse_variance_weighted) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double s = std::sqrt(w[i]);
        xw.row(i) *= s;
        yw[i] *= s;
      }
    }
    // With a single estimate per combination this model is saturated (one
    // dummy per row); report it as skipped instead of failing the additive
    // fit above.
    if (n > static_cast<Eigen::Index>(combos.size()) + 1 +
                (funder_dummy ? 1 : 0)) {
      auto fit = ols_with_rank_detection(xw, names, yw);
      out.combinations.coefficients = fit.coefficients;
      out.combinations.r2 = fit.r2;
      out.combinations.adj_r2 = fit.adj_r2;
      out.combinations.dropped = fit.dropped;
    } else {
      out.combinations.dropped.push_back(
          "all combination dummies (saturated: no residual degrees of "
          "freedom)");
    }
    out.combinations.n = static_cast<std::size_t>(n);
    if (!funder_dummy)
      out.combinations.dropped.push_back("funder_china (single funder)");
  }
  return out;
}

std::string format_meta_regression(const MetaRegressionResult& res) {
  std::ostringstream os;
  const auto render = [&os](const std::string& title,
                            const MetaRegressionModel& m) {
    os << title << "\n";
    os << "  " << std::string(46, '-') << "\n";
    char buf[128];
    for (const auto& c : m.coefficients) {
      std::snprintf(buf, sizeof(buf), "  %-22s %12.6f  (%.6f)\n",
                    c.name.c_str(), c.estimate, c.std_error);
      os << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "  n = %zu   R^2 = %.4f   adjusted R^2 = %.4f\n", m.n, m.r2,
                  m.adj_r2);
    os << buf;
    for (const auto& d : m.dropped) os << "  dropped: " << d << "\n";
    os << "\n";
  };
  os << "ATE-level regressions on specification structure\n";
  os << "(coefficients with analytic standard errors in parentheses)\n\n";
  render("Model 1: additive indicators", res.additive);
  render("Model 2: specification-combination dummies", res.combinations);
  return os.str();
}

// ---------------------------------------------------------------------------
// Two-way fixed effects
// ---------------------------------------------------------------------------

TwfeResult twfe(std::span<const TwfePanelRow> rows, double z_value) {
  if (rows.empty()) throw ValidationError("twfe: empty panel");
  std::map<std::string, std::vector<std::size_t>> by_unit;
  std::map<int, std::vector<std::size_t>> by_period;
  std::map<std::string, std::vector<std::size_t>> by_cluster;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    by_unit[rows[i].unit_id].push_back(i);
    by_period[rows[i].period_index].push_back(i);
    by_cluster[rows[i].cluster_id].push_back(i);
    if (!std::isfinite(rows[i].y)) {
      throw DataError("twfe: non-finite outcome for unit " + rows[i].unit_id);
    }
  }
  if (by_period.size() < 2) {
    throw DataError("twfe: need at least 2 periods, got " +
                    std::to_string(by_period.size()));
  }
  std::size_t n_switchers = 0;
  for (const auto& [unit, idx] : by_unit) {
    const int first = rows[idx.front()].treated;
    for (std::size_t i : idx) {
      if (rows[i].treated != first) {
        ++n_switchers;
        break;
      }
    }
  }
  if (n_switchers == 0) {
    throw DataError(
        "twfe: no unit ever switches treatment status; the within "
        "transformation removes all identifying variation");
  }
  if (by_cluster.size() < 2) {
    throw DataError("twfe: clustered errors need at least 2 clusters, got " +
                    std::to_string(by_cluster.size()));
  }

  // Alternating within-transformation of outcome and treatment jointly.
  std::vector<double> yt(rows.size()), at(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    yt[i] = rows[i].y;
    at[i] = static_cast<double>(rows[i].treated);
  }
  const double tol = 1e-10;
  for (int sweep = 0; sweep < 10000; ++sweep) {
    double max_change = 0.0;
    for (const auto& [unit, idx] : by_unit) {
      double my = 0.0, ma = 0.0;
      for (std::size_t i : idx) { my += yt[i]; ma += at[i]; }
      my /= static_cast<double>(idx.size());
      ma /= static_cast<double>(idx.size());
      for (std::size_t i : idx) { yt[i] -= my; at[i] -= ma; }
      max_change = std::max({max_change, std::abs(my), std::abs(ma)});
    }
    for (const auto& [period, idx] : by_period) {
      double my = 0.0, ma = 0.0;
      for (std::size_t i : idx) { my += yt[i]; ma += at[i]; }
      my /= static_cast<double>(idx.size());
      ma /= static_cast<double>(idx.size());
      for (std::size_t i : idx) { yt[i] -= my; at[i] -= ma; }
      max_change = std::max({max_change, std::abs(my), std::abs(ma)});
    }
    if (max_change < tol) break;
  }

  double saa = 0.0, say = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    saa += at[i] * at[i];
    say += at[i] * yt[i];
  }
  if (saa <= 0.0) {
    throw NumericError("twfe: residualized treatment has no variance");
  }
  TwfeResult res;
  res.beta = say / saa;
  res.n_obs = rows.size();
  res.n_units = by_unit.size();
  res.n_periods = by_period.size();
  res.n_switchers = n_switchers;
  res.cluster_count = by_cluster.size();

  // Cluster-robust sandwich on the within-transformed regression.
  double meat = 0.0;
  for (const auto& [cluster, idx] : by_cluster) {
    double s = 0.0;
    for (std::size_t i : idx) s += at[i] * (yt[i] - res.beta * at[i]);
    meat += s * s;
  }
  const double g = static_cast<double>(by_cluster.size());
  const double var = (g / (g - 1.0)) * meat / (saa * saa);
  res.clustered_se = std::sqrt(var);
  res.ci_low = res.beta - z_value * res.clustered_se;
  res.ci_high = res.beta + z_value * res.clustered_se;
  return res;
}

}  // namespace geocause
