#include "geocause/vit.hpp"

#include <algorithm>
#include <cmath>

namespace geocause {

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (!use_images && tabular_width == 0) {
    throw ValidationError(
        "model config: neither image nor tabular stream enabled");
  }
  if (embed_dim == 0 || num_heads == 0) {
    throw ValidationError("model config: embed_dim and num_heads must be > 0");
  }
  if (embed_dim % num_heads != 0) {
    throw ValidationError("model config: embed_dim " +
                          std::to_string(embed_dim) +
                          " not divisible by num_heads " +
                          std::to_string(num_heads));
  }
  if (use_images) {
    if (patch_size == 0 || image_side == 0 || image_bands == 0) {
      throw ValidationError("model config: empty image geometry");
    }
    if (image_side % patch_size != 0) {
      throw ValidationError("model config: image_side " +
                            std::to_string(image_side) +
                            " not divisible by patch_size " +
                            std::to_string(patch_size));
    }
  }
  if (dropout_rate < 0.0f || dropout_rate >= 1.0f || drop_path_rate < 0.0f ||
      drop_path_rate >= 1.0f) {
    throw ValidationError("model config: dropout and drop-path rates must lie "
                          "in [0, 1)");
  }
}

// ---------------------------------------------------------------------------
// Parameter construction
// ---------------------------------------------------------------------------

namespace {

TensorPtr xavier(SplitMix& rng, std::size_t fan_in, std::size_t fan_out,
                 std::string name) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<float> vals(fan_in * fan_out);
  for (auto& v : vals)
    v = static_cast<float>(rng.next_uniform(-bound, bound));
  return Tensor::create(Shape{fan_in, fan_out}, std::move(vals), true,
                        std::move(name));
}

TensorPtr small_normal(SplitMix& rng, Shape shape, std::string name,
                       double sd = 0.02) {
  std::vector<float> vals(shape_numel(shape));
  for (auto& v : vals) v = static_cast<float>(sd * rng.next_normal());
  return Tensor::create(std::move(shape), std::move(vals), true,
                        std::move(name));
}

TensorPtr const_vec(std::size_t n, float fill, std::string name) {
  return Tensor::create(Shape{n}, std::vector<float>(n, fill), true,
                        std::move(name));
}

}  // namespace

PropensityModel::PropensityModel(ModelConfig cfg, std::uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  SplitMix rng(derive_seed(init_seed, 0x1417));
  const std::size_t d = cfg_.embed_dim;
  const std::size_t seq = cfg_.sequence_length();

  if (cfg_.use_images) {
    patch_w_ = xavier(rng, cfg_.patch_dim(), d, "patch_w");
    patch_b_ = const_vec(d, 0.0f, "patch_b");
  }
  if (cfg_.tabular_width > 0) {
    tab_w_ = xavier(rng, cfg_.tabular_width, d, "tab_w");
    tab_b_ = const_vec(d, 0.0f, "tab_b");
  }
  cls_ = small_normal(rng, Shape{1, d}, "cls");
  pos_ = small_normal(rng, Shape{seq, d}, "pos");

  layers_.resize(cfg_.num_layers);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    auto& lp = layers_[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    lp.ln1_g = const_vec(d, 1.0f, p + "ln1_g");
    lp.ln1_b = const_vec(d, 0.0f, p + "ln1_b");
    lp.wq = xavier(rng, d, d, p + "wq");
    lp.bq = const_vec(d, 0.0f, p + "bq");
    lp.wk = xavier(rng, d, d, p + "wk");
    lp.bk = const_vec(d, 0.0f, p + "bk");
    lp.wv = xavier(rng, d, d, p + "wv");
    lp.bv = const_vec(d, 0.0f, p + "bv");
    lp.wo = xavier(rng, d, d, p + "wo");
    lp.bo = const_vec(d, 0.0f, p + "bo");
    lp.ln2_g = const_vec(d, 1.0f, p + "ln2_g");
    lp.ln2_b = const_vec(d, 0.0f, p + "ln2_b");
    lp.mlp_w1 = xavier(rng, d, 4 * d, p + "mlp_w1");
    lp.mlp_b1 = const_vec(4 * d, 0.0f, p + "mlp_b1");
    lp.mlp_w2 = xavier(rng, 4 * d, d, p + "mlp_w2");
    lp.mlp_b2 = const_vec(d, 0.0f, p + "mlp_b2");
  }
  final_ln_g_ = const_vec(d, 1.0f, "final_ln_g");
  final_ln_b_ = const_vec(d, 0.0f, "final_ln_b");
  // Zero head: an untrained model emits exactly probability 0.5.
  head_w_ = Tensor::zeros(Shape{d, 1}, true, "head_w");
  head_b_ = const_vec(1, 0.0f, "head_b");

  if (patch_w_) { params_.push_back(patch_w_); params_.push_back(patch_b_); }
  if (tab_w_) { params_.push_back(tab_w_); params_.push_back(tab_b_); }
  params_.push_back(cls_);
  params_.push_back(pos_);
  for (auto& lp : layers_) {
    for (const auto& t : {lp.ln1_g, lp.ln1_b, lp.wq, lp.bq, lp.wk, lp.bk,
                          lp.wv, lp.bv, lp.wo, lp.bo, lp.ln2_g, lp.ln2_b,
                          lp.mlp_w1, lp.mlp_b1, lp.mlp_w2, lp.mlp_b2}) {
      params_.push_back(t);
    }
  }
  params_.push_back(final_ln_g_);
  params_.push_back(final_ln_b_);
  params_.push_back(head_w_);
  params_.push_back(head_b_);
}

// ---------------------------------------------------------------------------
// Input preparation
// ---------------------------------------------------------------------------

ForwardInputs PropensityModel::prepare(
    const ImageTile* tile, const std::vector<double>* std_covariates) const {
  ForwardInputs in;
  if (cfg_.use_images) {
    if (tile == nullptr) {
      throw ValidationError("forward: image stream enabled but no tile given");
    }
    if (tile->bands != cfg_.image_bands || tile->side != cfg_.image_side) {
      throw ValidationError(
          "forward: tile '" + tile->tile_id + "' is " +
          std::to_string(tile->bands) + "x" + std::to_string(tile->side) +
          "x" + std::to_string(tile->side) + ", model expects " +
          std::to_string(cfg_.image_bands) + "x" +
          std::to_string(cfg_.image_side) + "x" +
          std::to_string(cfg_.image_side));
    }
    const std::size_t ps = cfg_.patch_size;
    const std::size_t pps = cfg_.patches_per_side();
    const std::size_t pd = cfg_.patch_dim();
    std::vector<float> flat(cfg_.num_patches() * pd, 0.0f);
    for (std::size_t pr = 0; pr < pps; ++pr) {
      for (std::size_t pc = 0; pc < pps; ++pc) {
        const std::size_t patch = pr * pps + pc;
        std::size_t k = 0;
        for (std::size_t b = 0; b < cfg_.image_bands; ++b) {
          for (std::size_t dr = 0; dr < ps; ++dr) {
            for (std::size_t dc = 0; dc < ps; ++dc, ++k) {
              const std::size_t r = pr * ps + dr, c = pc * ps + dc;
              // Masked pixels enter the model as 0 (the band mean after
              // standardized rendering), never as the NaN sentinel.
              flat[patch * pd + k] =
                  tile->valid_at(r, c) ? tile->at(b, r, c) : 0.0f;
            }
          }
        }
      }
    }
    in.patches =
        Tensor::create(Shape{cfg_.num_patches(), pd}, std::move(flat));
  }
  if (cfg_.tabular_width > 0) {
    if (std_covariates == nullptr) {
      throw ValidationError(
          "forward: tabular stream enabled but no covariates given");
    }
    if (std_covariates->size() != cfg_.tabular_width) {
      throw ValidationError("forward: covariate vector length " +
                            std::to_string(std_covariates->size()) +
                            " != tabular width " +
                            std::to_string(cfg_.tabular_width));
    }
    std::vector<float> vals(cfg_.tabular_width);
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double v = (*std_covariates)[j];
      if (!std::isfinite(v)) {
        throw DataError("forward: non-finite covariate at column " +
                        std::to_string(j));
      }
      vals[j] = static_cast<float>(v);
    }
    in.tabular = Tensor::create(Shape{1, cfg_.tabular_width}, std::move(vals));
  }
  return in;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

TensorPtr PropensityModel::fuse_inputs(Tape* tape,
                                       const ForwardInputs& in) const {
  std::vector<TensorPtr> tokens;
  tokens.push_back(cls_);
  if (cfg_.use_images) {
    if (!in.patches) {
      throw ValidationError("fuse_inputs: missing patch matrix");
    }
    tokens.push_back(add(tape, matmul(tape, in.patches, patch_w_), patch_b_));
  }
  if (cfg_.tabular_width > 0) {
    if (!in.tabular) {
      throw ValidationError("fuse_inputs: missing tabular row");
    }
    tokens.push_back(add(tape, matmul(tape, in.tabular, tab_w_), tab_b_));
  }
  TensorPtr seq = tokens.size() == 1 ? tokens[0] : concat_rows(tape, tokens);
  return add(tape, seq, pos_);
}

TensorPtr PropensityModel::attention(Tape* tape, const TensorPtr& x,
                                     const LayerParams& lp) const {
  const std::size_t d = cfg_.embed_dim;
  const std::size_t heads = cfg_.num_heads;
  const std::size_t dh = d / heads;
  TensorPtr q = add(tape, matmul(tape, x, lp.wq), lp.bq);
  TensorPtr k = add(tape, matmul(tape, x, lp.wk), lp.bk);
  TensorPtr v = add(tape, matmul(tape, x, lp.wv), lp.bv);
  const float inv_sqrt_dh =
      1.0f / static_cast<float>(std::sqrt(static_cast<double>(dh)));
  TensorPtr ctx;
  for (std::size_t h = 0; h < heads; ++h) {
    TensorPtr qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
    TensorPtr kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
    TensorPtr vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
    TensorPtr scores =
        scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt_dh);
    TensorPtr attn = softmax(tape, scores, -1);
    TensorPtr ctx_h = matmul(tape, attn, vh);
    ctx = ctx ? concat_cols(tape, ctx, ctx_h) : ctx_h;
  }
  return add(tape, matmul(tape, ctx, lp.wo), lp.bo);
}

TensorPtr PropensityModel::mlp(Tape* tape, const TensorPtr& x,
                               const LayerParams& lp) const {
  TensorPtr h = add(tape, matmul(tape, x, lp.mlp_w1), lp.mlp_b1);
  h = cfg_.activation == ModelConfig::Activation::Gelu ? gelu(tape, h)
                                                       : relu(tape, h);
  return add(tape, matmul(tape, h, lp.mlp_w2), lp.mlp_b2);
}

TensorPtr PropensityModel::forward_logit(Tape* tape, const ForwardInputs& in,
                                         bool train_mode,
                                         SplitMix* rng) const {
  if (train_mode && rng == nullptr) {
    throw ValidationError("forward: train mode requires a random stream");
  }
  TensorPtr h = fuse_inputs(tape, in);
  if (train_mode) h = dropout(tape, h, cfg_.dropout_rate, *rng);

  const float keep_scale =
      cfg_.drop_path_rate > 0.0f ? 1.0f / (1.0f - cfg_.drop_path_rate) : 1.0f;
  for (const auto& lp : layers_) {
    // Attention branch. The drop-path decision is drawn before the branch is
    // built so a skipped branch costs nothing.
    bool drop_attn =
        train_mode && rng->next_double() < cfg_.drop_path_rate;
    if (!drop_attn) {
      TensorPtr branch = attention(tape, layer_norm(tape, h, lp.ln1_g, lp.ln1_b), lp);
      if (train_mode) branch = dropout(tape, branch, cfg_.dropout_rate, *rng);
      if (train_mode && cfg_.drop_path_rate > 0.0f)
        branch = scale(tape, branch, keep_scale);
      h = add(tape, h, branch);
    }
    bool drop_mlp = train_mode && rng->next_double() < cfg_.drop_path_rate;
    if (!drop_mlp) {
      TensorPtr branch = mlp(tape, layer_norm(tape, h, lp.ln2_g, lp.ln2_b), lp);
      if (train_mode) branch = dropout(tape, branch, cfg_.dropout_rate, *rng);
      if (train_mode && cfg_.drop_path_rate > 0.0f)
        branch = scale(tape, branch, keep_scale);
      h = add(tape, h, branch);
    }
  }

  TensorPtr pooled;
  if (cfg_.num_layers == 0) {
    // Without mixing the summary token never sees the inputs; pool the
    // content tokens instead, which keeps the configuration a pure logistic
    // model (no normalisation nonlinearity either).
    TensorPtr content = slice_rows(tape, h, 1, h->rows());
    pooled = reshape(tape, mean_rows(tape, content), Shape{1, cfg_.embed_dim});
  } else {
    h = layer_norm(tape, h, final_ln_g_, final_ln_b_);
    pooled = slice_rows(tape, h, 0, 1);
  }
  return add(tape, matmul(tape, pooled, head_w_), head_b_);
}

double PropensityModel::forward_propensity(
    const ImageTile* tile, const std::vector<double>* std_covariates) const {
  ForwardInputs in = prepare(tile, std_covariates);
  TensorPtr logit = forward_logit(nullptr, in, false, nullptr);
  const double z = logit->item();
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

void PropensityModel::save(const std::string& path) const {
  save_checkpoint(path, params_);
}

void PropensityModel::load(const std::string& path) {
  auto loaded = load_checkpoint(path);
  std::map<std::string, TensorPtr> by_name;
  for (const auto& t : loaded) by_name[t->name] = t;
  for (auto& p : params_) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      throw DataError("checkpoint '" + path + "' lacks parameter '" + p->name +
                      "'");
    }
    if (it->second->shape != p->shape) {
      throw DataError("checkpoint '" + path + "': parameter '" + p->name +
                      "' has shape " + shape_to_string(it->second->shape) +
                      ", model expects " + shape_to_string(p->shape));
    }
    p->values = it->second->values;
  }
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

std::size_t FoldAssignment::fold_of(const std::string& adm2_id) const {
  auto it = fold_of_adm2.find(adm2_id);
  if (it == fold_of_adm2.end()) {
    throw ValidationError("fold assignment: unknown district '" + adm2_id +
                          "'");
  }
  return it->second;
}

FoldAssignment make_grouped_folds(const std::set<std::string>& adm2_ids,
                                  std::size_t k, std::uint64_t seed) {
  if (k < 2) {
    throw ValidationError("grouped folds: need at least 2 folds, got " +
                          std::to_string(k));
  }
  if (adm2_ids.size() < k) {
    throw ValidationError("grouped folds: " + std::to_string(adm2_ids.size()) +
                          " districts cannot fill " + std::to_string(k) +
                          " folds");
  }
  std::vector<std::string> ids(adm2_ids.begin(), adm2_ids.end());
  SplitMix rng(derive_seed(seed, 0xF01D));
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
    std::swap(ids[i], ids[j]);
  }
  FoldAssignment fa;
  fa.num_folds = k;
  for (std::size_t i = 0; i < ids.size(); ++i) fa.fold_of_adm2[ids[i]] = i % k;
  return fa;
}

// ---------------------------------------------------------------------------
// Tabular design
// ---------------------------------------------------------------------------

TabularDesign build_tabular_design(const PanelSlice& panel,
                                   bool include_continuous, bool include_fe,
                                   std::size_t fe_min_count) {
  TabularDesign design;
  const std::size_t n = panel.cells.size();
  std::vector<std::vector<double>> cols;

  if (include_continuous) {
    for (std::size_t j = 0; j < panel.covariate_names.size(); ++j) {
      design.names.push_back(panel.covariate_names[j]);
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) col[i] = panel.cells[i].covariates[j];
      cols.push_back(std::move(col));
    }
  }

  if (include_fe && !panel.cells.empty()) {
    // District dummies: rare districts (few distinct units) share a bucket.
    std::map<std::string, std::set<std::string>> units_by_adm2;
    for (const auto& c : panel.cells)
      units_by_adm2[c.adm2_id].insert(c.unit_id);
    std::vector<std::string> adm2_per_unit;
    for (const auto& [adm2, units] : units_by_adm2)
      for (std::size_t i = 0; i < units.size(); ++i)
        adm2_per_unit.push_back(adm2);
    auto adm2_enc =
        make_fe_encoding(FeLevel::Adm2, adm2_per_unit, fe_min_count);
    for (const auto& name : adm2_enc.column_names()) design.names.push_back(name);
    std::vector<std::vector<double>> adm2_cols(adm2_enc.width(),
                                               std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      auto row = adm2_enc.encode(panel.cells[i].adm2_id);
      for (std::size_t j = 0; j < row.size(); ++j)
        if (row[j] != 0.0) adm2_cols[j][i] = 1.0;
    }
    for (auto& c : adm2_cols) cols.push_back(std::move(c));

    // Period dummies (never rare).
    std::vector<std::string> period_labels;
    for (const auto& c : panel.cells)
      period_labels.push_back("p" + std::to_string(c.period_index));
    auto period_enc = make_fe_encoding(FeLevel::PeriodFe, period_labels, 1);
    for (const auto& name : period_enc.column_names())
      design.names.push_back(name);
    std::vector<std::vector<double>> period_cols(period_enc.width(),
                                                 std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      auto row = period_enc.encode("p" + std::to_string(panel.cells[i].period_index));
      for (std::size_t j = 0; j < row.size(); ++j)
        if (row[j] != 0.0) period_cols[j][i] = 1.0;
    }
    for (auto& c : period_cols) cols.push_back(std::move(c));
  }

  design.columns.resize(static_cast<Eigen::Index>(n),
                        static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < n; ++i)
      design.columns(static_cast<Eigen::Index>(i),
                     static_cast<Eigen::Index>(j)) = cols[j][i];
  return design;
}

// ---------------------------------------------------------------------------
// Balanced sampler
// ---------------------------------------------------------------------------

BalancedBatchSampler::BalancedBatchSampler(std::vector<std::size_t> treated,
                                           std::vector<std::size_t> control,
                                           std::size_t batch_size,
                                           std::uint64_t seed)
    : treated_(std::move(treated)),
      control_(std::move(control)),
      batch_size_(batch_size),
      rng_(seed) {
  if (treated_.empty() || control_.empty()) {
    throw ValidationError(
        "balanced sampler: both classes must be present (treated " +
        std::to_string(treated_.size()) + ", control " +
        std::to_string(control_.size()) + ")");
  }
  if (batch_size_ < 2) {
    throw ValidationError("balanced sampler: batch size must be >= 2");
  }
}

std::vector<std::size_t> BalancedBatchSampler::next_batch() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_size_);
  const std::size_t half = batch_size_ / 2;
  for (std::size_t i = 0; i < half; ++i)
    batch.push_back(treated_[rng_.next_below(treated_.size())]);
  for (std::size_t i = 0; i < batch_size_ - half; ++i)
    batch.push_back(control_[rng_.next_below(control_.size())]);
  return batch;
}

// ---------------------------------------------------------------------------
// Cross-fitted training
// ---------------------------------------------------------------------------

namespace {

const ImageTile* tile_for_cell(const PanelCell& cell,
                               const std::map<std::string, ImageTile>& tiles,
                               bool use_images) {
  if (!use_images) return nullptr;
  auto it = tiles.find(cell.tile_ref);
  if (it == tiles.end()) {
    throw DataError("no tile '" + cell.tile_ref + "' for unit " +
                    cell.unit_id + " period " +
                    std::to_string(cell.period_index));
  }
  return &it->second;
}

}  // namespace

TrainResult train_propensity(const PanelSlice& panel,
                             const std::map<std::string, ImageTile>& tiles,
                             const TabularDesign& design,
                             const ModelConfig& model_cfg,
                             const TrainConfig& train_cfg) {
  if (panel.cells.empty()) {
    throw ValidationError("train: empty panel");
  }
  if (!design.empty() &&
      static_cast<std::size_t>(design.columns.rows()) != panel.cells.size()) {
    throw ValidationError("train: design rows != panel cells");
  }

  TrainResult result;
  std::set<std::string> adm2_ids;
  for (const auto& c : panel.cells) adm2_ids.insert(c.adm2_id);
  result.folds =
      make_grouped_folds(adm2_ids, train_cfg.folds, train_cfg.seed);

  const std::size_t n = panel.cells.size();
  result.oof_probability.assign(n, 0.5);
  result.oof_fold.assign(n, 0);

  // Optional single global standardization replacing per-fold statistics.
  std::optional<StandardizeFit> global_fit;
  if (!design.empty() && train_cfg.standardize_globally) {
    global_fit =
        standardize_fit(design.columns, design.names, train_cfg.sd_floor);
  }

  // Salience accumulators keyed by original design column name.
  std::map<std::string, double> salience_sum;
  std::map<std::string, std::size_t> salience_count;

  for (std::size_t fold = 0; fold < result.folds.num_folds; ++fold) {
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (result.folds.fold_of(panel.cells[i].adm2_id) == fold)
        val_idx.push_back(i);
      else
        train_idx.push_back(i);
    }
    std::vector<std::size_t> train_treated, train_control;
    for (std::size_t i : train_idx) {
      (panel.cells[i].treated ? train_treated : train_control).push_back(i);
    }
    if (train_treated.empty() || train_control.empty()) {
      throw ValidationError(
          "fold " + std::to_string(fold) +
          " is degenerate: training split has a single class (treated " +
          std::to_string(train_treated.size()) + ", control " +
          std::to_string(train_control.size()) + ")");
    }

    TrainedFold tf;
    tf.fold_index = fold;

    // Standardize on the training split only; apply everywhere.
    Eigen::MatrixXd std_all;
    if (!design.empty()) {
      if (global_fit) {
        tf.preprocess = *global_fit;
      } else {
        Eigen::MatrixXd train_block(
            static_cast<Eigen::Index>(train_idx.size()), design.columns.cols());
        for (std::size_t r = 0; r < train_idx.size(); ++r)
          train_block.row(static_cast<Eigen::Index>(r)) =
              design.columns.row(static_cast<Eigen::Index>(train_idx[r]));
        tf.preprocess =
            standardize_fit(train_block, design.names, train_cfg.sd_floor);
      }
      std_all = standardize_apply(tf.preprocess, design.columns);
    }

    ModelConfig fold_cfg = model_cfg;
    fold_cfg.tabular_width =
        design.empty() ? 0 : tf.preprocess.kept_names.size();
    tf.model = std::make_shared<PropensityModel>(
        fold_cfg, train_cfg.seed + fold);

    const std::uint64_t fold_seed = train_cfg.seed + fold;
    BalancedBatchSampler sampler(train_treated, train_control,
                                 train_cfg.batch_size,
                                 derive_seed(fold_seed, 1));
    SplitMix dropout_rng(derive_seed(fold_seed, 2));
    SgdOptimizer opt(SgdConfig{train_cfg.learning_rate, train_cfg.momentum,
                               train_cfg.weight_decay});
    const auto& params = tf.model->parameters();

    const std::size_t steps_per_epoch =
        std::max<std::size_t>(1, (train_idx.size() + train_cfg.batch_size - 1) /
                                     train_cfg.batch_size);
    const float inv_batch = 1.0f / static_cast<float>(train_cfg.batch_size);

    auto cell_inputs = [&](std::size_t i) {
      const auto& cell = panel.cells[i];
      const ImageTile* tile =
          tile_for_cell(cell, tiles, fold_cfg.use_images);
      std::vector<double> cov;
      if (fold_cfg.tabular_width > 0) {
        cov.resize(fold_cfg.tabular_width);
        for (std::size_t j = 0; j < cov.size(); ++j)
          cov[j] = std_all(static_cast<Eigen::Index>(i),
                           static_cast<Eigen::Index>(j));
      }
      return tf.model->prepare(tile, fold_cfg.tabular_width > 0 ? &cov
                                                                : nullptr);
    };

    for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
      double epoch_loss = 0.0;
      std::size_t epoch_samples = 0;
      for (std::size_t step = 0; step < steps_per_epoch; ++step) {
        auto batch = sampler.next_batch();
        opt.zero_grad(params);
        for (std::size_t i : batch) {
          Tape tape;
          ForwardInputs in = cell_inputs(i);
          TensorPtr logit =
              tf.model->forward_logit(&tape, in, true, &dropout_rng);
          TensorPtr loss = bce_with_logits(
              &tape, logit, static_cast<float>(panel.cells[i].treated));
          const double lv = loss->item();
          if (!std::isfinite(lv)) {
            throw NumericError("fold " + std::to_string(fold) + " epoch " +
                               std::to_string(epoch) +
                               ": training loss diverged (non-finite)");
          }
          epoch_loss += lv;
          ++epoch_samples;
          TensorPtr scaled = scale(&tape, loss, inv_batch);
          tape.backward(scaled);
        }
        opt.step(params);
      }
      tf.epoch_losses.push_back(epoch_loss /
                                static_cast<double>(epoch_samples));
    }

    // Out-of-fold probabilities for this fold's districts.
    for (std::size_t i : val_idx) {
      ForwardInputs in = cell_inputs(i);
      TensorPtr logit = tf.model->forward_logit(nullptr, in, false, nullptr);
      const double z = logit->item();
      double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                          : std::exp(z) / (1.0 + std::exp(z));
      p = std::clamp(p, train_cfg.clip_lo, train_cfg.clip_hi);
      result.oof_probability[i] = p;
      result.oof_fold[i] = fold;
    }

    // Out-of-fold salience contributions, mapped back to design names.
    if (fold_cfg.tabular_width > 0) {
      Eigen::MatrixXd rows(static_cast<Eigen::Index>(val_idx.size()),
                           static_cast<Eigen::Index>(fold_cfg.tabular_width));
      std::vector<const ImageTile*> val_tiles(val_idx.size(), nullptr);
      for (std::size_t r = 0; r < val_idx.size(); ++r) {
        rows.row(static_cast<Eigen::Index>(r)) =
            std_all.row(static_cast<Eigen::Index>(val_idx[r]))
                .head(static_cast<Eigen::Index>(fold_cfg.tabular_width));
        val_tiles[r] = tile_for_cell(panel.cells[val_idx[r]], tiles,
                                     fold_cfg.use_images);
      }
      auto s = salience_gradients(*tf.model, rows, val_tiles);
      for (std::size_t j = 0; j < s.size(); ++j) {
        const std::string& name = tf.preprocess.kept_names[j];
        salience_sum[name] += s[j] * static_cast<double>(val_idx.size());
        salience_count[name] += val_idx.size();
      }
    }

    result.fold_models.push_back(std::move(tf));
  }

  for (const auto& name : design.names) {
    auto it = salience_count.find(name);
    if (it == salience_count.end() || it->second == 0) continue;
    result.salience_names.push_back(name);
    result.salience_values.push_back(salience_sum[name] /
                                     static_cast<double>(it->second));
  }
  return result;
}

std::vector<double> salience_gradients(
    const PropensityModel& model, const Eigen::MatrixXd& std_tabular,
    const std::vector<const ImageTile*>& tiles) {
  const auto& cfg = model.config();
  if (cfg.tabular_width == 0) {
    throw ValidationError(
        "salience: model has no tabular stream (unsupported specification)");
  }
  if (static_cast<std::size_t>(std_tabular.cols()) != cfg.tabular_width) {
    throw ValidationError("salience: input width " +
                          std::to_string(std_tabular.cols()) +
                          " != tabular width " +
                          std::to_string(cfg.tabular_width));
  }
  if (static_cast<std::size_t>(std_tabular.rows()) != tiles.size()) {
    throw ValidationError("salience: rows and tile list disagree");
  }
  std::vector<double> acc(cfg.tabular_width, 0.0);
  const std::size_t n = static_cast<std::size_t>(std_tabular.rows());
  if (n == 0) return acc;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> cov(cfg.tabular_width);
    for (std::size_t j = 0; j < cov.size(); ++j)
      cov[j] = std_tabular(static_cast<Eigen::Index>(i),
                           static_cast<Eigen::Index>(j));
    Tape tape;
    ForwardInputs in = model.prepare(tiles[i], &cov);
    TensorPtr logit = model.forward_logit(&tape, in, false, nullptr);
    TensorPtr prob = sigmoid(&tape, logit);
    tape.backward(prob);
    for (std::size_t j = 0; j < cfg.tabular_width; ++j)
      acc[j] += static_cast<double>(in.tabular->grad[j]);
  }
  for (auto& v : acc) v /= static_cast<double>(n);
  return acc;
}

SpecTrainInputs make_spec_inputs(const PanelSlice& panel, Specification spec,
                                 const ModelConfig& base) {
  SpecTrainInputs out;
  out.model = base;
  switch (spec) {
    case Specification::a_diffmeans:
      throw ValidationError(
          "make_spec_inputs: the unadjusted specification trains no model");
    case Specification::b_x_fe:
      out.model.use_images = false;
      out.design = build_tabular_design(panel, true, true);
      break;
    case Specification::c1_m:
      out.model.use_images = true;
      out.design = TabularDesign{};
      break;
    case Specification::c2_m_x_fe:
      out.model.use_images = true;
      out.design = build_tabular_design(panel, true, true);
      break;
  }
  out.model.tabular_width = out.design.names.size();
  return out;
}

}  // namespace geocause
