#include "metaprompt/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace mpt {

void BackboneConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("backbone: vocab_size must be >= 2");
  if (dim < 1 || layers < 0 || heads < 1 || max_len < 1 || ffn_mult < 1)
    throw std::invalid_argument("backbone: bad architecture sizes");
  if (dim % heads != 0) throw std::invalid_argument("backbone: dim must be divisible by heads");
  if (mask_token_id < 0 || mask_token_id >= vocab_size)
    throw std::invalid_argument("backbone: mask token id outside vocabulary");
}

namespace {

Mat xavier(Rng& rng, int rows, int cols) {
  const double s = std::sqrt(2.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal(0.0, s);
  return m;
}

Mat gaussian(Rng& rng, int rows, int cols, double stddev) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal(0.0, stddev);
  return m;
}

// Post-LN transformer encoder with a tied-embedding MLM head.
class TransformerBackbone final : public BackboneApi {
 public:
  explicit TransformerBackbone(BackboneConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const BackboneConfig& config() const override { return cfg_; }

  void register_params(ParamMap& params, Rng& rng) const override {
    auto put = [&params](const std::string& name, Mat m) {
      if (!params.count(name)) params.emplace(name, std::move(m));
    };
    put("backbone.tok_emb", gaussian(rng, cfg_.vocab_size, cfg_.dim, 0.1));
    put("backbone.pos_emb", gaussian(rng, cfg_.max_len, cfg_.dim, 0.1));
    put("backbone.lm_bias", Mat::Zero(1, cfg_.vocab_size));
    const int ffn = cfg_.dim * cfg_.ffn_mult;
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = layer_prefix(l);
      put(p + "Wq", xavier(rng, cfg_.dim, cfg_.dim));
      put(p + "Wk", xavier(rng, cfg_.dim, cfg_.dim));
      put(p + "Wv", xavier(rng, cfg_.dim, cfg_.dim));
      put(p + "Wo", xavier(rng, cfg_.dim, cfg_.dim));
      put(p + "bq", Mat::Zero(1, cfg_.dim));
      put(p + "bk", Mat::Zero(1, cfg_.dim));
      put(p + "bv", Mat::Zero(1, cfg_.dim));
      put(p + "bo", Mat::Zero(1, cfg_.dim));
      put(p + "ln1_g", Mat::Ones(1, cfg_.dim));
      put(p + "ln1_b", Mat::Zero(1, cfg_.dim));
      put(p + "Wf1", xavier(rng, cfg_.dim, ffn));
      put(p + "bf1", Mat::Zero(1, ffn));
      put(p + "Wf2", xavier(rng, ffn, cfg_.dim));
      put(p + "bf2", Mat::Zero(1, cfg_.dim));
      put(p + "ln2_g", Mat::Ones(1, cfg_.dim));
      put(p + "ln2_b", Mat::Zero(1, cfg_.dim));
    }
  }

  void validate_params(const ParamMap& params) const override {
    auto need = [&params](const std::string& name, int rows, int cols) {
      auto it = params.find(name);
      if (it == params.end()) throw std::runtime_error("backbone: missing parameter " + name);
      if (it->second.rows() != rows || it->second.cols() != cols)
        throw std::runtime_error("backbone: parameter " + name + " has wrong shape");
    };
    need("backbone.tok_emb", cfg_.vocab_size, cfg_.dim);
    need("backbone.pos_emb", cfg_.max_len, cfg_.dim);
    need("backbone.lm_bias", 1, cfg_.vocab_size);
    for (int l = 0; l < cfg_.layers; ++l) {
      need(layer_prefix(l) + "Wq", cfg_.dim, cfg_.dim);
      need(layer_prefix(l) + "Wf1", cfg_.dim, cfg_.dim * cfg_.ffn_mult);
    }
  }

  Var embed_tokens(GraphCtx& ctx, const std::vector<int>& ids) const override {
    for (int id : ids)
      if (id < 0 || id >= cfg_.vocab_size)
        throw std::out_of_range("embed_tokens: token id " + std::to_string(id) +
                                " outside vocabulary of size " +
                                std::to_string(cfg_.vocab_size));
    if (ids.empty()) return ctx.tape().leaf(Mat::Zero(0, cfg_.dim));
    return lookup_rows(ctx.P("backbone.tok_emb"), ids);
  }

  EncodedOutput forward(GraphCtx& ctx, Var input_seq, int mask_position) const override {
    const int T = static_cast<int>(input_seq.rows());
    if (T > cfg_.max_len)
      throw std::runtime_error("backbone: input length " + std::to_string(T) +
                               " exceeds max sequence length " + std::to_string(cfg_.max_len));
    if (input_seq.cols() != cfg_.dim)
      throw std::invalid_argument("backbone: input width must equal dim");
    if (mask_position < 0 || mask_position >= T)
      throw std::invalid_argument("backbone: mask position out of range");

    Var x = add(input_seq, rows_slice(ctx.P("backbone.pos_emb"), 0, T));
    const int dh = cfg_.dim / cfg_.heads;
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = layer_prefix(l);
      Var q = affine(x, ctx.P(p + "Wq"), ctx.P(p + "bq"));
      Var k = affine(x, ctx.P(p + "Wk"), ctx.P(p + "bk"));
      Var v = affine(x, ctx.P(p + "Wv"), ctx.P(p + "bv"));
      std::vector<Var> heads;
      heads.reserve(static_cast<std::size_t>(cfg_.heads));
      for (int h = 0; h < cfg_.heads; ++h) {
        Var qh = cols_slice(q, h * dh, dh);
        Var kh = cols_slice(k, h * dh, dh);
        Var vh = cols_slice(v, h * dh, dh);
        Var att = softmax_rows(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(dh)));
        heads.push_back(matmul(att, vh));
      }
      Var attn_out = affine(concat_cols(heads), ctx.P(p + "Wo"), ctx.P(p + "bo"));
      x = layer_norm_rows(add(x, attn_out), ctx.P(p + "ln1_g"), ctx.P(p + "ln1_b"));
      Var ff = affine(gelu_v(affine(x, ctx.P(p + "Wf1"), ctx.P(p + "bf1"))),
                      ctx.P(p + "Wf2"), ctx.P(p + "bf2"));
      x = layer_norm_rows(add(x, ff), ctx.P(p + "ln2_g"), ctx.P(p + "ln2_b"));
    }
    return {x, rows_slice(x, mask_position, 1)};
  }

  Var mlm_logits(GraphCtx& ctx, Var mask_output) const override {
    if (mask_output.rows() != 1 || mask_output.cols() != cfg_.dim)
      throw std::invalid_argument("mlm_logits: expects a 1 x dim vector");
    // Output projection tied to the token embedding table.
    return add_rowvec(matmul(mask_output, transpose(ctx.P("backbone.tok_emb"))),
                      ctx.P("backbone.lm_bias"));
  }

 private:
  static std::string layer_prefix(int l) {
    return "backbone.l" + std::to_string(l) + ".";
  }
  BackboneConfig cfg_;
};

}  // namespace

namespace {
std::map<std::string, BackboneFactory>& backbone_registry() {
  static std::map<std::string, BackboneFactory> registry;
  return registry;
}
}  // namespace

void register_backbone_kind(const std::string& kind, BackboneFactory factory) {
  backbone_registry()[kind] = std::move(factory);
}

std::unique_ptr<BackboneApi> make_backbone(const BackboneConfig& config) {
  if (config.kind == "transformer") return std::make_unique<TransformerBackbone>(config);
  auto it = backbone_registry().find(config.kind);
  if (it == backbone_registry().end())
    throw std::invalid_argument("unknown backbone kind: " + config.kind);
  return it->second(config);
}

namespace {

Var class_scores(Var logits, const std::map<std::string, std::vector<int>>& verbalizer,
                 const std::vector<std::string>& label_space, int mapping_index) {
  if (label_space.empty()) throw std::invalid_argument("class_distribution: empty label space");
  Var probs = softmax_rows(logits);
  std::vector<Var> scores;
  scores.reserve(label_space.size());
  for (const std::string& label : label_space) {
    auto it = verbalizer.find(label);
    if (it == verbalizer.end() || it->second.empty())
      throw std::runtime_error("class_distribution: no label words for '" + label + "'");
    std::vector<int> ids;
    if (mapping_index < 0) {
      ids = it->second;
    } else {
      if (mapping_index >= static_cast<int>(it->second.size()))
        throw std::out_of_range("class_distribution: mapping index out of range");
      ids = {it->second[static_cast<std::size_t>(mapping_index)]};
    }
    scores.push_back(scale(sum_all(lookup_cols(probs, ids)),
                           1.0 / static_cast<double>(ids.size())));
  }
  Var joined = concat_cols(scores);
  return div_scalar(joined, sum_all(joined));
}

}  // namespace

Var class_distribution(Var logits,
                       const std::map<std::string, std::vector<int>>& verbalizer,
                       const std::vector<std::string>& label_space) {
  return class_scores(logits, verbalizer, label_space, -1);
}

Var class_distribution_single_mapping(
    Var logits, const std::map<std::string, std::vector<int>>& verbalizer,
    const std::vector<std::string>& label_space, int mapping_index) {
  return class_scores(logits, verbalizer, label_space, mapping_index);
}

}  // namespace mpt
