#pragma once

// Minimal alternative backbone used to exercise the adapter seam: token and
// position embeddings, a per-position MLP plus a mean-pooled context vector.
// Deliberately different internals from the transformer, same contracts.

#include "metaprompt/backbone.hpp"

namespace mpt_test {

class MlpMixerBackbone final : public mpt::BackboneApi {
 public:
  explicit MlpMixerBackbone(mpt::BackboneConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const mpt::BackboneConfig& config() const override { return cfg_; }

  void register_params(mpt::ParamMap& params, mpt::Rng& rng) const override {
    auto put = [&params](const std::string& name, mpt::Mat m) {
      if (!params.count(name)) params.emplace(name, std::move(m));
    };
    auto gauss = [&rng](int r, int c, double s) {
      mpt::Mat m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal(0.0, s);
      return m;
    };
    put("backbone.tok_emb", gauss(cfg_.vocab_size, cfg_.dim, 0.1));
    put("backbone.pos_emb", gauss(cfg_.max_len, cfg_.dim, 0.1));
    put("backbone.mix.W1", gauss(cfg_.dim, cfg_.dim, 0.15));
    put("backbone.mix.b1", mpt::Mat::Zero(1, cfg_.dim));
    put("backbone.mix.W2", gauss(cfg_.dim, cfg_.dim, 0.15));
    put("backbone.mix.b2", mpt::Mat::Zero(1, cfg_.dim));
    put("backbone.mix.Wctx", gauss(cfg_.dim, cfg_.dim, 0.15));
    put("backbone.lm_bias", mpt::Mat::Zero(1, cfg_.vocab_size));
  }

  void validate_params(const mpt::ParamMap& params) const override {
    for (const char* name : {"backbone.tok_emb", "backbone.mix.W1", "backbone.lm_bias"})
      if (!params.count(name))
        throw std::runtime_error(std::string("mlp backbone: missing ") + name);
  }

  mpt::Var embed_tokens(mpt::GraphCtx& ctx, const std::vector<int>& ids) const override {
    for (int id : ids)
      if (id < 0 || id >= cfg_.vocab_size)
        throw std::out_of_range("embed_tokens: token id out of range");
    if (ids.empty()) return ctx.tape().leaf(mpt::Mat::Zero(0, cfg_.dim));
    return mpt::lookup_rows(ctx.P("backbone.tok_emb"), ids);
  }

  mpt::EncodedOutput forward(mpt::GraphCtx& ctx, mpt::Var input_seq,
                             int mask_position) const override {
    const int T = static_cast<int>(input_seq.rows());
    if (T > cfg_.max_len) throw std::runtime_error("mlp backbone: input too long");
    if (mask_position < 0 || mask_position >= T)
      throw std::invalid_argument("mlp backbone: bad mask position");
    mpt::Var x = mpt::add(input_seq, mpt::rows_slice(ctx.P("backbone.pos_emb"), 0, T));
    mpt::Var hidden = mpt::tanh_v(
        mpt::affine(x, ctx.P("backbone.mix.W1"), ctx.P("backbone.mix.b1")));
    mpt::Var local = mpt::affine(hidden, ctx.P("backbone.mix.W2"), ctx.P("backbone.mix.b2"));
    // mean-pooled context broadcast back over every position
    mpt::Var ones = ctx.tape().leaf(mpt::Mat::Ones(1, T));
    mpt::Var mean = mpt::scale(mpt::matmul(ones, x), 1.0 / static_cast<double>(T));
    mpt::Var out = mpt::add_rowvec(local, mpt::matmul(mean, ctx.P("backbone.mix.Wctx")));
    return {out, mpt::rows_slice(out, mask_position, 1)};
  }

  mpt::Var mlm_logits(mpt::GraphCtx& ctx, mpt::Var mask_output) const override {
    return mpt::add_rowvec(
        mpt::matmul(mask_output, mpt::transpose(ctx.P("backbone.tok_emb"))),
        ctx.P("backbone.lm_bias"));
  }

 private:
  mpt::BackboneConfig cfg_;
};

inline void register_mlp_backbone() {
  mpt::register_backbone_kind("mlp_mixer", [](const mpt::BackboneConfig& cfg) {
    return std::make_unique<MlpMixerBackbone>(cfg);
  });
}

}  // namespace mpt_test
