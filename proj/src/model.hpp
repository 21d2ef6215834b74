#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tokenizer.hpp"

namespace tod {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
template <typename Real>
using ColVector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int context_limit = 256;
  int vocab_size = 512;
  int n_segments = 2;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);
  bool operator==(const ModelConfig&) const = default;
};

template <typename Real>
struct LayerParams {
  RowVector<Real> ln1_gain, ln1_bias;
  Matrix<Real> attn_w;  // d x 3d, columns [q | k | v]
  RowVector<Real> attn_b;
  Matrix<Real> proj_w;  // d x d
  RowVector<Real> proj_b;
  RowVector<Real> ln2_gain, ln2_bias;
  Matrix<Real> fc_w;  // d x d_ff
  RowVector<Real> fc_b;
  Matrix<Real> out_w;  // d_ff x d
  RowVector<Real> out_b;
};

// Mutable view of one parameter tensor, row-major.
template <typename Real>
struct TensorView {
  std::string name;
  Real* data;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index size() const { return rows * cols; }
};

// All weights of the decoder. Also used as the gradient container.
template <typename Real>
struct Params {
  ModelConfig config;
  Matrix<Real> token_emb;  // vocab x d, tied with the output projection
  Matrix<Real> pos_emb;    // context x d
  Matrix<Real> seg_emb;    // 2 x d, the dialogue-state embedding
  std::vector<LayerParams<Real>> layers;
  RowVector<Real> lnf_gain, lnf_bias;
  RowVector<Real> cls_w;  // next-utterance classification vector

  static Params zeros(const ModelConfig& config);

  std::vector<TensorView<Real>> tensors();
  std::size_t parameter_count() const;

  template <typename Other>
  Params<Other> cast() const;
};

template <typename Real>
Params<Real> init_model(const ModelConfig& config);

template <typename Real>
struct LayerCache {
  Matrix<Real> x_in;
  Matrix<Real> ln1_xhat;
  ColVector<Real> ln1_rstd;
  Matrix<Real> ln1_out;
  Matrix<Real> qkv;
  std::vector<Matrix<Real>> probs;  // per head, T x T, zero above the diagonal
  Matrix<Real> attn_cat;
  Matrix<Real> x_mid;
  Matrix<Real> ln2_xhat;
  ColVector<Real> ln2_rstd;
  Matrix<Real> ln2_out;
  Matrix<Real> fc_pre;
  Matrix<Real> fc_act;
};

template <typename Real>
struct ForwardCache {
  std::vector<LayerCache<Real>> layers;
  Matrix<Real> lnf_xhat;
  ColVector<Real> lnf_rstd;
  Matrix<Real> final_out;
};

// Half-open range of positions whose logits are computed.
struct RowRange {
  std::size_t begin = 0;
  std::size_t end = static_cast<std::size_t>(-1);
};

template <typename Real>
struct ForwardOutput {
  Matrix<Real> logits;           // rows of the requested range x vocab
  RowVector<Real> final_hidden;  // hidden state after the final norm at the last position
};

template <typename Real>
ForwardOutput<Real> forward(const Params<Real>& p, const TokenSequence& seq,
                            RowRange logit_rows = {}, ForwardCache<Real>* cache = nullptr);

// Accumulates parameter gradients into `grads` given upstream gradients on
// the logits of `logit_rows` (may be empty) and on the final hidden state
// (may be empty). `cache` must come from the forward call on the same input.
template <typename Real>
void backward(const Params<Real>& p, const TokenSequence& seq, const ForwardCache<Real>& cache,
              RowRange logit_rows, const Matrix<Real>& d_logits,
              const RowVector<Real>& d_final_hidden, Params<Real>& grads);

// Mean over masked rows of -log softmax(logits)[target], accumulated in
// double. When `d_logits` is given it receives scale * d(loss)/d(logits).
template <typename Real>
double lm_loss(const Matrix<Real>& logits, std::span<const TokenId> targets,
               const std::vector<bool>& mask, Matrix<Real>* d_logits = nullptr,
               double scale = 1.0);

std::vector<double> softmax(std::span<const double> scores);

template <typename Real>
double candidate_score(const Params<Real>& p, const RowVector<Real>& final_hidden);

template <typename Real>
std::vector<double> classify_candidates(const Params<Real>& p,
                                        const std::vector<TokenSequence>& candidates);

}  // namespace tod
