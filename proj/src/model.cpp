#include "model.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "common.hpp"

namespace tod {

using nlohmann::json;

void ModelConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::config, m); };
  if (n_layers < 1) bad("n_layers must be >= 1");
  if (n_heads < 1) bad("n_heads must be >= 1");
  if (d_model < 1 || d_model % n_heads != 0) bad("d_model must be a positive multiple of n_heads");
  if (d_ff < 1) bad("d_ff must be >= 1");
  if (context_limit < 2) bad("context_limit must be >= 2");
  if (vocab_size < 1) bad("vocab_size must be >= 1");
  if (n_segments != 2) bad("n_segments must be 2");
}

json ModelConfig::to_json() const {
  return json{{"n_layers", n_layers},         {"n_heads", n_heads},
              {"d_model", d_model},           {"d_ff", d_ff},
              {"context_limit", context_limit}, {"vocab_size", vocab_size},
              {"n_segments", n_segments},     {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& doc) {
  ModelConfig c;
  try {
    c.n_layers = doc.value("n_layers", c.n_layers);
    c.n_heads = doc.value("n_heads", c.n_heads);
    c.d_model = doc.value("d_model", c.d_model);
    c.d_ff = doc.value("d_ff", c.d_ff);
    c.context_limit = doc.value("context_limit", c.context_limit);
    c.vocab_size = doc.value("vocab_size", c.vocab_size);
    c.n_segments = doc.value("n_segments", c.n_segments);
    c.seed = doc.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("bad model config: ") + e.what());
  }
  return c;
}

// --- parameters -------------------------------------------------------------

template <typename Real>
Params<Real> Params<Real>::zeros(const ModelConfig& config) {
  config.validate();
  const Eigen::Index d = config.d_model;
  const Eigen::Index ff = config.d_ff;
  Params p;
  p.config = config;
  p.token_emb = Matrix<Real>::Zero(config.vocab_size, d);
  p.pos_emb = Matrix<Real>::Zero(config.context_limit, d);
  p.seg_emb = Matrix<Real>::Zero(config.n_segments, d);
  p.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& l : p.layers) {
    l.ln1_gain = RowVector<Real>::Zero(d);
    l.ln1_bias = RowVector<Real>::Zero(d);
    l.attn_w = Matrix<Real>::Zero(d, 3 * d);
    l.attn_b = RowVector<Real>::Zero(3 * d);
    l.proj_w = Matrix<Real>::Zero(d, d);
    l.proj_b = RowVector<Real>::Zero(d);
    l.ln2_gain = RowVector<Real>::Zero(d);
    l.ln2_bias = RowVector<Real>::Zero(d);
    l.fc_w = Matrix<Real>::Zero(d, ff);
    l.fc_b = RowVector<Real>::Zero(ff);
    l.out_w = Matrix<Real>::Zero(ff, d);
    l.out_b = RowVector<Real>::Zero(d);
  }
  p.lnf_gain = RowVector<Real>::Zero(d);
  p.lnf_bias = RowVector<Real>::Zero(d);
  p.cls_w = RowVector<Real>::Zero(d);
  return p;
}

template <typename Real>
std::vector<TensorView<Real>> Params<Real>::tensors() {
  std::vector<TensorView<Real>> v;
  auto add = [&v](std::string name, auto& t) {
    v.push_back({std::move(name), t.data(), t.rows(), t.cols()});
  };
  add("token_emb", token_emb);
  add("pos_emb", pos_emb);
  add("seg_emb", seg_emb);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string pre = "layer" + std::to_string(i) + ".";
    add(pre + "ln1_gain", l.ln1_gain);
    add(pre + "ln1_bias", l.ln1_bias);
    add(pre + "attn_w", l.attn_w);
    add(pre + "attn_b", l.attn_b);
    add(pre + "proj_w", l.proj_w);
    add(pre + "proj_b", l.proj_b);
    add(pre + "ln2_gain", l.ln2_gain);
    add(pre + "ln2_bias", l.ln2_bias);
    add(pre + "fc_w", l.fc_w);
    add(pre + "fc_b", l.fc_b);
    add(pre + "out_w", l.out_w);
    add(pre + "out_b", l.out_b);
  }
  add("lnf_gain", lnf_gain);
  add("lnf_bias", lnf_bias);
  add("cls_w", cls_w);
  return v;
}

template <typename Real>
std::size_t Params<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : const_cast<Params*>(this)->tensors()) n += static_cast<std::size_t>(t.size());
  return n;
}

template <typename Real>
template <typename Other>
Params<Other> Params<Real>::cast() const {
  Params<Other> out = Params<Other>::zeros(config);
  auto src = const_cast<Params*>(this)->tensors();
  auto dst = out.tensors();
  for (std::size_t i = 0; i < src.size(); ++i)
    for (Eigen::Index k = 0; k < src[i].size(); ++k)
      dst[i].data[k] = static_cast<Other>(src[i].data[k]);
  return out;
}

template <typename Real>
Params<Real> init_model(const ModelConfig& config) {
  Params<Real> p = Params<Real>::zeros(config);
  Rng rng(config.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(normal(rng));
  };
  fill(p.token_emb);
  fill(p.pos_emb);
  fill(p.seg_emb);
  for (auto& l : p.layers) {
    l.ln1_gain.setOnes();
    l.ln2_gain.setOnes();
    fill(l.attn_w);
    fill(l.proj_w);
    fill(l.fc_w);
    fill(l.out_w);
  }
  p.lnf_gain.setOnes();
  fill(p.cls_w);
  return p;
}

// --- forward ----------------------------------------------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

template <typename Real>
void layer_norm(const Matrix<Real>& x, const RowVector<Real>& gain, const RowVector<Real>& bias,
                Matrix<Real>& xhat, ColVector<Real>& rstd, Matrix<Real>& out) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  xhat.resize(n, d);
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mean = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) mean += static_cast<double>(x(i, j));
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double c = static_cast<double>(x(i, j)) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd(i) = static_cast<Real>(r);
    for (Eigen::Index j = 0; j < d; ++j)
      xhat(i, j) = static_cast<Real>((static_cast<double>(x(i, j)) - mean) * r);
  }
  out = (xhat.array().rowwise() * gain.array()).rowwise() + bias.array();
}

template <typename Real>
Matrix<Real> layer_norm_backward(const Matrix<Real>& dy, const Matrix<Real>& xhat,
                                 const ColVector<Real>& rstd, const RowVector<Real>& gain,
                                 RowVector<Real>& d_gain, RowVector<Real>& d_bias) {
  d_gain += (dy.array() * xhat.array()).colwise().sum().matrix();
  d_bias += dy.colwise().sum();
  Matrix<Real> dxhat = dy.array().rowwise() * gain.array();
  const Real inv_d = Real(1) / static_cast<Real>(dy.cols());
  ColVector<Real> mean_dxhat = dxhat.rowwise().sum() * inv_d;
  ColVector<Real> mean_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum().matrix() * inv_d;
  Matrix<Real> dx = dxhat;
  dx.colwise() -= mean_dxhat;
  dx.array() -= xhat.array().colwise() * mean_dxhat_xhat.array();
  dx.array().colwise() *= rstd.array();
  return dx;
}

template <typename Real>
Real gelu(Real x) {
  const double xd = static_cast<double>(x);
  return static_cast<Real>(0.5 * xd * (1.0 + std::tanh(kGeluC * (xd + 0.044715 * xd * xd * xd))));
}

template <typename Real>
Real gelu_grad(Real x) {
  const double xd = static_cast<double>(x);
  const double t = std::tanh(kGeluC * (xd + 0.044715 * xd * xd * xd));
  return static_cast<Real>(0.5 * (1.0 + t) +
                           0.5 * xd * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * xd * xd));
}

// Row-wise masked softmax in place over the causal lower triangle.
template <typename Real>
void causal_softmax(Matrix<Real>& s) {
  const Eigen::Index n = s.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    Real mx = s(i, 0);
    for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, s(i, j));
    double sum = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      const Real e = std::exp(s(i, j) - mx);
      s(i, j) = e;
      sum += static_cast<double>(e);
    }
    const Real inv = static_cast<Real>(1.0 / sum);
    for (Eigen::Index j = 0; j <= i; ++j) s(i, j) *= inv;
    for (Eigen::Index j = i + 1; j < n; ++j) s(i, j) = Real(0);
  }
}

template <typename Real>
void check_finite(const Matrix<Real>& m, const std::string& where) {
  if (!m.allFinite()) throw Error(ErrorCode::numeric, "non-finite values in " + where);
}

RowRange clamp(RowRange r, std::size_t n) {
  r.end = std::min(r.end, n);
  r.begin = std::min(r.begin, r.end);
  return r;
}

}  // namespace

template <typename Real>
ForwardOutput<Real> forward(const Params<Real>& p, const TokenSequence& seq, RowRange logit_rows,
                            ForwardCache<Real>* cache) {
  const auto& cfg = p.config;
  const auto n = static_cast<Eigen::Index>(seq.size());
  if (n == 0) throw Error(ErrorCode::contract, "forward on an empty sequence");
  if (seq.segments.size() != seq.size())
    throw Error(ErrorCode::contract, "token and segment lengths differ");
  if (n > cfg.context_limit)
    throw Error(ErrorCode::contract, "sequence length " + std::to_string(n) +
                                         " exceeds context limit " +
                                         std::to_string(cfg.context_limit));
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index hd = d / cfg.n_heads;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(hd)));

  ForwardCache<Real> local;
  ForwardCache<Real>& c = cache ? *cache : local;
  c.layers.resize(p.layers.size());

  Matrix<Real> x(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    const TokenId id = seq.ids[static_cast<std::size_t>(t)];
    const auto seg = seq.segments[static_cast<std::size_t>(t)];
    if (id < 0 || id >= cfg.vocab_size)
      throw Error(ErrorCode::contract, "token id " + std::to_string(id) + " out of range");
    if (seg >= cfg.n_segments)
      throw Error(ErrorCode::contract, "segment id " + std::to_string(seg) + " out of range");
    x.row(t) = p.token_emb.row(id) + p.pos_emb.row(t) + p.seg_emb.row(seg);
  }

  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& l = p.layers[li];
    auto& lc = c.layers[li];
    lc.x_in = x;
    layer_norm(x, l.ln1_gain, l.ln1_bias, lc.ln1_xhat, lc.ln1_rstd, lc.ln1_out);
    lc.qkv.noalias() = lc.ln1_out * l.attn_w;
    lc.qkv.rowwise() += l.attn_b;
    lc.attn_cat.resize(n, d);
    lc.probs.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto q = lc.qkv.middleCols(h * hd, hd);
      const auto k = lc.qkv.middleCols(d + h * hd, hd);
      const auto v = lc.qkv.middleCols(2 * d + h * hd, hd);
      auto& pr = lc.probs[static_cast<std::size_t>(h)];
      pr.noalias() = (q * k.transpose()) * scale;
      causal_softmax(pr);
      lc.attn_cat.middleCols(h * hd, hd).noalias() = pr * v;
    }
    lc.x_mid = x;
    lc.x_mid.noalias() += lc.attn_cat * l.proj_w;
    lc.x_mid.rowwise() += l.proj_b;
    layer_norm(lc.x_mid, l.ln2_gain, l.ln2_bias, lc.ln2_xhat, lc.ln2_rstd, lc.ln2_out);
    lc.fc_pre.noalias() = lc.ln2_out * l.fc_w;
    lc.fc_pre.rowwise() += l.fc_b;
    lc.fc_act = lc.fc_pre.unaryExpr([](Real v) { return gelu(v); });
    x = lc.x_mid;
    x.noalias() += lc.fc_act * l.out_w;
    x.rowwise() += l.out_b;
  }

  layer_norm(x, p.lnf_gain, p.lnf_bias, c.lnf_xhat, c.lnf_rstd, c.final_out);

  ForwardOutput<Real> out;
  const RowRange r = clamp(logit_rows, static_cast<std::size_t>(n));
  const auto rows = static_cast<Eigen::Index>(r.end - r.begin);
  out.logits.resize(rows, cfg.vocab_size);
  if (rows > 0)
    out.logits.noalias() =
        c.final_out.middleRows(static_cast<Eigen::Index>(r.begin), rows) * p.token_emb.transpose();
  out.final_hidden = c.final_out.row(n - 1);
  check_finite(out.logits, "output logits");
  return out;
}

// --- backward ---------------------------------------------------------------

template <typename Real>
void backward(const Params<Real>& p, const TokenSequence& seq, const ForwardCache<Real>& c,
              RowRange logit_rows, const Matrix<Real>& d_logits,
              const RowVector<Real>& d_final_hidden, Params<Real>& g) {
  const auto& cfg = p.config;
  const auto n = static_cast<Eigen::Index>(seq.size());
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index hd = d / cfg.n_heads;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(hd)));

  Matrix<Real> d_final = Matrix<Real>::Zero(n, d);
  const RowRange r = clamp(logit_rows, static_cast<std::size_t>(n));
  const auto rows = static_cast<Eigen::Index>(r.end - r.begin);
  if (rows > 0 && d_logits.size() > 0) {
    if (d_logits.rows() != rows || d_logits.cols() != cfg.vocab_size)
      throw Error(ErrorCode::contract, "logit gradient shape mismatch");
    const auto begin = static_cast<Eigen::Index>(r.begin);
    d_final.middleRows(begin, rows).noalias() = d_logits * p.token_emb;
    g.token_emb.noalias() += d_logits.transpose() * c.final_out.middleRows(begin, rows);
  }
  if (d_final_hidden.size() > 0) d_final.row(n - 1) += d_final_hidden;

  Matrix<Real> dx = layer_norm_backward(d_final, c.lnf_xhat, c.lnf_rstd, p.lnf_gain, g.lnf_gain,
                                        g.lnf_bias);
  check_finite(dx, "final layer norm gradient");

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& l = p.layers[li];
    const auto& lc = c.layers[li];
    auto& gl = g.layers[li];

    // feed-forward block
    gl.out_w.noalias() += lc.fc_act.transpose() * dx;
    gl.out_b += dx.colwise().sum();
    Matrix<Real> d_fc = dx * l.out_w.transpose();
    d_fc.array() *= lc.fc_pre.unaryExpr([](Real v) { return gelu_grad(v); }).array();
    gl.fc_w.noalias() += lc.ln2_out.transpose() * d_fc;
    gl.fc_b += d_fc.colwise().sum();
    Matrix<Real> d_ln2 = d_fc * l.fc_w.transpose();
    Matrix<Real> d_mid = dx;
    d_mid += layer_norm_backward(d_ln2, lc.ln2_xhat, lc.ln2_rstd, l.ln2_gain, gl.ln2_gain,
                                 gl.ln2_bias);

    // attention block
    gl.proj_w.noalias() += lc.attn_cat.transpose() * d_mid;
    gl.proj_b += d_mid.colwise().sum();
    Matrix<Real> d_cat = d_mid * l.proj_w.transpose();
    Matrix<Real> d_qkv(n, 3 * d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto q = lc.qkv.middleCols(h * hd, hd);
      const auto k = lc.qkv.middleCols(d + h * hd, hd);
      const auto v = lc.qkv.middleCols(2 * d + h * hd, hd);
      const auto& pr = lc.probs[static_cast<std::size_t>(h)];
      const auto d_out = d_cat.middleCols(h * hd, hd);
      Matrix<Real> d_p = d_out * v.transpose();
      ColVector<Real> row_dot = (d_p.array() * pr.array()).rowwise().sum();
      Matrix<Real> d_s = pr.array() * (d_p.colwise() - row_dot).array();
      d_s *= scale;
      d_qkv.middleCols(h * hd, hd).noalias() = d_s * k;
      d_qkv.middleCols(d + h * hd, hd).noalias() = d_s.transpose() * q;
      d_qkv.middleCols(2 * d + h * hd, hd).noalias() = pr.transpose() * d_out;
    }
    gl.attn_w.noalias() += lc.ln1_out.transpose() * d_qkv;
    gl.attn_b += d_qkv.colwise().sum();
    Matrix<Real> d_ln1 = d_qkv * l.attn_w.transpose();
    dx = d_mid;
    dx += layer_norm_backward(d_ln1, lc.ln1_xhat, lc.ln1_rstd, l.ln1_gain, gl.ln1_gain,
                              gl.ln1_bias);
    check_finite(dx, "layer " + std::to_string(li) + " gradient");
  }

  for (Eigen::Index t = 0; t < n; ++t) {
    g.token_emb.row(seq.ids[static_cast<std::size_t>(t)]) += dx.row(t);
    g.pos_emb.row(t) += dx.row(t);
    g.seg_emb.row(seq.segments[static_cast<std::size_t>(t)]) += dx.row(t);
  }
}

// --- losses -----------------------------------------------------------------

template <typename Real>
double lm_loss(const Matrix<Real>& logits, std::span<const TokenId> targets,
               const std::vector<bool>& mask, Matrix<Real>* d_logits, double scale) {
  const auto n = static_cast<std::size_t>(logits.rows());
  if (targets.size() != n || mask.size() != n)
    throw Error(ErrorCode::contract, "logits, targets and mask lengths differ");
  std::size_t count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  if (count == 0) throw Error(ErrorCode::contract, "loss mask selects no positions");
  if (d_logits) d_logits->setZero(logits.rows(), logits.cols());

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const auto row = logits.row(static_cast<Eigen::Index>(i));
    const TokenId target = targets[i];
    if (target < 0 || target >= logits.cols())
      throw Error(ErrorCode::contract, "target id out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < row.size(); ++j) mx = std::max(mx, static_cast<double>(row(j)));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < row.size(); ++j) sum += std::exp(static_cast<double>(row(j)) - mx);
    const double lse = mx + std::log(sum);
    total += lse - static_cast<double>(row(target));
    if (d_logits) {
      const double w = scale / static_cast<double>(count);
      for (Eigen::Index j = 0; j < row.size(); ++j)
        (*d_logits)(static_cast<Eigen::Index>(i), j) =
            static_cast<Real>(w * std::exp(static_cast<double>(row(j)) - lse));
      (*d_logits)(static_cast<Eigen::Index>(i), target) -= static_cast<Real>(w);
    }
  }
  const double loss = total / static_cast<double>(count);
  if (!std::isfinite(loss)) throw Error(ErrorCode::numeric, "non-finite language-model loss");
  return loss;
}

std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> out(scores.size());
  if (scores.empty()) return out;
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

template <typename Real>
double candidate_score(const Params<Real>& p, const RowVector<Real>& h) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < h.size(); ++i)
    s += static_cast<double>(h(i)) * static_cast<double>(p.cls_w(i));
  return s;
}

template <typename Real>
std::vector<double> classify_candidates(const Params<Real>& p,
                                        const std::vector<TokenSequence>& candidates) {
  if (candidates.size() < 2) throw Error(ErrorCode::contract, "need at least two candidates");
  std::vector<double> scores;
  for (const auto& c : candidates) {
    auto out = forward(p, c, RowRange{0, 0});
    scores.push_back(candidate_score(p, out.final_hidden));
  }
  return softmax(scores);
}

#define TOD_INSTANTIATE(R)                                                                   \
  template struct Params<R>;                                                                 \
  template Params<R> init_model<R>(const ModelConfig&);                                      \
  template ForwardOutput<R> forward<R>(const Params<R>&, const TokenSequence&, RowRange,     \
                                       ForwardCache<R>*);                                    \
  template void backward<R>(const Params<R>&, const TokenSequence&, const ForwardCache<R>&,  \
                            RowRange, const Matrix<R>&, const RowVector<R>&, Params<R>&);    \
  template double lm_loss<R>(const Matrix<R>&, std::span<const TokenId>,                     \
                             const std::vector<bool>&, Matrix<R>*, double);                  \
  template double candidate_score<R>(const Params<R>&, const RowVector<R>&);                 \
  template std::vector<double> classify_candidates<R>(const Params<R>&,                      \
                                                      const std::vector<TokenSequence>&);

TOD_INSTANTIATE(float)
TOD_INSTANTIATE(double)
#undef TOD_INSTANTIATE

template Params<double> Params<float>::cast<double>() const;
template Params<float> Params<double>::cast<float>() const;
template Params<float> Params<float>::cast<float>() const;
template Params<double> Params<double>::cast<double>() const;

}  // namespace tod
