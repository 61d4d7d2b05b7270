#include "lrtts/toytrain.hpp"

#include "lrtts/autodiff.hpp"
#include "lrtts/binary_io.hpp"
#include "lrtts/error.hpp"
#include "lrtts/parallel.hpp"
#include "lrtts/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include <json.hpp>

namespace lrtts::toytrain {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;
using Json = nlohmann::json;

void validate(const ToyConfig& c) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::BadConfig, what);
  };
  need(c.vocab_size >= 1 && c.feat_dim >= 1 && c.embed_dim >= 1 && c.enc_hidden >= 1 &&
           c.dec_hidden >= 1 && c.attn_dim >= 1,
       "model dimensions must be >= 1");
  need(c.aug_embed_dim >= 0, "aug_embed_dim must be >= 0");
  need(c.loc_width >= 0, "loc_width must be >= 0");
  need(c.n_aug_ids >= 1, "n_aug_ids must be >= 1");
  need(c.max_decode_frames >= 1, "max_decode_frames must be >= 1");
  need(c.gate_loss_weight >= 0.0, "gate_loss_weight must be >= 0");
  need(c.learning_rate > 0.0, "learning_rate must be > 0");
  need(c.grad_clip_norm > 0.0, "grad_clip_norm must be > 0");
  need(c.batch_size >= 1, "batch_size must be >= 1");
  need(c.steps >= 0, "steps must be >= 0");
}

const char* param_name(Param p) {
  static constexpr const char* names[kParamCount] = {
      "tok_embed", "enc_W_ih", "enc_W_hh", "enc_b",     "aug_embed", "att_W_q",
      "att_W_m",   "att_b",    "att_v",    "att_loc",   "dec_W_in",  "dec_W_rec", "dec_b",
      "out_W",     "out_b",    "gate_W",   "gate_b"};
  return names[static_cast<int>(p)];
}

std::array<Index, 2> param_shape(const ToyConfig& c, Param p) {
  const Index K = c.vocab_size, M = c.feat_dim, de = c.embed_dim, dh = c.enc_hidden,
              da = c.aug_embed_dim, ds = c.dec_hidden, datt = c.attn_dim, A = c.n_aug_ids;
  const Index dm = dh + da;
  switch (p) {
    case Param::TokEmbed: return {K, de};
    case Param::EncWih: return {de, dh};
    case Param::EncWhh: return {dh, dh};
    case Param::EncB: return {1, dh};
    case Param::AugEmbed: return {A, da};
    case Param::AttWq: return {ds, datt};
    case Param::AttWm: return {dm, datt};
    case Param::AttB: return {1, datt};
    case Param::AttV: return {datt, 1};
    case Param::AttLoc: return {2 * static_cast<Index>(c.loc_width), datt};
    case Param::DecWin: return {M + dm, ds};
    case Param::DecWrec: return {ds, ds};
    case Param::DecB: return {1, ds};
    case Param::OutW: return {ds + dm, M};
    case Param::OutB: return {1, M};
    case Param::GateW: return {ds + dm, 1};
    case Param::GateB: return {1, 1};
  }
  return {0, 0};
}

ToyModel::ToyModel(const ToyConfig& cfg) : config(cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  params.resize(kParamCount);
  for (int k = 0; k < kParamCount; ++k) {
    const auto p = static_cast<Param>(k);
    const auto [rows, cols] = param_shape(cfg, p);
    MatrixXd m = MatrixXd::Zero(rows, cols);
    if (p == Param::TokEmbed || p == Param::AugEmbed) {
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = 0.3 * rng.gaussian();
    } else if (rows > 1 || p == Param::GateW) {
      // weight matrices; biases (single-row) stay zero
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
    }
    params[k] = std::move(m);
  }
}

std::size_t ToyModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p.size());
  return n;
}

std::vector<AugProfile> default_aug_profiles() { return {{0.1, 0.1}, {0.2, 0.05}, {-0.15, 0.08}}; }

SyntheticCorpus gen_synthetic_corpus(int K, int M, int n_utts, std::pair<int, int> len_range,
                                     const std::vector<AugProfile>& profiles, std::uint64_t seed) {
  if (K < 2) throw Error(ErrorCode::BadRange, "vocabulary needs at least 2 symbols");
  if (M < 1) throw Error(ErrorCode::BadRange, "feature dimension must be >= 1");
  if (n_utts < 0) throw Error(ErrorCode::BadRange, "negative utterance count");
  const auto [lo, hi] = len_range;
  if (lo < 1 || hi > 64 || lo > hi) {
    throw Error(ErrorCode::BadRange, "length range must satisfy 1 <= min <= max <= 64");
  }
  for (const auto& p : profiles) {
    if (!(p.noise_std >= 0.0) || !std::isfinite(p.mean_shift)) {
      throw Error(ErrorCode::BadRange, "aug profile needs finite shift and noise_std >= 0");
    }
  }

  Rng rng(seed);
  SyntheticCorpus c;
  c.templates.resize(K, M);
  for (Index i = 0; i < K; ++i) {
    for (Index j = 0; j < M; ++j) c.templates(i, j) = rng.uniform(-1.0, 1.0);
  }
  c.emission.resize(K);
  for (auto& d : c.emission) d = 2 + static_cast<int>(rng.below(3));

  for (int u = 0; u < n_utts; ++u) {
    ToyExample clean;
    clean.utterance = u;
    const int len = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    for (int i = 0; i < len; ++i) clean.tokens.push_back(1 + static_cast<int>(rng.below(K)));
    clean.target_frames = render_templates(c, clean.tokens);
    clean.gate_targets.assign(clean.target_frames.rows(), false);
    clean.gate_targets.back() = true;
    c.examples.push_back(clean);
    for (std::size_t a = 0; a < profiles.size(); ++a) {
      ToyExample noisy = clean;
      noisy.aug_id = static_cast<int>(a) + 1;
      for (Index i = 0; i < noisy.target_frames.size(); ++i) {
        noisy.target_frames.data()[i] += profiles[a].mean_shift + profiles[a].noise_std * rng.gaussian();
      }
      c.examples.push_back(std::move(noisy));
    }
  }
  return c;
}

MatrixXd render_templates(const SyntheticCorpus& c, const std::vector<int>& tokens) {
  Index T = 0;
  for (int s : tokens) {
    if (s < 1 || s > c.templates.rows()) throw Error(ErrorCode::BadRange, "token outside the vocabulary");
    T += c.emission[s - 1];
  }
  MatrixXd out(T, c.templates.cols());
  Index t = 0;
  for (int s : tokens) {
    for (int k = 0; k < c.emission[s - 1]; ++k) out.row(t++) = c.templates.row(s - 1);
  }
  return out;
}

namespace {

// Padded batch, laid out n-major for token positions (row n*B + b) and
// t-major for frames (row t*B + b).
struct Batch {
  Index B = 0, N = 0, T = 0;
  std::vector<int> token_rows;  // embedding row or -1 for padding
  std::vector<int> aug_rows;
  MatrixXd token_mask;  // B x N
  VectorXd frame_mask;  // T*B
  MatrixXd targets;     // T*B x M
  VectorXd gate_targets;
  std::vector<Index> n_tokens, n_frames;
};

Batch make_batch(const ToyConfig& cfg, std::span<const ToyExample* const> examples) {
  if (examples.empty()) throw Error(ErrorCode::ShapeMismatch, "empty batch");
  Batch b;
  b.B = static_cast<Index>(examples.size());
  for (const ToyExample* e : examples) {
    if (e->tokens.empty()) throw Error(ErrorCode::ShapeMismatch, "example without tokens");
    if (e->target_frames.rows() < 1 || e->target_frames.cols() != cfg.feat_dim) {
      throw Error(ErrorCode::ShapeMismatch, "target frames must be T x " + std::to_string(cfg.feat_dim));
    }
    if (e->gate_targets.size() != static_cast<std::size_t>(e->target_frames.rows())) {
      throw Error(ErrorCode::ShapeMismatch, "gate targets and frames differ in length");
    }
    if (e->aug_id < 0 || e->aug_id >= cfg.n_aug_ids) {
      throw Error(ErrorCode::AugIdOutOfRange,
                  "aug id " + std::to_string(e->aug_id) + " not in [0, " + std::to_string(cfg.n_aug_ids) + ")");
    }
    for (int s : e->tokens) {
      if (s < 1 || s > cfg.vocab_size) throw Error(ErrorCode::ShapeMismatch, "token " + std::to_string(s) + " outside the vocabulary");
    }
    b.N = std::max<Index>(b.N, static_cast<Index>(e->tokens.size()));
    b.T = std::max<Index>(b.T, e->target_frames.rows());
    b.n_tokens.push_back(static_cast<Index>(e->tokens.size()));
    b.n_frames.push_back(e->target_frames.rows());
  }
  b.token_rows.assign(b.N * b.B, -1);
  b.aug_rows.assign(b.N * b.B, 0);
  b.token_mask = MatrixXd::Zero(b.B, b.N);
  b.frame_mask = VectorXd::Zero(b.T * b.B);
  b.targets = MatrixXd::Zero(b.T * b.B, cfg.feat_dim);
  b.gate_targets = VectorXd::Zero(b.T * b.B);
  for (Index j = 0; j < b.B; ++j) {
    const ToyExample& e = *examples[j];
    for (Index n = 0; n < b.N; ++n) {
      b.aug_rows[n * b.B + j] = e.aug_id;
      if (n < b.n_tokens[j]) {
        b.token_rows[n * b.B + j] = e.tokens[n] - 1;
        b.token_mask(j, n) = 1.0;
      }
    }
    for (Index t = 0; t < b.n_frames[j]; ++t) {
      b.frame_mask[t * b.B + j] = 1.0;
      b.targets.row(t * b.B + j) = e.target_frames.row(t);
      b.gate_targets[t * b.B + j] = e.gate_targets[t] ? 1.0 : 0.0;
    }
  }
  return b;
}

struct StepOut {
  ad::Var frame, gate_logit, alignment;
};

// Encoder plus one-step decoder over a padded batch.
class Unroller {
 public:
  Unroller(ad::Tape& tape, const ToyModel& model, const Batch& batch, bool trainable)
      : tape_(tape), cfg_(model.config), B_(batch.B), N_(batch.N), mask_(batch.token_mask) {
    for (int k = 0; k < kParamCount; ++k) {
      p_[k] = trainable ? tape.parameter(model.params[k]) : tape.constant(model.params[k]);
    }
    const ad::Var X = ad::gather_rows(P(Param::TokEmbed), batch.token_rows);
    const ad::Var XW = ad::matmul(X, P(Param::EncWih));
    ad::Var h = tape.constant(MatrixXd::Zero(B_, cfg_.enc_hidden));
    std::vector<ad::Var> hs;
    for (Index n = 0; n < N_; ++n) {
      const ad::Var pre = ad::add(ad::slice(XW, n * B_, B_, 0, cfg_.enc_hidden), ad::matmul(h, P(Param::EncWhh)));
      h = ad::tanh(ad::add_row_broadcast(pre, P(Param::EncB)));
      hs.push_back(h);
    }
    memory_ = ad::concat_rows(hs);
    if (cfg_.aug_embed_dim > 0) {
      const std::array<ad::Var, 2> parts{memory_, ad::gather_rows(P(Param::AugEmbed), batch.aug_rows)};
      memory_ = ad::concat_cols(parts);
    }
    keys_ = ad::add_row_broadcast(ad::matmul(memory_, P(Param::AttWm)), P(Param::AttB));
    state_ = tape.constant(MatrixXd::Zero(B_, cfg_.dec_hidden));
    context_ = tape.constant(MatrixXd::Zero(B_, cfg_.memory_dim()));
    alpha_prev_ = alpha_cum_ = tape.constant(MatrixXd::Zero(B_, N_));
  }

  ad::Var P(Param p) const { return p_[static_cast<int>(p)]; }
  ad::Var zero_frame() { return tape_.constant(MatrixXd::Zero(B_, cfg_.feat_dim)); }

  StepOut step(ad::Var prev_frame) {
    const std::array<ad::Var, 2> in_parts{prev_frame, context_};
    const ad::Var in = ad::concat_cols(in_parts);
    state_ = ad::tanh(ad::add_row_broadcast(
        ad::add(ad::matmul(in, P(Param::DecWin)), ad::matmul(state_, P(Param::DecWrec))), P(Param::DecB)));
    const ad::Var query = ad::matmul(state_, P(Param::AttWq));
    ad::Var keys = keys_;
    if (cfg_.loc_width > 0) {
      const std::array<ad::Var, 2> windows{ad::band_unfold(alpha_prev_, cfg_.loc_width),
                                           ad::band_unfold(alpha_cum_, cfg_.loc_width)};
      keys = ad::add(keys, ad::matmul(ad::concat_cols(windows), P(Param::AttLoc)));
    }
    const ad::Var alpha = ad::masked_softmax_rows(ad::additive_energy(keys, query, P(Param::AttV)), mask_);
    alpha_prev_ = alpha;
    alpha_cum_ = ad::add(alpha_cum_, alpha);
    context_ = ad::weighted_row_sum(alpha, memory_);
    const std::array<ad::Var, 2> out_parts{state_, context_};
    const ad::Var out_in = ad::concat_cols(out_parts);
    return {ad::add_row_broadcast(ad::matmul(out_in, P(Param::OutW)), P(Param::OutB)),
            ad::add_row_broadcast(ad::matmul(out_in, P(Param::GateW)), P(Param::GateB)), alpha};
  }

 private:
  ad::Tape& tape_;
  const ToyConfig& cfg_;
  Index B_, N_;
  MatrixXd mask_;
  std::array<ad::Var, kParamCount> p_;
  ad::Var memory_, keys_, state_, context_, alpha_prev_, alpha_cum_;
};

struct Graph {
  ad::Var loss, mse, bce;
  std::vector<StepOut> steps;
};

Graph build_graph(ad::Tape& tape, Unroller& u, const Batch& b, double lambda, bool teacher_forcing) {
  Graph g;
  ad::Var prev = u.zero_frame();
  std::vector<ad::Var> frames, gates;
  for (Index t = 0; t < b.T; ++t) {
    g.steps.push_back(u.step(prev));
    frames.push_back(g.steps.back().frame);
    gates.push_back(g.steps.back().gate_logit);
    prev = teacher_forcing ? tape.constant(b.targets.middleRows(t * b.B, b.B)) : g.steps.back().frame;
  }
  g.mse = ad::masked_mse(ad::concat_rows(frames), b.targets, b.frame_mask);
  g.bce = ad::masked_bce_with_logits(ad::concat_rows(gates), b.gate_targets, b.frame_mask);
  g.loss = ad::add(g.mse, ad::scale(g.bce, lambda));
  return g;
}

std::vector<const ToyExample*> pointers(std::span<const ToyExample> xs) {
  std::vector<const ToyExample*> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(&x);
  return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

void write_corpus_jsonl(std::span<const ToyExample> examples, const fs::path& path) {
  std::string out;
  for (const auto& e : examples) {
    Json frames = Json::array();
    for (Index t = 0; t < e.target_frames.rows(); ++t) {
      Json row = Json::array();
      for (Index m = 0; m < e.target_frames.cols(); ++m) row.push_back(e.target_frames(t, m));
      frames.push_back(std::move(row));
    }
    const Json j = {{"utterance", e.utterance}, {"aug_id", e.aug_id}, {"tokens", e.tokens}, {"frames", frames}};
    out += j.dump() + "\n";
  }
  binary::write_text(path, out);
}

std::vector<ToyExample> read_corpus_jsonl(const fs::path& path) {
  std::istringstream in(binary::read_text(path));
  std::vector<ToyExample> out;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const auto j = Json::parse(line);
      ToyExample e;
      e.utterance = j.at("utterance").get<int>();
      e.aug_id = j.at("aug_id").get<int>();
      e.tokens = j.at("tokens").get<std::vector<int>>();
      const auto rows = j.at("frames").get<std::vector<std::vector<double>>>();
      if (rows.empty() || e.tokens.empty()) throw Error(ErrorCode::MalformedRow, where + "empty example");
      e.target_frames.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
      for (std::size_t t = 0; t < rows.size(); ++t) {
        if (rows[t].size() != rows[0].size()) throw Error(ErrorCode::MalformedRow, where + "ragged frames");
        for (std::size_t m = 0; m < rows[t].size(); ++m) e.target_frames(static_cast<Index>(t), static_cast<Index>(m)) = rows[t][m];
      }
      e.gate_targets.assign(rows.size(), false);
      e.gate_targets.back() = true;
      out.push_back(std::move(e));
    } catch (const Json::exception& ex) {
      throw Error(ErrorCode::MalformedRow, where + ex.what());
    }
  }
  return out;
}

ForwardResult forward(const ToyModel& model, std::span<const ToyExample* const> batch,
                      bool teacher_forcing) {
  const Batch b = make_batch(model.config, batch);
  ad::Tape tape;
  Unroller u(tape, model, b, false);
  const Graph g = build_graph(tape, u, b, model.config.gate_loss_weight, teacher_forcing);

  ForwardResult r;
  r.loss = tape.value(g.loss)(0, 0);
  r.mse = tape.value(g.mse)(0, 0);
  r.bce = tape.value(g.bce)(0, 0);
  for (Index j = 0; j < b.B; ++j) {
    const Index T = b.n_frames[j], N = b.n_tokens[j];
    MatrixXd frames(T, model.config.feat_dim);
    VectorXd gates(T);
    evalkit::AttentionMatrix att{MatrixXd(T, N), std::nullopt};
    for (Index t = 0; t < T; ++t) {
      frames.row(t) = tape.value(g.steps[t].frame).row(j);
      gates[t] = sigmoid(tape.value(g.steps[t].gate_logit)(j, 0));
      att.weights.row(t) = tape.value(g.steps[t].alignment).row(j).head(N);
    }
    r.frames.push_back(std::move(frames));
    r.gates.push_back(std::move(gates));
    r.attention.push_back(std::move(att));
  }
  return r;
}

ForwardResult forward(const ToyModel& model, std::span<const ToyExample> batch, bool teacher_forcing) {
  const auto ptrs = pointers(batch);
  return forward(model, std::span<const ToyExample* const>(ptrs), teacher_forcing);
}

double loss_and_gradients(const ToyModel& model, std::span<const ToyExample* const> batch,
                          std::vector<MatrixXd>& grads) {
  const Batch b = make_batch(model.config, batch);
  ad::Tape tape;
  Unroller u(tape, model, b, true);
  const Graph g = build_graph(tape, u, b, model.config.gate_loss_weight, true);
  tape.backward(g.loss);
  grads.resize(kParamCount);
  for (int k = 0; k < kParamCount; ++k) grads[k] = tape.grad(u.P(static_cast<Param>(k)));
  return tape.value(g.loss)(0, 0);
}

double grad_check(const ToyModel& model, std::span<const ToyExample> batch, double eps) {
  const auto ptrs = pointers(batch);
  const std::span<const ToyExample* const> view(ptrs);
  std::vector<MatrixXd> grads;
  loss_and_gradients(model, view, grads);
  ToyModel probe = model;
  double worst = 0.0;
  for (int k = 0; k < kParamCount; ++k) {
    for (Index i = 0; i < probe.params[k].size(); ++i) {
      double& x = probe.params[k].data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = forward(probe, view).loss;
      x = saved - eps;
      const double down = forward(probe, view).loss;
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grads[k].data()[i];
      const double err = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

InferResult infer(const ToyModel& model, const std::vector<int>& tokens, int aug_id,
                  std::optional<int> forced_frames) {
  const ToyConfig& cfg = model.config;
  ToyExample probe;
  probe.tokens = tokens;
  probe.aug_id = aug_id;
  probe.target_frames = MatrixXd::Zero(1, cfg.feat_dim);
  probe.gate_targets = {true};
  const ToyExample* ptr = &probe;
  const Batch b = make_batch(cfg, std::span<const ToyExample* const>(&ptr, 1));
  if (forced_frames && *forced_frames < 1) throw Error(ErrorCode::BadConfig, "forced frame count must be >= 1");

  ad::Tape tape;
  Unroller u(tape, model, b, false);
  const int limit = forced_frames.value_or(cfg.max_decode_frames);
  std::vector<VectorXd> frames;
  std::vector<double> gates;
  std::vector<VectorXd> rows;
  ad::Var prev = u.zero_frame();
  for (int t = 0; t < limit; ++t) {
    const StepOut s = u.step(prev);
    frames.push_back(tape.value(s.frame).row(0).transpose());
    gates.push_back(sigmoid(tape.value(s.gate_logit)(0, 0)));
    rows.push_back(tape.value(s.alignment).row(0).transpose());
    prev = s.frame;
    if (!forced_frames && gates.back() > 0.5) break;
  }
  InferResult r;
  const Index T = static_cast<Index>(frames.size());
  r.frames.resize(T, cfg.feat_dim);
  r.gates.resize(T);
  r.attention.weights.resize(T, static_cast<Index>(tokens.size()));
  for (Index t = 0; t < T; ++t) {
    r.frames.row(t) = frames[t].transpose();
    r.gates[t] = gates[t];
    r.attention.weights.row(t) = rows[t].transpose();
  }
  return r;
}

double evaluate_loss(const ToyModel& model, std::span<const ToyExample> examples, int batch_size) {
  if (examples.empty()) throw Error(ErrorCode::ShapeMismatch, "no examples");
  // frame-weighted, so the result equals one big batch
  double mse_sum = 0.0, bce_sum = 0.0, frames = 0.0;
  for (std::size_t i = 0; i < examples.size(); i += batch_size) {
    const auto chunk = examples.subspan(i, std::min<std::size_t>(batch_size, examples.size() - i));
    const auto r = forward(model, chunk);
    double n = 0.0;
    for (const auto& e : chunk) n += static_cast<double>(e.target_frames.rows());
    mse_sum += r.mse * n;
    bce_sum += r.bce * n;
    frames += n;
  }
  return (mse_sum + model.config.gate_loss_weight * bce_sum) / frames;
}

std::vector<double> heldout_sharpness(const ToyModel& model, std::span<const ToyExample> examples,
                                      int batch_size) {
  std::vector<double> out;
  for (std::size_t i = 0; i < examples.size(); i += batch_size) {
    const auto chunk = examples.subspan(i, std::min<std::size_t>(batch_size, examples.size() - i));
    for (const auto& a : forward(model, chunk).attention) out.push_back(evalkit::sharpness_score(a));
  }
  return out;
}

double heldout_rmse(const ToyModel& model, std::span<const ToyExample> clean_examples, int aug_id) {
  if (clean_examples.empty()) throw Error(ErrorCode::ShapeMismatch, "no examples");
  std::vector<ToyExample> relabeled(clean_examples.begin(), clean_examples.end());
  for (auto& e : relabeled) e.aug_id = aug_id;
  double sq = 0.0, count = 0.0;
  const std::size_t bs = static_cast<std::size_t>(model.config.batch_size);
  for (std::size_t i = 0; i < relabeled.size(); i += bs) {
    const auto chunk = std::span<const ToyExample>(relabeled).subspan(i, std::min(bs, relabeled.size() - i));
    const auto r = forward(model, chunk, false);
    for (std::size_t j = 0; j < chunk.size(); ++j) {
      sq += (r.frames[j] - chunk[j].target_frames).squaredNorm();
      count += static_cast<double>(chunk[j].target_frames.size());
    }
  }
  return std::sqrt(sq / count);
}

TrainReport train(ToyModel& model, std::span<const ToyExample> corpus, curation::BatchMode mode,
                  const ToyConfig& cfg) {
  validate(cfg);
  if (corpus.empty()) throw Error(ErrorCode::ShapeMismatch, "empty training corpus");
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = cfg.seed;

  std::vector<curation::CorpusEntry> entries(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    entries[i].id = std::to_string(i);
    entries[i].duration_s = static_cast<double>(corpus[i].target_frames.rows());
  }

  report.initial_loss = evaluate_loss(model, corpus, cfg.batch_size);

  std::vector<MatrixXd> m1(kParamCount), m2(kParamCount), grads;
  for (int k = 0; k < kParamCount; ++k) {
    m1[k] = MatrixXd::Zero(model.params[k].rows(), model.params[k].cols());
    m2[k] = m1[k];
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double padding_sum = 0.0;
  std::size_t padding_n = 0;

  int step = 0;
  for (std::uint64_t epoch = 0; step < cfg.steps; ++epoch) {
    const auto plan = curation::plan_batches(entries, static_cast<std::size_t>(cfg.batch_size), mode,
                                             stable_hash(cfg.seed, "epoch", epoch));
    const auto padding = curation::padding_stats(plan, entries);
    for (std::size_t bi = 0; bi < plan.batches.size() && step < cfg.steps; ++bi, ++step) {
      padding_sum += padding.per_batch[bi].padding_ratio;
      ++padding_n;
      std::vector<const ToyExample*> batch;
      for (const auto& id : plan.batches[bi]) batch.push_back(&corpus[std::stoul(id)]);
      report.loss_curve.push_back(loss_and_gradients(model, batch, grads));

      double norm2 = 0.0;
      for (const auto& g : grads) norm2 += g.squaredNorm();
      const double norm = std::sqrt(norm2);
      const double clip = norm > cfg.grad_clip_norm ? cfg.grad_clip_norm / norm : 1.0;
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
      for (int k = 0; k < kParamCount; ++k) {
        const MatrixXd g = grads[k] * clip;
        m1[k] = beta1 * m1[k] + (1.0 - beta1) * g;
        m2[k] = beta2 * m2[k] + (1.0 - beta2) * g.cwiseAbs2();
        model.params[k].array() -=
            cfg.learning_rate * (m1[k].array() / c1) / ((m2[k].array() / c2).sqrt() + adam_eps);
      }
    }
  }
  report.mean_padding_ratio = padding_n ? padding_sum / static_cast<double>(padding_n) : 0.0;
  report.final_loss = cfg.steps == 0 ? report.initial_loss : evaluate_loss(model, corpus, cfg.batch_size);
  report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

namespace {

constexpr char kMagic[4] = {'T', 'O', 'Y', 'M'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_model(const ToyModel& model, const fs::path& path) {
  using binary::put_le;
  const ToyConfig& c = model.config;
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kVersion);
  for (int v : {c.vocab_size, c.feat_dim, c.embed_dim, c.enc_hidden, c.aug_embed_dim, c.dec_hidden,
                c.attn_dim, c.loc_width, c.n_aug_ids, c.max_decode_frames, c.batch_size, c.steps}) {
    put_le<std::int32_t>(out, v);
  }
  for (double v : {c.gate_loss_weight, c.learning_rate, c.grad_clip_norm}) put_le<double>(out, v);
  put_le<std::uint64_t>(out, c.seed);
  put_le<std::uint32_t>(out, kParamCount);
  for (const auto& p : model.params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.cols()));
    for (Index i = 0; i < p.size(); ++i) put_le<double>(out, p.data()[i]);
  }
  binary::write_file(path, out);
}

ToyModel load_model(const fs::path& path) {
  const auto bytes = binary::read_file(path);
  const std::span<const std::uint8_t> data(bytes);
  std::size_t off = 0;
  auto take = [&]<typename T>(T) {
    if (off + sizeof(T) > data.size()) throw Error(ErrorCode::Io, path.string() + ": truncated checkpoint");
    const T v = binary::get_le<T>(data, off);
    off += sizeof(T);
    return v;
  };
  if (data.size() < 8 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::Io, path.string() + ": not a TOYM checkpoint");
  }
  off = 4;
  if (const auto version = take(std::uint32_t{}); version != kVersion) {
    throw Error(ErrorCode::Io, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  ToyConfig c;
  for (int* f : {&c.vocab_size, &c.feat_dim, &c.embed_dim, &c.enc_hidden, &c.aug_embed_dim, &c.dec_hidden,
                 &c.attn_dim, &c.loc_width, &c.n_aug_ids, &c.max_decode_frames, &c.batch_size, &c.steps}) {
    *f = take(std::int32_t{});
  }
  for (double* f : {&c.gate_loss_weight, &c.learning_rate, &c.grad_clip_norm}) *f = take(double{});
  c.seed = take(std::uint64_t{});
  ToyModel model(c);
  if (take(std::uint32_t{}) != kParamCount) throw Error(ErrorCode::ShapeMismatch, "parameter count differs");
  for (int k = 0; k < kParamCount; ++k) {
    const Index rows = take(std::uint32_t{}), cols = take(std::uint32_t{});
    auto& p = model.params[k];
    if (rows != p.rows() || cols != p.cols()) {
      throw Error(ErrorCode::ShapeMismatch, std::string(param_name(static_cast<Param>(k))) + " has the wrong shape");
    }
    for (Index i = 0; i < p.size(); ++i) p.data()[i] = take(double{});
  }
  if (off != data.size()) throw Error(ErrorCode::Io, path.string() + ": trailing bytes");
  return model;
}

const char* to_string(Study s) { return s == Study::Batching ? "batching" : "aug_embedding"; }

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Run {
  std::string arm;
  std::uint64_t seed;
};

}  // namespace

std::string study_csv(const std::vector<StudyRow>& rows) {
  std::string out = "study,arm,seed,metric,value\n";
  for (const auto& r : rows) {
    out += r.study + "," + r.arm + "," + std::to_string(r.seed) + "," + r.metric + "," + fmt(r.value) + "\n";
  }
  return out;
}

std::vector<StudyRow> run_study(Study study, const std::vector<std::uint64_t>& seeds,
                                const StudyOptions& opt, const fs::path& out_dir) {
  validate(opt.base);
  if (seeds.empty()) throw Error(ErrorCode::BadConfig, "study needs at least one seed");
  const bool batching = study == Study::Batching;
  const std::vector<std::string> arms =
      batching ? std::vector<std::string>{"bucketed", "random"} : std::vector<std::string>{"embedding", "no_embedding"};

  std::vector<Run> runs;
  for (const auto& arm : arms) {
    for (auto s : seeds) runs.push_back({arm, s});
  }
  std::vector<std::vector<StudyRow>> results(runs.size());
  fs::create_directories(out_dir / "attn");

  parallel_for(runs.size(), opt.jobs, [&](std::size_t i) {
    const Run& run = runs[i];
    const auto profiles = batching ? std::vector<AugProfile>{} : opt.profiles;
    const auto corpus = gen_synthetic_corpus(opt.base.vocab_size, opt.base.feat_dim,
                                             opt.n_train_utts + opt.n_heldout_utts, opt.len_range,
                                             profiles, run.seed);
    std::vector<ToyExample> train_set, heldout_clean;
    for (const auto& e : corpus.examples) {
      if (e.utterance < opt.n_train_utts) {
        train_set.push_back(e);
      } else if (e.aug_id == 0) {
        heldout_clean.push_back(e);
      }
    }

    ToyConfig cfg = opt.base;
    cfg.seed = run.seed;
    cfg.n_aug_ids = static_cast<int>(profiles.size()) + 1;
    if (!batching && run.arm == "no_embedding") cfg.aug_embed_dim = 0;
    if (!batching && run.arm == "embedding" && cfg.aug_embed_dim == 0) cfg.aug_embed_dim = 4;
    const auto mode = batching && run.arm == "random" ? curation::BatchMode::RandomShuffle
                                                      : curation::BatchMode::Bucketed;
    ToyModel model(cfg);
    const auto report = train(model, train_set, mode, cfg);

    auto& rows = results[i];
    auto emit = [&](const std::string& metric, double v) {
      rows.push_back({to_string(study), run.arm, run.seed, metric, v});
    };
    emit("initial_loss", report.initial_loss);
    emit("final_loss", report.final_loss);
    emit("padding_ratio", report.mean_padding_ratio);
    const auto sharp = heldout_sharpness(model, heldout_clean, cfg.batch_size);
    emit("median_sharpness", evalkit::quantile(sharp, 0.5));
    emit("mean_sharpness", evalkit::box_stats(sharp).mean);
    if (!batching) {
      emit("rmse_aug0", heldout_rmse(model, heldout_clean, 0));
      if (cfg.aug_embed_dim > 0) {
        for (int a = 1; a < cfg.n_aug_ids; ++a) emit("rmse_aug" + std::to_string(a), heldout_rmse(model, heldout_clean, a));
      }
    }

    const auto att = forward(model, std::span<const ToyExample>(heldout_clean).first(
                                        std::min(opt.attention_dumps, heldout_clean.size())));
    for (std::size_t k = 0; k < att.attention.size(); ++k) {
      evalkit::write_attention(att.attention[k], out_dir / "attn" /
                                                     (run.arm + "_seed" + std::to_string(run.seed) + "_" +
                                                      std::to_string(k) + ".attn"));
    }
  });

  std::vector<StudyRow> rows;
  for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
  binary::write_text(out_dir / "study.csv", study_csv(rows));
  return rows;
}

}  // namespace lrtts::toytrain
