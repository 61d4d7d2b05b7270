#include "doctest.h"

#include "lrtts/autodiff.hpp"
#include "lrtts/binary_io.hpp"
#include "lrtts/error.hpp"
#include "lrtts/rng.hpp"
#include "lrtts/toytrain.hpp"
#include "test_util.hpp"

#include <functional>
#include <set>

using namespace lrtts;
using namespace lrtts::toytrain;
using Eigen::MatrixXd;
using lrtts::testing::TempDir;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected lrtts::Error");
  return ErrorCode::Usage;
}

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

using OpFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

ad::Var total(ad::Var x) {
  ad::Tape& t = *x.tape;
  const auto& v = t.value(x);
  return ad::matmul(ad::matmul(t.constant(MatrixXd::Ones(1, v.rows())), x),
                    t.constant(MatrixXd::Ones(v.cols(), 1)));
}

// sum(W .* op(inputs)) differentiated on the tape and by central differences
// over every input entry; returns the worst relative error.
double op_grad_error(const OpFn& op, const std::vector<MatrixXd>& inputs, std::uint64_t seed = 1) {
  Rng rng(seed);
  MatrixXd weights;
  auto value = [&](const std::vector<MatrixXd>& xs, std::vector<MatrixXd>* grads) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& x : xs) vars.push_back(tape.parameter(x));
    const ad::Var out = op(vars);
    const auto& o = tape.value(out);
    if (weights.size() == 0) weights = random_matrix(o.rows(), o.cols(), rng);
    const ad::Var probe = total(ad::mul(out, tape.constant(weights)));
    if (grads) {
      tape.backward(probe);
      for (auto v : vars) grads->push_back(tape.grad(v));
    }
    return tape.value(probe)(0, 0);
  };
  std::vector<MatrixXd> analytic;
  value(inputs, &analytic);
  double worst = 0.0;
  auto xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (Eigen::Index i = 0; i < xs[k].size(); ++i) {
      const double saved = xs[k].data()[i];
      xs[k].data()[i] = saved + 1e-6;
      const double up = value(xs, nullptr);
      xs[k].data()[i] = saved - 1e-6;
      const double down = value(xs, nullptr);
      xs[k].data()[i] = saved;
      const double numeric = (up - down) / 2e-6;
      const double a = analytic[k].data()[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8}));
    }
  }
  return worst;
}

ToyConfig tiny_config() {
  ToyConfig c;
  c.vocab_size = 4;
  c.feat_dim = 3;
  c.embed_dim = 4;
  c.enc_hidden = 5;
  c.aug_embed_dim = 2;
  c.dec_hidden = 5;
  c.attn_dim = 4;
  c.n_aug_ids = 3;
  c.max_decode_frames = 30;
  c.batch_size = 3;
  c.seed = 7;
  return c;
}

std::vector<ToyExample> tiny_batch(const ToyConfig& c) {
  const auto corpus = gen_synthetic_corpus(c.vocab_size, c.feat_dim, 2, {2, 4}, {{0.3, 0.2}, {-0.2, 0.1}}, 3);
  // clean + aug 1 of utterance 0, aug 2 of utterance 1: lengths differ
  return {corpus.examples[0], corpus.examples[1], corpus.examples[5]};
}

}  // namespace

TEST_CASE("autodiff operators match finite differences") {
  Rng rng(42);
  auto m = [&](Eigen::Index r, Eigen::Index c) { return random_matrix(r, c, rng); };

  CHECK(op_grad_error([](auto& v) { return ad::matmul(v[0], v[1]); }, {m(3, 4), m(4, 2)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::add(v[0], v[1]); }, {m(3, 4), m(3, 4)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::sub(v[0], v[1]); }, {m(3, 4), m(3, 4)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::add_row_broadcast(v[0], v[1]); }, {m(3, 4), m(1, 4)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::mul(v[0], v[1]); }, {m(3, 4), m(3, 4)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::scale(v[0], -2.5); }, {m(3, 4)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::tanh(v[0]); }, {m(3, 4)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::logistic(v[0]); }, {m(3, 4)}) < 1e-7);
  MatrixXd mask = MatrixXd::Ones(3, 4);
  mask(0, 3) = mask(2, 0) = mask(2, 1) = 0.0;
  CHECK(op_grad_error([&](auto& v) { return ad::masked_softmax_rows(v[0], mask); }, {m(3, 4)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::additive_energy(v[0], v[1], v[2]); },
                      {m(6, 4), m(2, 4), m(4, 1)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::weighted_row_sum(v[0], v[1]); }, {m(2, 3), m(6, 5)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::band_unfold(v[0], 3); }, {m(2, 4)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::band_unfold(v[0], 4); }, {m(3, 2)}) < 1e-7);
  {
    // fused attention ops agree with their unfused composition
    ad::Tape t;
    const auto K = t.constant(m(6, 4)), Q = t.constant(m(2, 4)), V = t.constant(m(4, 1));
    const auto fused = ad::additive_energy(K, Q, V);
    const auto plain = ad::reshape(ad::matmul(ad::tanh(ad::add(K, ad::tile_rows(Q, 3))), V), 2, 3);
    CHECK((t.value(fused) - t.value(plain)).cwiseAbs().maxCoeff() < 1e-14);
    const auto W = t.constant(m(2, 3)), M = t.constant(m(6, 5));
    const auto ws = ad::weighted_row_sum(W, M);
    const auto ref = ad::sum_row_blocks(ad::mul_col_broadcast(M, ad::reshape(W, 6, 1)), 3);
    CHECK((t.value(ws) - t.value(ref)).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK(op_grad_error([](auto& v) { return ad::concat_cols(std::span<const ad::Var>(v)); },
                      {m(3, 2), m(3, 1), m(3, 4)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::concat_rows(std::span<const ad::Var>(v)); },
                      {m(2, 3), m(1, 3), m(4, 3)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::slice(v[0], 1, 2, 1, 3); }, {m(4, 5)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::tile_rows(v[0], 3); }, {m(2, 3)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::reshape(v[0], 2, 6); }, {m(4, 3)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::sum_row_blocks(v[0], 3); }, {m(6, 2)}) < 1e-7);
  CHECK(op_grad_error([](auto& v) { return ad::mul_col_broadcast(v[0], v[1]); }, {m(4, 3), m(4, 1)}) < 1e-7);
  const std::vector<int> idx{2, -1, 0, 2};
  CHECK(op_grad_error([&](auto& v) { return ad::gather_rows(v[0], idx); }, {m(3, 2)}) < 1e-7);

  const MatrixXd target = m(4, 3);
  const Eigen::VectorXd rows = (Eigen::VectorXd(4) << 1, 0, 1, 1).finished();
  CHECK(op_grad_error([&](auto& v) { return ad::masked_mse(v[0], target, rows); }, {m(4, 3)}) < 1e-7);
  const Eigen::VectorXd labels = (Eigen::VectorXd(4) << 0, 1, 1, 0).finished();
  CHECK(op_grad_error([&](auto& v) { return ad::masked_bce_with_logits(v[0], labels, rows); }, {m(4, 1)}) < 1e-7);
}

TEST_CASE("autodiff values and misuse") {
  ad::Tape tape;
  MatrixXd a(2, 2);
  a << 1, 2, 3, 4;
  const auto x = tape.parameter(a);
  const auto r = ad::reshape(x, 1, 4);
  CHECK(tape.value(r)(0, 1) == 3.0);  // column-major
  const auto tiled = ad::tile_rows(x, 2);
  CHECK(tape.value(tiled).row(2) == a.row(0));
  const auto band = ad::band_unfold(x, 3);  // rows n*B+b
  MatrixXd expect(4, 3);
  expect << 0, 1, 2, 0, 3, 4, 1, 2, 0, 3, 4, 0;
  CHECK(tape.value(band) == expect);
  MatrixXd mask(1, 3);
  mask << 1, 0, 1;
  const auto sm = ad::masked_softmax_rows(tape.constant(MatrixXd::Zero(1, 3)), mask);
  CHECK(tape.value(sm)(0, 0) == doctest::Approx(0.5));
  CHECK(tape.value(sm)(0, 1) == 0.0);
  const auto th = ad::tanh(tape.constant((MatrixXd(1, 4) << -800, -0.5, 1e-9, 30).finished()));
  CHECK(tape.value(th)(0, 0) == -1.0);
  CHECK(tape.value(th)(0, 1) == doctest::Approx(std::tanh(-0.5)).epsilon(1e-14));
  CHECK(std::abs(tape.value(th)(0, 2) - 1e-9) < 1e-16);
  CHECK(tape.value(th)(0, 3) == 1.0);

  CHECK(code_of([&] { ad::matmul(x, tape.parameter(MatrixXd::Ones(3, 3))); }) == ErrorCode::ShapeMismatch);
  ad::Tape other;
  CHECK(code_of([&] { ad::add(x, other.parameter(a)); }) == ErrorCode::GraphConsistency);
  CHECK(code_of([&] { tape.backward(x); }) == ErrorCode::GraphConsistency);
  const auto loss = total(ad::mul(x, x));
  tape.backward(loss);
  CHECK(tape.grad(x) == 2.0 * a);
  CHECK(code_of([&] { tape.backward(loss); }) == ErrorCode::GraphConsistency);
  CHECK(code_of([&] { ad::add(x, x); }) == ErrorCode::GraphConsistency);
}

TEST_CASE("synthetic corpus construction") {
  const auto clean = gen_synthetic_corpus(5, 3, 4, {2, 6}, {}, 1);
  REQUIRE(clean.examples.size() == 4);
  for (const auto& e : clean.examples) {
    CHECK(e.aug_id == 0);
    CHECK(e.target_frames == render_templates(clean, e.tokens));
    CHECK(e.gate_targets.back());
    CHECK(std::count(e.gate_targets.begin(), e.gate_targets.end(), true) == 1);
    int expected = 0;
    for (int s : e.tokens) expected += clean.emission[s - 1];
    CHECK(e.target_frames.rows() == expected);
  }
  for (int d : clean.emission) CHECK((d >= 2 && d <= 4));
  CHECK(clean.templates.minCoeff() >= -1.0);
  CHECK(clean.templates.maxCoeff() <= 1.0);

  const auto zero = gen_synthetic_corpus(5, 3, 3, {2, 6}, {{0.0, 0.0}}, 1);
  REQUIRE(zero.examples.size() == 6);
  CHECK(zero.examples[1].aug_id == 1);
  CHECK(zero.examples[1].target_frames == zero.examples[0].target_frames);
  CHECK(zero.examples[1].tokens == zero.examples[0].tokens);

  SyntheticCorpus manual = clean;
  manual.emission[2] = 2;
  const MatrixXd two = render_templates(manual, {3, 3});
  REQUIRE(two.rows() == 4);
  for (int r = 0; r < 4; ++r) CHECK(two.row(r) == manual.templates.row(2));

  const auto shifted = gen_synthetic_corpus(5, 3, 50, {4, 8}, {{0.5, 0.0}}, 9);
  CHECK((shifted.examples[1].target_frames - shifted.examples[0].target_frames).mean() == doctest::Approx(0.5));

  CHECK(code_of([] { gen_synthetic_corpus(1, 3, 4, {2, 6}, {}, 1); }) == ErrorCode::BadRange);
  CHECK(code_of([] { gen_synthetic_corpus(5, 3, 4, {0, 6}, {}, 1); }) == ErrorCode::BadRange);
  CHECK(code_of([] { gen_synthetic_corpus(5, 3, 4, {2, 65}, {}, 1); }) == ErrorCode::BadRange);
  CHECK(code_of([] { gen_synthetic_corpus(5, 3, 4, {7, 6}, {}, 1); }) == ErrorCode::BadRange);
}

TEST_CASE("parameter shapes follow the config") {
  ToyConfig c;
  const ToyModel m(c);
  const auto dm = c.enc_hidden + c.aug_embed_dim;
  std::size_t expected = c.vocab_size * c.embed_dim + c.embed_dim * c.enc_hidden +
                         c.enc_hidden * c.enc_hidden + c.enc_hidden + c.n_aug_ids * c.aug_embed_dim +
                         c.dec_hidden * c.attn_dim + dm * c.attn_dim + c.attn_dim + c.attn_dim +
                         2 * c.loc_width * c.attn_dim +
                         (c.feat_dim + dm) * c.dec_hidden + c.dec_hidden * c.dec_hidden + c.dec_hidden +
                         (c.dec_hidden + dm) * c.feat_dim + c.feat_dim + (c.dec_hidden + dm) + 1;
  CHECK(m.parameter_count() == expected);
  ToyConfig located = c;
  located.loc_width = 5;
  CHECK(ToyModel(located).parameter_count() == expected + 10 * c.attn_dim);
  ToyConfig bad = c;
  bad.embed_dim = 0;
  CHECK(code_of([&] { ToyModel{bad}; }) == ErrorCode::BadConfig);
}

TEST_CASE("attention rows are distributions over real tokens") {
  const ToyConfig c = tiny_config();
  const ToyModel model(c);
  const auto batch = tiny_batch(c);
  const auto r = forward(model, batch);
  REQUIRE(r.attention.size() == batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& w = r.attention[j].weights;
    CHECK(w.rows() == batch[j].target_frames.rows());
    CHECK(w.cols() == static_cast<Eigen::Index>(batch[j].tokens.size()));
    for (Eigen::Index t = 0; t < w.rows(); ++t) {
      CHECK(w.row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(w.row(t).minCoeff() > 0.0);
    }
  }
}

TEST_CASE("padding does not change an example's outputs or loss share") {
  const ToyConfig c = tiny_config();
  const ToyModel model(c);
  auto batch = tiny_batch(c);
  // make the second example strictly longer so the first one gets padded
  batch[1].tokens.insert(batch[1].tokens.end(), {1, 2, 3});
  batch[1].target_frames.conservativeResize(batch[1].target_frames.rows() + 3, Eigen::NoChange);
  batch[1].target_frames.bottomRows(3).setConstant(0.25);
  batch[1].gate_targets.assign(batch[1].target_frames.rows(), false);
  batch[1].gate_targets.back() = true;

  const std::vector<ToyExample> alone{batch[0]};
  const std::vector<ToyExample> pair{batch[0], batch[1]};
  const std::vector<ToyExample> second{batch[1]};
  const auto a = forward(model, alone);
  const auto p = forward(model, pair);
  const auto s = forward(model, second);
  CHECK((a.frames[0] - p.frames[0]).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.attention[0].weights - p.attention[0].weights).cwiseAbs().maxCoeff() < 1e-12);
  const double ta = static_cast<double>(batch[0].target_frames.rows());
  const double tb = static_cast<double>(batch[1].target_frames.rows());
  CHECK(std::abs(p.loss - (a.loss * ta + s.loss * tb) / (ta + tb)) < 1e-9);

  for (bool tf : {true, false}) {
    const auto x = forward(model, alone, tf);
    const auto y = forward(model, pair, tf);
    CHECK((x.frames[0] - y.frames[0]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("zero output projection predicts the bias") {
  const ToyConfig c = tiny_config();
  ToyModel model(c);
  model[Param::OutW].setZero();
  model[Param::OutB] << 0.1, -0.2, 0.3;
  const auto batch = tiny_batch(c);
  const auto r = forward(model, batch);
  double sq = 0.0, n = 0.0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    for (Eigen::Index t = 0; t < r.frames[j].rows(); ++t) CHECK(r.frames[j].row(t) == model[Param::OutB]);
    sq += (batch[j].target_frames.rowwise() - model[Param::OutB].row(0)).squaredNorm();
    n += static_cast<double>(batch[j].target_frames.size());
  }
  CHECK(r.mse == doctest::Approx(sq / n).epsilon(1e-12));
}

TEST_CASE("gradient check on the tiny config") {
  const ToyConfig c = tiny_config();
  const ToyModel model(c);
  const auto batch = tiny_batch(c);
  CHECK(grad_check(model, batch, 1e-5) < 1e-4);
  MESSAGE("grad_check eps=1e-2: " << grad_check(model, batch, 1e-2));
  ToyConfig located = c;
  located.loc_width = 3;
  CHECK(grad_check(ToyModel(located), batch, 1e-5) < 1e-4);

  ToyModel biases_only(c);
  for (int k = 0; k < kParamCount; ++k) {
    const auto p = static_cast<Param>(k);
    if (p != Param::EncB && p != Param::AttB && p != Param::DecB && p != Param::OutB && p != Param::GateB) {
      biases_only.params[k].setZero();
    }
  }
  Rng rng(2);
  for (auto p : {Param::EncB, Param::AttB, Param::DecB, Param::OutB, Param::GateB}) {
    for (Eigen::Index i = 0; i < biases_only[p].size(); ++i) biases_only[p].data()[i] = rng.uniform(-0.5, 0.5);
  }
  CHECK(grad_check(biases_only, batch, 1e-5) < 1e-6);
}

TEST_CASE("aug embedding rows only receive gradient from their own examples") {
  const ToyConfig c = tiny_config();
  const ToyModel model(c);
  auto batch = tiny_batch(c);
  for (auto& e : batch) e.aug_id = 1;
  std::vector<const ToyExample*> ptrs;
  for (const auto& e : batch) ptrs.push_back(&e);
  std::vector<MatrixXd> grads;
  loss_and_gradients(model, ptrs, grads);
  const auto& g = grads[static_cast<int>(Param::AugEmbed)];
  CHECK(g.row(0).isZero(0.0));
  CHECK(g.row(2).isZero(0.0));
  CHECK_FALSE(g.row(1).isZero(0.0));
}

TEST_CASE("gate loss gradient is linear in its weight") {
  ToyConfig c = tiny_config();
  const auto batch = tiny_batch(c);
  std::vector<const ToyExample*> ptrs;
  for (const auto& e : batch) ptrs.push_back(&e);
  std::vector<std::vector<MatrixXd>> g(3);
  for (int i = 0; i < 3; ++i) {
    c.gate_loss_weight = i;
    ToyModel model(c);
    loss_and_gradients(model, ptrs, g[i]);
  }
  for (int k = 0; k < kParamCount; ++k) {
    if (g[0][k].size() == 0) continue;
    const MatrixXd once = g[1][k] - g[0][k];
    const MatrixXd twice = g[2][k] - g[0][k];
    CHECK((twice - 2.0 * once).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + once.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("forward validates its inputs") {
  const ToyConfig c = tiny_config();
  const ToyModel model(c);
  auto batch = tiny_batch(c);
  batch[0].aug_id = 3;
  CHECK(code_of([&] { forward(model, batch); }) == ErrorCode::AugIdOutOfRange);
  batch = tiny_batch(c);
  batch[0].target_frames.conservativeResize(Eigen::NoChange, 2);
  CHECK(code_of([&] { forward(model, batch); }) == ErrorCode::ShapeMismatch);
  batch = tiny_batch(c);
  batch[0].tokens[0] = 5;
  CHECK(code_of([&] { forward(model, batch); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { infer(model, {1, 2}, 3); }) == ErrorCode::AugIdOutOfRange);
}

TEST_CASE("inference") {
  const ToyConfig c = tiny_config();
  ToyModel model(c);
  model[Param::GateB](0, 0) = -50.0;  // never stops on its own
  const auto r = infer(model, {1, 2, 3}, 0);
  CHECK(r.frames.rows() == c.max_decode_frames);
  const auto again = infer(model, {1, 2, 3}, 0);
  CHECK(r.frames == again.frames);
  CHECK(r.attention.weights == again.attention.weights);

  model[Param::GateB](0, 0) = 50.0;
  CHECK(infer(model, {1, 2, 3}, 0).frames.rows() == 1);
  CHECK(infer(model, {1, 2, 3}, 0, 7).frames.rows() == 7);

  // forced-length inference equals the free-running batch forward pass
  const auto batch = tiny_batch(c);
  const auto free = forward(model, batch, false);
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto one = infer(model, batch[j].tokens, batch[j].aug_id,
                           static_cast<int>(batch[j].target_frames.rows()));
    CHECK((one.frames - free.frames[j]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("checkpoint round trip") {
  TempDir tmp("toym");
  const ToyConfig c = tiny_config();
  ToyModel model(c);
  const auto batch = tiny_batch(c);
  ToyConfig tc = c;
  tc.steps = 5;
  train(model, batch, curation::BatchMode::Bucketed, tc);
  save_model(model, tmp / "m.toym");
  const auto loaded = load_model(tmp / "m.toym");
  for (int k = 0; k < kParamCount; ++k) CHECK(loaded.params[k] == model.params[k]);
  CHECK(loaded.config.seed == model.config.seed);
  CHECK(forward(loaded, batch).loss == forward(model, batch).loss);
  const auto bytes = binary::read_file(tmp / "m.toym");
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "TOYM");

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  binary::write_file(tmp / "t.toym", truncated);
  CHECK(code_of([&] { load_model(tmp / "t.toym"); }) == ErrorCode::Io);
}

TEST_CASE("training is deterministic and steps = 0 is a no-op") {
  ToyConfig c = tiny_config();
  const auto corpus = gen_synthetic_corpus(c.vocab_size, c.feat_dim, 12, {2, 5}, {{0.2, 0.1}, {0.1, 0.1}}, 5);
  c.steps = 0;
  ToyModel untouched(c);
  const auto before = untouched.params;
  const auto r0 = train(untouched, corpus.examples, curation::BatchMode::Bucketed, c);
  CHECK(r0.loss_curve.empty());
  CHECK(r0.final_loss == r0.initial_loss);
  CHECK(untouched.params == before);

  c.steps = 40;
  ToyModel a(c), b(c);
  const auto ra = train(a, corpus.examples, curation::BatchMode::RandomShuffle, c);
  const auto rb = train(b, corpus.examples, curation::BatchMode::RandomShuffle, c);
  CHECK(ra.loss_curve == rb.loss_curve);
  CHECK(a.params == b.params);
  CHECK(ra.loss_curve.size() == 40);
  CHECK(ra.final_loss < ra.initial_loss);
}

TEST_CASE("study csv shape and serial/parallel identity") {
  TempDir tmp("study");
  StudyOptions opt;
  opt.base = tiny_config();
  opt.base.steps = 10;
  opt.n_train_utts = 8;
  opt.n_heldout_utts = 4;
  opt.len_range = {2, 6};
  opt.attention_dumps = 2;
  const auto rows = run_study(Study::Batching, {1, 2, 3}, opt, tmp / "serial");
  std::set<std::pair<std::string, std::uint64_t>> runs;
  for (const auto& r : rows) {
    runs.insert({r.arm, r.seed});
    if (r.metric == "median_sharpness") {
      CHECK(r.value > 1.0 / 6.0 - 1e-12);
      CHECK(r.value <= 1.0);
    }
  }
  CHECK(runs.size() == 6);
  const auto csv = binary::read_text(tmp / "serial" / "study.csv");
  CHECK(csv.rfind("study,arm,seed,metric,value\n", 0) == 0);
  CHECK(std::filesystem::exists(tmp / "serial" / "attn" / "bucketed_seed1_0.attn"));
  CHECK(evalkit::read_attention(tmp / "serial" / "attn" / "random_seed3_1.attn").weights.rows() > 0);

  opt.jobs = 3;
  run_study(Study::Batching, {1, 2, 3}, opt, tmp / "parallel");
  CHECK(binary::read_text(tmp / "parallel" / "study.csv") == csv);

  opt.jobs = 1;
  const auto aug = run_study(Study::AugEmbedding, {1, 2, 3}, opt, tmp / "aug");
  std::set<std::string> metrics;
  for (const auto& r : aug) {
    if (r.arm == "embedding") metrics.insert(r.metric);
    if (r.arm == "no_embedding") CHECK(r.metric != "rmse_aug1");
  }
  CHECK(metrics.count("rmse_aug0"));
  CHECK(metrics.count("rmse_aug3"));
}

TEST_CASE("corpus JSON lines round trip") {
  TempDir tmp("corpus");
  const auto corpus = gen_synthetic_corpus(6, 3, 4, {2, 5}, {{0.2, 0.1}}, 9);
  write_corpus_jsonl(corpus.examples, tmp / "c.jsonl");
  const auto back = read_corpus_jsonl(tmp / "c.jsonl");
  REQUIRE(back.size() == corpus.examples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].tokens == corpus.examples[i].tokens);
    CHECK(back[i].aug_id == corpus.examples[i].aug_id);
    CHECK(back[i].utterance == corpus.examples[i].utterance);
    CHECK(back[i].target_frames == corpus.examples[i].target_frames);
    CHECK(back[i].gate_targets == corpus.examples[i].gate_targets);
  }
  binary::write_text(tmp / "bad.jsonl", "{\"utterance\":0,\"aug_id\":0,\"tokens\":[1],\"frames\":[[1,2],[3]]}\n");
  CHECK(code_of([&] { read_corpus_jsonl(tmp / "bad.jsonl"); }) == ErrorCode::MalformedRow);
  binary::write_text(tmp / "bad2.jsonl", "not json\n");
  CHECK(code_of([&] { read_corpus_jsonl(tmp / "bad2.jsonl"); }) == ErrorCode::MalformedRow);
}

// Pinned baseline: 200 clean utterances of 3-5 tokens, default config, 2000
// steps. Measured ratio 0.051 and 39/40 held-out lengths within +-2 frames.
TEST_CASE("smoke: default training fits a short clean corpus") {
  ToyConfig c;
  c.n_aug_ids = 1;
  const auto corpus = gen_synthetic_corpus(c.vocab_size, c.feat_dim, 240, {3, 5}, {}, 1);
  std::vector<ToyExample> train_set, heldout;
  for (const auto& e : corpus.examples) (e.utterance < 200 ? train_set : heldout).push_back(e);
  ToyModel model(c);
  const auto report = train(model, train_set, curation::BatchMode::Bucketed, c);
  CHECK(report.final_loss < 0.1 * report.initial_loss);
  int close = 0;
  for (const auto& e : heldout) {
    const auto r = infer(model, e.tokens, 0);
    if (std::abs(r.frames.rows() - e.target_frames.rows()) <= 2) ++close;
  }
  CHECK(close >= static_cast<int>(0.8 * static_cast<double>(heldout.size())));
  MESSAGE("loss ratio " << report.final_loss / report.initial_loss << ", lengths within 2 frames: " << close
                        << "/" << heldout.size());
}
