#pragma once

#include "lrtts/curation.hpp"
#include "lrtts/evalkit.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lrtts::toytrain {

struct ToyConfig {
  int vocab_size = 12;      // K
  int feat_dim = 16;        // M
  int embed_dim = 16;       // d_e
  int enc_hidden = 32;      // d_h
  int aug_embed_dim = 4;    // d_a; 0 disables the augmentation embedding
  int dec_hidden = 32;      // d_s
  int attn_dim = 16;        // d_att
  int loc_width = 0;        // location window over the previous and cumulative alignment; 0 = content only
  int n_aug_ids = 4;        // A
  int max_decode_frames = 200;
  double gate_loss_weight = 1.0;
  double learning_rate = 3e-3;
  double grad_clip_norm = 1.0;
  int batch_size = 16;
  int steps = 2000;
  std::uint64_t seed = 1;

  int memory_dim() const { return enc_hidden + aug_embed_dim; }
};

/// Throws BadConfig.
void validate(const ToyConfig& cfg);

enum class Param {
  TokEmbed, EncWih, EncWhh, EncB,
  AugEmbed,
  AttWq, AttWm, AttB, AttV, AttLoc,
  DecWin, DecWrec, DecB,
  OutW, OutB,
  GateW, GateB,
};
inline constexpr int kParamCount = 17;
const char* param_name(Param p);
/// (rows, cols) of a parameter; a pure function of the config.
std::array<Eigen::Index, 2> param_shape(const ToyConfig& cfg, Param p);

/// Row-vector convention throughout: activations are (batch x features) and
/// weights map by right multiplication.
struct ToyModel {
  ToyConfig config;
  std::vector<Eigen::MatrixXd> params;  // indexed by Param

  /// Glorot-uniform weights, N(0, 0.3^2) embeddings, zero biases, from
  /// `config.seed`.
  explicit ToyModel(const ToyConfig& cfg);

  Eigen::MatrixXd& operator[](Param p) { return params[static_cast<int>(p)]; }
  const Eigen::MatrixXd& operator[](Param p) const { return params[static_cast<int>(p)]; }
  std::size_t parameter_count() const;
};

struct ToyExample {
  std::vector<int> tokens;  // 1..K
  int aug_id = 0;
  Eigen::MatrixXd target_frames;  // T x M
  std::vector<bool> gate_targets;  // true only at the last frame
  int utterance = 0;               // index of the clean utterance it derives from
};

struct AugProfile {
  double mean_shift = 0.0;
  double noise_std = 0.0;
};

/// The three default feature-domain noise profiles (aug ids 1..3).
std::vector<AugProfile> default_aug_profiles();

struct SyntheticCorpus {
  Eigen::MatrixXd templates;     // K x M; row s-1 belongs to token s
  std::vector<int> emission;     // K counts in {2, 3, 4}
  std::vector<ToyExample> examples;  // per utterance: clean, then one per profile
};

/// Throws BadRange.
SyntheticCorpus gen_synthetic_corpus(int vocab_size, int feat_dim, int n_utts,
                                     std::pair<int, int> len_range,
                                     const std::vector<AugProfile>& profiles, std::uint64_t seed);

/// Clean target of a token sequence.
Eigen::MatrixXd render_templates(const SyntheticCorpus& corpus, const std::vector<int>& tokens);

/// JSON lines, one example per line: {"utterance","aug_id","tokens","frames"}
/// with frames as an array of rows. Reading throws MalformedRow.
void write_corpus_jsonl(std::span<const ToyExample> examples, const std::filesystem::path& path);
std::vector<ToyExample> read_corpus_jsonl(const std::filesystem::path& path);

struct ForwardResult {
  std::vector<Eigen::MatrixXd> frames;  // per example, T_b x M
  std::vector<Eigen::VectorXd> gates;   // stop probabilities, T_b
  std::vector<evalkit::AttentionMatrix> attention;  // T_b x N_b
  double loss = 0.0;
  double mse = 0.0;
  double bce = 0.0;
};

/// Padded batch forward pass. With teacher forcing the decoder input at step t
/// is the target frame t-1; without it the decoder feeds back its own output
/// for exactly T_b frames. Throws ShapeMismatch, AugIdOutOfRange.
ForwardResult forward(const ToyModel& model, std::span<const ToyExample* const> batch,
                      bool teacher_forcing = true);
ForwardResult forward(const ToyModel& model, std::span<const ToyExample> batch,
                      bool teacher_forcing = true);

/// Teacher-forced loss and its gradient for every parameter.
double loss_and_gradients(const ToyModel& model, std::span<const ToyExample* const> batch,
                          std::vector<Eigen::MatrixXd>& grads);

/// Central differences over every parameter entry;
/// error = |a - n| / max(|a|, |n|, 1e-8).
double grad_check(const ToyModel& model, std::span<const ToyExample> batch, double eps = 1e-5);

struct InferResult {
  Eigen::MatrixXd frames;
  Eigen::VectorXd gates;
  evalkit::AttentionMatrix attention;
};

/// Autoregressive decoding. Stops after the first frame whose gate exceeds 0.5
/// or at max_decode_frames; `forced_frames` ignores the gate and decodes
/// exactly that many frames.
InferResult infer(const ToyModel& model, const std::vector<int>& tokens, int aug_id,
                  std::optional<int> forced_frames = std::nullopt);

struct TrainReport {
  std::vector<double> loss_curve;  // batch loss before each update
  double initial_loss = 0.0;       // teacher-forced loss over the training set
  double final_loss = 0.0;
  double mean_padding_ratio = 0.0;  // over every planned batch
  double wall_clock_s = 0.0;
  std::uint64_t seed = 0;
};

/// Adam (0.9, 0.999, 1e-8) with global-norm clipping, teacher forcing, one
/// batch plan per epoch over frame counts.
TrainReport train(ToyModel& model, std::span<const ToyExample> corpus, curation::BatchMode mode,
                  const ToyConfig& cfg);

/// Mean teacher-forced loss over `examples`, in chunks of cfg.batch_size.
double evaluate_loss(const ToyModel& model, std::span<const ToyExample> examples, int batch_size);

/// Teacher-forced attention sharpness of every example.
std::vector<double> heldout_sharpness(const ToyModel& model, std::span<const ToyExample> examples,
                                      int batch_size);

/// RMSE between forced-length inference under `aug_id` and the clean target.
double heldout_rmse(const ToyModel& model, std::span<const ToyExample> clean_examples, int aug_id);

void save_model(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_model(const std::filesystem::path& path);

enum class Study { Batching, AugEmbedding };
const char* to_string(Study s);

struct StudyOptions {
  ToyConfig base;                 // architecture and optimizer settings
  int n_train_utts = 200;
  int n_heldout_utts = 40;
  std::pair<int, int> len_range{3, 40};
  std::vector<AugProfile> profiles = default_aug_profiles();
  unsigned jobs = 1;
  std::size_t attention_dumps = 3;  // held-out ATTN1 files per run
};

struct StudyRow {
  std::string study, arm;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

/// Runs every (arm, seed) pair and writes `study.csv`
/// (`study,arm,seed,metric,value`) plus ATTN1 dumps under `out_dir`.
std::vector<StudyRow> run_study(Study study, const std::vector<std::uint64_t>& seeds,
                                const StudyOptions& options, const std::filesystem::path& out_dir);

std::string study_csv(const std::vector<StudyRow>& rows);

}  // namespace lrtts::toytrain
