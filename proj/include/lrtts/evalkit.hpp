#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lrtts::evalkit {

inline constexpr double kRowSumTolerance = 1e-4;

/// T decoder frames by N encoder tokens; rows are attention distributions.
struct AttentionMatrix {
  Eigen::MatrixXd weights;
  std::optional<std::vector<bool>> frame_mask;  // true = valid frame
};

/// Throws NotRowStochastic naming the first offending row.
void check_row_stochastic(const Eigen::MatrixXd& weights);

/// Mean over valid frames of the per-frame maximum weight.
double sharpness_score(const AttentionMatrix& a);

struct BoxStats {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0;
  std::size_t n = 0;
};

/// Linear-interpolation quantile (type 7) of `values`, p in [0, 1].
double quantile(std::vector<double> values, double p);
BoxStats box_stats(const std::vector<double>& values);

using LabeledScores = std::vector<std::pair<std::string, std::vector<double>>>;
using LabeledMatrices = std::vector<std::pair<std::string, std::vector<AttentionMatrix>>>;

/// Per-label statistics in input order. Throws EmptyLabel for a label with no
/// matrices.
std::vector<std::pair<std::string, BoxStats>> sharpness_report(const LabeledMatrices& matrices);
std::vector<std::pair<std::string, BoxStats>> score_report(const LabeledScores& scores);

/// `label,min,q1,median,q3,max,mean,n`
std::string report_csv(const std::vector<std::pair<std::string, BoxStats>>& report);

/// Lowercase, drop punctuation, split on whitespace. Hyphens and slashes
/// separate words; apostrophes survive only between word characters and the
/// typographic one is folded to ASCII.
std::vector<std::string> normalize_text(std::string_view s);

struct WERBreakdown {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t n_ref_words = 0;
  double wer_percent = 0.0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
};

/// Minimum-edit alignment with unit costs. Among equal-cost alignments the
/// one with the most substitutions (fewest deletion/insertion pairs) wins.
WERBreakdown wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

struct SusReport {
  std::vector<WERBreakdown> per_sentence;
  std::size_t total_errors = 0;
  std::size_t total_ref_words = 0;
  double pooled_wer_percent = 0.0;
};

/// Pooled WER over (reference, hypothesis) text pairs, each normalized first.
SusReport sus_report(const std::vector<std::pair<std::string, std::string>>& pairs);

/// `index,n_ref,substitutions,deletions,insertions,wer_percent`
std::string sus_csv(const SusReport& report);

/// Two parallel one-sentence-per-line files.
std::vector<std::pair<std::string, std::string>> read_sus_pairs(const std::filesystem::path& refs,
                                                                const std::filesystem::path& hyps);
/// Two tab-separated columns: reference, hypothesis.
std::vector<std::pair<std::string, std::string>> read_sus_tsv(const std::filesystem::path& tsv);

/// ATTN1 text format: `ATTN1 <T> <N>` then T lines of N weights.
void write_attention(const AttentionMatrix& a, const std::filesystem::path& path);
AttentionMatrix read_attention(const std::filesystem::path& path);

}  // namespace lrtts::evalkit
