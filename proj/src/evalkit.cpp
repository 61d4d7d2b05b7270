#include "lrtts/evalkit.hpp"

#include "lrtts/binary_io.hpp"
#include "lrtts/error.hpp"
#include "lrtts/text.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>

namespace lrtts::evalkit {

namespace fs = std::filesystem;

void check_row_stochastic(const Eigen::MatrixXd& weights) {
  if (weights.rows() == 0 || weights.cols() == 0) {
    throw Error(ErrorCode::NotRowStochastic, "empty attention matrix");
  }
  for (Eigen::Index t = 0; t < weights.rows(); ++t) {
    const auto row = weights.row(t);
    if (!row.allFinite() || row.minCoeff() < 0.0 || row.maxCoeff() > 1.0 + kRowSumTolerance) {
      throw Error(ErrorCode::NotRowStochastic, "row " + std::to_string(t) + " has weights outside [0, 1]");
    }
    const double s = row.sum();
    if (std::abs(s - 1.0) > kRowSumTolerance) {
      throw Error(ErrorCode::NotRowStochastic,
                  "row " + std::to_string(t) + " sums to " + std::to_string(s));
    }
  }
}

double sharpness_score(const AttentionMatrix& a) {
  check_row_stochastic(a.weights);
  const Eigen::VectorXd peaks = a.weights.rowwise().maxCoeff();
  if (a.frame_mask && a.frame_mask->size() != static_cast<std::size_t>(a.weights.rows())) {
    throw Error(ErrorCode::ShapeMismatch, "frame mask length differs from the number of frames");
  }
  // mean shifted by the first valid peak: exact when every peak is equal
  std::optional<double> ref;
  double dev = 0.0;
  std::size_t n = 0;
  for (Eigen::Index t = 0; t < peaks.size(); ++t) {
    if (a.frame_mask && !(*a.frame_mask)[t]) continue;
    if (!ref) ref = peaks[t];
    dev += peaks[t] - *ref;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::NoValidFrames, "frame mask selects no frames");
  return *ref + dev / static_cast<double>(n);
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::EmptyLabel, "quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BoxStats box_stats(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorCode::EmptyLabel, "no values");
  BoxStats s;
  s.n = values.size();
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  s.q1 = quantile(values, 0.25);
  s.median = quantile(values, 0.5);
  s.q3 = quantile(values, 0.75);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  return s;
}

std::vector<std::pair<std::string, BoxStats>> score_report(const LabeledScores& scores) {
  std::vector<std::pair<std::string, BoxStats>> out;
  for (const auto& [label, values] : scores) {
    if (values.empty()) throw Error(ErrorCode::EmptyLabel, "label '" + label + "' has no scores");
    out.emplace_back(label, box_stats(values));
  }
  return out;
}

std::vector<std::pair<std::string, BoxStats>> sharpness_report(const LabeledMatrices& matrices) {
  LabeledScores scores;
  for (const auto& [label, mats] : matrices) {
    if (mats.empty()) throw Error(ErrorCode::EmptyLabel, "label '" + label + "' has no matrices");
    std::vector<double> s;
    s.reserve(mats.size());
    for (const auto& m : mats) s.push_back(sharpness_score(m));
    scores.emplace_back(label, std::move(s));
  }
  return score_report(scores);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string report_csv(const std::vector<std::pair<std::string, BoxStats>>& report) {
  std::string out = "label,min,q1,median,q3,max,mean,n\n";
  for (const auto& [label, s] : report) {
    out += label + "," + fmt(s.min) + "," + fmt(s.q1) + "," + fmt(s.median) + "," + fmt(s.q3) +
           "," + fmt(s.max) + "," + fmt(s.mean) + "," + std::to_string(s.n) + "\n";
  }
  return out;
}

std::vector<std::string> normalize_text(std::string_view s) {
  const std::u32string cps = text::decode_utf8(s);
  std::vector<std::string> words;
  std::u32string word;
  auto flush = [&] {
    if (!word.empty()) words.push_back(text::encode_utf8(word));
    word.clear();
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (text::is_word_char(c)) {
      word.push_back(text::to_lower(c));
    } else if (text::is_apostrophe(c)) {
      const bool inside = !word.empty() && i + 1 < cps.size() && text::is_word_char(cps[i + 1]);
      if (inside) word.push_back(U'\'');
    } else if (text::is_space(c) || text::is_separator_punct(c)) {
      flush();
    }
    // other punctuation is dropped without splitting the word
  }
  flush();
  return words;
}

WERBreakdown wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  if (ref.empty()) throw Error(ErrorCode::EmptyReference, "reference has no words");
  // cell = {cost, S, D, I}; ordered by cost, then by D + I
  using Cell = std::array<std::size_t, 4>;
  auto better = [](const Cell& a, const Cell& b) {
    if (a[0] != b[0]) return a[0] < b[0];
    return a[2] + a[3] < b[2] + b[3];
  };
  const std::size_t R = ref.size(), H = hyp.size();
  std::vector<Cell> prev(H + 1), cur(H + 1);
  for (std::size_t j = 0; j <= H; ++j) prev[j] = {j, 0, 0, j};
  for (std::size_t i = 1; i <= R; ++i) {
    cur[0] = {i, 0, i, 0};
    for (std::size_t j = 1; j <= H; ++j) {
      Cell diag = prev[j - 1];
      if (ref[i - 1] != hyp[j - 1]) {
        ++diag[0];
        ++diag[1];
      }
      Cell del = prev[j];
      ++del[0];
      ++del[2];
      Cell ins = cur[j - 1];
      ++ins[0];
      ++ins[3];
      Cell best = diag;
      if (better(del, best)) best = del;
      if (better(ins, best)) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell& end = prev[H];
  WERBreakdown w;
  w.substitutions = end[1];
  w.deletions = end[2];
  w.insertions = end[3];
  w.n_ref_words = R;
  w.wer_percent = 100.0 * static_cast<double>(w.errors()) / static_cast<double>(R);
  return w;
}

SusReport sus_report(const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyReference, "no sentence pairs");
  SusReport r;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    try {
      r.per_sentence.push_back(wer(normalize_text(pairs[i].first), normalize_text(pairs[i].second)));
    } catch (const Error& e) {
      throw Error(e.code(), "pair " + std::to_string(i) + ": " + e.what());
    }
    r.total_errors += r.per_sentence.back().errors();
    r.total_ref_words += r.per_sentence.back().n_ref_words;
  }
  r.pooled_wer_percent =
      100.0 * static_cast<double>(r.total_errors) / static_cast<double>(r.total_ref_words);
  return r;
}

std::string sus_csv(const SusReport& report) {
  std::string out = "index,n_ref,substitutions,deletions,insertions,wer_percent\n";
  for (std::size_t i = 0; i < report.per_sentence.size(); ++i) {
    const auto& w = report.per_sentence[i];
    out += std::to_string(i) + "," + std::to_string(w.n_ref_words) + "," +
           std::to_string(w.substitutions) + "," + std::to_string(w.deletions) + "," +
           std::to_string(w.insertions) + "," + fmt(w.wer_percent) + "\n";
  }
  return out;
}

namespace {

std::vector<std::string> lines_of(const fs::path& path) {
  std::istringstream in(binary::read_text(path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_sus_pairs(const fs::path& refs,
                                                                const fs::path& hyps) {
  const auto r = lines_of(refs);
  const auto h = lines_of(hyps);
  if (r.size() != h.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(r.size()) + " references but " +
                                              std::to_string(h.size()) + " hypotheses");
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < r.size(); ++i) out.emplace_back(r[i], h[i]);
  return out;
}

std::vector<std::pair<std::string, std::string>> read_sus_tsv(const fs::path& tsv) {
  std::vector<std::pair<std::string, std::string>> out;
  const auto lines = lines_of(tsv);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto tab = lines[i].find('\t');
    if (tab == std::string::npos || lines[i].find('\t', tab + 1) != std::string::npos) {
      throw Error(ErrorCode::MalformedRow,
                  tsv.string() + ":" + std::to_string(i + 1) + ": expected two tab-separated columns");
    }
    out.emplace_back(lines[i].substr(0, tab), lines[i].substr(tab + 1));
  }
  return out;
}

void write_attention(const AttentionMatrix& a, const fs::path& path) {
  const auto& w = a.weights;
  std::string out = "ATTN1 " + std::to_string(w.rows()) + " " + std::to_string(w.cols()) + "\n";
  char buf[32];
  for (Eigen::Index t = 0; t < w.rows(); ++t) {
    for (Eigen::Index n = 0; n < w.cols(); ++n) {
      std::snprintf(buf, sizeof buf, "%.9g", w(t, n));
      if (n) out += ' ';
      out += buf;
    }
    out += '\n';
  }
  binary::write_text(path, out);
}

AttentionMatrix read_attention(const fs::path& path) {
  std::istringstream in(binary::read_text(path));
  auto bad = [&](const std::string& msg) {
    return Error(ErrorCode::MalformedAttnFile, path.string() + ": " + msg);
  };
  std::string line;
  if (!std::getline(in, line)) throw bad("empty file");
  std::istringstream header(line);
  std::string magic;
  long long T = -1, N = -1;
  std::string extra;
  if (!(header >> magic >> T >> N) || magic != "ATTN1" || (header >> extra) || T <= 0 || N <= 0) {
    throw bad("expected header 'ATTN1 <T> <N>'");
  }
  AttentionMatrix a;
  a.weights.resize(T, N);
  long long t = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (t >= T) throw bad("more than " + std::to_string(T) + " rows");
    std::istringstream row(line);
    for (long long n = 0; n < N; ++n) {
      if (!(row >> a.weights(t, n))) throw bad("row " + std::to_string(t) + " has fewer than " + std::to_string(N) + " values");
    }
    if (row >> extra) throw bad("row " + std::to_string(t) + " has more than " + std::to_string(N) + " values");
    ++t;
  }
  if (t != T) throw bad("header says " + std::to_string(T) + " rows, found " + std::to_string(t));
  check_row_stochastic(a.weights);
  return a;
}

}  // namespace lrtts::evalkit
