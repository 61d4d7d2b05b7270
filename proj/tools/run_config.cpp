#include "run_config.hpp"

#include "lrtts/error.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace lrtts::cli {

namespace {

[[noreturn]] void usage(const std::string& msg) { throw Error(ErrorCode::Usage, msg); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys = {
      {"seed", "1", "master seed for every randomized step"},
      {"jobs", "1", "worker threads (augment, verify-aug, study, curate)"},
      // curate
      {"corpus_dir", "", "LJSpeech-layout root: metadata.csv and wavs/"},
      {"mode", "informed", "subset selection: informed | random"},
      {"budget_s", "7200", "subset duration budget in seconds"},
      {"out_dir", "", "output directory (must be empty unless --force)"},
      // augment / verify-aug
      {"subset", "", "subset manifest (JSON lines) to augment"},
      {"noise_specs", "white:white:25:1,usasi:usasi:15:2,sensor:sensor:20:3",
       "comma list of name:kind:snr_db:aug_id; kind is white | usasi | sensor | psd"},
      {"psd_file", "", "CSV freq_hz,power_db used by kind psd"},
      {"sample_rate_hz", "22050", "required source sample rate; 0 accepts any"},
      {"verify", "true", "re-measure SNRs after augment and add them to the summary"},
      {"tolerance_db", "0.5", "allowed |achieved - target| SNR deviation"},
      {"dataset_dir", "", "augmented dataset directory (manifest.jsonl, wavs/)"},
      // p56 / mix / mel
      {"input", "", "input WAV file"},
      {"output", "", "output file"},
      {"noise", "white", "mix noise kind: white | usasi | sensor | psd"},
      {"snr_db", "20", "mix target active-speech SNR"},
      {"n_fft", "1024", "mel FFT size"},
      {"hop_length", "256", "mel hop in samples"},
      {"win_length", "1024", "mel window length in samples"},
      {"n_mels", "80", "mel bands"},
      {"fmin_hz", "0", "lowest mel frequency"},
      {"fmax_hz", "8000", "highest mel frequency"},
      {"log_floor", "1e-5", "floor added before the log"},
      // evaluation
      {"attn_dir", "", "comma list of directories of .attn files"},
      {"label", "", "comma list of labels, one per attn_dir"},
      {"ref", "", "reference sentences, one per line"},
      {"hyp", "", "hypothesis sentences, one per line"},
      {"tsv", "", "two-column ref<TAB>hyp file (sus, instead of ref/hyp)"},
      // toy corpus and model
      {"corpus", "", "toy corpus (corpus.jsonl written by toy-gen)"},
      {"model", "", "toy checkpoint (TOYM)"},
      {"tokens", "", "comma list of token ids in 1..vocab_size"},
      {"aug_id", "0", "augmentation id used at inference"},
      {"forced_frames", "0", "decode exactly this many frames; 0 stops on the gate"},
      {"batch_mode", "bucketed", "bucketed | random"},
      {"toy_vocab_size", "12", "K"},
      {"toy_feat_dim", "16", "M"},
      {"toy_n_utts", "200", "clean utterances generated by toy-gen"},
      {"toy_len_min", "3", "shortest token sequence"},
      {"toy_len_max", "40", "longest token sequence"},
      {"toy_profiles", "0.1:0.1,0.2:0.05,-0.15:0.08",
       "comma list of mean_shift:noise_std, aug ids 1.. in order; 'none' for a clean corpus"},
      {"toy_embed_dim", "16", "d_e"},
      {"toy_enc_hidden", "32", "d_h"},
      {"toy_aug_embed_dim", "4", "d_a; 0 disables the augmentation embedding"},
      {"toy_dec_hidden", "32", "d_s"},
      {"toy_attn_dim", "16", "d_att"},
      {"toy_loc_width", "0", "location window over previous/cumulative alignment; 0 = content attention"},
      {"toy_max_decode_frames", "200", "T_max"},
      {"toy_gate_loss_weight", "1", "lambda"},
      {"toy_learning_rate", "0.003", "Adam step size"},
      {"toy_grad_clip_norm", "1", "global gradient norm limit"},
      {"toy_batch_size", "16", "examples per batch"},
      {"toy_steps", "2000", "optimizer steps"},
      // study
      {"study", "batching", "batching | aug_embedding"},
      {"seeds", "1,2,3,4,5", "comma list of run seeds"},
      {"study_n_train", "200", "training utterances per run"},
      {"study_n_heldout", "40", "held-out utterances per run"},
      {"study_attention_dumps", "3", "held-out ATTN1 files written per run"},
  };
  return keys;
}

std::string flag_of(const std::string& key) {
  std::string f = "--" + key;
  for (auto& c : f) {
    if (c == '_') c = '-';
  }
  return f;
}

const KeyInfo* find_key(const std::string& name) {
  for (const auto& k : known_keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

RunConfig::RunConfig() {
  for (const auto& k : known_keys()) values_[k.name] = k.default_value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  std::set<std::string> seen;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path.string() + ":" + std::to_string(no);
    if (eq == std::string::npos) usage(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!find_key(key)) usage(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) usage(where + ": key '" + key + "' given twice");
    values_[key] = trim(line.substr(eq + 1));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) usage("unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) usage("unknown key '" + key + "'");
  return it->second;
}

const std::string& RunConfig::required(const std::string& key) const {
  const auto& v = str(key);
  if (v.empty()) usage(flag_of(key) + " is required");
  return v;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    usage(flag_of(key) + ": '" + v + "' is not a valid number");
  }
  return out;
}

}  // namespace

std::int64_t RunConfig::integer(const std::string& key) const {
  return parse_number<std::int64_t>(key, str(key));
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, str(key));
}

double RunConfig::real(const std::string& key) const { return parse_number<double>(key, str(key)); }

bool RunConfig::boolean(const std::string& key) const {
  const auto& v = str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  usage(flag_of(key) + ": '" + v + "' is not a boolean");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::snapshot(const std::string& command, const std::vector<std::string>& keys) const {
  std::string out = "# resolved configuration for: " + command + "\n";
  for (const auto& k : keys) out += k + " = " + str(k) + "\n";
  return out;
}

}  // namespace lrtts::cli
