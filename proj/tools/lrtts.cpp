#include "run_config.hpp"

#include "lrtts/audio.hpp"
#include "lrtts/augment.hpp"
#include "lrtts/binary_io.hpp"
#include "lrtts/curation.hpp"
#include "lrtts/error.hpp"
#include "lrtts/evalkit.hpp"
#include "lrtts/noisegen.hpp"
#include "lrtts/toytrain.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <memory>

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using namespace lrtts;
using cli::RunConfig;

namespace {

[[noreturn]] void usage(const std::string& msg) { throw Error(ErrorCode::Usage, msg); }

struct Context {
  std::string command;
  std::vector<std::string> keys;
  RunConfig cfg;
  bool json = false;
  bool force = false;

  void emit(const Json& j, const std::string& human) const {
    if (json) {
      std::cout << j.dump(2) << "\n";
    } else {
      std::cout << human;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Output directories must be empty unless --force; called only after every
// input has been validated.
fs::path prepare_out_dir(const Context& ctx) {
  const fs::path dir = ctx.cfg.required("out_dir");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) usage("--out-dir: " + dir.string() + " is not a directory");
    if (!fs::is_empty(dir) && !ctx.force) {
      usage("--out-dir: " + dir.string() + " is not empty (pass --force to reuse it)");
    }
  }
  fs::create_directories(dir);
  return dir;
}

void write_snapshot(const Context& ctx, const fs::path& path) {
  binary::write_text(path, ctx.cfg.snapshot(ctx.command, ctx.keys));
}

template <typename E>
E parse_choice(const RunConfig& cfg, const std::string& key, const std::map<std::string, E>& options) {
  const auto& v = cfg.str(key);
  const auto it = options.find(v);
  if (it == options.end()) {
    std::string allowed;
    for (const auto& [name, _] : options) allowed += (allowed.empty() ? "" : " | ") + name;
    usage(cli::flag_of(key) + ": '" + v + "' is not one of " + allowed);
  }
  return it->second;
}

int positive_int(const RunConfig& cfg, const std::string& key, std::int64_t min = 1) {
  const auto v = cfg.integer(key);
  if (v < min || v > 1'000'000'000) usage(cli::flag_of(key) + " must be >= " + std::to_string(min));
  return static_cast<int>(v);
}

unsigned jobs_of(const RunConfig& cfg) { return static_cast<unsigned>(positive_int(cfg, "jobs")); }

noisegen::SpectrumSpec spectrum_of(const RunConfig& cfg, const std::string& kind, const std::string& flag) {
  if (kind == "white") return noisegen::SpectrumSpec::white();
  if (kind == "usasi") return noisegen::SpectrumSpec::usasi();
  if (kind == "sensor") return noisegen::SpectrumSpec::table(noisegen::default_sensor_psd());
  if (kind == "psd") {
    return noisegen::SpectrumSpec::table(noisegen::read_psd_csv(cfg.required("psd_file")));
  }
  usage(flag + ": unknown noise kind '" + kind + "' (white | usasi | sensor | psd)");
}

std::vector<noisegen::NoiseSpec> parse_noise_specs(const RunConfig& cfg) {
  std::vector<noisegen::NoiseSpec> specs;
  for (const auto& item : cfg.list("noise_specs")) {
    std::vector<std::string> f;
    std::stringstream ss(item);
    for (std::string part; std::getline(ss, part, ':');) f.push_back(part);
    if (f.size() != 4) usage("--noise-specs: '" + item + "' is not name:kind:snr_db:aug_id");
    RunConfig scratch;
    scratch.set("snr_db", f[2]);
    scratch.set("aug_id", f[3]);
    noisegen::NoiseSpec s;
    s.name = f[0];
    s.spectrum = spectrum_of(cfg, f[1], "--noise-specs");
    s.snr_db = scratch.real("snr_db");
    s.aug_id = static_cast<int>(scratch.integer("aug_id"));
    specs.push_back(std::move(s));
  }
  augment::validate_specs(specs);
  return specs;
}

std::vector<toytrain::AugProfile> parse_profiles(const RunConfig& cfg) {
  std::vector<toytrain::AugProfile> out;
  if (cfg.str("toy_profiles") == "none") return out;
  for (const auto& item : cfg.list("toy_profiles")) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) usage("--toy-profiles: '" + item + "' is not mean_shift:noise_std");
    RunConfig scratch;
    scratch.set("snr_db", item.substr(0, colon));
    scratch.set("tolerance_db", item.substr(colon + 1));
    const toytrain::AugProfile p{scratch.real("snr_db"), scratch.real("tolerance_db")};
    if (p.noise_std < 0.0) usage("--toy-profiles: noise_std must be >= 0");
    out.push_back(p);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const RunConfig& cfg) {
  std::vector<std::uint64_t> seeds;
  for (const auto& s : cfg.list("seeds")) {
    RunConfig scratch;
    scratch.set("seed", s);
    seeds.push_back(scratch.u64("seed"));
  }
  if (seeds.empty()) usage("--seeds: at least one seed is required");
  return seeds;
}

toytrain::ToyConfig toy_config(const RunConfig& cfg) {
  toytrain::ToyConfig c;
  c.vocab_size = positive_int(cfg, "toy_vocab_size", 2);
  c.feat_dim = positive_int(cfg, "toy_feat_dim");
  c.embed_dim = positive_int(cfg, "toy_embed_dim");
  c.enc_hidden = positive_int(cfg, "toy_enc_hidden");
  c.aug_embed_dim = positive_int(cfg, "toy_aug_embed_dim", 0);
  c.dec_hidden = positive_int(cfg, "toy_dec_hidden");
  c.attn_dim = positive_int(cfg, "toy_attn_dim");
  c.loc_width = positive_int(cfg, "toy_loc_width", 0);
  c.max_decode_frames = positive_int(cfg, "toy_max_decode_frames");
  c.gate_loss_weight = cfg.real("toy_gate_loss_weight");
  c.learning_rate = cfg.real("toy_learning_rate");
  c.grad_clip_norm = cfg.real("toy_grad_clip_norm");
  c.batch_size = positive_int(cfg, "toy_batch_size");
  c.steps = positive_int(cfg, "toy_steps", 0);
  c.seed = cfg.u64("seed");
  return c;
}

// --- commands ---------------------------------------------------------------

int cmd_curate(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const fs::path root = cfg.required("corpus_dir");
  const auto mode = parse_choice<curation::SelectionMode>(
      cfg, "mode", {{"informed", curation::SelectionMode::Informed}, {"random", curation::SelectionMode::Random}});
  const double budget = cfg.real("budget_s");
  if (!(budget > 0.0)) usage("--budget-s must be positive");
  const auto seed = cfg.u64("seed");
  const auto jobs = jobs_of(cfg);

  const auto corpus = curation::measure_durations(curation::load_ljspeech_manifest(root), jobs);
  const auto subset = mode == curation::SelectionMode::Informed
                          ? curation::select_informed_subset(corpus, budget)
                          : curation::select_random_subset(corpus, budget, seed);
  const std::string violation =
      mode == curation::SelectionMode::Informed ? curation::check_informed_invariants(subset, corpus) : "";

  const fs::path out = prepare_out_dir(ctx);
  curation::write_subset(subset, out / "subset.jsonl", out / "subset_summary.json");
  write_snapshot(ctx, out / "resolved_config.txt");

  const std::string prefix = mode != curation::SelectionMode::Informed ? "not applicable"
                             : violation.empty()                      ? "verified"
                                                                      : "VIOLATED: " + violation;
  Json j = {{"mode", std::string(curation::to_string(mode))},
            {"budget_s", budget},
            {"corpus_n", corpus.size()},
            {"corpus_total_s", curation::total_duration(corpus)},
            {"n", subset.entries.size()},
            {"total_s", subset.total_duration_s},
            {"prefix_property", prefix},
            {"manifest", (out / "subset.jsonl").string()}};
  ctx.emit(j, "selected " + std::to_string(subset.entries.size()) + " of " + std::to_string(corpus.size()) +
                  " utterances, " + fmt("%.3f", subset.total_duration_s) + " s of " + fmt("%.1f", budget) +
                  " s budget (" + std::string(curation::to_string(mode)) + ")\nprefix property: " + prefix +
                  "\nmanifest: " + (out / "subset.jsonl").string() + "\n");
  return violation.empty() ? 0 : 1;
}

Json verify_json(const augment::VerifyReport& r) {
  return {{"n_checked", r.n_checked},         {"n_clean_skipped", r.n_clean_skipped},
          {"max_abs_deviation_db", r.max_abs_deviation_db}, {"tolerance_db", r.tolerance_db},
          {"n_exceeding", r.n_exceeding},     {"flagged", r.flagged_ids},
          {"missing", r.missing}};
}

std::string verify_text(const augment::VerifyReport& r) {
  std::string s = "verified " + std::to_string(r.n_checked) + " noisy files, max |deviation| " +
                  fmt("%.4f", r.max_abs_deviation_db) + " dB, " + std::to_string(r.n_exceeding) +
                  " beyond " + fmt("%.2f", r.tolerance_db) + " dB\n";
  for (const auto& id : r.flagged_ids) s += "  flagged: " + id + "\n";
  for (const auto& m : r.missing) s += "  missing: " + m + "\n";
  return s;
}

int cmd_augment(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto subset = curation::read_subset_manifest(cfg.required("subset"));
  const auto specs = parse_noise_specs(cfg);
  const auto seed = cfg.u64("seed");
  const auto jobs = jobs_of(cfg);
  const bool verify = cfg.boolean("verify");
  const double tol = cfg.real("tolerance_db");
  if (!(tol > 0.0)) usage("--tolerance-db must be positive");
  augment::BuildOptions opts;
  opts.jobs = jobs;
  if (const auto sr = cfg.integer("sample_rate_hz"); sr > 0) opts.expected_sample_rate_hz = static_cast<int>(sr);
  else if (sr < 0) usage("--sample-rate-hz must be >= 0");

  const fs::path out = prepare_out_dir(ctx);
  const auto result = augment::build_augmented_dataset(subset, specs, out, seed, opts);
  augment::write_manifest(result.entries, out / "manifest.jsonl");
  std::optional<augment::VerifyReport> report;
  if (verify) report = augment::verify_augmented_dataset(result.entries, out, jobs, tol);
  augment::write_summary(specs, seed, result, report ? &*report : nullptr, out / "summary.json");
  write_snapshot(ctx, out / "resolved_config.txt");

  Json j = {{"n_sources", subset.size()}, {"n_entries", result.entries.size()}, {"failures", result.failures}};
  if (report) j["verification"] = verify_json(*report);
  std::string text = "wrote " + std::to_string(result.entries.size()) + " entries from " +
                     std::to_string(subset.size()) + " sources to " + out.string() + "\n";
  for (const auto& f : result.failures) text += "  failed: " + f + "\n";
  if (report) text += verify_text(*report);
  ctx.emit(j, text);
  return (!result.failures.empty() || (report && (report->n_exceeding > 0 || !report->missing.empty()))) ? 1 : 0;
}

int cmd_verify_aug(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const fs::path dir = cfg.required("dataset_dir");
  const double tol = cfg.real("tolerance_db");
  if (!(tol > 0.0)) usage("--tolerance-db must be positive");
  const auto manifest = augment::read_manifest(dir / "manifest.jsonl");
  const auto r = augment::verify_augmented_dataset(manifest, dir, jobs_of(cfg), tol);
  ctx.emit(verify_json(r), verify_text(r));
  if (!r.missing.empty()) return 2;
  return r.n_exceeding > 0 ? 1 : 0;
}

int cmd_p56(Context& ctx) {
  const auto clip = audio::read_wav(ctx.cfg.required("input"));
  const auto r = audio::active_speech_level_p56(clip);
  Json j = {{"active_level_db", r.active_level_db},
            {"activity_factor", r.activity_factor},
            {"long_term_level_db", r.long_term_level_db},
            {"duration_s", clip.duration_s()}};
  ctx.emit(j, "active level " + fmt("%.3f", r.active_level_db) + " dB, activity " +
                  fmt("%.4f", r.activity_factor) + ", long-term level " + fmt("%.3f", r.long_term_level_db) +
                  " dB\n");
  return 0;
}

int cmd_mix(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const fs::path in = cfg.required("input");
  const fs::path out = cfg.required("output");
  const auto spec = spectrum_of(cfg, cfg.str("noise"), "--noise");
  const double snr = cfg.real("snr_db");
  const auto seed = cfg.u64("seed");
  const auto clip = audio::read_wav(in);
  noisegen::validate(spec, clip.sample_rate_hz);
  const auto r = noisegen::mix_at_snr(clip, spec, snr, seed);
  if (fs::exists(out) && !ctx.force) usage("--output: " + out.string() + " exists (pass --force to overwrite)");
  audio::write_wav(r.mixture, out);
  write_snapshot(ctx, out.string() + ".config.txt");
  Json j = {{"snr_db", snr},
            {"noise_gain", r.noise_gain},
            {"mixture_gain", r.mixture_gain},
            {"overflow_rescued", r.mixture_gain < 1.0},
            {"active_level_db", r.active_level_db},
            {"noise_power_db", r.noise_power_db}};
  ctx.emit(j, "mixed at " + fmt("%.2f", snr) + " dB: speech active level " + fmt("%.3f", r.active_level_db) +
                  " dB, noise " + fmt("%.3f", r.noise_power_db) + " dB, mixture gain " +
                  fmt("%.6f", r.mixture_gain) + (r.mixture_gain < 1.0 ? " (overflow rescued)" : "") + "\n");
  return 0;
}

int cmd_mel(Context& ctx) {
  const auto& cfg = ctx.cfg;
  audio::MelConfig m;
  m.n_fft = positive_int(cfg, "n_fft");
  m.hop_length = positive_int(cfg, "hop_length");
  m.win_length = positive_int(cfg, "win_length");
  m.n_mels = positive_int(cfg, "n_mels");
  m.fmin_hz = cfg.real("fmin_hz");
  m.fmax_hz = cfg.real("fmax_hz");
  m.log_floor = cfg.real("log_floor");
  const fs::path out = cfg.required("output");
  const auto clip = audio::read_wav(cfg.required("input"));
  audio::validate(m, clip.sample_rate_hz);
  const auto mel = audio::mel_spectrogram(clip, m);
  if (fs::exists(out) && !ctx.force) usage("--output: " + out.string() + " exists (pass --force to overwrite)");
  audio::write_melb(mel.frames, out);
  write_snapshot(ctx, out.string() + ".config.txt");
  Json j = {{"frames", mel.frames.rows()}, {"n_mels", mel.frames.cols()}, {"output", out.string()}};
  ctx.emit(j, "wrote " + std::to_string(mel.frames.rows()) + " x " + std::to_string(mel.frames.cols()) +
                  " mel frames to " + out.string() + "\n");
  return 0;
}

void write_or_print(const Context& ctx, const std::string& text) {
  const auto& out = ctx.cfg.str("output");
  if (out.empty()) {
    std::cout << text;
  } else {
    binary::write_text(out, text);
  }
}

Json report_json(const std::vector<std::pair<std::string, evalkit::BoxStats>>& report) {
  Json arr = Json::array();
  for (const auto& [label, s] : report) {
    arr.push_back({{"label", label}, {"min", s.min}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3},
                   {"max", s.max}, {"mean", s.mean}, {"n", s.n}});
  }
  return arr;
}

int cmd_sharpness(Context& ctx) {
  const auto dirs = ctx.cfg.list("attn_dir");
  auto labels = ctx.cfg.list("label");
  if (dirs.empty()) usage("--attn-dir is required");
  if (labels.empty()) {
    for (const auto& d : dirs) labels.push_back(fs::path(d).filename().string());
  }
  if (labels.size() != dirs.size()) usage("--label: give one label per --attn-dir");
  evalkit::LabeledMatrices data;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    if (!fs::is_directory(dirs[i])) throw Error(ErrorCode::Io, "not a directory: " + dirs[i]);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dirs[i])) {
      if (e.is_regular_file() && e.path().extension() == ".attn") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<evalkit::AttentionMatrix> ms;
    for (const auto& f : files) ms.push_back(evalkit::read_attention(f));
    data.emplace_back(labels[i], std::move(ms));
  }
  const auto report = evalkit::sharpness_report(data);
  if (ctx.json) {
    std::cout << report_json(report).dump(2) << "\n";
  } else {
    write_or_print(ctx, evalkit::report_csv(report));
  }
  return 0;
}

std::vector<std::pair<std::string, std::string>> sus_pairs(const RunConfig& cfg) {
  if (!cfg.str("tsv").empty()) {
    if (!cfg.str("ref").empty() || !cfg.str("hyp").empty()) usage("--tsv: give either --tsv or --ref/--hyp");
    return evalkit::read_sus_tsv(cfg.str("tsv"));
  }
  return evalkit::read_sus_pairs(cfg.required("ref"), cfg.required("hyp"));
}

Json pooled_json(const evalkit::SusReport& r) {
  std::size_t s = 0, d = 0, i = 0;
  for (const auto& b : r.per_sentence) {
    s += b.substitutions;
    d += b.deletions;
    i += b.insertions;
  }
  return {{"sentences", r.per_sentence.size()}, {"ref_words", r.total_ref_words},
          {"substitutions", s},                  {"deletions", d},
          {"insertions", i},                     {"errors", r.total_errors},
          {"pooled_wer_percent", r.pooled_wer_percent}};
}

std::string pooled_text(const Json& j) {
  return "pooled WER " + fmt("%.2f", j["pooled_wer_percent"].get<double>()) + "% (" +
         std::to_string(j["substitutions"].get<std::size_t>()) + " S, " +
         std::to_string(j["deletions"].get<std::size_t>()) + " D, " +
         std::to_string(j["insertions"].get<std::size_t>()) + " I over " +
         std::to_string(j["ref_words"].get<std::size_t>()) + " reference words, " +
         std::to_string(j["sentences"].get<std::size_t>()) + " sentences)\n";
}

int cmd_wer(Context& ctx) {
  const auto r = evalkit::sus_report(evalkit::read_sus_pairs(ctx.cfg.required("ref"), ctx.cfg.required("hyp")));
  const Json j = pooled_json(r);
  ctx.emit(j, pooled_text(j));
  return 0;
}

int cmd_sus(Context& ctx) {
  const auto r = evalkit::sus_report(sus_pairs(ctx.cfg));
  Json j = pooled_json(r);
  const auto& out = ctx.cfg.str("output");
  if (!out.empty()) {
    binary::write_text(out, evalkit::sus_csv(r));
    j["csv"] = out;
  } else if (!ctx.json) {
    std::cout << evalkit::sus_csv(r);
  }
  ctx.emit(j, pooled_text(j));
  return 0;
}

int cmd_toy_gen(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const int K = positive_int(cfg, "toy_vocab_size", 2), M = positive_int(cfg, "toy_feat_dim");
  const int n = positive_int(cfg, "toy_n_utts");
  const std::pair<int, int> len{positive_int(cfg, "toy_len_min"), positive_int(cfg, "toy_len_max")};
  const auto profiles = parse_profiles(cfg);
  const auto corpus = toytrain::gen_synthetic_corpus(K, M, n, len, profiles, cfg.u64("seed"));

  const fs::path out = prepare_out_dir(ctx);
  toytrain::write_corpus_jsonl(corpus.examples, out / "corpus.jsonl");
  Json templates = Json::array();
  for (Eigen::Index k = 0; k < corpus.templates.rows(); ++k) {
    templates.push_back(std::vector<double>(corpus.templates.row(k).begin(), corpus.templates.row(k).end()));
  }
  Json jp = Json::array();
  for (const auto& p : profiles) jp.push_back({{"mean_shift", p.mean_shift}, {"noise_std", p.noise_std}});
  const Json meta = {{"templates", templates}, {"emission", corpus.emission}, {"profiles", jp}};
  binary::write_text(out / "templates.json", meta.dump(2) + "\n");
  write_snapshot(ctx, out / "resolved_config.txt");
  Json j = {{"examples", corpus.examples.size()}, {"utterances", n}, {"aug_ids", profiles.size() + 1},
            {"corpus", (out / "corpus.jsonl").string()}};
  ctx.emit(j, "wrote " + std::to_string(corpus.examples.size()) + " examples (" + std::to_string(n) +
                  " utterances x " + std::to_string(profiles.size() + 1) + " aug ids) to " +
                  (out / "corpus.jsonl").string() + "\n");
  return 0;
}

int cmd_toy_train(Context& ctx) {
  const auto& cfg = ctx.cfg;
  auto tc = toy_config(cfg);
  const auto mode = parse_choice<curation::BatchMode>(
      cfg, "batch_mode", {{"bucketed", curation::BatchMode::Bucketed}, {"random", curation::BatchMode::RandomShuffle}});
  const auto corpus = toytrain::read_corpus_jsonl(cfg.required("corpus"));
  if (corpus.empty()) usage("--corpus: no examples");
  int max_aug = 0, max_tok = 0;
  for (const auto& e : corpus) {
    max_aug = std::max(max_aug, e.aug_id);
    for (int t : e.tokens) max_tok = std::max(max_tok, t);
  }
  if (max_tok > tc.vocab_size) {
    usage("--toy-vocab-size: corpus uses token " + std::to_string(max_tok) + " but vocab_size is " +
          std::to_string(tc.vocab_size));
  }
  tc.feat_dim = static_cast<int>(corpus.front().target_frames.cols());
  tc.n_aug_ids = max_aug + 1;
  toytrain::validate(tc);

  const fs::path out = prepare_out_dir(ctx);
  toytrain::ToyModel model(tc);
  const auto report = toytrain::train(model, corpus, mode, tc);
  toytrain::save_model(model, out / "model.toym");
  const Json jr = {{"batch_mode", std::string(curation::to_string(mode))},
                   {"seed", report.seed},
                   {"steps", tc.steps},
                   {"initial_loss", report.initial_loss},
                   {"final_loss", report.final_loss},
                   {"mean_padding_ratio", report.mean_padding_ratio},
                   {"parameters", model.parameter_count()},
                   {"loss_curve", report.loss_curve}};
  binary::write_text(out / "train_report.json", jr.dump(2) + "\n");
  write_snapshot(ctx, out / "resolved_config.txt");
  Json j = {{"initial_loss", report.initial_loss}, {"final_loss", report.final_loss},
            {"mean_padding_ratio", report.mean_padding_ratio}, {"wall_clock_s", report.wall_clock_s},
            {"model", (out / "model.toym").string()}};
  ctx.emit(j, "trained " + std::to_string(tc.steps) + " steps (" + std::string(curation::to_string(mode)) +
                  "): loss " + fmt("%.5f", report.initial_loss) + " -> " + fmt("%.5f", report.final_loss) +
                  ", mean padding " + fmt("%.3f", report.mean_padding_ratio) + ", " +
                  fmt("%.1f", report.wall_clock_s) + " s\nmodel: " + (out / "model.toym").string() + "\n");
  return 0;
}

int cmd_toy_infer(Context& ctx) {
  const auto& cfg = ctx.cfg;
  std::vector<int> tokens;
  for (const auto& t : cfg.list("tokens")) {
    RunConfig scratch;
    scratch.set("aug_id", t);
    tokens.push_back(static_cast<int>(scratch.integer("aug_id")));
  }
  if (tokens.empty()) usage("--tokens is required");
  const int aug_id = positive_int(cfg, "aug_id", 0);
  const int forced = positive_int(cfg, "forced_frames", 0);
  const auto model = toytrain::load_model(cfg.required("model"));
  for (int t : tokens) {
    if (t < 1 || t > model.config.vocab_size) usage("--tokens: token " + std::to_string(t) + " is out of range");
  }
  const auto r = toytrain::infer(model, tokens, aug_id, forced > 0 ? std::optional<int>(forced) : std::nullopt);

  std::string where;
  if (!cfg.str("out_dir").empty()) {
    const fs::path out = prepare_out_dir(ctx);
    std::string frames, gates;
    for (Eigen::Index t = 0; t < r.frames.rows(); ++t) {
      for (Eigen::Index m = 0; m < r.frames.cols(); ++m) frames += (m ? "," : "") + fmt("%.9g", r.frames(t, m));
      frames += "\n";
      gates += fmt("%.9g", r.gates[t]) + "\n";
    }
    binary::write_text(out / "frames.csv", frames);
    binary::write_text(out / "gates.csv", gates);
    evalkit::write_attention(r.attention, out / "attention.attn");
    write_snapshot(ctx, out / "resolved_config.txt");
    where = out.string();
  }
  const bool gate_stop = forced == 0 && r.gates.size() > 0 && r.gates[r.gates.size() - 1] > 0.5;
  Json j = {{"frames", r.frames.rows()},
            {"stopped_by_gate", gate_stop},
            {"sharpness", evalkit::sharpness_score(r.attention)}};
  if (!where.empty()) j["out_dir"] = where;
  ctx.emit(j, "decoded " + std::to_string(r.frames.rows()) + " frames" +
                  (forced ? " (forced)" : gate_stop ? " (gate stop)" : " (hit max_decode_frames)") +
                  ", attention sharpness " + fmt("%.4f", evalkit::sharpness_score(r.attention)) + "\n");
  return 0;
}

int cmd_study(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto study = parse_choice<toytrain::Study>(
      cfg, "study", {{"batching", toytrain::Study::Batching}, {"aug_embedding", toytrain::Study::AugEmbedding}});
  const auto seeds = parse_seeds(cfg);
  if (seeds.size() < 3) usage("--seeds: a study needs at least 3 seeds");
  toytrain::StudyOptions opt;
  opt.base = toy_config(cfg);
  opt.n_train_utts = positive_int(cfg, "study_n_train");
  opt.n_heldout_utts = positive_int(cfg, "study_n_heldout");
  opt.len_range = {positive_int(cfg, "toy_len_min"), positive_int(cfg, "toy_len_max")};
  opt.profiles = parse_profiles(cfg);
  opt.jobs = jobs_of(cfg);
  opt.attention_dumps = static_cast<std::size_t>(positive_int(cfg, "study_attention_dumps", 0));

  const fs::path out = prepare_out_dir(ctx);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = toytrain::run_study(study, seeds, opt, out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_snapshot(ctx, out / "resolved_config.txt");

  // per (arm, metric) medians over seeds
  std::map<std::string, std::map<std::string, std::vector<double>>> by_arm;
  for (const auto& r : rows) by_arm[r.arm][r.metric].push_back(r.value);
  Json arms = Json::object();
  std::string text = std::string(toytrain::to_string(study)) + " study, " + std::to_string(seeds.size()) +
                     " seeds, " + fmt("%.1f", secs) + " s\n";
  for (const auto& [arm, metrics] : by_arm) {
    Json m = Json::object();
    text += "  " + arm + ":";
    for (const auto& [name, values] : metrics) {
      const double med = evalkit::quantile(values, 0.5);
      m[name] = med;
      text += " " + name + "=" + fmt("%.4f", med);
    }
    arms[arm] = m;
    text += "\n";
  }
  text += "csv: " + (out / "study.csv").string() + "\n";
  ctx.emit({{"study", toytrain::to_string(study)}, {"seeds", seeds}, {"median_over_seeds", arms},
            {"wall_clock_s", secs}, {"csv", (out / "study.csv").string()}},
           text);
  return 0;
}

struct CommandSpec {
  const char* name;
  const char* help;
  std::vector<std::string> keys;
  std::function<int(Context&)> run;
};

const std::vector<std::string> kToyArch = {
    "toy_vocab_size", "toy_feat_dim", "toy_embed_dim", "toy_enc_hidden", "toy_aug_embed_dim", "toy_dec_hidden",
    "toy_attn_dim", "toy_loc_width", "toy_max_decode_frames", "toy_gate_loss_weight", "toy_learning_rate",
    "toy_grad_clip_norm", "toy_batch_size", "toy_steps"};

std::vector<std::string> plus(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<CommandSpec> commands() {
  return {
      {"curate", "select a duration-budgeted subset of an LJSpeech-layout corpus",
       {"corpus_dir", "mode", "budget_s", "seed", "jobs", "out_dir"}, cmd_curate},
      {"augment", "build the clean + noise-augmented dataset of a subset",
       {"subset", "noise_specs", "psd_file", "sample_rate_hz", "seed", "jobs", "verify", "tolerance_db", "out_dir"},
       cmd_augment},
      {"verify-aug", "re-measure the SNR of every noisy file of an augmented dataset",
       {"dataset_dir", "tolerance_db", "jobs"}, cmd_verify_aug},
      {"p56", "active speech level of a WAV file", {"input"}, cmd_p56},
      {"mix", "add noise to a WAV file at an active-speech SNR",
       {"input", "output", "noise", "psd_file", "snr_db", "seed"}, cmd_mix},
      {"mel", "log-mel spectrogram of a WAV file (MELB output)",
       {"input", "output", "n_fft", "hop_length", "win_length", "n_mels", "fmin_hz", "fmax_hz", "log_floor"},
       cmd_mel},
      {"sharpness", "attention sharpness box statistics per labeled directory of .attn files",
       {"attn_dir", "label", "output"}, cmd_sharpness},
      {"wer", "pooled word error rate of line-paired reference and hypothesis files", {"ref", "hyp"}, cmd_wer},
      {"sus", "per-sentence and pooled WER report", {"ref", "hyp", "tsv", "output"}, cmd_sus},
      {"toy-gen", "generate a synthetic toy corpus",
       {"toy_vocab_size", "toy_feat_dim", "toy_n_utts", "toy_len_min", "toy_len_max", "toy_profiles", "seed",
        "out_dir"},
       cmd_toy_gen},
      {"toy-train", "train the toy attention model on a toy corpus",
       plus(plus({"corpus", "batch_mode"}, kToyArch), {"seed", "out_dir"}), cmd_toy_train},
      {"toy-infer", "decode a token sequence with a trained toy model",
       {"model", "tokens", "aug_id", "forced_frames", "out_dir"}, cmd_toy_infer},
      {"study", "run the batching or augmentation-embedding toy study over several seeds",
       plus(plus({"study", "seeds"}, kToyArch),
            {"toy_len_min", "toy_len_max", "toy_profiles", "study_n_train", "study_n_heldout",
             "study_attention_dumps", "jobs", "out_dir"}),
       cmd_study},
  };
}

int report_error(const std::string& msg, int code) {
  std::cerr << "error: " << msg << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-resource TTS data preparation and evaluation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  const auto specs = commands();
  struct Bound {
    std::string config;
    bool json = false, force = false;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
  };
  std::vector<std::unique_ptr<Bound>> bound;
  std::vector<CLI::App*> subs;
  for (const auto& spec : specs) {
    auto* sub = app.add_subcommand(spec.name, spec.help);
    auto b = std::make_unique<Bound>();
    sub->add_option("--config", b->config, "key = value configuration file");
    sub->add_flag("--json", b->json, "print the summary as JSON");
    sub->add_flag("--force", b->force, "allow a non-empty output directory or existing output file");
    for (const auto& key : spec.keys) {
      const auto* info = cli::find_key(key);
      std::string help = info->help;
      if (*info->default_value) help += std::string(" [default: ") + info->default_value + "]";
      b->options[key] = sub->add_option(cli::flag_of(key), b->values[key], help);
    }
    subs.push_back(sub);
    bound.push_back(std::move(b));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    Context ctx;
    ctx.command = specs[i].name;
    ctx.keys = specs[i].keys;
    ctx.json = bound[i]->json;
    ctx.force = bound[i]->force;
    try {
      if (!bound[i]->config.empty()) ctx.cfg.load_file(bound[i]->config);
      for (const auto& [key, opt] : bound[i]->options) {
        if (opt->count() > 0) ctx.cfg.set(key, bound[i]->values[key]);
      }
      return specs[i].run(ctx);
    } catch (const Error& e) {
      return report_error(e.what(), is_io_error(e.code()) ? 2 : 1);
    } catch (const fs::filesystem_error& e) {
      return report_error(e.what(), 2);
    } catch (const std::exception& e) {
      return report_error(e.what(), 1);
    }
  }
  return 1;
}
