#include "doctest.h"

#include "lrtts/audio.hpp"
#include "lrtts/augment.hpp"
#include "lrtts/binary_io.hpp"
#include "lrtts/error.hpp"
#include "lrtts/rng.hpp"
#include "test_util.hpp"

#include <json.hpp>

#include <map>
#include <set>

using namespace lrtts;
using namespace lrtts::augment;
using lrtts::testing::TempDir;
namespace fs = std::filesystem;

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

std::vector<curation::CorpusEntry> make_corpus(const fs::path& dir, int n, double gain = 1.0) {
  fs::create_directories(dir);
  std::vector<curation::CorpusEntry> out;
  for (int i = 0; i < n; ++i) {
    auto clip = lrtts::testing::speech_like(1.5 + 0.5 * i, 100 + i);
    clip.samples *= gain;
    curation::CorpusEntry e;
    e.id = "UT" + std::to_string(i);
    e.audio_path = dir / (e.id + ".wav");
    e.text = "utterance " + std::to_string(i);
    audio::write_wav(clip, e.audio_path);
    e.duration_s = clip.duration_s();
    out.push_back(e);
  }
  return out;
}

std::vector<std::uint8_t> bytes(const fs::path& p) { return binary::read_file(p); }

}  // namespace

TEST_CASE("ids and seeds") {
  CHECK(augmented_id("LJ001-0001", 2) == "LJ001-0001__aug2");
  CHECK(derive_seed(7, "LJ001-0001", 2) == 0x92a01d406fa44d66ULL);
  CHECK(derive_seed(7, "LJ001-0001", 2) != derive_seed(7, "LJ001-0001", 3));
  CHECK(derive_seed(7, "LJ001-0001", 2) != derive_seed(8, "LJ001-0001", 2));
}

TEST_CASE("spec validation happens before any output") {
  TempDir tmp("aug_cfg");
  auto corpus = make_corpus(tmp / "src", 1);
  auto specs = noisegen::default_noise_specs();
  specs[2].aug_id = specs[0].aug_id;
  CHECK(code_of([&] { build_augmented_dataset(corpus, specs, tmp / "out", 1); }) ==
        ErrorCode::ConfigError);
  CHECK_FALSE(fs::exists(tmp / "out"));

  specs = noisegen::default_noise_specs();
  specs[0].aug_id = 0;
  CHECK(code_of([&] { build_augmented_dataset(corpus, specs, tmp / "out", 1); }) ==
        ErrorCode::ConfigError);
  CHECK_FALSE(fs::exists(tmp / "out"));
}

TEST_CASE("build writes clean plus one copy per spec") {
  TempDir tmp("aug_build");
  const auto corpus = make_corpus(tmp / "src", 3);
  const auto specs = noisegen::default_noise_specs();
  const auto result = build_augmented_dataset(corpus, specs, tmp / "out", 1234);
  REQUIRE(result.failures.empty());
  REQUIRE(result.entries.size() == corpus.size() * (specs.size() + 1));

  std::set<std::string> ids;
  for (std::size_t i = 0; i < result.entries.size(); ++i) {
    const auto& e = result.entries[i];
    ids.insert(e.id);
    CHECK(fs::exists(tmp / "out" / e.audio_path));
    const auto& src = corpus[i / (specs.size() + 1)];
    CHECK(e.source_id == src.id);
    CHECK(e.text == src.text);
    CHECK(e.id == augmented_id(src.id, e.aug_id));
    if (e.aug_id == 0) {
      CHECK(e.noise_name == "clean");
      CHECK_FALSE(e.snr_db.has_value());
      const auto a = audio::read_wav(src.audio_path);
      const auto b = audio::read_wav(tmp / "out" / e.audio_path);
      CHECK(a.samples == b.samples);
      CHECK(bytes(src.audio_path) == bytes(tmp / "out" / e.audio_path));
    } else {
      REQUIRE(e.snr_db.has_value());
      CHECK(e.seed == derive_seed(1234, src.id, e.aug_id));
    }
  }
  CHECK(ids.size() == result.entries.size());

  const auto report = verify_augmented_dataset(result.entries, tmp / "out");
  CHECK(report.n_checked == corpus.size() * specs.size());
  CHECK(report.n_clean_skipped == corpus.size());
  CHECK(report.missing.empty());
  CHECK(report.n_exceeding == 0);
  CHECK(report.max_abs_deviation_db < 0.5);
}

TEST_CASE("the recovered noise is the scaled mixing noise") {
  TempDir tmp("aug_noise");
  const auto corpus = make_corpus(tmp / "src", 1);
  const auto specs = noisegen::default_noise_specs();
  const auto result = build_augmented_dataset(corpus, specs, tmp / "out", 9);
  const auto clean = audio::read_wav(corpus[0].audio_path);
  for (const auto& e : result.entries) {
    if (e.aug_id == 0) continue;
    const auto spec = *std::find_if(specs.begin(), specs.end(),
                                    [&](const auto& s) { return s.aug_id == e.aug_id; });
    const auto noisy = audio::read_wav(tmp / "out" / e.audio_path);
    const Eigen::VectorXd recovered = noisy.samples / e.mixture_gain - clean.samples;
    const Eigen::VectorXd reference =
        noisegen::mixing_noise(clean.size(), spec.spectrum, clean.sample_rate_hz, e.seed);
    const double corr = recovered.dot(reference) / (recovered.norm() * reference.norm());
    CHECK(corr > 0.99);
  }
}

TEST_CASE("loud sources trigger the overflow rescue without moving the SNR") {
  TempDir tmp("aug_loud");
  const auto corpus = make_corpus(tmp / "src", 2, 18.0);
  const std::vector<noisegen::NoiseSpec> specs = {{"white", noisegen::SpectrumSpec::white(), -10.0, 1}};
  const auto result = build_augmented_dataset(corpus, specs, tmp / "out", 5);
  REQUIRE(result.failures.empty());
  bool rescued = false;
  for (const auto& e : result.entries) rescued |= e.mixture_gain < 1.0;
  CHECK(rescued);
  const auto report = verify_augmented_dataset(result.entries, tmp / "out");
  CHECK(report.n_exceeding == 0);
}

TEST_CASE("serial and parallel builds are byte-identical") {
  TempDir tmp("aug_par");
  const auto corpus = make_corpus(tmp / "src", 4);
  const auto specs = noisegen::default_noise_specs();
  BuildOptions serial, parallel;
  parallel.jobs = 4;
  const auto a = build_augmented_dataset(corpus, specs, tmp / "a", 77, serial);
  const auto b = build_augmented_dataset(corpus, specs, tmp / "b", 77, parallel);
  write_manifest(a.entries, tmp / "a" / "manifest.jsonl");
  write_manifest(b.entries, tmp / "b" / "manifest.jsonl");
  write_summary(specs, 77, a, nullptr, tmp / "a" / "summary.json");
  write_summary(specs, 77, b, nullptr, tmp / "b" / "summary.json");
  CHECK(bytes(tmp / "a" / "manifest.jsonl") == bytes(tmp / "b" / "manifest.jsonl"));
  CHECK(bytes(tmp / "a" / "summary.json") == bytes(tmp / "b" / "summary.json"));
  for (const auto& e : a.entries) {
    CHECK(bytes(tmp / "a" / e.audio_path) == bytes(tmp / "b" / e.audio_path));
  }

  const auto c = build_augmented_dataset(corpus, specs, tmp / "c", 78, serial);
  CHECK(bytes(tmp / "a" / a.entries[1].audio_path) != bytes(tmp / "c" / c.entries[1].audio_path));
}

TEST_CASE("per-utterance failures are collected") {
  TempDir tmp("aug_fail");
  auto corpus = make_corpus(tmp / "src", 3);
  corpus[1].audio_path = tmp / "src" / "missing.wav";
  const auto specs = noisegen::default_noise_specs();
  const auto result = build_augmented_dataset(corpus, specs, tmp / "out", 1);
  REQUIRE(result.failures.size() == 1);
  CHECK(result.failures[0].rfind("UT1:", 0) == 0);
  CHECK(result.entries.size() == 2 * (specs.size() + 1));

  BuildOptions opts;
  opts.expected_sample_rate_hz = 16000;
  const auto mismatched = build_augmented_dataset(make_corpus(tmp / "src2", 2), specs, tmp / "out2", 1, opts);
  CHECK(mismatched.failures.size() == 2);
  CHECK(mismatched.entries.empty());
}

TEST_CASE("verification reports missing files per entry") {
  TempDir tmp("aug_missing");
  const auto corpus = make_corpus(tmp / "src", 2);
  const auto specs = noisegen::default_noise_specs();
  const auto result = build_augmented_dataset(corpus, specs, tmp / "out", 1);
  fs::remove(tmp / "out" / result.entries[2].audio_path);
  const auto report = verify_augmented_dataset(result.entries, tmp / "out");
  REQUIRE(report.missing.size() == 1);
  CHECK(report.missing[0].find(result.entries[2].id) != std::string::npos);
  CHECK(report.missing[0].find("MissingFile") != std::string::npos);
  CHECK(report.n_checked == 2 * specs.size() - 1);
}

TEST_CASE("manifest round trip") {
  TempDir tmp("aug_manifest");
  const auto corpus = make_corpus(tmp / "src", 2);
  const auto specs = noisegen::default_noise_specs();
  const auto result = build_augmented_dataset(corpus, specs, tmp / "out", 3);
  write_manifest(result.entries, tmp / "m.jsonl");
  const auto back = read_manifest(tmp / "m.jsonl");
  REQUIRE(back.size() == result.entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == result.entries[i].id);
    CHECK(back[i].audio_path == result.entries[i].audio_path);
    CHECK(back[i].snr_db == result.entries[i].snr_db);
    CHECK(back[i].mixture_gain == result.entries[i].mixture_gain);
    CHECK(back[i].seed == result.entries[i].seed);
    CHECK(back[i].noise_name == result.entries[i].noise_name);
  }
  binary::write_text(tmp / "bad.jsonl", "{\"id\": 1}\n");
  CHECK(code_of([&] { read_manifest(tmp / "bad.jsonl"); }) == ErrorCode::MalformedRow);

  write_summary(specs, 3, result, nullptr, tmp / "s.json");
  const auto summary = nlohmann::json::parse(binary::read_text(tmp / "s.json"));
  CHECK(summary["n_entries"] == result.entries.size());
  CHECK(summary["per_aug_id"]["0"] == corpus.size());
  CHECK(summary["specs"].size() == specs.size());
}

TEST_CASE("an edited target snr is flagged") {
  TempDir tmp("aug_fault");
  const auto corpus = make_corpus(tmp / "src", 2);
  const auto specs = noisegen::default_noise_specs();
  auto entries = build_augmented_dataset(corpus, specs, tmp / "out", 4).entries;
  *entries[5].snr_db += 3.0;
  const auto report = verify_augmented_dataset(entries, tmp / "out");
  REQUIRE(report.n_exceeding == 1);
  CHECK(report.flagged_ids[0] == entries[5].id);
  CHECK(report.max_abs_deviation_db == doctest::Approx(3.0).epsilon(0.1));
}

TEST_CASE("no specs gives clean copies only") {
  TempDir tmp("aug_empty");
  const auto corpus = make_corpus(tmp / "src", 3);
  const auto result = build_augmented_dataset(corpus, {}, tmp / "out", 4);
  REQUIRE(result.entries.size() == 3);
  for (const auto& e : result.entries) CHECK(e.aug_id == 0);
}

TEST_CASE("every aug id covers the same sources") {
  TempDir tmp("aug_partition");
  const auto corpus = make_corpus(tmp / "src", 4);
  const auto specs = noisegen::default_noise_specs();
  const auto result = build_augmented_dataset(corpus, specs, tmp / "out", 4);
  std::map<int, std::multiset<std::string>> by_id;
  for (const auto& e : result.entries) by_id[e.aug_id].insert(e.source_id);
  REQUIRE(by_id.size() == 4);
  for (const auto& [id, sources] : by_id) CHECK(sources == by_id[0]);
}
