#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "tsgan/common.hpp"
#include "tsgan/config.hpp"
#include "tsgan/image.hpp"

using namespace tsgan;

TEST_CASE("error categories propagate") {
  try {
    throw config_error("bad");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::Config);
    CHECK(std::string(e.what()) == "bad");
  }
  CHECK_THROWS_AS(TSGAN_CHECK(false, Data, "x"), Error);
}

TEST_CASE("rng streams are deterministic and seed-separated") {
  Rng a(123), b(123), c(124);
  for (int i = 0; i < 16; ++i) CHECK(a.bits() == b.bits());
  bool differs = false;
  Rng a2(123);
  for (int i = 0; i < 16; ++i) differs = differs || (a2.bits() != c.bits());
  CHECK(differs);
}

TEST_CASE("rng uniform range and gaussian moments") {
  Rng rng(7);
  double lo = 1, hi = 0;
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.05);
  CHECK(hi > 0.95);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double g = rng.gaussian();
    sum += g;
    sq += g * g;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("uniform_int covers the range uniformly enough") {
  Rng rng(11);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) ++counts[rng.uniform_int(7)];
  for (int c : counts) CHECK(std::abs(c - 1000) < 150);
  CHECK_THROWS_AS(rng.uniform_int(0), Error);
}

TEST_CASE("shuffle and sampling are permutations") {
  Rng rng(3);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  auto orig = v;
  rng.shuffle(v);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == orig);

  auto s = rng.sample_without_replacement(10, 4);
  CHECK(s.size() == 4);
  std::sort(s.begin(), s.end());
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  for (auto i : s) CHECK(i < 10);
  CHECK_THROWS_AS(rng.sample_without_replacement(3, 4), Error);
}

TEST_CASE("derive_seed separates domains") {
  CHECK(derive_seed(1, "epoch", 0) != derive_seed(1, "epoch", 1));
  CHECK(derive_seed(1, "epoch", 0) != derive_seed(1, "noise", 0));
  CHECK(derive_seed(1, "epoch", 0) == derive_seed(1, "epoch", 0));
  CHECK(derive_seed(1, "epoch", 0) != derive_seed(2, "epoch", 0));
}

TEST_CASE("fnv1a matches the reference vector") {
  // standard FNV-1a 64-bit test vector
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("normalize endpoints") {
  // all-zero raw RGB -> -1 everywhere
  std::vector<std::uint8_t> raw(3 * 2 * 2, 0);
  PersonImage img = normalize_image(raw, 3, 2, 2, Modality::RGB, 5, 1);
  CHECK(img.pixels.minCoeff() == -1.0);
  CHECK(img.pixels.maxCoeff() == -1.0);
  CHECK(img.channels == 3);
  CHECK(img.identity == 5);
  CHECK(img.camera == 1);

  // all-255 raw IR -> +1 everywhere
  std::vector<std::uint8_t> raw2(2 * 2, 255);
  PersonImage ir = normalize_image(raw2, 1, 2, 2, Modality::IR, 0, 3);
  CHECK(ir.pixels.minCoeff() == 1.0);
  CHECK(ir.channels == 1);

  // midpoint
  CHECK(normalize_pixel(127.5) == doctest::Approx(0.0));
}

TEST_CASE("normalize rejects modality mismatch") {
  std::vector<std::uint8_t> raw(2 * 2, 0);  // single channel worth of data
  CHECK_THROWS_AS(normalize_image(raw, 1, 2, 2, Modality::RGB, 0, 1), Error);
}

TEST_CASE("denormalize inverts normalize up to quantization") {
  std::vector<std::uint8_t> raw(256);
  for (int v = 0; v <= 255; ++v) raw[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(v);
  PersonImage img = normalize_image(raw, 1, 16, 16, Modality::IR);
  CHECK(img.pixels.minCoeff() >= -1.0);
  CHECK(img.pixels.maxCoeff() <= 1.0);
  std::vector<std::uint8_t> back = denormalize_image(img);
  CHECK(back == raw);
}

TEST_CASE("config file parsing") {
  auto cf = ConfigFile::parse_string(
      "# comment\n"
      "[train]\n"
      "p = 2\n"
      "k = 3\n"
      "base_lr = 0.001  # inline comment\n"
      "gan_mode = ordinary\n"
      "[loss]\n"
      "lambda_id = 2.5\n"
      "[model]\n"
      "widths = 8,16,24,32\n"
      "embedding_dim = 32\n");
  CHECK(cf.get_int("train.p", 0) == 2);
  CHECK(cf.get_double("train.base_lr", 0) == doctest::Approx(0.001));
  CHECK(cf.get_string("train.gan_mode", "") == "ordinary");
  CHECK(cf.get_int("missing.key", 42) == 42);

  TrainConfig tc = cf.train_config();
  CHECK(tc.p == 2);
  CHECK(tc.k == 3);
  CHECK(tc.batch_size() == 12);
  CHECK(tc.gan_mode == GanMode::Ordinary);
  CHECK(tc.lambda_id == doctest::Approx(2.5));
  CHECK(tc.widths == std::vector<int>{8, 16, 24, 32});
  CHECK(tc.embedding_dim == 32);
}

TEST_CASE("config validation rejects bad values") {
  auto bad = [](const std::string& text) {
    auto cf = ConfigFile::parse_string(text);
    return cf.train_config();
  };
  CHECK_THROWS_AS(bad("[train]\nmargin = 0\n"), Error);
  CHECK_THROWS_AS(bad("[train]\nlabel_smooth = 1.0\n"), Error);
  CHECK_THROWS_AS(bad("[train]\np = 0\n"), Error);
  CHECK_THROWS_AS(bad("[model]\nwidths = 8,16\n"), Error);
  CHECK_THROWS_AS(bad("[model]\nembedding_dim = 7\n"), Error);
  CHECK_THROWS_AS(bad("[data]\ninput_h = 30\n"), Error);
  CHECK_THROWS_AS(bad("[loss]\nlambda_id = -1\n"), Error);
  CHECK_THROWS_AS(bad("[train]\ngan_mode = bogus\n"), Error);
  CHECK_THROWS_AS(ConfigFile::parse_string("no equals sign here\n"), Error);
  CHECK_THROWS_AS(ConfigFile::parse_string("[unterminated\n"), Error);
}

TEST_CASE("config round-trip: resolved text reparses to the same config") {
  TrainConfig tc;
  tc.p = 2;
  tc.k = 2;
  tc.seed = 99;
  tc.gan_mode = GanMode::Ordinary;
  SyntheticConfig sc;
  EvalProtocol ep;
  ep.rerank = true;
  std::string text = resolved_config_text(tc, sc, ep);
  auto cf = ConfigFile::parse_string(text);
  TrainConfig tc2 = cf.train_config();
  CHECK(tc2.p == 2);
  CHECK(tc2.seed == 99);
  CHECK(tc2.gan_mode == GanMode::Ordinary);
  EvalProtocol ep2 = cf.eval_protocol();
  CHECK(ep2.rerank == true);
  CHECK(ep2.exclusion == ep.exclusion);
  // the hash is a pure function of the text
  CHECK(config_hash_hex(text) == config_hash_hex(text));
  CHECK(config_hash_hex(text).size() == 16);
  tc.seed = 100;
  CHECK(config_hash_hex(resolved_config_text(tc, sc, ep)) != config_hash_hex(text));
}
