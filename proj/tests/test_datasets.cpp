#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "tsgan/dataset.hpp"
#include "tsgan/png_io.hpp"

using namespace tsgan;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path d = fs::temp_directory_path() / ("tsgan_test_" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

SyntheticConfig tiny_cfg() {
  SyntheticConfig cfg;
  cfg.n_identities = 8;
  cfg.images_per_identity_per_modality = 6;
  cfg.height = 32;
  cfg.width = 16;
  cfg.noise_level = 0.02;
  cfg.seed = 7;
  return cfg;
}

// In-memory dataset builder for protocol fixtures.
Dataset fixture_dataset(const std::vector<std::tuple<int, int>>& id_cam, int h = 4, int w = 4) {
  Dataset ds;
  ds.split = Split::Query;  // skip the train-modality validation
  ds.height = h;
  ds.width = w;
  std::set<int> ids;
  for (auto& [id, cam] : id_cam) ids.insert(id);
  int next = 0;
  for (int id : ids) ds.identity_table[id] = next++;
  int n = 0;
  for (auto& [id, cam] : id_cam) {
    Modality m = modality_for_camera(cam);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(channels_for(m)) * h * w,
                                  static_cast<std::uint8_t>(n * 7 % 256));
    ds.items.push_back(normalize_image(raw, channels_for(m), h, w, m, ds.identity_table[id], cam));
    ++n;
  }
  ds.build_index();
  return ds;
}

}  // namespace

TEST_CASE("camera ids determine modality") {
  CHECK(modality_for_camera(1) == Modality::RGB);
  CHECK(modality_for_camera(2) == Modality::RGB);
  CHECK(modality_for_camera(4) == Modality::RGB);
  CHECK(modality_for_camera(5) == Modality::RGB);
  CHECK(modality_for_camera(3) == Modality::IR);
  CHECK(modality_for_camera(6) == Modality::IR);
  CHECK_THROWS_AS(modality_for_camera(7), Error);
}

TEST_CASE("png round-trip preserves bytes") {
  auto dir = temp_dir("png");
  PngImage img;
  img.channels = 3;
  img.height = 5;
  img.width = 4;
  img.data.resize(60);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<std::uint8_t>((i * 37) % 256);
  write_png((dir / "x.png").string(), img);
  PngImage back = read_png((dir / "x.png").string());
  CHECK(back.channels == 3);
  CHECK(back.height == 5);
  CHECK(back.width == 4);
  CHECK(back.data == img.data);

  PngImage gray;
  gray.channels = 1;
  gray.height = 3;
  gray.width = 7;
  gray.data.resize(21);
  for (std::size_t i = 0; i < gray.data.size(); ++i)
    gray.data[i] = static_cast<std::uint8_t>(255 - i);
  write_png((dir / "g.png").string(), gray);
  PngImage gback = read_png((dir / "g.png").string());
  CHECK(gback.channels == 1);
  CHECK(gback.data == gray.data);

  CHECK_THROWS_AS(read_png((dir / "missing.png").string()), Error);
}

TEST_CASE("synthetic generation: counting and determinism") {
  auto cfg = tiny_cfg();
  Dataset a = generate_synthetic(cfg);
  CHECK(a.items.size() == 8 * 6 * 2);  // ids x images x modalities
  CHECK(a.n_identities() == 8);
  for (int id = 0; id < 8; ++id) {
    CHECK(a.rgb_index[static_cast<std::size_t>(id)].size() == 6);
    CHECK(a.ir_index[static_cast<std::size_t>(id)].size() == 6);
  }

  Dataset b = generate_synthetic(cfg);
  REQUIRE(b.items.size() == a.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].identity == b.items[i].identity);
    CHECK(a.items[i].camera == b.items[i].camera);
    CHECK((a.items[i].pixels - b.items[i].pixels).abs().maxCoeff() == 0.0);
  }

  // cameras follow the real layout
  for (const auto& it : a.items) {
    if (it.modality == Modality::IR) CHECK((it.camera == 3 || it.camera == 6));
    else CHECK((it.camera == 1 || it.camera == 2 || it.camera == 4 || it.camera == 5));
  }
}

TEST_CASE("synthetic rendering depends only on the identity latent") {
  // same seed, different dataset sizes: identity 0's images must agree
  auto small = tiny_cfg();
  small.noise_level = 0.0;
  auto large = small;
  large.n_identities = 4;
  Dataset a = generate_synthetic(small);
  Dataset b = generate_synthetic(large);
  const auto& ia = a.items[static_cast<std::size_t>(a.ir_index[0][0])];
  const auto& ib = b.items[static_cast<std::size_t>(b.ir_index[0][0])];
  CHECK((ia.pixels - ib.pixels).abs().maxCoeff() == 0.0);
}

TEST_CASE("held-out images are fresh but same identities") {
  auto cfg = tiny_cfg();
  Dataset train = generate_synthetic(cfg);
  Dataset eval = generate_synthetic(cfg, /*first_image_index=*/1000, /*images_override=*/2);
  CHECK(eval.items.size() == 8 * 2 * 2);
  CHECK(eval.n_identities() == 8);
  // a held-out image differs from every training image of the same identity
  const auto& held = eval.items[static_cast<std::size_t>(eval.ir_index[0][0])];
  for (int idx : train.ir_index[0]) {
    CHECK((held.pixels - train.items[static_cast<std::size_t>(idx)].pixels).abs().maxCoeff() >
          0.0);
  }
}

TEST_CASE("export + load round-trip is pixel-exact") {
  auto cfg = tiny_cfg();
  cfg.n_identities = 3;
  cfg.images_per_identity_per_modality = 2;
  Dataset ds = generate_synthetic(cfg);
  auto dir = temp_dir("roundtrip");
  export_dataset(ds, dir.string());
  Dataset back = load_dataset((dir / "manifest.tsv").string(), Split::Train);
  REQUIRE(back.items.size() == ds.items.size());
  // same identity/camera/pixels after a sort-insensitive match by content
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < back.items.size() && !found; ++j) {
      if (back.items[j].identity == ds.items[i].identity &&
          back.items[j].camera == ds.items[i].camera &&
          back.items[j].modality == ds.items[i].modality &&
          (back.items[j].pixels - ds.items[i].pixels).abs().maxCoeff() == 0.0)
        found = true;
    }
    CHECK(found);
  }
}

TEST_CASE("manifest loader: counting, IR tagging, error paths") {
  // 2 identities x 2 cameras x 3 images = 12 items
  std::vector<std::tuple<int, int>> rows;
  for (int id : {10, 20})
    for (int cam : {1, 3})
      for (int j = 0; j < 3; ++j) rows.emplace_back(id, cam);
  Dataset built = fixture_dataset(rows);
  built.split = Split::Train;
  auto dir = temp_dir("manifest");
  export_dataset(built, dir.string());
  Dataset ds = load_dataset((dir / "manifest.tsv").string(), Split::Train);
  CHECK(ds.items.size() == 12);
  CHECK(ds.n_identities() == 2);
  // identities remapped to contiguous indices in sorted original order
  CHECK(ds.identity_table.at(10) == 0);
  CHECK(ds.identity_table.at(20) == 1);
  int ir_count = 0;
  for (const auto& it : ds.items)
    if (it.camera == 3) {
      CHECK(it.modality == Modality::IR);
      ++ir_count;
    }
  CHECK(ir_count == 6);

  // missing image file
  {
    std::ofstream bad(dir / "bad.tsv");
    bad << "images/nonexistent.png\t1\t1\n";
  }
  CHECK_THROWS_AS(load_dataset((dir / "bad.tsv").string(), Split::Train), Error);
  // malformed line
  {
    std::ofstream bad(dir / "bad2.tsv");
    bad << "only_one_field\n";
  }
  CHECK_THROWS_AS(load_dataset((dir / "bad2.tsv").string(), Split::Train), Error);
  // missing manifest
  CHECK_THROWS_AS(load_dataset((dir / "nope.tsv").string(), Split::Train), Error);
  // train identity with no IR images
  {
    std::ofstream bad(dir / "bad3.tsv");
    bad << "images/id0000_rgb_0000.png\t1\t1\n";
  }
  CHECK_THROWS_AS(load_dataset((dir / "bad3.tsv").string(), Split::Train), Error);
}

TEST_CASE("pk_sample structure and determinism") {
  auto cfg = tiny_cfg();
  Dataset ds = generate_synthetic(cfg);

  Rng rng(derive_seed(0, "sampler", 0));
  ImageBatch b = pk_sample(ds, 4, 8, rng);
  CHECK(b.total() == 64);  // 2*P*K with P=4, K=8
  CHECK(b.pairs() == 32);
  CHECK(b.identities.size() == 32);
  std::set<int> distinct(b.identities.begin(), b.identities.end());
  CHECK(distinct.size() == 8);
  for (int ki = 0; ki < 8; ++ki)
    for (int pi = 1; pi < 4; ++pi)
      CHECK(b.identities[static_cast<std::size_t>(ki * 4 + pi)] ==
            b.identities[static_cast<std::size_t>(ki * 4)]);
  CHECK(b.rgb.size() == 32 * 3 * 32 * 16);
  CHECK(b.ir.size() == 32 * 1 * 32 * 16);

  Rng r1(99), r2(99);
  ImageBatch x = pk_sample(ds, 2, 3, r1);
  ImageBatch y = pk_sample(ds, 2, 3, r2);
  CHECK(x.identities == y.identities);
  CHECK((x.rgb - y.rgb).abs().maxCoeff() == 0.0);
  CHECK((x.ir - y.ir).abs().maxCoeff() == 0.0);

  Rng r3(1);
  ImageBatch m = pk_sample(ds, 1, 1, r3);
  CHECK(m.total() == 2);

  Rng r4(1);
  CHECK_THROWS_AS(pk_sample(ds, 2, 9, r4), Error);  // K > identities
}

TEST_CASE("pk_sample avoids within-batch replacement when possible") {
  auto cfg = tiny_cfg();
  cfg.n_identities = 2;
  Dataset ds = generate_synthetic(cfg);
  Rng rng(5);
  ImageBatch b = pk_sample(ds, 6, 2, rng);  // exactly the available count
  // all 6 RGB picks of one identity must be distinct images
  for (int ki = 0; ki < 2; ++ki) {
    std::set<std::string> seen;
    for (int pi = 0; pi < 6; ++pi) {
      const Eigen::Index pix = 3 * 32 * 16;
      Array img = b.rgb.segment((ki * 6 + pi) * pix, pix);
      std::string key(reinterpret_cast<const char*>(img.data()),
                      static_cast<std::size_t>(img.size()) * sizeof(Scalar));
      seen.insert(key);
    }
    CHECK(seen.size() == 6);
  }
}

TEST_CASE("pk_sample_single draws one modality only") {
  auto cfg = tiny_cfg();
  Dataset ds = generate_synthetic(cfg);
  Rng rng(3);
  ModalityBatch b = pk_sample_single(ds, Modality::IR, 2, 4, rng);
  CHECK(b.count() == 8);
  CHECK(b.channels == 1);
  CHECK(b.images.size() == 8 * 32 * 16);
  std::set<int> distinct(b.identities.begin(), b.identities.end());
  CHECK(distinct.size() == 4);
}

TEST_CASE("protocol split: camera sets, shots, disjointness") {
  auto cfg = tiny_cfg();
  Dataset ds = generate_synthetic(cfg);
  // synthetic per identity: RGB image idx 0..5 -> cams 1,2,4,5,1,2 ; IR -> 3,6,...
  Rng rng(17);
  ProtocolSplit all = build_protocol_split(ds, SearchMode::AllSearch, ShotMode::Single, rng);
  CHECK(all.query.size() == 8 * 6);  // every IR image
  CHECK(all.gallery.size() == 8 * 4);  // one per identity per RGB camera
  for (int qi : all.query) CHECK(ds.items[static_cast<std::size_t>(qi)].modality == Modality::IR);
  std::set<int> q(all.query.begin(), all.query.end());
  for (int gi : all.gallery) CHECK(q.count(gi) == 0);

  Rng rng2(17);
  ProtocolSplit indoor = build_protocol_split(ds, SearchMode::IndoorSearch, ShotMode::Single, rng2);
  for (int gi : indoor.gallery) {
    int cam = ds.items[static_cast<std::size_t>(gi)].camera;
    CHECK((cam == 1 || cam == 2));
  }
  CHECK(indoor.gallery.size() == 8 * 2);

  // multi-shot caps at the available count (cam 1 holds 2 images per id here)
  Rng rng3(17);
  ProtocolSplit multi = build_protocol_split(ds, SearchMode::AllSearch, ShotMode::Multi, rng3);
  CHECK(multi.gallery.size() == 8 * 6);  // all RGB images: every camera pool < 10

  // hand fixture: identity with exactly 3 camera-1 images -> multi picks 3
  Dataset fx = fixture_dataset({{1, 1}, {1, 1}, {1, 1}, {1, 3}});
  Rng rng4(1);
  ProtocolSplit ms = build_protocol_split(fx, SearchMode::AllSearch, ShotMode::Multi, rng4);
  CHECK(ms.gallery.size() == 3);
  CHECK(ms.query.size() == 1);

  // determinism under equal seeds
  Rng a(42), b(42);
  auto s1 = build_protocol_split(ds, SearchMode::AllSearch, ShotMode::Single, a);
  auto s2 = build_protocol_split(ds, SearchMode::AllSearch, ShotMode::Single, b);
  CHECK(s1.query == s2.query);
  CHECK(s1.gallery == s2.gallery);
}

TEST_CASE("synthetic data is NN-separable within modality") {
  // leave-one-out nearest neighbor on raw pixels, per modality
  auto cfg = tiny_cfg();
  cfg.noise_level = 0.05;
  Dataset ds = generate_synthetic(cfg);
  for (Modality m : {Modality::RGB, Modality::IR}) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < ds.items.size(); ++i)
      if (ds.items[i].modality == m) idx.push_back(static_cast<int>(i));
    int correct = 0;
    for (int i : idx) {
      double best = 1e300;
      int best_id = -1;
      for (int j : idx) {
        if (j == i) continue;
        double d = (ds.items[static_cast<std::size_t>(i)].pixels -
                    ds.items[static_cast<std::size_t>(j)].pixels)
                       .matrix()
                       .squaredNorm();
        if (d < best) {
          best = d;
          best_id = ds.items[static_cast<std::size_t>(j)].identity;
        }
      }
      if (best_id == ds.items[static_cast<std::size_t>(i)].identity) ++correct;
    }
    double acc = static_cast<double>(correct) / static_cast<double>(idx.size());
    INFO("modality ", modality_name(m), " accuracy ", acc);
    CHECK(acc >= 0.95);
  }
}
