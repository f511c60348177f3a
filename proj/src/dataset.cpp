#include "tsgan/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "tsgan/png_io.hpp"

namespace fs = std::filesystem;

namespace tsgan {

Modality modality_for_camera(int camera) {
  if (camera == 3 || camera == 6) return Modality::IR;
  if (camera == 1 || camera == 2 || camera == 4 || camera == 5) return Modality::RGB;
  throw data_error("unknown camera id " + std::to_string(camera) +
                   " (1,2,4,5 are RGB; 3,6 are IR)");
}

void Dataset::build_index() {
  int n = 0;
  for (const auto& [orig, idx] : identity_table) {
    (void)orig;
    n = std::max(n, idx + 1);
  }
  rgb_index.assign(static_cast<std::size_t>(n), {});
  ir_index.assign(static_cast<std::size_t>(n), {});
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    TSGAN_CHECK(it.identity >= 0 && it.identity < n, Data, "dataset item with unmapped identity");
    auto& lane = it.modality == Modality::RGB ? rgb_index : ir_index;
    lane[static_cast<std::size_t>(it.identity)].push_back(static_cast<int>(i));
  }
  if (split == Split::Train) {
    for (int id = 0; id < n; ++id) {
      TSGAN_CHECK(!rgb_index[static_cast<std::size_t>(id)].empty(), Data,
                  "train identity " + std::to_string(id) + " has no RGB images");
      TSGAN_CHECK(!ir_index[static_cast<std::size_t>(id)].empty(), Data,
                  "train identity " + std::to_string(id) + " has no IR images");
    }
  }
}

Dataset load_dataset(const std::string& manifest_path, Split split) {
  std::ifstream in(manifest_path);
  if (!in) throw io_error("cannot open manifest: " + manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();

  struct Row {
    std::string path;
    int identity;
    int camera;
  };
  std::vector<Row> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim trailing whitespace so CRLF manifests load too
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    Row r;
    std::string id_s, cam_s;
    if (!std::getline(ss, r.path, '\t') || !std::getline(ss, id_s, '\t') ||
        !std::getline(ss, cam_s))
      throw data_error("manifest line " + std::to_string(lineno) +
                       ": expected path<TAB>identity<TAB>camera");
    try {
      r.identity = std::stoi(id_s);
      r.camera = std::stoi(cam_s);
    } catch (const std::exception&) {
      throw data_error("manifest line " + std::to_string(lineno) + ": bad identity or camera");
    }
    rows.push_back(std::move(r));
  }
  TSGAN_CHECK(!rows.empty(), Data, "manifest is empty: " + manifest_path);

  Dataset ds;
  ds.split = split;
  std::set<int> ids;
  for (const auto& r : rows) ids.insert(r.identity);
  int next = 0;
  for (int id : ids) ds.identity_table[id] = next++;

  ds.items.reserve(rows.size());
  for (const auto& r : rows) {
    const Modality m = modality_for_camera(r.camera);
    const fs::path img_path = root / r.path;
    if (!fs::exists(img_path))
      throw data_error("manifest references missing file: " + img_path.string());
    PngImage png = read_png(img_path.string());
    TSGAN_CHECK(png.channels == channels_for(m), Data,
                img_path.string() + ": " + std::to_string(png.channels) +
                    " channels but camera " + std::to_string(r.camera) + " is " +
                    modality_name(m));
    // interleaved rows -> planar CHW
    std::vector<std::uint8_t> chw(png.data.size());
    const int C = png.channels, H = png.height, W = png.width;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < C; ++c)
          chw[static_cast<std::size_t>((c * H + y) * W + x)] =
              png.data[static_cast<std::size_t>((y * W + x) * C + c)];
    PersonImage img = normalize_image(chw, C, H, W, m, ds.identity_table.at(r.identity), r.camera);
    if (ds.height == 0) {
      ds.height = H;
      ds.width = W;
    }
    TSGAN_CHECK(H == ds.height && W == ds.width, Data,
                img_path.string() + ": resolution differs from the rest of the dataset");
    ds.items.push_back(std::move(img));
  }
  ds.build_index();
  return ds;
}

void export_dataset(const Dataset& ds, const std::string& out_dir,
                    const std::string& manifest_name) {
  fs::create_directories(fs::path(out_dir) / "images");
  std::ofstream man(fs::path(out_dir) / manifest_name);
  if (!man) throw io_error("cannot write manifest under " + out_dir);
  man << "# relative_path\tidentity\tcamera\n";
  // contiguous identity -> original id for faithful round-trips
  std::map<int, int> orig;
  for (const auto& [o, c] : ds.identity_table) orig[c] = o;
  std::map<std::pair<int, int>, int> seq;  // (identity, modality) -> running index
  for (const auto& it : ds.items) {
    const int mlane = it.modality == Modality::RGB ? 0 : 1;
    const int j = seq[{it.identity, mlane}]++;
    char name[64];
    std::snprintf(name, sizeof(name), "id%04d_%s_%04d.png", it.identity,
                  it.modality == Modality::RGB ? "rgb" : "ir", j);
    const std::string rel = std::string("images/") + name;

    PngImage png;
    png.channels = it.channels;
    png.height = it.height;
    png.width = it.width;
    std::vector<std::uint8_t> chw = denormalize_image(it);
    png.data.resize(chw.size());
    const int C = it.channels, H = it.height, W = it.width;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < C; ++c)
          png.data[static_cast<std::size_t>((y * W + x) * C + c)] =
              chw[static_cast<std::size_t>((c * H + y) * W + x)];
    write_png((fs::path(out_dir) / rel).string(), png);
    man << rel << "\t" << orig.at(it.identity) << "\t" << it.camera << "\n";
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

struct IdentityLatent {
  double bx[3], by[3], bs[3], ba[3];  // gaussian blobs
  double fx, fy, phase;               // wave
  double mix[3][2];                   // RGB channel mixing of (p, 1-p)
};

IdentityLatent identity_latent(std::uint64_t seed, int id) {
  Rng rng(derive_seed(seed, "identity", static_cast<std::uint64_t>(id)));
  IdentityLatent L;
  for (int b = 0; b < 3; ++b) {
    L.bx[b] = rng.uniform(0.15, 0.85);
    L.by[b] = rng.uniform(0.15, 0.85);
    L.bs[b] = rng.uniform(0.08, 0.22);
    L.ba[b] = rng.uniform(0.5, 1.0);
  }
  L.fx = rng.uniform(1.0, 3.5);
  L.fy = rng.uniform(1.0, 3.5);
  L.phase = rng.uniform(0.0, 6.283185307179586);
  for (int c = 0; c < 3; ++c) {
    L.mix[c][0] = rng.uniform(0.1, 0.9);
    L.mix[c][1] = rng.uniform(0.1, 0.9);
  }
  return L;
}

double base_pattern(const IdentityLatent& L, double u, double v) {
  double blobs = 0.0;
  for (int b = 0; b < 3; ++b) {
    const double du = u - L.bx[b], dv = v - L.by[b];
    blobs += L.ba[b] * std::exp(-(du * du + dv * dv) / (2.0 * L.bs[b] * L.bs[b]));
  }
  const double wave =
      0.5 + 0.5 * std::sin(6.283185307179586 * (L.fx * u + L.fy * v) + L.phase);
  const double p = 0.55 * std::min(1.0, blobs) + 0.45 * wave;
  return std::min(1.0, std::max(0.0, p));
}

PersonImage render_one(const SyntheticConfig& cfg, const IdentityLatent& L, int id, int img_index,
                       Modality m, int camera) {
  const std::uint64_t mlane = m == Modality::RGB ? 0 : 1;
  Rng jitter(derive_seed(cfg.seed, "jitter",
                         static_cast<std::uint64_t>(id) * 1000003ULL +
                             static_cast<std::uint64_t>(img_index),
                         mlane));
  Rng noise(derive_seed(cfg.seed, "noise",
                        static_cast<std::uint64_t>(id) * 1000003ULL +
                            static_cast<std::uint64_t>(img_index),
                        mlane));
  const double dx = jitter.uniform(-0.04, 0.04);
  const double dy = jitter.uniform(-0.04, 0.04);
  const double bright = jitter.uniform(-0.04, 0.04);

  const int C = channels_for(m), H = cfg.height, W = cfg.width;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(C) * H * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double u = (x + 0.5) / W - dx;
      const double v = (y + 0.5) / H - dy;
      const double p = std::min(1.0, std::max(0.0, base_pattern(L, u, v) + bright));
      for (int c = 0; c < C; ++c) {
        double val = m == Modality::IR ? p : L.mix[c][0] * p + L.mix[c][1] * (1.0 - p);
        val += cfg.noise_level * noise.gaussian();
        val = std::min(1.0, std::max(0.0, val));
        raw[static_cast<std::size_t>((c * H + y) * W + x)] =
            static_cast<std::uint8_t>(std::lround(val * 255.0));
      }
    }
  }
  return normalize_image(raw, C, H, W, m, id, camera);
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg, int first_image_index,
                           int images_override) {
  cfg.validate();
  const int per = images_override > 0 ? images_override : cfg.images_per_identity_per_modality;
  static const int kRgbCams[4] = {1, 2, 4, 5};
  static const int kIrCams[2] = {3, 6};

  Dataset ds;
  ds.split = Split::Train;
  ds.height = cfg.height;
  ds.width = cfg.width;
  ds.items.reserve(static_cast<std::size_t>(cfg.n_identities) * per * 2);
  for (int id = 0; id < cfg.n_identities; ++id) {
    ds.identity_table[id] = id;
    const IdentityLatent L = identity_latent(cfg.seed, id);
    for (int j = 0; j < per; ++j) {
      const int idx = first_image_index + j;
      ds.items.push_back(render_one(cfg, L, id, idx, Modality::RGB, kRgbCams[idx % 4]));
      ds.items.push_back(render_one(cfg, L, id, idx, Modality::IR, kIrCams[idx % 2]));
    }
  }
  ds.build_index();
  return ds;
}

Dataset modality_subset(const Dataset& ds, Modality modality) {
  Dataset out;
  out.split = ds.split;
  out.height = ds.height;
  out.width = ds.width;
  out.identity_table = ds.identity_table;
  for (const auto& it : ds.items)
    if (it.modality == modality) out.items.push_back(it);
  TSGAN_CHECK(!out.items.empty(), Data, "modality_subset: no items of the requested modality");
  int n = 0;
  for (const auto& [orig, idx] : out.identity_table) {
    (void)orig;
    n = std::max(n, idx + 1);
  }
  out.rgb_index.assign(static_cast<std::size_t>(n), {});
  out.ir_index.assign(static_cast<std::size_t>(n), {});
  for (std::size_t i = 0; i < out.items.size(); ++i) {
    const auto& it = out.items[i];
    auto& lane = it.modality == Modality::RGB ? out.rgb_index : out.ir_index;
    lane[static_cast<std::size_t>(it.identity)].push_back(static_cast<int>(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

namespace {

// p picks from a pool, without replacement when the pool is large enough.
std::vector<int> pick_p(const std::vector<int>& pool, int p, Rng& rng) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(p));
  if (static_cast<int>(pool.size()) >= p) {
    for (auto j : rng.sample_without_replacement(pool.size(), static_cast<std::size_t>(p)))
      out.push_back(pool[j]);
  } else {
    for (int i = 0; i < p; ++i)
      out.push_back(pool[static_cast<std::size_t>(rng.uniform_int(pool.size()))]);
  }
  return out;
}

void copy_pixels(Array& dst, Eigen::Index slot, const PersonImage& img) {
  dst.segment(slot * img.pixels.size(), img.pixels.size()) = img.pixels;
}

}  // namespace

ImageBatch pk_sample(const Dataset& ds, int p, int k, Rng& rng) {
  TSGAN_CHECK(ds.split == Split::Train, Data, "pk_sample: dataset is not a Train split");
  TSGAN_CHECK(p > 0 && k > 0, Data, "pk_sample: P and K must be positive");
  TSGAN_CHECK(k <= ds.n_identities(), Data,
              "pk_sample: K=" + std::to_string(k) + " exceeds available identities (" +
                  std::to_string(ds.n_identities()) + ")");

  ImageBatch b;
  b.p = p;
  b.k = k;
  b.height = ds.height;
  b.width = ds.width;
  const Eigen::Index pix_rgb = static_cast<Eigen::Index>(3) * ds.height * ds.width;
  const Eigen::Index pix_ir = static_cast<Eigen::Index>(ds.height) * ds.width;
  b.rgb = Array(b.pairs() * pix_rgb);
  b.ir = Array(b.pairs() * pix_ir);
  b.identities.resize(static_cast<std::size_t>(b.pairs()));

  auto ids = rng.sample_without_replacement(static_cast<std::size_t>(ds.n_identities()),
                                            static_cast<std::size_t>(k));
  for (int ki = 0; ki < k; ++ki) {
    const int identity = static_cast<int>(ids[static_cast<std::size_t>(ki)]);
    auto rgb_pick = pick_p(ds.rgb_index[static_cast<std::size_t>(identity)], p, rng);
    auto ir_pick = pick_p(ds.ir_index[static_cast<std::size_t>(identity)], p, rng);
    for (int pi = 0; pi < p; ++pi) {
      const Eigen::Index slot = static_cast<Eigen::Index>(ki) * p + pi;
      copy_pixels(b.rgb, slot, ds.items[static_cast<std::size_t>(rgb_pick[static_cast<std::size_t>(pi)])]);
      copy_pixels(b.ir, slot, ds.items[static_cast<std::size_t>(ir_pick[static_cast<std::size_t>(pi)])]);
      b.identities[static_cast<std::size_t>(slot)] = identity;
    }
  }
  return b;
}

ModalityBatch pk_sample_single(const Dataset& ds, Modality modality, int p, int k, Rng& rng) {
  TSGAN_CHECK(ds.split == Split::Train, Data, "pk_sample_single: dataset is not a Train split");
  TSGAN_CHECK(p > 0 && k > 0, Data, "pk_sample_single: P and K must be positive");
  TSGAN_CHECK(k <= ds.n_identities(), Data, "pk_sample_single: K exceeds available identities");

  ModalityBatch b;
  b.channels = channels_for(modality);
  b.height = ds.height;
  b.width = ds.width;
  const Eigen::Index pix = static_cast<Eigen::Index>(b.channels) * ds.height * ds.width;
  b.images = Array(static_cast<Eigen::Index>(p) * k * pix);
  b.identities.resize(static_cast<std::size_t>(p) * static_cast<std::size_t>(k));

  const auto& lane = modality == Modality::RGB ? ds.rgb_index : ds.ir_index;
  auto ids = rng.sample_without_replacement(static_cast<std::size_t>(ds.n_identities()),
                                            static_cast<std::size_t>(k));
  for (int ki = 0; ki < k; ++ki) {
    const int identity = static_cast<int>(ids[static_cast<std::size_t>(ki)]);
    auto pick = pick_p(lane[static_cast<std::size_t>(identity)], p, rng);
    for (int pi = 0; pi < p; ++pi) {
      const Eigen::Index slot = static_cast<Eigen::Index>(ki) * p + pi;
      copy_pixels(b.images, slot, ds.items[static_cast<std::size_t>(pick[static_cast<std::size_t>(pi)])]);
      b.identities[static_cast<std::size_t>(slot)] = identity;
    }
  }
  return b;
}

ProtocolSplit build_protocol_split(const Dataset& ds, SearchMode mode, ShotMode shot, Rng& rng) {
  std::set<int> gal_cams = mode == SearchMode::AllSearch ? std::set<int>{1, 2, 4, 5}
                                                         : std::set<int>{1, 2};
  ProtocolSplit out;
  std::map<std::pair<int, int>, std::vector<int>> groups;  // (identity, camera) -> items
  std::set<int> query_ids, gallery_ids;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const auto& it = ds.items[i];
    if (it.modality == Modality::IR) {
      out.query.push_back(static_cast<int>(i));
      query_ids.insert(it.identity);
    } else if (gal_cams.count(it.camera)) {
      groups[{it.identity, it.camera}].push_back(static_cast<int>(i));
      gallery_ids.insert(it.identity);
    }
  }
  const int want = shot == ShotMode::Single ? 1 : 10;
  for (const auto& [key, pool] : groups) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(want), pool.size());
    for (auto j : rng.sample_without_replacement(pool.size(), n))
      out.gallery.push_back(pool[j]);
  }
  for (int id : query_ids)
    if (!gallery_ids.count(id))
      std::cerr << "[protocol] warning: identity " << id
                << " has no gallery image under this mode; its queries cannot match\n";
  return out;
}

}  // namespace tsgan
