#pragma once

#include <map>
#include <string>
#include <vector>

#include "tsgan/config.hpp"
#include "tsgan/image.hpp"

namespace tsgan {

enum class Split { Train, Query, Gallery };

// Camera layout of the real dataset: {3, 6} are IR, {1, 2, 4, 5} are RGB.
Modality modality_for_camera(int camera);

// In-memory dataset: pixel payloads plus per-identity per-modality indices.
// Immutable after construction; safe to share across readers.
struct Dataset {
  std::vector<PersonImage> items;
  std::map<int, int> identity_table;  // original id -> contiguous index
  Split split = Split::Train;
  int height = 0, width = 0;

  std::vector<std::vector<int>> rgb_index;  // per contiguous identity
  std::vector<std::vector<int>> ir_index;

  int n_identities() const { return static_cast<int>(rgb_index.size()); }

  // Rebuilds the identity indices from `items`; for Train splits also checks
  // that every identity has at least one image in each modality.
  void build_index();
};

// Loads `relative_path<TAB>identity<TAB>camera` manifest lines (# comments);
// image paths resolve against the manifest's directory. Identities are
// remapped to contiguous indices in sorted original order.
Dataset load_dataset(const std::string& manifest_path, Split split);

// Deterministic paired-modality synthetic dataset: each identity gets a
// latent appearance (gaussian blobs + a wave + an identity color mixing),
// rendered to IR (the pattern itself) and RGB (per-identity color mix) with
// small per-image jitter and additive noise. Identical seeds give
// bit-identical pixels; noise draws use a separate stream so the clean
// content is invariant across noise levels. `first_image_index` offsets the
// per-image streams, yielding held-out images of the same identities.
Dataset generate_synthetic(const SyntheticConfig& cfg, int first_image_index = 0,
                           int images_override = 0);

// Writes manifest + PNGs mirroring the loader's expected layout.
void export_dataset(const Dataset& ds, const std::string& out_dir,
                    const std::string& manifest_name = "manifest.tsv");

// Single-modality view: same identity table (labels stay aligned with the
// parent), items filtered to one modality. Unlike build_index on a Train
// split, identities missing from the other modality are fine here.
Dataset modality_subset(const Dataset& ds, Modality modality);

// P RGB-IR image pairs for each of K identities; 2*P*K images total.
ImageBatch pk_sample(const Dataset& ds, int p, int k, Rng& rng);

// Single-modality sibling used for teacher pretraining.
struct ModalityBatch {
  Array images;  // [P*K, C, h, w] flat
  std::vector<int> identities;
  int channels = 0, height = 0, width = 0;
  Eigen::Index count() const { return static_cast<Eigen::Index>(identities.size()); }
};
ModalityBatch pk_sample_single(const Dataset& ds, Modality modality, int p, int k, Rng& rng);

// Query/gallery split per the standard protocol: IR cameras {3,6} probe;
// gallery cameras {1,2,4,5} (all-search) or {1,2} (indoor-search) with 1
// (single-shot) or up to 10 (multi-shot) images per identity per camera.
struct ProtocolSplit {
  std::vector<int> query;    // indices into ds.items
  std::vector<int> gallery;
};
ProtocolSplit build_protocol_split(const Dataset& ds, SearchMode mode, ShotMode shot, Rng& rng);

}  // namespace tsgan
