#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tsgan/common.hpp"

namespace tsgan {

enum class GanMode { None, Ordinary, Joint };
enum class TsMode { None, CdOnly, All };

GanMode gan_mode_from(const std::string& s);
TsMode ts_mode_from(const std::string& s);
const char* to_string(GanMode m);
const char* to_string(TsMode m);

// Every training hyperparameter plus the architecture preset and behavior
// switches. Defaults are the full-scale values; the tiny preset only shrinks
// network widths and input resolution.
struct TrainConfig {
  // P x K batching: 2*P*K images per batch.
  int p = 4;
  int k = 8;
  int epochs = 120;
  double base_lr = 0.00035;
  int warmup_epochs = 10;
  std::vector<int> decay_epochs = {40, 70};
  double decay_factor = 0.3;
  double weight_decay = 0.0005;
  double margin = 0.3;          // triplet margin m
  double label_smooth = 0.1;    // epsilon of the soft-label classifier
  double lambda_id = 3.0;
  double lambda_tri = 1.0;
  double lambda_gan = 0.1;
  double omega = 10.0;          // cycle-loss weight
  double alpha_c = 0.006;       // cross-domain TS weight
  double alpha_s = 0.003;       // same-domain TS weight
  int embedding_dim = 128;
  int input_h = 64;
  int input_w = 32;
  std::uint64_t seed = 0;

  // Backbone preset: four residual stages, strides 2/2/2/1; the former
  // encoder is the stem plus the first three stages (total stride 8).
  std::vector<int> widths = {16, 32, 64, 128};
  int blocks_per_stage = 1;
  int gen_base_width = 16;
  int gen_res_blocks = 2;
  int disc_base_width = 16;
  double bn_momentum = 0.1;

  // Ablation and behavior switches.
  GanMode gan_mode = GanMode::Joint;
  TsMode ts_mode = TsMode::All;
  bool include_fake_in_triplet = false;
  bool include_fake_in_id = false;
  bool l2_normalize_features = false;
  double grad_clip = 0.0;  // 0 disables clipping
  bool debug_phase_checks = false;
  int checkpoint_interval = 0;      // epochs between checkpoints; 0 = final only
  int steps_per_epoch_override = 0; // 0 = floor(dataset_pairs / (P*K))

  // Teacher pretraining length; 0 falls back to `epochs` full epochs.
  int teacher_steps = 0;

  void validate() const;
  int batch_size() const { return 2 * p * k; }
};

struct SyntheticConfig {
  int n_identities = 8;
  int images_per_identity_per_modality = 6;
  int height = 32;
  int width = 16;
  double noise_level = 0.02;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class SearchMode { AllSearch, IndoorSearch };
enum class ShotMode { Single, Multi };

SearchMode search_mode_from(const std::string& s);
ShotMode shot_mode_from(const std::string& s);
const char* to_string(SearchMode m);
const char* to_string(ShotMode m);

// Retrieval evaluation settings. The exclusion table removes gallery cameras
// co-located with a probe camera (standard protocol: probe cam 3 excludes
// gallery cam 2).
struct EvalProtocol {
  SearchMode mode = SearchMode::AllSearch;
  ShotMode shot = ShotMode::Single;
  std::map<int, std::set<int>> exclusion = {{3, {2}}};
  bool rerank = false;
  int k1 = 20;
  int k2 = 6;
  double lambda_rr = 0.3;
  int trials = 10;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Declarative `key = value` config file with [section] headers and `#`
// comments. All run settings load from one file; the resolved form is copied
// into every run's output directory.
// ---------------------------------------------------------------------------

class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& dflt) const;
  double get_double(const std::string& key, double dflt) const;
  int get_int(const std::string& key, int dflt) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& dflt) const;

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  TrainConfig train_config() const;
  SyntheticConfig synthetic_config() const;
  EvalProtocol eval_protocol() const;

 private:
  std::map<std::string, std::string> kv_;  // "section.key" -> value
};

// Fully resolved config text (every field explicit); its FNV-1a hash is the
// config fingerprint embedded in checkpoints.
std::string resolved_config_text(const TrainConfig& tc, const SyntheticConfig& sc,
                                 const EvalProtocol& ep);
std::string config_hash_hex(const std::string& resolved_text);

}  // namespace tsgan
