#include "tsgan/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tsgan {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

GanMode gan_mode_from(const std::string& s) {
  if (s == "none") return GanMode::None;
  if (s == "ordinary") return GanMode::Ordinary;
  if (s == "joint") return GanMode::Joint;
  throw config_error("unknown gan_mode '" + s + "' (none|ordinary|joint)");
}

TsMode ts_mode_from(const std::string& s) {
  if (s == "none") return TsMode::None;
  if (s == "cd") return TsMode::CdOnly;
  if (s == "all") return TsMode::All;
  throw config_error("unknown ts_mode '" + s + "' (none|cd|all)");
}

const char* to_string(GanMode m) {
  switch (m) {
    case GanMode::None: return "none";
    case GanMode::Ordinary: return "ordinary";
    default: return "joint";
  }
}

const char* to_string(TsMode m) {
  switch (m) {
    case TsMode::None: return "none";
    case TsMode::CdOnly: return "cd";
    default: return "all";
  }
}

SearchMode search_mode_from(const std::string& s) {
  if (s == "all-search" || s == "all") return SearchMode::AllSearch;
  if (s == "indoor-search" || s == "indoor") return SearchMode::IndoorSearch;
  throw config_error("unknown search mode '" + s + "' (all-search|indoor-search)");
}

ShotMode shot_mode_from(const std::string& s) {
  if (s == "single") return ShotMode::Single;
  if (s == "multi") return ShotMode::Multi;
  throw config_error("unknown shot mode '" + s + "' (single|multi)");
}

const char* to_string(SearchMode m) {
  return m == SearchMode::AllSearch ? "all-search" : "indoor-search";
}

const char* to_string(ShotMode m) { return m == ShotMode::Single ? "single" : "multi"; }

void TrainConfig::validate() const {
  TSGAN_CHECK(p > 0 && k > 0, Config, "p and k must be positive");
  TSGAN_CHECK(epochs > 0, Config, "epochs must be positive");
  TSGAN_CHECK(base_lr > 0.0, Config, "base_lr must be positive");
  TSGAN_CHECK(warmup_epochs >= 0, Config, "warmup_epochs must be non-negative");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    TSGAN_CHECK(decay_epochs[i] < epochs, Config, "decay epoch beyond training length");
    if (i) TSGAN_CHECK(decay_epochs[i] > decay_epochs[i - 1], Config,
                       "decay_epochs must be strictly increasing");
  }
  TSGAN_CHECK(decay_factor > 0.0, Config, "decay_factor must be positive");
  TSGAN_CHECK(weight_decay >= 0.0, Config, "weight_decay must be non-negative");
  TSGAN_CHECK(margin > 0.0, Config, "margin must be positive");
  TSGAN_CHECK(label_smooth >= 0.0 && label_smooth < 1.0, Config, "label_smooth must be in [0,1)");
  TSGAN_CHECK(lambda_id >= 0.0 && lambda_tri >= 0.0 && lambda_gan >= 0.0 && omega >= 0.0 &&
                  alpha_c >= 0.0 && alpha_s >= 0.0,
              Config, "loss weights must be non-negative");
  TSGAN_CHECK(widths.size() == 4, Config, "widths must list exactly four stage widths");
  for (int w : widths) TSGAN_CHECK(w > 0, Config, "stage widths must be positive");
  TSGAN_CHECK(embedding_dim == widths[3], Config,
              "embedding_dim must equal the last stage width (GAP output)");
  TSGAN_CHECK(blocks_per_stage > 0, Config, "blocks_per_stage must be positive");
  TSGAN_CHECK(input_h % 8 == 0 && input_w % 8 == 0, Config,
              "input resolution must be divisible by 8 (former-encoder stride)");
  TSGAN_CHECK(gen_base_width > 0 && gen_res_blocks >= 0 && disc_base_width > 0, Config,
              "generator/discriminator preset values must be positive");
  TSGAN_CHECK(bn_momentum > 0.0 && bn_momentum <= 1.0, Config, "bn_momentum must be in (0,1]");
}

void SyntheticConfig::validate() const {
  TSGAN_CHECK(n_identities > 0, Config, "n_identities must be positive");
  TSGAN_CHECK(images_per_identity_per_modality > 0, Config,
              "images_per_identity_per_modality must be positive");
  TSGAN_CHECK(height > 0 && width > 0, Config, "resolution must be positive");
  TSGAN_CHECK(noise_level >= 0.0, Config, "noise_level must be non-negative");
}

void EvalProtocol::validate() const {
  TSGAN_CHECK(k1 > k2 && k2 >= 1, Config, "rerank requires k1 > k2 >= 1");
  TSGAN_CHECK(lambda_rr >= 0.0 && lambda_rr <= 1.0, Config, "lambda_rr must be in [0,1]");
  TSGAN_CHECK(trials >= 1, Config, "trials must be >= 1");
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

ConfigFile ConfigFile::parse_string(const std::string& text) {
  ConfigFile cf;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw config_error("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw config_error("config line " + std::to_string(lineno) + ": empty key");
    cf.kv_[section.empty() ? key : section + "." + key] = value;
  }
  return cf;
}

std::string ConfigFile::get_string(const std::string& key, const std::string& dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : it->second;
}

double ConfigFile::get_double(const std::string& key, double dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "': not a number: " + it->second);
  }
}

int ConfigFile::get_int(const std::string& key, int dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  try {
    std::size_t pos = 0;
    int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "': not an integer: " + it->second);
  }
}

std::uint64_t ConfigFile::get_u64(const std::string& key, std::uint64_t dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  try {
    std::size_t pos = 0;
    std::uint64_t v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "': not an unsigned integer: " + it->second);
  }
}

bool ConfigFile::get_bool(const std::string& key, bool dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw config_error("config key '" + key + "': not a boolean: " + it->second);
}

std::vector<int> ConfigFile::get_int_list(const std::string& key,
                                          const std::vector<int>& dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  std::vector<int> out;
  std::istringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw config_error("config key '" + key + "': bad list element: " + tok);
    }
  }
  return out;
}

TrainConfig ConfigFile::train_config() const {
  TrainConfig c;
  c.p = get_int("train.p", c.p);
  c.k = get_int("train.k", c.k);
  c.epochs = get_int("train.epochs", c.epochs);
  c.base_lr = get_double("train.base_lr", c.base_lr);
  c.warmup_epochs = get_int("train.warmup_epochs", c.warmup_epochs);
  c.decay_epochs = get_int_list("train.decay_epochs", c.decay_epochs);
  c.decay_factor = get_double("train.decay_factor", c.decay_factor);
  c.weight_decay = get_double("train.weight_decay", c.weight_decay);
  c.margin = get_double("train.margin", c.margin);
  c.label_smooth = get_double("train.label_smooth", c.label_smooth);
  c.lambda_id = get_double("loss.lambda_id", c.lambda_id);
  c.lambda_tri = get_double("loss.lambda_tri", c.lambda_tri);
  c.lambda_gan = get_double("loss.lambda_gan", c.lambda_gan);
  c.omega = get_double("loss.omega", c.omega);
  c.alpha_c = get_double("loss.alpha_c", c.alpha_c);
  c.alpha_s = get_double("loss.alpha_s", c.alpha_s);
  c.widths = get_int_list("model.widths", c.widths);
  c.embedding_dim = get_int("model.embedding_dim",
                            c.widths.size() == 4 ? c.widths[3] : c.embedding_dim);
  c.blocks_per_stage = get_int("model.blocks_per_stage", c.blocks_per_stage);
  c.gen_base_width = get_int("model.gen_base_width", c.gen_base_width);
  c.gen_res_blocks = get_int("model.gen_res_blocks", c.gen_res_blocks);
  c.disc_base_width = get_int("model.disc_base_width", c.disc_base_width);
  c.bn_momentum = get_double("model.bn_momentum", c.bn_momentum);
  c.input_h = get_int("data.input_h", c.input_h);
  c.input_w = get_int("data.input_w", c.input_w);
  c.seed = get_u64("train.seed", c.seed);
  c.gan_mode = gan_mode_from(get_string("train.gan_mode", to_string(c.gan_mode)));
  c.ts_mode = ts_mode_from(get_string("train.ts_mode", to_string(c.ts_mode)));
  c.include_fake_in_triplet = get_bool("train.include_fake_in_triplet", c.include_fake_in_triplet);
  c.include_fake_in_id = get_bool("train.include_fake_in_id", c.include_fake_in_id);
  c.l2_normalize_features = get_bool("eval.l2_normalize_features", c.l2_normalize_features);
  c.grad_clip = get_double("train.grad_clip", c.grad_clip);
  c.debug_phase_checks = get_bool("train.debug_phase_checks", c.debug_phase_checks);
  c.checkpoint_interval = get_int("train.checkpoint_interval", c.checkpoint_interval);
  c.steps_per_epoch_override = get_int("train.steps_per_epoch", c.steps_per_epoch_override);
  c.teacher_steps = get_int("train.teacher_steps", c.teacher_steps);
  c.validate();
  return c;
}

SyntheticConfig ConfigFile::synthetic_config() const {
  SyntheticConfig c;
  c.n_identities = get_int("synth.n_identities", c.n_identities);
  c.images_per_identity_per_modality = get_int("synth.images_per_identity", c.images_per_identity_per_modality);
  c.height = get_int("data.input_h", c.height);
  c.width = get_int("data.input_w", c.width);
  c.noise_level = get_double("synth.noise_level", c.noise_level);
  c.seed = get_u64("synth.seed", c.seed);
  c.validate();
  return c;
}

EvalProtocol ConfigFile::eval_protocol() const {
  EvalProtocol p;
  p.mode = search_mode_from(get_string("eval.mode", to_string(p.mode)));
  p.shot = shot_mode_from(get_string("eval.shot", to_string(p.shot)));
  p.rerank = get_bool("eval.rerank", p.rerank);
  p.k1 = get_int("eval.rerank_k1", p.k1);
  p.k2 = get_int("eval.rerank_k2", p.k2);
  p.lambda_rr = get_double("eval.rerank_lambda", p.lambda_rr);
  p.trials = get_int("eval.trials", p.trials);
  if (has("eval.exclusion")) {
    // format: probe:gal[;probe:gal]... e.g. "3:2"
    p.exclusion.clear();
    std::istringstream ss(get_string("eval.exclusion", ""));
    std::string pair;
    while (std::getline(ss, pair, ';')) {
      auto colon = pair.find(':');
      if (colon == std::string::npos) throw config_error("eval.exclusion: expected probe:gallery");
      p.exclusion[std::stoi(pair.substr(0, colon))].insert(std::stoi(pair.substr(colon + 1)));
    }
  }
  p.validate();
  return p;
}

std::string resolved_config_text(const TrainConfig& tc, const SyntheticConfig& sc,
                                 const EvalProtocol& ep) {
  std::ostringstream o;
  o.precision(17);
  auto list = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  o << "[data]\n";
  o << "input_h = " << tc.input_h << "\n";
  o << "input_w = " << tc.input_w << "\n";
  o << "\n[model]\n";
  o << "widths = " << list(tc.widths) << "\n";
  o << "embedding_dim = " << tc.embedding_dim << "\n";
  o << "blocks_per_stage = " << tc.blocks_per_stage << "\n";
  o << "gen_base_width = " << tc.gen_base_width << "\n";
  o << "gen_res_blocks = " << tc.gen_res_blocks << "\n";
  o << "disc_base_width = " << tc.disc_base_width << "\n";
  o << "bn_momentum = " << tc.bn_momentum << "\n";
  o << "\n[train]\n";
  o << "p = " << tc.p << "\n";
  o << "k = " << tc.k << "\n";
  o << "epochs = " << tc.epochs << "\n";
  o << "base_lr = " << tc.base_lr << "\n";
  o << "warmup_epochs = " << tc.warmup_epochs << "\n";
  o << "decay_epochs = " << list(tc.decay_epochs) << "\n";
  o << "decay_factor = " << tc.decay_factor << "\n";
  o << "weight_decay = " << tc.weight_decay << "\n";
  o << "margin = " << tc.margin << "\n";
  o << "label_smooth = " << tc.label_smooth << "\n";
  o << "seed = " << tc.seed << "\n";
  o << "gan_mode = " << to_string(tc.gan_mode) << "\n";
  o << "ts_mode = " << to_string(tc.ts_mode) << "\n";
  o << "include_fake_in_triplet = " << (tc.include_fake_in_triplet ? "true" : "false") << "\n";
  o << "include_fake_in_id = " << (tc.include_fake_in_id ? "true" : "false") << "\n";
  o << "grad_clip = " << tc.grad_clip << "\n";
  o << "debug_phase_checks = " << (tc.debug_phase_checks ? "true" : "false") << "\n";
  o << "checkpoint_interval = " << tc.checkpoint_interval << "\n";
  o << "steps_per_epoch = " << tc.steps_per_epoch_override << "\n";
  o << "teacher_steps = " << tc.teacher_steps << "\n";
  o << "\n[loss]\n";
  o << "lambda_id = " << tc.lambda_id << "\n";
  o << "lambda_tri = " << tc.lambda_tri << "\n";
  o << "lambda_gan = " << tc.lambda_gan << "\n";
  o << "omega = " << tc.omega << "\n";
  o << "alpha_c = " << tc.alpha_c << "\n";
  o << "alpha_s = " << tc.alpha_s << "\n";
  o << "\n[synth]\n";
  o << "n_identities = " << sc.n_identities << "\n";
  o << "images_per_identity = " << sc.images_per_identity_per_modality << "\n";
  o << "noise_level = " << sc.noise_level << "\n";
  o << "seed = " << sc.seed << "\n";
  o << "\n[eval]\n";
  o << "mode = " << to_string(ep.mode) << "\n";
  o << "shot = " << to_string(ep.shot) << "\n";
  o << "rerank = " << (ep.rerank ? "true" : "false") << "\n";
  o << "rerank_k1 = " << ep.k1 << "\n";
  o << "rerank_k2 = " << ep.k2 << "\n";
  o << "rerank_lambda = " << ep.lambda_rr << "\n";
  o << "trials = " << ep.trials << "\n";
  o << "l2_normalize_features = " << (tc.l2_normalize_features ? "true" : "false") << "\n";
  std::string excl;
  for (const auto& [probe, gals] : ep.exclusion)
    for (int g : gals) excl += (excl.empty() ? "" : ";") + std::to_string(probe) + ":" + std::to_string(g);
  o << "exclusion = " << excl << "\n";
  return o.str();
}

std::string config_hash_hex(const std::string& resolved_text) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(resolved_text)));
  return std::string(buf);
}

}  // namespace tsgan
