#include "mgc/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mgc::config {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument(key + ": not a number: '" + v + "'");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw std::invalid_argument(key + ": not an integer: '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + ": not a boolean: '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : split(v, ','))
    out.push_back(static_cast<int>(parse_int(key, item)));
  return out;
}

std::array<double, 3> parse_double3(const std::string& key, const std::string& v) {
  const auto items = split(v, ',');
  if (items.size() != 3)
    throw std::invalid_argument(key + ": expected three comma-separated values");
  return {parse_double(key, items[0]), parse_double(key, items[1]), parse_double(key, items[2])};
}

std::map<int, int> parse_counts(const std::string& key, const std::string& v) {
  std::map<int, int> out;
  for (const auto& item : split(v, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument(key + ": expected c:count entries, got '" + item + "'");
    out[static_cast<int>(parse_int(key, trim(item.substr(0, colon))))] =
        static_cast<int>(parse_int(key, trim(item.substr(colon + 1))));
  }
  return out;
}

// One handler per config key; kept in a single table so the error message
// can list every valid key.
using Setter = void (*)(trainer::TrainConfig&, const std::string&, const std::string&);

const std::vector<std::pair<std::string, Setter>>& key_table() {
  using TC = trainer::TrainConfig;
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"model_preset", [](TC&, const std::string&, const std::string&) { /* applied first */ }},
      {"epochs", [](TC& c, const std::string& k, const std::string& v) { c.epochs = static_cast<int>(parse_int(k, v)); }},
      {"warmup_epochs", [](TC& c, const std::string& k, const std::string& v) { c.warmup_epochs = static_cast<int>(parse_int(k, v)); }},
      {"batch_size", [](TC& c, const std::string& k, const std::string& v) { c.batch_size = static_cast<int>(parse_int(k, v)); }},
      {"lr_max", [](TC& c, const std::string& k, const std::string& v) { c.lr_max = parse_double(k, v); }},
      {"lr_min", [](TC& c, const std::string& k, const std::string& v) { c.lr_min = parse_double(k, v); }},
      {"weight_decay", [](TC& c, const std::string& k, const std::string& v) { c.weight_decay = parse_double(k, v); }},
      {"ema_momentum", [](TC& c, const std::string& k, const std::string& v) { c.ema_momentum = parse_double(k, v); }},
      {"grad_clip", [](TC& c, const std::string& k, const std::string& v) { c.grad_clip = parse_double(k, v); }},
      {"seed", [](TC& c, const std::string& k, const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
      {"max_steps", [](TC& c, const std::string& k, const std::string& v) { c.max_steps = parse_int(k, v); }},
      {"checkpoint_every", [](TC& c, const std::string& k, const std::string& v) { c.checkpoint_every = static_cast<int>(parse_int(k, v)); }},
      {"log_every", [](TC& c, const std::string& k, const std::string& v) { c.log_every = static_cast<int>(parse_int(k, v)); }},
      {"temperature", [](TC& c, const std::string& k, const std::string& v) { c.loss.temperature = parse_double(k, v); }},
      {"granularity_counts", [](TC& c, const std::string& k, const std::string& v) { c.loss.sample_counts = parse_counts(k, v); }},
      {"symmetrize", [](TC& c, const std::string& k, const std::string& v) { c.loss.symmetrize = parse_bool(k, v); }},
      {"image_side", [](TC& c, const std::string& k, const std::string& v) { c.vit.image_side = static_cast<int>(parse_int(k, v)); }},
      {"patch_size", [](TC& c, const std::string& k, const std::string& v) { c.vit.patch_size = static_cast<int>(parse_int(k, v)); }},
      {"embed_dim", [](TC& c, const std::string& k, const std::string& v) { c.vit.embed_dim = static_cast<int>(parse_int(k, v)); }},
      {"depth", [](TC& c, const std::string& k, const std::string& v) { c.vit.depth = static_cast<int>(parse_int(k, v)); }},
      {"num_heads", [](TC& c, const std::string& k, const std::string& v) { c.vit.num_heads = static_cast<int>(parse_int(k, v)); }},
      {"mlp_ratio", [](TC& c, const std::string& k, const std::string& v) { c.vit.mlp_ratio = parse_double(k, v); }},
      {"use_class_token", [](TC& c, const std::string& k, const std::string& v) { c.vit.use_class_token = parse_bool(k, v); }},
      {"projector_widths", [](TC& c, const std::string& k, const std::string& v) { c.heads.projector = parse_int_list(k, v); }},
      {"predictor_widths", [](TC& c, const std::string& k, const std::string& v) { c.heads.predictor = parse_int_list(k, v); }},
      {"crop_area_min", [](TC& c, const std::string& k, const std::string& v) { c.augment.crop_area_min = parse_double(k, v); }},
      {"crop_area_max", [](TC& c, const std::string& k, const std::string& v) { c.augment.crop_area_max = parse_double(k, v); }},
      {"aspect_min", [](TC& c, const std::string& k, const std::string& v) { c.augment.aspect_min = parse_double(k, v); }},
      {"aspect_max", [](TC& c, const std::string& k, const std::string& v) { c.augment.aspect_max = parse_double(k, v); }},
      {"hflip_prob", [](TC& c, const std::string& k, const std::string& v) { c.augment.hflip_prob = parse_double(k, v); }},
      {"jitter_prob", [](TC& c, const std::string& k, const std::string& v) { c.augment.jitter_prob = parse_double(k, v); }},
      {"brightness", [](TC& c, const std::string& k, const std::string& v) { c.augment.brightness = parse_double(k, v); }},
      {"contrast", [](TC& c, const std::string& k, const std::string& v) { c.augment.contrast = parse_double(k, v); }},
      {"saturation", [](TC& c, const std::string& k, const std::string& v) { c.augment.saturation = parse_double(k, v); }},
      {"hue", [](TC& c, const std::string& k, const std::string& v) { c.augment.hue = parse_double(k, v); }},
      {"grayscale_prob", [](TC& c, const std::string& k, const std::string& v) { c.augment.grayscale_prob = parse_double(k, v); }},
      {"blur_prob_t1", [](TC& c, const std::string& k, const std::string& v) { c.augment.blur_prob_t1 = parse_double(k, v); }},
      {"blur_prob_t2", [](TC& c, const std::string& k, const std::string& v) { c.augment.blur_prob_t2 = parse_double(k, v); }},
      {"blur_sigma_min", [](TC& c, const std::string& k, const std::string& v) { c.augment.blur_sigma_min = parse_double(k, v); }},
      {"blur_sigma_max", [](TC& c, const std::string& k, const std::string& v) { c.augment.blur_sigma_max = parse_double(k, v); }},
      {"solarize_prob_t1", [](TC& c, const std::string& k, const std::string& v) { c.augment.solarize_prob_t1 = parse_double(k, v); }},
      {"solarize_prob_t2", [](TC& c, const std::string& k, const std::string& v) { c.augment.solarize_prob_t2 = parse_double(k, v); }},
      {"min_overlap_frac", [](TC& c, const std::string& k, const std::string& v) { c.augment.min_overlap_frac = parse_double(k, v); }},
      {"max_retries", [](TC& c, const std::string& k, const std::string& v) { c.augment.max_retries = static_cast<int>(parse_int(k, v)); }},
      {"norm_mean", [](TC& c, const std::string& k, const std::string& v) { c.norm_mean = parse_double3(k, v); }},
      {"norm_std", [](TC& c, const std::string& k, const std::string& v) { c.norm_std = parse_double3(k, v); }},
      {"data", [](TC& c, const std::string&, const std::string& v) { c.data = v; }},
      {"synthetic_count", [](TC& c, const std::string& k, const std::string& v) { c.synthetic_count = static_cast<std::size_t>(parse_int(k, v)); }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& valid_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [k, fn] : key_table()) {
      (void)fn;
      out.push_back(k);
    }
    std::sort(out.begin(), out.end());
    return out;
  }();
  return keys;
}

std::map<std::string, std::string> parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open config file");
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override '" + item + "' is not key=value");
    kv[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
  }
}

trainer::TrainConfig make_train_config(const std::map<std::string, std::string>& kv) {
  trainer::TrainConfig cfg = trainer::TrainConfig::paper_defaults();
  if (const auto it = kv.find("model_preset"); it != kv.end()) {
    if (it->second == "desk")
      cfg = trainer::TrainConfig::desk();
    else if (it->second == "vits16")
      cfg = trainer::TrainConfig::paper_defaults();
    else
      throw std::invalid_argument("model_preset must be 'vits16' or 'desk', got '" +
                                  it->second + "'");
  }

  for (const auto& [key, value] : kv) {
    const auto& table = key_table();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&key](const auto& e) { return e.first == key; });
    if (it == table.end()) {
      std::string msg = "unknown config key '" + key + "'; valid keys are:";
      for (const auto& k : valid_keys()) msg += " " + k;
      throw std::invalid_argument(msg);
    }
    it->second(cfg, key, value);
  }
  cfg.augment.out_side = cfg.vit.image_side;
  cfg.validate();
  return cfg;
}

std::map<std::string, std::string> to_kv(const trainer::TrainConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["epochs"] = std::to_string(cfg.epochs);
  kv["warmup_epochs"] = std::to_string(cfg.warmup_epochs);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["lr_max"] = fmt_double(cfg.lr_max);
  kv["lr_min"] = fmt_double(cfg.lr_min);
  kv["weight_decay"] = fmt_double(cfg.weight_decay);
  kv["ema_momentum"] = fmt_double(cfg.ema_momentum);
  kv["grad_clip"] = fmt_double(cfg.grad_clip);
  kv["seed"] = std::to_string(cfg.seed);
  kv["max_steps"] = std::to_string(cfg.max_steps);
  kv["checkpoint_every"] = std::to_string(cfg.checkpoint_every);
  kv["log_every"] = std::to_string(cfg.log_every);
  kv["temperature"] = fmt_double(cfg.loss.temperature);
  {
    std::string counts;
    for (const auto& [c, n] : cfg.loss.sample_counts)
      counts += (counts.empty() ? "" : ",") + std::to_string(c) + ":" + std::to_string(n);
    kv["granularity_counts"] = counts;
  }
  kv["symmetrize"] = cfg.loss.symmetrize ? "true" : "false";
  kv["image_side"] = std::to_string(cfg.vit.image_side);
  kv["patch_size"] = std::to_string(cfg.vit.patch_size);
  kv["embed_dim"] = std::to_string(cfg.vit.embed_dim);
  kv["depth"] = std::to_string(cfg.vit.depth);
  kv["num_heads"] = std::to_string(cfg.vit.num_heads);
  kv["mlp_ratio"] = fmt_double(cfg.vit.mlp_ratio);
  kv["use_class_token"] = cfg.vit.use_class_token ? "true" : "false";
  {
    std::string w;
    for (int x : cfg.heads.projector) w += (w.empty() ? "" : ",") + std::to_string(x);
    kv["projector_widths"] = w;
    w.clear();
    for (int x : cfg.heads.predictor) w += (w.empty() ? "" : ",") + std::to_string(x);
    kv["predictor_widths"] = w;
  }
  kv["crop_area_min"] = fmt_double(cfg.augment.crop_area_min);
  kv["crop_area_max"] = fmt_double(cfg.augment.crop_area_max);
  kv["aspect_min"] = fmt_double(cfg.augment.aspect_min);
  kv["aspect_max"] = fmt_double(cfg.augment.aspect_max);
  kv["hflip_prob"] = fmt_double(cfg.augment.hflip_prob);
  kv["jitter_prob"] = fmt_double(cfg.augment.jitter_prob);
  kv["brightness"] = fmt_double(cfg.augment.brightness);
  kv["contrast"] = fmt_double(cfg.augment.contrast);
  kv["saturation"] = fmt_double(cfg.augment.saturation);
  kv["hue"] = fmt_double(cfg.augment.hue);
  kv["grayscale_prob"] = fmt_double(cfg.augment.grayscale_prob);
  kv["blur_prob_t1"] = fmt_double(cfg.augment.blur_prob_t1);
  kv["blur_prob_t2"] = fmt_double(cfg.augment.blur_prob_t2);
  kv["blur_sigma_min"] = fmt_double(cfg.augment.blur_sigma_min);
  kv["blur_sigma_max"] = fmt_double(cfg.augment.blur_sigma_max);
  kv["solarize_prob_t1"] = fmt_double(cfg.augment.solarize_prob_t1);
  kv["solarize_prob_t2"] = fmt_double(cfg.augment.solarize_prob_t2);
  kv["min_overlap_frac"] = fmt_double(cfg.augment.min_overlap_frac);
  kv["max_retries"] = std::to_string(cfg.augment.max_retries);
  kv["norm_mean"] = fmt_double(cfg.norm_mean[0]) + "," + fmt_double(cfg.norm_mean[1]) + "," +
                    fmt_double(cfg.norm_mean[2]);
  kv["norm_std"] = fmt_double(cfg.norm_std[0]) + "," + fmt_double(cfg.norm_std[1]) + "," +
                   fmt_double(cfg.norm_std[2]);
  kv["data"] = cfg.data;
  kv["synthetic_count"] = std::to_string(cfg.synthetic_count);
  return kv;
}

}  // namespace mgc::config
