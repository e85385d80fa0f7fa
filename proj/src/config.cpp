#include "hpl/config.hpp"

#include "hpl/binary_io.hpp"

namespace hpl {

using nlohmann::json;

namespace {

// Reads j[key] into out when present; records the key as consumed.
template <typename T>
void read(const json& j, const char* key, T& out, std::vector<std::string>& seen) {
  seen.emplace_back(key);
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, const std::vector<std::string>& seen, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(seen.begin(), seen.end(), k) == seen.end()) throw ConfigError("unknown key '" + where + "." + k + "'");
}

json appearance_json(const std::vector<ClassAppearance>& a) {
  json arr = json::array();
  for (const auto& c : a) arr.push_back({{"shade", c.shade}, {"texture", c.texture}});
  return arr;
}

std::vector<ClassAppearance> appearance_from(const json& j, const std::string& where) {
  std::vector<ClassAppearance> out;
  if (!j.is_array()) throw ConfigError(where + " must be an array");
  for (const auto& e : j) {
    std::vector<std::string> seen;
    ClassAppearance c;
    read(e, "shade", c.shade, seen);
    read(e, "texture", c.texture, seen);
    reject_unknown(e, seen, where + "[]");
    out.push_back(c);
  }
  return out;
}

json pool_json(const ScenePool& p) {
  return {{"min_objects", p.min_objects}, {"max_objects", p.max_objects}, {"min_size", p.min_size},
          {"max_size", p.max_size},       {"min_speed", p.min_speed},     {"max_speed", p.max_speed},
          {"disc_fraction", p.disc_fraction}, {"appearance", appearance_json(p.appearance)}};
}

ScenePool pool_from(const json& j, const std::string& where) {
  ScenePool p;
  std::vector<std::string> seen;
  read(j, "min_objects", p.min_objects, seen);
  read(j, "max_objects", p.max_objects, seen);
  read(j, "min_size", p.min_size, seen);
  read(j, "max_size", p.max_size, seen);
  read(j, "min_speed", p.min_speed, seen);
  read(j, "max_speed", p.max_speed, seen);
  read(j, "disc_fraction", p.disc_fraction, seen);
  seen.emplace_back("appearance");
  if (j.contains("appearance")) p.appearance = appearance_from(j.at("appearance"), where + ".appearance");
  reject_unknown(j, seen, where);
  return p;
}

const char* space_name(PrototypeSpace s) { return s == PrototypeSpace::kFeatures ? "features" : "probabilities"; }

PrototypeSpace space_from(const std::string& s) {
  if (s == "features") return PrototypeSpace::kFeatures;
  if (s == "probabilities") return PrototypeSpace::kProbabilities;
  throw ConfigError("train.prototype_space must be 'features' or 'probabilities', got '" + s + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
  data.validate();
  recon.validate();
  train.validate();
}

json to_json(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  const ReconChannelConfig& r = cfg.recon;
  const TrainConfig& t = cfg.train;
  json data = {{"width", d.width},
               {"height", d.height},
               {"num_classes", d.num_classes},
               {"background_class", d.background_class},
               {"num_source", d.num_source},
               {"num_target_train", d.num_target_train},
               {"num_target_test", d.num_target_test},
               {"steps", d.steps},
               {"threshold", d.threshold},
               {"events_per_grid", d.events_per_grid},
               {"num_grids", d.num_grids},
               {"source_pool", pool_json(d.source_pool)},
               {"target_pool", pool_json(d.target_pool)},
               {"seed", d.seed}};
  json recon = {{"mode", r.mode == ReconMode::kOracle ? "oracle" : "file"},
                {"blur_radius", r.blur_radius},
                {"noise_sigma", r.noise_sigma},
                {"dropout_rate", r.dropout_rate},
                {"block_size", r.block_size},
                {"directory", r.directory.string()},
                {"seed", r.seed}};
  json train = {{"alpha", t.alpha},
                {"omega", t.omega},
                {"tau", t.tau},
                {"ema_decay", t.ema_decay},
                {"proportion", t.proportion},
                {"warmup_iters", t.warmup_iters},
                {"lr_warmup_iters", t.lr_warmup_iters},
                {"total_iters", t.total_iters},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"threshold", t.threshold},
                {"online_recon_labels", t.online_recon_labels},
                {"use_hybrid", t.use_hybrid},
                {"use_nll", t.use_nll},
                {"use_spa", t.use_spa},
                {"seed", t.seed},
                {"hidden_channels", t.hidden_channels},
                {"jitter_strength", t.jitter_strength},
                {"jitter_blur", t.jitter_blur},
                {"use_classmix", t.use_classmix},
                {"hard_pseudo_labels", t.hard_pseudo_labels},
                {"prototype_momentum", t.prototype_momentum},
                {"freeze_source_prototypes", t.freeze_source_prototypes},
                {"prototype_space", space_name(t.prototype_space)},
                {"eval_interval", t.eval_interval}};
  return {{"data", data}, {"recon", recon}, {"train", train}};
}

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig cfg;
  try {
    reject_unknown(j, {"data", "recon", "train"}, "config");
    if (j.contains("data")) {
      const json& s = j.at("data");
      DataConfig& d = cfg.data;
      std::vector<std::string> seen;
      read(s, "width", d.width, seen);
      read(s, "height", d.height, seen);
      read(s, "num_classes", d.num_classes, seen);
      read(s, "background_class", d.background_class, seen);
      read(s, "num_source", d.num_source, seen);
      read(s, "num_target_train", d.num_target_train, seen);
      read(s, "num_target_test", d.num_target_test, seen);
      read(s, "steps", d.steps, seen);
      read(s, "threshold", d.threshold, seen);
      read(s, "events_per_grid", d.events_per_grid, seen);
      read(s, "num_grids", d.num_grids, seen);
      read(s, "seed", d.seed, seen);
      seen.insert(seen.end(), {"source_pool", "target_pool"});
      if (s.contains("source_pool")) d.source_pool = pool_from(s.at("source_pool"), "data.source_pool");
      if (s.contains("target_pool")) d.target_pool = pool_from(s.at("target_pool"), "data.target_pool");
      reject_unknown(s, seen, "data");
    }
    if (j.contains("recon")) {
      const json& s = j.at("recon");
      ReconChannelConfig& r = cfg.recon;
      std::vector<std::string> seen;
      std::string mode = r.mode == ReconMode::kOracle ? "oracle" : "file";
      std::string dir = r.directory.string();
      read(s, "mode", mode, seen);
      read(s, "blur_radius", r.blur_radius, seen);
      read(s, "noise_sigma", r.noise_sigma, seen);
      read(s, "dropout_rate", r.dropout_rate, seen);
      read(s, "block_size", r.block_size, seen);
      read(s, "directory", dir, seen);
      read(s, "seed", r.seed, seen);
      reject_unknown(s, seen, "recon");
      if (mode == "oracle") r.mode = ReconMode::kOracle;
      else if (mode == "file") r.mode = ReconMode::kFile;
      else throw ConfigError("recon.mode must be 'oracle' or 'file', got '" + mode + "'");
      r.directory = dir;
    }
    if (j.contains("train")) {
      const json& s = j.at("train");
      TrainConfig& t = cfg.train;
      std::vector<std::string> seen;
      std::string space = space_name(t.prototype_space);
      read(s, "alpha", t.alpha, seen);
      read(s, "omega", t.omega, seen);
      read(s, "tau", t.tau, seen);
      read(s, "ema_decay", t.ema_decay, seen);
      read(s, "proportion", t.proportion, seen);
      read(s, "warmup_iters", t.warmup_iters, seen);
      read(s, "lr_warmup_iters", t.lr_warmup_iters, seen);
      read(s, "total_iters", t.total_iters, seen);
      read(s, "batch_size", t.batch_size, seen);
      read(s, "lr", t.lr, seen);
      read(s, "weight_decay", t.weight_decay, seen);
      read(s, "threshold", t.threshold, seen);
      read(s, "online_recon_labels", t.online_recon_labels, seen);
      read(s, "use_hybrid", t.use_hybrid, seen);
      read(s, "use_nll", t.use_nll, seen);
      read(s, "use_spa", t.use_spa, seen);
      read(s, "seed", t.seed, seen);
      read(s, "hidden_channels", t.hidden_channels, seen);
      read(s, "jitter_strength", t.jitter_strength, seen);
      read(s, "jitter_blur", t.jitter_blur, seen);
      read(s, "use_classmix", t.use_classmix, seen);
      read(s, "hard_pseudo_labels", t.hard_pseudo_labels, seen);
      read(s, "prototype_momentum", t.prototype_momentum, seen);
      read(s, "freeze_source_prototypes", t.freeze_source_prototypes, seen);
      read(s, "prototype_space", space, seen);
      read(s, "eval_interval", t.eval_interval, seen);
      reject_unknown(s, seen, "train");
      t.prototype_space = space_from(space);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  const std::string text = bin::read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }

  json doc = to_json(cfg);
  json::json_pointer ptr;
  if (key.find('.') != std::string::npos) {
    std::string path = "/" + key;
    std::replace(path.begin(), path.end(), '.', '/');
    ptr = json::json_pointer(path);
  } else {
    for (const char* section : {"train", "data", "recon"}) {
      if (doc[section].contains(key)) {
        ptr = json::json_pointer(std::string("/") + section + "/" + key);
        break;
      }
    }
    if (ptr.empty()) throw ConfigError("unknown override key '" + key + "'");
  }
  if (!doc.contains(ptr)) throw ConfigError("unknown override key '" + key + "'");
  doc[ptr] = value;
  cfg = experiment_from_json(doc);
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) apply_override(cfg, a);
}

}  // namespace hpl
