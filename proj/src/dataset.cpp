#include "hpl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hpl/binary_io.hpp"
#include "hpl/image_io.hpp"
#include "hpl/labeling.hpp"
#include "hpl/parallel.hpp"
#include "hpl/random.hpp"

namespace hpl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaxSceneAttempts = 64;

void validate_pool(const ScenePool& p, const DataConfig& cfg, const char* name) {
  const std::string n = name;
  if (p.min_objects > p.max_objects) throw ConfigError(n + ": min_objects > max_objects");
  if (!(p.min_size > 0.0) || p.min_size > p.max_size) throw ConfigError(n + ": invalid size range");
  if (!(p.min_speed >= 0.0) || p.min_speed > p.max_speed) throw ConfigError(n + ": invalid speed range");
  if (!(p.disc_fraction >= 0.0 && p.disc_fraction <= 1.0)) throw ConfigError(n + ": disc_fraction outside [0, 1]");
  if (!p.appearance.empty() && p.appearance.size() != cfg.num_classes)
    throw ConfigError(n + ": appearance must list one entry per class");
}

std::string sample_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

SourceSample make_source(const DataConfig& cfg, std::size_t i) {
  const std::uint64_t seed = derive_seed(cfg.seed, "data/source", i);
  SceneSpec scene = sample_scene(cfg, cfg.source_pool, seed);
  Rng rng(derive_seed(seed, "step"));
  const auto step = rng.integer(0, std::max<std::int64_t>(0, cfg.steps - 1));
  RenderedFrame f = render_scene(scene, step);
  return SourceSample{sample_id("src_", i), std::move(f.image), std::move(f.labels)};
}

TargetSample make_target(const DataConfig& cfg, const char* purpose, const char* prefix, std::size_t i) {
  const std::uint64_t base = derive_seed(cfg.seed, purpose, i);
  for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
    SceneSpec scene = sample_scene(cfg, cfg.target_pool, derive_seed(base, "attempt", attempt));
    EventStream ev = simulate_events(scene, cfg.steps, cfg.threshold);
    if (ev.events.size() < cfg.events_per_grid * cfg.num_grids) continue;
    TargetSample t;
    t.id = sample_id(prefix, i);
    t.voxels = voxelize(ev, cfg.events_per_grid, cfg.num_grids);
    t.render_step = cfg.steps - 1;
    t.labels = render_scene(scene, t.render_step).labels;
    t.scene = std::move(scene);
    return t;
  }
  throw InsufficientEvents(cfg.events_per_grid * cfg.num_grids, 0);
}

}  // namespace

void DataConfig::validate() const {
  if (width == 0 || height == 0 || width > 65535 || height > 65535) throw ConfigError("data: invalid resolution");
  if (num_classes < 2 || num_classes > 32) throw ConfigError("data: num_classes must be in [2, 32]");
  if (background_class >= num_classes) throw ConfigError("data: background_class out of range");
  if (steps < 2) throw ConfigError("data: steps must be at least 2");
  if (!(threshold > 0.0) || !std::isfinite(threshold)) throw ConfigError("data: threshold must be positive");
  if (events_per_grid == 0 || num_grids == 0) throw ConfigError("data: events_per_grid and num_grids must be positive");
  validate_pool(source_pool, *this, "data.source_pool");
  validate_pool(target_pool, *this, "data.target_pool");
}

SceneSpec sample_scene(const DataConfig& cfg, const ScenePool& pool, std::uint64_t seed) {
  Rng rng(seed);
  SceneSpec s;
  s.width = cfg.width;
  s.height = cfg.height;
  s.num_classes = cfg.num_classes;
  s.background_class = cfg.background_class;
  s.seed = seed;
  s.appearance = pool.appearance;

  std::vector<std::uint32_t> classes;
  for (std::uint32_t c = 0; c < cfg.num_classes; ++c)
    if (c != cfg.background_class) classes.push_back(c);

  const auto n = rng.integer(pool.min_objects, pool.max_objects);
  const double span_t = static_cast<double>(cfg.steps - 1);
  for (std::int64_t k = 0; k < n; ++k) {
    SceneObject o;
    o.class_id = classes[rng.below(classes.size())];
    o.kind = rng.uniform() < pool.disc_fraction ? ShapeKind::kDisc : ShapeKind::kRect;
    const double speed = rng.uniform(pool.min_speed, pool.max_speed);
    const double angle = rng.uniform(0.0, 6.283185307179586);
    o.vx = speed * std::cos(angle);
    o.vy = speed * std::sin(angle);
    // Place the object so its path stays roughly centred on the canvas.
    const double cx = rng.uniform(0.0, cfg.width) - 0.5 * o.vx * span_t;
    const double cy = rng.uniform(0.0, cfg.height) - 0.5 * o.vy * span_t;
    if (o.kind == ShapeKind::kDisc) {
      o.r = 0.5 * rng.uniform(pool.min_size, pool.max_size);
      o.x = cx;
      o.y = cy;
    } else {
      o.w = rng.uniform(pool.min_size, pool.max_size);
      o.h = rng.uniform(pool.min_size, pool.max_size);
      o.x = cx - 0.5 * o.w;
      o.y = cy - 0.5 * o.h;
    }
    s.objects.push_back(o);
  }
  return s;
}

Dataset generate_dataset(const DataConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.num_classes = cfg.num_classes;
  d.width = cfg.width;
  d.height = cfg.height;
  d.events_per_grid = cfg.events_per_grid;
  d.num_grids = cfg.num_grids;
  d.source.resize(cfg.num_source);
  d.target_train.resize(cfg.num_target_train);
  d.target_test.resize(cfg.num_target_test);

  const std::size_t threads = worker_threads();
  parallel_for(cfg.num_source, threads, [&](std::size_t i) { d.source[i] = make_source(cfg, i); });
  parallel_for(cfg.num_target_train, threads,
               [&](std::size_t i) { d.target_train[i] = make_target(cfg, "data/target_train", "tgt_", i); });
  parallel_for(cfg.num_target_test, threads,
               [&](std::size_t i) { d.target_test[i] = make_target(cfg, "data/target_test", "test_", i); });
  return d;
}

Tensor image_to_input(const Tensor& image, std::size_t channels) {
  if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("image_to_input expects 1 x H x W, got " + shape_string(image.shape()));
  if (channels == 0) throw InvalidArgument("image_to_input: channels must be positive");
  Tensor out = Tensor::chw(channels, image.dim(1), image.dim(2));
  for (std::size_t c = 0; c < channels; ++c) std::copy(image.data().begin(), image.data().end(), out.plane(c).begin());
  return out;
}

json scene_to_json(const SceneSpec& s) {
  json objs = json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"class_id", o.class_id},
                    {"kind", o.kind == ShapeKind::kDisc ? "disc" : "rect"},
                    {"x", o.x}, {"y", o.y}, {"w", o.w}, {"h", o.h}, {"r", o.r},
                    {"vx", o.vx}, {"vy", o.vy}});
  }
  json app = json::array();
  for (const auto& a : s.appearance) app.push_back({{"shade", a.shade}, {"texture", a.texture}});
  return {{"width", s.width}, {"height", s.height}, {"num_classes", s.num_classes},
          {"background_class", s.background_class}, {"seed", s.seed},
          {"objects", objs}, {"appearance", app}};
}

SceneSpec scene_from_json(const json& j) {
  try {
    SceneSpec s;
    s.width = j.at("width").get<std::uint32_t>();
    s.height = j.at("height").get<std::uint32_t>();
    s.num_classes = j.at("num_classes").get<std::uint32_t>();
    s.background_class = j.at("background_class").get<std::uint32_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& jo : j.at("objects")) {
      SceneObject o;
      o.class_id = jo.at("class_id").get<std::uint32_t>();
      const auto kind = jo.at("kind").get<std::string>();
      if (kind == "disc") o.kind = ShapeKind::kDisc;
      else if (kind == "rect") o.kind = ShapeKind::kRect;
      else throw FormatError("unknown object kind '" + kind + "'", 0);
      o.x = jo.at("x").get<double>();
      o.y = jo.at("y").get<double>();
      o.w = jo.at("w").get<double>();
      o.h = jo.at("h").get<double>();
      o.r = jo.at("r").get<double>();
      o.vx = jo.at("vx").get<double>();
      o.vy = jo.at("vy").get<double>();
      s.objects.push_back(o);
    }
    if (j.contains("appearance"))
      for (const auto& ja : j.at("appearance"))
        s.appearance.push_back({ja.at("shade").get<double>(), ja.at("texture").get<double>()});
    validate_scene(s);
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("scene: ") + e.what(), 0);
  }
}

void save_dataset(const Dataset& data, const fs::path& dir, const ReconstructionChannel* recon) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const char* sub : {"source", "target_train", "target_test"}) fs::create_directories(dir / sub);
  if (recon) fs::create_directories(dir / kReconDirName);

  json m;
  m["num_classes"] = data.num_classes;
  m["width"] = data.width;
  m["height"] = data.height;
  m["events_per_grid"] = data.events_per_grid;
  m["num_grids"] = data.num_grids;
  m["source"] = json::array();
  for (const auto& s : data.source) {
    const std::string img = "source/" + s.id + ".pgm", lab = "source/" + s.id + ".labels.pgm";
    write_image_pgm(s.image, dir / img);
    write_label_pgm(s.labels, dir / lab);
    m["source"].push_back({{"id", s.id}, {"image", img}, {"labels", lab}});
  }
  auto targets = [&](const std::vector<TargetSample>& v, const char* split, bool with_recon) {
    json arr = json::array();
    for (const auto& t : v) {
      const std::string vox = std::string(split) + "/" + t.id + ".voxels.bin";
      const std::string lab = std::string(split) + "/" + t.id + ".labels.pgm";
      write_tensor_file(t.voxels, dir / vox);
      write_label_pgm(t.labels, dir / lab);
      json e = {{"id", t.id}, {"voxels", vox}, {"labels", lab}, {"render_step", t.render_step}};
      if (t.scene) e["scene"] = scene_to_json(*t.scene);
      if (with_recon && recon)
        write_image_pgm(recon->reconstruct(t), FileReconstruction::sidecar_path(dir / kReconDirName, t.id));
      arr.push_back(std::move(e));
    }
    return arr;
  };
  m["target_train"] = targets(data.target_train, "target_train", true);
  m["target_test"] = targets(data.target_test, "target_test", false);
  bin::write_file_atomic(dir / kManifestName, m.dump(2));
}

Dataset load_dataset(const fs::path& dir) {
  const std::string text = bin::read_file(dir / kManifestName);
  json m;
  try {
    m = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest: ") + e.what(), e.byte);
  }
  try {
    Dataset d;
    d.num_classes = m.at("num_classes").get<std::uint32_t>();
    d.width = m.at("width").get<std::uint32_t>();
    d.height = m.at("height").get<std::uint32_t>();
    d.events_per_grid = m.at("events_per_grid").get<std::size_t>();
    d.num_grids = m.at("num_grids").get<std::size_t>();
    auto check_labels = [&](const LabelMap& l, const std::string& id) {
      if (l.height != d.height || l.width != d.width) throw ShapeError(id + ": label size mismatch");
      for (auto v : l.data)
        if (v >= d.num_classes) throw FormatError(id + ": label value out of range", 0);
    };
    for (const auto& e : m.at("source")) {
      SourceSample s;
      s.id = e.at("id").get<std::string>();
      s.image = read_image_pgm(dir / e.at("image").get<std::string>());
      s.labels = read_label_pgm(dir / e.at("labels").get<std::string>());
      if (s.image.dim(1) != d.height || s.image.dim(2) != d.width) throw ShapeError(s.id + ": image size mismatch");
      check_labels(s.labels, s.id);
      d.source.push_back(std::move(s));
    }
    auto targets = [&](const json& arr) {
      std::vector<TargetSample> v;
      for (const auto& e : arr) {
        TargetSample t;
        t.id = e.at("id").get<std::string>();
        t.voxels = read_tensor_file(dir / e.at("voxels").get<std::string>());
        t.labels = read_label_pgm(dir / e.at("labels").get<std::string>());
        t.render_step = e.at("render_step").get<std::int64_t>();
        if (e.contains("scene")) t.scene = scene_from_json(e.at("scene"));
        if (t.voxels.rank() != 3 || t.voxels.dim(0) != d.num_grids || t.voxels.dim(1) != d.height ||
            t.voxels.dim(2) != d.width)
          throw ShapeError(t.id + ": voxel shape " + shape_string(t.voxels.shape()));
        check_labels(t.labels, t.id);
        v.push_back(std::move(t));
      }
      return v;
    };
    d.target_train = targets(m.at("target_train"));
    d.target_test = targets(m.at("target_test"));
    return d;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what(), 0);
  }
}

}  // namespace hpl
