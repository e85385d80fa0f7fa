#include "hpl/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "hpl/binary_io.hpp"
#include "hpl/random.hpp"

namespace hpl {

namespace {

constexpr char kEventMagic[4] = {'E', 'V', 'T', '1'};
constexpr std::uint64_t kEventHeaderBytes = 4 + 4 + 4 + 8;
constexpr std::uint64_t kEventRecordBytes = 2 + 2 + 8 + 1;

// Texture value in [-1, 1] for an integer lattice position.
double texture_at(std::uint64_t key, std::int64_t u, std::int64_t v) {
  const std::uint64_t h = mix64(key ^ mix64(static_cast<std::uint64_t>(u) * 0x9e3779b97f4a7c15ULL) ^
                                mix64(static_cast<std::uint64_t>(v) + 0x632be59bd9b4e019ULL));
  return 2.0 * unit_from_bits(h) - 1.0;
}

bool covers(const SceneObject& o, double ox, double oy, double cx, double cy) {
  if (o.kind == ShapeKind::kRect) {
    return cx >= ox && cx < ox + o.w && cy >= oy && cy < oy + o.h;
  }
  const double dx = cx - ox;
  const double dy = cy - oy;
  return dx * dx + dy * dy < o.r * o.r;
}

}  // namespace

void validate_stream(const EventStream& stream) {
  std::uint64_t last_t = 0;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (e.x >= stream.width || e.y >= stream.height) {
      throw InvalidArgument("event " + std::to_string(i) + " out of bounds");
    }
    if (e.p > 1) throw InvalidArgument("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
    if (i > 0 && e.t < last_t) throw InvalidArgument("event " + std::to_string(i) + " timestamp decreases");
    last_t = e.t;
  }
}

std::vector<ClassAppearance> default_appearance(std::uint32_t num_classes) {
  std::vector<ClassAppearance> out(num_classes);
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    const double frac = num_classes > 1 ? static_cast<double>(c) / (num_classes - 1) : 0.5;
    out[c] = {0.2 + 0.6 * frac, 0.05};
  }
  return out;
}

void validate_scene(const SceneSpec& spec) {
  if (spec.num_classes == 0 || spec.num_classes > 32) {
    throw InvalidArgument("scene: num_classes must be in [1, 32], got " + std::to_string(spec.num_classes));
  }
  if (spec.width == 0 || spec.height == 0 || spec.width > 65535 || spec.height > 65535) {
    throw InvalidArgument("scene: invalid canvas size");
  }
  if (spec.background_class >= spec.num_classes) throw InvalidArgument("scene: background class >= K");
  for (const auto& o : spec.objects) {
    if (o.class_id >= spec.num_classes) throw InvalidArgument("scene: object class id >= K");
  }
  if (!spec.appearance.empty() && spec.appearance.size() != spec.num_classes) {
    throw InvalidArgument("scene: appearance table must have K entries");
  }
}

RenderedFrame render_scene(const SceneSpec& spec, std::int64_t step) {
  validate_scene(spec);
  if (step < 0) throw InvalidArgument("render_scene: negative step");
  const auto look = spec.appearance.empty() ? default_appearance(spec.num_classes) : spec.appearance;
  const std::size_t h = spec.height;
  const std::size_t w = spec.width;

  RenderedFrame frame{Tensor::chw(1, h, w), LabelMap(h, w, static_cast<std::uint8_t>(spec.background_class))};
  const std::uint64_t bg_key = derive_seed(spec.seed, "texture/background");
  const auto& bg = look[spec.background_class];
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = bg.shade + bg.texture * texture_at(bg_key, static_cast<std::int64_t>(x),
                                                          static_cast<std::int64_t>(y));
      frame.image.at(0, y, x) = std::clamp(v, 0.0, 1.0);
    }
  }

  const double s = static_cast<double>(step);
  for (std::size_t idx = 0; idx < spec.objects.size(); ++idx) {
    const SceneObject& o = spec.objects[idx];
    const double ox = o.x + o.vx * s;
    const double oy = o.y + o.vy * s;
    double x0, x1, y0, y1;
    if (o.kind == ShapeKind::kRect) {
      x0 = ox, x1 = ox + o.w, y0 = oy, y1 = oy + o.h;
    } else {
      x0 = ox - o.r, x1 = ox + o.r, y0 = oy - o.r, y1 = oy + o.r;
    }
    // Clip the bounding box; objects that left the canvas simply draw nothing.
    const auto lo = [](double v) { return static_cast<std::int64_t>(std::floor(v - 0.5)); };
    const auto hi = [](double v) { return static_cast<std::int64_t>(std::ceil(v)); };
    const std::int64_t px0 = std::max<std::int64_t>(0, lo(x0));
    const std::int64_t px1 = std::min<std::int64_t>(static_cast<std::int64_t>(w) - 1, hi(x1));
    const std::int64_t py0 = std::max<std::int64_t>(0, lo(y0));
    const std::int64_t py1 = std::min<std::int64_t>(static_cast<std::int64_t>(h) - 1, hi(y1));
    const auto& a = look[o.class_id];
    const std::uint64_t key = derive_seed(spec.seed, "texture/object", idx);
    for (std::int64_t py = py0; py <= py1; ++py) {
      for (std::int64_t px = px0; px <= px1; ++px) {
        const double cx = static_cast<double>(px) + 0.5;
        const double cy = static_cast<double>(py) + 0.5;
        if (!covers(o, ox, oy, cx, cy)) continue;
        // Texture is attached to the object so that it travels with it.
        const auto u = static_cast<std::int64_t>(std::floor(cx - ox));
        const auto v = static_cast<std::int64_t>(std::floor(cy - oy));
        const double val = a.shade + a.texture * texture_at(key, u, v);
        frame.image.at(0, static_cast<std::size_t>(py), static_cast<std::size_t>(px)) = std::clamp(val, 0.0, 1.0);
        frame.labels.at(static_cast<std::size_t>(py), static_cast<std::size_t>(px)) =
            static_cast<std::uint8_t>(o.class_id);
      }
    }
  }
  return frame;
}

EventStream events_from_frames(const std::vector<Tensor>& frames, double threshold, std::uint64_t interval_us) {
  if (frames.size() < 2) throw InvalidArgument("events_from_frames: need at least two frames");
  if (!(threshold > 0.0)) throw InvalidArgument("events_from_frames: threshold must be positive");
  const auto& shape = frames.front().shape();
  if (shape.size() != 3 || shape[0] != 1) throw ShapeError("events_from_frames: frames must be 1 x H x W");
  for (const auto& f : frames) require_same_shape(frames.front(), f, "events_from_frames");

  const std::size_t h = shape[1];
  const std::size_t w = shape[2];
  EventStream out;
  out.width = static_cast<std::uint32_t>(w);
  out.height = static_cast<std::uint32_t>(h);

  std::vector<double> prev(h * w), cur(h * w);
  const auto log_frame = [&](const Tensor& f, std::vector<double>& dst) {
    for (std::size_t i = 0; i < h * w; ++i) dst[i] = std::log(f[i] + kLogIntensityOffset);
  };
  log_frame(frames[0], prev);
  for (std::size_t step = 1; step < frames.size(); ++step) {
    log_frame(frames[step], cur);
    const std::uint64_t t0 = (step - 1) * interval_us;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double d = cur[y * w + x] - prev[y * w + x];
        const double mag = std::fabs(d);
        const auto n = static_cast<std::uint64_t>(std::floor(mag / threshold));
        for (std::uint64_t k = 1; k <= n; ++k) {
          const double frac = std::min(1.0, static_cast<double>(k) * threshold / mag);
          const auto dt = static_cast<std::uint64_t>(std::floor(frac * static_cast<double>(interval_us)));
          out.events.push_back(Event{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), t0 + dt,
                                     static_cast<std::uint8_t>(d > 0.0 ? 1 : 0)});
        }
      }
    }
    std::swap(prev, cur);
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return out;
}

EventStream simulate_events(const SceneSpec& spec, std::int64_t steps, double threshold) {
  if (steps < 2) throw InvalidArgument("simulate_events: steps must be >= 2, got " + std::to_string(steps));
  if (!(threshold > 0.0)) throw InvalidArgument("simulate_events: threshold must be positive");
  std::vector<Tensor> frames;
  frames.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t s = 0; s < steps; ++s) frames.push_back(render_scene(spec, s).image);
  return events_from_frames(frames, threshold);
}

Tensor voxelize(const EventStream& stream, std::size_t events_per_grid, std::size_t num_grids) {
  if (events_per_grid < 1 || num_grids < 1) {
    throw InvalidArgument("voxelize: events_per_grid and num_grids must be >= 1");
  }
  const std::size_t need = events_per_grid * num_grids;
  if (stream.events.size() < need) throw InsufficientEvents(need, stream.events.size());

  Tensor out = Tensor::chw(num_grids, stream.height, stream.width);
  const std::size_t first = stream.events.size() - need;
  for (std::size_t j = 0; j < need; ++j) {
    const Event& e = stream.events[first + j];
    if (e.x >= stream.width || e.y >= stream.height) {
      throw InvalidArgument("voxelize: event " + std::to_string(first + j) + " out of bounds");
    }
    out.at(j / events_per_grid, e.y, e.x) += e.p ? 1.0 : -1.0;
  }
  return out;
}

std::string encode_events(const EventStream& stream) {
  std::string out;
  out.reserve(kEventHeaderBytes + stream.events.size() * kEventRecordBytes);
  out.append(kEventMagic, 4);
  bin::put_u32(out, stream.width);
  bin::put_u32(out, stream.height);
  bin::put_u64(out, stream.events.size());
  for (const Event& e : stream.events) {
    bin::put_u16(out, e.x);
    bin::put_u16(out, e.y);
    bin::put_u64(out, e.t);
    bin::put_u8(out, e.p);
  }
  return out;
}

EventStream decode_events(std::string_view bytes) {
  bin::Reader rd(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kEventMagic, 4)) {
    throw FormatError("bad magic, expected EVT1", 0);
  }
  rd.take(4, "magic");
  EventStream s;
  s.width = rd.u32("width");
  s.height = rd.u32("height");
  const std::uint64_t count = rd.u64("count");
  s.events.reserve(std::min(count, rd.remaining() / kEventRecordBytes));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t at = rd.offset();
    if (rd.remaining() < kEventRecordBytes) {
      throw FormatError("truncated record " + std::to_string(i), at);
    }
    Event e;
    e.x = rd.u16("x");
    e.y = rd.u16("y");
    e.t = rd.u64("t");
    e.p = rd.u8("p");
    if (e.x >= s.width || e.y >= s.height) {
      throw FormatError("record " + std::to_string(i) + " coordinate (" + std::to_string(e.x) + "," +
                            std::to_string(e.y) + ") out of bounds",
                        at);
    }
    if (e.p > 1) throw FormatError("record " + std::to_string(i) + " polarity not 0/1", at);
    if (!s.events.empty() && e.t < s.events.back().t) {
      throw FormatError("record " + std::to_string(i) + " timestamp decreases", at);
    }
    s.events.push_back(e);
  }
  if (!rd.at_end()) throw FormatError("trailing bytes after last record", rd.offset());
  return s;
}

void write_events(const EventStream& stream, const std::filesystem::path& path) {
  validate_stream(stream);
  bin::write_file_atomic(path, encode_events(stream));
}

EventStream read_events(const std::filesystem::path& path) { return decode_events(bin::read_file(path)); }

void write_events_csv(const EventStream& stream, const std::filesystem::path& path) {
  validate_stream(stream);
  std::string out = "x,y,t,p\n";
  for (const Event& e : stream.events) {
    out += std::to_string(e.x) + ',' + std::to_string(e.y) + ',' + std::to_string(e.t) + ',' +
           std::to_string(e.p) + '\n';
  }
  bin::write_file_atomic(path, out);
}

EventStream read_events_csv(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height) {
  const std::string text = bin::read_file(path);
  EventStream s;
  s.width = width;
  s.height = height;
  std::istringstream in(text);
  std::string line;
  std::uint64_t offset = 0;
  if (!std::getline(in, line) || line != "x,y,t,p") throw FormatError("missing CSV header x,y,t,p", 0);
  offset += line.size() + 1;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    const std::uint64_t at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    std::uint64_t vals[4];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int f = 0; f < 4; ++f) {
      auto [next, ec] = std::from_chars(p, end, vals[f]);
      if (ec != std::errc()) throw FormatError("malformed CSV row " + std::to_string(index), at);
      p = next;
      if (f < 3) {
        if (p == end || *p != ',') throw FormatError("malformed CSV row " + std::to_string(index), at);
        ++p;
      }
    }
    if (p != end) throw FormatError("malformed CSV row " + std::to_string(index), at);
    if (vals[0] >= width || vals[1] >= height) {
      throw FormatError("record " + std::to_string(index) + " coordinate out of bounds", at);
    }
    if (vals[3] > 1) throw FormatError("record " + std::to_string(index) + " polarity not 0/1", at);
    if (!s.events.empty() && vals[2] < s.events.back().t) {
      throw FormatError("record " + std::to_string(index) + " timestamp decreases", at);
    }
    s.events.push_back(Event{static_cast<std::uint16_t>(vals[0]), static_cast<std::uint16_t>(vals[1]), vals[2],
                             static_cast<std::uint8_t>(vals[3])});
    ++index;
  }
  return s;
}

}  // namespace hpl
