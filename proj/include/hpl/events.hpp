#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "hpl/tensor.hpp"

namespace hpl {

struct Event {
  std::uint16_t x = 0;  // column
  std::uint16_t y = 0;  // row
  std::uint64_t t = 0;  // microseconds
  std::uint8_t p = 0;   // 1 = positive brightness change, 0 = negative

  bool operator==(const Event&) const = default;
};

struct EventStream {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<Event> events;

  bool operator==(const EventStream&) const = default;
};

// InvalidArgument when an event is out of bounds, has a polarity other than
// 0/1, or the timestamps decrease.
void validate_stream(const EventStream& stream);

enum class ShapeKind { kRect, kDisc };

struct SceneObject {
  std::uint32_t class_id = 0;
  ShapeKind kind = ShapeKind::kRect;
  // Rect: top-left corner (x, y) and extent (w, h). Disc: center (x, y), radius r.
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  double r = 0.0;
  // Pixels per step.
  double vx = 0.0;
  double vy = 0.0;
};

struct ClassAppearance {
  double shade = 0.5;    // base intensity in [0, 1]
  double texture = 0.0;  // amplitude of the per-pixel texture
};

struct SceneSpec {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t num_classes = 0;
  std::vector<SceneObject> objects;  // back to front
  std::uint32_t background_class = 0;
  std::uint64_t seed = 0;
  // Per-class look; when empty, default_appearance(num_classes) is used.
  std::vector<ClassAppearance> appearance;
};

std::vector<ClassAppearance> default_appearance(std::uint32_t num_classes);

void validate_scene(const SceneSpec& spec);

struct RenderedFrame {
  Tensor image;     // 1 x H x W, values in [0, 1]
  LabelMap labels;  // topmost class per pixel
};

RenderedFrame render_scene(const SceneSpec& spec, std::int64_t step);

inline constexpr std::uint64_t kFrameIntervalUs = 1000;
// Offset inside the log so dark pixels do not dominate the event count.
inline constexpr double kLogIntensityOffset = 0.05;

// Log-intensity threshold model over frames rendered at steps 0..steps-1.
EventStream simulate_events(const SceneSpec& spec, std::int64_t steps, double threshold);

// Same model applied to an explicit frame sequence (1 x H x W each). Every
// transition is memoryless: a pixel whose log change is d emits floor(|d|/threshold)
// events of sign(d), with crossing times interpolated linearly in the interval.
EventStream events_from_frames(const std::vector<Tensor>& frames, double threshold,
                               std::uint64_t interval_us = kFrameIntervalUs);

// Splits the newest events_per_grid * num_grids events into num_grids
// consecutive windows and accumulates +1/-1 per event into that window's
// channel. Output is num_grids x H x W.
Tensor voxelize(const EventStream& stream, std::size_t events_per_grid, std::size_t num_grids);

struct VoxelPreset {
  std::size_t events_per_grid;
  std::size_t num_grids;
};

inline constexpr VoxelPreset kDsecPreset{100000, 40};
inline constexpr VoxelPreset kDdd17Preset{32000, 20};
inline constexpr VoxelPreset kDeskPreset{500, 8};

// Binary "EVT1" format; see README for the layout.
void write_events(const EventStream& stream, const std::filesystem::path& path);
EventStream read_events(const std::filesystem::path& path);
EventStream decode_events(std::string_view bytes);
std::string encode_events(const EventStream& stream);

// CSV alternative with header "x,y,t,p". Sensor size is not stored, so reading
// takes it explicitly.
void write_events_csv(const EventStream& stream, const std::filesystem::path& path);
EventStream read_events_csv(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height);

}  // namespace hpl
