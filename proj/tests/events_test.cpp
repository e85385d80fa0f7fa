#include <algorithm>
#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "hpl/binary_io.hpp"
#include "hpl/events.hpp"
#include "hpl/image_io.hpp"
#include "test_util.hpp"

namespace hpl {
namespace {

SceneSpec canvas(std::uint32_t w, std::uint32_t h, std::uint32_t k = 3) {
  SceneSpec s;
  s.width = w;
  s.height = h;
  s.num_classes = k;
  s.seed = 11;
  return s;
}

SceneObject rect(std::uint32_t cls, double x, double y, double w, double h, double vx = 0, double vy = 0) {
  SceneObject o;
  o.class_id = cls;
  o.kind = ShapeKind::kRect;
  o.x = x, o.y = y, o.w = w, o.h = h, o.vx = vx, o.vy = vy;
  return o;
}

TEST(RenderScene, EmptySceneIsBackground) {
  SceneSpec s = canvas(6, 5);
  s.appearance = {{0.3, 0.0}, {0.6, 0.0}, {0.9, 0.0}};
  const RenderedFrame f = render_scene(s, 4);
  for (double v : f.image.values()) EXPECT_EQ(v, 0.3);
  for (auto l : f.labels.data) EXPECT_EQ(l, 0);
}

TEST(RenderScene, Deterministic) {
  SceneSpec s = canvas(16, 16);
  s.objects.push_back(rect(1, 2.3, 4.1, 5, 6, 0.7, -0.2));
  SceneObject d;
  d.class_id = 2, d.kind = ShapeKind::kDisc, d.x = 9, d.y = 9, d.r = 3.5, d.vx = 1;
  s.objects.push_back(d);
  const RenderedFrame a = render_scene(s, 3), b = render_scene(s, 3);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(RenderScene, RectangleCoversExactPixels) {
  SceneSpec s = canvas(8, 8);
  s.objects.push_back(rect(1, 2, 3, 4, 4));
  const RenderedFrame f = render_scene(s, 0);
  std::size_t count = 0;
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      const bool inside = x >= 2 && x < 6 && y >= 3 && y < 7;
      EXPECT_EQ(f.labels.at(y, x) == 1, inside) << y << "," << x;
      count += f.labels.at(y, x) == 1;
    }
  EXPECT_EQ(count, 16u);
}

TEST(RenderScene, DiscMatchesCenterDistanceRule) {
  SceneSpec s = canvas(12, 12);
  SceneObject d;
  d.class_id = 2, d.kind = ShapeKind::kDisc, d.x = 5.2, d.y = 6.7, d.r = 3.1;
  s.objects.push_back(d);
  const RenderedFrame f = render_scene(s, 0);
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t x = 0; x < 12; ++x) {
      const double dx = x + 0.5 - 5.2, dy = y + 0.5 - 6.7;
      EXPECT_EQ(f.labels.at(y, x) == 2, dx * dx + dy * dy < 3.1 * 3.1);
    }
}

TEST(RenderScene, ObjectsClipAndDrawBackToFront) {
  SceneSpec s = canvas(8, 8);
  s.objects.push_back(rect(1, -3, -3, 6, 6));
  s.objects.push_back(rect(2, 1, 1, 2, 2));
  const RenderedFrame f = render_scene(s, 0);
  EXPECT_EQ(f.labels.at(0, 0), 1);
  EXPECT_EQ(f.labels.at(1, 1), 2);
  EXPECT_EQ(f.labels.at(2, 2), 2);
  EXPECT_EQ(f.labels.at(3, 3), 0);
  // Fully off-canvas after motion: no error, nothing drawn.
  s.objects = {rect(1, 0, 0, 2, 2, 100, 0)};
  const RenderedFrame g = render_scene(s, 1);
  for (auto l : g.labels.data) EXPECT_EQ(l, 0);
}

TEST(RenderScene, InvalidSpecsRejected) {
  SceneSpec s = canvas(4, 4, 0);
  EXPECT_THROW(render_scene(s, 0), InvalidArgument);
  s = canvas(4, 4, 33);
  EXPECT_THROW(render_scene(s, 0), InvalidArgument);
  s = canvas(4, 4);
  s.objects.push_back(rect(3, 0, 0, 1, 1));
  EXPECT_THROW(render_scene(s, 0), InvalidArgument);
  s = canvas(4, 4);
  EXPECT_THROW(render_scene(s, -1), InvalidArgument);
}

TEST(SimulateEvents, StaticSceneIsSilent) {
  SceneSpec s = canvas(16, 16);
  s.objects.push_back(rect(2, 3, 3, 6, 6));
  EXPECT_TRUE(simulate_events(s, 10, 0.1).events.empty());
}

TEST(SimulateEvents, MovingBrightDiscHasSignedEdges) {
  SceneSpec s = canvas(32, 16, 2);
  s.appearance = {{0.1, 0.0}, {0.9, 0.0}};
  SceneObject d;
  d.class_id = 1, d.kind = ShapeKind::kDisc, d.x = 10, d.y = 8, d.r = 4, d.vx = 1;
  s.objects.push_back(d);
  const EventStream ev = simulate_events(s, 2, 0.2);
  ASSERT_FALSE(ev.events.empty());
  for (const auto& e : ev.events) {
    const double cx = e.x + 0.5;
    if (e.p == 1) EXPECT_GT(cx, 10.0) << "positive events on the leading edge";
    else EXPECT_LT(cx, 10.0) << "negative events on the trailing edge";
  }
}

TEST(SimulateEvents, SortedDeterministicAndValid) {
  SceneSpec s = canvas(24, 24, 4);
  s.objects.push_back(rect(1, 2, 2, 7, 5, 1.3, 0.4));
  SceneObject d;
  d.class_id = 3, d.kind = ShapeKind::kDisc, d.x = 15, d.y = 14, d.r = 4, d.vx = -1, d.vy = 1.5;
  s.objects.push_back(d);
  const EventStream a = simulate_events(s, 6, 0.1), b = simulate_events(s, 6, 0.1);
  EXPECT_EQ(encode_events(a), encode_events(b));
  EXPECT_NO_THROW(validate_stream(a));
  EXPECT_TRUE(std::is_sorted(a.events.begin(), a.events.end(), [](auto& l, auto& r) { return l.t < r.t; }));
  EXPECT_LT(a.events.back().t, 5 * kFrameIntervalUs + 1);
}

TEST(SimulateEvents, DoublingThresholdNeverIncreasesCount) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SceneSpec s = canvas(24, 24, 4);
    s.seed = seed;
    Rng rng(seed);
    for (int i = 0; i < 3; ++i)
      s.objects.push_back(rect(1 + rng.below(3), rng.uniform(0, 16), rng.uniform(0, 16), rng.uniform(3, 8),
                               rng.uniform(3, 8), rng.uniform(-2, 2), rng.uniform(-2, 2)));
    for (double th : {0.05, 0.1, 0.2}) {
      const auto lo = simulate_events(s, 5, th).events.size();
      const auto hi = simulate_events(s, 5, 2 * th).events.size();
      EXPECT_LE(hi, lo) << "seed " << seed << " threshold " << th;
    }
  }
}

TEST(SimulateEvents, ReversedFramesSwapPolarity) {
  SceneSpec s = canvas(20, 20, 3);
  s.objects.push_back(rect(1, 2, 2, 6, 6, 1.5, 0.5));
  s.objects.push_back(rect(2, 12, 10, 5, 7, -1, 0.7));
  std::vector<Tensor> frames;
  for (int t = 0; t < 5; ++t) frames.push_back(render_scene(s, t).image);
  std::vector<Tensor> reversed(frames.rbegin(), frames.rend());
  const EventStream fwd = events_from_frames(frames, 0.15), bwd = events_from_frames(reversed, 0.15);
  auto count = [](const EventStream& e, int p) {
    return std::count_if(e.events.begin(), e.events.end(), [p](const Event& v) { return v.p == p; });
  };
  ASSERT_GT(fwd.events.size(), 0u);
  EXPECT_EQ(count(fwd, 1), count(bwd, 0));
  EXPECT_EQ(count(fwd, 0), count(bwd, 1));
}

TEST(SimulateEvents, EventCountMatchesLogIntensityRule) {
  // Two flat frames: every pixel changes by the same log amount.
  Tensor a = Tensor::chw(1, 3, 4, 0.2), b = Tensor::chw(1, 3, 4, 0.8);
  const double dl = std::log(0.8 + kLogIntensityOffset) - std::log(0.2 + kLogIntensityOffset);
  const auto per_pixel = static_cast<std::size_t>(std::floor(dl / 0.3));
  const EventStream ev = events_from_frames({a, b}, 0.3);
  EXPECT_EQ(ev.events.size(), per_pixel * 12);
  for (const auto& e : ev.events) EXPECT_EQ(e.p, 1);
}

TEST(SimulateEvents, ArgumentErrors) {
  SceneSpec s = canvas(4, 4);
  EXPECT_THROW(simulate_events(s, 1, 0.1), InvalidArgument);
  EXPECT_THROW(simulate_events(s, 3, 0.0), InvalidArgument);
}

EventStream random_stream(Rng& rng, std::size_t n, std::uint32_t w, std::uint32_t h) {
  EventStream s{w, h, {}};
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t += rng.below(3);
    s.events.push_back({static_cast<std::uint16_t>(rng.below(w)), static_cast<std::uint16_t>(rng.below(h)), t,
                        static_cast<std::uint8_t>(rng.below(2))});
  }
  return s;
}

TEST(Voxelize, UnitEvent) {
  EventStream s{5, 4, {{3, 2, 10, 1}}};
  const Tensor v = voxelize(s, 1, 1);
  ASSERT_EQ(v.shape(), (Shape{1, 4, 5}));
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 5; ++x) EXPECT_EQ(v.at(0, y, x), (y == 2 && x == 3) ? 1.0 : 0.0);
}

TEST(Voxelize, ConservationDeskPreset) {
  Rng rng(5);
  const EventStream s = random_stream(rng, 4000, 16, 16);
  const Tensor v = voxelize(s, kDeskPreset.events_per_grid, kDeskPreset.num_grids);
  EXPECT_EQ(v.dim(0), 8u);
  // Opposite polarities cancel inside a cell, so only the signed sum is conserved.
  double signed_total = 0.0, abs_total = 0.0, expected = 0.0;
  for (double x : v.values()) signed_total += x, abs_total += std::abs(x);
  for (const Event& e : s.events) expected += e.p ? 1.0 : -1.0;
  EXPECT_EQ(signed_total, expected);
  EXPECT_LE(abs_total, 4000.0);
}

TEST(Voxelize, NewestSuffixInConsecutiveWindows) {
  Rng rng(9);
  const EventStream s = random_stream(rng, 137, 7, 6);
  const std::size_t epg = 10, ng = 5, first = 137 - epg * ng;
  const Tensor v = voxelize(s, epg, ng);
  Tensor expect({ng, 6, 7});
  for (std::size_t i = first; i < s.events.size(); ++i) {
    const Event& e = s.events[i];
    expect.at((i - first) / epg, e.y, e.x) += e.p ? 1.0 : -1.0;
  }
  EXPECT_EQ(v, expect);
}

TEST(Voxelize, InsufficientEventsCarriesCounts) {
  Rng rng(1);
  const EventStream s = random_stream(rng, 30, 4, 4);
  try {
    voxelize(s, 8, 4);
    FAIL();
  } catch (const InsufficientEvents& e) {
    EXPECT_EQ(e.required(), 32u);
    EXPECT_EQ(e.available(), 30u);
  }
}

TEST(Voxelize, PaperPresets) {
  EXPECT_EQ(kDsecPreset.events_per_grid, 100000u);
  EXPECT_EQ(kDsecPreset.num_grids, 40u);
  EXPECT_EQ(kDdd17Preset.events_per_grid, 32000u);
  EXPECT_EQ(kDdd17Preset.num_grids, 20u);
}

TEST(EventFile, RoundTrip) {
  testing::TempDir dir;
  EventStream s{640, 480, {{1, 2, 3, 1}, {639, 479, 3, 0}, {0, 0, 1ull << 40, 1}}};
  write_events(s, dir.path() / "a.evt");
  EXPECT_EQ(read_events(dir.path() / "a.evt"), s);
  write_events_csv(s, dir.path() / "a.csv");
  EXPECT_EQ(read_events_csv(dir.path() / "a.csv", 640, 480), s);
}

TEST(EventFile, LayoutIsLittleEndian) {
  EventStream s{2, 3, {{1, 2, 0x0102030405060708ull, 1}}};
  const std::string b = encode_events(s);
  ASSERT_EQ(b.size(), 4u + 4 + 4 + 8 + 13);
  EXPECT_EQ(b.substr(0, 4), "EVT1");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 2);
  EXPECT_EQ(static_cast<unsigned char>(b[20]), 1);
  EXPECT_EQ(static_cast<unsigned char>(b[24]), 0x08);
  EXPECT_EQ(static_cast<unsigned char>(b[31]), 0x01);
  EXPECT_EQ(static_cast<unsigned char>(b[32]), 1);
}

TEST(EventFile, FormatErrorsNameOffsets) {
  EventStream s{4, 4, {{1, 1, 5, 1}, {2, 2, 6, 0}}};
  std::string good = encode_events(s);

  std::string bad = good;
  bad[0] = 'X';
  try {
    decode_events(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }

  try {
    decode_events(good.substr(0, good.size() - 3));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 20u + 13);
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos);
  }

  bad = good;
  bad[20] = 4;  // x == width in record 0
  try {
    decode_events(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 20u);
    EXPECT_NE(std::string(e.what()).find("record 0"), std::string::npos);
  }

  bad = good;
  bad[20 + 13 + 4] = 0;  // record 1 timestamp drops to 0
  EXPECT_THROW(decode_events(bad), FormatError);

  bad = good;
  bad[20 + 12] = 2;  // polarity
  EXPECT_THROW(decode_events(bad), FormatError);

  EXPECT_THROW(decode_events(good + "x"), FormatError);
}

TEST(EventFile, MissingFileIsIoError) {
  EXPECT_THROW(read_events("/nonexistent/dir/x.evt"), IoError);
}

TEST(LabelPgm, RoundTripAndRejectsGarbage) {
  testing::TempDir dir;
  Rng rng(2);
  const LabelMap l = testing::random_label_map(rng, 7, 5, 9);
  write_label_pgm(l, dir.path() / "l.pgm");
  EXPECT_EQ(read_label_pgm(dir.path() / "l.pgm"), l);
  EXPECT_THROW(decode_pgm("P6\n1 1\n255\nx"), FormatError);
  EXPECT_THROW(decode_pgm("P5\n2 2\n255\nab"), FormatError);
}

}  // namespace
}  // namespace hpl
