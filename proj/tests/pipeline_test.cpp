// Privacy pipeline: subsampling, background median, variant composition,
// windowing, and the annotation/video/window-store file formats.

#include <gtest/gtest.h>

#include <cstdio>
#include <unistd.h>
#include <filesystem>
#include <fstream>

#include "veil/annotations.hpp"
#include "veil/background.hpp"
#include "veil/pipeline.hpp"
#include "veil/corpus.hpp"
#include "veil/synth.hpp"
#include "veil/variants.hpp"
#include "veil/videoio.hpp"
#include "veil/windows.hpp"

namespace {

namespace fs = std::filesystem;

using veil::AnnotationHeader;
using veil::AnnotationReader;
using veil::AnnotationWriter;
using veil::FrameAnnotation;
using veil::ImageF;
using veil::ImageU8;
using veil::KeypointLayout;
using veil::PersonKeypoints;
using veil::PersonMask;
using veil::Shape4;
using veil::SkeletonStyle;
using veil::Tensor4;
using veil::VariantKind;
using veil::WindowMeta;

std::string tmpdir() {
  static int counter = 0;
  const auto dir = fs::temp_directory_path() /
                   ("veil_pipeline_test_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
  fs::create_directories(dir);
  return dir.string();
}

TEST(TemporalSubsample, KeepsEvenIndices) {
  const auto idx = veil::temporal_subsample_indices(150);
  ASSERT_EQ(idx.size(), 75u);
  for (size_t i = 0; i < idx.size(); ++i) {
    EXPECT_EQ(idx[i], static_cast<int64_t>(2 * i));
  }
  EXPECT_EQ(veil::temporal_subsample_indices(1).size(), 1u);
  EXPECT_EQ(veil::temporal_subsample_indices(0).size(), 0u);
  EXPECT_EQ(veil::temporal_subsample_indices(151).size(), 76u);
}

TEST(Windowing, SeventyFiveFrameGroupsWithRemainderDropped) {
  const Shape4 shape{1, 75, 64, 64};
  ImageF frame(64, 64, 0.5f);
  int64_t emitted = 0;
  std::vector<WindowMeta> metas;
  veil::WindowAssembler a(shape, 15.0);
  for (int i = 0; i < 150; ++i) {
    a.add(frame, [&](const Tensor4<float>&, const WindowMeta& m) {
      ++emitted;
      metas.push_back(m);
    });
  }
  EXPECT_EQ(emitted, 2);
  EXPECT_EQ(a.dropped_frames(), 0);

  veil::WindowAssembler b(shape, 15.0);
  int64_t emitted_b = 0;
  for (int i = 0; i < 151; ++i) {
    b.add(frame, [&](const Tensor4<float>&, const WindowMeta&) {
      ++emitted_b;
    });
  }
  EXPECT_EQ(emitted_b, 2);
  EXPECT_EQ(b.dropped_frames(), 1);

  // Windows tile the timeline: start of window k+1 equals end of window k.
  ASSERT_EQ(metas.size(), 2u);
  EXPECT_EQ(metas[0].start_time, 0.0);
  EXPECT_EQ(metas[0].end_time, 5.0);
  EXPECT_EQ(metas[1].start_time, metas[0].end_time);
  EXPECT_EQ(metas[1].end_time, 10.0);
}

TEST(Windowing, NineHoursAtFifteenFpsGives6480Windows) {
  const Shape4 shape{1, 75, 64, 64};
  ImageF frame(64, 64, 0.f);
  veil::WindowAssembler a(shape, 15.0);
  int64_t emitted = 0;
  const int64_t frames = 486000;  // 9 h * 3600 s/h * 15 fps
  for (int64_t i = 0; i < frames; ++i) {
    a.add(frame, [&](const Tensor4<float>&, const WindowMeta&) { ++emitted; });
  }
  EXPECT_EQ(emitted, 6480);
}

TEST(Background, MedianRecoversOccludedPixels) {
  // One pixel occluded (value 200) in 4 of 10 frames; the rest see 10.
  std::vector<ImageU8> frames;
  std::vector<std::vector<PersonMask>> masks;
  for (int i = 0; i < 10; ++i) {
    ImageU8 f(4, 4, 1, 10);
    std::vector<PersonMask> fm;
    if (i < 4) {
      f.at(2, 2) = 200;
      PersonMask m(4, 4);
      m.at(2, 2) = 1;
      fm.push_back(m);
    }
    frames.push_back(f);
    masks.push_back(fm);
  }
  const ImageU8 bg = veil::estimate_background(frames, &masks);
  EXPECT_EQ(bg.at(2, 2), 10);
  EXPECT_EQ(bg.at(0, 0), 10);
  // Without masks the lower median still lands on the background value
  // because the occlusion covers under half the frames.
  const ImageU8 bg2 = veil::estimate_background(frames, nullptr);
  EXPECT_EQ(bg2.at(2, 2), 10);
}

TEST(Background, IdentityOnConstantSequences) {
  std::vector<ImageU8> frames(3, ImageU8(5, 4, 1, 77));
  EXPECT_EQ(veil::estimate_background(frames).at(3, 2), 77);
  std::vector<ImageU8> one(1, ImageU8(5, 4, 1, 42));
  EXPECT_EQ(veil::estimate_background(one).at(0, 0), 42);
  std::vector<ImageU8> empty;
  EXPECT_THROW(veil::estimate_background(empty), veil::Error);
}

PersonKeypoints person_with_two_confident_joints() {
  PersonKeypoints p;
  p.layout = KeypointLayout::coco17;
  p.joints.assign(17, veil::Joint{0.f, 0.f, 0.f});
  // Left shoulder (5) and left elbow (7): one connectivity edge.
  p.joints[5] = {8.f, 8.f, 0.9f};
  p.joints[7] = {24.f, 20.f, 0.8f};
  return p;
}

TEST(RenderSkeleton, DrawsOnlyEdgesAboveThreshold) {
  ImageU8 canvas(32, 32, 1, 0);
  SkeletonStyle style;
  veil::render_skeleton(canvas, {person_with_two_confident_joints()}, style);
  // Oracle: thick segment plus the two joint discs.
  ImageU8 want(32, 32, 1, 0);
  veil::draw_line_thick(want, 8, 8, 24, 20, style.line_thickness, 255);
  veil::draw_disc(want, 8, 8, style.joint_radius, 255);
  veil::draw_disc(want, 24, 20, style.joint_radius, 255);
  EXPECT_EQ(canvas.px, want.px);
  size_t lit = 0;
  for (const auto v : canvas.px) lit += v == 255;
  EXPECT_GT(lit, 0u);
}

TEST(RenderSkeleton, AllBelowThresholdLeavesCanvasUntouched) {
  ImageU8 canvas(32, 32, 1, 7);
  PersonKeypoints p = person_with_two_confident_joints();
  for (auto& j : p.joints) j.confidence = 0.05f;
  veil::render_skeleton(canvas, {p}, SkeletonStyle{});
  for (const auto v : canvas.px) EXPECT_EQ(v, 7);
  // Zero persons: untouched as well.
  veil::render_skeleton(canvas, {}, SkeletonStyle{});
  for (const auto v : canvas.px) EXPECT_EQ(v, 7);
}

TEST(RenderMask, FillsUnionOnce) {
  ImageU8 canvas(20, 20, 1, 3);
  std::vector<PersonMask> masks;
  PersonMask a(20, 20), b(20, 20);
  for (int y = 2; y < 12; ++y)
    for (int x = 2; x < 12; ++x) a.at(x, y) = 1;
  for (int y = 8; y < 14; ++y)
    for (int x = 8; x < 14; ++x) b.at(x, y) = 1;
  masks = {a, b};
  veil::render_mask(canvas, masks, 255);
  size_t lit = 0;
  for (const auto v : canvas.px) lit += v == 255;
  // |A| + |B| - |A ∩ B| = 100 + 36 - 16
  EXPECT_EQ(lit, 120u);

  ImageU8 untouched(20, 20, 1, 3);
  veil::render_mask(untouched, {}, 255);
  for (const auto v : untouched.px) EXPECT_EQ(v, 3);

  PersonMask wrong(10, 10);
  EXPECT_THROW(veil::render_mask(canvas, {wrong}, 255), veil::Error);
}

TEST(RenderMask, SquareMaskSetsExactArea) {
  ImageU8 canvas(20, 20, 1, 0);
  PersonMask m(20, 20);
  for (int y = 5; y < 15; ++y)
    for (int x = 5; x < 15; ++x) m.at(x, y) = 1;
  veil::render_mask(canvas, {m}, 255);
  size_t lit = 0;
  for (const auto v : canvas.px) lit += v == 255;
  EXPECT_EQ(lit, 100u);
}

struct ComposedScene {
  ImageU8 frame;
  std::vector<PersonKeypoints> persons;
  std::vector<PersonMask> masks;
  ImageU8 background;
};

ComposedScene make_scene() {
  ComposedScene s;
  s.frame = ImageU8(40, 30, 1, 50);
  s.background = ImageU8(40, 30, 1, 50);
  s.masks.emplace_back(40, 30);
  for (int y = 10; y < 26; ++y) {
    for (int x = 15; x < 23; ++x) {
      s.frame.at(x, y) = veil::synth::kPersonSentinel;
      s.masks[0].at(x, y) = 1;
    }
  }
  PersonKeypoints p;
  p.layout = KeypointLayout::body25;
  p.joints.assign(25, veil::Joint{19.f, 18.f, 0.9f});
  p.joints[0] = {19.f, 11.f, 0.9f};
  s.persons.push_back(p);
  return s;
}

TEST(ComposeVariant, RgbIsIdentity) {
  const ComposedScene s = make_scene();
  const ImageU8 out = veil::compose_variant(VariantKind::rgb, s.frame,
                                            s.persons, s.masks, nullptr, {});
  EXPECT_EQ(out.px, s.frame.px);
}

TEST(ComposeVariant, MaskNoBgWithNoPersonsIsBlack) {
  ImageU8 frame(16, 16, 1, 99);
  const ImageU8 out = veil::compose_variant(VariantKind::mask_nobg, frame, {},
                                            {}, nullptr, {});
  for (const auto v : out.px) EXPECT_EQ(v, 0);
}

TEST(ComposeVariant, SkeletonWithBackgroundErasesPersonPixels) {
  const ComposedScene s = make_scene();
  SkeletonStyle style;
  const ImageU8 out =
      veil::compose_variant(VariantKind::op_skel_bg, s.frame, s.persons,
                            s.masks, &s.background, style);
  int skel = 0;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const auto v = out.at(x, y);
      ASSERT_NE(v, veil::synth::kPersonSentinel) << x << "," << y;
      if (v == style.intensity) {
        ++skel;
      } else {
        EXPECT_EQ(v, s.background.at(x, y));
      }
    }
  }
  EXPECT_GT(skel, 0);
}

TEST(ComposeVariant, BgVariantRequiresBackground) {
  const ComposedScene s = make_scene();
  EXPECT_THROW(veil::compose_variant(VariantKind::mask_bg, s.frame, s.persons,
                                     s.masks, nullptr, {}),
               veil::Error);
}

TEST(Annotations, JsonlRoundTrip) {
  const std::string dir = tmpdir();
  const std::string path = dir + "/ann.jsonl";
  AnnotationHeader hdr{"detectron", KeypointLayout::coco17, 40, 30, true};
  FrameAnnotation fa;
  fa.frame_index = 0;
  PersonKeypoints p;
  p.layout = KeypointLayout::coco17;
  for (int i = 0; i < 17; ++i) {
    p.joints.push_back({1.5f * i, 2.25f * i, 0.5f});
  }
  fa.persons.push_back(p);
  PersonMask m(40, 30);
  for (int y = 4; y < 9; ++y)
    for (int x = 6; x < 16; ++x) m.at(x, y) = 1;
  fa.masks.push_back(m);
  {
    AnnotationWriter w(path, hdr);
    w.write(fa);
    FrameAnnotation fb = fa;
    fb.frame_index = 2;
    w.write(fb);
    w.flush();
  }
  AnnotationReader r(path);
  EXPECT_EQ(r.header().source, "detectron");
  EXPECT_EQ(r.header().layout, KeypointLayout::coco17);
  EXPECT_TRUE(r.header().has_masks);
  FrameAnnotation got;
  ASSERT_TRUE(r.next(got));
  EXPECT_EQ(got.frame_index, 0);
  ASSERT_EQ(got.persons.size(), 1u);
  ASSERT_EQ(got.persons[0].joints.size(), 17u);
  EXPECT_FLOAT_EQ(got.persons[0].joints[4].x, 6.0f);
  ASSERT_EQ(got.masks.size(), 1u);
  EXPECT_EQ(got.masks[0].bits, m.bits);
  ASSERT_TRUE(r.next(got));
  EXPECT_EQ(got.frame_index, 2);
  EXPECT_FALSE(r.next(got));
}

TEST(Annotations, RleRoundTripProperty) {
  veil::Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const int w = 1 + static_cast<int>(rng.next_below(50));
    const int h = 1 + static_cast<int>(rng.next_below(40));
    PersonMask m(w, h);
    for (auto& b : m.bits) b = rng.next_below(3) == 0 ? 1 : 0;
    const auto runs = veil::rle_encode(m);
    const PersonMask back = veil::rle_decode(runs, w, h);
    EXPECT_EQ(back.bits, m.bits);
  }
  EXPECT_THROW(veil::rle_decode({5, 2}, 2, 2), veil::IoError);
}

TEST(Annotations, RejectsMalformedRecords) {
  const std::string dir = tmpdir();
  {
    std::ofstream f(dir + "/bad1.jsonl");
    f << R"({"type":"veil.annotations","version":1,"layout":"coco17",)"
      << R"("frame_width":8,"frame_height":8,"has_masks":false})" << "\n";
    f << R"({"frame_index":0,"persons":[{"layout":"coco17","joints":[[1,2,0.5]]}],"masks":[]})"
      << "\n";
  }
  AnnotationReader r1(dir + "/bad1.jsonl");
  FrameAnnotation fa;
  EXPECT_THROW(r1.next(fa), veil::IoError);  // joint count != 17

  {
    std::ofstream f(dir + "/bad2.jsonl");
    f << R"({"type":"veil.annotations","version":1,"layout":"coco17",)"
      << R"("frame_width":8,"frame_height":8,"has_masks":false})" << "\n";
    f << R"({"frame_index":3,"persons":[],"masks":[]})" << "\n";
    f << R"({"frame_index":3,"persons":[],"masks":[]})" << "\n";
  }
  AnnotationReader r2(dir + "/bad2.jsonl");
  ASSERT_TRUE(r2.next(fa));
  EXPECT_THROW(r2.next(fa), veil::IoError);  // non-increasing index

  {
    std::ofstream f(dir + "/bad3.jsonl");
    f << "not json\n";
  }
  EXPECT_THROW(AnnotationReader r3(dir + "/bad3.jsonl"), veil::IoError);
}

TEST(WindowStore, RoundTripBitwise) {
  const std::string dir = tmpdir();
  const std::string path = dir + "/w.veilwin";
  const Shape4 shape{1, 75, 64, 64};
  veil::Rng rng(31);
  std::vector<Tensor4<float>> windows;
  {
    veil::WindowStoreWriter w(path, VariantKind::mask_bg, shape, 0xabcdefull,
                              7);
    for (int i = 0; i < 3; ++i) {
      Tensor4<float> t(shape);
      for (auto& v : t.data) v = static_cast<float>(rng.next_uniform());
      windows.push_back(t);
      w.add(t, WindowMeta{i, 5.0 * i, 5.0 * (i + 1)});
    }
    w.finalize();
  }
  veil::WindowStoreReader r(path);
  EXPECT_EQ(r.header().variant, VariantKind::mask_bg);
  EXPECT_EQ(r.header().count, 3);
  EXPECT_EQ(r.header().shape, shape);
  EXPECT_EQ(r.header().config_hash, 0xabcdefull);
  ASSERT_EQ(r.metas().size(), 3u);
  EXPECT_EQ(r.metas()[2].start_time, 10.0);
  for (int i = 0; i < 3; ++i) {
    const auto t = r.read(i);
    EXPECT_EQ(t.data, windows[static_cast<size_t>(i)].data);
  }
}

TEST(WindowStore, RejectsTruncatedAndForeignFiles) {
  const std::string dir = tmpdir();
  const std::string path = dir + "/w.veilwin";
  {
    veil::WindowStoreWriter w(path, VariantKind::rgb, Shape4{1, 75, 64, 64},
                              1, 1);
    Tensor4<float> t(Shape4{1, 75, 64, 64}, 0.5f);
    w.add(t, WindowMeta{0, 0.0, 5.0});
    w.finalize();
  }
  // Truncate the payload.
  fs::resize_file(path, fs::file_size(path) - 1024);
  EXPECT_THROW(veil::WindowStoreReader r(path), veil::IoError);

  const std::string junk = dir + "/junk.veilwin";
  {
    std::ofstream f(junk, std::ios::binary);
    f << "this is not a window store at all";
  }
  EXPECT_THROW(veil::WindowStoreReader r(junk), veil::IoError);
}

TEST(VideoIo, RawvRoundTripAndSeek) {
  const std::string dir = tmpdir();
  const std::string path = dir + "/v.rawv";
  veil::Rng rng(13);
  std::vector<ImageU8> frames;
  {
    veil::VideoWriter w(path, 32, 24, 3, 30, /*compress=*/true);
    for (int i = 0; i < 5; ++i) {
      ImageU8 f(32, 24, 3);
      for (auto& p : f.px) p = static_cast<uint8_t>(rng.next_below(256));
      frames.push_back(f);
      w.add(f);
    }
    w.finalize();
  }
  veil::VideoReader r(path);
  EXPECT_EQ(r.count(), 5);
  EXPECT_EQ(r.fps(), 30);
  EXPECT_EQ(r.read(3).px, frames[3].px);
  EXPECT_EQ(r.read(0).px, frames[0].px);  // backward seek
  EXPECT_THROW(r.read(5), veil::IoError);
}

TEST(VideoIo, PnmRoundTripAndDirReader) {
  const std::string dir = tmpdir();
  ImageU8 g(6, 4, 1);
  for (size_t i = 0; i < g.px.size(); ++i) g.px[i] = static_cast<uint8_t>(i);
  veil::write_pnm(dir + "/frame_000002.pgm", g);
  EXPECT_EQ(veil::read_pnm(dir + "/frame_000002.pgm").px, g.px);

  ImageU8 c(6, 4, 3);
  for (size_t i = 0; i < c.px.size(); ++i) c.px[i] = static_cast<uint8_t>(2 * i);
  veil::write_pnm(dir + "/frame_000000.ppm", c);
  veil::write_pnm(dir + "/frame_000001.ppm", c);

  veil::FrameDirReader r(dir, 30);
  EXPECT_EQ(r.count(), 3);
  EXPECT_EQ(r.fps(), 30);
  EXPECT_EQ(r.read(2).channels, 1);  // the pgm sorts last by number
}

TEST(Preprocess, SmallSceneEndToEndIsDeterministic) {
  const std::string dir = tmpdir();
  veil::synth::SceneConfig scene;
  scene.seed = 5;
  scene.duration = 22.0;  // 330 kept frames -> 4 windows, 30 dropped
  scene.fps = 30;
  scene.width = 176;
  scene.height = 120;
  scene.actors = veil::synth::default_actors(scene.width, scene.height);
  veil::synth::write_dataset(scene, dir);

  veil::PreprocessConfig cfg;
  cfg.variant = VariantKind::mask_bg;
  cfg.background_samples = 40;
  for (int run = 0; run < 2; ++run) {
    auto frames = veil::open_frames(dir + "/video.rawv");
    const auto res = veil::preprocess_dataset(
        *frames, dir + "/annotations_detectron.jsonl",
        dir + "/win" + std::to_string(run) + ".veilwin", cfg);
    EXPECT_EQ(res.windows, 4);
    EXPECT_EQ(res.frames_dropped, 30);
  }
  std::ifstream a(dir + "/win0.veilwin", std::ios::binary);
  std::ifstream b(dir + "/win1.veilwin", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)),
                       std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)),
                       std::istreambuf_iterator<char>());
  EXPECT_EQ(sa, sb);

  // Every emitted window holds values in [0,1].
  veil::WindowStoreReader r(dir + "/win0.veilwin");
  for (int64_t i = 0; i < r.header().count; ++i) {
    for (const float v : r.read(i).data) {
      ASSERT_GE(v, 0.f);
      ASSERT_LE(v, 1.f);
    }
  }
}

TEST(Preprocess, MissingAnnotationStreamIsRejected) {
  const std::string dir = tmpdir();
  veil::synth::SceneConfig scene;
  scene.seed = 5;
  scene.duration = 6.0;
  scene.width = 176;
  scene.height = 120;
  scene.actors = veil::synth::default_actors(scene.width, scene.height);
  veil::synth::write_dataset(scene, dir);

  veil::PreprocessConfig cfg;
  cfg.variant = VariantKind::op_skel_bg;
  auto frames = veil::open_frames(dir + "/video.rawv");
  // No annotation path at all.
  EXPECT_THROW(veil::preprocess_dataset(*frames, "", dir + "/w.veilwin", cfg),
               veil::ConfigError);
  // Wrong layout for the requested variant.
  EXPECT_THROW(
      veil::preprocess_dataset(*frames, dir + "/annotations_detectron.jsonl",
                               dir + "/w.veilwin", cfg),
      veil::ConfigError);
}

}  // namespace
