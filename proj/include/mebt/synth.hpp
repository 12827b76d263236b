#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mebt/common.hpp"
#include "mebt/ndarray.hpp"
#include "mebt/rng.hpp"
#include "mebt/tensor_io.hpp"

// Bouncing-sprite videos. Sprites are filled squares on a black canvas whose
// color cycles through a palette with a fixed period, so frames k and
// k + period repeat the sprite color exactly: a long-range dependency a model
// can only capture by looking far back in time.

namespace mebt::synth {

struct Color {
  float r, g, b;
};

struct SceneSpec {
  Index num_sprites = 2;
  Index sprite_size = 7;
  std::vector<Color> palette = {{0.9f, 0.1f, 0.1f},
                                {0.1f, 0.9f, 0.1f},
                                {0.15f, 0.25f, 0.95f},
                                {0.95f, 0.85f, 0.1f}};
  Index period = 8;        // frames per full palette cycle
  bool bounce = true;
  Index canvas_h = 32;
  Index canvas_w = 32;
  Index channels = 3;

  void validate() const {
    if (num_sprites < 1) throw ConfigError("scene: num_sprites must be >= 1");
    if (sprite_size < 1) throw ConfigError("scene: sprite_size must be >= 1");
    if (sprite_size >= std::min(canvas_h, canvas_w))
      throw ConfigError("scene: sprite larger than canvas");
    if (palette.empty()) throw ConfigError("scene: palette must be non-empty");
    if (period < 2) throw ConfigError("scene: period must be >= 2");
    if (channels != 1 && channels != 3) throw ConfigError("scene: channels must be 1 or 3");
  }
};

struct SpriteState {
  Index x, y;                 // top-left corner, integer pixels
  Index color_index;          // palette slot at this frame
};

namespace detail {

struct Sprite {
  Index x, y;        // top-left corner
  Index vx, vy;      // pixels per frame
  Index phase;       // color phase offset
};

// Positions and velocities are integers; bounces reflect off the walls so the
// trajectory is exactly reproducible. Initial speed is drawn from {1, 2} per
// axis with a random sign, never zero on both axes.
inline std::vector<Sprite> init_sprites(const SceneSpec& spec, Rng& rng) {
  std::vector<Sprite> sprites;
  const Index max_x = spec.canvas_w - spec.sprite_size;
  const Index max_y = spec.canvas_h - spec.sprite_size;
  for (Index i = 0; i < spec.num_sprites; ++i) {
    Sprite s;
    s.x = rng.uniform_int(max_x + 1);
    s.y = rng.uniform_int(max_y + 1);
    s.vx = (1 + rng.uniform_int(2)) * (rng.uniform() < 0.5 ? -1 : 1);
    s.vy = (1 + rng.uniform_int(2)) * (rng.uniform() < 0.5 ? -1 : 1);
    s.phase = rng.uniform_int(spec.period);
    sprites.push_back(s);
  }
  return sprites;
}

// One axis of elastic reflection within [0, limit].
inline void step_axis(Index& p, Index& v, Index limit) {
  p += v;
  while (p < 0 || p > limit) {
    if (p < 0) {
      p = -p;
      v = -v;
    }
    if (p > limit) {
      p = 2 * limit - p;
      v = -v;
    }
  }
}

inline void step_sprites(const SceneSpec& spec, std::vector<Sprite>& sprites) {
  const Index max_x = spec.canvas_w - spec.sprite_size;
  const Index max_y = spec.canvas_h - spec.sprite_size;
  for (auto& s : sprites) {
    if (spec.bounce) {
      step_axis(s.x, s.vx, max_x);
      step_axis(s.y, s.vy, max_y);
    } else {
      s.x = ((s.x + s.vx) % (max_x + 1) + (max_x + 1)) % (max_x + 1);
      s.y = ((s.y + s.vy) % (max_y + 1) + (max_y + 1)) % (max_y + 1);
    }
  }
}

inline Index color_index_at(const SceneSpec& spec, Index phase, Index frame) {
  const Index k = (frame + phase) % spec.period;
  return k * static_cast<Index>(spec.palette.size()) / spec.period;
}

// Sprites are painted in reverse order so sprite 0 ends up on top.
inline void paint(const SceneSpec& spec, const std::vector<Sprite>& sprites, Index frame,
                  VideoArray& video, Index t) {
  const Index H = spec.canvas_h, W = spec.canvas_w, C = spec.channels;
  for (Index i = spec.num_sprites - 1; i >= 0; --i) {
    const auto& s = sprites[static_cast<std::size_t>(i)];
    const Color c = spec.palette[static_cast<std::size_t>(color_index_at(spec, s.phase, frame))];
    const std::array<float, 3> rgb = {c.r, c.g, c.b};
    for (Index dy = 0; dy < spec.sprite_size; ++dy)
      for (Index dx = 0; dx < spec.sprite_size; ++dx) {
        const Index y = s.y + dy, x = s.x + dx;
        float* px = &video.data[static_cast<std::size_t>(((t * H + y) * W + x) * C)];
        for (Index ch = 0; ch < C; ++ch) px[ch] = rgb[static_cast<std::size_t>(ch)];
      }
  }
}

}  // namespace detail

inline VideoArray gen_synthetic_video(const SceneSpec& spec, Index length, std::uint64_t seed) {
  spec.validate();
  if (length < 1) throw ConfigError("gen_synthetic_video: length must be >= 1");
  VideoArray video({length, spec.canvas_h, spec.canvas_w, spec.channels});
  Rng rng(seed);
  auto sprites = detail::init_sprites(spec, rng);
  for (Index t = 0; t < length; ++t) {
    if (t > 0) detail::step_sprites(spec, sprites);
    detail::paint(spec, sprites, t, video, t);
  }
  return video;
}

// Replays the dynamics to report where a sprite is and which color it wears at
// one frame, without rendering. Used to label generated clips.
inline SpriteState sprite_state_at(const SceneSpec& spec, std::uint64_t seed, Index frame,
                                   Index sprite) {
  spec.validate();
  check(frame >= 0, "sprite_state_at: frame must be >= 0");
  check(sprite >= 0 && sprite < spec.num_sprites, "sprite_state_at: sprite index out of range");
  Rng rng(seed);
  auto sprites = detail::init_sprites(spec, rng);
  for (Index t = 1; t <= frame; ++t) detail::step_sprites(spec, sprites);
  const auto& s = sprites[static_cast<std::size_t>(sprite)];
  return {s.x, s.y, detail::color_index_at(spec, s.phase, frame)};
}

struct CorpusEntry {
  std::string path;
  Index T, H, W, C;
  std::uint64_t seed;
};

struct CorpusManifest {
  std::vector<CorpusEntry> entries;
  std::string split;   // "train" or "val"
  std::uint64_t seed;  // corpus-level seed
};

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
  nlohmann::json j;
  j["split"] = m.split;
  j["seed"] = m.seed;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back({{"path", e.path},
                            {"T", e.T},
                            {"H", e.H},
                            {"W", e.W},
                            {"C", e.C},
                            {"seed", e.seed}});
  }
  return j;
}

inline CorpusManifest manifest_from_json(const nlohmann::json& j) {
  CorpusManifest m;
  try {
    m.split = j.at("split").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
      m.entries.push_back({e.at("path").get<std::string>(), e.at("T").get<Index>(),
                           e.at("H").get<Index>(), e.at("W").get<Index>(), e.at("C").get<Index>(),
                           e.at("seed").get<std::uint64_t>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad manifest: ") + ex.what());
  }
  return m;
}

inline CorpusManifest load_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("manifest " + path + " is not valid JSON: " + ex.what());
  }
  return manifest_from_json(j);
}

inline void save_manifest(const std::string& path, const CorpusManifest& m) {
  io::write_file(path, manifest_to_json(m).dump(2) + "\n");
}

// Writes `count` videos into out_dir with per-entry seed = corpus seed + index.
// `lengths` cycles across entries, so a mixed corpus interleaves short and
// long clips deterministically.
inline CorpusManifest build_corpus(const SceneSpec& spec, Index count,
                                   const std::vector<Index>& lengths, const std::string& out_dir,
                                   std::uint64_t seed, const std::string& split) {
  spec.validate();
  if (count < 1) throw ConfigError("build_corpus: count must be >= 1");
  if (lengths.empty()) throw ConfigError("build_corpus: need at least one length");
  std::filesystem::create_directories(out_dir);
  CorpusManifest m;
  m.split = split;
  m.seed = seed;
  for (Index i = 0; i < count; ++i) {
    const Index length = lengths[static_cast<std::size_t>(i % static_cast<Index>(lengths.size()))];
    const std::uint64_t entry_seed = seed + static_cast<std::uint64_t>(i);
    VideoArray video = gen_synthetic_video(spec, length, entry_seed);
    const std::string name = split + "_" + std::to_string(i) + ".mbt";
    const std::string path = (std::filesystem::path(out_dir) / name).string();
    io::save_tensor(path, video);
    m.entries.push_back({path, length, spec.canvas_h, spec.canvas_w, spec.channels, entry_seed});
  }
  save_manifest((std::filesystem::path(out_dir) / (split + "_manifest.json")).string(), m);
  return m;
}

}  // namespace mebt::synth
