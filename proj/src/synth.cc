// Copyright 2026 The facedub Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "facedub/synth.h"

#include "facedub/errors.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

namespace facedub {

namespace {

constexpr double kTwoPi = 6.283185307179586;

struct Palette {
  std::array<double, 3> skin, lip, background, feature;
};

const std::array<Palette, 4>& palettes() {
  static const std::array<Palette, 4> p = {{
      {{0.87, 0.68, 0.55}, {0.72, 0.28, 0.30}, {0.20, 0.30, 0.45}, {0.25, 0.18, 0.14}},
      {{0.62, 0.44, 0.32}, {0.55, 0.22, 0.22}, {0.82, 0.82, 0.78}, {0.12, 0.09, 0.07}},
      {{0.95, 0.80, 0.70}, {0.85, 0.40, 0.45}, {0.30, 0.50, 0.30}, {0.45, 0.32, 0.20}},
      {{0.45, 0.30, 0.22}, {0.40, 0.16, 0.16}, {0.60, 0.45, 0.25}, {0.08, 0.06, 0.05}},
  }};
  return p;
}

const Palette& palette(int id) {
  const auto& p = palettes();
  return p[static_cast<std::size_t>(((id % 4) + 4) % 4)];
}

// Speaker-level constants drawn from the spec seed.
struct Speaker {
  Eigen::VectorXd alpha;
  double f0 = 150;
  double jaw_gain = 1, spread_gain = 0, pucker_gain = 0, cheek_gain = 0, smile_bias = 0;
};

Speaker make_speaker(const MorphableModel& model, const SyntheticSpeakerSpec& spec) {
  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ull + 1);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Speaker s;
  s.alpha.resize(model.n_alpha());
  for (int j = 0; j < s.alpha.size(); ++j) s.alpha(j) = 0.6 * n(rng);
  s.f0 = 110 + 120 * u(rng);
  s.jaw_gain = 0.8 + 0.4 * u(rng);
  s.spread_gain = 0.5 * n(rng);
  s.pucker_gain = 0.5 * n(rng);
  s.cheek_gain = 0.5 * n(rng);
  s.smile_bias = 0.5 * n(rng);
  return s;
}

// Sum of raised-cosine syllable bumps, clamped to [0, 1].
class Envelope {
 public:
  Envelope(double duration, double rate, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double t = 0.1 * u(rng);
    while (t < duration + 1.0) {
      const double spacing = (0.7 + 0.6 * u(rng)) / rate;
      const double height = u(rng) < 0.15 ? 0.0 : 0.4 + 0.6 * u(rng);
      bumps_.push_back({t + 0.5 * spacing, 0.4 * spacing, height});
      t += spacing;
    }
  }
  double operator()(double t) const {
    double v = 0;
    for (const auto& b : bumps_) {
      const double x = (t - b[0]) / b[1];
      if (std::abs(x) < 1) v += b[2] * 0.5 * (1 + std::cos(3.141592653589793 * x));
    }
    return std::clamp(v, 0.0, 1.0);
  }

 private:
  std::vector<std::array<double, 3>> bumps_;  // centre, half width, height
};

}  // namespace

void SyntheticSpeakerSpec::validate() const {
  if (!(amplitude > 0)) throw std::invalid_argument("speaker amplitude must be positive");
  if (!(jaw_freq_hz > 0)) throw std::invalid_argument("jaw frequency must be positive");
  if (!(pose_drift >= 0)) throw std::invalid_argument("pose drift must be non-negative");
}

nlohmann::json SyntheticSpeakerSpec::to_json() const {
  return {{"seed", seed}, {"amplitude", amplitude}, {"jaw_freq_hz", jaw_freq_hz},
          {"palette", palette}, {"pose_drift", pose_drift}};
}

SyntheticSpeakerSpec SyntheticSpeakerSpec::from_json(const nlohmann::json& j) {
  try {
    SyntheticSpeakerSpec s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.amplitude = j.at("amplitude").get<double>();
    s.jaw_freq_hz = j.at("jaw_freq_hz").get<double>();
    s.palette = j.at("palette").get<int>();
    s.pose_drift = j.at("pose_drift").get<double>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad speaker spec: ") + e.what());
  }
}

SyntheticClip synthesize_clip(const MorphableModel& model, const SyntheticSpeakerSpec& spec,
                              const ClipOptions& options) {
  spec.validate();
  if (!(options.duration_s > 0) || !(options.fps > 0)) {
    throw std::invalid_argument("clip duration and fps must be positive");
  }
  const Speaker speaker = make_speaker(model, spec);
  std::mt19937_64 rng(spec.seed * 1000003ull + options.clip * 7919ull + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Envelope env(options.duration_s, spec.jaw_freq_hz, rng);
  double phase[8];
  for (double& p : phase) p = kTwoPi * u(rng);

  SyntheticClip clip;
  const auto n_samples = static_cast<std::size_t>(std::llround(options.duration_s * kAudioSampleRate));
  clip.audio.samples.resize(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double t = static_cast<double>(i) / kAudioSampleRate;
    clip.audio.samples[i] = 0.8 * env(t) * std::sin(kTwoPi * speaker.f0 * t);
  }

  const int frames = static_cast<int>(std::llround(options.duration_s * options.fps));
  std::vector<double> blinks;
  for (double t = 0.5 + 2.5 * u(rng); t < options.duration_s; t += 2.0 + 2.0 * u(rng)) blinks.push_back(t);

  const double a = spec.amplitude;
  clip.coeffs.fps = options.fps;
  for (int f = 0; f < frames; ++f) {
    const double t = (f + 0.5) / options.fps;
    const double e = env(t);
    FrameCoeffs c;
    c.alpha = speaker.alpha;
    c.beta = Eigen::VectorXd::Zero(model.n_beta());
    c.beta(0) = a * speaker.jaw_gain * e;
    c.beta(1) = a * (speaker.spread_gain * e + 0.3 * std::sin(kTwoPi * 0.4 * t + phase[0]));
    c.beta(2) = a * speaker.pucker_gain * env(t - 0.08);
    c.beta(3) = 0.5 * c.beta(0);
    c.beta(4) = a * 0.4 * std::sin(kTwoPi * 0.25 * t + phase[1]);
    for (double b : blinks) {
      if (std::abs(t - b) < 0.08) c.beta(5) = 1.0;
    }
    c.beta(6) = a * speaker.cheek_gain * e;
    c.beta(7) = a * (speaker.smile_bias + 0.2 * std::sin(kTwoPi * 0.3 * t + phase[2]));
    for (int j = 8; j < model.n_beta(); ++j) {
      c.beta(j) = 0.1 * a * std::sin(kTwoPi * (0.2 + 0.05 * j) * t + phase[j % 8]);
    }
    c.pose.scale = 0.36 * options.height * (1 + 0.02 * std::sin(kTwoPi * 0.1 * t + phase[3]));
    c.pose.rotation = spec.pose_drift * Eigen::Vector3d(std::sin(kTwoPi * 0.13 * t + phase[4]),
                                                        std::sin(kTwoPi * 0.11 * t + phase[5]),
                                                        0.5 * std::sin(kTwoPi * 0.07 * t + phase[6]));
    c.pose.translation = Eigen::Vector3d(0.03 * std::sin(kTwoPi * 0.09 * t + phase[7]),
                                         0.02 * std::sin(kTwoPi * 0.08 * t + phase[3]), 0.0);
    clip.coeffs.frames.push_back(std::move(c));
  }
  clip.landmarks = project_landmarks(model, clip.coeffs, options.height, options.width);
  if (options.render_frames) {
    for (const auto& c : clip.coeffs.frames) {
      clip.frames.push_back(render_face(model, synthesize_vertices(model, c.alpha, c.beta), c.pose,
                                        spec.palette, options.height, options.width));
    }
  }
  return clip;
}

nn::Matrix vertex_colours(const MorphableModel& model, const Vertices& canonical, int palette_id) {
  const Palette& p = palette(palette_id);
  const nn::Matrix ncc = model.normalized_coords(canonical);
  nn::Matrix rgb(canonical.size(), 3);
  for (int i = 0; i < canonical.size(); ++i) {
    const double shade = 0.75 + 0.25 * (1.0 - ncc(i, 2)) + 0.08 * (ncc(i, 0) - 0.5);
    for (int c = 0; c < 3; ++c) rgb(i, c) = p.skin[static_cast<std::size_t>(c)] * shade;
  }
  for (int i : model.lip_region_indices) {
    for (int c = 0; c < 3; ++c) rgb(i, c) = p.lip[static_cast<std::size_t>(c)];
  }
  const auto& lm = model.landmark_indices;
  auto paint = [&](int first, int last, const std::array<double, 3>& col, double gain) {
    for (int k = first; k <= last && k < static_cast<int>(lm.size()); ++k) {
      for (int c = 0; c < 3; ++c) rgb(lm[static_cast<std::size_t>(k)], c) = gain * col[static_cast<std::size_t>(c)];
    }
  };
  paint(17, 26, p.feature, 1.0);  // brows
  paint(36, 47, p.feature, 0.8);  // eyes
  paint(60, 67, p.lip, 0.45);     // inner lips
  return rgb.cwiseMin(1.0).cwiseMax(0.0);
}

Image render_face(const MorphableModel& model, const Vertices& canonical, const PoseParams& pose,
                  int palette_id, int height, int width) {
  const Projection proj = pose_and_project(canonical, pose, height, width);
  const Rasterization raster =
      rasterize(proj.image_points, proj.posed.coords.col(2), model.topology, height, width);
  Image img = interpolate(raster, model.topology, vertex_colours(model, canonical, palette_id));
  const Palette& p = palette(palette_id);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (raster.covered(y, x)) continue;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = p.background[static_cast<std::size_t>(c)];
    }
  }
  return img;
}

std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.ppm", index);
  return buf;
}

void write_frames(const std::filesystem::path& dir, const std::vector<Image>& frames) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    write_pnm(dir / frame_name(static_cast<int>(i) + 1), frames[i]);
  }
}

std::vector<Image> read_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("missing frame directory: " + dir.string());
  std::vector<Image> frames;
  for (int i = 1;; ++i) {
    const auto path = dir / frame_name(i);
    if (!std::filesystem::exists(path)) break;
    frames.push_back(read_pnm(path));
    if (!frames.back().same_shape(frames.front())) throw DataError("frame size changes at " + path.string());
  }
  if (frames.empty()) throw DataError("no frames in " + dir.string());
  return frames;
}

void write_clip(const std::filesystem::path& dir, const SyntheticSpeakerSpec& spec,
                const SyntheticClip& clip) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "spec.json");
    if (!out) throw DataError("cannot write to " + dir.string());
    out << spec.to_json().dump(2) << "\n";
  }
  write_wav(dir / "audio.wav", clip.audio);
  write_coeffs(dir / "coeffs.txt", clip.coeffs);
  write_landmarks(dir / "landmarks.txt", clip.landmarks);
  if (!clip.frames.empty()) write_frames(dir / "frames", clip.frames);
}

SyntheticClip read_clip(const std::filesystem::path& dir, bool load_frames) {
  SyntheticClip clip;
  clip.audio = read_wav(dir / "audio.wav");
  clip.coeffs = read_coeffs(dir / "coeffs.txt");
  clip.landmarks = read_landmarks(dir / "landmarks.txt");
  if (load_frames) {
    clip.frames = read_frames(dir / "frames");
    if (static_cast<int>(clip.frames.size()) != clip.coeffs.size()) {
      throw DataError("frame count differs from coefficient count in " + dir.string());
    }
  }
  if (clip.landmarks.size() != clip.coeffs.size()) {
    throw DataError("landmark count differs from coefficient count in " + dir.string());
  }
  return clip;
}

}  // namespace facedub
