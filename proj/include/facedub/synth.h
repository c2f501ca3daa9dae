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

#pragma once

// Procedural talking-face clips: a waveform whose loudness envelope drives the
// jaw, speaker-specific expression statistics, and frames rendered from the
// morphable model.

#include "facedub/audio_style.h"
#include "facedub/geometry_fit.h"
#include "facedub/image.h"
#include "facedub/morphable_model.h"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace facedub {

struct SyntheticSpeakerSpec {
  std::uint64_t seed = 1;
  double amplitude = 1.0;    // expression scale, > 0
  double jaw_freq_hz = 3.0;  // syllable rate
  int palette = 0;
  double pose_drift = 0.05;  // radians

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpeakerSpec from_json(const nlohmann::json& j);
};

struct SyntheticClip {
  Waveform audio;
  CoeffTimeline coeffs;
  LandmarkTrack landmarks;
  std::vector<Image> frames;  // empty unless requested
};

struct ClipOptions {
  double duration_s = 4.0;
  double fps = 25.0;
  int height = 64;
  int width = 64;
  bool render_frames = true;
  std::uint64_t clip = 0;  // varies content, not the speaker
};

// Deterministic in (model, spec, options).
SyntheticClip synthesize_clip(const MorphableModel& model, const SyntheticSpeakerSpec& spec,
                              const ClipOptions& options);

// Per-vertex RGB colours of a speaker's face for the given canonical vertices.
nn::Matrix vertex_colours(const MorphableModel& model, const Vertices& canonical, int palette);
// Face over a flat palette background.
Image render_face(const MorphableModel& model, const Vertices& canonical, const PoseParams& pose,
                  int palette, int height, int width);

// Dataset layout, one directory per speaker:
//   <name>/spec.json, audio.wav, coeffs.txt, landmarks.txt,
//   frames/frame_000001.ppm ...
void write_clip(const std::filesystem::path& dir, const SyntheticSpeakerSpec& spec,
                const SyntheticClip& clip);
SyntheticClip read_clip(const std::filesystem::path& dir, bool load_frames = true);

std::string frame_name(int index);  // 1-based, "frame_000001.ppm"
std::vector<Image> read_frames(const std::filesystem::path& dir);
void write_frames(const std::filesystem::path& dir, const std::vector<Image>& frames);

}  // namespace facedub
