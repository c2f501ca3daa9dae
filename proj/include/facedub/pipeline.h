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

// Dataset generation, configuration, training loops for both stages,
// dubbing and evaluation.

#include "facedub/eval_metrics.h"
#include "facedub/geometry_fit.h"
#include "facedub/geometry_gen.h"
#include "facedub/renderer.h"
#include "facedub/synth.h"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace facedub {

struct PipelineConfig {
  // Network sizes.
  int d = 128;
  int tcn_channels = 32;
  int transformer_layers = 2;
  int n_self = 4;
  int channels = 64;
  // Face model and frames.
  int n_alpha = 8;
  int n_beta = 8;
  int num_vertices = 200;
  int height = 256;
  int width = 256;
  double fps = 25.0;
  // References per target frame.
  int n_f_train = 5;
  int n_l_train = 5;
  int n_f_infer = 5;
  int n_l_infer = 25;
  // Stage 1.
  int stage1_epochs = 200;
  double stage1_lr = 1e-3;
  int stage1_window = 25;  // frames per step; 0 = whole clip
  double style_weight = 0.1;
  double style_temperature = 0.1;
  // Stage 2.
  int stage2_epochs = 300;
  double stage2_lr = 2e-3;
  int stage2_batch = 4;
  double stage2_target_psnr = 0.0;  // early stop on training PSNR; 0 disables
  int stage2_eval_every = 2;
  // Geometry fitting for reference videos without coefficients.
  bool fit_geometry = false;
  int fit_iters = 200;
  double fit_step = 1e-2;
  double fit_lambda = 0.2;
  double fit_w_reg = 1e-3;
  double fit_w_lmk = 1.0;
  // Seeds and the face model (empty path: toy model from model_seed).
  std::uint64_t seed = 1;
  std::uint64_t model_seed = 1;
  std::string model_path;

  // Throws std::invalid_argument naming the first bad key.
  void validate() const;
  Stage1Config stage1() const;
  RendererConfig stage2() const;
  FitOptions fit() const;
  bool operator==(const PipelineConfig&) const = default;
};

// Flat "key = value" text, one key per line, '#' starts a comment. Keys are
// the field names above. Unknown keys and unparsable values throw DataError.
const std::vector<std::string>& config_keys();
std::string serialize_config(const PipelineConfig& c);
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const PipelineConfig& c);
void set_config_value(PipelineConfig& c, const std::string& key, const std::string& value);
std::string get_config_value(const PipelineConfig& c, const std::string& key);

// Toy model from the config, or the model file when model_path is set.
// Throws DataError when its sizes disagree with the config.
MorphableModel load_pipeline_model(const PipelineConfig& c);

// Dataset layout:
//   <root>/dataset.json, <root>/model.fdc,
//   <root>/speaker_000/clip_000/{spec.json, audio.wav, coeffs.txt,
//   landmarks.txt, frames/}
struct DatasetSpec {
  std::vector<SyntheticSpeakerSpec> speakers;
  int clips_per_speaker = 1;
  int first_clip = 0;  // clip ids first_clip, first_clip + 1, ...
  double duration_s = 4.0;
};

struct DatasetClip {
  int speaker = 0;
  int clip = 0;
  std::filesystem::path dir;
};

struct Dataset {
  std::filesystem::path root;
  double fps = 25.0;
  int height = 0;
  int width = 0;
  int num_speakers = 0;
  std::vector<DatasetClip> clips;
};

// n procedural speakers with distinct amplitude, jaw rate, palette and drift.
std::vector<SyntheticSpeakerSpec> default_speakers(int n);

// Deterministic in (spec, config). Throws DataError when out_dir is not writable.
void synth_dataset(const DatasetSpec& spec, const PipelineConfig& c, const std::filesystem::path& out_dir);
Dataset open_dataset(const std::filesystem::path& root);

struct TrainOptions {
  bool resume = false;      // continue from <run_dir>/stage{1,2}.fdc when present
  std::ostream* log = nullptr;
};

struct TrainSummary {
  int epochs = 0;                  // epochs completed in total
  std::vector<double> loss_trace;  // one mean loss per epoch
  std::vector<std::pair<int, double>> psnr_trace;  // stage 2: (epoch, training PSNR)
  std::string weights_hash;
};

// Run directory: config.txt, stage1.fdc / stage2.fdc, stage1_loss.tsv /
// stage2_loss.tsv. Training is deterministic per epoch, so resuming to E
// epochs equals a single E-epoch run. Throws DataError for missing dataset
// files or a checkpoint whose config disagrees, NumericError on a
// non-finite loss.
TrainSummary train_stage1(const PipelineConfig& c, const Dataset& data,
                          const std::filesystem::path& run_dir, const TrainOptions& options = {});
// Teacher mode: geometry comes from the dataset coefficients; stage-1
// weights are never read.
TrainSummary train_stage2(const PipelineConfig& c, const Dataset& data,
                          const std::filesystem::path& run_dir, const TrainOptions& options = {});

// Mean training-frame PSNR with training-strategy references under a fixed seed.
double stage2_training_psnr(const Renderer& r, const PipelineConfig& c, const Dataset& data,
                            const MorphableModel& model);

// Reference video frame shown at output frame k (0-based) of n: identity
// when n <= t, otherwise a forward-backward sweep over the t frames.
int source_frame(int k, int t);

struct DubResult {
  int frames = 0;
  std::vector<std::string> frame_hashes;
  std::string output_hash;
  std::vector<PnccMap> geometry;  // per output frame, when requested
  std::vector<int> frame_map;     // 0-based reference frame per output frame
};

// Writes out_dir/frames/frame_%06d.ppm, landmarks.txt and manifest.json. The reference directory holds frames/ plus coeffs.txt (or
// landmarks.txt with fit_geometry). Throws DataError for empty audio or
// missing inputs.
DubResult dub(const PipelineConfig& c, const std::filesystem::path& reference_dir,
              const std::filesystem::path& audio_path, const std::filesystem::path& stage1_path,
              const std::filesystem::path& stage2_path, const std::filesystem::path& out_dir,
              bool keep_geometry = false);

// Compares pred_dir/frames with gt_dir/frames (and landmarks.txt when both
// have one). Throws DataError when the frame counts differ. The report is
// also written to `report_path` unless it is empty.
nlohmann::json evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                        const MetricRegistry& registry, const std::filesystem::path& report_path = {});
// Empty when `report` follows the documented schema, else the first problem.
std::string check_report_schema(const nlohmann::json& report);

}  // namespace facedub
