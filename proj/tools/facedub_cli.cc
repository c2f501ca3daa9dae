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

// Command-line front end: dataset synthesis, geometry fitting, training,
// dubbing, evaluation and reference-selection dumps.

#include "facedub/errors.h"
#include "facedub/pipeline.h"
#include "facedub/refselect.h"

#include <CLI11.hpp>

#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace facedub;

namespace {

std::string join(const std::vector<int>& v) {
  std::string out;
  for (int x : v) out += (out.empty() ? "" : " ") + std::to_string(x);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"facedub: audio-driven visual dubbing on synthetic talking faces"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "key = value config file, applied before flags");
  std::map<std::string, std::string> overrides;
  for (const auto& key : config_keys()) {
    app.add_option_function<std::string>("--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; },
                                         "config key " + key)
        ->group("Config keys");
  }

  auto* synth = app.add_subcommand("synth-data", "Write a synthetic multi-speaker dataset");
  std::string synth_out;
  int speakers = 1, clips = 1, first_clip = 0;
  double duration = 4.0;
  synth->add_option("--out", synth_out, "dataset directory")->required();
  synth->add_option("--speakers", speakers, "number of speakers")->check(CLI::PositiveNumber);
  synth->add_option("--clips", clips, "clips per speaker")->check(CLI::PositiveNumber);
  synth->add_option("--first-clip", first_clip, "id of the first clip");
  synth->add_option("--duration", duration, "seconds per clip")->check(CLI::PositiveNumber);

  auto* fit = app.add_subcommand("fit-geometry", "Fit per-frame coefficients to a landmark track");
  std::string fit_landmarks, fit_init, fit_out;
  fit->add_option("--landmarks", fit_landmarks, "landmarks.txt")->required();
  fit->add_option("--init", fit_init, "initial coeffs.txt (heuristic init when absent)");
  fit->add_option("--out", fit_out, "output coeffs.txt")->required();

  auto* train = app.add_subcommand("train", "Train stage 1 (geometry) or stage 2 (renderer)");
  int stage = 1;
  std::string train_data, train_run;
  bool resume = false;
  train->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--run", train_run, "run directory")->required();
  train->add_flag("--resume", resume, "continue from the checkpoint in the run directory");

  auto* dub_cmd = app.add_subcommand("dub", "Re-render a reference video for a target audio track");
  std::string ref_dir, audio, ckpt1, ckpt2, dub_out;
  dub_cmd->add_option("--reference", ref_dir, "directory with frames/ and coeffs.txt or landmarks.txt")->required();
  dub_cmd->add_option("--audio", audio, "16 kHz mono WAV")->required();
  dub_cmd->add_option("--stage1", ckpt1, "stage-1 checkpoint")->required();
  dub_cmd->add_option("--stage2", ckpt2, "stage-2 checkpoint")->required();
  dub_cmd->add_option("--out", dub_out, "output directory")->required();

  auto* eval = app.add_subcommand("evaluate", "Compare predicted frames with ground truth");
  std::string pred_dir, gt_dir, report_path;
  eval->add_option("--pred", pred_dir, "directory with frames/ [landmarks.txt]")->required();
  eval->add_option("--gt", gt_dir, "directory with frames/ [landmarks.txt]")->required();
  eval->add_option("--report", report_path, "report path (default <pred>/report.json)");

  auto* select = app.add_subcommand("select-refs", "Print the reference frames chosen for one target frame");
  int frames = 0, index = 1;
  std::string mode = "train", coeffs_path;
  std::uint64_t ref_seed = 0;
  select->add_option("--frames", frames, "video length T (train mode)");
  select->add_option("--index", index, "1-based target frame")->required();
  select->add_option("--mode", mode, "train or infer")->check(CLI::IsMember({"train", "infer"}));
  select->add_option("--coeffs", coeffs_path, "coeffs.txt of the reference video (infer mode)");
  select->add_option("--ref-seed", ref_seed, "seed for the lip references (train mode)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    PipelineConfig c = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    for (const auto& [key, value] : overrides) set_config_value(c, key, value);
    c.validate();

    if (*synth) {
      DatasetSpec spec;
      spec.speakers = default_speakers(speakers);
      spec.clips_per_speaker = clips;
      spec.first_clip = first_clip;
      spec.duration_s = duration;
      synth_dataset(spec, c, synth_out);
      std::cout << "wrote " << speakers * clips << " clips to " << synth_out << "\n";
    } else if (*fit) {
      const MorphableModel model = load_pipeline_model(c);
      const LandmarkTrack track = read_landmarks(fit_landmarks);
      const CoeffTimeline init = fit_init.empty() ? init_coeffs(track, model, c.fps) : init_coeffs(fit_init);
      const FitResult r = optimize_coeffs(init, track, model, c.fit());
      write_coeffs(fit_out, r.timeline);
      std::cout << "mean reprojection error " << mean_reprojection_error(r.timeline, track, model) << " px\n";
    } else if (*train) {
      TrainOptions o;
      o.resume = resume;
      o.log = &std::cout;
      const Dataset d = open_dataset(train_data);
      const TrainSummary s = stage == 1 ? train_stage1(c, d, train_run, o) : train_stage2(c, d, train_run, o);
      std::cout << "epochs " << s.epochs << " weights " << s.weights_hash << "\n";
    } else if (*dub_cmd) {
      const DubResult r = dub(c, ref_dir, audio, ckpt1, ckpt2, dub_out);
      std::cout << "wrote " << r.frames << " frames, output hash " << r.output_hash << "\n";
    } else if (*eval) {
      const fs::path report = report_path.empty() ? fs::path(pred_dir) / "report.json" : fs::path(report_path);
      const nlohmann::json j = evaluate(pred_dir, gt_dir, MetricRegistry{}, report);
      for (const auto& [name, m] : j["metrics"].items()) {
        std::cout << name << " " << m["status"].get<std::string>();
        if (m["value"].is_number()) std::cout << " " << m["value"].get<double>();
        std::cout << "\n";
      }
    } else if (*select) {
      ReferenceSet refs;
      if (mode == "train") {
        if (frames <= 0) throw std::invalid_argument("--frames is required in train mode");
        refs = training_strategy(index, frames, c.n_f_train, c.n_l_train, ref_seed);
      } else {
        if (coeffs_path.empty()) throw std::invalid_argument("--coeffs is required in infer mode");
        const MorphableModel model = load_pipeline_model(c);
        std::vector<Vertices> canonical;
        for (const auto& f : read_coeffs(coeffs_path).frames) canonical.push_back(synthesize_vertices(model, f.alpha, f.beta));
        refs = inference_strategy(index, canonical, model, c.n_f_infer, c.n_l_infer);
      }
      std::cout << "face " << join(refs.face_indices) << "\nlip " << join(refs.lip_indices) << "\n";
    }
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
