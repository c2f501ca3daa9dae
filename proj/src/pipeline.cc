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

#include "facedub/pipeline.h"

#include "facedub/checkpoint.h"
#include "facedub/errors.h"
#include "facedub/hash.h"
#include "facedub/refselect.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <variant>

namespace facedub {
namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0;
  for (std::uint64_t p : parts) h = splitmix(h ^ p);
  return h;
}

using Field = std::variant<int PipelineConfig::*, double PipelineConfig::*, bool PipelineConfig::*,
                           std::uint64_t PipelineConfig::*, std::string PipelineConfig::*>;

const std::vector<std::pair<std::string, Field>>& fields() {
  using P = PipelineConfig;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"d", &P::d},
      {"tcn_channels", &P::tcn_channels},
      {"transformer_layers", &P::transformer_layers},
      {"n_self", &P::n_self},
      {"channels", &P::channels},
      {"n_alpha", &P::n_alpha},
      {"n_beta", &P::n_beta},
      {"num_vertices", &P::num_vertices},
      {"height", &P::height},
      {"width", &P::width},
      {"fps", &P::fps},
      {"n_f_train", &P::n_f_train},
      {"n_l_train", &P::n_l_train},
      {"n_f_infer", &P::n_f_infer},
      {"n_l_infer", &P::n_l_infer},
      {"stage1_epochs", &P::stage1_epochs},
      {"stage1_lr", &P::stage1_lr},
      {"stage1_window", &P::stage1_window},
      {"style_weight", &P::style_weight},
      {"style_temperature", &P::style_temperature},
      {"stage2_epochs", &P::stage2_epochs},
      {"stage2_lr", &P::stage2_lr},
      {"stage2_batch", &P::stage2_batch},
      {"stage2_target_psnr", &P::stage2_target_psnr},
      {"stage2_eval_every", &P::stage2_eval_every},
      {"fit_geometry", &P::fit_geometry},
      {"fit_iters", &P::fit_iters},
      {"fit_step", &P::fit_step},
      {"fit_lambda", &P::fit_lambda},
      {"fit_w_reg", &P::fit_w_reg},
      {"fit_w_lmk", &P::fit_w_lmk},
      {"seed", &P::seed},
      {"model_seed", &P::model_seed},
      {"model_path", &P::model_path},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return f;
  }
  throw DataError("unknown config key: " + key);
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw DataError("bad value for " + key + ": '" + s + "'");
  }
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_positive(int v, const char* name) {
  if (v <= 0) throw std::invalid_argument(std::string("config: ") + name + " must be positive");
}

void check_non_negative(double v, const char* name) {
  if (!(v >= 0) || !std::isfinite(v)) {
    throw std::invalid_argument(std::string("config: ") + name + " must be finite and >= 0");
  }
}

template <typename F>
auto as_data_error(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::filesystem::filesystem_error& e) {
    throw DataError(what + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  as_data_error("cannot create " + dir.string(), [&] {
    fs::create_directories(dir);
    return 0;
  });
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

MorphableModel dataset_model(const Dataset& data, const PipelineConfig& c) {
  const MorphableModel model = load_model(data.root / "model.fdc");
  if (model.num_vertices() != c.num_vertices || model.n_alpha() != c.n_alpha ||
      model.n_beta() != c.n_beta) {
    throw DataError("dataset model dimensions differ from the config");
  }
  return model;
}

// Everything stage 1 needs from one clip.
struct Stage1Clip {
  int speaker = 0;
  Waveform audio;
  Eigen::MatrixXd betas;  // T x n_beta
  nn::Matrix gt;          // T x 3L
  Vertices template_v;
};

std::vector<Stage1Clip> load_stage1_clips(const Dataset& data, const MorphableModel& model) {
  std::vector<Stage1Clip> out;
  for (const auto& dc : data.clips) {
    const SyntheticClip clip = read_clip(dc.dir, false);
    Stage1Clip s;
    s.speaker = dc.speaker;
    s.audio = clip.audio;
    const int t = clip.coeffs.size();
    if (clip.coeffs.n_beta() != model.n_beta() || clip.coeffs.n_alpha() != model.n_alpha()) {
      throw DataError("coefficient dimensions differ from the model in " + dc.dir.string());
    }
    s.betas.resize(t, model.n_beta());
    s.gt.resize(t, 3 * model.num_vertices());
    for (int i = 0; i < t; ++i) {
      const FrameCoeffs& f = clip.coeffs.frames[static_cast<std::size_t>(i)];
      s.betas.row(i) = f.beta.transpose();
      s.gt.row(i) = flatten_vertices(synthesize_vertices(model, f.alpha, f.beta));
    }
    s.template_v = Stage1Model::template_vertices(model, clip.coeffs.mean_alpha());
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("dataset has no clips");
  return out;
}

// Audio samples covering frames [start, start + len).
nn::Matrix audio_window(const Waveform& w, double fps, int start, int len) {
  const double per_frame = w.sample_rate / fps;
  const auto a = static_cast<std::size_t>(std::llround(start * per_frame));
  const auto b = std::min(w.samples.size(), static_cast<std::size_t>(std::llround((start + len) * per_frame)));
  nn::Matrix m(static_cast<nn::Index>(b - a), 1);
  for (std::size_t k = a; k < b; ++k) m(static_cast<nn::Index>(k - a), 0) = w.samples[k];
  return m;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + " became non-finite");
}

void write_trace(const fs::path& path, const std::vector<double>& trace) {
  std::ostringstream s;
  s << "epoch\tloss\n";
  for (std::size_t e = 0; e < trace.size(); ++e) s << e + 1 << '\t' << format_double(trace[e]) << '\n';
  write_text(path, s.str());
}

// Everything stage 2 needs from one clip.
struct Stage2Clip {
  std::vector<Image> frames;
  std::vector<nn::Matrix> gt;  // (H*W) x 3
  std::vector<PnccMap> geometry;
  std::vector<nn::Matrix> masks;
};

PnccMap pncc_for(const MorphableModel& model, const FrameCoeffs& f, int height, int width) {
  const Vertices v = synthesize_vertices(model, f.alpha, f.beta);
  return render_pncc(pose_and_project(v, f.pose, height, width), v, model, height, width);
}

std::vector<Stage2Clip> load_stage2_clips(const Dataset& data, const MorphableModel& model) {
  std::vector<Stage2Clip> out;
  for (const auto& dc : data.clips) {
    SyntheticClip clip = read_clip(dc.dir, true);
    Stage2Clip s;
    for (std::size_t i = 0; i < clip.frames.size(); ++i) {
      const Image& frame = clip.frames[i];
      if (frame.height != data.height || frame.width != data.width) {
        throw DataError("frame size differs from the dataset in " + dc.dir.string());
      }
      s.gt.push_back(to_rows(frame));
      s.geometry.push_back(pncc_for(model, clip.coeffs.frames[i], data.height, data.width));
      s.masks.push_back(to_rows(lip_mask(s.geometry.back(), model)));
    }
    s.frames = std::move(clip.frames);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("dataset has no clips");
  return out;
}

// Lazily encoded references of one clip.
class ReferenceCache {
 public:
  ReferenceCache(const Renderer& r, const Stage2Clip& clip) : r_(r), clip_(clip) {}
  const EncodedReference& get(int frame) {  // 1-based
    auto it = cache_.find(frame);
    if (it == cache_.end()) {
      const auto i = static_cast<std::size_t>(frame - 1);
      it = cache_.emplace(frame, EncodedReference{r_.encode_geometry(clip_.geometry[i].image),
                                                  r_.encode_texture(clip_.frames[i]), clip_.masks[i]})
               .first;
    }
    return it->second;
  }
  std::vector<EncodedReference> get(const std::vector<int>& frames) {
    std::vector<EncodedReference> out;
    for (int f : frames) out.push_back(get(f));
    return out;
  }

 private:
  const Renderer& r_;
  const Stage2Clip& clip_;
  std::map<int, EncodedReference> cache_;
};

nn::Tensor predict_frame(const Renderer& r, ReferenceCache& cache, const Stage2Clip& clip,
                         const ReferenceSet& refs, int frame) {
  const auto face = cache.get(refs.face_indices);
  const auto lip = cache.get(refs.lip_indices);
  const auto i = static_cast<std::size_t>(frame - 1);
  const nn::Tensor latent = r.dual_attention(cache.get(frame).geometry, face, lip, clip.masks[i]);
  return r.decode_texture(latent, clip.geometry[i].image);
}

double training_psnr(const Renderer& r, const PipelineConfig& c, const std::vector<Stage2Clip>& clips) {
  nn::NoGrad no_grad;
  const RendererConfig& rc = r.config();
  double total = 0;
  int count = 0;
  for (std::size_t k = 0; k < clips.size(); ++k) {
    ReferenceCache cache(r, clips[k]);
    const int t = static_cast<int>(clips[k].frames.size());
    for (int i = 1; i <= t; ++i) {
      const ReferenceSet refs = training_strategy(i, t, c.n_f_train, c.n_l_train, mix({c.seed, 0xe7a1, k, static_cast<std::uint64_t>(i)}));
      const nn::Matrix pred = predict_frame(r, cache, clips[k], refs, i).value();
      total += psnr(from_rows(pred, rc.height, rc.width), clips[k].frames[static_cast<std::size_t>(i - 1)]);
      ++count;
    }
  }
  return total / count;
}

std::vector<double> json_doubles(const nlohmann::json& j) {
  std::vector<double> out;
  if (j.is_array()) {
    for (const auto& v : j) out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

void PipelineConfig::validate() const {
  check_positive(d, "d");
  check_positive(tcn_channels, "tcn_channels");
  check_positive(transformer_layers, "transformer_layers");
  if (n_self < 0) throw std::invalid_argument("config: n_self must be >= 0");
  check_positive(channels, "channels");
  check_positive(n_alpha, "n_alpha");
  check_positive(n_beta, "n_beta");
  check_positive(num_vertices, "num_vertices");
  check_positive(height, "height");
  check_positive(width, "width");
  if (height % 4 != 0 || width % 4 != 0) throw std::invalid_argument("config: height and width must be multiples of 4");
  if (!(fps > 0) || !std::isfinite(fps)) throw std::invalid_argument("config: fps must be positive");
  check_positive(n_f_train, "n_f_train");
  check_positive(n_l_train, "n_l_train");
  check_positive(n_f_infer, "n_f_infer");
  check_positive(n_l_infer, "n_l_infer");
  if (stage1_epochs < 0) throw std::invalid_argument("config: stage1_epochs must be >= 0");
  check_non_negative(stage1_lr, "stage1_lr");
  if (stage1_window < 0) throw std::invalid_argument("config: stage1_window must be >= 0");
  check_non_negative(style_weight, "style_weight");
  if (!(style_temperature > 0)) throw std::invalid_argument("config: style_temperature must be positive");
  if (stage2_epochs < 0) throw std::invalid_argument("config: stage2_epochs must be >= 0");
  check_non_negative(stage2_lr, "stage2_lr");
  check_positive(stage2_batch, "stage2_batch");
  check_non_negative(stage2_target_psnr, "stage2_target_psnr");
  check_positive(stage2_eval_every, "stage2_eval_every");
  if (fit_iters < 0) throw std::invalid_argument("config: fit_iters must be >= 0");
  check_non_negative(fit_step, "fit_step");
  check_non_negative(fit_lambda, "fit_lambda");
  check_non_negative(fit_w_reg, "fit_w_reg");
  check_non_negative(fit_w_lmk, "fit_w_lmk");
}

Stage1Config PipelineConfig::stage1() const {
  Stage1Config s;
  s.audio = {d, tcn_channels, transformer_layers, num_vertices};
  s.n_self = n_self;
  s.n_beta = n_beta;
  s.seed = seed;
  return s;
}

RendererConfig PipelineConfig::stage2() const {
  RendererConfig r;
  r.channels = channels;
  r.height = height;
  r.width = width;
  r.n_f = n_f_train;
  r.n_l = n_l_train;
  r.seed = seed;
  return r;
}

FitOptions PipelineConfig::fit() const {
  FitOptions f;
  f.iters = fit_iters;
  f.step = fit_step;
  f.lambda = fit_lambda;
  f.w_reg = fit_w_reg;
  f.w_lmk = fit_w_lmk;
  return f;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.first);
    return k;
  }();
  return keys;
}

void set_config_value(PipelineConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  std::visit(
      [&](auto member) {
        using T = std::remove_cvref_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          c.*member = value;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1") {
            c.*member = true;
          } else if (value == "false" || value == "0") {
            c.*member = false;
          } else {
            throw DataError("bad value for " + key + ": '" + value + "'");
          }
        } else {
          c.*member = parse_number<T>(key, value);
        }
      },
      field(key));
}

std::string get_config_value(const PipelineConfig& c, const std::string& key) {
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cvref_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return c.*member;
        } else if constexpr (std::is_same_v<T, bool>) {
          return c.*member ? "true" : "false";
        } else if constexpr (std::is_same_v<T, double>) {
          return format_double(c.*member);
        } else {
          return std::to_string(c.*member);
        }
      },
      field(key));
}

std::string serialize_config(const PipelineConfig& c) {
  std::string out;
  for (const auto& key : config_keys()) out += key + " = " + get_config_value(c, key) + "\n";
  return out;
}

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig c;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("config line " + std::to_string(number) + ": expected key = value");
    set_config_value(c, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config " + path.string());
  std::stringstream s;
  s << in.rdbuf();
  return parse_config(s.str());
}

void save_config(const fs::path& path, const PipelineConfig& c) { write_text(path, serialize_config(c)); }

MorphableModel load_pipeline_model(const PipelineConfig& c) {
  MorphableModel model = c.model_path.empty() ? make_toy_model(c.model_seed, {c.n_alpha, c.n_beta})
                                              : load_model(c.model_path);
  if (model.num_vertices() != c.num_vertices || model.n_alpha() != c.n_alpha ||
      model.n_beta() != c.n_beta) {
    throw DataError("face model dimensions differ from the config");
  }
  return model;
}

std::vector<SyntheticSpeakerSpec> default_speakers(int n) {
  std::vector<SyntheticSpeakerSpec> out;
  for (int s = 0; s < n; ++s) {
    SyntheticSpeakerSpec spec;
    spec.seed = static_cast<std::uint64_t>(s) + 1;
    spec.amplitude = 0.3 + 0.25 * (s % 4);
    spec.jaw_freq_hz = 2.0 + 0.6 * (s % 3);
    spec.palette = s;
    spec.pose_drift = 0.04 + 0.02 * (s % 2);
    out.push_back(spec);
  }
  return out;
}

void synth_dataset(const DatasetSpec& spec, const PipelineConfig& c, const fs::path& out_dir) {
  c.validate();
  if (spec.speakers.empty()) throw std::invalid_argument("synth_dataset: no speakers");
  if (spec.clips_per_speaker <= 0) throw std::invalid_argument("synth_dataset: clips_per_speaker must be positive");
  for (const auto& s : spec.speakers) s.validate();
  const MorphableModel model = load_pipeline_model(c);
  ensure_dir(out_dir);
  save_model(out_dir / "model.fdc", model);

  nlohmann::json speakers = nlohmann::json::array();
  for (std::size_t s = 0; s < spec.speakers.size(); ++s) {
    char name[32];
    std::snprintf(name, sizeof name, "speaker_%03zu", s);
    nlohmann::json clips = nlohmann::json::array();
    for (int k = 0; k < spec.clips_per_speaker; ++k) {
      const int id = spec.first_clip + k;
      ClipOptions o;
      o.duration_s = spec.duration_s;
      o.fps = c.fps;
      o.height = c.height;
      o.width = c.width;
      o.clip = static_cast<std::uint64_t>(id);
      char clip_name[32];
      std::snprintf(clip_name, sizeof clip_name, "clip_%03d", id);
      as_data_error("cannot write dataset", [&] {
        write_clip(out_dir / name / clip_name, spec.speakers[s], synthesize_clip(model, spec.speakers[s], o));
        return 0;
      });
      clips.push_back(id);
    }
    speakers.push_back({{"name", name}, {"spec", spec.speakers[s].to_json()}, {"clips", clips}});
  }
  const nlohmann::json manifest = {{"format", "facedub-dataset"}, {"version", 1},
                                   {"fps", c.fps},                {"height", c.height},
                                   {"width", c.width},            {"duration_s", spec.duration_s},
                                   {"model", "model.fdc"},        {"speakers", speakers}};
  write_text(out_dir / "dataset.json", manifest.dump(2) + "\n");
}

Dataset open_dataset(const fs::path& root) {
  std::ifstream in(root / "dataset.json");
  if (!in) throw DataError("missing " + (root / "dataset.json").string());
  Dataset d;
  d.root = root;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("format") != "facedub-dataset" || j.at("version") != 1) throw DataError("unsupported dataset format");
    d.fps = j.at("fps").get<double>();
    d.height = j.at("height").get<int>();
    d.width = j.at("width").get<int>();
    const auto& speakers = j.at("speakers");
    d.num_speakers = static_cast<int>(speakers.size());
    for (int s = 0; s < d.num_speakers; ++s) {
      const auto& sp = speakers[static_cast<std::size_t>(s)];
      for (const auto& id : sp.at("clips")) {
        char clip_name[32];
        std::snprintf(clip_name, sizeof clip_name, "clip_%03d", id.get<int>());
        d.clips.push_back({s, id.get<int>(), root / sp.at("name").get<std::string>() / clip_name});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset.json: ") + e.what());
  }
  for (const auto& c : d.clips) {
    if (!fs::is_directory(c.dir)) throw DataError("missing clip directory " + c.dir.string());
  }
  if (!fs::exists(root / "model.fdc")) throw DataError("missing " + (root / "model.fdc").string());
  return d;
}

TrainSummary train_stage1(const PipelineConfig& c, const Dataset& data, const fs::path& run_dir,
                          const TrainOptions& options) {
  c.validate();
  if (std::abs(data.fps - c.fps) > 1e-9) throw DataError("dataset fps differs from the config");
  const MorphableModel model = dataset_model(data, c);
  const std::vector<Stage1Clip> clips = load_stage1_clips(data, model);
  ensure_dir(run_dir);
  save_config(run_dir / "config.txt", c);

  const Stage1Config cfg = c.stage1();
  Stage1Model m(cfg);
  nn::Adam adam(m.store().list());
  const fs::path ckpt = run_dir / "stage1.fdc";
  TrainSummary summary;
  if (options.resume && fs::exists(ckpt)) {
    if (!(read_stage1_config(ckpt) == cfg)) throw DataError("stage-1 checkpoint was trained with a different config");
    const nlohmann::json meta = load_checkpoint(ckpt, "stage1", 1, m.store(), &adam);
    summary.epochs = meta.value("epoch", 0);
    summary.loss_trace = json_doubles(meta.value("loss_trace", nlohmann::json::array()));
  }

  std::vector<std::pair<int, int>> windows;  // (clip, first frame)
  for (std::size_t k = 0; k < clips.size(); ++k) {
    const int t = static_cast<int>(clips[k].betas.rows());
    const int len = c.stage1_window > 0 ? c.stage1_window : t;
    for (int s = 0; s < t; s += len) windows.emplace_back(static_cast<int>(k), s);
  }
  std::vector<int> labels;
  for (const auto& clip : clips) labels.push_back(clip.speaker);
  const bool style_step = data.num_speakers >= 2 && c.style_weight > 0;

  auto save = [&] {
    save_stage1(ckpt, m, &adam, {{"epoch", summary.epochs}, {"loss_trace", summary.loss_trace}});
    write_trace(run_dir / "stage1_loss.tsv", summary.loss_trace);
  };
  for (int epoch = summary.epochs + 1; epoch <= c.stage1_epochs; ++epoch) {
    std::mt19937_64 rng(mix({c.seed, 1, static_cast<std::uint64_t>(epoch)}));
    std::vector<std::pair<int, int>> order = windows;
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (const auto& [k, start] : order) {
      const Stage1Clip& clip = clips[static_cast<std::size_t>(k)];
      const int t = static_cast<int>(clip.betas.rows());
      const int len = std::min(c.stage1_window > 0 ? c.stage1_window : t, t - start);
      const nn::Tensor feats = m.audio(nn::Tensor::constant(audio_window(clip.audio, c.fps, start, len)), c.fps);
      if (feats.rows() != len) throw DataError("audio length does not match the frame count");
      const nn::Tensor pred = m.generate(feats, clip.betas, clip.template_v, model);
      const nn::Tensor loss = stage1_loss(pred, clip.gt.middleRows(start, len), model);
      check_finite(loss.item(), "stage-1 loss");
      adam.zero_grad();
      loss.backward();
      adam.step(c.stage1_lr);
      total += loss.item();
    }
    if (style_step) {
      std::vector<nn::Tensor> styles;
      for (const auto& clip : clips) styles.push_back(m.style(clip.betas, model));
      const nn::Tensor loss = nn::scale(
          supervised_contrastive_loss(nn::concat_rows(styles), labels, c.style_temperature), c.style_weight);
      check_finite(loss.item(), "style loss");
      adam.zero_grad();
      loss.backward();
      adam.step(c.stage1_lr);
    }
    summary.loss_trace.push_back(total / static_cast<double>(order.size()));
    summary.epochs = epoch;
    if (options.log) *options.log << "stage1 epoch " << epoch << " loss " << summary.loss_trace.back() << "\n";
    if (epoch % 10 == 0) save();
  }
  save();
  summary.weights_hash = weights_hash(m.store());
  return summary;
}

double stage2_training_psnr(const Renderer& r, const PipelineConfig& c, const Dataset& data,
                            const MorphableModel& model) {
  return training_psnr(r, c, load_stage2_clips(data, model));
}

TrainSummary train_stage2(const PipelineConfig& c, const Dataset& data, const fs::path& run_dir,
                          const TrainOptions& options) {
  c.validate();
  if (data.height != c.height || data.width != c.width) throw DataError("dataset frame size differs from the config");
  const MorphableModel model = dataset_model(data, c);
  const std::vector<Stage2Clip> clips = load_stage2_clips(data, model);
  ensure_dir(run_dir);
  save_config(run_dir / "config.txt", c);

  const RendererConfig cfg = c.stage2();
  Renderer r(cfg);
  nn::Adam adam(r.store().list());
  const fs::path ckpt = run_dir / "stage2.fdc";
  TrainSummary summary;
  if (options.resume && fs::exists(ckpt)) {
    if (!(read_stage2_config(ckpt) == cfg)) throw DataError("stage-2 checkpoint was trained with a different config");
    const nlohmann::json meta = load_checkpoint(ckpt, "stage2", 1, r.store(), &adam);
    summary.epochs = meta.value("epoch", 0);
    summary.loss_trace = json_doubles(meta.value("loss_trace", nlohmann::json::array()));
    for (const auto& p : meta.value("psnr_trace", nlohmann::json::array())) {
      summary.psnr_trace.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
    }
  }

  std::vector<std::pair<int, int>> targets;  // (clip, 1-based frame)
  for (std::size_t k = 0; k < clips.size(); ++k) {
    for (int i = 1; i <= static_cast<int>(clips[k].frames.size()); ++i) targets.emplace_back(static_cast<int>(k), i);
  }
  auto save = [&] {
    nlohmann::json psnr_trace = nlohmann::json::array();
    for (const auto& [e, p] : summary.psnr_trace) psnr_trace.push_back({e, p});
    save_stage2(ckpt, r, &adam, {{"epoch", summary.epochs}, {"loss_trace", summary.loss_trace}, {"psnr_trace", psnr_trace}});
    write_trace(run_dir / "stage2_loss.tsv", summary.loss_trace);
  };
  const bool reached = !summary.psnr_trace.empty() && c.stage2_target_psnr > 0 &&
                       summary.psnr_trace.back().second >= c.stage2_target_psnr;
  for (int epoch = summary.epochs + 1; epoch <= c.stage2_epochs && !reached; ++epoch) {
    std::mt19937_64 rng(mix({c.seed, 2, static_cast<std::uint64_t>(epoch)}));
    std::vector<std::pair<int, int>> order = targets;
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(c.stage2_batch)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(c.stage2_batch));
      std::map<int, ReferenceCache> caches;
      std::vector<nn::Tensor> losses;
      for (std::size_t n = b; n < end; ++n) {
        const auto [k, i] = order[n];
        const Stage2Clip& clip = clips[static_cast<std::size_t>(k)];
        auto cache = caches.try_emplace(k, r, clip).first;
        const ReferenceSet refs =
            training_strategy(i, static_cast<int>(clip.frames.size()), c.n_f_train, c.n_l_train,
                              mix({c.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(k),
                                   static_cast<std::uint64_t>(i)}));
        losses.push_back(stage2_loss(predict_frame(r, cache->second, clip, refs, i),
                                     clip.gt[static_cast<std::size_t>(i - 1)]));
      }
      const nn::Tensor loss = nn::scale(nn::sum(nn::concat_rows(losses)), 1.0 / static_cast<double>(losses.size()));
      check_finite(loss.item(), "stage-2 loss");
      adam.zero_grad();
      loss.backward();
      adam.step(c.stage2_lr);
      total += loss.item();
      ++batches;
    }
    summary.loss_trace.push_back(total / batches);
    summary.epochs = epoch;
    bool stop = false;
    if (epoch % c.stage2_eval_every == 0 || epoch == c.stage2_epochs) {
      const double p = training_psnr(r, c, clips);
      summary.psnr_trace.emplace_back(epoch, p);
      stop = c.stage2_target_psnr > 0 && p >= c.stage2_target_psnr;
      if (options.log) *options.log << "stage2 epoch " << epoch << " training psnr " << p << "\n";
    }
    if (options.log) *options.log << "stage2 epoch " << epoch << " loss " << summary.loss_trace.back() << "\n";
    if (epoch % 10 == 0) save();
    if (stop) break;
  }
  save();
  summary.weights_hash = weights_hash(r.store());
  return summary;
}

int source_frame(int k, int t) {
  if (t <= 0 || k < 0) throw std::invalid_argument("source_frame: bad arguments");
  if (t == 1) return 0;
  const int period = 2 * (t - 1);
  const int m = k % period;
  return m < t ? m : period - m;
}

DubResult dub(const PipelineConfig& c, const fs::path& reference_dir, const fs::path& audio_path,
              const fs::path& stage1_path, const fs::path& stage2_path, const fs::path& out_dir,
              bool keep_geometry) {
  c.validate();
  const MorphableModel model = load_pipeline_model(c);
  const std::unique_ptr<Stage1Model> s1 = load_stage1(stage1_path);
  const std::unique_ptr<Renderer> s2 = load_stage2(stage2_path);
  if (s1->config().audio.num_vertices != model.num_vertices() || s1->config().n_beta != model.n_beta()) {
    throw DataError("stage-1 checkpoint does not match the face model");
  }
  const int height = s2->config().height, width = s2->config().width;

  const std::vector<Image> frames = read_frames(reference_dir / "frames");
  if (frames.front().height != height || frames.front().width != width) {
    throw DataError("reference frames differ in size from the stage-2 checkpoint");
  }
  CoeffTimeline coeffs;
  const fs::path coeff_file = reference_dir / "coeffs.txt";
  if (c.fit_geometry) {
    const LandmarkTrack track = read_landmarks(reference_dir / "landmarks.txt");
    const CoeffTimeline init = fs::exists(coeff_file) ? init_coeffs(coeff_file) : init_coeffs(track, model, c.fps);
    coeffs = optimize_coeffs(init, track, model, c.fit()).timeline;
  } else {
    if (!fs::exists(coeff_file)) throw DataError("missing " + coeff_file.string() + " and geometry fitting is off");
    coeffs = read_coeffs(coeff_file);
  }
  const int t_ref = static_cast<int>(frames.size());
  if (coeffs.size() != t_ref) throw DataError("reference coefficient count differs from its frame count");
  if (coeffs.n_alpha() != model.n_alpha() || coeffs.n_beta() != model.n_beta()) {
    throw DataError("reference coefficients do not match the face model");
  }
  if (t_ref < 2) throw DataError("reference video needs at least two frames");

  const Waveform audio = read_wav(audio_path);
  const int t_out = AudioEncoder::output_frames(audio.samples.size(), c.fps);
  if (t_out == 0) throw DataError("target audio is empty");

  nn::NoGrad no_grad;
  Eigen::MatrixXd betas(t_ref, model.n_beta());
  std::vector<Vertices> canonical;
  for (int i = 0; i < t_ref; ++i) {
    const FrameCoeffs& f = coeffs.frames[static_cast<std::size_t>(i)];
    betas.row(i) = f.beta.transpose();
    canonical.push_back(synthesize_vertices(model, f.alpha, f.beta));
  }
  const nn::Matrix generated =
      s1->generate(s1->audio(audio, c.fps), betas, Stage1Model::template_vertices(model, coeffs.mean_alpha()), model)
          .value();

  std::map<int, EncodedReference> encoded;
  auto reference = [&](int frame) -> const EncodedReference& {  // 1-based
    auto it = encoded.find(frame);
    if (it == encoded.end()) {
      const auto i = static_cast<std::size_t>(frame - 1);
      const PnccMap g = pncc_for(model, coeffs.frames[i], height, width);
      it = encoded.emplace(frame, s2->encode_reference(g, frames[i], model)).first;
    }
    return it->second;
  };

  const fs::path frame_dir = out_dir / "frames";
  ensure_dir(frame_dir);
  DubResult result;
  result.frames = t_out;
  LandmarkTrack landmarks;
  landmarks.height = height;
  landmarks.width = width;
  nlohmann::json frame_map = nlohmann::json::array();
  Hasher output;
  for (int k = 0; k < t_out; ++k) {
    const int src = source_frame(k, t_ref);
    const FrameCoeffs& f = coeffs.frames[static_cast<std::size_t>(src)];
    const Vertices merged = merge_lower_upper(unflatten_vertices(generated.row(k)), canonical[static_cast<std::size_t>(src)], model);
    const Projection posed = pose_and_project(merged, f.pose, height, width);
    PnccMap g = render_pncc(posed, merged, model, height, width);
    nn::Matrix lm(static_cast<nn::Index>(model.landmark_indices.size()), 2);
    for (std::size_t j = 0; j < model.landmark_indices.size(); ++j) {
      lm.row(static_cast<nn::Index>(j)) = posed.image_points.row(model.landmark_indices[j]);
    }
    landmarks.frames.push_back(lm);

    const ReferenceSet refs = inference_strategy(src + 1, canonical, model, c.n_f_infer, c.n_l_infer);
    std::vector<EncodedReference> face, lip;
    for (int i : refs.face_indices) face.push_back(reference(i));
    for (int i : refs.lip_indices) lip.push_back(reference(i));
    const Image img = quantize8(from_rows(s2->render(g, face, lip, model).value(), height, width));
    write_pnm(frame_dir / frame_name(k + 1), img);
    result.frame_hashes.push_back(Hasher().doubles(img.data).hex());
    output.text(result.frame_hashes.back());
    frame_map.push_back(src + 1);
    result.frame_map.push_back(src);
    if (keep_geometry) result.geometry.push_back(std::move(g));
  }
  result.output_hash = output.hex();
  write_landmarks(out_dir / "landmarks.txt", landmarks);

  nlohmann::json config = nlohmann::json::object();
  for (const auto& key : config_keys()) config[key] = get_config_value(c, key);
  const nlohmann::json manifest = {
      {"format", "facedub-dub-manifest"},
      {"version", 1},
      {"config", config},
      {"seeds", {{"seed", c.seed}, {"model_seed", c.model_seed}, {"stage1", s1->config().seed}, {"stage2", s2->config().seed}}},
      {"reference", {{"dir", reference_dir.string()}, {"frames", t_ref}, {"geometry", c.fit_geometry ? "fitted" : "ingested"}}},
      {"audio", {{"path", audio_path.string()}, {"hash", Hasher().doubles(audio.samples).hex()}, {"seconds", audio.duration()}}},
      {"stage1", {{"path", stage1_path.string()}, {"weights_hash", weights_hash(s1->store())}}},
      {"stage2", {{"path", stage2_path.string()}, {"weights_hash", weights_hash(s2->store())}}},
      {"frames", t_out},
      {"frame_map", frame_map},
      {"frame_hashes", result.frame_hashes},
      {"output_hash", result.output_hash}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

nlohmann::json evaluate(const fs::path& pred_dir, const fs::path& gt_dir, const MetricRegistry& registry,
                        const fs::path& report_path) {
  const std::vector<Image> pred = read_frames(pred_dir / "frames");
  const std::vector<Image> gt = read_frames(gt_dir / "frames");
  if (pred.size() != gt.size()) {
    throw DataError("frame counts differ: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  }
  if (!pred.front().same_shape(gt.front())) throw DataError("frame sizes differ");

  std::vector<double> psnrs, ssims;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    psnrs.push_back(psnr(pred[i], gt[i]));
    ssims.push_back(ssim(pred[i], gt[i]));
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  nlohmann::json metrics;
  metrics["psnr"] = {{"status", "ok"}, {"value", mean(psnrs)}, {"normalization", "dB for pixel range [0,1], capped at 100"},
                     {"per_frame", psnrs}};
  metrics["ssim"] = {{"status", "ok"}, {"value", mean(ssims)},
                     {"normalization", "channel-mean grayscale, 11x11 Gaussian window, sigma 1.5"}, {"per_frame", ssims}};

  const fs::path pred_lm = pred_dir / "landmarks.txt", gt_lm = gt_dir / "landmarks.txt";
  nlohmann::json lmd_entry = {{"normalization", "inter-ocular distance of the ground-truth landmarks"}};
  if (fs::exists(pred_lm) && fs::exists(gt_lm)) {
    const LandmarkTrack p = read_landmarks(pred_lm), g = read_landmarks(gt_lm);
    if (p.size() != g.size() || p.size() != static_cast<int>(pred.size())) throw DataError("landmark counts differ from frame counts");
    if (g.num_points() != 68 || p.num_points() != 68) {
      lmd_entry.update({{"status", "skipped"}, {"value", nullptr}, {"message", "needs the 68-point layout"}});
    } else {
      lmd_entry.update({{"status", "ok"}, {"value", lmd(p, g, lip_landmark_slots(), interocular_distance(g))}});
    }
  } else {
    lmd_entry.update({{"status", "skipped"}, {"value", nullptr}, {"message", "landmarks.txt missing"}});
  }
  metrics["lmd"] = lmd_entry;

  const MetricInputs inputs{&pred, &gt};
  for (const auto& name : MetricRegistry::known_names()) {
    const AdapterOutcome o = registry.run(name, inputs);
    nlohmann::json entry = {{"status", o.status}, {"normalization", "defined by the external adapter"}};
    entry["value"] = o.status == "ok" ? nlohmann::json(o.value) : nlohmann::json(nullptr);
    if (!o.message.empty()) entry["message"] = o.message;
    metrics[name] = entry;
  }
  nlohmann::json report = {{"schema", "facedub-eval"},
                           {"version", 1},
                           {"pred_dir", pred_dir.string()},
                           {"gt_dir", gt_dir.string()},
                           {"frames", pred.size()},
                           {"metrics", metrics}};
  if (!report_path.empty()) write_text(report_path, report.dump(2) + "\n");
  return report;
}

std::string check_report_schema(const nlohmann::json& report) {
  if (!report.is_object()) return "report is not an object";
  if (report.value("schema", "") != "facedub-eval") return "schema is not facedub-eval";
  if (!report.contains("version") || report["version"] != 1) return "version is not 1";
  if (!report.contains("frames") || !report["frames"].is_number_unsigned()) return "frames missing";
  if (!report.contains("metrics") || !report["metrics"].is_object()) return "metrics missing";
  std::vector<std::string> required = {"psnr", "ssim", "lmd"};
  for (const auto& n : MetricRegistry::known_names()) required.push_back(n);
  for (const auto& name : required) {
    if (!report["metrics"].contains(name)) return "metric " + name + " missing";
  }
  for (const auto& [name, m] : report["metrics"].items()) {
    if (!m.is_object()) return name + ": not an object";
    const std::string status = m.value("status", "");
    if (status != "ok" && status != "skipped" && status != "failed") return name + ": bad status";
    if (!m.contains("normalization") || !m["normalization"].is_string()) return name + ": normalization missing";
    if (!m.contains("value")) return name + ": value missing";
    if (status == "ok" && !m["value"].is_number()) return name + ": value is not a number";
    if (status != "ok" && !m["value"].is_null()) return name + ": value should be null";
    if (status != "ok" && !m.contains("message")) return name + ": message missing";
    if (m.contains("per_frame")) {
      if (!m["per_frame"].is_array() || m["per_frame"].size() != report["frames"].get<std::size_t>()) {
        return name + ": per_frame length differs from frames";
      }
    }
  }
  return "";
}

}  // namespace facedub
