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

#include "facedub/audio_style.h"

#include "facedub/container.h"
#include "facedub/errors.h"
#include "facedub/hash.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace facedub {

namespace {

constexpr int kStrides[] = {5, 4, 4, 4};
constexpr double kFeatureRate = 50.0;  // 16000 / (5 * 4 * 4 * 4)

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + static_cast<std::size_t>(i)]);
  return v;
}
std::uint16_t get_u16(const std::string& s, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                    (static_cast<unsigned char>(s[at + 1]) << 8));
}

nn::Tensor pad_rows(const nn::Tensor& x, nn::Index min_rows) {
  if (x.rows() >= min_rows) return x;
  const nn::Tensor parts[] = {x, nn::Tensor::constant(nn::Matrix::Zero(min_rows - x.rows(), x.cols()))};
  return nn::concat_rows(parts);
}

// `rows` stacked copies of a 1 x c row.
nn::Tensor broadcast_rows(const nn::Tensor& row, nn::Index rows) {
  return nn::add_row(nn::Tensor::constant(nn::Matrix::Zero(rows, row.cols())), row);
}

}  // namespace

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::string out;
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  out += "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, 2 * n);
  for (double x : w.samples) {
    const auto v = static_cast<std::int16_t>(std::lround(std::clamp(x, -1.0, 1.0) * 32767.0));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string s = ss.str();
  if (s.size() < 12 || s.compare(0, 4, "RIFF") != 0 || s.compare(8, 4, "WAVE") != 0) {
    throw DataError("not a RIFF/WAVE file: " + path.string());
  }
  Waveform w;
  bool have_fmt = false;
  std::size_t at = 12;
  while (at + 8 <= s.size()) {
    const std::string id = s.substr(at, 4);
    const std::uint32_t size = get_u32(s, at + 4);
    const std::size_t body = at + 8;
    if (body + size > s.size()) throw DataError("truncated WAV chunk in " + path.string());
    if (id == "fmt ") {
      if (size < 16 || get_u16(s, body) != 1 || get_u16(s, body + 2) != 1 ||
          get_u16(s, body + 14) != 16) {
        throw DataError("WAV must be mono 16-bit PCM: " + path.string());
      }
      w.sample_rate = static_cast<int>(get_u32(s, body + 4));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError("WAV data before format chunk: " + path.string());
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] = static_cast<std::int16_t>(get_u16(s, body + 2 * i)) / 32767.0;
      }
      return w;
    }
    at = body + size + (size & 1);
  }
  throw DataError("WAV has no data chunk: " + path.string());
}

AudioEncoder::AudioEncoder(nn::ParameterStore& store, const AudioStyleConfig& cfg,
                           std::mt19937_64& rng) {
  nn::Index in = 1;
  for (int i = 0; i < 4; ++i) {
    tcn_.emplace_back(store, "audio.tcn" + std::to_string(i), in, cfg.tcn_channels,
                      2 * kStrides[i], kStrides[i], 0, rng);
    in = cfg.tcn_channels;
  }
  in_proj_ = nn::Linear(store, "audio.in_proj", cfg.tcn_channels, cfg.d, rng);
  for (int i = 0; i < cfg.transformer_layers; ++i) {
    const std::string p = "audio.layer" + std::to_string(i);
    blocks_.push_back({nn::LayerNorm(store, p + ".ln1", cfg.d), nn::LayerNorm(store, p + ".ln2", cfg.d),
                       nn::AttentionLayer(store, p + ".attn", cfg.d, rng, 0.5),
                       nn::Mlp(store, p + ".ffn", cfg.d, 2 * cfg.d, cfg.d, rng, 0.5)});
  }
  out_proj_ = nn::Linear(store, "audio.out_proj", cfg.d, cfg.d, rng);
}

int AudioEncoder::output_frames(std::size_t num_samples, double fps) {
  return static_cast<int>(std::llround(static_cast<double>(num_samples) * fps / kAudioSampleRate));
}

nn::Tensor AudioEncoder::native(const nn::Tensor& samples) const {
  if (samples.rows() == 0 || samples.cols() != 1) throw std::invalid_argument("empty waveform");
  nn::Tensor x = samples;
  for (const auto& conv : tcn_) x = nn::gelu(conv(pad_rows(x, conv.kernel)));
  x = in_proj_(x);
  for (const auto& b : blocks_) {
    const nn::Tensor h = b.ln1(x);
    x = nn::add(x, b.attn(h, h, h));
    x = nn::add(x, b.ffn(b.ln2(x)));
  }
  return out_proj_(x);
}

nn::Tensor AudioEncoder::operator()(const nn::Tensor& samples, double fps) const {
  const int frames = output_frames(static_cast<std::size_t>(samples.rows()), fps);
  if (frames <= 0) throw std::invalid_argument("audio is shorter than one video frame");
  const nn::Tensor feats = native(samples);
  return nn::matmul(
      nn::Tensor::constant(interpolation_matrix(static_cast<int>(feats.rows()), kFeatureRate, frames, fps)),
      feats);
}

nn::Tensor AudioEncoder::operator()(const Waveform& w, double fps) const {
  if (w.sample_rate != kAudioSampleRate) {
    throw std::invalid_argument("audio must be sampled at 16 kHz (got " +
                                std::to_string(w.sample_rate) + ")");
  }
  if (w.samples.empty()) throw std::invalid_argument("empty waveform");
  nn::Matrix col(static_cast<nn::Index>(w.samples.size()), 1);
  for (std::size_t i = 0; i < w.samples.size(); ++i) col(static_cast<nn::Index>(i), 0) = w.samples[i];
  return (*this)(nn::Tensor::constant(std::move(col)), fps);
}

nn::Matrix interpolation_matrix(int rows, double rate, int frames, double fps) {
  nn::Matrix m = nn::Matrix::Zero(frames, rows);
  for (int t = 0; t < frames; ++t) {
    const double f = std::clamp((t + 0.5) / fps * rate - 0.5, 0.0, rows - 1.0);
    const int i0 = static_cast<int>(f);
    const int i1 = std::min(i0 + 1, rows - 1);
    const double a = f - i0;
    m(t, i0) += 1.0 - a;
    m(t, i1) += a;
  }
  return m;
}

VertexEncoder::VertexEncoder(nn::ParameterStore& store, const AudioStyleConfig& cfg,
                             std::mt19937_64& rng)
    : mlp(store, "evtx", 3 * cfg.num_vertices, cfg.d, cfg.d, rng),
      input_size_(3 * cfg.num_vertices) {}

nn::Tensor VertexEncoder::operator()(const nn::Tensor& flat_vertices) const {
  if (flat_vertices.cols() != input_size_) {
    throw std::invalid_argument("vertex encoder expects " + std::to_string(input_size_) +
                                " inputs, got " + std::to_string(flat_vertices.cols()));
  }
  return mlp(flat_vertices);
}

Eigen::VectorXd VertexEncoder::encode(const Vertices& v) const {
  return (*this)(nn::Tensor::constant(flatten_vertices(v))).value().row(0).transpose();
}

nn::Matrix flatten_vertices(const Vertices& v) {
  return Eigen::Map<const nn::Matrix>(v.coords.data(), 1, v.coords.size());
}

Vertices unflatten_vertices(const nn::Matrix& row) {
  if (row.rows() != 1 || row.cols() % 3 != 0) throw std::invalid_argument("bad flattened vertices");
  return Vertices(Eigen::Map<const nn::Matrix>(row.data(), row.cols() / 3, 3));
}

StyleModule::StyleModule(nn::ParameterStore& store, const AudioStyleConfig& cfg,
                         std::mt19937_64& rng)
    : style_fc(store, "style.fc", 2 * cfg.d, cfg.d, rng),
      injector(store, "style.inject", cfg.d, rng, 0.5) {}

nn::Tensor StyleModule::extract_style(const Eigen::MatrixXd& beta_seq, const MorphableModel& model,
                                      const VertexEncoder& evtx) const {
  if (beta_seq.rows() < 2) throw std::invalid_argument("style extraction needs at least 2 frames");
  if (beta_seq.cols() != model.n_beta()) throw std::invalid_argument("beta width does not match the model");
  // Canonical row order so that any permutation gives the same arithmetic.
  std::vector<Eigen::RowVectorXd> rows;
  for (Eigen::Index t = 0; t < beta_seq.rows(); ++t) rows.push_back(beta_seq.row(t));
  std::sort(rows.begin(), rows.end(), [](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });
  const auto t_len = static_cast<nn::Index>(rows.size());
  nn::Matrix verts(t_len, model.mean_shape.size());
  for (nn::Index t = 0; t < t_len; ++t) {
    verts.row(t) = (model.mean_shape + model.expr_basis * rows[static_cast<std::size_t>(t)].transpose()).transpose();
  }
  const nn::Tensor enc = evtx(nn::Tensor::constant(std::move(verts)));
  const nn::Tensor mu = nn::mean_rows(enc);
  const nn::Tensor centred = nn::sub(enc, broadcast_rows(mu, t_len));
  const nn::Tensor sigma = nn::sqrt(nn::mean_rows(nn::square(centred)));
  const nn::Tensor stats[] = {mu, sigma};
  return style_fc(nn::concat_cols(stats));
}

nn::Tensor StyleModule::inject_style(const nn::Tensor& s, const nn::Tensor& a) const {
  if (s.rows() != 1 || s.cols() != a.cols()) throw std::invalid_argument("style/audio dims differ");
  return nn::add_row(a, injector(s, a, a));
}

nn::Tensor supervised_contrastive_loss(const nn::Tensor& embeddings, const std::vector<int>& labels,
                                       double temperature) {
  const nn::Index n = embeddings.rows();
  if (static_cast<nn::Index>(labels.size()) != n) throw std::invalid_argument("label count mismatch");
  const nn::Tensor z = nn::l2_normalize_rows(embeddings);
  nn::Matrix diag = nn::Matrix::Zero(n, n);
  diag.diagonal().setConstant(-1e9);
  const nn::Tensor logp = nn::log_softmax_rows(
      nn::add(nn::scale(nn::matmul_nt(z, z), 1.0 / temperature), nn::Tensor::constant(diag)));
  nn::Matrix w = nn::Matrix::Zero(n, n);
  int anchors = 0;
  for (nn::Index i = 0; i < n; ++i) {
    int pos = 0;
    for (nn::Index j = 0; j < n; ++j) pos += j != i && labels[i] == labels[j];
    if (pos == 0) continue;
    ++anchors;
    for (nn::Index j = 0; j < n; ++j) {
      if (j != i && labels[i] == labels[j]) w(i, j) = -1.0 / pos;
    }
  }
  if (anchors == 0) return nn::Tensor::scalar(0.0);
  return nn::scale(nn::sum(nn::mul(logp, nn::Tensor::constant(w))), 1.0 / anchors);
}

std::string FeatureCache::key(const Waveform& w, double fps, const std::string& weights_hash) {
  Hasher h;
  h.doubles(w.samples).bytes(&w.sample_rate, sizeof w.sample_rate).bytes(&fps, sizeof fps).text(weights_hash);
  return h.hex();
}

std::optional<nn::Matrix> FeatureCache::load(const std::string& key) const {
  const auto path = dir_ / (key + ".fdc");
  if (!std::filesystem::exists(path)) return std::nullopt;
  const Container c = read_container(path);
  if (c.kind != "audio_features" || !c.has_array("features")) {
    throw DataError("bad feature cache entry: " + path.string());
  }
  return c.array("features");
}

void FeatureCache::store(const std::string& key, const nn::Matrix& features) const {
  std::filesystem::create_directories(dir_);
  Container c;
  c.kind = "audio_features";
  c.arrays.push_back({"features", features});
  write_container(dir_ / (key + ".fdc"), c);
}

}  // namespace facedub
