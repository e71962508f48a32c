#include "neuromatch/mm_model.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "neuromatch/types.hpp"

namespace neuromatch::model {

namespace {

using json = nlohmann::json;

struct TensorSpec {
  std::string name;
  Eigen::Index rows, cols;
  Eigen::Index fan_in;  // 0: zeros; -1: ones
};

void add_lstm_specs(std::vector<TensorSpec>& specs, const std::string& prefix, int in, int hidden) {
  specs.push_back({prefix + ".w_ih", 4 * hidden, in, in});
  specs.push_back({prefix + ".w_hh", 4 * hidden, hidden, hidden});
  specs.push_back({prefix + ".b_ih", 4 * hidden, 1, 0});
  specs.push_back({prefix + ".b_hh", 4 * hidden, 1, 0});
}

void add_encoder_specs(std::vector<TensorSpec>& specs, const std::string& prefix,
                       const ModelConfig& c) {
  const int e = c.embed_dim;
  for (const char* gate : {"wq", "wk", "wv", "wo"})
    specs.push_back({prefix + ".attn." + gate, e, e, e});
  for (const char* gate : {"bq", "bk", "bv", "bo"})
    specs.push_back({prefix + ".attn." + gate, 1, e, 0});
  specs.push_back({prefix + ".ff.w1", e, c.ff_dim, e});
  specs.push_back({prefix + ".ff.b1", 1, c.ff_dim, 0});
  specs.push_back({prefix + ".ff.w2", c.ff_dim, e, c.ff_dim});
  specs.push_back({prefix + ".ff.b2", 1, e, 0});
  for (const char* ln : {"ln1", "ln2"}) {
    specs.push_back({prefix + "." + ln + ".gamma", 1, e, -1});
    specs.push_back({prefix + "." + ln + ".beta", 1, e, 0});
  }
}

std::vector<TensorSpec> tensor_specs(const ModelConfig& c) {
  std::vector<TensorSpec> specs;
  specs.push_back({"eeg.conv1.w", c.conv1_maps,
                   static_cast<Eigen::Index>(c.eeg_channels) * c.conv1_kernel,
                   static_cast<Eigen::Index>(c.eeg_channels) * c.conv1_kernel});
  specs.push_back({"eeg.conv1.b", c.conv1_maps, 1, 0});
  specs.push_back({"eeg.conv2.w", c.conv2_maps,
                   static_cast<Eigen::Index>(c.conv1_maps) * c.conv2_time_kernel,
                   static_cast<Eigen::Index>(c.conv1_maps) * c.conv2_time_kernel});
  specs.push_back({"eeg.conv2.b", c.conv2_maps, 1, 0});
  specs.push_back({"speech.conv.w", c.conv2_maps, c.speech_kernel, c.speech_kernel});
  specs.push_back({"speech.conv.b", c.conv2_maps, 1, 0});
  if (c.context == ContextKind::recurrent) {
    add_lstm_specs(specs, "eeg.ctx", c.conv2_maps, c.embed_dim);
    add_lstm_specs(specs, "speech.ctx", c.conv2_maps, c.embed_dim);
    add_lstm_specs(specs, "text.ctx1", c.text_input_dim, c.embed_dim);
    add_lstm_specs(specs, "text.ctx2", c.embed_dim, c.embed_dim);
  } else {
    for (const char* branch : {"eeg", "speech"}) {
      specs.push_back({std::string(branch) + ".in.w", c.embed_dim, c.conv2_maps, c.conv2_maps});
      specs.push_back({std::string(branch) + ".in.b", c.embed_dim, 1, 0});
      add_encoder_specs(specs, std::string(branch) + ".ctx", c);
    }
    specs.push_back({"text.in.w", c.embed_dim, c.text_input_dim, c.text_input_dim});
    specs.push_back({"text.in.b", c.embed_dim, 1, 0});
    add_encoder_specs(specs, "text.ctx1", c);
    add_encoder_specs(specs, "text.ctx2", c);
  }
  return specs;
}

Eigen::MatrixXd positional_encoding(Eigen::Index n, Eigen::Index dim) {
  Eigen::MatrixXd pe(n, dim);
  for (Eigen::Index pos = 0; pos < n; ++pos)
    for (Eigen::Index d = 0; d < dim; ++d) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, 2.0 * static_cast<double>(d / 2) / static_cast<double>(dim));
      pe(pos, d) = (d % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

}  // namespace

void ModelConfig::validate() const {
  if (eeg_channels < 1 || conv1_maps < 1 || conv2_maps < 1 || embed_dim < 1 ||
      text_input_dim < 1 || conv1_kernel < 1 || conv2_time_kernel < 1 || speech_kernel < 1)
    raise(ErrorCode::invalid_argument, "model config: dimensions must be positive");
  if (time_stride < 1) raise(ErrorCode::invalid_argument, "model config: stride must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    raise(ErrorCode::invalid_argument, "model config: dropout must be in [0, 1)");
  if (context == ContextKind::transformer) {
    if (heads < 1 || embed_dim % heads != 0)
      raise(ErrorCode::invalid_argument, "model config: embed_dim must divide into heads");
    if (ff_dim < 1) raise(ErrorCode::invalid_argument, "model config: ff_dim must be positive");
  }
}

ModelParams init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelParams params;
  params.config = config;
  const auto specs = tensor_specs(config);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const TensorSpec& s = specs[i];
    Eigen::MatrixXd m(s.rows, s.cols);
    if (s.fan_in == 0) {
      m.setZero();
    } else if (s.fan_in == -1) {
      m.setOnes();
    } else {
      Rng rng(Rng::derive(seed, i));
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
      for (Eigen::Index r = 0; r < s.rows; ++r)
        for (Eigen::Index c = 0; c < s.cols; ++c) m(r, c) = rng.uniform(-bound, bound);
    }
    params.tensors.emplace(s.name, std::move(m));
  }
  return params;
}

Eigen::Index conv_frames(Eigen::Index frames, int stride) {
  return (frames + stride - 1) / stride;
}

ModelGraph::ModelGraph(ad::Tape& tape, const ModelParams& params, Mode mode, Rng* dropout_rng)
    : tape_(tape), params_(params), mode_(mode), dropout_rng_(dropout_rng) {
  params.config.validate();
  if (mode == Mode::train && params.config.dropout > 0.0 && dropout_rng == nullptr)
    raise(ErrorCode::invalid_argument, "ModelGraph: training with dropout needs an rng");
}

ad::Var ModelGraph::param(const std::string& name) {
  const auto cached = leaves_.find(name);
  if (cached != leaves_.end()) return cached->second;
  const auto it = params_.tensors.find(name);
  if (it == params_.tensors.end())
    raise(ErrorCode::invalid_argument, "model: unknown parameter '" + name + "'");
  ad::Var leaf = tape_.leaf(it->second, true);
  leaves_.emplace(name, leaf);
  return leaf;
}

ad::Var ModelGraph::dropout(ad::Var v) {
  const double p = params_.config.dropout;
  if (mode_ != Mode::train || p <= 0.0) return v;
  const Eigen::MatrixXd& shape = tape_.value(v);
  Eigen::MatrixXd mask(shape.rows(), shape.cols());
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      mask(r, c) = (dropout_rng_->uniform() >= p) ? keep_scale : 0.0;
  return tape_.mul(v, tape_.constant(std::move(mask)));
}

ad::Var ModelGraph::conv_block(ad::Var input, const std::string& w, const std::string& b,
                               int kernel, int stride, Eigen::Index out_cols, bool activate) {
  const Eigen::Index in_frames = tape_.value(input).cols();
  Eigen::Index total_pad = (out_cols - 1) * stride + kernel - in_frames;
  if (total_pad < 0) total_pad = 0;
  ad::Var cols = tape_.im2col_time(input, kernel, stride, static_cast<int>(total_pad / 2), out_cols);
  ad::Var out = tape_.bias_add_cols(tape_.matmul(param(w), cols), param(b));
  if (!activate) return out;
  return dropout(tape_.leaky_relu(out, params_.config.leaky_slope));
}

std::vector<ad::Var> ModelGraph::lstm_steps(const std::string& prefix, ad::Var seq) {
  const ModelConfig& c = params_.config;
  const Eigen::Index h = c.embed_dim;
  const Eigen::Index steps = tape_.value(seq).cols();
  ad::Var w_ih = param(prefix + ".w_ih");
  ad::Var w_hh = param(prefix + ".w_hh");
  ad::Var b_ih = param(prefix + ".b_ih");
  ad::Var b_hh = param(prefix + ".b_hh");
  ad::Var h_prev = tape_.constant(Eigen::MatrixXd::Zero(h, 1));
  ad::Var c_prev = tape_.constant(Eigen::MatrixXd::Zero(h, 1));
  std::vector<ad::Var> hs;
  hs.reserve(static_cast<std::size_t>(steps));
  for (Eigen::Index t = 0; t < steps; ++t) {
    ad::Var x_t = tape_.slice_cols(seq, t, 1);
    ad::Var gates = tape_.add(tape_.bias_add_cols(tape_.matmul(w_ih, x_t), b_ih),
                              tape_.bias_add_cols(tape_.matmul(w_hh, h_prev), b_hh));
    ad::Var i_g = tape_.sigmoid(tape_.slice_rows(gates, 0, h));
    ad::Var f_g = tape_.sigmoid(tape_.slice_rows(gates, h, h));
    ad::Var g_g = tape_.tanh_(tape_.slice_rows(gates, 2 * h, h));
    ad::Var o_g = tape_.sigmoid(tape_.slice_rows(gates, 3 * h, h));
    ad::Var c_t = tape_.add(tape_.mul(f_g, c_prev), tape_.mul(i_g, g_g));
    ad::Var h_t = tape_.mul(o_g, tape_.tanh_(c_t));
    hs.push_back(h_t);
    h_prev = h_t;
    c_prev = c_t;
  }
  return hs;
}

ad::Var ModelGraph::lstm_final(const std::string& prefix, ad::Var seq) {
  return lstm_steps(prefix, seq).back();
}

ad::Var ModelGraph::lstm_sequence(const std::string& prefix, ad::Var seq) {
  return tape_.concat_cols(lstm_steps(prefix, seq));
}

ad::Var ModelGraph::add_positions(ad::Var rows) {
  if (!params_.config.positional_encoding) return rows;
  const Eigen::MatrixXd& v = tape_.value(rows);
  return tape_.add(rows, tape_.constant(positional_encoding(v.rows(), v.cols())));
}

ad::Var ModelGraph::encoder_layer(const std::string& prefix, ad::Var rows) {
  const ModelConfig& c = params_.config;
  const Eigen::Index dh = c.embed_dim / c.heads;
  ad::Var q = tape_.bias_add_rows(tape_.matmul(rows, param(prefix + ".attn.wq")),
                                  param(prefix + ".attn.bq"));
  ad::Var k = tape_.bias_add_rows(tape_.matmul(rows, param(prefix + ".attn.wk")),
                                  param(prefix + ".attn.bk"));
  ad::Var v = tape_.bias_add_rows(tape_.matmul(rows, param(prefix + ".attn.wv")),
                                  param(prefix + ".attn.bv"));
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<std::size_t>(c.heads));
  for (int head = 0; head < c.heads; ++head) {
    ad::Var qh = tape_.slice_cols(q, head * dh, dh);
    ad::Var kh = tape_.slice_cols(k, head * dh, dh);
    ad::Var vh = tape_.slice_cols(v, head * dh, dh);
    ad::Var scores =
        tape_.scale(tape_.matmul(qh, tape_.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    heads.push_back(tape_.matmul(tape_.softmax_rows(scores), vh));
  }
  ad::Var attended = tape_.bias_add_rows(
      tape_.matmul(tape_.concat_cols(heads), param(prefix + ".attn.wo")),
      param(prefix + ".attn.bo"));
  ad::Var x2 = tape_.layer_norm_rows(tape_.add(rows, attended), param(prefix + ".ln1.gamma"),
                                     param(prefix + ".ln1.beta"));
  ad::Var ff = tape_.bias_add_rows(
      tape_.matmul(tape_.leaky_relu(tape_.bias_add_rows(tape_.matmul(x2, param(prefix + ".ff.w1")),
                                                        param(prefix + ".ff.b1")),
                                    0.0),
                   param(prefix + ".ff.w2")),
      param(prefix + ".ff.b2"));
  return tape_.layer_norm_rows(tape_.add(x2, ff), param(prefix + ".ln2.gamma"),
                               param(prefix + ".ln2.beta"));
}

ad::Var ModelGraph::context(const std::string& prefix, ad::Var seq) {
  if (params_.config.context == ContextKind::recurrent)
    return dropout(lstm_final(prefix + ".ctx", seq));
  const std::string branch = prefix;  // "eeg" | "speech"
  ad::Var projected = tape_.bias_add_cols(tape_.matmul(param(branch + ".in.w"), seq),
                                          param(branch + ".in.b"));
  ad::Var rows = add_positions(tape_.transpose(projected));
  ad::Var encoded = encoder_layer(branch + ".ctx", rows);
  return dropout(tape_.transpose(tape_.mean_rows(encoded)));
}

ad::Var ModelGraph::eeg_branch(const Eigen::MatrixXd& eeg,
                               const std::vector<stimulus::FrameWindow>& windows) {
  const ModelConfig& c = params_.config;
  if (eeg.rows() != c.eeg_channels)
    raise(ErrorCode::invalid_argument,
          "eeg_branch: expected " + std::to_string(c.eeg_channels) + " channels, got " +
              std::to_string(eeg.rows()));
  if (eeg.cols() < 1) raise(ErrorCode::invalid_argument, "eeg_branch: empty segment");
  if (windows.empty()) raise(ErrorCode::invalid_argument, "eeg_branch: no word windows");
  require_finite(eeg, "eeg_branch");

  ad::Var x = tape_.constant(eeg);
  ad::Var c1 = conv_block(x, "eeg.conv1.w", "eeg.conv1.b", c.conv1_kernel, 1, eeg.cols(), true);
  const Eigen::Index out_frames = conv_frames(eeg.cols(), c.time_stride);
  ad::Var c2 = conv_block(c1, "eeg.conv2.w", "eeg.conv2.b", c.conv2_time_kernel, c.time_stride,
                          out_frames, true);
  ad::Var pooled = tape_.mean_pool_cols(c2, windows);
  return context("eeg", pooled);
}

ad::Var ModelGraph::speech_branch(const std::vector<double>& envelope,
                                  const std::vector<stimulus::FrameWindow>& windows) {
  const ModelConfig& c = params_.config;
  if (envelope.empty()) raise(ErrorCode::invalid_argument, "speech_branch: empty envelope");
  if (windows.empty()) raise(ErrorCode::invalid_argument, "speech_branch: no word windows");
  require_finite(envelope, "speech_branch");
  Eigen::MatrixXd env(1, static_cast<Eigen::Index>(envelope.size()));
  for (std::size_t i = 0; i < envelope.size(); ++i)
    env(0, static_cast<Eigen::Index>(i)) = envelope[i];

  ad::Var x = tape_.constant(std::move(env));
  const Eigen::Index out_frames =
      conv_frames(static_cast<Eigen::Index>(envelope.size()), c.time_stride);
  ad::Var conv = conv_block(x, "speech.conv.w", "speech.conv.b", c.speech_kernel, c.time_stride,
                            out_frames, true);
  ad::Var pooled = tape_.mean_pool_cols(conv, windows);
  return context("speech", pooled);
}

ad::Var ModelGraph::text_branch(const Eigen::MatrixXd& embeddings) {
  const ModelConfig& c = params_.config;
  if (embeddings.rows() < 1)
    raise(ErrorCode::invalid_argument, "text_branch: need at least one word");
  if (embeddings.cols() != c.text_input_dim)
    raise(ErrorCode::invalid_argument,
          "text_branch: expected " + std::to_string(c.text_input_dim) + "-d embeddings");
  require_finite(embeddings, "text_branch");

  ad::Var seq = tape_.constant(embeddings.transpose());  // dim x words
  if (c.context == ContextKind::recurrent) {
    ad::Var h1 = dropout(lstm_sequence("text.ctx1", seq));
    return dropout(lstm_final("text.ctx2", h1));
  }
  ad::Var projected =
      tape_.bias_add_cols(tape_.matmul(param("text.in.w"), seq), param("text.in.b"));
  ad::Var rows = add_positions(tape_.transpose(projected));
  ad::Var enc1 = dropout(encoder_layer("text.ctx1", rows));
  ad::Var enc2 = encoder_layer("text.ctx2", enc1);
  return dropout(tape_.transpose(tape_.mean_rows(enc2)));
}

ad::Var similarity_t(ad::Tape& tape, ad::Var a, ad::Var b) {
  return tape.exp_(tape.scale(tape.sum(tape.abs(tape.sub(a, b))), -1.0));
}

ad::Var fuse_t(ad::Tape& tape, int variant, ad::Var r_s, ad::Var r_t, ad::Var r_e,
               double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    raise(ErrorCode::invalid_argument, "fuse: lambda must lie in [0, 1]");
  switch (variant) {
    case 1:
      return tape.add(tape.scale(similarity_t(tape, r_s, r_e), lambda),
                      tape.scale(similarity_t(tape, r_t, r_e), 1.0 - lambda));
    case 2: {
      // exp(-d)^lambda computed as exp(-lambda d): exact and differentiable.
      ad::Var d_s = tape.sum(tape.abs(tape.sub(r_s, r_e)));
      ad::Var d_t = tape.sum(tape.abs(tape.sub(r_t, r_e)));
      return tape.add(tape.exp_(tape.scale(d_s, -lambda)),
                      tape.exp_(tape.scale(d_t, -(1.0 - lambda))));
    }
    case 3:
      return similarity_t(tape, tape.add(tape.scale(r_s, lambda), tape.scale(r_t, 1.0 - lambda)),
                          r_e);
    default:
      raise(ErrorCode::invalid_argument,
            "fuse: unknown similarity variant " + std::to_string(variant));
  }
}

ad::Var mm_loss_t(ad::Tape& tape, ad::Var sim_pos, ad::Var sim_neg) {
  constexpr double kEps = 1e-7;
  ad::Var one = tape.constant(Eigen::MatrixXd::Ones(1, 1));
  ad::Var pos_term = tape.log_(tape.clamp(sim_pos, kEps, 1.0 - kEps));
  ad::Var neg_term = tape.log_(tape.clamp(tape.sub(one, sim_neg), kEps, 1.0 - kEps));
  return tape.scale(tape.add(pos_term, neg_term), -0.5);
}

namespace {

Eigen::VectorXd run_inference(const ModelParams& params,
                              const std::function<ad::Var(ModelGraph&)>& build) {
  ad::Tape tape;
  ModelGraph graph(tape, params, Mode::infer);
  ad::Var out = build(graph);
  return tape.value(out).col(0);
}

}  // namespace

Eigen::VectorXd eeg_forward(const ModelParams& params, const Eigen::MatrixXd& eeg,
                            const std::vector<stimulus::FrameWindow>& windows) {
  return run_inference(params, [&](ModelGraph& g) { return g.eeg_branch(eeg, windows); });
}

Eigen::VectorXd speech_forward(const ModelParams& params, const std::vector<double>& envelope,
                               const std::vector<stimulus::FrameWindow>& windows) {
  return run_inference(params, [&](ModelGraph& g) { return g.speech_branch(envelope, windows); });
}

Eigen::VectorXd text_forward(const ModelParams& params, const Eigen::MatrixXd& embeddings) {
  return run_inference(params, [&](ModelGraph& g) { return g.text_branch(embeddings); });
}

double similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) raise(ErrorCode::invalid_argument, "similarity: dimension mismatch");
  return std::exp(-(a - b).cwiseAbs().sum());
}

double fuse(int variant, const Eigen::VectorXd& r_s, const Eigen::VectorXd& r_t,
            const Eigen::VectorXd& r_e, double lambda) {
  ad::Tape tape;
  ad::Var s = tape.constant(r_s);
  ad::Var t = tape.constant(r_t);
  ad::Var e = tape.constant(r_e);
  return tape.value(fuse_t(tape, variant, s, t, e, lambda))(0, 0);
}

double mm_loss(double sim_pos, double sim_neg) {
  constexpr double kEps = 1e-7;
  const auto clamp = [](double x, double lo, double hi) { return std::min(std::max(x, lo), hi); };
  return 0.5 * (-std::log(clamp(sim_pos, kEps, 1.0 - kEps)) -
                std::log(clamp(1.0 - sim_neg, kEps, 1.0 - kEps)));
}

Eigen::VectorXd transformer_context(const ModelParams& params, const std::string& prefix,
                                    const Eigen::MatrixXd& seq_rows) {
  if (seq_rows.rows() < 1) raise(ErrorCode::invalid_argument, "transformer_context: empty input");
  if (params.config.context != ContextKind::transformer)
    raise(ErrorCode::invalid_argument, "transformer_context: model uses a recurrent context");
  if (seq_rows.cols() != params.config.embed_dim)
    raise(ErrorCode::invalid_argument, "transformer_context: rows must be embed_dim wide");
  ad::Tape tape;
  ModelGraph graph(tape, params, Mode::infer);
  ad::Var rows = graph.add_positions(tape.constant(seq_rows));
  ad::Var pooled = tape.mean_rows(graph.encoder_layer(prefix, rows));
  return tape.value(pooled).transpose().col(0);
}

Eigen::MatrixXd eeg_conv_features(const ModelParams& params, const Eigen::MatrixXd& eeg) {
  const ModelConfig& c = params.config;
  if (eeg.rows() != c.eeg_channels)
    raise(ErrorCode::invalid_argument, "eeg probe: channel count mismatch");
  ad::Tape tape;
  ModelGraph graph(tape, params, Mode::infer);
  ad::Var c1 = graph.conv_block(tape.constant(eeg), "eeg.conv1.w", "eeg.conv1.b", c.conv1_kernel,
                                1, eeg.cols(), true);
  ad::Var c2 = graph.conv_block(c1, "eeg.conv2.w", "eeg.conv2.b", c.conv2_time_kernel,
                                c.time_stride, conv_frames(eeg.cols(), c.time_stride), true);
  return tape.value(c2);
}

Eigen::MatrixXd speech_conv_output(const ModelParams& params,
                                   const std::vector<double>& envelope) {
  if (envelope.empty()) raise(ErrorCode::invalid_argument, "speech probe: empty envelope");
  const ModelConfig& c = params.config;
  ad::Tape tape;
  ModelGraph graph(tape, params, Mode::infer);
  Eigen::MatrixXd env(1, static_cast<Eigen::Index>(envelope.size()));
  for (std::size_t i = 0; i < envelope.size(); ++i)
    env(0, static_cast<Eigen::Index>(i)) = envelope[i];
  ad::Var conv = graph.conv_block(
      tape.constant(std::move(env)), "speech.conv.w", "speech.conv.b", c.speech_kernel,
      c.time_stride, conv_frames(static_cast<Eigen::Index>(envelope.size()), c.time_stride),
      false);
  return tape.value(conv);
}

Eigen::MatrixXd eeg_pooled_words(const ModelParams& params, const Eigen::MatrixXd& eeg,
                                 const std::vector<stimulus::FrameWindow>& windows) {
  const ModelConfig& c = params.config;
  if (eeg.rows() != c.eeg_channels)
    raise(ErrorCode::invalid_argument, "eeg probe: channel count mismatch");
  ad::Tape tape;
  ModelGraph graph(tape, params, Mode::infer);
  ad::Var c1 = graph.conv_block(tape.constant(eeg), "eeg.conv1.w", "eeg.conv1.b", c.conv1_kernel,
                                1, eeg.cols(), true);
  ad::Var c2 = graph.conv_block(c1, "eeg.conv2.w", "eeg.conv2.b", c.conv2_time_kernel,
                                c.time_stride, conv_frames(eeg.cols(), c.time_stride), true);
  return tape.value(tape.mean_pool_cols(c2, windows));
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  params.config.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::io, "cannot write checkpoint " + path.string());
  const ModelConfig& c = params.config;
  json config = {
      {"eeg_channels", c.eeg_channels},
      {"conv1_maps", c.conv1_maps},
      {"conv1_kernel", c.conv1_kernel},
      {"conv2_maps", c.conv2_maps},
      {"conv2_time_kernel", c.conv2_time_kernel},
      {"time_stride", c.time_stride},
      {"speech_kernel", c.speech_kernel},
      {"embed_dim", c.embed_dim},
      {"text_input_dim", c.text_input_dim},
      {"context", c.context == ContextKind::recurrent ? "recurrent" : "transformer"},
      {"dropout", c.dropout},
      {"leaky_slope", c.leaky_slope},
      {"positional_encoding", c.positional_encoding},
      {"heads", c.heads},
      {"ff_dim", c.ff_dim},
  };
  const std::string config_text = config.dump();

  const auto write_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  const auto write_u64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  out.write("NMCK", 4);
  write_u32(1);
  write_u64(config_text.size());
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  write_u64(params.tensors.size());
  std::vector<float> buffer;
  for (const auto& [name, tensor] : params.tensors) {
    const uint16_t len = static_cast<uint16_t>(name.size());
    out.write(reinterpret_cast<const char*>(&len), 2);
    out.write(name.data(), len);
    write_u64(static_cast<uint64_t>(tensor.rows()));
    write_u64(static_cast<uint64_t>(tensor.cols()));
    buffer.resize(static_cast<std::size_t>(tensor.size()));
    std::size_t at = 0;
    for (Eigen::Index r = 0; r < tensor.rows(); ++r)
      for (Eigen::Index col = 0; col < tensor.cols(); ++col)
        buffer[at++] = static_cast<float>(tensor(r, col));
    out.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  }
  if (!out) raise(ErrorCode::io, "failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io, "cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "NMCK")
    raise(ErrorCode::format, path.string() + ": not a checkpoint (bad magic)");
  const auto read_u32 = [&]() {
    uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4))
      raise(ErrorCode::format, path.string() + ": truncated checkpoint");
    return v;
  };
  const auto read_u64 = [&]() {
    uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 8))
      raise(ErrorCode::format, path.string() + ": truncated checkpoint");
    return v;
  };
  const uint32_t version = read_u32();
  if (version != 1)
    raise(ErrorCode::format, path.string() + ": unsupported checkpoint version " +
                                 std::to_string(version));
  const uint64_t config_len = read_u64();
  std::string config_text(config_len, '\0');
  if (!in.read(config_text.data(), static_cast<std::streamsize>(config_len)))
    raise(ErrorCode::format, path.string() + ": truncated checkpoint config");
  json config = json::parse(config_text, nullptr, false);
  if (config.is_discarded())
    raise(ErrorCode::format, path.string() + ": corrupt checkpoint config");

  ModelParams params;
  ModelConfig& c = params.config;
  c.eeg_channels = config.at("eeg_channels").get<int>();
  c.conv1_maps = config.at("conv1_maps").get<int>();
  c.conv1_kernel = config.at("conv1_kernel").get<int>();
  c.conv2_maps = config.at("conv2_maps").get<int>();
  c.conv2_time_kernel = config.at("conv2_time_kernel").get<int>();
  c.time_stride = config.at("time_stride").get<int>();
  c.speech_kernel = config.at("speech_kernel").get<int>();
  c.embed_dim = config.at("embed_dim").get<int>();
  c.text_input_dim = config.at("text_input_dim").get<int>();
  c.context = config.at("context").get<std::string>() == "transformer"
                  ? ContextKind::transformer
                  : ContextKind::recurrent;
  c.dropout = config.at("dropout").get<double>();
  c.leaky_slope = config.at("leaky_slope").get<double>();
  c.positional_encoding = config.at("positional_encoding").get<bool>();
  c.heads = config.at("heads").get<int>();
  c.ff_dim = config.at("ff_dim").get<int>();
  c.validate();

  const uint64_t count = read_u64();
  std::vector<float> buffer;
  for (uint64_t i = 0; i < count; ++i) {
    uint16_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), 2))
      raise(ErrorCode::format, path.string() + ": truncated tensor table");
    std::string name(len, '\0');
    if (!in.read(name.data(), len))
      raise(ErrorCode::format, path.string() + ": truncated tensor name");
    const uint64_t rows = read_u64();
    const uint64_t cols = read_u64();
    buffer.resize(rows * cols);
    if (!in.read(reinterpret_cast<char*>(buffer.data()),
                 static_cast<std::streamsize>(buffer.size() * sizeof(float))))
      raise(ErrorCode::format, path.string() + ": truncated tensor payload for '" + name + "'");
    Eigen::MatrixXd tensor(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t at = 0;
    for (Eigen::Index r = 0; r < tensor.rows(); ++r)
      for (Eigen::Index col = 0; col < tensor.cols(); ++col)
        tensor(r, col) = static_cast<double>(buffer[at++]);
    params.tensors.emplace(std::move(name), std::move(tensor));
  }
  return params;
}

}  // namespace neuromatch::model
