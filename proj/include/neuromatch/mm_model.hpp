#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "neuromatch/autodiff.hpp"
#include "neuromatch/rng.hpp"
#include "neuromatch/stimulus_features.hpp"

namespace neuromatch::model {

enum class ContextKind { recurrent, transformer };
enum class Mode { train, infer };

struct ModelConfig {
  int eeg_channels = 128;
  int conv1_maps = 16;       // EEG 1-D conv output maps
  int conv1_kernel = 8;
  int conv2_maps = 32;       // second-stage maps for both EEG and speech
  int conv2_time_kernel = 9; // the map axis is spanned fully (height = conv1_maps)
  int time_stride = 3;       // lands the branches on the 64/3 Hz frame grid
  int speech_kernel = 16;
  int embed_dim = 32;        // context hidden size and R_e/R_s/R_t dimension
  int text_input_dim = 300;
  ContextKind context = ContextKind::recurrent;
  double dropout = 0.2;
  double leaky_slope = 0.01;
  bool positional_encoding = true;  // transformer only; ablation flag
  int heads = 4;
  int ff_dim = 64;

  void validate() const;
};

struct ModelParams {
  ModelConfig config;
  std::map<std::string, Eigen::MatrixXd> tensors;
};

// Seeded uniform fan-in initialization (biases zero, layer-norm gains one).
ModelParams init_params(const ModelConfig& config, uint64_t seed);

// Post-convolution frame count for T input frames (same padding, stride 3).
Eigen::Index conv_frames(Eigen::Index frames, int stride = 3);

// Builds branch subgraphs on a shared tape. Parameters enter the tape once
// each (as gradient leaves) and are reused across branches and examples.
class ModelGraph {
 public:
  ModelGraph(ad::Tape& tape, const ModelParams& params, Mode mode, Rng* dropout_rng = nullptr);

  ad::Var eeg_branch(const Eigen::MatrixXd& eeg,
                     const std::vector<stimulus::FrameWindow>& windows);
  ad::Var speech_branch(const std::vector<double>& envelope,
                        const std::vector<stimulus::FrameWindow>& windows);
  ad::Var text_branch(const Eigen::MatrixXd& embeddings);  // words x text_input_dim

  ad::Var param(const std::string& name);
  const std::map<std::string, ad::Var>& leaves() const { return leaves_; }
  ad::Tape& tape() { return tape_; }

 private:
  friend Eigen::VectorXd transformer_context(const ModelParams& params, const std::string& prefix,
                                             const Eigen::MatrixXd& seq_rows);
  friend Eigen::MatrixXd eeg_conv_features(const ModelParams& params, const Eigen::MatrixXd& eeg);
  friend Eigen::MatrixXd speech_conv_output(const ModelParams& params,
                                            const std::vector<double>& envelope);
  friend Eigen::MatrixXd eeg_pooled_words(const ModelParams& params, const Eigen::MatrixXd& eeg,
                                          const std::vector<stimulus::FrameWindow>& windows);

  ad::Var conv_block(ad::Var input, const std::string& w, const std::string& b, int kernel,
                     int stride, Eigen::Index out_cols, bool activate);
  ad::Var context(const std::string& prefix, ad::Var seq);        // seq: F x n
  ad::Var lstm_final(const std::string& prefix, ad::Var seq);
  ad::Var lstm_sequence(const std::string& prefix, ad::Var seq);
  std::vector<ad::Var> lstm_steps(const std::string& prefix, ad::Var seq);
  ad::Var encoder_layer(const std::string& prefix, ad::Var rows);  // rows: n x E
  ad::Var add_positions(ad::Var rows);
  ad::Var dropout(ad::Var v);

  ad::Tape& tape_;
  const ModelParams& params_;
  Mode mode_;
  Rng* dropout_rng_;
  std::map<std::string, ad::Var> leaves_;
};

// Scalar similarity graph pieces (1x1 outputs).
ad::Var similarity_t(ad::Tape& tape, ad::Var a, ad::Var b);
ad::Var fuse_t(ad::Tape& tape, int variant, ad::Var r_s, ad::Var r_t, ad::Var r_e,
               double lambda);
ad::Var mm_loss_t(ad::Tape& tape, ad::Var sim_pos, ad::Var sim_neg);

// Inference entry points (no gradients, dropout off).
Eigen::VectorXd eeg_forward(const ModelParams& params, const Eigen::MatrixXd& eeg,
                            const std::vector<stimulus::FrameWindow>& windows);
Eigen::VectorXd speech_forward(const ModelParams& params, const std::vector<double>& envelope,
                               const std::vector<stimulus::FrameWindow>& windows);
Eigen::VectorXd text_forward(const ModelParams& params, const Eigen::MatrixXd& embeddings);
double similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double fuse(int variant, const Eigen::VectorXd& r_s, const Eigen::VectorXd& r_t,
            const Eigen::VectorXd& r_e, double lambda);
double mm_loss(double sim_pos, double sim_neg);

// Single encoder layer + mean pooling over words (the transformer context).
Eigen::VectorXd transformer_context(const ModelParams& params, const std::string& prefix,
                                    const Eigen::MatrixXd& seq_rows);

// Intermediate probes used by contract tests.
Eigen::MatrixXd eeg_conv_features(const ModelParams& params, const Eigen::MatrixXd& eeg);
Eigen::MatrixXd speech_conv_output(const ModelParams& params,
                                   const std::vector<double>& envelope);  // pre-activation
Eigen::MatrixXd eeg_pooled_words(const ModelParams& params, const Eigen::MatrixXd& eeg,
                                 const std::vector<stimulus::FrameWindow>& windows);

// Checkpoint container: magic "NMCK", version, config, named float32 tensors.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace neuromatch::model
