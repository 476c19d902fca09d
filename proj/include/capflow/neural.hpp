#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "capflow/rng.hpp"

namespace capflow::neural {

enum class Activation { None, ReLU, Sigmoid };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& s);

struct EmbeddingSpec {
  int vocab = 0;
  int dim = 0;
};

// Residual MLP: linear stem to `width`, then `blocks` residual units
// x + dropout(relu(W x + b)), then a linear head with an optional output
// activation.  Categorical inputs enter as learned embeddings concatenated
// onto the feature vector; input_dim counts features plus embeddings.
struct NetSpec {
  int input_dim = 0;
  int blocks = 7;
  int width = 256;
  double dropout = 0.05;
  int output_dim = 3;
  Activation output_activation = Activation::ReLU;
  std::vector<EmbeddingSpec> embeddings;

  int embed_dim() const;
  int feature_dim() const { return input_dim - embed_dim(); }
  std::int64_t param_count() const;
  void validate() const;
};

// Named segments of the flat parameter vector, in a fixed order:
// stem, block0..blockN-1, head, embed0..embedM-1.
struct Layout {
  struct Entry {
    std::string name;
    std::int64_t offset = 0;
    int rows = 0, cols = 0;
  };
  std::vector<Entry> entries;
  std::int64_t total = 0;

  static Layout of(const NetSpec& spec);
  const Entry& find(const std::string& name) const;
};

struct Params {
  NetSpec spec;
  Eigen::VectorXd flat;

  Eigen::Map<Eigen::MatrixXd> seg(const Layout::Entry& e) {
    return {flat.data() + e.offset, e.rows, e.cols};
  }
  Eigen::Map<const Eigen::MatrixXd> seg(const Layout::Entry& e) const {
    return {flat.data() + e.offset, e.rows, e.cols};
  }
};

// Seeded fan-in uniform init (biases zero, embeddings small uniform).
Params init_params(const NetSpec& spec, std::uint64_t seed);

// Train mode enables dropout.  Masks are a pure function of
// (seed, step, layer, row_offset + column), so splitting a batch into
// column shards and offsetting row_offset reproduces the unsharded run.
struct Mode {
  bool train = false;
  std::uint64_t dropout_seed = 0;
  std::int64_t step = 0;
  std::int64_t row_offset = 0;

  static Mode eval() { return {}; }
  static Mode training(std::uint64_t seed, std::int64_t step, std::int64_t row_offset = 0) {
    return {true, seed, step, row_offset};
  }
};

// Everything backward() needs; filled by forward() when requested.
// Batches are column-major: one sample per column.
struct Tape {
  Mode mode;
  Eigen::MatrixXd x0;                   // input_dim x B
  std::vector<std::vector<int>> labels; // per embedding table
  std::vector<Eigen::MatrixXd> block_in;   // input to each residual block
  std::vector<Eigen::MatrixXd> block_pre;  // W x + b per block
  std::vector<Eigen::MatrixXd> block_mask; // dropout scale (empty in eval)
  Eigen::MatrixXd head_in;
  Eigen::MatrixXd head_pre;
  Eigen::MatrixXd y;
};

// feats: feature_dim x B.  labels: one vector of size B per embedding table.
Eigen::MatrixXd forward(const Params& p, const Eigen::MatrixXd& feats,
                        const std::vector<std::vector<int>>& labels, const Mode& mode,
                        Tape* tape = nullptr);

// dY is dL/dy (output_dim x B), or dL/d(head preactivation) when
// from_logits is set (the numerically stable path for sigmoid losses).
// Returns the gradient in flat layout.
Eigen::VectorXd backward(const Params& p, const Tape& tape, const Eigen::MatrixXd& dY,
                         bool from_logits = false);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
  bool decoupled = true;  // decay applied to the parameter directly, not the gradient
};

struct AdamState {
  Eigen::VectorXd m, v;
  Eigen::VectorXd decay_mask;  // 1 for weights/embeddings, 0 for biases
  std::int64_t t = 0;

  static AdamState init(const NetSpec& spec);
};

void adam_step(AdamState& st, Params& p, const Eigen::VectorXd& grad, const AdamConfig& cfg);

// Text checkpoint: spec header, free-form key/value extras, then one
// hexfloat per parameter (exact round trip).
void save_checkpoint(const Params& p, const std::map<std::string, std::string>& extra,
                     const std::filesystem::path& path);
std::pair<Params, std::map<std::string, std::string>> load_checkpoint(
    const std::filesystem::path& path);

}  // namespace capflow::neural
