#pragma once

// Small reverse-mode autodiff over batched Eigen matrices, MLPs with fixed
// topology, Adam, and a bit-exact text checkpoint format.
//
// Tape design: nodes hold whole batches (rows = samples, cols = features) and
// ops are layer-level (affine, activation, elementwise algebra, reductions),
// so all heavy work is inside Eigen GEMMs. backward() runs in reverse
// creation order with fixed-order accumulation; gradients of parameters
// accumulate into caller-owned matrices (zeroed explicitly), which lets a
// large batch be processed in deterministic chunks on one tape each.
//
// Input normalization is part of the network: forward() maps x to
// (x - norm_offset) / norm_scale first, and input_gradient() chains back
// through it, returning gradients in original units.

#include "pgdpo/common.hpp"

#include <functional>
#include <iosfwd>
#include <vector>

namespace pgdpo {

enum class Activation { softplus, relu };
enum class OutputTransform {
  identity,     // costate net
  neg_exp,      // value net, R > 1:  v = -exp(h) < 0
  pos_exp,      // value net, R < 1:  v = +exp(h) > 0
  raw_control,  // policy net: identity values, tags raw (pi, c-ratio) output
};

const char* to_string(Activation a);
const char* to_string(OutputTransform t);
Activation activation_from_string(const std::string& s);
OutputTransform transform_from_string(const std::string& s);

class Tape {
 public:
  using Id = int;

  Id constant(Mat v) { return push(std::move(v), false); }
  Id leaf(Mat v, bool needs_grad) { return push(std::move(v), needs_grad); }
  Id param(Mat* value, Mat* grad);

  const Mat& val(Id id) const { return nodes_[id].value; }

  Id affine(Id x, Id W, Id b);    // X W^T + 1 b^T   (b stored 1 x out)
  Id activation(Id x, Activation a);
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);             // elementwise, same shape
  Id cmul(Id x, Mat c);           // elementwise by a constant matrix
  Id axpb(Id x, double a, double b);
  Id pow(Id x, double e);         // elementwise, positive base required
  Id exp(Id x);
  Id log(Id x);
  Id square(Id x);
  Id sum_all(Id x);               // 1 x 1
  Id mean_all(Id x);              // 1 x 1

  void backward(Id root);                       // root must be 1 x 1, seed 1
  void backward_seed(Id node, const Mat& seed); // arbitrary seed adjoint

  const Mat& adjoint(Id id) const { return nodes_[id].adjoint; }

 private:
  struct Node {
    Mat value;
    Mat adjoint;
    bool needs_grad = false;
    Mat* param_grad = nullptr;
    std::function<void(Tape&, const Mat&)> back;  // propagate given adjoint
  };
  Id push(Mat v, bool ng) {
    nodes_.push_back(Node{std::move(v), Mat(), ng, nullptr, nullptr});
    return static_cast<Id>(nodes_.size()) - 1;
  }
  void ensure_adj(Id id);
  void run_backward();
  std::vector<Node> nodes_;
};

struct NetworkSpec {
  int in_dim = 3;
  int out_dim = 1;
  int hidden_layers = 3;
  int width = 128;
  Activation act = Activation::softplus;
  OutputTransform transform = OutputTransform::identity;
  Vec norm_offset;  // size in_dim
  Vec norm_scale;   // size in_dim, strictly positive

  void validate() const;
};

struct Layer {
  Mat W;   // out x in
  Mat b;   // 1 x out
  Mat gW;  // accumulated gradients
  Mat gb;
};

class Mlp {
 public:
  Mlp() = default;
  // Deterministic init from seed: hidden layers U(+-1/sqrt(fan_in)) for both
  // weights and biases, final layer all zeros (so identity/raw transforms
  // start at 0 and exp transforms start at +-1).
  Mlp(NetworkSpec spec, uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }

  // autodiff forward; if x_node is non-null it receives the id of the
  // normalized-input leaf (its adjoint gives d loss / d x_normalized)
  Tape::Id forward(Tape& tape, const Mat& X, Tape::Id* x_node = nullptr);

  Mat forward(const Mat& X) const;  // plain forward, no tape

  // Per-sample gradient of the (scalar) output w.r.t. the unnormalized
  // inputs; requires out_dim == 1. Rows of X map to rows of the result.
  Mat input_gradient(const Mat& X) const;

  void zero_grad();
  std::vector<Mat*> param_values();
  std::vector<Mat*> param_grads();
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Mat normalize(const Mat& X) const;

 private:
  NetworkSpec spec_;
  std::vector<Layer> layers_;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Mat*> values, std::vector<Mat*> grads, double lr,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();  // descend along current gradients (caller zeroes them)

  double lr = 0.0, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  std::vector<Mat> m, v;

  std::vector<Mat*> values_, grads_;
};

// ----------------------------------------------------------- checkpoint ----
// Versioned plain-text format; all floating point written as C hexfloats so
// save -> load -> save is byte-identical.

struct Checkpoint {
  struct Entry {
    std::string name;
    Mlp net;
    bool has_adam = false;
    Adam adam;  // values_/grads_ unbound until attached to a net
  };
  std::vector<Entry> entries;
  std::vector<std::pair<std::string, std::string>> meta;

  const Entry* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pgdpo
