#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dfkd/rng.hpp"
#include "dfkd/types.hpp"

namespace dfkd::nn {

// Activations are stored as (features, batch) matrices; a feature tensor
// (c, h, w) is flattened channel-major: index = (c*h + row)*w + col.
struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;

  int flat() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

enum class Mode { Train, Eval };

struct Param {
  Mat value;
  Mat grad;

  Param(int rows, int cols) : value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  virtual Shape out_shape() const = 0;

  // Forward caches whatever backward needs; backward returns d(loss)/d(input)
  // and accumulates parameter gradients when requested.
  virtual Mat forward(const Mat& x, Mode mode) = 0;
  virtual Mat backward(const Mat& dy, bool want_param_grads) = 0;

  virtual std::vector<Param*> params() { return {}; }
  virtual void save_state(std::ostream&) const {}
  virtual void load_state(std::istream&) {}
};

// ---------------------------------------------------------------------------

class Dense : public Layer {
 public:
  Dense(Shape in, int out_features, Rng& rng);

  const char* kind() const override { return "dense"; }
  Shape out_shape() const override { return {out_features_, 1, 1}; }
  Mat forward(const Mat& x, Mode mode) override;
  Mat backward(const Mat& dy, bool want_param_grads) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  void save_state(std::ostream& os) const override;
  void load_state(std::istream& is) override;

 private:
  int in_features_;
  int out_features_;
  Param w_;  // (out, in)
  Param b_;  // (out, 1)
  Mat x_cache_;
};

class Conv2d : public Layer {
 public:
  Conv2d(Shape in, int out_channels, int ksize, int stride, int pad, Rng& rng);

  const char* kind() const override { return "conv2d"; }
  Shape out_shape() const override { return out_; }
  Mat forward(const Mat& x, Mode mode) override;
  Mat backward(const Mat& dy, bool want_param_grads) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  void save_state(std::ostream& os) const override;
  void load_state(std::istream& is) override;

 private:
  // Patch matrix for samples [b0, b0+count): (Cin*k*k, count*Hout*Wout).
  void im2col(const Mat& x, int b0, int count, Mat& cols) const;

  Shape in_;
  Shape out_;
  int ksize_;
  int stride_;
  int pad_;
  Param w_;  // (Cout, Cin*k*k)
  Param b_;  // (Cout, 1)
  Mat x_cache_;
};

// Per-channel batch normalization. For conv inputs the statistics pool over
// batch and spatial positions; for flat inputs (h = w = 1) over the batch.
//
// Train mode normalizes by batch statistics (and updates running buffers when
// track_running is set). Eval mode normalizes by the running buffers; with
// capture enabled it additionally records the batch statistics of its input
// and accepts gradients w.r.t. those statistics for the next backward pass,
// which is how generator updates see a statistics-alignment loss.
class BatchNorm : public Layer {
 public:
  BatchNorm(Shape in, bool track_running = true, double momentum = 0.1,
            double eps = 1e-5);

  const char* kind() const override { return "batchnorm"; }
  Shape out_shape() const override { return in_; }
  Mat forward(const Mat& x, Mode mode) override;
  Mat backward(const Mat& dy, bool want_param_grads) override;
  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  void save_state(std::ostream& os) const override;
  void load_state(std::istream& is) override;

  void set_capture(bool on) { capture_ = on; }
  const Vec& batch_mean() const { return batch_mean_; }
  const Vec& batch_var() const { return batch_var_; }
  const Vec& running_mean() const { return running_mean_; }
  const Vec& running_var() const { return running_var_; }
  int channels() const { return in_.c; }

  // Extra d(loss)/d(batch stat) terms folded into the next backward() call.
  void set_stat_grads(const Vec& d_mean, const Vec& d_var);

 private:
  void compute_batch_stats(const Mat& x);

  Shape in_;
  bool track_running_;
  double momentum_;
  double eps_;
  Param gamma_;  // (C, 1)
  Param beta_;   // (C, 1)
  Vec running_mean_;
  Vec running_var_;

  bool capture_ = false;
  Mode fwd_mode_ = Mode::Train;
  Mat x_cache_;     // eval+capture path
  Mat xhat_cache_;  // train path
  Vec batch_mean_;
  Vec batch_var_;
  Vec inv_std_;
  bool has_stat_grads_ = false;
  Vec g_mean_;
  Vec g_var_;
};

class ReLU : public Layer {
 public:
  explicit ReLU(Shape in) : in_(in) {}
  const char* kind() const override { return "relu"; }
  Shape out_shape() const override { return in_; }
  Mat forward(const Mat& x, Mode mode) override;
  Mat backward(const Mat& dy, bool want_param_grads) override;

 private:
  Shape in_;
  Mat x_cache_;
};

class LeakyReLU : public Layer {
 public:
  LeakyReLU(Shape in, double slope) : in_(in), slope_(slope) {}
  const char* kind() const override { return "leaky_relu"; }
  Shape out_shape() const override { return in_; }
  Mat forward(const Mat& x, Mode mode) override;
  Mat backward(const Mat& dy, bool want_param_grads) override;

 private:
  Shape in_;
  double slope_;
  Mat x_cache_;
};

class Sigmoid : public Layer {
 public:
  explicit Sigmoid(Shape in) : in_(in) {}
  const char* kind() const override { return "sigmoid"; }
  Shape out_shape() const override { return in_; }
  Mat forward(const Mat& x, Mode mode) override;
  Mat backward(const Mat& dy, bool want_param_grads) override;

 private:
  Shape in_;
  Mat y_cache_;
};

// 2x2 max pooling with stride 2; requires even spatial dims.
class MaxPool2 : public Layer {
 public:
  explicit MaxPool2(Shape in);
  const char* kind() const override { return "maxpool2"; }
  Shape out_shape() const override { return out_; }
  Mat forward(const Mat& x, Mode mode) override;
  Mat backward(const Mat& dy, bool want_param_grads) override;

 private:
  Shape in_;
  Shape out_;
  Eigen::MatrixXi argmax_;  // input flat index per output element
};

// Metadata-only reinterpretation of the feature axis; element count must match.
class Reshape : public Layer {
 public:
  Reshape(Shape in, Shape to);
  const char* kind() const override { return "reshape"; }
  Shape out_shape() const override { return to_; }
  Mat forward(const Mat& x, Mode mode) override;
  Mat backward(const Mat& dy, bool want_param_grads) override;

 private:
  Shape in_;
  Shape to_;
};

// Nearest-neighbour 2x upsampling.
class Upsample2 : public Layer {
 public:
  explicit Upsample2(Shape in) : in_(in), out_{in.c, in.h * 2, in.w * 2} {}
  const char* kind() const override { return "upsample2"; }
  Shape out_shape() const override { return out_; }
  Mat forward(const Mat& x, Mode mode) override;
  Mat backward(const Mat& dy, bool want_param_grads) override;

 private:
  Shape in_;
  Shape out_;
};

// ---------------------------------------------------------------------------

class Network {
 public:
  Network() = default;
  explicit Network(Shape input) : input_(input) {}

  Shape input_shape() const { return input_; }
  Shape output_shape() const;
  Shape tail_shape() const;  // shape feeding the next layer to be added

  template <typename L, typename... Args>
  L* emplace(Args&&... args) {
    auto layer = std::make_unique<L>(tail_shape(), std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }

  Mat forward(const Mat& x, Mode mode);
  Mat backward(const Mat& dy, bool want_param_grads = true);

  std::vector<Param*> params();
  std::vector<BatchNorm*> batch_norms();
  long param_count();
  void zero_grad();
  void set_bn_capture(bool on);

  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  Shape input_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long step_count() const { return t_; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  std::vector<Param*> params_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

// Raw little-endian matrix I/O shared by layer and checkpoint serialization.
void write_mat(std::ostream& os, const Mat& m);
Mat read_mat(std::istream& is);
void write_tag(std::ostream& os, const std::string& tag);
void expect_tag(std::istream& is, const std::string& tag);

bool all_finite(const Mat& m);

}  // namespace dfkd::nn
