#include "dfkd/nn.hpp"

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>

#include "dfkd/errors.hpp"

namespace dfkd::nn {

namespace {

constexpr int kConvChunk = 32;  // samples per im2col block, bounds scratch memory

void check_input(const Mat& x, const Shape& expect, const char* who) {
  if (x.rows() != expect.flat()) {
    std::ostringstream msg;
    msg << who << ": input has " << x.rows() << " features, expected "
        << expect.flat() << " (" << expect.str() << ")";
    throw argument_error(msg.str());
  }
}

Mat kaiming_normal(int rows, int cols, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  return rng.normal_mat(rows, cols) * std;
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream ss;
  ss << c << "x" << h << "x" << w;
  return ss.str();
}

bool all_finite(const Mat& m) { return m.allFinite(); }

// --------------------------------------------------------------- serialization

void write_mat(std::ostream& os, const Mat& m) {
  const std::int64_t rows = m.rows(), cols = m.cols();
  os.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
  os.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}

Mat read_mat(std::istream& is) {
  std::int64_t rows = 0, cols = 0;
  is.read(reinterpret_cast<char*>(&rows), sizeof(rows));
  is.read(reinterpret_cast<char*>(&cols), sizeof(cols));
  if (!is || rows < 0 || cols < 0 || rows * cols > (1LL << 31))
    throw data_error("read_mat: corrupt matrix header");
  Mat m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw data_error("read_mat: truncated matrix payload");
  return m;
}

void write_tag(std::ostream& os, const std::string& tag) {
  const std::uint32_t len = static_cast<std::uint32_t>(tag.size());
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(tag.data(), len);
}

void expect_tag(std::istream& is, const std::string& tag) {
  std::uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is || len > 256) throw data_error("expect_tag: corrupt tag header");
  std::string got(len, '\0');
  is.read(got.data(), len);
  if (!is || got != tag)
    throw data_error("expect_tag: wanted '" + tag + "', got '" + got + "'");
}

// ---------------------------------------------------------------------- Dense

Dense::Dense(Shape in, int out_features, Rng& rng)
    : in_features_(in.flat()),
      out_features_(out_features),
      w_(out_features, in.flat()),
      b_(out_features, 1) {
  if (out_features < 1) throw argument_error("Dense: out_features must be >= 1");
  w_.value = kaiming_normal(out_features_, in_features_, in_features_, rng);
}

Mat Dense::forward(const Mat& x, Mode) {
  check_input(x, {in_features_, 1, 1}, "Dense");
  x_cache_ = x;
  Mat y = w_.value * x;
  y.colwise() += b_.value.col(0);
  return y;
}

Mat Dense::backward(const Mat& dy, bool want_param_grads) {
  if (want_param_grads) {
    w_.grad.noalias() += dy * x_cache_.transpose();
    b_.grad.col(0) += dy.rowwise().sum();
  }
  return w_.value.transpose() * dy;
}

void Dense::save_state(std::ostream& os) const {
  write_tag(os, "dense");
  write_mat(os, w_.value);
  write_mat(os, b_.value);
}

void Dense::load_state(std::istream& is) {
  expect_tag(is, "dense");
  Mat w = read_mat(is), b = read_mat(is);
  if (w.rows() != w_.value.rows() || w.cols() != w_.value.cols())
    throw data_error("Dense::load_state: weight shape mismatch");
  w_.value = w;
  b_.value = b;
}

// --------------------------------------------------------------------- Conv2d

Conv2d::Conv2d(Shape in, int out_channels, int ksize, int stride, int pad, Rng& rng)
    : in_(in),
      ksize_(ksize),
      stride_(stride),
      pad_(pad),
      w_(out_channels, in.c * ksize * ksize),
      b_(out_channels, 1) {
  if (out_channels < 1 || ksize < 1 || stride < 1 || pad < 0)
    throw argument_error("Conv2d: bad hyperparameters");
  const int hout = (in.h + 2 * pad - ksize) / stride + 1;
  const int wout = (in.w + 2 * pad - ksize) / stride + 1;
  if (hout < 1 || wout < 1) throw argument_error("Conv2d: output collapses to zero");
  out_ = {out_channels, hout, wout};
  w_.value = kaiming_normal(out_channels, in.c * ksize * ksize,
                            in.c * ksize * ksize, rng);
}

void Conv2d::im2col(const Mat& x, int b0, int count, Mat& cols) const {
  const int hw_out = out_.h * out_.w;
  cols.setZero();
  for (int bi = 0; bi < count; ++bi) {
    const int b = b0 + bi;
    for (int ho = 0; ho < out_.h; ++ho) {
      const int h_base = ho * stride_ - pad_;
      for (int wo = 0; wo < out_.w; ++wo) {
        const int w_base = wo * stride_ - pad_;
        const int col = bi * hw_out + ho * out_.w + wo;
        for (int ci = 0; ci < in_.c; ++ci) {
          for (int kh = 0; kh < ksize_; ++kh) {
            const int h = h_base + kh;
            if (h < 0 || h >= in_.h) continue;
            for (int kw = 0; kw < ksize_; ++kw) {
              const int w = w_base + kw;
              if (w < 0 || w >= in_.w) continue;
              cols((ci * ksize_ + kh) * ksize_ + kw, col) =
                  x((ci * in_.h + h) * in_.w + w, b);
            }
          }
        }
      }
    }
  }
}

Mat Conv2d::forward(const Mat& x, Mode) {
  check_input(x, in_, "Conv2d");
  x_cache_ = x;
  const int batch = static_cast<int>(x.cols());
  const int hw_out = out_.h * out_.w;
  Mat y(out_.flat(), batch);
  Mat cols(in_.c * ksize_ * ksize_, kConvChunk * hw_out);
  for (int b0 = 0; b0 < batch; b0 += kConvChunk) {
    const int count = std::min(kConvChunk, batch - b0);
    if (count != kConvChunk) cols.resize(Eigen::NoChange, count * hw_out);
    im2col(x, b0, count, cols);
    const Mat prod = w_.value * cols;  // (Cout, count*HW)
    for (int bi = 0; bi < count; ++bi) {
      for (int co = 0; co < out_.c; ++co) {
        const double bias = b_.value(co, 0);
        for (int j = 0; j < hw_out; ++j)
          y(co * hw_out + j, b0 + bi) = prod(co, bi * hw_out + j) + bias;
      }
    }
  }
  return y;
}

Mat Conv2d::backward(const Mat& dy, bool want_param_grads) {
  const int batch = static_cast<int>(dy.cols());
  const int hw_out = out_.h * out_.w;
  Mat dx = Mat::Zero(in_.flat(), batch);
  Mat cols(in_.c * ksize_ * ksize_, kConvChunk * hw_out);
  Mat dy_chunk(out_.c, kConvChunk * hw_out);
  for (int b0 = 0; b0 < batch; b0 += kConvChunk) {
    const int count = std::min(kConvChunk, batch - b0);
    if (count != kConvChunk) {
      cols.resize(Eigen::NoChange, count * hw_out);
      dy_chunk.resize(Eigen::NoChange, count * hw_out);
    }
    for (int bi = 0; bi < count; ++bi)
      for (int co = 0; co < out_.c; ++co)
        for (int j = 0; j < hw_out; ++j)
          dy_chunk(co, bi * hw_out + j) = dy(co * hw_out + j, b0 + bi);

    if (want_param_grads) {
      im2col(x_cache_, b0, count, cols);
      w_.grad.noalias() += dy_chunk * cols.transpose();
      b_.grad.col(0) += dy_chunk.rowwise().sum();
    }

    const Mat dcols = w_.value.transpose() * dy_chunk;  // (Cin*k*k, count*HW)
    for (int bi = 0; bi < count; ++bi) {
      const int b = b0 + bi;
      for (int ho = 0; ho < out_.h; ++ho) {
        const int h_base = ho * stride_ - pad_;
        for (int wo = 0; wo < out_.w; ++wo) {
          const int w_base = wo * stride_ - pad_;
          const int col = bi * hw_out + ho * out_.w + wo;
          for (int ci = 0; ci < in_.c; ++ci) {
            for (int kh = 0; kh < ksize_; ++kh) {
              const int h = h_base + kh;
              if (h < 0 || h >= in_.h) continue;
              for (int kw = 0; kw < ksize_; ++kw) {
                const int w = w_base + kw;
                if (w < 0 || w >= in_.w) continue;
                dx((ci * in_.h + h) * in_.w + w, b) +=
                    dcols((ci * ksize_ + kh) * ksize_ + kw, col);
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

void Conv2d::save_state(std::ostream& os) const {
  write_tag(os, "conv2d");
  write_mat(os, w_.value);
  write_mat(os, b_.value);
}

void Conv2d::load_state(std::istream& is) {
  expect_tag(is, "conv2d");
  Mat w = read_mat(is), b = read_mat(is);
  if (w.rows() != w_.value.rows() || w.cols() != w_.value.cols())
    throw data_error("Conv2d::load_state: weight shape mismatch");
  w_.value = w;
  b_.value = b;
}

// ------------------------------------------------------------------ BatchNorm

BatchNorm::BatchNorm(Shape in, bool track_running, double momentum, double eps)
    : in_(in),
      track_running_(track_running),
      momentum_(momentum),
      eps_(eps),
      gamma_(in.c, 1),
      beta_(in.c, 1),
      running_mean_(Vec::Zero(in.c)),
      running_var_(Vec::Ones(in.c)) {
  gamma_.value.setOnes();
}

void BatchNorm::compute_batch_stats(const Mat& x) {
  const int hw = in_.h * in_.w;
  const int batch = static_cast<int>(x.cols());
  const double m = static_cast<double>(hw) * batch;
  batch_mean_.resize(in_.c);
  batch_var_.resize(in_.c);
  for (int c = 0; c < in_.c; ++c) {
    const auto block = x.middleRows(c * hw, hw);
    const double mean = block.sum() / m;
    batch_mean_[c] = mean;
    batch_var_[c] = (block.array() - mean).square().sum() / m;
  }
}

Mat BatchNorm::forward(const Mat& x, Mode mode) {
  check_input(x, in_, "BatchNorm");
  fwd_mode_ = mode;
  const int hw = in_.h * in_.w;
  Mat y(x.rows(), x.cols());

  if (mode == Mode::Train) {
    compute_batch_stats(x);
    inv_std_.resize(in_.c);
    xhat_cache_.resize(x.rows(), x.cols());
    for (int c = 0; c < in_.c; ++c) {
      inv_std_[c] = 1.0 / std::sqrt(batch_var_[c] + eps_);
      xhat_cache_.middleRows(c * hw, hw) =
          (x.middleRows(c * hw, hw).array() - batch_mean_[c]) * inv_std_[c];
      y.middleRows(c * hw, hw) =
          gamma_.value(c, 0) * xhat_cache_.middleRows(c * hw, hw).array() +
          beta_.value(c, 0);
    }
    if (track_running_) {
      running_mean_ = (1.0 - momentum_) * running_mean_ + momentum_ * batch_mean_;
      running_var_ = (1.0 - momentum_) * running_var_ + momentum_ * batch_var_;
    }
  } else {
    if (capture_) {
      compute_batch_stats(x);
      x_cache_ = x;
    }
    for (int c = 0; c < in_.c; ++c) {
      const double scale = gamma_.value(c, 0) / std::sqrt(running_var_[c] + eps_);
      y.middleRows(c * hw, hw) =
          (x.middleRows(c * hw, hw).array() - running_mean_[c]) * scale +
          beta_.value(c, 0);
    }
  }
  return y;
}

void BatchNorm::set_stat_grads(const Vec& d_mean, const Vec& d_var) {
  if (d_mean.size() != in_.c || d_var.size() != in_.c)
    throw argument_error("BatchNorm::set_stat_grads: channel mismatch");
  g_mean_ = d_mean;
  g_var_ = d_var;
  has_stat_grads_ = true;
}

Mat BatchNorm::backward(const Mat& dy, bool want_param_grads) {
  const int hw = in_.h * in_.w;
  const int batch = static_cast<int>(dy.cols());
  const double m = static_cast<double>(hw) * batch;
  Mat dx(dy.rows(), dy.cols());

  if (fwd_mode_ == Mode::Train) {
    for (int c = 0; c < in_.c; ++c) {
      const auto dyb = dy.middleRows(c * hw, hw);
      const auto xh = xhat_cache_.middleRows(c * hw, hw);
      const double g = gamma_.value(c, 0);
      const double sum_dy = dyb.sum();
      const double sum_dy_xhat = (dyb.array() * xh.array()).sum();
      dx.middleRows(c * hw, hw) =
          (g * inv_std_[c] / m) *
          (m * dyb.array() - sum_dy - xh.array() * sum_dy_xhat);
      if (want_param_grads) {
        gamma_.grad(c, 0) += sum_dy_xhat;
        beta_.grad(c, 0) += sum_dy;
      }
    }
  } else {
    for (int c = 0; c < in_.c; ++c) {
      const auto dyb = dy.middleRows(c * hw, hw);
      const double scale = gamma_.value(c, 0) / std::sqrt(running_var_[c] + eps_);
      dx.middleRows(c * hw, hw) = dyb.array() * scale;
      if (want_param_grads) {
        const auto xb = x_cache_.middleRows(c * hw, hw);
        // dgamma via normalized input under running stats
        const double inv = 1.0 / std::sqrt(running_var_[c] + eps_);
        if (x_cache_.size() != 0) {
          gamma_.grad(c, 0) +=
              ((xb.array() - running_mean_[c]) * inv * dyb.array()).sum();
        }
        beta_.grad(c, 0) += dyb.sum();
      }
      if (has_stat_grads_) {
        // Batch statistics were exposed as outputs; fold their gradients in:
        //   dmean/dx_i = 1/m,  dvar/dx_i = 2 (x_i - mean) / m.
        const auto xb = x_cache_.middleRows(c * hw, hw);
        dx.middleRows(c * hw, hw).array() +=
            g_mean_[c] / m +
            (xb.array() - batch_mean_[c]) * (2.0 * g_var_[c] / m);
      }
    }
    has_stat_grads_ = false;
  }
  return dx;
}

void BatchNorm::save_state(std::ostream& os) const {
  write_tag(os, "batchnorm");
  write_mat(os, gamma_.value);
  write_mat(os, beta_.value);
  write_mat(os, running_mean_);
  write_mat(os, running_var_);
}

void BatchNorm::load_state(std::istream& is) {
  expect_tag(is, "batchnorm");
  Mat g = read_mat(is), b = read_mat(is), rm = read_mat(is), rv = read_mat(is);
  if (g.rows() != in_.c) throw data_error("BatchNorm::load_state: channel mismatch");
  gamma_.value = g;
  beta_.value = b;
  running_mean_ = rm;
  running_var_ = rv;
}

// ---------------------------------------------------------------- activations

Mat ReLU::forward(const Mat& x, Mode) {
  x_cache_ = x;
  return x.cwiseMax(0.0);
}

Mat ReLU::backward(const Mat& dy, bool) {
  return (x_cache_.array() > 0.0).select(dy, Mat::Zero(dy.rows(), dy.cols()));
}

Mat LeakyReLU::forward(const Mat& x, Mode) {
  x_cache_ = x;
  return (x.array() > 0.0).select(x, x * slope_);
}

Mat LeakyReLU::backward(const Mat& dy, bool) {
  return (x_cache_.array() > 0.0).select(dy, dy * slope_);
}

Mat Sigmoid::forward(const Mat& x, Mode) {
  y_cache_ = (1.0 / (1.0 + (-x.array()).exp())).matrix();
  return y_cache_;
}

Mat Sigmoid::backward(const Mat& dy, bool) {
  return (dy.array() * y_cache_.array() * (1.0 - y_cache_.array())).matrix();
}

// ------------------------------------------------------------------- pooling

MaxPool2::MaxPool2(Shape in) : in_(in), out_{in.c, in.h / 2, in.w / 2} {
  if (in.h % 2 != 0 || in.w % 2 != 0)
    throw argument_error("MaxPool2: spatial dims must be even, got " + in.str());
}

Mat MaxPool2::forward(const Mat& x, Mode) {
  check_input(x, in_, "MaxPool2");
  const int batch = static_cast<int>(x.cols());
  Mat y(out_.flat(), batch);
  argmax_.resize(out_.flat(), batch);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < in_.c; ++c) {
      for (int ho = 0; ho < out_.h; ++ho) {
        for (int wo = 0; wo < out_.w; ++wo) {
          int best_idx = -1;
          double best = -std::numeric_limits<double>::infinity();
          for (int dh = 0; dh < 2; ++dh) {
            for (int dw = 0; dw < 2; ++dw) {
              const int idx =
                  (c * in_.h + 2 * ho + dh) * in_.w + 2 * wo + dw;
              const double v = x(idx, b);
              if (v > best) {  // ties keep the first (row-major) element
                best = v;
                best_idx = idx;
              }
            }
          }
          const int oidx = (c * out_.h + ho) * out_.w + wo;
          y(oidx, b) = best;
          argmax_(oidx, b) = best_idx;
        }
      }
    }
  }
  return y;
}

Mat MaxPool2::backward(const Mat& dy, bool) {
  const int batch = static_cast<int>(dy.cols());
  Mat dx = Mat::Zero(in_.flat(), batch);
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < out_.flat(); ++i) dx(argmax_(i, b), b) += dy(i, b);
  return dx;
}

// -------------------------------------------------------------------- reshape

Reshape::Reshape(Shape in, Shape to) : in_(in), to_(to) {
  if (in.flat() != to.flat())
    throw argument_error("Reshape: " + in.str() + " -> " + to.str() +
                         " changes element count");
}

Mat Reshape::forward(const Mat& x, Mode) {
  check_input(x, in_, "Reshape");
  return x;
}

Mat Reshape::backward(const Mat& dy, bool) { return dy; }

// ----------------------------------------------------------------- upsampling

Mat Upsample2::forward(const Mat& x, Mode) {
  check_input(x, in_, "Upsample2");
  const int batch = static_cast<int>(x.cols());
  Mat y(out_.flat(), batch);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < in_.c; ++c) {
      for (int h = 0; h < in_.h; ++h) {
        for (int w = 0; w < in_.w; ++w) {
          const double v = x((c * in_.h + h) * in_.w + w, b);
          const int base_h = 2 * h, base_w = 2 * w;
          y((c * out_.h + base_h) * out_.w + base_w, b) = v;
          y((c * out_.h + base_h) * out_.w + base_w + 1, b) = v;
          y((c * out_.h + base_h + 1) * out_.w + base_w, b) = v;
          y((c * out_.h + base_h + 1) * out_.w + base_w + 1, b) = v;
        }
      }
    }
  }
  return y;
}

Mat Upsample2::backward(const Mat& dy, bool) {
  const int batch = static_cast<int>(dy.cols());
  Mat dx(in_.flat(), batch);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < in_.c; ++c) {
      for (int h = 0; h < in_.h; ++h) {
        for (int w = 0; w < in_.w; ++w) {
          const int base_h = 2 * h, base_w = 2 * w;
          dx((c * in_.h + h) * in_.w + w, b) =
              dy((c * out_.h + base_h) * out_.w + base_w, b) +
              dy((c * out_.h + base_h) * out_.w + base_w + 1, b) +
              dy((c * out_.h + base_h + 1) * out_.w + base_w, b) +
              dy((c * out_.h + base_h + 1) * out_.w + base_w + 1, b);
        }
      }
    }
  }
  return dx;
}

// -------------------------------------------------------------------- Network

Shape Network::output_shape() const {
  if (layers_.empty()) throw argument_error("Network: no layers");
  return layers_.back()->out_shape();
}

Shape Network::tail_shape() const {
  return layers_.empty() ? input_ : layers_.back()->out_shape();
}

Mat Network::forward(const Mat& x, Mode mode) {
  Mat h = x;
  for (auto& layer : layers_) h = layer->forward(h, mode);
  return h;
}

Mat Network::backward(const Mat& dy, bool want_param_grads) {
  Mat g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    g = (*it)->backward(g, want_param_grads);
  return g;
}

std::vector<Param*> Network::params() {
  std::vector<Param*> out;
  for (auto& layer : layers_)
    for (Param* p : layer->params()) out.push_back(p);
  return out;
}

std::vector<BatchNorm*> Network::batch_norms() {
  std::vector<BatchNorm*> out;
  for (auto& layer : layers_)
    if (auto* bn = dynamic_cast<BatchNorm*>(layer.get())) out.push_back(bn);
  return out;
}

long Network::param_count() {
  long n = 0;
  for (Param* p : params()) n += p->value.size();
  return n;
}

void Network::zero_grad() {
  for (Param* p : params()) p->grad.setZero();
}

void Network::set_bn_capture(bool on) {
  for (BatchNorm* bn : batch_norms()) bn->set_capture(on);
}

void Network::save(std::ostream& os) const {
  write_tag(os, "dfkd-net-v1");
  const std::uint32_t n = static_cast<std::uint32_t>(layers_.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& layer : layers_) layer->save_state(os);
}

void Network::load(std::istream& is) {
  expect_tag(is, "dfkd-net-v1");
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (n != layers_.size())
    throw data_error("Network::load: layer count mismatch");
  for (auto& layer : layers_) layer->load_state(is);
}

// ----------------------------------------------------------------------- Adam

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Param* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p->grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    p->value.array() -=
        lr_ * (m_[i].array() / bc1) /
        ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

void Adam::save(std::ostream& os) const {
  write_tag(os, "adam");
  const std::int64_t t = t_;
  os.write(reinterpret_cast<const char*>(&t), sizeof(t));
  const std::uint32_t n = static_cast<std::uint32_t>(params_.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    write_mat(os, m_[i]);
    write_mat(os, v_[i]);
  }
}

void Adam::load(std::istream& is) {
  expect_tag(is, "adam");
  std::int64_t t = 0;
  is.read(reinterpret_cast<char*>(&t), sizeof(t));
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (n != params_.size()) throw data_error("Adam::load: param count mismatch");
  t_ = t;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = read_mat(is);
    v_[i] = read_mat(is);
  }
}

}  // namespace dfkd::nn
