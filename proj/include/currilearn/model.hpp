#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "currilearn/error.hpp"
#include "currilearn/image.hpp"
#include "currilearn/rng.hpp"

namespace currilearn {

/// Reference classifier layout: inputs are standardized as (x - 0.5) * 4, then
/// each stage applies a 3x3 same-padded convolution, an optional
/// parameter-free residual shortcut (input zero-padded to the output width),
/// ReLU and 2x2 average pooling; global average pooling and one logistic
/// output unit close the network.
struct Architecture {
  int input_side = 224;
  std::vector<int> widths{8, 16, 32, 64};
  bool residual = true;

  void validate() const {
    if (widths.empty()) throw ValidationError("model.widths must not be empty");
    int in = 3;
    for (int w : widths) {
      if (w <= 0) throw ValidationError("model.widths entries must be positive");
      if (residual && w < in) {
        throw ValidationError("model.widths must be non-decreasing (and >= 3) with residual on");
      }
      in = w;
    }
    const int factor = 1 << widths.size();
    if (input_side <= 0 || input_side % factor != 0) {
      throw ValidationError("augment.input_side must be a positive multiple of " +
                            std::to_string(factor) + " for " + std::to_string(widths.size()) +
                            " pooling stages");
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    int in = 3;
    for (int w : widths) {
      n += static_cast<std::size_t>(w) * in * 9 + w;
      in = w;
    }
    return n + static_cast<std::size_t>(in) + 1;
  }

  std::string descriptor() const {
    std::string s = "input_side=" + std::to_string(input_side) + ";widths=";
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(widths[i]);
    }
    return s + ";residual=" + (residual ? "1" : "0");
  }

  static Architecture parse(const std::string& text) {
    Architecture a;
    a.widths.clear();
    std::istringstream in(text);
    std::string item;
    bool seen[3] = {false, false, false};
    while (std::getline(in, item, ';')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ValidationError("bad architecture field '" + item + "'");
      const std::string key = item.substr(0, eq);
      const std::string value = item.substr(eq + 1);
      try {
        if (key == "input_side") {
          a.input_side = std::stoi(value);
          seen[0] = true;
        } else if (key == "widths") {
          std::istringstream ws(value);
          std::string w;
          while (std::getline(ws, w, ',')) a.widths.push_back(std::stoi(w));
          seen[1] = true;
        } else if (key == "residual") {
          a.residual = value == "1";
          seen[2] = true;
        } else {
          throw ValidationError("unknown architecture field '" + key + "'");
        }
      } catch (const std::logic_error&) {
        throw ValidationError("bad architecture value '" + item + "'");
      }
    }
    if (!(seen[0] && seen[1] && seen[2])) {
      throw ValidationError("incomplete architecture descriptor '" + text + "'");
    }
    a.validate();
    return a;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct TrainConfig {
  double base_lr = 0.1;
  std::vector<int> lr_drop_epochs{40, 80};
  double lr_drop_factor = 10.0;
  int epochs = 120;
  int batch_size = 256;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Global gradient-norm ceiling; 0 disables clipping.
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    if (!(base_lr > 0.0)) throw ValidationError("train.base_lr must be positive");
    if (epochs < 1) throw ValidationError("train.epochs must be positive");
    if (batch_size < 1) throw ValidationError("train.batch_size must be positive");
    if (!(lr_drop_factor > 0.0)) throw ValidationError("train.lr_drop_factor must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("train.momentum must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be non-negative");
    if (!(clip_norm >= 0.0)) throw ValidationError("train.clip_norm must be non-negative");
    if (workers < 1) throw ValidationError("workers must be positive");
    for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
      if (lr_drop_epochs[i] < 1 || lr_drop_epochs[i] >= epochs ||
          (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1])) {
        throw ValidationError("train.lr_drop_epochs must be strictly increasing and below epochs");
      }
    }
  }
};

/// Piecewise-constant learning rate for a 1-based epoch: the base rate divided
/// by the drop factor once for every drop epoch already completed.
inline double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 1 || epoch > cfg.epochs) {
    throw ValidationError("epoch " + std::to_string(epoch) + " outside 1.." +
                          std::to_string(cfg.epochs));
  }
  double lr = cfg.base_lr;
  for (int drop : cfg.lr_drop_epochs) {
    if (epoch > drop) lr /= cfg.lr_drop_factor;
  }
  return lr;
}

/// Trainable parameters theta plus optimizer memory.
template <typename Scalar>
struct ClassifierState {
  Architecture arch;
  std::vector<Scalar> parameters;
  std::vector<Scalar> velocity;
  std::uint64_t step = 0;
};

/// Fan-in scaled uniform initialization. The output unit starts at zero so an
/// untrained classifier scores every input 0.5.
template <typename Scalar>
ClassifierState<Scalar> init_classifier(const Architecture& arch, std::uint64_t seed,
                                        bool zero_output = true) {
  arch.validate();
  ClassifierState<Scalar> state;
  state.arch = arch;
  state.parameters.assign(arch.parameter_count(), Scalar(0));
  state.velocity.assign(arch.parameter_count(), Scalar(0));
  Rng rng(derive_seed(seed, 0x1417));
  std::size_t offset = 0;
  int in = 3;
  for (int w : arch.widths) {
    const std::size_t fan_in = static_cast<std::size_t>(in) * 9;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < fan_in * w; ++i) {
      state.parameters[offset + i] = static_cast<Scalar>(uniform(rng, -bound, bound));
    }
    offset += fan_in * w + w;
    in = w;
  }
  if (!zero_output) {
    const double bound = std::sqrt(6.0 / in);
    for (int i = 0; i < in; ++i) {
      state.parameters[offset + i] = static_cast<Scalar>(uniform(rng, -bound, bound));
    }
  }
  return state;
}

/// Forward/backward evaluator for one architecture. Holds scratch buffers, so
/// one instance per thread.
template <typename Scalar>
class Network {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using ConstMatMap = Eigen::Map<const Mat>;
  using MatMap = Eigen::Map<Mat>;

  explicit Network(const Architecture& arch) : arch_(arch) {
    arch_.validate();
    int in = 3;
    int side = arch_.input_side;
    std::size_t offset = 0;
    for (int w : arch_.widths) {
      stages_.push_back(Stage{in, w, side, offset, offset + static_cast<std::size_t>(w) * in * 9});
      offset += static_cast<std::size_t>(w) * in * 9 + w;
      in = w;
      side /= 2;
    }
    head_offset_ = offset;
    final_channels_ = in;
    final_side_ = side;
    inputs_.resize(stages_.size() + 1);
    cols_.resize(stages_.size());
    pre_.resize(stages_.size());
  }

  const Architecture& architecture() const { return arch_; }

  /// Raw output before the logistic squashing.
  Scalar logit(std::span<const Scalar> params, const ImageTensor& image) {
    load(params, image);
    return forward();
  }

  /// Binary cross-entropy of one sample; writes d(loss)/d(theta) into `grad`
  /// (overwritten, not accumulated).
  Scalar loss_and_gradient(std::span<const Scalar> params, const ImageTensor& image, int label,
                           std::span<Scalar> grad) {
    load(params, image);
    if (grad.size() != params.size()) throw ValidationError("gradient buffer size mismatch");
    const Scalar z = forward();
    const Scalar y = static_cast<Scalar>(label);
    const Scalar loss = bce_from_logit(z, y);
    const Scalar dz = sigmoid(z) - y;

    grad_.setZero(theta_.size());
    const int c_last = final_channels_;
    const int hw_last = final_side_ * final_side_;
    ConstMatMap x_last(inputs_.back().data(), c_last, hw_last);
    const Vec pooled = x_last.rowwise().mean();
    Eigen::Map<const Vec> head_w(theta_.data() + head_offset_, c_last);
    Eigen::Map<Vec> g_head_w(grad_.data() + head_offset_, c_last);
    g_head_w = dz * pooled;
    grad_[head_offset_ + c_last] = dz;

    Mat d_next = (dz / static_cast<Scalar>(hw_last)) * head_w.replicate(1, hw_last);
    for (std::size_t s = stages_.size(); s-- > 0;) {
      const Stage& st = stages_[s];
      const int side = st.side;
      const int hw = side * side;
      // Average-pool backward: each of the four sources receives a quarter.
      Mat dz_mat(st.out, hw);
      const int half = side / 2;
      const int rows = st.out;
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          Scalar* dst = dz_mat.data() + static_cast<std::size_t>(y * side + x) * rows;
          const Scalar* src = d_next.data() + static_cast<std::size_t>((y / 2) * half + x / 2) * rows;
          for (int c = 0; c < rows; ++c) dst[c] = Scalar(0.25) * src[c];
        }
      }
      dz_mat = (pre_[s].array() > Scalar(0)).select(dz_mat, Scalar(0));
      MatMap g_w(grad_.data() + st.w_offset, st.out, st.in * 9);
      Eigen::Map<Vec> g_b(grad_.data() + st.b_offset, st.out);
      g_w.noalias() = dz_mat * cols_[s].transpose();
      g_b = dz_mat.rowwise().sum();
      if (s == 0) break;
      ConstMatMap w(theta_.data() + st.w_offset, st.out, st.in * 9);
      const Mat dcol = w.transpose() * dz_mat;
      Mat dx = col2im(dcol, st.in, side);
      if (arch_.residual) dx += dz_mat.topRows(st.in);
      d_next = std::move(dx);
    }
    std::copy(grad_.data(), grad_.data() + grad_.size(), grad.begin());
    return loss;
  }

  static Scalar sigmoid(Scalar z) {
    return z >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-z))
                  : std::exp(z) / (Scalar(1) + std::exp(z));
  }

  static Scalar bce_from_logit(Scalar z, Scalar y) {
    return std::max(z, Scalar(0)) - y * z + std::log1p(std::exp(-std::abs(z)));
  }

 private:
  static constexpr float kInputCenter = 0.5f;
  static constexpr float kInputScale = 4.0f;

  struct Stage {
    int in;
    int out;
    int side;  // input side of this stage
    std::size_t w_offset;
    std::size_t b_offset;
  };

  void check(std::span<const Scalar> params, const ImageTensor& image) const {
    if (params.size() != arch_.parameter_count()) {
      throw ValidationError("parameter count does not match architecture");
    }
    if (image.width() != arch_.input_side || image.height() != arch_.input_side) {
      throw ValidationError("input is " + std::to_string(image.width()) + "x" +
                            std::to_string(image.height()) + ", classifier expects " +
                            std::to_string(arch_.input_side) + "x" +
                            std::to_string(arch_.input_side));
    }
  }

  // Column k*in + c of the im2col matrix holds tap k (row-major 3x3) of channel c.
  void im2col(const Mat& x, int in, int side, Mat& col) const {
    col.setZero(9 * in, side * side);
    for (int y = 0; y < side; ++y) {
      for (int xx = 0; xx < side; ++xx) {
        Scalar* dst = col.data() + static_cast<std::size_t>(y * side + xx) * 9 * in;
        for (int k = 0; k < 9; ++k) {
          const int sy = y + k / 3 - 1;
          const int sx = xx + k % 3 - 1;
          if (sy < 0 || sy >= side || sx < 0 || sx >= side) continue;
          const Scalar* src = x.data() + static_cast<std::size_t>(sy * side + sx) * in;
          std::copy(src, src + in, dst + k * in);
        }
      }
    }
  }

  Mat col2im(const Mat& dcol, int in, int side) const {
    Mat dx = Mat::Zero(in, side * side);
    for (int y = 0; y < side; ++y) {
      for (int xx = 0; xx < side; ++xx) {
        const Scalar* src = dcol.data() + static_cast<std::size_t>(y * side + xx) * 9 * in;
        for (int k = 0; k < 9; ++k) {
          const int sy = y + k / 3 - 1;
          const int sx = xx + k % 3 - 1;
          if (sy < 0 || sy >= side || sx < 0 || sx >= side) continue;
          Scalar* dst = dx.data() + static_cast<std::size_t>(sy * side + sx) * in;
          for (int c = 0; c < in; ++c) dst[c] += src[k * in + c];
        }
      }
    }
    return dx;
  }

  // Parameters and gradients live in Eigen-aligned storage. Over a Map into
  // caller memory, Eigen picks its vectorized/peeled split from the runtime
  // address, so rounding would depend on where the caller's vector lives.
  void load(std::span<const Scalar> params, const ImageTensor& image) {
    check(params, image);
    theta_ = Eigen::Map<const Vec>(params.data(), static_cast<Eigen::Index>(params.size()));
    image_ = &image;
  }

  Scalar forward() {
    const ImageTensor& image = *image_;
    const int side0 = arch_.input_side;
    Mat& x0 = inputs_[0];
    x0.resize(3, side0 * side0);
    for (int c = 0; c < 3; ++c) {
      const auto plane = image.plane(c);
      for (int p = 0; p < side0 * side0; ++p) {
        x0(c, p) = static_cast<Scalar>((plane[p] - kInputCenter) * kInputScale);
      }
    }
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const Stage& st = stages_[s];
      const int side = st.side;
      ConstMatMap w(theta_.data() + st.w_offset, st.out, st.in * 9);
      Eigen::Map<const Vec> b(theta_.data() + st.b_offset, st.out);
      im2col(inputs_[s], st.in, side, cols_[s]);
      Mat& z = pre_[s];
      z.noalias() = w * cols_[s];
      z.colwise() += b;
      if (arch_.residual) z.topRows(st.in) += inputs_[s];
      const int half = side / 2;
      Mat& next = inputs_[s + 1];
      next.setZero(st.out, half * half);
      const int rows = st.out;
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          Scalar* dst = next.data() + static_cast<std::size_t>((y / 2) * half + x / 2) * rows;
          const Scalar* src = z.data() + static_cast<std::size_t>(y * side + x) * rows;
          for (int c = 0; c < rows; ++c) dst[c] += std::max(src[c], Scalar(0));
        }
      }
      next *= Scalar(0.25);
    }
    const int hw_last = final_side_ * final_side_;
    ConstMatMap x_last(inputs_.back().data(), final_channels_, hw_last);
    Eigen::Map<const Vec> head_w(theta_.data() + head_offset_, final_channels_);
    return head_w.dot(x_last.rowwise().mean()) + theta_[head_offset_ + final_channels_];
  }

  Architecture arch_;
  std::vector<Stage> stages_;
  std::size_t head_offset_ = 0;
  int final_channels_ = 0;
  int final_side_ = 0;
  std::vector<Mat> inputs_;
  std::vector<Mat> cols_;
  std::vector<Mat> pre_;
  Vec theta_;
  Vec grad_;
  const ImageTensor* image_ = nullptr;
};

/// Score in [0,1] for one network-sized input.
template <typename Scalar>
double predict(const ClassifierState<Scalar>& state, const ImageTensor& image) {
  thread_local std::unique_ptr<Network<Scalar>> net;
  if (!net || !(net->architecture() == state.arch)) net = std::make_unique<Network<Scalar>>(state.arch);
  const Scalar z = net->logit(state.parameters, image);
  return static_cast<double>(Network<Scalar>::sigmoid(z));
}

struct TrainingSample {
  ImageTensor image;
  int label = 0;
};

/// One momentum-SGD step on the mean binary cross-entropy of `batch`:
///   g = mean grad + weight_decay * theta, rescaled to norm clip_norm when
///   larger (clip_norm > 0);  v = momentum * v + g;  theta -= lr * v.
/// Per-sample gradients are reduced in batch order, so the result does not
/// depend on `cfg.workers`. Returns the mean loss.
template <typename Scalar>
double train_step(ClassifierState<Scalar>& state, std::span<const TrainingSample> batch, double lr,
                  const TrainConfig& cfg) {
  if (batch.empty()) throw ValidationError("train_step needs a non-empty batch");
  if (!(lr >= 0.0)) throw ValidationError("learning rate must be non-negative");
  const std::size_t n_params = state.parameters.size();
  const std::size_t n = batch.size();
  const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(n)));

  std::vector<Scalar> total(n_params, Scalar(0));
  std::vector<double> losses(n, 0.0);
  if (workers == 1) {
    thread_local std::unique_ptr<Network<Scalar>> net;
    if (!net || !(net->architecture() == state.arch)) net = std::make_unique<Network<Scalar>>(state.arch);
    std::vector<Scalar> grad(n_params);
    for (std::size_t i = 0; i < n; ++i) {
      losses[i] = net->loss_and_gradient(state.parameters, batch[i].image, batch[i].label, grad);
      for (std::size_t j = 0; j < n_params; ++j) total[j] += grad[j];
    }
  } else {
    std::vector<std::vector<Scalar>> grads(n, std::vector<Scalar>(n_params));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          Network<Scalar> net(state.arch);
          for (std::size_t i = w; i < n; i += workers) {
            losses[i] = net.loss_and_gradient(state.parameters, batch[i].image, batch[i].label,
                                              grads[i]);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n_params; ++j) total[j] += grads[i][j];
    }
  }

  double loss = 0.0;
  for (double l : losses) loss += l;
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) {
    throw RuntimeError("non-finite loss at step " + std::to_string(state.step));
  }
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  const Scalar mu = static_cast<Scalar>(cfg.momentum);
  const Scalar wd = static_cast<Scalar>(cfg.weight_decay);
  const Scalar rate = static_cast<Scalar>(lr);
  double norm_sq = 0.0;
  for (std::size_t j = 0; j < n_params; ++j) {
    total[j] = total[j] * inv_n + wd * state.parameters[j];
    if (!std::isfinite(static_cast<double>(total[j]))) {
      throw RuntimeError("non-finite gradient at step " + std::to_string(state.step) +
                         ", parameter " + std::to_string(j) + " (loss " + std::to_string(loss) + ")");
    }
    norm_sq += static_cast<double>(total[j]) * static_cast<double>(total[j]);
  }
  const double norm = std::sqrt(norm_sq);
  const Scalar clip = cfg.clip_norm > 0.0 && norm > cfg.clip_norm
                          ? static_cast<Scalar>(cfg.clip_norm / norm)
                          : Scalar(1);
  for (std::size_t j = 0; j < n_params; ++j) {
    state.velocity[j] = mu * state.velocity[j] + clip * total[j];
  }
  if (lr > 0.0) {
    for (std::size_t j = 0; j < n_params; ++j) state.parameters[j] -= rate * state.velocity[j];
  }
  ++state.step;
  return loss;
}

// Checkpoint container:
//   "CLCK1" | u32 descriptor length | descriptor | u64 step | u64 count | count x f32
// All integers and floats little-endian.
inline constexpr char kCheckpointMagic[5] = {'C', 'L', 'C', 'K', '1'};

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw ValidationError("checkpoint truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const ClassifierState<float>& state) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string desc = state.arch.descriptor();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(desc.size()));
  out += desc;
  detail::put_le<std::uint64_t>(out, state.step);
  detail::put_le<std::uint64_t>(out, state.parameters.size());
  for (float p : state.parameters) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(p));
  return out;
}

inline ClassifierState<float> deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      bytes.compare(0, sizeof(kCheckpointMagic), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw ValidationError("not a checkpoint (bad magic)");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto desc_len = detail::get_le<std::uint32_t>(bytes, pos);
  if (pos + desc_len > bytes.size()) throw ValidationError("checkpoint truncated");
  ClassifierState<float> state;
  state.arch = Architecture::parse(bytes.substr(pos, desc_len));
  pos += desc_len;
  state.step = detail::get_le<std::uint64_t>(bytes, pos);
  const auto count = detail::get_le<std::uint64_t>(bytes, pos);
  if (count != state.arch.parameter_count()) {
    throw ValidationError("checkpoint parameter count does not match its architecture");
  }
  state.parameters.resize(count);
  for (auto& p : state.parameters) p = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos));
  if (pos != bytes.size()) throw ValidationError("trailing bytes in checkpoint");
  state.velocity.assign(count, 0.0f);
  return state;
}

inline void save_checkpoint(const ClassifierState<float>& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(state);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeError("failed writing checkpoint " + path.string());
}

inline ClassifierState<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace currilearn
