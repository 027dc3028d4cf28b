#ifndef BDLAB_MODEL_NETWORK_H_
#define BDLAB_MODEL_NETWORK_H_

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdlab/autograd/graph.h"
#include "bdlab/autograd/tensor.h"
#include "bdlab/util/random.h"

namespace bdlab {

// Convolutional classifier layout. Each conv block is
// conv3x3(pad 1) -> ReLU -> maxpool(2); then dense -> ReLU -> dense(K).
struct ArchSpec {
  std::string id;
  int n_mfcc = 13;
  int n_frames = 32;
  int num_classes = 0;
  std::vector<int> conv_channels;
  int dense_width = 128;

  static ArchSpec small_cnn(int n_mfcc, int n_frames, int num_classes);
  static ArchSpec large_cnn(int n_mfcc, int n_frames, int num_classes);
  // "small-cnn" or "large-cnn".
  static ArchSpec from_id(const std::string& id, int n_mfcc, int n_frames,
                          int num_classes);

  void validate() const;
  struct Plane {
    int channels, height, width;
  };
  // Output plane of each conv block after pooling.
  std::vector<Plane> block_outputs() const;
  int flatten_size() const;
  std::size_t parameter_count() const;
  std::string describe() const;
  std::string digest() const;
  std::string last_conv_layer() const {
    return "conv" + std::to_string(conv_channels.size() - 1);
  }
  std::vector<std::string> layer_ids() const;
  bool operator==(const ArchSpec&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  ag::Tensor<T> value;
  bool operator==(const NamedTensor&) const = default;
};

// Parameters, label vocabulary and the pruning mask of the last conv layer.
template <typename T>
class Network {
 public:
  Network() = default;
  // Seeded uniform fan-in initialisation: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  // for weights and biases. Values are drawn in double and rounded to T so
  // every precision starts from the same point.
  Network(ArchSpec arch, std::vector<std::string> vocabulary, std::uint64_t seed)
      : arch_(std::move(arch)), vocabulary_(std::move(vocabulary)) {
    arch_.validate();
    if (static_cast<int>(vocabulary_.size()) != arch_.num_classes) {
      throw std::invalid_argument("Network: vocabulary size " +
                                  std::to_string(vocabulary_.size()) +
                                  " != class count " +
                                  std::to_string(arch_.num_classes));
    }
    Rng rng = make_rng(seed, {0x696e6974ULL});
    auto init = [&](const std::string& name, ag::Shape shape, int fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      ag::Tensor<T> t(std::move(shape));
      for (T& v : t.data()) v = static_cast<T>(uniform_real(rng, -bound, bound));
      params_.push_back({name, std::move(t)});
    };
    int in_ch = 1;
    for (std::size_t i = 0; i < arch_.conv_channels.size(); ++i) {
      const int out = arch_.conv_channels[i];
      const std::string p = "conv" + std::to_string(i);
      init(p + ".weight", {out, in_ch, 3, 3}, in_ch * 9);
      init(p + ".bias", {out}, in_ch * 9);
      in_ch = out;
    }
    const int flat = arch_.flatten_size();
    init("fc0.weight", {flat, arch_.dense_width}, flat);
    init("fc0.bias", {arch_.dense_width}, flat);
    init("fc1.weight", {arch_.dense_width, arch_.num_classes}, arch_.dense_width);
    init("fc1.bias", {arch_.num_classes}, arch_.dense_width);
    prune_mask_.assign(static_cast<std::size_t>(arch_.conv_channels.back()), T{1});
  }

  const ArchSpec& arch() const { return arch_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  int num_classes() const { return arch_.num_classes; }

  std::vector<NamedTensor<T>>& params() { return params_; }
  const std::vector<NamedTensor<T>>& params() const { return params_; }
  ag::Tensor<T>& param(const std::string& name) {
    for (auto& p : params_) if (p.name == name) return p.value;
    throw std::out_of_range("Network: no parameter " + name);
  }
  const ag::Tensor<T>& param(const std::string& name) const {
    return const_cast<Network*>(this)->param(name);
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // 1 keeps a last-conv channel, 0 removes it.
  const std::vector<T>& prune_mask() const { return prune_mask_; }
  void set_prune_mask(std::vector<T> mask) {
    if (mask.size() != prune_mask_.size()) {
      throw std::invalid_argument("set_prune_mask: size mismatch");
    }
    prune_mask_ = std::move(mask);
  }

  std::vector<ag::Var> bind(ag::Graph<T>& g, bool requires_grad) const {
    std::vector<ag::Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(g.leaf(p.value, requires_grad, p.name));
    return vars;
  }

  struct Output {
    ag::Var logits;
    std::map<std::string, ag::Var> taps;
  };

  // input: (N, 1, n_mfcc, n_frames).
  Output forward(ag::Graph<T>& g, ag::Var input,
                 const std::vector<ag::Var>& p) const {
    const ag::Shape shape = g.value(input).shape();
    if (shape.size() != 4 || shape[1] != 1 || shape[2] != arch_.n_mfcc ||
        shape[3] != arch_.n_frames) {
      throw std::invalid_argument("Network: input shape " + ag::shape_string(shape) +
                                  " does not match (N, 1, " +
                                  std::to_string(arch_.n_mfcc) + ", " +
                                  std::to_string(arch_.n_frames) + ")");
    }
    if (p.size() != params_.size()) throw std::invalid_argument("Network: bad binding");
    Output out;
    ag::Var h = input;
    const std::size_t blocks = arch_.conv_channels.size();
    for (std::size_t i = 0; i < blocks; ++i) {
      h = g.conv2d(h, p[2 * i], p[2 * i + 1], 1);
      h = g.relu(h);
      if (i + 1 == blocks) h = g.mask_channels(h, prune_mask_);
      out.taps["conv" + std::to_string(i)] = h;
      h = g.maxpool2d(h, 2);
    }
    const int n = shape[0];
    h = g.reshape(h, {n, arch_.flatten_size()});
    const std::size_t base = 2 * blocks;
    h = g.add_bias(g.matmul(h, p[base]), p[base + 1]);
    h = g.relu(h);
    out.taps["fc0"] = h;
    out.logits = g.add_bias(g.matmul(h, p[base + 2]), p[base + 3]);
    out.taps["logits"] = out.logits;
    return out;
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    out.arch_ = arch_;
    out.vocabulary_ = vocabulary_;
    for (const auto& p : params_) out.params_.push_back({p.name, p.value.template cast<U>()});
    out.prune_mask_.assign(prune_mask_.begin(), prune_mask_.end());
    return out;
  }

  bool operator==(const Network&) const = default;

 private:
  template <typename U>
  friend class Network;

  ArchSpec arch_;
  std::vector<std::string> vocabulary_;
  std::vector<NamedTensor<T>> params_;
  std::vector<T> prune_mask_;
};

using NetworkModel = Network<float>;

}  // namespace bdlab

#endif  // BDLAB_MODEL_NETWORK_H_
