#include <sstream>

#include "bdlab/model/network.h"
#include "bdlab/util/digest.h"

namespace bdlab {

ArchSpec ArchSpec::small_cnn(int n_mfcc, int n_frames, int num_classes) {
  return ArchSpec{"small-cnn", n_mfcc, n_frames, num_classes, {32, 64}, 128};
}

ArchSpec ArchSpec::large_cnn(int n_mfcc, int n_frames, int num_classes) {
  return ArchSpec{"large-cnn", n_mfcc, n_frames, num_classes, {64, 128, 256}, 256};
}

ArchSpec ArchSpec::from_id(const std::string& id, int n_mfcc, int n_frames,
                           int num_classes) {
  if (id == "small-cnn") return small_cnn(n_mfcc, n_frames, num_classes);
  if (id == "large-cnn") return large_cnn(n_mfcc, n_frames, num_classes);
  throw std::invalid_argument("unknown architecture '" + id +
                              "' (expected small-cnn or large-cnn)");
}

void ArchSpec::validate() const {
  if (num_classes < 1) throw std::invalid_argument("ArchSpec: class count must be >= 1");
  if (n_mfcc < 1 || n_frames < 1) throw std::invalid_argument("ArchSpec: empty input");
  if (conv_channels.empty()) throw std::invalid_argument("ArchSpec: no conv blocks");
  if (dense_width < 1) throw std::invalid_argument("ArchSpec: dense width must be >= 1");
  int h = n_mfcc, w = n_frames;
  for (int c : conv_channels) {
    if (c < 1) throw std::invalid_argument("ArchSpec: conv width must be >= 1");
    if (h < 2 || w < 2) {
      throw std::invalid_argument("ArchSpec: input " + std::to_string(n_mfcc) + "x" +
                                  std::to_string(n_frames) + " too small for " +
                                  std::to_string(conv_channels.size()) + " pooling stages");
    }
    h /= 2;
    w /= 2;
  }
}

std::vector<ArchSpec::Plane> ArchSpec::block_outputs() const {
  std::vector<Plane> out;
  int h = n_mfcc, w = n_frames;
  for (int c : conv_channels) {
    h /= 2;
    w /= 2;
    out.push_back({c, h, w});
  }
  return out;
}

int ArchSpec::flatten_size() const {
  const Plane p = block_outputs().back();
  return p.channels * p.height * p.width;
}

std::size_t ArchSpec::parameter_count() const {
  std::size_t n = 0;
  int in = 1;
  for (int c : conv_channels) {
    n += static_cast<std::size_t>(c) * in * 9 + c;
    in = c;
  }
  n += static_cast<std::size_t>(flatten_size()) * dense_width + dense_width;
  n += static_cast<std::size_t>(dense_width) * num_classes + num_classes;
  return n;
}

std::string ArchSpec::describe() const {
  std::ostringstream os;
  os << "arch{id=" << id << ",in=" << n_mfcc << "x" << n_frames
     << ",K=" << num_classes << ",conv=[";
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    os << (i ? "," : "") << conv_channels[i];
  }
  os << "],k=3x3,pad=1,pool=2,dense=" << dense_width << "}";
  return os.str();
}

std::string ArchSpec::digest() const { return digest_of(describe()); }

std::vector<std::string> ArchSpec::layer_ids() const {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    ids.push_back("conv" + std::to_string(i));
  }
  ids.push_back("fc0");
  ids.push_back("logits");
  return ids;
}

}  // namespace bdlab
