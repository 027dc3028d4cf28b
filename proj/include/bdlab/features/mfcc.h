#ifndef BDLAB_FEATURES_MFCC_H_
#define BDLAB_FEATURES_MFCC_H_

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bdlab/dsp/waveform.h"

namespace bdlab {

struct MfccConfig {
  int sample_rate = kDefaultSampleRate;
  int n_mfcc = 13;
  int n_fft = 2048;
  int hop_length = 512;
  int n_mels = 128;
  double log_floor = 1e-10;
  std::string window = "hann";
  double f_min = 0.0;
  double f_max = 0.0;  // 0 means sample_rate / 2

  void validate() const;
  // Canonical description of every setting, including the implicit ones.
  std::string describe() const;
  std::string digest() const;
  int num_frames(std::size_t n_samples) const {
    return 1 + static_cast<int>(n_samples / static_cast<std::size_t>(hop_length));
  }
};

// Row-major (n_mfcc x n_frames).
struct FeatureTensor {
  int n_mfcc = 0;
  int n_frames = 0;
  std::vector<double> values;
  std::size_t source_length = 0;
  std::string config_digest;

  double at(int coeff, int frame) const {
    return values[static_cast<std::size_t>(coeff) * n_frames + frame];
  }
  double& at(int coeff, int frame) {
    return values[static_cast<std::size_t>(coeff) * n_frames + frame];
  }
  std::size_t size() const { return values.size(); }
};

std::string to_csv(const FeatureTensor& f);
void write_csv(const FeatureTensor& f, const std::filesystem::path& path);

enum class DftBackend {
  kDenseMatrix,  // explicit cosine/sine basis products; reference path
  kFft,          // FFTW r2c forward, c2r for the adjoint
};

// Waveform -> MFCC with reverse-mode gradient.
//
// Stages: reflect-centre padding, Hann-windowed frames, real DFT, power
// spectrum, HTK mel filterbank, ln(power + floor), orthonormal DCT-II.
class MfccExtractor {
 public:
  explicit MfccExtractor(const MfccConfig& cfg,
                         DftBackend backend = DftBackend::kFft);
  ~MfccExtractor();
  MfccExtractor(const MfccExtractor&) = delete;
  MfccExtractor& operator=(const MfccExtractor&) = delete;

  const MfccConfig& config() const { return cfg_; }
  DftBackend backend() const { return backend_; }

  // Forward intermediates kept for the backward pass.
  struct Trace {
    std::size_t n_samples = 0;
    int n_frames = 0;
    std::vector<double> re;       // n_frames x n_bins
    std::vector<double> im;       // n_frames x n_bins
    std::vector<double> mel_pow;  // n_frames x n_mels
    FeatureTensor features;
  };

  FeatureTensor compute(std::span<const double> x) const;
  FeatureTensor compute(const Waveform& x) const { return compute(x.samples()); }
  Trace trace(std::span<const double> x) const;

  // d<upstream, mfcc(x)>/dx.
  std::vector<double> gradient(std::span<const double> x,
                               const FeatureTensor& upstream) const;
  std::vector<double> gradient(const Trace& trace,
                               const FeatureTensor& upstream) const;

  int n_bins() const { return n_fft_ / 2 + 1; }
  // Dense (n_mels x n_bins) filterbank, exposed for inspection and tests.
  const std::vector<double>& mel_filterbank() const { return mel_; }
  const std::vector<double>& dct_matrix() const { return dct_; }
  const std::vector<double>& window() const { return window_; }

 private:
  struct MelRow {
    int begin = 0;
    int end = 0;  // exclusive
  };
  struct FftPlans;

  void check_input(std::span<const double> x) const;
  void frame_dft(const double* frame, double* re, double* im,
                 double* scratch) const;
  void frame_dft_adjoint(const double* g_re, const double* g_im, double* out,
                         double* scratch) const;

  MfccConfig cfg_;
  DftBackend backend_;
  int n_fft_;
  int hop_;
  std::vector<double> window_;
  std::vector<double> mel_;  // n_mels x n_bins
  std::vector<MelRow> mel_rows_;
  std::vector<double> dct_;  // n_mfcc x n_mels
  // Dense backend bases, n_bins x n_fft; R = C x, I = -S x.
  std::vector<double> cos_basis_;
  std::vector<double> sin_basis_;
  std::unique_ptr<FftPlans> fft_;
};

// Shared extractor per configuration (FFT backend). Thread-safe.
std::shared_ptr<const MfccExtractor> shared_extractor(const MfccConfig& cfg);

FeatureTensor mfcc(const Waveform& x, const MfccConfig& cfg);
std::vector<double> mfcc_gradient(const Waveform& x, const MfccConfig& cfg,
                                  const FeatureTensor& upstream);

// Mel scale used by the filterbank (HTK).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Index into a length-n signal after reflect padding (any n >= 1).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

}  // namespace bdlab

#endif  // BDLAB_FEATURES_MFCC_H_
