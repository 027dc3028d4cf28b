#include "bdlab/features/mfcc.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "bdlab/util/digest.h"

namespace bdlab {
namespace {

// The FFTW planner is not re-entrant; execution with the new-array API is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

void MfccConfig::validate() const {
  std::vector<std::string> errs;
  if (sample_rate <= 0) errs.push_back("sample_rate must be > 0");
  if (n_mfcc <= 0) errs.push_back("n_mfcc must be > 0");
  if (n_mels <= 0) errs.push_back("n_mels must be > 0");
  if (n_mfcc > n_mels) errs.push_back("n_mfcc must be <= n_mels");
  if (hop_length <= 0) errs.push_back("hop_length must be > 0");
  if (n_fft < hop_length) errs.push_back("n_fft must be >= hop_length");
  if (n_fft < 2) errs.push_back("n_fft must be >= 2");
  if (!(log_floor > 0.0)) errs.push_back("log_floor must be > 0");
  if (window != "hann" && window != "rect") {
    errs.push_back("window must be 'hann' or 'rect'");
  }
  const double top = f_max > 0.0 ? f_max : sample_rate / 2.0;
  if (f_min < 0.0 || f_min >= top) errs.push_back("need 0 <= f_min < f_max");
  if (!errs.empty()) {
    std::string msg = "MfccConfig:";
    for (const auto& e : errs) msg += " " + e + ";";
    throw std::invalid_argument(msg);
  }
}

std::string MfccConfig::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "mfcc{sr=" << sample_rate << ",n_mfcc=" << n_mfcc << ",n_fft=" << n_fft
     << ",hop=" << hop_length << ",n_mels=" << n_mels
     << ",log_floor=" << log_floor << ",window=" << window << "(periodic)"
     << ",f_min=" << f_min << ",f_max=" << (f_max > 0 ? f_max : sample_rate / 2.0)
     << ",pad=reflect-center,mel=htk,norm=none,log=ln,dct=ortho-ii}";
  return os.str();
}

std::string MfccConfig::digest() const { return digest_of(describe()); }

std::string to_csv(const FeatureTensor& f) {
  std::ostringstream os;
  os.precision(10);
  for (int c = 0; c < f.n_mfcc; ++c) {
    for (int t = 0; t < f.n_frames; ++t) {
      if (t) os << ',';
      os << f.at(c, t);
    }
    os << '\n';
  }
  return os.str();
}

void write_csv(const FeatureTensor& f, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv(f);
}

struct MfccExtractor::FftPlans {
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;
  ~FftPlans() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    if (r2c) fftw_destroy_plan(r2c);
    if (c2r) fftw_destroy_plan(c2r);
  }
};

MfccExtractor::MfccExtractor(const MfccConfig& cfg, DftBackend backend)
    : cfg_(cfg), backend_(backend), n_fft_(cfg.n_fft), hop_(cfg.hop_length) {
  cfg_.validate();
  const int nb = n_bins();
  const double pi = std::numbers::pi;

  window_.resize(n_fft_);
  for (int j = 0; j < n_fft_; ++j) {
    window_[j] = cfg_.window == "hann"
                     ? 0.5 - 0.5 * std::cos(2.0 * pi * j / n_fft_)
                     : 1.0;
  }

  // Triangular filters on an HTK mel grid, unnormalised.
  const double f_max = cfg_.f_max > 0.0 ? cfg_.f_max : cfg_.sample_rate / 2.0;
  const double m_lo = hz_to_mel(cfg_.f_min);
  const double m_hi = hz_to_mel(f_max);
  std::vector<double> f_pts(cfg_.n_mels + 2);
  for (int i = 0; i < cfg_.n_mels + 2; ++i) {
    f_pts[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg_.n_mels + 1));
  }
  mel_.assign(static_cast<std::size_t>(cfg_.n_mels) * nb, 0.0);
  mel_rows_.resize(cfg_.n_mels);
  for (int m = 0; m < cfg_.n_mels; ++m) {
    int first = nb, last = -1;
    for (int k = 0; k < nb; ++k) {
      const double freq = (cfg_.sample_rate / 2.0) * k / (nb - 1);
      const double down = (freq - f_pts[m]) / (f_pts[m + 1] - f_pts[m]);
      const double up = (f_pts[m + 2] - freq) / (f_pts[m + 2] - f_pts[m + 1]);
      const double w = std::max(0.0, std::min(down, up));
      if (w > 0.0) {
        mel_[static_cast<std::size_t>(m) * nb + k] = w;
        first = std::min(first, k);
        last = std::max(last, k);
      }
    }
    mel_rows_[m] = last < 0 ? MelRow{0, 0} : MelRow{first, last + 1};
  }

  dct_.resize(static_cast<std::size_t>(cfg_.n_mfcc) * cfg_.n_mels);
  for (int c = 0; c < cfg_.n_mfcc; ++c) {
    const double scale = c == 0 ? std::sqrt(1.0 / cfg_.n_mels)
                                : std::sqrt(2.0 / cfg_.n_mels);
    for (int m = 0; m < cfg_.n_mels; ++m) {
      dct_[static_cast<std::size_t>(c) * cfg_.n_mels + m] =
          scale * std::cos(pi / cfg_.n_mels * (m + 0.5) * c);
    }
  }

  if (backend_ == DftBackend::kDenseMatrix) {
    cos_basis_.resize(static_cast<std::size_t>(nb) * n_fft_);
    sin_basis_.resize(static_cast<std::size_t>(nb) * n_fft_);
    for (int k = 0; k < nb; ++k) {
      for (int j = 0; j < n_fft_; ++j) {
        // Reduce k*j mod N first so the angle stays exact for large N.
        const long long kj = (static_cast<long long>(k) * j) % n_fft_;
        const double a = 2.0 * pi * static_cast<double>(kj) / n_fft_;
        cos_basis_[static_cast<std::size_t>(k) * n_fft_ + j] = std::cos(a);
        sin_basis_[static_cast<std::size_t>(k) * n_fft_ + j] = std::sin(a);
      }
    }
  } else {
    fft_ = std::make_unique<FftPlans>();
    std::vector<double> in(n_fft_);
    std::vector<std::complex<double>> out(nb);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fft_->r2c = fftw_plan_dft_r2c_1d(
        n_fft_, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
        FFTW_ESTIMATE | FFTW_UNALIGNED);
    fft_->c2r = fftw_plan_dft_c2r_1d(
        n_fft_, reinterpret_cast<fftw_complex*>(out.data()), in.data(),
        FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!fft_->r2c || !fft_->c2r) {
      throw std::runtime_error("MfccExtractor: FFTW planning failed");
    }
  }
}

MfccExtractor::~MfccExtractor() = default;

void MfccExtractor::check_input(std::span<const double> x) const {
  if (x.empty()) throw std::invalid_argument("mfcc: empty waveform");
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("mfcc: non-finite input");
  }
}

void MfccExtractor::frame_dft(const double* frame, double* re, double* im,
                              double* scratch) const {
  const int nb = n_bins();
  if (backend_ == DftBackend::kDenseMatrix) {
    for (int k = 0; k < nb; ++k) {
      const double* c = &cos_basis_[static_cast<std::size_t>(k) * n_fft_];
      const double* s = &sin_basis_[static_cast<std::size_t>(k) * n_fft_];
      double acc_r = 0.0, acc_i = 0.0;
      for (int j = 0; j < n_fft_; ++j) {
        acc_r += c[j] * frame[j];
        acc_i -= s[j] * frame[j];
      }
      re[k] = acc_r;
      im[k] = acc_i;
    }
    return;
  }
  auto* out = reinterpret_cast<fftw_complex*>(scratch);
  fftw_execute_dft_r2c(fft_->r2c, const_cast<double*>(frame), out);
  for (int k = 0; k < nb; ++k) {
    re[k] = out[k][0];
    im[k] = out[k][1];
  }
}

// Adjoint of frame_dft: out[j] = sum_k g_re[k] cos(2 pi k j / N)
//                                      - g_im[k] sin(2 pi k j / N).
void MfccExtractor::frame_dft_adjoint(const double* g_re, const double* g_im,
                                      double* out, double* scratch) const {
  const int nb = n_bins();
  if (backend_ == DftBackend::kDenseMatrix) {
    std::fill(out, out + n_fft_, 0.0);
    for (int k = 0; k < nb; ++k) {
      const double* c = &cos_basis_[static_cast<std::size_t>(k) * n_fft_];
      const double* s = &sin_basis_[static_cast<std::size_t>(k) * n_fft_];
      const double gr = g_re[k], gi = g_im[k];
      for (int j = 0; j < n_fft_; ++j) out[j] += gr * c[j] - gi * s[j];
    }
    return;
  }
  // c2r evaluates Y0 + 2 sum_{0<k<N/2} Re(Y_k e^{+i..}) (+ Nyquist term),
  // so interior bins are halved to cancel the Hermitian doubling.
  auto* y = reinterpret_cast<fftw_complex*>(scratch);
  for (int k = 0; k < nb; ++k) {
    const bool self_conjugate = k == 0 || 2 * k == n_fft_;
    const double f = self_conjugate ? 1.0 : 0.5;
    y[k][0] = f * g_re[k];
    y[k][1] = self_conjugate ? 0.0 : f * g_im[k];
  }
  fftw_execute_dft_c2r(fft_->c2r, y, out);
}

MfccExtractor::Trace MfccExtractor::trace(std::span<const double> x) const {
  check_input(x);
  const int nb = n_bins();
  const int n_mels = cfg_.n_mels;
  const int n_mfcc = cfg_.n_mfcc;
  const std::ptrdiff_t pad = n_fft_ / 2;
  const std::size_t n = x.size();
  const int frames =
      1 + static_cast<int>((n + 2 * static_cast<std::size_t>(pad) - n_fft_) / hop_);

  Trace tr;
  tr.n_samples = n;
  tr.n_frames = frames;
  tr.re.resize(static_cast<std::size_t>(frames) * nb);
  tr.im.resize(static_cast<std::size_t>(frames) * nb);
  tr.mel_pow.resize(static_cast<std::size_t>(frames) * n_mels);
  FeatureTensor& f = tr.features;
  f.n_mfcc = n_mfcc;
  f.n_frames = frames;
  f.values.assign(static_cast<std::size_t>(n_mfcc) * frames, 0.0);
  f.source_length = n;
  f.config_digest = cfg_.digest();

  std::vector<double> frame(n_fft_);
  std::vector<double> scratch(2 * (nb + 1));
  std::vector<double> pow(nb);
  std::vector<double> log_mel(n_mels);
  for (int t = 0; t < frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) * hop_ - pad;
    for (int j = 0; j < n_fft_; ++j) {
      frame[j] = window_[j] * x[reflect_index(start + j, n)];
    }
    double* re = &tr.re[static_cast<std::size_t>(t) * nb];
    double* im = &tr.im[static_cast<std::size_t>(t) * nb];
    frame_dft(frame.data(), re, im, scratch.data());
    for (int k = 0; k < nb; ++k) pow[k] = re[k] * re[k] + im[k] * im[k];
    double* mp = &tr.mel_pow[static_cast<std::size_t>(t) * n_mels];
    for (int m = 0; m < n_mels; ++m) {
      const double* row = &mel_[static_cast<std::size_t>(m) * nb];
      double acc = 0.0;
      for (int k = mel_rows_[m].begin; k < mel_rows_[m].end; ++k) {
        acc += row[k] * pow[k];
      }
      mp[m] = acc;
      log_mel[m] = std::log(acc + cfg_.log_floor);
    }
    for (int c = 0; c < n_mfcc; ++c) {
      const double* d = &dct_[static_cast<std::size_t>(c) * n_mels];
      double acc = 0.0;
      for (int m = 0; m < n_mels; ++m) acc += d[m] * log_mel[m];
      f.at(c, t) = acc;
    }
  }
  return tr;
}

FeatureTensor MfccExtractor::compute(std::span<const double> x) const {
  return trace(x).features;
}

std::vector<double> MfccExtractor::gradient(std::span<const double> x,
                                            const FeatureTensor& upstream) const {
  return gradient(trace(x), upstream);
}

std::vector<double> MfccExtractor::gradient(const Trace& tr,
                                            const FeatureTensor& upstream) const {
  const int nb = n_bins();
  const int n_mels = cfg_.n_mels;
  const int n_mfcc = cfg_.n_mfcc;
  if (upstream.n_mfcc != n_mfcc || upstream.n_frames != tr.n_frames ||
      upstream.values.size() != static_cast<std::size_t>(n_mfcc) * tr.n_frames) {
    throw std::invalid_argument("mfcc_gradient: upstream shape mismatch");
  }
  const std::ptrdiff_t pad = n_fft_ / 2;
  const std::size_t n = tr.n_samples;

  std::vector<double> gx(n, 0.0);
  std::vector<double> g_log(n_mels), g_pow(nb), g_re(nb), g_im(nb);
  std::vector<double> g_frame(n_fft_);
  std::vector<double> scratch(2 * (nb + 1));
  for (int t = 0; t < tr.n_frames; ++t) {
    bool any = false;
    for (int c = 0; c < n_mfcc; ++c) any |= upstream.at(c, t) != 0.0;
    if (!any) continue;

    const double* mp = &tr.mel_pow[static_cast<std::size_t>(t) * n_mels];
    for (int m = 0; m < n_mels; ++m) {
      double acc = 0.0;
      for (int c = 0; c < n_mfcc; ++c) {
        acc += dct_[static_cast<std::size_t>(c) * n_mels + m] * upstream.at(c, t);
      }
      g_log[m] = acc / (mp[m] + cfg_.log_floor);
    }
    std::fill(g_pow.begin(), g_pow.end(), 0.0);
    for (int m = 0; m < n_mels; ++m) {
      const double* row = &mel_[static_cast<std::size_t>(m) * nb];
      for (int k = mel_rows_[m].begin; k < mel_rows_[m].end; ++k) {
        g_pow[k] += row[k] * g_log[m];
      }
    }
    const double* re = &tr.re[static_cast<std::size_t>(t) * nb];
    const double* im = &tr.im[static_cast<std::size_t>(t) * nb];
    for (int k = 0; k < nb; ++k) {
      g_re[k] = 2.0 * re[k] * g_pow[k];
      g_im[k] = 2.0 * im[k] * g_pow[k];
    }
    frame_dft_adjoint(g_re.data(), g_im.data(), g_frame.data(), scratch.data());
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) * hop_ - pad;
    for (int j = 0; j < n_fft_; ++j) {
      gx[reflect_index(start + j, n)] += window_[j] * g_frame[j];
    }
  }
  return gx;
}

std::shared_ptr<const MfccExtractor> shared_extractor(const MfccConfig& cfg) {
  static std::mutex mu;
  static std::map<std::string, std::shared_ptr<const MfccExtractor>> cache;
  const std::string key = cfg.describe();
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto ex = std::make_shared<const MfccExtractor>(cfg, DftBackend::kFft);
  cache.emplace(key, ex);
  return ex;
}

FeatureTensor mfcc(const Waveform& x, const MfccConfig& cfg) {
  return shared_extractor(cfg)->compute(x.samples());
}

std::vector<double> mfcc_gradient(const Waveform& x, const MfccConfig& cfg,
                                  const FeatureTensor& upstream) {
  return shared_extractor(cfg)->gradient(x.samples(), upstream);
}

}  // namespace bdlab
