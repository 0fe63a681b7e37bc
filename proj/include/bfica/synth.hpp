#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "bfica/error.hpp"
#include "bfica/linalg.hpp"
#include "bfica/signal.hpp"

namespace bfica {

enum class ArtifactKind { low_freq_burst, blink_like, step_drift };

inline const char* to_string(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::low_freq_burst: return "low_freq_burst";
    case ArtifactKind::blink_like: return "blink_like";
    case ArtifactKind::step_drift: return "step_drift";
  }
  return "unknown";
}

inline ArtifactKind parse_artifact_kind(const std::string& s) {
  if (s == "low_freq_burst") return ArtifactKind::low_freq_burst;
  if (s == "blink_like") return ArtifactKind::blink_like;
  if (s == "step_drift") return ArtifactKind::step_drift;
  throw Error(Errc::invalid_configuration, "unknown artifact kind '" + s + "'");
}

struct MixtureSpec {
  Index n_channels = 32;
  Index n_samples = 1500;
  Index n_sources = 4;
  Index artifact_count = 1;
  ArtifactKind artifact_kind = ArtifactKind::blink_like;
  double snr_db = 10.0;  // +inf: no noise
  std::uint64_t seed = 1;
  double artifact_gain = 3.0;  // RMS of an artifact source relative to a brain source

  void validate() const {
    if (n_channels < 1) throw Error(Errc::invalid_configuration, "n_channels must be >= 1");
    if (n_samples < 100) throw Error(Errc::invalid_configuration, "n_samples must be >= 100");
    if (n_sources < 1) throw Error(Errc::invalid_configuration, "n_sources must be >= 1");
    if (artifact_count < 0 || artifact_count > n_sources) {
      throw Error(Errc::invalid_configuration, "artifact_count must lie in 0..n_sources");
    }
    if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) {
      throw Error(Errc::invalid_configuration, "snr_db must be a number or +inf");
    }
    if (!(artifact_gain > 0.0) || !std::isfinite(artifact_gain)) {
      throw Error(Errc::invalid_configuration, "artifact_gain must be > 0");
    }
  }
};

/// Planted truth. Sources are ordered brain first, artifacts last.
struct GroundTruth {
  Vector times;
  Matrix sources;   // n_sources x n_samples
  Matrix mixing;    // n_channels x n_sources
  Matrix clean;     // brain part
  Matrix artifact;  // artifact part
  Matrix noise;     // additive white noise
  Matrix observed;
  Index artifact_count = 0;

  Index first_artifact() const { return sources.rows() - artifact_count; }
};

struct SynthResult {
  SignalSample sample;
  GroundTruth truth;
};

namespace detail {

inline void unit_rms(Eigen::Ref<Vector> v) {
  const double rms = std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
  if (rms > 0.0) v /= rms;
}

inline Vector brain_source(const Vector& t, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::uniform_int_distribution<int> cycles(4, 15);
  std::normal_distribution<double> amp;
  Vector s = Vector::Zero(t.size());
  for (int c = 0; c < 12; ++c) {
    const double f = cycles(rng);
    const double a = amp(rng);
    const double ph = phase(rng);
    s += a * (2.0 * M_PI * f * t.array() + ph).sin().matrix();
  }
  unit_rms(s);
  return s;
}

inline Vector artifact_source(const Vector& t, ArtifactKind kind, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::uniform_int_distribution<int> count(1, 2);
  Vector s = Vector::Zero(t.size());
  const int events = count(rng);
  for (int e = 0; e < events; ++e) {
    const double c = u(rng);
    switch (kind) {
      case ArtifactKind::low_freq_burst: {
        const double w = 0.035;
        const double f = 0.5 + (u(rng) - 0.05) / 0.9;
        s += ((-(t.array() - c).square() / (2 * w * w)).exp() * (2 * M_PI * f * (t.array() - c)).cos()).matrix();
        break;
      }
      case ArtifactKind::blink_like: {
        const double w = 0.03;
        s += (-(t.array() - c).square() / (2 * w * w)).exp().matrix();
        break;
      }
      case ArtifactKind::step_drift: {
        const double len = 0.08;
        const double edge = 0.01;
        const auto rise = 1.0 / (1.0 + (-(t.array() - c) / edge).exp());
        const auto fall = 1.0 / (1.0 + ((t.array() - c - len) / edge).exp());
        s += (rise * fall).matrix();
        break;
      }
    }
  }
  unit_rms(s);
  return s;
}

/// Broad spatial pattern: a sum of three random low-frequency plane waves
/// over the layout.
inline Vector broad_column(Index channels, std::mt19937_64& rng) {
  const auto cols = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(channels))));
  const double span = static_cast<double>(cols);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> cycles(0.5, 1.0);
  Vector col = Vector::Zero(channels);
  for (int w = 0; w < 3; ++w) {
    const double dir = angle(rng);
    const double k = 2.0 * M_PI * cycles(rng) / span;
    const double ph = angle(rng);
    for (Index c = 0; c < channels; ++c) {
      const double x = static_cast<double>(c % cols);
      const double y = static_cast<double>(c / cols);
      col(c) += std::sqrt(2.0 / 3.0) * std::cos(k * (x * std::cos(dir) + y * std::sin(dir)) + ph);
    }
  }
  return col;
}

/// Focal spatial pattern: Gaussian falloff around a random electrode on a
/// near-square 2-D layout.
inline Vector focal_column(Index channels, std::mt19937_64& rng) {
  const auto cols = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(channels))));
  std::uniform_int_distribution<Index> pick(0, channels - 1);
  const Index centre = pick(rng);
  const double cx = static_cast<double>(centre % cols);
  const double cy = static_cast<double>(centre / cols);
  Vector col(channels);
  for (Index c = 0; c < channels; ++c) {
    const double dx = static_cast<double>(c % cols) - cx;
    const double dy = static_cast<double>(c / cols) - cy;
    col(c) = std::exp(-(dx * dx + dy * dy) / (2.0 * 0.75 * 0.75));
  }
  return col;
}

}  // namespace detail

/// Deterministic synthetic mixture: smooth random-phase brain sources with
/// broad spatial patterns, sparse high-amplitude artifact sources with focal
/// spatial patterns, and white Gaussian noise at the requested SNR.
inline SynthResult generate(const MixtureSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;

  GroundTruth g;
  g.artifact_count = spec.artifact_count;
  g.times = uniform_grid(spec.n_samples);
  const Index brain = spec.n_sources - spec.artifact_count;
  g.sources.resize(spec.n_sources, spec.n_samples);
  g.mixing.resize(spec.n_channels, spec.n_sources);
  for (Index s = 0; s < spec.n_sources; ++s) {
    if (s < brain) {
      g.sources.row(s) = detail::brain_source(g.times, rng).transpose();
      g.mixing.col(s) = detail::broad_column(spec.n_channels, rng);
    } else {
      g.sources.row(s) = spec.artifact_gain * detail::artifact_source(g.times, spec.artifact_kind, rng).transpose();
      g.mixing.col(s) = detail::focal_column(spec.n_channels, rng);
    }
  }
  g.clean = g.mixing.leftCols(brain) * g.sources.topRows(brain);
  g.artifact = g.mixing.rightCols(spec.artifact_count) * g.sources.bottomRows(spec.artifact_count);
  const Matrix signal = g.clean + g.artifact;

  Matrix raw_noise = Matrix::Zero(spec.n_channels, spec.n_samples);
  if (std::isfinite(spec.snr_db)) {
    const double power = signal.squaredNorm() / static_cast<double>(signal.size());
    const double sd = std::sqrt(power / std::pow(10.0, spec.snr_db / 10.0));
    for (Index c = 0; c < spec.n_channels; ++c) {
      for (Index k = 0; k < spec.n_samples; ++k) raw_noise(c, k) = sd * normal(rng);
    }
  }
  g.observed = signal + raw_noise;
  g.noise = std::move(raw_noise);

  SynthResult out;
  for (Index c = 0; c < spec.n_channels; ++c) {
    out.sample.values.push_back(g.observed.row(c).transpose());
    out.sample.times.push_back(g.times);
    out.sample.labels.push_back("ch" + std::to_string(c + 1));
  }
  out.truth = std::move(g);
  return out;
}

/// Sample excess kurtosis m4 / m2^2 - 3.
inline double excess_kurtosis(const Vector& x) {
  const double n = static_cast<double>(x.size());
  const Vector c = x.array() - x.mean();
  const double m2 = c.squaredNorm() / n;
  if (!(m2 > 0.0)) throw Error(Errc::metric_undefined, "excess kurtosis of a constant series");
  const double m4 = c.array().square().square().sum() / n;
  return m4 / (m2 * m2) - 3.0;
}

inline double abs_correlation(const Vector& a, const Vector& b) {
  const Vector ca = a.array() - a.mean();
  const Vector cb = b.array() - b.mean();
  const double den = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  if (!(den > 0.0)) throw Error(Errc::metric_undefined, "correlation with a constant series");
  return std::abs(ca.dot(cb)) / den;
}

struct CorrelationMatch {
  std::vector<Index> assignment;  // per estimated component: matched source or -1
  std::vector<double> abs_corr;   // per estimated component: |corr| with its match, 0 if unmatched
  std::vector<bool> excluded;     // zero-variance estimated components
  double mean_abs_corr = 0.0;
};

/// Greedy maximum-|corr| matching without replacement. `estimated` holds one
/// component time course per column (samples x q); `sources` one true source
/// per row (n_sources x samples).
inline CorrelationMatch match_correlation(const Matrix& estimated, const Matrix& sources) {
  const Index q = estimated.cols();
  const Index s = sources.rows();
  if (q < 1) throw Error(Errc::invalid_input, "match_correlation: no estimated components");
  if (estimated.rows() != sources.cols()) {
    throw Error(Errc::invalid_input, "match_correlation: time courses differ in length");
  }
  CorrelationMatch m;
  m.assignment.assign(static_cast<std::size_t>(q), -1);
  m.abs_corr.assign(static_cast<std::size_t>(q), 0.0);
  m.excluded.assign(static_cast<std::size_t>(q), false);

  Matrix corr = Matrix::Constant(q, s, -1.0);
  std::vector<bool> source_ok(static_cast<std::size_t>(s), true);
  for (Index k = 0; k < s; ++k) {
    const Vector x = sources.row(k).transpose();
    source_ok[static_cast<std::size_t>(k)] = (x.array() - x.mean()).matrix().squaredNorm() > 0.0;
  }
  for (Index l = 0; l < q; ++l) {
    const Vector e = estimated.col(l);
    if (!((e.array() - e.mean()).matrix().squaredNorm() > 0.0)) {
      m.excluded[static_cast<std::size_t>(l)] = true;
      continue;
    }
    for (Index k = 0; k < s; ++k) {
      if (source_ok[static_cast<std::size_t>(k)]) corr(l, k) = abs_correlation(e, sources.row(k).transpose());
    }
  }

  double total = 0.0;
  Index matched = 0;
  for (Index round = 0; round < std::min(q, s); ++round) {
    Index bl = -1;
    Index bk = -1;
    double best = -1.0;
    for (Index l = 0; l < q; ++l) {
      if (m.assignment[static_cast<std::size_t>(l)] >= 0) continue;
      for (Index k = 0; k < s; ++k) {
        if (corr(l, k) > best) {
          best = corr(l, k);
          bl = l;
          bk = k;
        }
      }
    }
    if (bl < 0 || best < 0.0) break;
    m.assignment[static_cast<std::size_t>(bl)] = bk;
    m.abs_corr[static_cast<std::size_t>(bl)] = best;
    corr.col(bk).setConstant(-1.0);
    corr.row(bl).setConstant(-1.0);
    total += best;
    ++matched;
  }
  if (matched > 0) m.mean_abs_corr = total / static_cast<double>(matched);
  return m;
}

/// Amari error of a q x q product P, normalized by 2q(q-1). Rows of |P| are
/// first scaled to unit maximum, which makes the error invariant to the
/// arbitrary scale of each estimated component:
///   sum_i (sum_j r_ij - 1) + sum_j (sum_i r_ij / max_i r_ij - 1),  r_ij = |p_ij| / max_j |p_ij|.
inline double amari_error(const Matrix& product) {
  const Index q = product.rows();
  if (q < 2 || product.cols() != q) throw Error(Errc::invalid_input, "amari_error: needs a square matrix, q >= 2");
  if (!product.allFinite()) throw Error(Errc::metric_undefined, "amari_error: non-finite product");
  Matrix p = product.cwiseAbs();
  double total = 0.0;
  for (Index i = 0; i < q; ++i) {
    const double top = p.row(i).maxCoeff();
    if (!(top > 0.0)) throw Error(Errc::metric_undefined, "amari_error: zero row");
    p.row(i) /= top;
    total += p.row(i).sum() - 1.0;
  }
  for (Index j = 0; j < q; ++j) {
    const double top = p.col(j).maxCoeff();
    if (!(top > 0.0)) throw Error(Errc::metric_undefined, "amari_error: zero column");
    total += p.col(j).sum() / top - 1.0;
  }
  return total / (2.0 * static_cast<double>(q) * static_cast<double>(q - 1));
}

/// Amari error of P = W A; 0 iff P is a scaled permutation.
inline double amari_index(const Matrix& unmixing, const Matrix& mixing) {
  if (unmixing.rows() != unmixing.cols() || mixing.rows() != mixing.cols() || unmixing.cols() != mixing.rows()) {
    throw Error(Errc::invalid_input, "amari_index: matrices must be square and conformable");
  }
  const Matrix product = unmixing * mixing;
  if (!product.allFinite()) throw Error(Errc::metric_undefined, "amari_index: non-finite product");
  Eigen::FullPivLU<Matrix> lu(product);
  if (lu.rank() < product.rows()) throw Error(Errc::metric_undefined, "amari_index: singular product");
  return amari_error(product);
}

}  // namespace bfica
