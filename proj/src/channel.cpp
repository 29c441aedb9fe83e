#include "ncal/channel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ncal/binary_io.hpp"
#include "ncal/rng.hpp"

namespace ncal {

void SystemConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("SystemConfig: " + what); };
  if (m_antennas < 1) fail("m_antennas must be >= 1");
  if (k_users < 1) fail("k_users must be >= 1");
  if (pilot_len < 1) fail("pilot_len must be >= 1");
  if (n_paths < 1) fail("n_paths must be >= 1");
  if (pilot_len < k_users && !allow_short_pilots) fail("pilot_len must be >= k_users");
  if (!(f_ul_hz > 0) || !(f_dl_hz > 0)) fail("carrier frequencies must be > 0");
  if (!(p_ul_mw > 0) || !(p_dl_mw > 0)) fail("powers must be > 0");
  if (!(sigma0_sq_mw > 0)) fail("sigma0_sq_mw must be > 0");
  if (!(sigma1_sq_mw >= 0)) fail("sigma1_sq_mw must be >= 0");
  if (!(spacing_wavelengths > 0)) fail("spacing_wavelengths must be > 0");
  if (!(gain_correlation >= 0.0 && gain_correlation <= 1.0)) {
    fail("gain_correlation must lie in [0, 1]");
  }
}

std::vector<cdouble> steering_vector(double theta_rad, std::size_t m, double spacing_wavelengths) {
  std::vector<cdouble> a(m);
  const double step = 2.0 * std::numbers::pi * spacing_wavelengths * std::sin(theta_rad);
  for (std::size_t n = 0; n < m; ++n) a[n] = std::polar(1.0, step * static_cast<double>(n));
  return a;
}

std::vector<cdouble> synth_channel(const PathSet& paths, double f_hz, std::size_t m,
                                   double spacing_wavelengths, LinkDirection direction) {
  if (paths.empty()) throw std::invalid_argument("synth_channel: empty path set");
  std::vector<cdouble> h(m);
  for (const PathRecord& p : paths) {
    const cdouble gain = direction == LinkDirection::kUplink ? p.gain_ul : p.gain_dl;
    const double delay_phase = -2.0 * std::numbers::pi * f_hz * (p.dist_m / kSpeedOfLight);
    const cdouble coeff = gain * std::polar(1.0, delay_phase);
    const auto a = steering_vector(p.aod_rad, m, spacing_wavelengths);
    for (std::size_t n = 0; n < m; ++n) h[n] += coeff * a[n];
  }
  return h;
}

ChannelPair gen_channel_pair(const SystemConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::kChannel)}));
  const double gain_var = 1.0 / static_cast<double>(cfg.n_paths);
  const double half_pi = std::numbers::pi / 2.0;
  const double innovation = std::sqrt(1.0 - cfg.gain_correlation * cfg.gain_correlation);

  ChannelPair pair{CMatrix(cfg.m_antennas, cfg.k_users), CMatrix(cfg.m_antennas, cfg.k_users),
                   {}};
  pair.paths.resize(cfg.k_users);
  for (std::size_t k = 0; k < cfg.k_users; ++k) {
    PathSet& ps = pair.paths[k];
    ps.resize(cfg.n_paths);
    for (PathRecord& p : ps) {
      p.aod_rad = rng.uniform(-half_pi, half_pi);
      p.dist_m = rng.uniform(10.0, 100.0);
      p.gain_ul = rng.complex_gaussian(gain_var);
      p.gain_dl = cfg.gain_correlation * p.gain_ul + innovation * rng.complex_gaussian(gain_var);
    }
    pair.h_ul.set_col(k, synth_channel(ps, cfg.f_ul_hz, cfg.m_antennas, cfg.spacing_wavelengths,
                                       LinkDirection::kUplink));
    pair.h_dl.set_col(k, synth_channel(ps, cfg.f_dl_hz, cfg.m_antennas, cfg.spacing_wavelengths,
                                       LinkDirection::kDownlink));
  }
  return pair;
}

std::vector<ChannelPair> gen_dataset(const SystemConfig& cfg, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("gen_dataset: n must be >= 1");
  std::vector<ChannelPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen_channel_pair(cfg, derive_seed(seed, {i})));
  return out;
}

namespace {

void write_matrix(BinaryWriter& w, const CMatrix& a) {
  for (cdouble z : a.entries()) {
    w.f64(z.real());
    w.f64(z.imag());
  }
}

void read_matrix(BinaryReader& r, CMatrix& a) {
  for (cdouble& z : a.entries()) {
    const double re = r.f64();
    const double im = r.f64();
    z = {re, im};
  }
}

}  // namespace

void save_dataset(const std::string& path, const SystemConfig& cfg,
                  const std::vector<ChannelPair>& samples) {
  BinaryWriter w(path);
  w.magic("NCCH");
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(cfg.m_antennas));
  w.u32(static_cast<std::uint32_t>(cfg.k_users));
  w.u32(static_cast<std::uint32_t>(cfg.pilot_len));
  w.u32(static_cast<std::uint32_t>(cfg.n_paths));
  w.f64(cfg.f_ul_hz);
  w.f64(cfg.f_dl_hz);
  w.f64(cfg.p_ul_mw);
  w.f64(cfg.p_dl_mw);
  w.f64(cfg.sigma0_sq_mw);
  w.f64(cfg.sigma1_sq_mw);
  w.f64(cfg.spacing_wavelengths);
  w.f64(cfg.gain_correlation);
  w.u64(samples.size());
  for (const ChannelPair& s : samples) {
    write_matrix(w, s.h_ul);
    write_matrix(w, s.h_dl);
    for (const PathSet& ps : s.paths) {
      for (const PathRecord& p : ps) {
        w.f64(p.aod_rad);
        w.f64(p.dist_m);
        w.f64(p.gain_ul.real());
        w.f64(p.gain_ul.imag());
        w.f64(p.gain_dl.real());
        w.f64(p.gain_dl.imag());
      }
    }
  }
  w.close();
}

Dataset load_dataset(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("NCCH");
  const std::uint16_t version = r.u16();
  if (version != kDatasetVersion) {
    throw IoError("'" + path + "': unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  SystemConfig& cfg = ds.cfg;
  cfg.m_antennas = r.u32();
  cfg.k_users = r.u32();
  cfg.pilot_len = r.u32();
  cfg.n_paths = r.u32();
  cfg.f_ul_hz = r.f64();
  cfg.f_dl_hz = r.f64();
  cfg.p_ul_mw = r.f64();
  cfg.p_dl_mw = r.f64();
  cfg.sigma0_sq_mw = r.f64();
  cfg.sigma1_sq_mw = r.f64();
  cfg.spacing_wavelengths = r.f64();
  cfg.gain_correlation = r.f64();
  cfg.allow_short_pilots = cfg.pilot_len < cfg.k_users;
  const std::uint64_t n = r.u64();
  ds.samples.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    ChannelPair s{CMatrix(cfg.m_antennas, cfg.k_users), CMatrix(cfg.m_antennas, cfg.k_users), {}};
    read_matrix(r, s.h_ul);
    read_matrix(r, s.h_dl);
    s.paths.assign(cfg.k_users, PathSet(cfg.n_paths));
    for (PathSet& ps : s.paths) {
      for (PathRecord& p : ps) {
        p.aod_rad = r.f64();
        p.dist_m = r.f64();
        const double ulr = r.f64();
        const double uli = r.f64();
        const double dlr = r.f64();
        const double dli = r.f64();
        p.gain_ul = {ulr, uli};
        p.gain_dl = {dlr, dli};
      }
    }
    ds.samples.push_back(std::move(s));
  }
  if (!r.at_end()) throw IoError("'" + path + "': trailing bytes after dataset");
  return ds;
}

}  // namespace ncal
