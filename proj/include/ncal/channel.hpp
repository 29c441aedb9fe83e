#ifndef NCAL_CHANNEL_HPP_
#define NCAL_CHANNEL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "ncal/numerics.hpp"

namespace ncal {

inline constexpr double kSpeedOfLight = 299792458.0;

/// Scenario scalars. Powers and variances are linear milliwatts.
struct SystemConfig {
  std::size_t m_antennas = 16;
  std::size_t k_users = 4;
  std::size_t pilot_len = 4;
  std::size_t n_paths = 5;
  double f_ul_hz = 2.4e9;
  double f_dl_hz = 2.5e9;
  double p_ul_mw = 0.1;
  double p_dl_mw = 3.1622776601683795;
  double sigma0_sq_mw = 3.1622776601683795e-9;
  double sigma1_sq_mw = 3.1622776601683795e-9;
  double spacing_wavelengths = 0.5;
  // Correlation of each path's downlink gain with its uplink gain:
  // a_dl = rho * a_ul + sqrt(1 - rho^2) * w. Zero draws them independently.
  double gain_correlation = 0.0;
  // Set when the caller deliberately chooses pilot_len < k_users.
  bool allow_short_pilots = false;

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
};

struct PathRecord {
  double aod_rad = 0.0;
  double dist_m = 1.0;
  cdouble gain_ul;
  cdouble gain_dl;
};

using PathSet = std::vector<PathRecord>;

enum class LinkDirection { kUplink, kDownlink };

/// Paired channels for one drop. Column k of h_ul / h_dl is user k.
struct ChannelPair {
  CMatrix h_ul;  // M x K
  CMatrix h_dl;  // M x K
  std::vector<PathSet> paths;  // one per user
};

std::vector<cdouble> steering_vector(double theta_rad, std::size_t m, double spacing_wavelengths);

std::vector<cdouble> synth_channel(const PathSet& paths, double f_hz, std::size_t m,
                                   double spacing_wavelengths, LinkDirection direction);

/// Samples one geometry per user and renders it at both carriers.
ChannelPair gen_channel_pair(const SystemConfig& cfg, std::uint64_t seed);

/// Sample i depends only on (seed, i).
std::vector<ChannelPair> gen_dataset(const SystemConfig& cfg, std::size_t n, std::uint64_t seed);

// "NCCH" dataset file; layout documented in README.md.
inline constexpr std::uint16_t kDatasetVersion = 1;

struct Dataset {
  SystemConfig cfg;
  std::vector<ChannelPair> samples;
};

void save_dataset(const std::string& path, const SystemConfig& cfg,
                  const std::vector<ChannelPair>& samples);
Dataset load_dataset(const std::string& path);

}  // namespace ncal

#endif  // NCAL_CHANNEL_HPP_
