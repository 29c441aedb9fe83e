#ifndef NCAL_CONFIG_HPP_
#define NCAL_CONFIG_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncal/channel.hpp"

namespace ncal {

/// Malformed or incomplete configuration; the message names the key and,
/// where there is one, the line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double dbm_to_mw(double dbm);

struct RunConfig {
  SystemConfig system;
  // Powers as written in the file; system holds the linear values.
  double p_ul_dbm = -10.0;
  double p_dl_dbm = 5.0;
  double sigma0_sq_dbm = -85.0;
  double sigma1_sq_dbm = -85.0;
  std::vector<std::size_t> hidden{128, 256, 256};
  bool residual = false;
  std::size_t epochs = 60;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::size_t n_train = 20000;
  std::size_t n_eval = 500;
  std::uint64_t seed = 1;
  std::uint64_t data_seed = 2024;
  std::uint64_t eval_seed = 7;
  std::string out_dir = "out";
  bool deterministic = true;
  bool pilot_len_set = false;  // false: pilot_len follows k_users

  /// Stable FNV-1a hash of every parsed value.
  std::uint64_t hash() const;
  /// "# key = value" lines, linear powers alongside their dBm source.
  std::string header() const;
  /// Sets one power in dBm and its linear counterpart.
  void set_p_ul_dbm(double dbm);
};

/// Parses flat "key = value" text; '#' starts a comment. Required keys:
/// m_antennas, k_users, p_ul_dbm, p_dl_dbm, sigma0_sq_dbm, sigma1_sq_dbm.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Canonical key = value text that parse_config reads back unchanged.
std::string to_config_text(const RunConfig& cfg);

}  // namespace ncal

#endif  // NCAL_CONFIG_HPP_
