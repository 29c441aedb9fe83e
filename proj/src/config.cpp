#include "ncal/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace ncal {

double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::string key;
  std::size_t line;
  std::string value;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("line " + std::to_string(line) + ": key '" + key + "': " + what + " ('" +
                      value + "')");
  }

  double as_double() const {
    double out = 0.0;
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) fail("expected a number");
    return out;
  }

  std::uint64_t as_u64() const {
    std::uint64_t out = 0;
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) fail("expected a non-negative integer");
    return out;
  }

  std::size_t as_count() const {
    const std::uint64_t v = as_u64();
    if (v < 1) fail("must be >= 1");
    return static_cast<std::size_t>(v);
  }

  bool as_bool() const {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    fail("expected true or false");
  }

  std::vector<std::size_t> as_count_list() const {
    std::vector<std::size_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      Field f{key, line, trim(item)};
      out.push_back(f.as_count());
    }
    if (out.empty()) fail("expected a comma-separated list");
    return out;
  }
};

using Setter = std::function<void(RunConfig&, const Field&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"m_antennas", [](RunConfig& c, const Field& f) { c.system.m_antennas = f.as_count(); }},
      {"k_users", [](RunConfig& c, const Field& f) { c.system.k_users = f.as_count(); }},
      {"pilot_len",
       [](RunConfig& c, const Field& f) {
         c.system.pilot_len = f.as_count();
         c.pilot_len_set = true;
       }},
      {"n_paths", [](RunConfig& c, const Field& f) { c.system.n_paths = f.as_count(); }},
      {"f_ul_hz", [](RunConfig& c, const Field& f) { c.system.f_ul_hz = f.as_double(); }},
      {"f_dl_hz", [](RunConfig& c, const Field& f) { c.system.f_dl_hz = f.as_double(); }},
      {"p_ul_dbm", [](RunConfig& c, const Field& f) { c.p_ul_dbm = f.as_double(); }},
      {"p_dl_dbm", [](RunConfig& c, const Field& f) { c.p_dl_dbm = f.as_double(); }},
      {"sigma0_sq_dbm", [](RunConfig& c, const Field& f) { c.sigma0_sq_dbm = f.as_double(); }},
      {"sigma1_sq_dbm", [](RunConfig& c, const Field& f) { c.sigma1_sq_dbm = f.as_double(); }},
      {"spacing_wavelengths",
       [](RunConfig& c, const Field& f) { c.system.spacing_wavelengths = f.as_double(); }},
      {"gain_correlation",
       [](RunConfig& c, const Field& f) { c.system.gain_correlation = f.as_double(); }},
      {"hidden", [](RunConfig& c, const Field& f) { c.hidden = f.as_count_list(); }},
      {"residual", [](RunConfig& c, const Field& f) { c.residual = f.as_bool(); }},
      {"epochs", [](RunConfig& c, const Field& f) { c.epochs = f.as_count(); }},
      {"batch_size", [](RunConfig& c, const Field& f) { c.batch_size = f.as_count(); }},
      {"lr", [](RunConfig& c, const Field& f) { c.lr = f.as_double(); }},
      {"n_train", [](RunConfig& c, const Field& f) { c.n_train = f.as_count(); }},
      {"n_eval", [](RunConfig& c, const Field& f) { c.n_eval = f.as_count(); }},
      {"seed", [](RunConfig& c, const Field& f) { c.seed = f.as_u64(); }},
      {"data_seed", [](RunConfig& c, const Field& f) { c.data_seed = f.as_u64(); }},
      {"eval_seed", [](RunConfig& c, const Field& f) { c.eval_seed = f.as_u64(); }},
      {"out_dir", [](RunConfig& c, const Field& f) { c.out_dir = f.value; }},
      {"deterministic", [](RunConfig& c, const Field& f) { c.deterministic = f.as_bool(); }},
  };
  return table;
}

const char* const kRequired[] = {"m_antennas",    "k_users",      "p_ul_dbm",
                                 "p_dl_dbm",      "sigma0_sq_dbm", "sigma1_sq_dbm"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string join(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

}  // namespace

void RunConfig::set_p_ul_dbm(double dbm) {
  p_ul_dbm = dbm;
  system.p_ul_mw = dbm_to_mw(dbm);
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    Field f{trim(line.substr(0, eq)), line_no, trim(line.substr(eq + 1))};
    const auto it = setters().find(f.key);
    if (it == setters().end()) f.fail("unknown key");
    if (!seen.insert(f.key).second) f.fail("duplicate key");
    if (f.value.empty()) f.fail("empty value");
    it->second(cfg, f);
  }
  for (const char* key : kRequired) {
    if (!seen.count(key)) throw ConfigError(std::string("missing required key '") + key + "'");
  }
  // dBm to linear happens here and nowhere else.
  cfg.system.p_ul_mw = dbm_to_mw(cfg.p_ul_dbm);
  cfg.system.p_dl_mw = dbm_to_mw(cfg.p_dl_dbm);
  cfg.system.sigma0_sq_mw = dbm_to_mw(cfg.sigma0_sq_dbm);
  cfg.system.sigma1_sq_mw = dbm_to_mw(cfg.sigma1_sq_dbm);
  if (!cfg.pilot_len_set) cfg.system.pilot_len = cfg.system.k_users;
  cfg.system.allow_short_pilots = cfg.pilot_len_set && cfg.system.pilot_len < cfg.system.k_users;
  if (!(cfg.lr >= 0.0)) throw ConfigError("key 'lr': must be >= 0");
  try {
    cfg.system.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::ios_base::failure("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string to_config_text(const RunConfig& c) {
  std::string out;
  auto put = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  put("m_antennas", std::to_string(c.system.m_antennas));
  put("k_users", std::to_string(c.system.k_users));
  if (c.pilot_len_set) put("pilot_len", std::to_string(c.system.pilot_len));
  put("n_paths", std::to_string(c.system.n_paths));
  put("f_ul_hz", fmt(c.system.f_ul_hz));
  put("f_dl_hz", fmt(c.system.f_dl_hz));
  put("p_ul_dbm", fmt(c.p_ul_dbm));
  put("p_dl_dbm", fmt(c.p_dl_dbm));
  put("sigma0_sq_dbm", fmt(c.sigma0_sq_dbm));
  put("sigma1_sq_dbm", fmt(c.sigma1_sq_dbm));
  put("spacing_wavelengths", fmt(c.system.spacing_wavelengths));
  put("gain_correlation", fmt(c.system.gain_correlation));
  put("hidden", join(c.hidden));
  put("residual", c.residual ? "true" : "false");
  put("epochs", std::to_string(c.epochs));
  put("batch_size", std::to_string(c.batch_size));
  put("lr", fmt(c.lr));
  put("n_train", std::to_string(c.n_train));
  put("n_eval", std::to_string(c.n_eval));
  put("seed", std::to_string(c.seed));
  put("data_seed", std::to_string(c.data_seed));
  put("eval_seed", std::to_string(c.eval_seed));
  put("out_dir", c.out_dir);
  put("deterministic", c.deterministic ? "true" : "false");
  return out;
}

std::uint64_t RunConfig::hash() const {
  // out_dir names where results go, not what they are.
  RunConfig copy = *this;
  copy.out_dir.clear();
  const std::string canon = to_config_text(copy);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string RunConfig::header() const {
  std::string out;
  auto put = [&](const std::string& k, const std::string& v) { out += "# " + k + " = " + v + "\n"; };
  char hash_buf[24];
  std::snprintf(hash_buf, sizeof hash_buf, "%016llx", static_cast<unsigned long long>(hash()));
  put("config_hash", hash_buf);
  put("seed", std::to_string(seed));
  put("M", std::to_string(system.m_antennas));
  put("K", std::to_string(system.k_users));
  put("L", std::to_string(system.pilot_len));
  put("n_paths", std::to_string(system.n_paths));
  put("f_ul_hz", fmt_short(system.f_ul_hz));
  put("f_dl_hz", fmt_short(system.f_dl_hz));
  put("p_ul", fmt_short(p_ul_dbm) + " dBm = " + fmt_short(system.p_ul_mw) + " mW");
  put("p_dl", fmt_short(p_dl_dbm) + " dBm = " + fmt_short(system.p_dl_mw) + " mW");
  put("sigma0_sq", fmt_short(sigma0_sq_dbm) + " dBm = " + fmt_short(system.sigma0_sq_mw) + " mW");
  put("sigma1_sq", fmt_short(sigma1_sq_dbm) + " dBm = " + fmt_short(system.sigma1_sq_mw) + " mW");
  put("spacing_wavelengths", fmt_short(system.spacing_wavelengths));
  put("gain_correlation", fmt_short(system.gain_correlation));
  put("hidden", join(hidden));
  put("residual", residual ? "true" : "false");
  put("epochs", std::to_string(epochs));
  put("batch_size", std::to_string(batch_size));
  put("lr", fmt_short(lr));
  put("n_train", std::to_string(n_train));
  put("n_eval", std::to_string(n_eval));
  put("data_seed", std::to_string(data_seed));
  put("eval_seed", std::to_string(eval_seed));
  put("deterministic", deterministic ? "true" : "false");
  return out;
}

}  // namespace ncal
