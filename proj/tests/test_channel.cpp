#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "ncal/binary_io.hpp"
#include "ncal/channel.hpp"
#include "ncal/rng.hpp"

using ncal::cdouble;
using ncal::ChannelPair;
using ncal::PathRecord;
using ncal::PathSet;
using ncal::SystemConfig;

namespace {

constexpr double kPi = std::numbers::pi;

SystemConfig small_cfg() {
  SystemConfig cfg;
  cfg.m_antennas = 8;
  cfg.k_users = 3;
  cfg.pilot_len = 3;
  return cfg;
}

double max_diff(const std::vector<cdouble>& a, const std::vector<cdouble>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ncal_test_" + name)).string();
}

}  // namespace

TEST_CASE("steering vector") {
  for (cdouble z : ncal::steering_vector(0.0, 5, 0.5)) CHECK(z == cdouble(1.0, 0.0));
  const auto a = ncal::steering_vector(kPi / 6.0, 2, 0.5);
  CHECK(std::abs(a[0] - cdouble(1.0, 0.0)) <= 1e-15);
  CHECK(std::abs(a[1] - cdouble(0.0, 1.0)) <= 1e-15);
  for (cdouble z : ncal::steering_vector(0.37, 16, 0.5)) CHECK(std::abs(std::abs(z) - 1.0) <= 1e-15);
}

TEST_CASE("synth_channel special cases") {
  const double f = 2.4e9;
  // f * d / c = 7 exactly in real arithmetic.
  PathSet one{{0.0, 7.0 * ncal::kSpeedOfLight / f, {1.0, 0.0}, {1.0, 0.0}}};
  for (cdouble z : ncal::synth_channel(one, f, 4, 0.5, ncal::LinkDirection::kUplink)) {
    CHECK(std::abs(z - cdouble(1.0, 0.0)) <= 1e-9);
  }
  PathSet cancel{{0.3, 42.0, {0.5, -0.2}, {0.1, 0.1}}, {0.3, 42.0, {-0.5, 0.2}, {-0.1, -0.1}}};
  for (auto dir : {ncal::LinkDirection::kUplink, ncal::LinkDirection::kDownlink}) {
    for (cdouble z : ncal::synth_channel(cancel, f, 6, 0.5, dir)) CHECK(z == cdouble(0.0, 0.0));
  }
  CHECK_THROWS((void)ncal::synth_channel({}, f, 4, 0.5, ncal::LinkDirection::kUplink));
}

TEST_CASE("synth_channel equals per-path accumulation") {
  ncal::Rng rng(21);
  PathSet ps(5);
  for (PathRecord& p : ps) {
    p.aod_rad = rng.uniform(-kPi / 2, kPi / 2);
    p.dist_m = rng.uniform(10.0, 100.0);
    p.gain_ul = rng.complex_gaussian(0.2);
    p.gain_dl = rng.complex_gaussian(0.2);
  }
  const std::size_t m = 12;
  const double f = 2.5e9;
  std::vector<cdouble> oracle(m);
  for (const PathRecord& p : ps) {
    const cdouble delay = std::exp(cdouble(0.0, -2.0 * kPi * f * p.dist_m / ncal::kSpeedOfLight));
    for (std::size_t n = 0; n < m; ++n) {
      const cdouble a = std::exp(cdouble(0.0, 2.0 * kPi * 0.5 * static_cast<double>(n) * std::sin(p.aod_rad)));
      oracle[n] += p.gain_dl * delay * a;
    }
  }
  CHECK(max_diff(ncal::synth_channel(ps, f, m, 0.5, ncal::LinkDirection::kDownlink), oracle) <= 1e-12);
}

TEST_CASE("gen_channel_pair contracts") {
  const SystemConfig cfg = small_cfg();
  const ChannelPair a = ncal::gen_channel_pair(cfg, 99);
  const ChannelPair b = ncal::gen_channel_pair(cfg, 99);
  CHECK(a.h_ul == b.h_ul);
  CHECK(a.h_dl == b.h_dl);
  REQUIRE(a.paths.size() == cfg.k_users);
  for (std::size_t k = 0; k < cfg.k_users; ++k) {
    REQUIRE(a.paths[k].size() == cfg.n_paths);
    for (const PathRecord& p : a.paths[k]) {
      CHECK(p.aod_rad >= -kPi / 2);
      CHECK(p.aod_rad <= kPi / 2);
      CHECK(p.dist_m > 0.0);
    }
    // Both directions are rebuilt from the one stored geometry.
    const auto ul = ncal::synth_channel(a.paths[k], cfg.f_ul_hz, cfg.m_antennas,
                                        cfg.spacing_wavelengths, ncal::LinkDirection::kUplink);
    const auto dl = ncal::synth_channel(a.paths[k], cfg.f_dl_hz, cfg.m_antennas,
                                        cfg.spacing_wavelengths, ncal::LinkDirection::kDownlink);
    CHECK(max_diff(ul, a.h_ul.col(k)) <= 1e-12);
    CHECK(max_diff(dl, a.h_dl.col(k)) <= 1e-12);
  }
  CHECK(ncal::frob_norm(a.h_ul - a.h_dl) > 0.0);
}

TEST_CASE("average channel energy is M") {
  SystemConfig cfg;
  cfg.m_antennas = 16;
  cfg.k_users = 1;
  cfg.pilot_len = 1;
  const auto data = ncal::gen_dataset(cfg, 10000, 5);
  double acc_ul = 0.0;
  double acc_dl = 0.0;
  for (const ChannelPair& p : data) {
    acc_ul += ncal::frob_norm_sq(p.h_ul);
    acc_dl += ncal::frob_norm_sq(p.h_dl);
  }
  CHECK(std::abs(acc_ul / 10000.0 / 16.0 - 1.0) <= 0.05);
  CHECK(std::abs(acc_dl / 10000.0 / 16.0 - 1.0) <= 0.05);
}

TEST_CASE("gain correlation extremes") {
  SystemConfig cfg = small_cfg();
  cfg.gain_correlation = 1.0;
  const ChannelPair shared = ncal::gen_channel_pair(cfg, 3);
  for (const PathSet& ps : shared.paths) {
    for (const PathRecord& p : ps) CHECK(p.gain_dl == p.gain_ul);
  }
  cfg.gain_correlation = 0.0;
  const ChannelPair indep = ncal::gen_channel_pair(cfg, 3);
  // Same seed: geometry and uplink gains coincide, downlink gains do not.
  CHECK(indep.h_ul == shared.h_ul);
  CHECK(indep.paths[0][0].gain_dl != shared.paths[0][0].gain_dl);
  cfg.gain_correlation = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("gen_dataset seeding") {
  const SystemConfig cfg = small_cfg();
  const auto data = ncal::gen_dataset(cfg, 20, 77);
  const auto one = ncal::gen_dataset(cfg, 1, 77);
  CHECK(one[0].h_dl == data[0].h_dl);
  CHECK(ncal::gen_channel_pair(cfg, ncal::derive_seed(77, {13})).h_ul == data[13].h_ul);
  CHECK_THROWS((void)ncal::gen_dataset(cfg, 0, 1));
}

TEST_CASE("consecutive samples are uncorrelated") {
  const SystemConfig cfg = small_cfg();
  const auto data = ncal::gen_dataset(cfg, 1001, 8);
  cdouble cross = 0.0;
  double pa = 0.0;
  double pb = 0.0;
  for (std::size_t i = 0; i + 1 < data.size(); ++i) {
    auto a = data[i].h_dl.entries();
    auto b = data[i + 1].h_dl.entries();
    for (std::size_t j = 0; j < a.size(); ++j) {
      cross += a[j] * std::conj(b[j]);
      pa += std::norm(a[j]);
      pb += std::norm(b[j]);
    }
  }
  CHECK(std::abs(cross) / std::sqrt(pa * pb) < 0.05);
}

TEST_CASE("dataset file round trip") {
  SystemConfig cfg = small_cfg();
  cfg.gain_correlation = 0.25;
  const auto data = ncal::gen_dataset(cfg, 4, 31);
  const std::string path = temp_path("roundtrip.ncch");
  ncal::save_dataset(path, cfg, data);
  const ncal::Dataset back = ncal::load_dataset(path);
  CHECK(back.cfg.m_antennas == cfg.m_antennas);
  CHECK(back.cfg.k_users == cfg.k_users);
  CHECK(back.cfg.sigma0_sq_mw == cfg.sigma0_sq_mw);
  CHECK(back.cfg.gain_correlation == cfg.gain_correlation);
  REQUIRE(back.samples.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back.samples[i].h_ul == data[i].h_ul);
    CHECK(back.samples[i].h_dl == data[i].h_dl);
    CHECK(back.samples[i].paths[2][4].gain_dl == data[i].paths[2][4].gain_dl);
  }
  // Header starts with the magic tag and a little-endian version.
  std::ifstream f(path, std::ios::binary);
  char head[6];
  f.read(head, 6);
  CHECK(std::string(head, 4) == "NCCH");
  CHECK(static_cast<unsigned char>(head[4]) == 1);
  CHECK(static_cast<unsigned char>(head[5]) == 0);
  f.close();

  {
    std::ofstream app(path, std::ios::binary | std::ios::app);
    app.put('x');
  }
  CHECK_THROWS_AS((void)ncal::load_dataset(path), ncal::IoError);
  {
    std::ofstream bad(path, std::ios::binary);
    bad << "XXXX";
  }
  CHECK_THROWS_AS((void)ncal::load_dataset(path), ncal::IoError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS((void)ncal::load_dataset(path), ncal::IoError);
}
