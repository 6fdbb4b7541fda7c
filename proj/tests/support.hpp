#pragma once

#include <fstream>
#include <random>

#include <doctest.h>
#include <json.hpp>

#include "airfed/types.hpp"

namespace airfed::test {

inline const nlohmann::json& oracle() {
  static const nlohmann::json j = [] {
    std::ifstream in(AIRFED_ORACLE_JSON);
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
  }();
  return j;
}

inline cvec cvec_from(const nlohmann::json& j) {
  const auto& re = j.at("re");
  const auto& im = j.at("im");
  cvec v(static_cast<Eigen::Index>(re.size()));
  for (size_t i = 0; i < re.size(); ++i) v[static_cast<Eigen::Index>(i)] = {re[i].get<double>(), im[i].get<double>()};
  return v;
}

inline cvec random_cvec(Eigen::Index n, std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> g(0.0, sigma);
  cvec v(n);
  for (auto& x : v) x = {g(rng), g(rng)};
  return v;
}

inline double max_abs_diff(const cvec& a, const cvec& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace airfed::test
