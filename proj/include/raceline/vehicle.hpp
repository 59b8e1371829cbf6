// Copyright 2026 The raceline3d Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at

//     https://www.apache.org/licenses/LICENSE-2.0

// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RACELINE_VEHICLE_HPP_
#define RACELINE_VEHICLE_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "raceline/csv.hpp"
#include "raceline/track.hpp"

namespace raceline {

// Double-track model parameters. Defaults describe a full-scale autonomous
// racing prototype with a simplified Pacejka tire set.
struct VehicleParams {
  double m = 750.0;          // [kg]
  double C_DA = 0.725;       // drag coefficient x area [m^2]
  double C_LfA = 0.522;      // front downforce coefficient x area [m^2]
  double C_LrA = 1.034;      // rear downforce coefficient x area [m^2]
  double h = 0.275;          // CoM height [m]
  double track_width = 1.5815;  // [m]
  double a = 1.724;          // CoM to front axle [m]
  double b = 1.247;          // CoM to rear axle [m]
  double width = 2.971;      // total vehicle width [m]
  double P_max = 357000.0;   // drive power limit [W]
  double delta_max = 24.6 * kPi / 180.0;  // steering limit [rad]
  // Longitudinal Pacejka coefficients.
  double pCx1 = 2.0;
  double pDx1 = 1.7168, pDx2 = -0.289;
  double pEx1 = 0.6975;
  double pKx1 = 63.75, pKx3 = 0.2891;
  double lambda_mux = 0.93;
  // Lateral Pacejka coefficients.
  double pCy1 = 1.603;
  double pDy1 = 1.654, pDy2 = -0.1783;
  double pEy1 = -1.409;
  double pKy1 = -53.05, pKy2 = 4.1265;
  double lambda_muy = 0.84;
  // Camber-related constants; accepted and stored, not used by the
  // simplified tire model (semantics pending calibration data).
  double eps_camber = 0.5;
  double gamma_camber = 1.0;
  double Fz0_nominal = 2000.0;  // reference wheel load [N]

  void validate() const {
    if (!(m > 0.0) || !(h > 0.0) || !(a > 0.0) || !(b > 0.0))
      throw std::runtime_error("vehicle mass/geometry must be positive");
    if (!(pCx1 >= 1.0)) throw std::runtime_error("pCx1 must be >= 1");
    if (!(lambda_mux > 0.0 && lambda_mux <= 1.0) || !(lambda_muy > 0.0 && lambda_muy <= 1.0))
      throw std::runtime_error("friction scalings must be in (0, 1]");
    if (!(track_width > 0.0) || !(P_max > 0.0) || !(delta_max > 0.0))
      throw std::runtime_error("track width, power and steering limits must be positive");
  }
};

namespace detail {

inline const std::vector<std::pair<const char*, double VehicleParams::*>>& vehicle_fields() {
  static const std::vector<std::pair<const char*, double VehicleParams::*>> f = {
      {"m", &VehicleParams::m},
      {"C_DA", &VehicleParams::C_DA},
      {"C_LfA", &VehicleParams::C_LfA},
      {"C_LrA", &VehicleParams::C_LrA},
      {"h", &VehicleParams::h},
      {"track_width", &VehicleParams::track_width},
      {"a", &VehicleParams::a},
      {"b", &VehicleParams::b},
      {"width", &VehicleParams::width},
      {"P_max", &VehicleParams::P_max},
      {"delta_max", &VehicleParams::delta_max},
      {"pCx1", &VehicleParams::pCx1},
      {"pDx1", &VehicleParams::pDx1},
      {"pDx2", &VehicleParams::pDx2},
      {"pEx1", &VehicleParams::pEx1},
      {"pKx1", &VehicleParams::pKx1},
      {"pKx3", &VehicleParams::pKx3},
      {"lambda_mux", &VehicleParams::lambda_mux},
      {"pCy1", &VehicleParams::pCy1},
      {"pDy1", &VehicleParams::pDy1},
      {"pDy2", &VehicleParams::pDy2},
      {"pEy1", &VehicleParams::pEy1},
      {"pKy1", &VehicleParams::pKy1},
      {"pKy2", &VehicleParams::pKy2},
      {"lambda_muy", &VehicleParams::lambda_muy},
      {"eps_camber", &VehicleParams::eps_camber},
      {"gamma_camber", &VehicleParams::gamma_camber},
      {"Fz0_nominal", &VehicleParams::Fz0_nominal},
  };
  return f;
}

}  // namespace detail

inline VehicleParams vehicle_from_file(const std::string& path) {
  const KeyValueFile kv = read_keyvalue(path);
  VehicleParams p;
  for (const auto& [name, member] : detail::vehicle_fields())
    p.*member = kv.get_num(name, p.*member);
  p.validate();
  return p;
}

inline void vehicle_to_file(const VehicleParams& p, const std::string& path) {
  KeyValueFile kv;
  for (const auto& [name, member] : detail::vehicle_fields()) kv.set_num(name, p.*member);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  for (const auto& [k, v] : kv.items) out << k << " = " << v << "\n";
}

// FNV-1a over the canonical text form of all parameters.
inline std::string vehicle_hash(const VehicleParams& p) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, member] : detail::vehicle_fields()) {
    mix(name);
    mix(format_g9(p.*member));
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace raceline

#endif  // RACELINE_VEHICLE_HPP_
