#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefjoint/grid.hpp"

namespace prefjoint {

enum class Source { fid, fdd };

inline const char* to_string(Source s) { return s == Source::fid ? "FID" : "FDD"; }

struct Observation {
  Point location;
  int z = 0;                    // presence indicator
  std::optional<double> value;  // positive biomass, present exactly when z = 1
  Source source = Source::fid;
  int vessel_id = 0;            // 1-based; 0 = not recorded (reference vessel)
};

struct Dataset {
  std::vector<Observation> obs;

  int size() const { return static_cast<int>(obs.size()); }
  int count(Source s) const {
    int n = 0;
    for (const auto& o : obs) n += (o.source == s);
    return n;
  }
  int presences(Source s) const {
    int n = 0;
    for (const auto& o : obs) n += (o.source == s && o.z == 1);
    return n;
  }
  int max_vessel() const {
    int j = 1;
    for (const auto& o : obs) j = std::max(j, o.vessel_id);
    return j;
  }

  void validate() const {
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const auto& o = obs[i];
      if (o.z != 0 && o.z != 1)
        throw std::invalid_argument("Dataset: z must be 0/1 at row " + std::to_string(i));
      if (o.z == 1 && (!o.value || !(*o.value > 0.0)))
        throw std::invalid_argument("Dataset: z=1 requires positive value at row " +
                                    std::to_string(i));
      if (o.z == 0 && o.value)
        throw std::invalid_argument("Dataset: z=0 must have no value at row " +
                                    std::to_string(i));
      if (o.vessel_id < 0)
        throw std::invalid_argument("Dataset: negative vessel_id at row " + std::to_string(i));
    }
  }
};

}  // namespace prefjoint
