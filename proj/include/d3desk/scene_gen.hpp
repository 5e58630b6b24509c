#pragma once

#include <cstdint>
#include <string>

#include "d3desk/language.hpp"
#include "d3desk/rng.hpp"
#include "d3desk/scene.hpp"

namespace d3desk::data {

struct GenConfig {
  int min_objects = 4;
  int max_objects = 8;
  int num_classes = 10;          // object classes; floor gets id num_classes
  double room_extent = 5.0;      // square room, meters
  int min_points_per_object = 90;
  int max_points_per_object = 180;
  int floor_points = 600;
  int point_cap = 20000;
  double min_gap = 0.30;         // xy clearance between object footprints
  int max_place_retries = 500;
  double coord_noise = 0.005;    // stddev of point jitter, meters
  double color_noise = 0.03;
};

// Pure function of (seed, cfg): class-typed colored boxes on a floor plane
// with disjoint footprints, surface-sampled points with noise. Descriptions
// are not attached here. Throws after bounded placement retries.
Scene generate_scene(uint64_t seed, const GenConfig& cfg);

}  // namespace d3desk::data
