#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dronecam/errors.hpp"
#include "dronecam/simworld.hpp"
#include "dronecam/trajpipe.hpp"

// Scripted demonstration flights and corrupted clips.
namespace dronecam::synth {

using geo::CameraPose;
using geo::Vec3;

enum class Style { kFlyover, kCorridor, kOrbit, kReveal };

std::string style_name(Style s);
Style parse_style(const std::string& s);
std::vector<Style> parse_styles(const std::string& comma_list);

struct ExpertConfig {
  int fps = 15;
  double duration_s = 10.0;
  // Flight speed, world units / s.
  double speed = 8.0;
  double flyover_clearance = 10.0;
  // Flyover clearance must stay within this fraction of the commanded value.
  double clearance_tolerance = 0.2;
  double corridor_clearance = 3.0;
  // Potential-field steering: rays probe `field_range` units; the repulsive
  // turn rate is field_gain * (1/d - 1/range) per probe, the lane term pulls
  // toward the most open direction with lane_gain.
  double field_range = 20.0;
  double field_gain = 6.0;
  double lane_gain = 0.8;
  double max_turn_rate = 0.9;    // rad / s
  double max_turn_accel = 1.5;   // rad / s^2
  double orbit_min_radius = 14.0;
  // Minimum distance kept to any surface along the path.
  double safety = 0.5;
  // Start positions are drawn within this fraction of the half-size.
  double start_region = 0.5;
  bool with_observations = false;
  int feature_dim = 32;
};

struct ExpertClip {
  traj::Clip clip;  // world units, scale_factor 1
  Style style = Style::kFlyover;
  // Observation at every 3 fps frame when requested.
  std::vector<sim::PatchObservation> observations;
  double commanded_clearance = 0.0;
  Vec3 orbit_target = Vec3::Zero();
  double orbit_distance = 0.0;
};

// Height of the highest surface (terrain or box top) under (x, y).
double surface_height(const sim::World& world, double x, double y);

// Throws GenerationFailure when no valid path is found for this seed.
ExpertClip expert_trajectory(const sim::World& world, Style style, std::uint64_t seed, const ExpertConfig& cfg = {});

enum class CorruptMode { kJump, kJitter };
CorruptMode parse_corrupt_mode(const std::string& s);

// jump: one random interior frame is displaced by `magnitude` in a random
// direction. jitter: N(0, magnitude^2) added to every position coordinate.
traj::Clip corrupt_clip(const traj::Clip& clip, CorruptMode mode, double magnitude, std::uint64_t seed);

// A collision-free starting pose in `world`, drawn like an expert start.
CameraPose start_pose(const sim::World& world, std::uint64_t seed, const ExpertConfig& cfg = {});

struct CorpusConfig {
  int worlds = 4;
  int clips_per_world = 4;
  std::vector<Style> styles{Style::kFlyover, Style::kCorridor, Style::kOrbit, Style::kReveal};
  // World kinds are assigned round-robin.
  std::vector<sim::WorldKind> kinds{sim::WorldKind::kTerrain, sim::WorldKind::kCanyon, sim::WorldKind::kCityBlocks};
  std::uint64_t seed = 0;
  double corrupt_fraction = 0.0;
  CorruptMode corrupt_mode = CorruptMode::kJump;
  double corrupt_magnitude = 1.0;
  int attempts = 12;
  std::string world_prefix = "w";
  ExpertConfig expert;
  int jobs = 1;
};

struct CorpusEntry {
  std::string id;
  std::string world;
  Style style = Style::kFlyover;
  bool corrupted = false;
  traj::Clip clip;
};

struct Corpus {
  std::vector<std::pair<std::string, sim::WorldSpec>> worlds;
  std::vector<CorpusEntry> clips;
  int failures = 0;
};

Corpus generate_corpus(const CorpusConfig& cfg);

// Layout: worlds/<name>.json, trajectories/<id>.csv, truth.csv (id,is_correct)
// and manifest.json.
void write_corpus(const std::filesystem::path& out, const Corpus& corpus, const CorpusConfig& cfg);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace dronecam::synth
