#pragma once
// Empirical circumplex layout: emotion labels placed at equal angular steps
// around a circle, each tagged with a polarity. Every label-pair distance
// used by the losses and metrics is defined here.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ecm_sphere {

enum class Polarity { positive, negative, neutral };

std::string_view to_string(Polarity p);
Polarity parse_polarity(std::string_view s);

struct EmotionLabel {
  std::size_t index = 0;
  std::string name;
  std::size_t slot = 0;  // angle = slot * 2*pi / E
  Polarity polarity = Polarity::neutral;

  friend bool operator==(const EmotionLabel&, const EmotionLabel&) = default;
};

/// Additive constant C of the circumplex distance, chosen by polarity pair.
struct PolarityConstants {
  double same = 0.0;
  double neutral_cross = 2.0;
  double opposite = 4.0;

  friend bool operator==(const PolarityConstants&, const PolarityConstants&) = default;
};

class EcmConfig {
 public:
  /// Validates E >= 2, unique names, distinct slots in [0, E) and
  /// same < neutral_cross < opposite. Label indices are reassigned to
  /// list order.
  explicit EcmConfig(std::vector<EmotionLabel> labels, PolarityConstants constants = {});

  /// The 12-label default: love(0) joy excitement surprise anger fear
  /// disgust sadness boredom calmness(9) relief trust(11).
  static EcmConfig default_layout();

  /// E labels l0..l{E-1} on consecutive slots. Polarity follows the sign of
  /// cos(angle): positive, negative, or neutral on the vertical axis.
  static EcmConfig evenly_spaced(std::size_t count);

  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<EmotionLabel>& labels() const noexcept { return labels_; }
  const EmotionLabel& label(std::size_t index) const;
  const PolarityConstants& polarity_constants() const noexcept { return constants_; }
  std::vector<std::string> names() const;

  std::size_t index_of(std::string_view name) const;
  double step_angle() const noexcept;
  double angle(std::size_t index) const;

  friend bool operator==(const EcmConfig&, const EcmConfig&) = default;

 private:
  std::vector<EmotionLabel> labels_;
  PolarityConstants constants_;
};

// Label-pair distances. All throw invalid_label for out-of-range indices.
double delta_theta(const EcmConfig& cfg, std::size_t i, std::size_t j);
std::size_t angle_distance_steps(const EcmConfig& cfg, std::size_t i, std::size_t j);
double polarity_constant(const EcmConfig& cfg, std::size_t i, std::size_t j);
double circumplex_distance(const EcmConfig& cfg, std::size_t i, std::size_t j);
double target_cosine(const EcmConfig& cfg, std::size_t i, std::size_t j);

// JSON config: {version, labels: [{name, slot, polarity}], polarity_constants}
nlohmann::json to_json(const EcmConfig& cfg);
EcmConfig ecm_from_json(const nlohmann::json& j);
EcmConfig load_ecm(const std::string& path);
void save_ecm(const EcmConfig& cfg, const std::string& path);

}  // namespace ecm_sphere
