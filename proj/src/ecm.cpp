#include "ecm_sphere/ecm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "ecm_sphere/error.hpp"

namespace ecm_sphere {

std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::positive: return "positive";
    case Polarity::negative: return "negative";
    case Polarity::neutral: return "neutral";
  }
  return "neutral";
}

Polarity parse_polarity(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "positive") return Polarity::positive;
  if (lower == "negative") return Polarity::negative;
  if (lower == "neutral") return Polarity::neutral;
  fail(ErrorKind::config, "unknown polarity '" + std::string(s) + "'");
}

EcmConfig::EcmConfig(std::vector<EmotionLabel> labels, PolarityConstants constants)
    : labels_(std::move(labels)), constants_(constants) {
  const std::size_t count = labels_.size();
  require(count >= 2, ErrorKind::config, "an ECM needs at least 2 labels");
  std::set<std::string> names;
  std::set<std::size_t> slots;
  for (std::size_t i = 0; i < count; ++i) {
    auto& lab = labels_[i];
    lab.index = i;
    require(!lab.name.empty(), ErrorKind::config, "label " + std::to_string(i) + " has no name");
    require(lab.slot < count, ErrorKind::config,
            "label '" + lab.name + "' slot " + std::to_string(lab.slot) + " out of range");
    require(names.insert(lab.name).second, ErrorKind::config, "duplicate label name '" + lab.name + "'");
    require(slots.insert(lab.slot).second, ErrorKind::config,
            "slot " + std::to_string(lab.slot) + " assigned twice");
  }
  require(constants_.same < constants_.neutral_cross && constants_.neutral_cross < constants_.opposite,
          ErrorKind::config, "polarity constants must satisfy same < neutral_cross < opposite");
}

EcmConfig EcmConfig::default_layout() {
  using P = Polarity;
  const std::pair<const char*, P> order[] = {
      {"love", P::positive},    {"joy", P::positive},      {"excitement", P::positive},
      {"surprise", P::neutral}, {"anger", P::negative},    {"fear", P::negative},
      {"disgust", P::negative}, {"sadness", P::negative},  {"boredom", P::negative},
      {"calmness", P::positive}, {"relief", P::positive}, {"trust", P::positive},
  };
  std::vector<EmotionLabel> labels;
  for (std::size_t s = 0; s < std::size(order); ++s) {
    labels.push_back({s, order[s].first, s, order[s].second});
  }
  return EcmConfig(std::move(labels));
}

EcmConfig EcmConfig::evenly_spaced(std::size_t count) {
  require(count >= 2, ErrorKind::config, "an ECM needs at least 2 labels");
  std::vector<EmotionLabel> labels;
  for (std::size_t s = 0; s < count; ++s) {
    const double c = std::cos(2.0 * std::numbers::pi * static_cast<double>(s) / static_cast<double>(count));
    const Polarity p = c > 1e-9 ? Polarity::positive : (c < -1e-9 ? Polarity::negative : Polarity::neutral);
    labels.push_back({s, "l" + std::to_string(s), s, p});
  }
  return EcmConfig(std::move(labels));
}

const EmotionLabel& EcmConfig::label(std::size_t index) const {
  if (index >= labels_.size()) {
    fail(ErrorKind::invalid_label, "label index " + std::to_string(index) + " out of range [0, " +
                                       std::to_string(labels_.size()) + ")");
  }
  return labels_[index];
}

std::vector<std::string> EcmConfig::names() const {
  std::vector<std::string> out;
  out.reserve(labels_.size());
  for (const auto& l : labels_) out.push_back(l.name);
  return out;
}

std::size_t EcmConfig::index_of(std::string_view name) const {
  for (const auto& l : labels_) {
    if (l.name == name) return l.index;
  }
  fail(ErrorKind::invalid_label, "unknown label '" + std::string(name) + "'");
}

double EcmConfig::step_angle() const noexcept {
  return 2.0 * std::numbers::pi / static_cast<double>(labels_.size());
}

double EcmConfig::angle(std::size_t index) const {
  return static_cast<double>(label(index).slot) * step_angle();
}

std::size_t angle_distance_steps(const EcmConfig& cfg, std::size_t i, std::size_t j) {
  const std::size_t a = cfg.label(i).slot;
  const std::size_t b = cfg.label(j).slot;
  const std::size_t diff = a > b ? a - b : b - a;
  return std::min(diff, cfg.size() - diff);
}

double delta_theta(const EcmConfig& cfg, std::size_t i, std::size_t j) {
  return static_cast<double>(angle_distance_steps(cfg, i, j)) * cfg.step_angle();
}

double polarity_constant(const EcmConfig& cfg, std::size_t i, std::size_t j) {
  const Polarity a = cfg.label(i).polarity;
  const Polarity b = cfg.label(j).polarity;
  const auto& c = cfg.polarity_constants();
  if (a == b) return c.same;
  if (a == Polarity::neutral || b == Polarity::neutral) return c.neutral_cross;
  return c.opposite;
}

double circumplex_distance(const EcmConfig& cfg, std::size_t i, std::size_t j) {
  return polarity_constant(cfg, i, j) + static_cast<double>(angle_distance_steps(cfg, i, j));
}

double target_cosine(const EcmConfig& cfg, std::size_t i, std::size_t j) {
  const std::size_t steps = angle_distance_steps(cfg, i, j);
  // Exact values at the special angles keep planted geometries exact.
  if (steps == 0) return 1.0;
  if (2 * steps == cfg.size()) return -1.0;
  if (4 * steps == cfg.size()) return 0.0;
  return std::cos(static_cast<double>(steps) * cfg.step_angle());
}

nlohmann::json to_json(const EcmConfig& cfg) {
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& l : cfg.labels()) {
    labels.push_back({{"name", l.name}, {"slot", l.slot}, {"polarity", to_string(l.polarity)}});
  }
  const auto& c = cfg.polarity_constants();
  return {{"version", 1},
          {"labels", labels},
          {"polarity_constants", {{"same", c.same}, {"neutral_cross", c.neutral_cross}, {"opposite", c.opposite}}}};
}

EcmConfig ecm_from_json(const nlohmann::json& j) {
  try {
    require(j.value("version", 1) == 1, ErrorKind::config, "unsupported ECM config version");
    std::vector<EmotionLabel> labels;
    for (const auto& item : j.at("labels")) {
      labels.push_back({labels.size(), item.at("name").get<std::string>(), item.at("slot").get<std::size_t>(),
                        parse_polarity(item.at("polarity").get<std::string>())});
    }
    PolarityConstants constants;
    if (j.contains("polarity_constants")) {
      const auto& pc = j.at("polarity_constants");
      constants.same = pc.value("same", constants.same);
      constants.neutral_cross = pc.value("neutral_cross", constants.neutral_cross);
      constants.opposite = pc.value("opposite", constants.opposite);
    }
    return EcmConfig(std::move(labels), constants);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("malformed ECM config: ") + e.what());
  }
}

EcmConfig load_ecm(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open ECM config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, "ECM config '" + path + "' is not valid JSON: " + e.what());
  }
  return ecm_from_json(j);
}

void save_ecm(const EcmConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write ECM config '" + path + "'");
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace ecm_sphere
