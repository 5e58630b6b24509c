#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "d3desk/rng.hpp"
#include "d3desk/scene.hpp"

namespace d3desk::data {

// Fixed closed vocabulary. Ids 0..3 are reserved; word ids follow in the
// order of the built-in word list.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  static Vocabulary standard();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int id(const std::string& word) const;
  const std::string& word(int id) const;

  // encode splits on spaces and wraps with sos/eos; decode strips specials.
  std::vector<int> encode(const std::string& sentence) const;
  std::string decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
  void index();
};

// Synthetic taxonomy used by the generator and the language templates.
struct ClassSpec {
  const char* name;
  double w, d, h;  // base extents in meters
};
const std::vector<ClassSpec>& class_table();
struct ColorSpec {
  const char* name;
  double r, g, b;
};
const std::vector<ColorSpec>& color_table();

struct LangConfig {
  int max_descriptions = 3;      // 1..K template descriptions per object
  double near_threshold = 1.0;   // meters between centers
  double between_slack = 1.25;   // collinearity ratio bound
};

// Attaches 1..K templated descriptions to every object and marks the scene
// annotated. Relations are evaluated in the scene frame with the viewer
// looking along +y: smaller x is "left", smaller y is "in front".
void generate_descriptions(Scene& scene, const LangConfig& cfg, Rng& rng);

// Relation helper shared with tests: antisymmetric dominant-axis relation
// from anchor to target, one of "left"/"right"/"front"/"behind".
std::string dominant_relation(const geom::Vec3& anchor, const geom::Vec3& target);

}  // namespace d3desk::data
