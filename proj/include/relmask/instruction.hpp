#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "relmask/random.hpp"
#include "relmask/tensor.hpp"

namespace relmask {

enum class Location { left, right, front, back };

inline constexpr Location kLocations[] = {Location::left, Location::right, Location::front,
                                          Location::back};

const char* location_name(Location loc);
/// Throws UnknownLocation.
Location parse_location(const std::string& word);

/// "pick the X block in the middle of a A block and b B bowl"
struct InstructionAST {
  std::string pick_color;
  Location loc_a = Location::left;
  std::string color_a;
  Location loc_b = Location::left;
  std::string color_b;

  friend bool operator==(const InstructionAST&, const InstructionAST&) = default;
};

/// Word count of every template sentence.
inline constexpr int kTemplateLength = 15;

std::string realize(const InstructionAST& ast);
/// Throws NonTemplateInstruction, UnknownColor or UnknownLocation.
InstructionAST parse(const std::string& text);

/// Locations i.i.d. uniform; color_a, color_b uniform over the pool (they may
/// coincide); pick color uniform over the rest.
InstructionAST sample_ast(Rng& rng, const std::vector<std::string>& color_pool);

/// Immutable token table. PAD = 0, UNK = 1.
class Vocabulary {
 public:
  static constexpr Index kPad = 0;
  static constexpr Index kUnk = 1;

  /// Template words, locations and all twelve colors.
  Vocabulary();
  /// tokens[0] and tokens[1] must be the PAD and UNK markers.
  explicit Vocabulary(std::vector<std::string> tokens);

  Index id(const std::string& word) const;
  const std::string& token(Index id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  nlohmann::json to_json() const { return tokens_; }
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Index> index_;
};

inline const std::string kPadToken = "<pad>";
inline const std::string kUnkToken = "<unk>";

/// Splits on whitespace. Unknown words map to UNK; the length is the word count.
std::vector<Index> tokenize(const std::string& text, const Vocabulary& vocab);

}  // namespace relmask
