#include "relmask/instruction.hpp"

#include <algorithm>
#include <sstream>

#include "relmask/errors.hpp"
#include "relmask/scene.hpp"

namespace relmask {

const char* location_name(Location loc) {
  switch (loc) {
    case Location::left: return "left";
    case Location::right: return "right";
    case Location::front: return "front";
    case Location::back: return "back";
  }
  return "?";
}

Location parse_location(const std::string& word) {
  for (Location l : kLocations)
    if (word == location_name(l)) return l;
  throw UnknownLocation("unknown location '" + word + "'");
}

std::string realize(const InstructionAST& ast) {
  return "pick the " + ast.pick_color + " block in the middle of " + location_name(ast.loc_a) +
         " " + ast.color_a + " block and " + location_name(ast.loc_b) + " " + ast.color_b +
         " bowl";
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  return words;
}

// Fixed words of the template; empty entries are slots.
const std::vector<std::string>& template_words() {
  static const std::vector<std::string> words = {"pick", "the", "", "block", "in", "the",
                                                 "middle", "of", "", "", "block", "and",
                                                 "", "", "bowl"};
  return words;
}

std::string color_slot(const std::string& word) {
  if (!is_color(word)) throw UnknownColor("unknown color '" + word + "'");
  return word;
}

}  // namespace

InstructionAST parse(const std::string& text) {
  const auto words = split_words(text);
  const auto& fixed = template_words();
  if (words.size() != fixed.size())
    throw NonTemplateInstruction("expected " + std::to_string(fixed.size()) + " words, got " +
                                 std::to_string(words.size()));
  for (std::size_t i = 0; i < fixed.size(); ++i)
    if (!fixed[i].empty() && words[i] != fixed[i])
      throw NonTemplateInstruction("word " + std::to_string(i) + ": expected '" + fixed[i] +
                                   "', got '" + words[i] + "'");
  InstructionAST ast;
  ast.pick_color = color_slot(words[2]);
  ast.loc_a = parse_location(words[8]);
  ast.color_a = color_slot(words[9]);
  ast.loc_b = parse_location(words[12]);
  ast.color_b = color_slot(words[13]);
  if (ast.pick_color == ast.color_a || ast.pick_color == ast.color_b)
    throw NonTemplateInstruction("pick color must differ from both reference colors");
  return ast;
}

InstructionAST sample_ast(Rng& rng, const std::vector<std::string>& color_pool) {
  if (color_pool.size() < 3) throw std::invalid_argument("sample_ast: color pool needs 3 colors");
  InstructionAST ast;
  ast.loc_a = kLocations[uniform_index(rng, 4)];
  ast.loc_b = kLocations[uniform_index(rng, 4)];
  ast.color_a = color_pool[uniform_index(rng, color_pool.size())];
  ast.color_b = color_pool[uniform_index(rng, color_pool.size())];
  std::vector<std::string> rest;
  for (const auto& c : color_pool)
    if (c != ast.color_a && c != ast.color_b) rest.push_back(c);
  ast.pick_color = rest[uniform_index(rng, rest.size())];
  return ast;
}

Vocabulary::Vocabulary() {
  std::vector<std::string> t = {kPadToken, kUnkToken, "pick", "the", "block",
                                "in",      "middle",  "of",   "and", "bowl"};
  for (Location l : kLocations) t.push_back(location_name(l));
  for (const auto& c : all_colors()) t.push_back(c.name);
  *this = Vocabulary(std::move(t));
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[0] != kPadToken || tokens_[1] != kUnkToken)
    throw FormatError("vocabulary must start with <pad>, <unk>");
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (!index_.emplace(tokens_[i], static_cast<Index>(i)).second)
      throw FormatError("duplicate vocabulary token '" + tokens_[i] + "'");
}

Index Vocabulary::id(const std::string& word) const {
  const auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("vocabulary json must be an array");
  return Vocabulary(j.get<std::vector<std::string>>());
}

std::vector<Index> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<Index> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

}  // namespace relmask
