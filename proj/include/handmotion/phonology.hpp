#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmotion/motion.hpp"

namespace hm::phon {

struct HandPair {
  std::string dominant;
  std::string nondominant;  // empty for one-handed signs
  bool operator==(const HandPair&) const = default;
};

/// One dictionary entry. Tokens are kept as written in the source record;
/// tags are normalized to lowercase with underscores.
struct PhonologyRecord {
  std::string gloss_id;
  std::vector<std::string> keywords;
  std::optional<HandPair> handshape_initial;
  std::optional<HandPair> handshape_final;
  std::string location_initial;
  std::string location_final;
  /// relation -> hand part token. Relations: dominant_to_location,
  /// nondominant_to_location, dominant_to_nondominant, nondominant_to_dominant,
  /// each optionally suffixed ":initial" or ":final".
  std::map<std::string, std::string> facing;
  std::vector<std::string> tags;
  std::optional<Handedness> handedness;

  bool has_tag(std::string_view tag) const;
  bool one_handed() const { return has_tag("one_handed"); }
  bool operator==(const PhonologyRecord&) const = default;
};

inline const std::vector<std::string>& known_tags() {
  static const std::vector<std::string> tags = {
      "one_handed",          "double_handed",    "two_handed",        "symmetric",
      "alternating",         "nondominant_still", "forearm_rotation", "handshape_change"};
  return tags;
}

/// Lowercase, trimmed, spaces and hyphens turned into underscores.
std::string normalize_token(std::string_view token);

PhonologyRecord parse_record(const nlohmann::json& j);
nlohmann::json to_json(const PhonologyRecord& r);
std::vector<PhonologyRecord> read_records(const std::filesystem::path& jsonl);

/// Token -> alternative English phrasings, grouped by section
/// ("handshape", "location", "facing_part", "tag").
class AttributeLexicon {
 public:
  static AttributeLexicon from_json(const nlohmann::json& j);
  static AttributeLexicon load(const std::filesystem::path& path);
  static AttributeLexicon bundled();

  /// Throws MissingLexiconEntry when the token is unknown.
  const std::vector<std::string>& alternatives(const std::string& section,
                                               std::string_view token) const;
  bool contains(const std::string& section, std::string_view token) const;

 private:
  std::map<std::string, std::map<std::string, std::vector<std::string>>> sections_;
};

/// Description lines in the ATTRIBUTES grammar, each starting with "- ".
/// Phrasing alternatives are drawn with a generator seeded by `seed`.
std::vector<std::string> attributes_to_lines(const PhonologyRecord& r, const AttributeLexicon& lex,
                                             std::uint64_t seed);

struct PromptTemplate {
  std::string instructions;
  std::string examples;
  std::string query;  // contains "{{CONTENT}}"
  bool with_hms = false;

  static PromptTemplate load(const std::filesystem::path& dir, bool with_hms);
  static PromptTemplate bundled(bool with_hms);
  int example_count() const;
};

std::string assemble_prompt(const std::vector<std::string>& lines,
                            const std::optional<std::string>& hms_block, const PromptTemplate& tpl);

/// Removes sentences saying the non-dominant hand stays still, for one-handed
/// records, and normalizes whitespace for all.
std::string postprocess_description(const std::string& text, const PhonologyRecord& r);
std::array<std::string, 3> postprocess_descriptions(const std::array<std::string, 3>& texts,
                                                    const PhonologyRecord& r);

/// dominant / non-dominant -> right / left (mirrored for left-handed signers),
/// keeping the capitalization of the replaced word.
std::string localize_handedness(const std::string& text, Handedness signer);

}  // namespace hm::phon
