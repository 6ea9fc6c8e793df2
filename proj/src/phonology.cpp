#include "handmotion/phonology.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <regex>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"

namespace hm::phon {

namespace {

const std::array<std::string, 4> kRelations = {"dominant_to_location", "dominant_to_nondominant",
                                               "nondominant_to_location", "nondominant_to_dominant"};

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string noun(std::string_view token) {
  std::string out = normalize_token(token);
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

std::string get_string(const nlohmann::json& j, const std::string& path) {
  if (!j.is_string()) fail(ErrorCode::SchemaViolation, path + ": expected a string");
  return j.get<std::string>();
}

HandPair parse_pair(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) fail(ErrorCode::SchemaViolation, path + ": expected an object");
  HandPair p;
  if (!j.contains("dominant")) fail(ErrorCode::SchemaViolation, path + ".dominant: missing");
  p.dominant = get_string(j["dominant"], path + ".dominant");
  if (j.contains("nondominant")) p.nondominant = get_string(j["nondominant"], path + ".nondominant");
  return p;
}

nlohmann::json pair_json(const HandPair& p) {
  nlohmann::json j = {{"dominant", p.dominant}};
  if (!p.nondominant.empty()) j["nondominant"] = p.nondominant;
  return j;
}

bool valid_relation(const std::string& key) {
  const auto colon = key.find(':');
  const std::string base = key.substr(0, colon);
  if (std::find(kRelations.begin(), kRelations.end(), base) == kRelations.end()) return false;
  if (colon == std::string::npos) return true;
  const std::string phase = key.substr(colon + 1);
  return phase == "initial" || phase == "final";
}

}  // namespace

bool PhonologyRecord::has_tag(std::string_view tag) const {
  return std::find(tags.begin(), tags.end(), tag) != tags.end();
}

std::string normalize_token(std::string_view token) {
  std::string out;
  for (char c : token) {
    const auto u = static_cast<unsigned char>(c);
    if (c == ' ' || c == '-' || c == '_') {
      if (!out.empty() && out.back() != '_') out += '_';
    } else {
      out += static_cast<char>(std::tolower(u));
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

PhonologyRecord parse_record(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::SchemaViolation, "record: expected an object");
  PhonologyRecord r;
  if (!j.contains("gloss_id")) fail(ErrorCode::SchemaViolation, "gloss_id: missing");
  r.gloss_id = get_string(j["gloss_id"], "gloss_id");
  if (r.gloss_id.empty()) fail(ErrorCode::SchemaViolation, "gloss_id: empty");
  if (j.contains("keywords")) {
    if (!j["keywords"].is_array()) fail(ErrorCode::SchemaViolation, "keywords: expected an array");
    for (std::size_t i = 0; i < j["keywords"].size(); ++i) {
      r.keywords.push_back(get_string(j["keywords"][i], "keywords[" + std::to_string(i) + "]"));
    }
  }
  if (j.contains("handshape")) {
    const auto& h = j["handshape"];
    if (!h.is_object()) fail(ErrorCode::SchemaViolation, "handshape: expected an object");
    if (h.contains("initial")) r.handshape_initial = parse_pair(h["initial"], "handshape.initial");
    if (h.contains("final")) r.handshape_final = parse_pair(h["final"], "handshape.final");
  }
  if (j.contains("location")) {
    const auto& l = j["location"];
    if (!l.is_object()) fail(ErrorCode::SchemaViolation, "location: expected an object");
    if (l.contains("initial")) r.location_initial = get_string(l["initial"], "location.initial");
    if (l.contains("final")) r.location_final = get_string(l["final"], "location.final");
  }
  if (j.contains("facing")) {
    if (!j["facing"].is_object()) fail(ErrorCode::SchemaViolation, "facing: expected an object");
    for (const auto& [key, value] : j["facing"].items()) {
      if (!valid_relation(key)) fail(ErrorCode::SchemaViolation, "facing." + key + ": unknown relation");
      r.facing[key] = get_string(value, "facing." + key);
    }
  }
  if (j.contains("tags")) {
    if (!j["tags"].is_array()) fail(ErrorCode::SchemaViolation, "tags: expected an array");
    for (std::size_t i = 0; i < j["tags"].size(); ++i) {
      const std::string path = "tags[" + std::to_string(i) + "]";
      const std::string tag = normalize_token(get_string(j["tags"][i], path));
      const auto& known = known_tags();
      if (std::find(known.begin(), known.end(), tag) == known.end()) {
        fail(ErrorCode::SchemaViolation, path + ": unknown tag '" + tag + "'");
      }
      if (!r.has_tag(tag)) r.tags.push_back(tag);
    }
  }
  if (j.contains("handedness")) {
    r.handedness = parse_handedness(get_string(j["handedness"], "handedness"));
  }
  if (r.one_handed() && (r.has_tag("double_handed") || r.has_tag("two_handed"))) {
    fail(ErrorCode::SchemaViolation, "tags: one_handed cannot be combined with double_handed or two_handed");
  }
  return r;
}

nlohmann::json to_json(const PhonologyRecord& r) {
  nlohmann::json j = {{"gloss_id", r.gloss_id}, {"keywords", r.keywords}};
  if (r.handshape_initial || r.handshape_final) {
    nlohmann::json h = nlohmann::json::object();
    if (r.handshape_initial) h["initial"] = pair_json(*r.handshape_initial);
    if (r.handshape_final) h["final"] = pair_json(*r.handshape_final);
    j["handshape"] = h;
  }
  if (!r.location_initial.empty() || !r.location_final.empty()) {
    nlohmann::json l = nlohmann::json::object();
    if (!r.location_initial.empty()) l["initial"] = r.location_initial;
    if (!r.location_final.empty()) l["final"] = r.location_final;
    j["location"] = l;
  }
  if (!r.facing.empty()) j["facing"] = r.facing;
  j["tags"] = r.tags;
  if (r.handedness) j["handedness"] = std::string(to_string(*r.handedness));
  return j;
}

std::vector<PhonologyRecord> read_records(const std::filesystem::path& jsonl) {
  std::vector<PhonologyRecord> out;
  int line = 0;
  for (const nlohmann::json& j : read_jsonl(jsonl)) {
    ++line;
    try {
      out.push_back(parse_record(j));
    } catch (const Error& e) {
      fail(e.code(), jsonl.string() + " record " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

AttributeLexicon AttributeLexicon::from_json(const nlohmann::json& j) {
  AttributeLexicon lex;
  if (!j.is_object()) fail(ErrorCode::SchemaViolation, "lexicon: expected an object");
  for (const auto& [section, entries] : j.items()) {
    if (!entries.is_object()) fail(ErrorCode::SchemaViolation, "lexicon." + section + ": expected an object");
    for (const auto& [token, alts] : entries.items()) {
      const std::string path = "lexicon." + section + "." + token;
      if (!alts.is_array() || alts.empty()) fail(ErrorCode::SchemaViolation, path + ": needs alternatives");
      auto& list = lex.sections_[section][normalize_token(token)];
      for (const auto& a : alts) list.push_back(get_string(a, path));
    }
  }
  return lex;
}

AttributeLexicon AttributeLexicon::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
  }
}

AttributeLexicon AttributeLexicon::bundled() {
  return load(std::filesystem::path(HANDMOTION_ASSET_DIR) / "lexicon.json");
}

bool AttributeLexicon::contains(const std::string& section, std::string_view token) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(normalize_token(token)) > 0;
}

const std::vector<std::string>& AttributeLexicon::alternatives(const std::string& section,
                                                               std::string_view token) const {
  auto s = sections_.find(section);
  if (s != sections_.end()) {
    auto t = s->second.find(normalize_token(token));
    if (t != s->second.end()) return t->second;
  }
  fail(ErrorCode::MissingLexiconEntry, section + " token '" + std::string(token) + "'");
}

std::vector<std::string> attributes_to_lines(const PhonologyRecord& r, const AttributeLexicon& lex,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto phrase = [&](const std::string& section, const std::string& token) {
    const auto& alts = lex.alternatives(section, token);
    if (alts.size() == 1) return alts.front();
    return alts[rng() % alts.size()];
  };
  const bool one = r.one_handed();
  std::vector<std::string> lines;
  auto add = [&](const std::string& field, const std::string& value) {
    lines.push_back("- " + capitalize(field) + ": " + value);
  };

  const bool both_shapes = r.handshape_initial && r.handshape_final;
  for (const auto& [pair, phase] : {std::pair{&r.handshape_initial, "initial "},
                                    std::pair{&r.handshape_final, "final "}}) {
    if (!*pair) continue;
    const std::string prefix = both_shapes ? phase : "";
    add(prefix + "dominant hand shape", phrase("handshape", (*pair)->dominant));
    if (!one && !(*pair)->nondominant.empty()) {
      add(prefix + "non-dominant hand shape", phrase("handshape", (*pair)->nondominant));
    }
  }

  const std::string scope = one ? "dominant hand location" : "sign location";
  if (!r.location_initial.empty() && !r.location_final.empty()) {
    add("initial " + scope, phrase("location", r.location_initial));
    add("final " + scope, phrase("location", r.location_final));
  } else if (!r.location_initial.empty() || !r.location_final.empty()) {
    add(scope, phrase("location", r.location_initial.empty() ? r.location_final : r.location_initial));
  }

  for (const std::string& rel : kRelations) {
    const bool nondominant_side = rel.rfind("nondominant", 0) == 0;
    if (one && (nondominant_side || rel == "dominant_to_nondominant")) continue;
    for (const char* phase : {"", "initial", "final"}) {
      const std::string key = *phase ? rel + ":" + phase : rel;
      auto it = r.facing.find(key);
      if (it == r.facing.end()) continue;
      const std::string part = phrase("facing_part", it->second);
      const std::string during =
          *phase ? std::string(" during the ") + phase + " part of the motion" : std::string();
      const std::string& loc_token = std::string(phase) == "final" && !r.location_final.empty()
                                         ? r.location_final
                                         : (r.location_initial.empty() ? r.location_final : r.location_initial);
      const std::string loc = noun(loc_token);
      if (rel == "dominant_to_location") {
        add("dominant hand part facing the " + loc + during, part);
      } else if (rel == "nondominant_to_location") {
        add((*phase ? std::string(phase) + " subordinate" : std::string("subordinate")) +
                " hand part facing the " + loc,
            part);
      } else if (rel == "dominant_to_nondominant") {
        add("location on the dominant hand that the non-dominant hand is facing" + during, part);
      } else {
        add("location on the non-dominant hand that the dominant hand is facing" + during, part);
      }
    }
  }

  for (const char* tag : {"forearm_rotation", "one_handed", "double_handed", "two_handed",
                          "nondominant_still", "handshape_change", "symmetric", "alternating"}) {
    if (r.has_tag(tag)) lines.push_back("- " + capitalize(phrase("tag", tag)));
  }
  return lines;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& dir, bool with_hms) {
  PromptTemplate t;
  const std::string suffix = with_hms ? "hms" : "phonology";
  t.instructions = io::read_text(dir / ("instructions_" + suffix + ".txt"));
  t.examples = io::read_text(dir / ("examples_" + suffix + ".txt"));
  t.query = io::read_text(dir / "query.txt");
  t.with_hms = with_hms;
  if (t.query.find("{{CONTENT}}") == std::string::npos) {
    fail(ErrorCode::SchemaViolation, (dir / "query.txt").string() + ": missing {{CONTENT}}");
  }
  return t;
}

PromptTemplate PromptTemplate::bundled(bool with_hms) {
  return load(std::filesystem::path(HANDMOTION_ASSET_DIR) / "prompts", with_hms);
}

int PromptTemplate::example_count() const {
  int n = 0;
  for (std::size_t pos = examples.find("\"role\": \"user\""); pos != std::string::npos;
       pos = examples.find("\"role\": \"user\"", pos + 1)) {
    ++n;
  }
  return n;
}

std::string assemble_prompt(const std::vector<std::string>& lines,
                            const std::optional<std::string>& hms_block, const PromptTemplate& tpl) {
  if (hms_block.has_value() != tpl.with_hms) {
    fail(ErrorCode::ConfigError, tpl.with_hms ? "prompt template expects an HMS block"
                                              : "prompt template has no HMS sections");
  }
  const std::string indent(7, ' ');
  std::string content = indent + "ATTRIBUTES:";
  for (const std::string& line : lines) content += "\n" + indent + line;
  if (hms_block) {
    std::size_t start = 0;
    while (start < hms_block->size()) {
      std::size_t end = hms_block->find('\n', start);
      if (end == std::string::npos) end = hms_block->size();
      if (end > start) content += "\n" + indent + hms_block->substr(start, end - start);
      start = end + 1;
    }
  }
  std::string query = tpl.query;
  query.replace(query.find("{{CONTENT}}"), std::string_view("{{CONTENT}}").size(), content);
  return tpl.instructions + "\n" + tpl.examples + query;
}

namespace {

std::vector<std::string> split_sentences(const std::string& text) {
  static const std::regex sentence(R"([^.!?]*(?:[.!?]+|$))");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), sentence); it != std::sregex_iterator(); ++it) {
    std::string s = it->str();
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) continue;
    out.push_back(s.substr(b));
  }
  return out;
}

std::string collapse_whitespace(const std::string& text) {
  std::string out;
  bool space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
    } else {
      if (space) out += ' ';
      out += c;
      space = false;
    }
  }
  return out;
}

}  // namespace

std::string postprocess_description(const std::string& text, const PhonologyRecord& r) {
  if (!r.one_handed()) return collapse_whitespace(text);
  static const std::regex other_hand(
      R"(\b(non[- ]?dominant|subordinate|other|passive|weak|second)\s+(hand|arm)\b)", std::regex::icase);
  static const std::regex still(
      R"(\b(remains?|remaining|stays?|staying|is|are|kept|held|keeps?)\s+(completely\s+|perfectly\s+|totally\s+)?)"
      R"((still(?!\s+\w+ing)|stationary|motionless|static|immobile|at rest|unmoving)\b)"
      R"(|\b(does not|doesn't|do not|don't)\s+move\b)",
      std::regex::icase);
  std::string kept;
  for (const std::string& s : split_sentences(text)) {
    if (std::regex_search(s, other_hand) && std::regex_search(s, still)) continue;
    kept += s + " ";
  }
  return collapse_whitespace(kept);
}

std::array<std::string, 3> postprocess_descriptions(const std::array<std::string, 3>& texts,
                                                    const PhonologyRecord& r) {
  return {postprocess_description(texts[0], r), postprocess_description(texts[1], r),
          postprocess_description(texts[2], r)};
}

std::string localize_handedness(const std::string& text, Handedness signer) {
  static const std::regex word(R"(\b(non[- ]?dominant|dominant)\b)", std::regex::icase);
  const std::string dom = signer == Handedness::Right ? "right" : "left";
  const std::string nondom = signer == Handedness::Right ? "left" : "right";
  std::string out;
  auto last = text.cbegin();
  for (auto it = std::sregex_iterator(text.begin(), text.end(), word); it != std::sregex_iterator(); ++it) {
    const std::string m = it->str();
    out.append(last, text.cbegin() + it->position());
    std::string rep = std::tolower(static_cast<unsigned char>(m[0])) == 'n' ? nondom : dom;
    const bool all_upper = std::none_of(m.begin(), m.end(), [](unsigned char c) { return std::islower(c); });
    if (all_upper) {
      std::transform(rep.begin(), rep.end(), rep.begin(), [](unsigned char c) { return std::toupper(c); });
    } else if (std::isupper(static_cast<unsigned char>(m[0]))) {
      rep = capitalize(rep);
    }
    out += rep;
    last = text.cbegin() + it->position() + it->length();
  }
  out.append(last, text.cend());
  return out;
}

}  // namespace hm::phon
