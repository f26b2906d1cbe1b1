#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace convgot {

// Lowercased runs of [a-z0-9'] characters; everything else separates tokens.
std::vector<std::string> tokenize_words(std::string_view text);

// Whitespace-separated pieces, case preserved.
std::vector<std::string> tokenize_whitespace(std::string_view text);

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t fnv1a(std::string_view s);

using SparseBow = std::map<std::size_t, double>;
SparseBow hashed_bow(std::string_view text, std::size_t buckets);
double cosine(const SparseBow& a, const SparseBow& b);

// Closed vocabulary with reserved specials at fixed ids.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kBos = 2;
  static constexpr std::size_t kEos = 3;

  Vocabulary();
  // Tokens in first-seen order so ids are deterministic for a given corpus.
  static Vocabulary build(std::span<const std::string> texts, std::size_t min_count = 1);

  std::size_t id(std::string_view token) const;  // kUnk when unknown
  const std::string& token(std::size_t id) const;
  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;

  std::vector<std::size_t> encode(std::span<const std::string> tokens) const;
  // Stops at <eos>; skips <pad>/<bos>.
  std::string decode(std::span<const std::size_t> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  void add(std::string token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace convgot
