#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace draftwise::text {

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool contains_icase(std::string_view haystack, std::string_view needle);
bool starts_with_icase(std::string_view s, std::string_view prefix);

/// Lowercased runs of alphanumeric characters. Bytes >= 0x80 count as
/// alphanumeric so UTF-8 words are kept whole.
std::vector<std::string> lexical_tokens(std::string_view s);

/// Lowercased alphanumeric runs plus one token per punctuation character.
std::vector<std::string> meteor_tokens(std::string_view s);

std::vector<std::string> split_whitespace(std::string_view s);
std::size_t whitespace_token_count(std::string_view s);

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// "3.0" for integral ratings, shortest round-trip form otherwise.
std::string format_rating(double rating);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace draftwise::text
