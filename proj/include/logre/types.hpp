#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <gmpxx.h>

namespace logre {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;  // traversable label: base in [0,|R|), inverse in [|R|,2|R|)
using TypeId = std::uint32_t;

// A walk or schema path: sequence of traversable relation labels.
using RelationSeq = std::vector<RelationId>;

// Exact arithmetic for path and candidate scores.
using Rational = mpq_class;

// Error hierarchy. The CLI maps each family onto its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class InvalidDataset : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class SchemaFormatError : public Error {
 public:
  using Error::Error;
};

// Parses "0.2", "1/5", "1", "-3.25e0" is not accepted. Decimal and p/q forms only.
inline Rational parse_rational(std::string_view text) {
  auto fail = [&] { throw ConfigError("not a rational number: '" + std::string(text) + "'"); };
  if (text.empty()) fail();
  std::string s(text);
  if (auto slash = s.find('/'); slash != std::string::npos) {
    Rational q;
    if (q.set_str(s, 10) != 0) fail();
    if (q.get_den() == 0) fail();
    q.canonicalize();
    return q;
  }
  bool negative = false;
  std::size_t i = 0;
  if (s[0] == '-' || s[0] == '+') {
    negative = s[0] == '-';
    i = 1;
  }
  std::string digits;
  std::size_t frac_digits = 0;
  bool seen_point = false;
  bool any_digit = false;
  for (; i < s.size(); ++i) {
    char c = s[i];
    if (c == '.' && !seen_point) {
      seen_point = true;
    } else if (c >= '0' && c <= '9') {
      digits.push_back(c);
      any_digit = true;
      if (seen_point) ++frac_digits;
    } else {
      fail();
    }
  }
  if (!any_digit) fail();
  mpz_class num(digits, 10);
  mpz_class den;
  mpz_ui_pow_ui(den.get_mpz_t(), 10, frac_digits);
  Rational q(num, den);
  q.canonicalize();
  if (negative) q = -q;
  return q;
}

inline std::string to_string(const Rational& q) { return q.get_str(10); }

// 64-bit FNV-1a, used only as a content fingerprint for datasets and caches.
class Fingerprint {
 public:
  void update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
  }
  void update_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      state_ ^= static_cast<unsigned char>(v >> (8 * i));
      state_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = kDigits[(state_ >> (4 * i)) & 0xF];
    return out;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace logre
