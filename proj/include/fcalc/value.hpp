#pragma once

// Runtime values: scalars (atoms, integers, floats, characters, strings),
// pairs and records with string labels. Values are immutable; pairs and
// records share structure through shared_ptr so copies are cheap.
//
// Lists are not a primitive: a list is a right-nested chain of pairs ending
// in the atom `nil. Helpers below convert between the two views.

#include <algorithm>
#include <cassert>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace fcalc {

class Value;

// Record payload: fields sorted by label, labels unique.
using RecordFields = std::vector<std::pair<std::string, Value>>;

class Value {
public:
  enum class Kind : uint8_t { Atom, Int, Float, Char, String, Pair, Record };

  Value() : rep_(AtomRep{"nil"}) {}

  static Value atom(std::string name) { return Value(AtomRep{std::move(name)}); }
  static Value integer(int64_t v) { return Value(v); }
  static Value real(double v) { return Value(v); }
  static Value character(uint32_t cp) { return Value(CharRep{cp}); }
  static Value string(std::string s) { return Value(std::move(s)); }

  static Value pair(Value a, Value b) {
    return Value(std::make_shared<const std::pair<Value, Value>>(std::move(a), std::move(b)));
  }

  // Fields need not arrive sorted; duplicates keep the last occurrence.
  static Value record(RecordFields fields) {
    std::stable_sort(fields.begin(), fields.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    RecordFields out;
    out.reserve(fields.size());
    for (auto& f : fields) {
      if (!out.empty() && out.back().first == f.first)
        out.back().second = std::move(f.second);
      else
        out.push_back(std::move(f));
    }
    return Value(std::make_shared<const RecordFields>(std::move(out)));
  }

  static Value nil() { return atom("nil"); }
  static Value null() { return atom("null"); }
  static Value boolean(bool b) { return atom(b ? "true" : "false"); }

  // Builds the pair-chain encoding of a list.
  static Value list(std::vector<Value> items) {
    Value acc = nil();
    for (auto it = items.rbegin(); it != items.rend(); ++it)
      acc = pair(std::move(*it), acc);
    return acc;
  }

  Kind kind() const { return static_cast<Kind>(rep_.index()); }

  bool is_atom() const { return kind() == Kind::Atom; }
  bool is_atom(std::string_view name) const {
    return is_atom() && std::get<AtomRep>(rep_).name == name;
  }
  bool is_int() const { return kind() == Kind::Int; }
  bool is_float() const { return kind() == Kind::Float; }
  bool is_char() const { return kind() == Kind::Char; }
  bool is_string() const { return kind() == Kind::String; }
  bool is_pair() const { return kind() == Kind::Pair; }
  bool is_record() const { return kind() == Kind::Record; }

  const std::string& atom_name() const { return std::get<AtomRep>(rep_).name; }
  int64_t int_value() const { return std::get<int64_t>(rep_); }
  double float_value() const { return std::get<double>(rep_); }
  uint32_t char_value() const { return std::get<CharRep>(rep_).cp; }
  const std::string& string_value() const { return std::get<std::string>(rep_); }
  const Value& first() const { return std::get<PairPtr>(rep_)->first; }
  const Value& second() const { return std::get<PairPtr>(rep_)->second; }
  const RecordFields& fields() const { return *std::get<RecordPtr>(rep_); }

  const Value* field(std::string_view label) const {
    const auto& fs = fields();
    auto it = std::lower_bound(fs.begin(), fs.end(), label,
                               [](const auto& f, std::string_view l) { return f.first < l; });
    if (it != fs.end() && it->first == label) return &it->second;
    return nullptr;
  }

  // Decodes a pair chain ending in `nil; nullopt if the value is not one.
  std::optional<std::vector<Value>> as_list() const {
    std::vector<Value> out;
    const Value* cur = this;
    while (true) {
      if (cur->is_atom("nil")) return out;
      if (!cur->is_pair()) return std::nullopt;
      out.push_back(cur->first());
      cur = &cur->second();
    }
  }

private:
  struct AtomRep {
    std::string name;
  };
  struct CharRep {
    uint32_t cp;
  };
  using PairPtr = std::shared_ptr<const std::pair<Value, Value>>;
  using RecordPtr = std::shared_ptr<const RecordFields>;

  // Variant order fixes the cross-kind ordering used by value_order.
  using Rep = std::variant<AtomRep, int64_t, double, CharRep, std::string, PairPtr, RecordPtr>;

  explicit Value(Rep rep) : rep_(std::move(rep)) {}

  Rep rep_;

  friend int value_order(const Value&, const Value&);
};

// Total order over all values. Kinds are ordered
// atom < int < float < char < string < pair < record; within a kind the
// order is the natural one; records compare their sorted label lists
// lexicographically first, then field values in label order.
inline int value_order(const Value& a, const Value& b) {
  auto ka = static_cast<int>(a.kind()), kb = static_cast<int>(b.kind());
  if (ka != kb) return ka < kb ? -1 : 1;
  auto cmp = [](auto x, auto y) { return x < y ? -1 : (y < x ? 1 : 0); };
  switch (a.kind()) {
    case Value::Kind::Atom: {
      int c = a.atom_name().compare(b.atom_name());
      return c < 0 ? -1 : (c > 0 ? 1 : 0);
    }
    case Value::Kind::Int: return cmp(a.int_value(), b.int_value());
    case Value::Kind::Float: return cmp(a.float_value(), b.float_value());
    case Value::Kind::Char: return cmp(a.char_value(), b.char_value());
    case Value::Kind::String: {
      int c = a.string_value().compare(b.string_value());
      return c < 0 ? -1 : (c > 0 ? 1 : 0);
    }
    case Value::Kind::Pair: {
      if (int c = value_order(a.first(), b.first())) return c;
      return value_order(a.second(), b.second());
    }
    case Value::Kind::Record: {
      const auto& fa = a.fields();
      const auto& fb = b.fields();
      size_t n = std::min(fa.size(), fb.size());
      for (size_t i = 0; i < n; ++i) {
        int c = fa[i].first.compare(fb[i].first);
        if (c) return c < 0 ? -1 : 1;
      }
      if (fa.size() != fb.size()) return fa.size() < fb.size() ? -1 : 1;
      for (size_t i = 0; i < n; ++i)
        if (int c = value_order(fa[i].second, fb[i].second)) return c;
      return 0;
    }
  }
  return 0;
}

inline bool value_eq(const Value& a, const Value& b) { return value_order(a, b) == 0; }

struct ValueLess {
  bool operator()(const Value& a, const Value& b) const { return value_order(a, b) < 0; }
};

namespace detail {

inline void escape_into(std::string& out, std::string_view s, char quote) {
  for (char ch : s) {
    switch (ch) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (ch == quote) {
          out += '\\';
          out += ch;
        } else {
          out += ch;
        }
    }
  }
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  // Keep a visible fraction or exponent so the literal re-parses as a float.
  if (s.find_first_of(".eEnN") == std::string::npos) s += ".0";
  return s;
}

}  // namespace detail

// Source-syntax rendering: `atom, 'c', "s", (a, b) pairs, [v1 v2] lists,
// {l: v} records.
inline std::string to_text(const Value& v) {
  std::string out;
  struct Walk {
    std::string& out;
    void go(const Value& v) {
      switch (v.kind()) {
        case Value::Kind::Atom:
          out += '`';
          out += v.atom_name();
          break;
        case Value::Kind::Int: out += std::to_string(v.int_value()); break;
        case Value::Kind::Float: out += detail::format_double(v.float_value()); break;
        case Value::Kind::Char:
          out += '\'';
          if (v.char_value() < 128) {
            std::string one(1, static_cast<char>(v.char_value()));
            detail::escape_into(out, one, '\'');
          } else {
            char buf[16];
            std::snprintf(buf, sizeof buf, "\\u%04x", v.char_value());
            out += buf;
          }
          out += '\'';
          break;
        case Value::Kind::String:
          out += '"';
          detail::escape_into(out, v.string_value(), '"');
          out += '"';
          break;
        case Value::Kind::Pair: {
          if (auto items = v.as_list()) {
            out += '[';
            for (size_t i = 0; i < items->size(); ++i) {
              if (i) out += ' ';
              go((*items)[i]);
            }
            out += ']';
          } else {
            out += '(';
            go(v.first());
            out += ", ";
            go(v.second());
            out += ')';
          }
          break;
        }
        case Value::Kind::Record: {
          out += '{';
          bool sep = false;
          for (const auto& [l, fv] : v.fields()) {
            if (sep) out += ", ";
            sep = true;
            out += l;
            out += ": ";
            go(fv);
          }
          out += '}';
          break;
        }
      }
    }
  } w{out};
  w.go(v);
  return out;
}

// Stable structural key, usable as a hash-map key.
inline void value_key_into(std::string& out, const Value& v) {
  switch (v.kind()) {
    case Value::Kind::Atom:
      out += 'a';
      out += v.atom_name();
      break;
    case Value::Kind::Int:
      out += 'i';
      out += std::to_string(v.int_value());
      break;
    case Value::Kind::Float: {
      out += 'f';
      uint64_t bits;
      double d = v.float_value();
      static_assert(sizeof bits == sizeof d);
      std::memcpy(&bits, &d, sizeof bits);
      out += std::to_string(bits);
      break;
    }
    case Value::Kind::Char:
      out += 'c';
      out += std::to_string(v.char_value());
      break;
    case Value::Kind::String:
      out += 's';
      out += std::to_string(v.string_value().size());
      out += ':';
      out += v.string_value();
      break;
    case Value::Kind::Pair:
      out += '(';
      value_key_into(out, v.first());
      out += ',';
      value_key_into(out, v.second());
      out += ')';
      break;
    case Value::Kind::Record:
      out += '{';
      for (const auto& [l, fv] : v.fields()) {
        out += std::to_string(l.size());
        out += ':';
        out += l;
        out += '=';
        value_key_into(out, fv);
        out += ';';
      }
      out += '}';
      break;
  }
}

inline std::string value_key(const Value& v) {
  std::string out;
  value_key_into(out, v);
  return out;
}

}  // namespace fcalc
