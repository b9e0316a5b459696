#pragma once

// JSON <-> value bridge.
//
// Inbound: arrays become right-nested pair chains ending in `nil, objects
// become records, true/false/null become the atoms `true/`false/`null,
// integral numbers become ints and the rest floats.
//
// Outbound: the inverse, with two conventions for values JSON cannot name:
// a char becomes a one-character string and any other atom becomes the
// string "`name". A pair that is not a well-formed list has no JSON image
// and raises BridgeError.

#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "fcalc/value.hpp"

namespace fcalc {

struct BridgeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Value value_from_json(const nlohmann::json& j) {
  using nlohmann::json;
  switch (j.type()) {
    case json::value_t::null: return Value::null();
    case json::value_t::boolean: return Value::boolean(j.get<bool>());
    case json::value_t::number_integer: return Value::integer(j.get<int64_t>());
    case json::value_t::number_unsigned: {
      uint64_t u = j.get<uint64_t>();
      if (u > static_cast<uint64_t>(INT64_MAX))
        throw BridgeError("integer out of range: " + j.dump());
      return Value::integer(static_cast<int64_t>(u));
    }
    case json::value_t::number_float: return Value::real(j.get<double>());
    case json::value_t::string: return Value::string(j.get<std::string>());
    case json::value_t::array: {
      std::vector<Value> items;
      items.reserve(j.size());
      for (const auto& e : j) items.push_back(value_from_json(e));
      return Value::list(std::move(items));
    }
    case json::value_t::object: {
      RecordFields fs;
      fs.reserve(j.size());
      for (auto it = j.begin(); it != j.end(); ++it)
        fs.emplace_back(it.key(), value_from_json(it.value()));
      return Value::record(std::move(fs));
    }
    default: throw BridgeError("unsupported JSON value: " + j.dump());
  }
}

inline nlohmann::json value_to_json(const Value& v) {
  using nlohmann::json;
  switch (v.kind()) {
    case Value::Kind::Atom: {
      const std::string& n = v.atom_name();
      if (n == "true") return json(true);
      if (n == "false") return json(false);
      if (n == "null") return json();
      if (n == "nil") return json::array();
      return json("`" + n);
    }
    case Value::Kind::Int: return json(v.int_value());
    case Value::Kind::Float: return json(v.float_value());
    case Value::Kind::Char: {
      if (v.char_value() >= 128)
        throw BridgeError("non-ascii char has no JSON image");
      return json(std::string(1, static_cast<char>(v.char_value())));
    }
    case Value::Kind::String: return json(v.string_value());
    case Value::Kind::Pair: {
      auto items = v.as_list();
      if (!items) throw BridgeError("pair is not a list: " + to_text(v));
      json arr = json::array();
      for (const auto& e : *items) arr.push_back(value_to_json(e));
      return arr;
    }
    case Value::Kind::Record: {
      json obj = json::object();
      for (const auto& [l, fv] : v.fields()) obj[l] = value_to_json(fv);
      return obj;
    }
  }
  throw BridgeError("unreachable");
}

}  // namespace fcalc
