#pragma once

// Pattern machinery shared by the evaluator, the type inferencer and the
// termination check:
//
//  * match_value     dynamic matching, produces variable bindings
//  * accepted_pattern / accepted_filter
//                    the domain a pattern or filter is guaranteed to accept
//  * pattern_cases   splits an input type into (slice, environment)
//                    alternatives with exact per-variable binding types
//
// pattern_cases is the heart of precise typing: the slices of all returned
// cases union to t /\ accepted(p), and within one slice each variable's type
// is exactly the set of values that variable can be bound to. Conjunction
// patterns are exact whenever one side is a variable, a default binder or a
// plain type (all the forms the frontends emit); two structural sides fall
// back to sequential narrowing, which stays sound.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fcalc/ast.hpp"
#include "fcalc/types.hpp"
#include "fcalc/value.hpp"

namespace fcalc {

using Bindings = std::map<std::string, Value>;

namespace detail {
inline void merge_bindings(Bindings& into, const Bindings& from) {
  for (const auto& [k, v] : from) {
    if (!into.emplace(k, v).second)
      throw std::logic_error("pattern binds variable twice: " + k);
  }
}
}  // namespace detail

inline std::optional<Bindings> match_value(const Pattern& p, const Value& v, TypeEngine& eng) {
  switch (p.kind) {
    case Pattern::Kind::Type:
      if (eng.value_in(v, p.ty)) return Bindings{};
      return std::nullopt;
    case Pattern::Kind::Var: return Bindings{{p.var, v}};
    case Pattern::Kind::Bind: return Bindings{{p.var, p.constant}};
    case Pattern::Kind::Pair: {
      if (!v.is_pair()) return std::nullopt;
      auto m1 = match_value(*p.a, v.first(), eng);
      if (!m1) return std::nullopt;
      auto m2 = match_value(*p.b, v.second(), eng);
      if (!m2) return std::nullopt;
      detail::merge_bindings(*m1, *m2);
      return m1;
    }
    case Pattern::Kind::Record: {
      if (!v.is_record()) return std::nullopt;
      Bindings out;
      for (const auto& f : p.fields) {
        const Value* fv = v.field(f.label);
        if (!fv) return std::nullopt;
        auto m = match_value(*f.p, *fv, eng);
        if (!m) return std::nullopt;
        detail::merge_bindings(out, *m);
      }
      if (!p.open) {
        for (const auto& [label, _] : v.fields()) {
          bool listed = false;
          for (const auto& f : p.fields)
            if (f.label == label) { listed = true; break; }
          if (!listed) return std::nullopt;
        }
      }
      return out;
    }
    case Pattern::Kind::And: {
      auto m1 = match_value(*p.a, v, eng);
      if (!m1) return std::nullopt;
      auto m2 = match_value(*p.b, v, eng);
      if (!m2) return std::nullopt;
      detail::merge_bindings(*m1, *m2);
      return m1;
    }
    case Pattern::Kind::Or: {
      if (auto m = match_value(*p.a, v, eng)) return m;
      return match_value(*p.b, v, eng);
    }
  }
  return std::nullopt;
}

// -- Accepted domains -----------------------------------------------------------

inline NodeId accepted_pattern(const Pattern& p, TypeEngine& eng) {
  switch (p.kind) {
    case Pattern::Kind::Type: return p.ty;
    case Pattern::Kind::Var:
    case Pattern::Kind::Bind: return kNodeAny;
    case Pattern::Kind::Pair:
      return eng.product(accepted_pattern(*p.a, eng), accepted_pattern(*p.b, eng));
    case Pattern::Kind::Record: {
      std::vector<RecordField> fs;
      fs.reserve(p.fields.size());
      for (const auto& f : p.fields)
        fs.push_back({f.label, accepted_pattern(*f.p, eng), false});
      return eng.record(std::move(fs), p.open);
    }
    case Pattern::Kind::And:
      return eng.intersect(accepted_pattern(*p.a, eng), accepted_pattern(*p.b, eng));
    case Pattern::Kind::Or:
      return eng.unite(accepted_pattern(*p.a, eng), accepted_pattern(*p.b, eng));
  }
  return kNodeEmpty;
}

// Inputs a filter can always process without failing. Recursion calls accept
// anything here; the separate termination check covers their actual behaviour.
inline NodeId accepted_filter(const Filter& f, TypeEngine& eng,
                              std::unordered_map<uint64_t, NodeId>* memo = nullptr) {
  if (memo) {
    if (auto it = memo->find(f.uid); it != memo->end()) return it->second;
  }
  NodeId r = kNodeEmpty;
  switch (f.kind) {
    case Filter::Kind::Expr: r = kNodeAny; break;
    case Filter::Kind::Arrow:
      r = eng.intersect(accepted_pattern(*f.p, eng), accepted_filter(*f.body, eng, memo));
      break;
    case Filter::Kind::Product:
      r = eng.product(accepted_filter(*f.a, eng, memo), accepted_filter(*f.b, eng, memo));
      break;
    case Filter::Kind::Record: {
      std::vector<RecordField> fs;
      fs.reserve(f.ffields.size());
      for (const auto& fld : f.ffields)
        fs.push_back({fld.label, accepted_filter(*fld.f, eng, memo), false});
      r = eng.record(std::move(fs), /*open=*/true);
      break;
    }
    case Filter::Kind::Union:
      r = eng.unite(accepted_filter(*f.a, eng, memo), accepted_filter(*f.b, eng, memo));
      break;
    case Filter::Kind::Comp: r = accepted_filter(*f.a, eng, memo); break;
    case Filter::Kind::Rec: r = accepted_filter(*f.body, eng, memo); break;
    case Filter::Kind::Call: r = kNodeAny; break;
    case Filter::Kind::GroupBy:
    case Filter::Kind::OrderBy: r = eng.list_star(kNodeAny); break;
  }
  if (memo) memo->emplace(f.uid, r);
  return r;
}

// -- Case splitting ----------------------------------------------------------------

struct PatCase {
  NodeId slice;                        // subset of the input type
  std::map<std::string, NodeId> env;   // exact binding type per variable
};

namespace detail {

inline void merge_env(std::map<std::string, NodeId>& into,
                      const std::map<std::string, NodeId>& from) {
  for (const auto& [k, v] : from) {
    if (!into.emplace(k, v).second)
      throw std::logic_error("pattern binds variable twice: " + k);
  }
}

constexpr size_t kPatternCaseBudget = 4096;

inline void pattern_cases_rec(const Pattern& p, NodeId t, TypeEngine& eng,
                              std::vector<PatCase>& out);

inline void push_case(std::vector<PatCase>& out, PatCase c) {
  if (out.size() >= kPatternCaseBudget)
    throw EngineFault("pattern case split exceeded budget");
  out.push_back(std::move(c));
}

inline std::vector<PatCase> sub_cases(const Pattern& p, NodeId t, TypeEngine& eng) {
  std::vector<PatCase> out;
  pattern_cases_rec(p, t, eng, out);
  return out;
}

inline void pattern_cases_rec(const Pattern& p, NodeId t, TypeEngine& eng,
                              std::vector<PatCase>& out) {
  if (eng.is_empty(t)) return;
  switch (p.kind) {
    case Pattern::Kind::Type: {
      NodeId s = eng.intersect(t, p.ty);
      if (!eng.is_empty(s)) push_case(out, {s, {}});
      return;
    }
    case Pattern::Kind::Var: push_case(out, {t, {{p.var, t}}}); return;
    case Pattern::Kind::Bind:
      push_case(out, {t, {{p.var, eng.singleton(p.constant)}}});
      return;
    case Pattern::Kind::Pair: {
      for (auto& [l, r] : eng.product_decomposition(t)) {
        auto ca = sub_cases(*p.a, l, eng);
        if (ca.empty()) continue;
        auto cb = sub_cases(*p.b, r, eng);
        for (const auto& x : ca)
          for (const auto& y : cb) {
            NodeId s = eng.product(x.slice, y.slice);
            if (eng.is_empty(s)) continue;
            PatCase c{s, x.env};
            merge_env(c.env, y.env);
            push_case(out, std::move(c));
          }
      }
      return;
    }
    case Pattern::Kind::Record: {
      for (const auto& sh : eng.record_decomposition(t)) {
        NodeId shape_node = eng.record(sh.fields, sh.open);
        // Cases per listed field over that field's type in this shape.
        std::vector<std::vector<PatCase>> per_field;
        bool dead = false;
        for (const auto& f : p.fields) {
          NodeId fty = sh.open ? kNodeAny : kNodeEmpty;
          for (const auto& sf : sh.fields)
            if (sf.label == f.label) { fty = sf.ty; break; }
          auto cs = sub_cases(*f.p, fty, eng);
          if (cs.empty()) { dead = true; break; }
          per_field.push_back(std::move(cs));
        }
        if (dead) continue;
        // Cartesian product over listed-field cases.
        std::vector<size_t> idx(per_field.size(), 0);
        while (true) {
          std::vector<RecordField> fs;
          std::map<std::string, NodeId> env;
          fs.reserve(p.fields.size());
          for (size_t i = 0; i < per_field.size(); ++i) {
            const PatCase& c = per_field[i][idx[i]];
            fs.push_back({p.fields[i].label, c.slice, false});
            merge_env(env, c.env);
          }
          NodeId s = eng.intersect(shape_node, eng.record(std::move(fs), p.open));
          if (!eng.is_empty(s)) push_case(out, {s, std::move(env)});
          size_t i = 0;
          for (; i < idx.size(); ++i) {
            if (++idx[i] < per_field[i].size()) break;
            idx[i] = 0;
          }
          if (i == idx.size()) break;
        }
      }
      return;
    }
    case Pattern::Kind::And: {
      const Pattern& a = *p.a;
      const Pattern& b = *p.b;
      // Exact forms first: a plain type restricts the input, a variable or
      // default binder attaches to the other side's slices.
      if (a.kind == Pattern::Kind::Type) {
        for (auto c : sub_cases(b, eng.intersect(t, a.ty), eng)) push_case(out, std::move(c));
        return;
      }
      if (b.kind == Pattern::Kind::Type) {
        for (auto c : sub_cases(a, eng.intersect(t, b.ty), eng)) push_case(out, std::move(c));
        return;
      }
      auto attach = [&](const Pattern& binder, const Pattern& other) {
        for (auto c : sub_cases(other, t, eng)) {
          NodeId bt = binder.kind == Pattern::Kind::Var ? c.slice
                                                        : eng.singleton(binder.constant);
          merge_env(c.env, {{binder.var, bt}});
          push_case(out, std::move(c));
        }
      };
      if (a.kind == Pattern::Kind::Var || a.kind == Pattern::Kind::Bind) {
        attach(a, b);
        return;
      }
      if (b.kind == Pattern::Kind::Var || b.kind == Pattern::Kind::Bind) {
        attach(b, a);
        return;
      }
      // Two structural sides: narrow sequentially. The left side's binding
      // types may be wider than exact on the narrowed slices.
      for (const auto& ca : sub_cases(a, t, eng))
        for (auto cb : sub_cases(b, ca.slice, eng)) {
          PatCase c{cb.slice, ca.env};
          merge_env(c.env, cb.env);
          push_case(out, std::move(c));
        }
      return;
    }
    case Pattern::Kind::Or: {
      NodeId dom = accepted_pattern(*p.a, eng);
      pattern_cases_rec(*p.a, eng.intersect(t, dom), eng, out);
      pattern_cases_rec(*p.b, eng.subtract(t, dom), eng, out);
      return;
    }
  }
}

}  // namespace detail

// Splits t into matching alternatives. Slices union to t /\ accepted_pattern(p);
// empty alternatives are dropped.
inline std::vector<PatCase> pattern_cases(const Pattern& p, NodeId t, TypeEngine& eng) {
  std::vector<PatCase> out;
  detail::pattern_cases_rec(p, t, eng, out);
  return out;
}

}  // namespace fcalc
