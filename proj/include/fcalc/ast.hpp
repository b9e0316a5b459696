#pragma once

// Core term language: patterns, expressions and filters. Surface syntax and
// the query frontend both lower into these shapes; the evaluator, the type
// inferencer and the termination check all operate on them directly.
//
// Nodes are immutable and shared. Recursion binders are given fresh names at
// construction time by the frontends, so a name identifies its binder
// globally within one program.

#include <atomic>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "fcalc/types.hpp"
#include "fcalc/value.hpp"

namespace fcalc {

struct Span {
  uint32_t begin = 0, end = 0;
  bool synthetic = true;  // generated code: excluded from user diagnostics
};

inline Span user_span(uint32_t b, uint32_t e) { return {b, e, false}; }

struct Pattern;
struct Expr;
struct Filter;
using PatternPtr = std::shared_ptr<const Pattern>;
using ExprPtr = std::shared_ptr<const Expr>;
using FilterPtr = std::shared_ptr<const Filter>;

// -- Patterns -----------------------------------------------------------------

struct Pattern {
  enum class Kind {
    Type,     // matches when the value is in ty, binds nothing
    Var,      // matches anything, binds var
    Bind,     // (var := c): matches anything, binds var to the constant
    Pair,     // (a, b)
    Record,   // {l: p, ...}; open allows extra fields
    And,      // both must match; bindings merge
    Or        // first match wins
  };
  Kind kind;
  Span span;
  NodeId ty = kNodeEmpty;  // Type
  std::string var;         // Var, Bind
  Value constant;          // Bind
  PatternPtr a, b;         // Pair, And, Or
  struct Field {
    std::string label;
    PatternPtr p;
  };
  std::vector<Field> fields;  // Record
  bool open = false;          // Record
};

namespace pat {

inline PatternPtr type(NodeId t, Span s = {}) {
  auto p = std::make_shared<Pattern>();
  p->kind = Pattern::Kind::Type;
  p->ty = t;
  p->span = s;
  return p;
}
inline PatternPtr var(std::string name, Span s = {}) {
  auto p = std::make_shared<Pattern>();
  p->kind = Pattern::Kind::Var;
  p->var = std::move(name);
  p->span = s;
  return p;
}
inline PatternPtr bind(std::string name, Value c, Span s = {}) {
  auto p = std::make_shared<Pattern>();
  p->kind = Pattern::Kind::Bind;
  p->var = std::move(name);
  p->constant = std::move(c);
  p->span = s;
  return p;
}
inline PatternPtr pair(PatternPtr a, PatternPtr b, Span s = {}) {
  auto p = std::make_shared<Pattern>();
  p->kind = Pattern::Kind::Pair;
  p->a = std::move(a);
  p->b = std::move(b);
  p->span = s;
  return p;
}
inline PatternPtr record(std::vector<Pattern::Field> fs, bool open, Span s = {}) {
  auto p = std::make_shared<Pattern>();
  p->kind = Pattern::Kind::Record;
  p->fields = std::move(fs);
  p->open = open;
  p->span = s;
  return p;
}
inline PatternPtr conj(PatternPtr a, PatternPtr b, Span s = {}) {
  auto p = std::make_shared<Pattern>();
  p->kind = Pattern::Kind::And;
  p->a = std::move(a);
  p->b = std::move(b);
  p->span = s;
  return p;
}
inline PatternPtr alt(PatternPtr a, PatternPtr b, Span s = {}) {
  auto p = std::make_shared<Pattern>();
  p->kind = Pattern::Kind::Or;
  p->a = std::move(a);
  p->b = std::move(b);
  p->span = s;
  return p;
}

}  // namespace pat

// -- Expressions ---------------------------------------------------------------

struct Expr {
  enum class Kind {
    Const,
    Var,
    Pair,
    Record,   // literal and computed labels
    Delete,   // a \ label
    Builtin,  // named operator over argument expressions
    Apply     // filter application f(arg); f has no free recursion variables
  };
  Kind kind;
  Span span;
  Value constant;               // Const
  std::string var;              // Var
  ExprPtr a, b;                 // Pair; Delete uses a
  std::string label;            // Delete
  std::string op;               // Builtin
  std::vector<ExprPtr> args;    // Builtin
  FilterPtr fn;                 // Apply
  ExprPtr arg;                  // Apply
  struct Field {
    ExprPtr label_expr;  // null for a literal label
    std::string label;
    ExprPtr value;
  };
  std::vector<Field> rfields;   // Record
  bool from_field_access = false;  // Apply that desugared from e.label
  int pipeline_stage = -1;         // >=0: stage marker for stage tracing
};

// -- Filters --------------------------------------------------------------------

struct Filter {
  enum class Kind {
    Expr,      // ignores the input, evaluates the expression
    Arrow,     // pattern => body: matches input, binds, runs body on input
    Product,   // (f1, f2) on a pair input, componentwise
    Record,    // {l: f, ...}: listed fields must exist; other fields copied
    Union,     // f1 | f2: first that does not fail
    Comp,      // f1 ; f2
    Rec,       // recursion binder: body may call rec_var
    Call,      // rec_var applied to an argument expression
    GroupBy,   // key filter applied per item
    OrderBy    // key filter applied per item
  };
  Kind kind;
  Span span;
  ExprPtr e;             // Expr
  PatternPtr p;          // Arrow
  FilterPtr body;        // Arrow, Rec, GroupBy, OrderBy
  FilterPtr a, b;        // Product, Union, Comp
  std::string rec_var;   // Rec, Call
  ExprPtr arg;           // Call
  struct Field {
    std::string label;
    FilterPtr f;
  };
  std::vector<Field> ffields;  // Record
  uint64_t uid = 0;            // stable identity for caches and diagnostics
};

namespace detail {
inline uint64_t next_filter_uid() {
  static std::atomic<uint64_t> ctr{1};
  return ctr.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

namespace flt {

inline std::shared_ptr<Filter> mk(Filter::Kind k, Span s) {
  auto f = std::make_shared<Filter>();
  f->kind = k;
  f->span = s;
  f->uid = detail::next_filter_uid();
  return f;
}

inline FilterPtr expr(ExprPtr e, Span s = {}) {
  auto f = mk(Filter::Kind::Expr, s);
  f->e = std::move(e);
  return f;
}
inline FilterPtr arrow(PatternPtr p, FilterPtr body, Span s = {}) {
  auto f = mk(Filter::Kind::Arrow, s);
  f->p = std::move(p);
  f->body = std::move(body);
  return f;
}
inline FilterPtr product(FilterPtr a, FilterPtr b, Span s = {}) {
  auto f = mk(Filter::Kind::Product, s);
  f->a = std::move(a);
  f->b = std::move(b);
  return f;
}
inline FilterPtr record(std::vector<Filter::Field> fs, Span s = {}) {
  auto f = mk(Filter::Kind::Record, s);
  f->ffields = std::move(fs);
  return f;
}
inline FilterPtr alt(FilterPtr a, FilterPtr b, Span s = {}) {
  auto f = mk(Filter::Kind::Union, s);
  f->a = std::move(a);
  f->b = std::move(b);
  return f;
}
inline FilterPtr comp(FilterPtr a, FilterPtr b, Span s = {}) {
  auto f = mk(Filter::Kind::Comp, s);
  f->a = std::move(a);
  f->b = std::move(b);
  return f;
}
inline FilterPtr rec(std::string var, FilterPtr body, Span s = {}) {
  auto f = mk(Filter::Kind::Rec, s);
  f->rec_var = std::move(var);
  f->body = std::move(body);
  return f;
}
inline FilterPtr call(std::string var, ExprPtr arg, Span s = {}) {
  auto f = mk(Filter::Kind::Call, s);
  f->rec_var = std::move(var);
  f->arg = std::move(arg);
  return f;
}
inline FilterPtr groupby(FilterPtr body, Span s = {}) {
  auto f = mk(Filter::Kind::GroupBy, s);
  f->body = std::move(body);
  return f;
}
inline FilterPtr orderby(FilterPtr body, Span s = {}) {
  auto f = mk(Filter::Kind::OrderBy, s);
  f->body = std::move(body);
  return f;
}

}  // namespace flt

namespace ex {

inline std::shared_ptr<Expr> mk(Expr::Kind k, Span s) {
  auto e = std::make_shared<Expr>();
  e->kind = k;
  e->span = s;
  return e;
}

inline ExprPtr constant(Value v, Span s = {}) {
  auto e = mk(Expr::Kind::Const, s);
  e->constant = std::move(v);
  return e;
}
inline ExprPtr var(std::string name, Span s = {}) {
  auto e = mk(Expr::Kind::Var, s);
  e->var = std::move(name);
  return e;
}
inline ExprPtr pair(ExprPtr a, ExprPtr b, Span s = {}) {
  auto e = mk(Expr::Kind::Pair, s);
  e->a = std::move(a);
  e->b = std::move(b);
  return e;
}
inline ExprPtr record(std::vector<Expr::Field> fs, Span s = {}) {
  auto e = mk(Expr::Kind::Record, s);
  e->rfields = std::move(fs);
  return e;
}
inline ExprPtr del(ExprPtr a, std::string label, Span s = {}) {
  auto e = mk(Expr::Kind::Delete, s);
  e->a = std::move(a);
  e->label = std::move(label);
  return e;
}
inline ExprPtr builtin(std::string op, std::vector<ExprPtr> args, Span s = {}) {
  auto e = mk(Expr::Kind::Builtin, s);
  e->op = std::move(op);
  e->args = std::move(args);
  return e;
}
inline ExprPtr apply(FilterPtr fn, ExprPtr arg, Span s = {}) {
  auto e = mk(Expr::Kind::Apply, s);
  e->fn = std::move(fn);
  e->arg = std::move(arg);
  return e;
}

inline ExprPtr list(std::vector<ExprPtr> items, Span s = {}) {
  ExprPtr acc = constant(Value::nil(), s);
  for (auto it = items.rbegin(); it != items.rend(); ++it)
    acc = pair(std::move(*it), std::move(acc), s);
  return acc;
}

}  // namespace ex

// -- Free variables ----------------------------------------------------------------

namespace detail {

inline void pattern_vars(const Pattern& p, std::set<std::string>& out) {
  switch (p.kind) {
    case Pattern::Kind::Type: break;
    case Pattern::Kind::Var:
    case Pattern::Kind::Bind: out.insert(p.var); break;
    case Pattern::Kind::Pair:
    case Pattern::Kind::And:
    case Pattern::Kind::Or:
      pattern_vars(*p.a, out);
      pattern_vars(*p.b, out);
      break;
    case Pattern::Kind::Record:
      for (const auto& f : p.fields) pattern_vars(*f.p, out);
      break;
  }
}

void filter_free_walk(const Filter& f, std::set<std::string> bound, std::set<std::string>& vars,
                      std::set<std::string> rec_bound, std::set<std::string>& recs);

inline void expr_free_walk(const Expr& e, const std::set<std::string>& bound,
                           std::set<std::string>& vars, const std::set<std::string>& rec_bound,
                           std::set<std::string>& recs) {
  switch (e.kind) {
    case Expr::Kind::Const: break;
    case Expr::Kind::Var:
      if (!bound.count(e.var)) vars.insert(e.var);
      break;
    case Expr::Kind::Pair:
      expr_free_walk(*e.a, bound, vars, rec_bound, recs);
      expr_free_walk(*e.b, bound, vars, rec_bound, recs);
      break;
    case Expr::Kind::Record:
      for (const auto& f : e.rfields) {
        if (f.label_expr) expr_free_walk(*f.label_expr, bound, vars, rec_bound, recs);
        expr_free_walk(*f.value, bound, vars, rec_bound, recs);
      }
      break;
    case Expr::Kind::Delete: expr_free_walk(*e.a, bound, vars, rec_bound, recs); break;
    case Expr::Kind::Builtin:
      for (const auto& a : e.args) expr_free_walk(*a, bound, vars, rec_bound, recs);
      break;
    case Expr::Kind::Apply:
      filter_free_walk(*e.fn, bound, vars, rec_bound, recs);
      expr_free_walk(*e.arg, bound, vars, rec_bound, recs);
      break;
  }
}

inline void filter_free_walk(const Filter& f, std::set<std::string> bound,
                             std::set<std::string>& vars, std::set<std::string> rec_bound,
                             std::set<std::string>& recs) {
  switch (f.kind) {
    case Filter::Kind::Expr: expr_free_walk(*f.e, bound, vars, rec_bound, recs); break;
    case Filter::Kind::Arrow: {
      std::set<std::string> b2 = bound;
      pattern_vars(*f.p, b2);
      filter_free_walk(*f.body, std::move(b2), vars, rec_bound, recs);
      break;
    }
    case Filter::Kind::Product:
    case Filter::Kind::Union:
    case Filter::Kind::Comp:
      filter_free_walk(*f.a, bound, vars, rec_bound, recs);
      filter_free_walk(*f.b, bound, vars, rec_bound, recs);
      break;
    case Filter::Kind::Record:
      for (const auto& fld : f.ffields) filter_free_walk(*fld.f, bound, vars, rec_bound, recs);
      break;
    case Filter::Kind::Rec: {
      std::set<std::string> r2 = rec_bound;
      r2.insert(f.rec_var);
      filter_free_walk(*f.body, bound, vars, std::move(r2), recs);
      break;
    }
    case Filter::Kind::Call:
      if (!rec_bound.count(f.rec_var)) recs.insert(f.rec_var);
      expr_free_walk(*f.arg, bound, vars, rec_bound, recs);
      break;
    case Filter::Kind::GroupBy:
    case Filter::Kind::OrderBy: filter_free_walk(*f.body, bound, vars, rec_bound, recs); break;
  }
}

}  // namespace detail

inline std::set<std::string> free_vars(const Filter& f) {
  std::set<std::string> vars, recs;
  detail::filter_free_walk(f, {}, vars, {}, recs);
  return vars;
}

inline std::set<std::string> free_rec_vars(const Filter& f) {
  std::set<std::string> vars, recs;
  detail::filter_free_walk(f, {}, vars, {}, recs);
  return recs;
}

inline std::set<std::string> free_vars(const Expr& e) {
  std::set<std::string> vars, recs;
  detail::expr_free_walk(e, {}, vars, {}, recs);
  return vars;
}

// A recursion call argument must be rebuildable from variables and constants:
// a variable, a constant, or a pair/record of such.
inline bool is_call_arg_shape(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Const:
    case Expr::Kind::Var: return true;
    case Expr::Kind::Pair: return is_call_arg_shape(*e.a) && is_call_arg_shape(*e.b);
    case Expr::Kind::Record:
      for (const auto& f : e.rfields) {
        if (f.label_expr) return false;
        if (!is_call_arg_shape(*f.value)) return false;
      }
      return true;
    default: return false;
  }
}

}  // namespace fcalc
