#pragma once

// Termination gate for type inference.
//
// Inference visits one memo entry per (recursion variable, canonical input
// type) pair, so it terminates exactly when that set stays finite. The danger
// is a recursive call that rebuilds structure around pieces of its input and
// recurses on the result: each unfolding then presents a strictly larger
// input type and the memo table never closes.
//
// Every recursive binder is analyzed in isolation, in two steps:
//
//   1. Collect the argument of each recursive call of the binder as a shape:
//      a finite tree of constants, pairs and records whose leaves are holes,
//      each hole standing for a subtree of the binder's input bound by some
//      pattern. Call arguments must be assembled from variables and constants
//      only, so this collection is purely syntactic.
//
//   2. Run the binder's body abstractly once on each collected shape.
//      Patterns destructure shapes, expressions rebuild them, and host
//      computations and nested calls yield opaque results. The run fails if a
//      variable that occurs in some recursive call argument (a "marked"
//      variable) is ever bound to a shape assembled around parts of the
//      input, or to an opaque result: such bindings are exactly what lets
//      call arguments grow without bound. Marked variables may bind whole
//      input subtrees and constant trees; those keep every subsequent
//      argument type inside a fixed finite universe.
//
// A branch whose accepted type cannot overlap the shape at hand is never
// entered, so dead alternatives do not cause spurious rejections.
//
// Verdicts are conservative: every acceptance is safe, and a rejection
// reports the first reason found.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "fcalc/ast.hpp"
#include "fcalc/pattern.hpp"
#include "fcalc/types.hpp"
#include "fcalc/value.hpp"

namespace fcalc {

class TerminationChecker {
 public:
  struct Result {
    bool ok;
    std::string reason;                // set when !ok
    std::vector<std::string> trace;    // per-seed log when explain was requested
  };

  explicit TerminationChecker(TypeEngine& eng, bool explain = false)
      : eng_(eng), explain_(explain) {}

  Result check(const Filter& f) {
    trace_.clear();
    if (!free_rec_vars(f).empty())
      return {false, "filter has an unbound recursion variable", std::move(trace_)};
    try {
      std::vector<const Filter*> binders;
      collect_binders(f, binders);
      for (const Filter* b : binders) analyze(*b);
    } catch (const Rejected& r) {
      return {false, r.reason, std::move(trace_)};
    }
    return {true, "", std::move(trace_)};
  }

 private:
  struct Rejected {
    std::string reason;
  };

  // -- shapes ------------------------------------------------------------------

  using ShapeId = uint32_t;

  struct Shape {
    enum class Kind : uint8_t { Hole, Opaque, Const, Pair, Record };
    Kind kind;
    Value constant;  // Const
    ShapeId a{}, b{};  // Pair
    std::vector<std::pair<std::string, ShapeId>> fields;  // Record, sorted
    bool open{};  // Record
  };

  ShapeId intern(Shape s) {
    std::string key = shape_key(s);
    if (auto it = interned_.find(key); it != interned_.end()) return it->second;
    shapes_.push_back(std::move(s));
    ShapeId id = static_cast<ShapeId>(shapes_.size() - 1);
    interned_.emplace(std::move(key), id);
    return id;
  }

  std::string shape_key(const Shape& s) {
    switch (s.kind) {
      case Shape::Kind::Hole: return "_";
      case Shape::Kind::Opaque: return "!";
      case Shape::Kind::Const: return "c" + value_key(s.constant);
      case Shape::Kind::Pair: return "p(" + std::to_string(s.a) + "," + std::to_string(s.b) + ")";
      case Shape::Kind::Record: {
        std::string k = s.open ? "R{" : "r{";
        for (auto& [l, t] : s.fields) k += l + ":" + std::to_string(t) + ",";
        return k + "}";
      }
    }
    return "?";
  }

  ShapeId hole() { return intern({Shape::Kind::Hole, {}, 0, 0, {}, false}); }
  ShapeId opaque() { return intern({Shape::Kind::Opaque, {}, 0, 0, {}, false}); }
  ShapeId mk_const(Value v) { return intern({Shape::Kind::Const, std::move(v), 0, 0, {}, false}); }
  ShapeId mk_pair(ShapeId a, ShapeId b) { return intern({Shape::Kind::Pair, {}, a, b, {}, false}); }
  ShapeId mk_record(std::vector<std::pair<std::string, ShapeId>> fs, bool open) {
    std::sort(fs.begin(), fs.end());
    return intern({Shape::Kind::Record, {}, 0, 0, std::move(fs), open});
  }

  // True when the shape is a plain constant tree: no input subtrees, no
  // opaque results, no unknown record extensions.
  bool is_value(ShapeId id) {
    const Shape& s = shapes_[id];
    switch (s.kind) {
      case Shape::Kind::Hole: return false;
      case Shape::Kind::Opaque: return false;
      case Shape::Kind::Const: return true;
      case Shape::Kind::Pair: return is_value(s.a) && is_value(s.b);
      case Shape::Kind::Record:
        if (s.open) return false;
        for (auto& [l, t] : s.fields)
          if (!is_value(t)) return false;
        return true;
    }
    return false;
  }

  NodeId atype(ShapeId id) {
    const Shape& s = shapes_[id];
    switch (s.kind) {
      case Shape::Kind::Hole:
      case Shape::Kind::Opaque: return kNodeAny;
      case Shape::Kind::Const: return eng_.singleton(s.constant);
      case Shape::Kind::Pair: return eng_.product(atype(s.a), atype(s.b));
      case Shape::Kind::Record: {
        std::vector<RecordField> fs;
        for (auto& [l, t] : s.fields) fs.push_back({l, atype(t), false});
        return eng_.record(std::move(fs), s.open);
      }
    }
    return kNodeAny;
  }

  std::string show(ShapeId id) {
    const Shape& s = shapes_[id];
    switch (s.kind) {
      case Shape::Kind::Hole: return "_";
      case Shape::Kind::Opaque: return "!";
      case Shape::Kind::Const: return to_text(s.constant);
      case Shape::Kind::Pair: return "(" + show(s.a) + ", " + show(s.b) + ")";
      case Shape::Kind::Record: {
        std::string out = "{";
        bool first = true;
        for (auto& [l, t] : s.fields) {
          if (!first) out += ", ";
          first = false;
          out += l + ": " + show(t);
        }
        if (s.open) out += first ? ".." : ", ..";
        return out + "}";
      }
    }
    return "?";
  }

  // -- binder discovery ---------------------------------------------------------

  static void collect_binders(const Filter& f, std::vector<const Filter*>& out) {
    switch (f.kind) {
      case Filter::Kind::Expr: collect_binders_expr(*f.e, out); return;
      case Filter::Kind::Arrow: collect_binders(*f.body, out); return;
      case Filter::Kind::Product:
      case Filter::Kind::Union:
      case Filter::Kind::Comp:
        collect_binders(*f.a, out);
        collect_binders(*f.b, out);
        return;
      case Filter::Kind::Record:
        for (auto& fld : f.ffields) collect_binders(*fld.f, out);
        return;
      case Filter::Kind::Rec:
        out.push_back(&f);
        collect_binders(*f.body, out);
        return;
      case Filter::Kind::Call: collect_binders_expr(*f.arg, out); return;
      case Filter::Kind::GroupBy:
      case Filter::Kind::OrderBy: collect_binders(*f.body, out); return;
    }
  }

  static void collect_binders_expr(const Expr& e, std::vector<const Filter*>& out) {
    switch (e.kind) {
      case Expr::Kind::Const:
      case Expr::Kind::Var: return;
      case Expr::Kind::Pair:
        collect_binders_expr(*e.a, out);
        collect_binders_expr(*e.b, out);
        return;
      case Expr::Kind::Delete: collect_binders_expr(*e.a, out); return;
      case Expr::Kind::Record:
        for (auto& fld : e.rfields) {
          if (fld.label_expr) collect_binders_expr(*fld.label_expr, out);
          collect_binders_expr(*fld.value, out);
        }
        return;
      case Expr::Kind::Builtin:
        for (auto& a : e.args) collect_binders_expr(*a, out);
        return;
      case Expr::Kind::Apply:
        collect_binders(*e.fn, out);
        collect_binders_expr(*e.arg, out);
        return;
    }
  }

  // -- marks: variables that feed an argument of the binder under analysis ------

  static std::set<std::string> collect_marks(const std::string& X, const Filter& f) {
    std::set<std::string> out;
    collect_marks_rec(X, f, out);
    return out;
  }

  static void collect_marks_rec(const std::string& X, const Filter& f,
                                std::set<std::string>& out) {
    switch (f.kind) {
      case Filter::Kind::Expr: collect_marks_expr(X, *f.e, out); return;
      case Filter::Kind::Arrow: collect_marks_rec(X, *f.body, out); return;
      case Filter::Kind::Product:
      case Filter::Kind::Union:
      case Filter::Kind::Comp:
        collect_marks_rec(X, *f.a, out);
        collect_marks_rec(X, *f.b, out);
        return;
      case Filter::Kind::Record:
        for (auto& fld : f.ffields) collect_marks_rec(X, *fld.f, out);
        return;
      case Filter::Kind::Rec:
        if (f.rec_var != X) collect_marks_rec(X, *f.body, out);  // shadowed otherwise
        return;
      case Filter::Kind::Call: {
        if (f.rec_var == X) {
          auto vs = free_vars(*f.arg);
          out.insert(vs.begin(), vs.end());
        }
        return;
      }
      case Filter::Kind::GroupBy:
      case Filter::Kind::OrderBy: collect_marks_rec(X, *f.body, out); return;
    }
  }

  static void collect_marks_expr(const std::string& X, const Expr& e,
                                 std::set<std::string>& out) {
    switch (e.kind) {
      case Expr::Kind::Const:
      case Expr::Kind::Var: return;
      case Expr::Kind::Pair:
        collect_marks_expr(X, *e.a, out);
        collect_marks_expr(X, *e.b, out);
        return;
      case Expr::Kind::Delete: collect_marks_expr(X, *e.a, out); return;
      case Expr::Kind::Record:
        for (auto& fld : e.rfields) {
          if (fld.label_expr) collect_marks_expr(X, *fld.label_expr, out);
          collect_marks_expr(X, *fld.value, out);
        }
        return;
      case Expr::Kind::Builtin:
        for (auto& a : e.args) collect_marks_expr(X, *a, out);
        return;
      case Expr::Kind::Apply:
        collect_marks_rec(X, *e.fn, out);
        collect_marks_expr(X, *e.arg, out);
        return;
    }
  }

  // -- per-binder analysis --------------------------------------------------------

  using Env = std::map<std::string, ShapeId>;
  using ShapeSet = std::set<ShapeId>;

  static constexpr size_t kResultBudget = 64;
  static constexpr size_t kMatchBudget = 64;
  static constexpr size_t kSeedBudget = 512;

  void analyze(const Filter& rec) {
    const std::string& name = rec.rec_var;
    const Filter& body = *rec.body;
    run_marks_ = collect_marks(name, body);
    Env e0;
    for (const std::string& v : free_vars(body)) e0[v] = hole();
    std::vector<ShapeId> seeds;
    seed_args(name, body, e0, seeds);
    if (seeds.size() > kSeedBudget)
      throw Rejected{"analysis budget exceeded; cannot prove termination"};
    ShapeSet seen;
    for (ShapeId seed : seeds) {
      if (!seen.insert(seed).second) continue;
      if (explain_) trace_.push_back(name + " <- " + show(seed));
      chk(body, seed, e0);
    }
  }

  // Phase 1: collect the argument shape of every call of X, binding the
  // capture variables of enclosing patterns to fresh input subtrees.
  void seed_args(const std::string& X, const Filter& f, Env env,
                 std::vector<ShapeId>& out) {
    switch (f.kind) {
      case Filter::Kind::Expr: seed_args_expr(X, *f.e, env, out); return;
      case Filter::Kind::Arrow: {
        bind_pattern_vars(*f.p, env);
        seed_args(X, *f.body, std::move(env), out);
        return;
      }
      case Filter::Kind::Product:
      case Filter::Kind::Union:
      case Filter::Kind::Comp:
        seed_args(X, *f.a, env, out);
        seed_args(X, *f.b, std::move(env), out);
        return;
      case Filter::Kind::Record:
        for (auto& fld : f.ffields) seed_args(X, *fld.f, env, out);
        return;
      case Filter::Kind::Rec:
        if (f.rec_var != X) seed_args(X, *f.body, std::move(env), out);
        return;
      case Filter::Kind::Call: {
        ShapeId a = arg_shape(*f.arg, env);
        if (f.rec_var == X) out.push_back(a);
        return;
      }
      case Filter::Kind::GroupBy:
      case Filter::Kind::OrderBy: seed_args(X, *f.body, std::move(env), out); return;
    }
  }

  void seed_args_expr(const std::string& X, const Expr& e, const Env& env,
                      std::vector<ShapeId>& out) {
    switch (e.kind) {
      case Expr::Kind::Const:
      case Expr::Kind::Var: return;
      case Expr::Kind::Pair:
        seed_args_expr(X, *e.a, env, out);
        seed_args_expr(X, *e.b, env, out);
        return;
      case Expr::Kind::Delete: seed_args_expr(X, *e.a, env, out); return;
      case Expr::Kind::Record:
        for (auto& fld : e.rfields) {
          if (fld.label_expr) seed_args_expr(X, *fld.label_expr, env, out);
          seed_args_expr(X, *fld.value, env, out);
        }
        return;
      case Expr::Kind::Builtin:
        for (auto& a : e.args) seed_args_expr(X, *a, env, out);
        return;
      case Expr::Kind::Apply:
        seed_args(X, *e.fn, env, out);
        seed_args_expr(X, *e.arg, env, out);
        return;
    }
  }

  void bind_pattern_vars(const Pattern& p, Env& env) {
    switch (p.kind) {
      case Pattern::Kind::Type: return;
      case Pattern::Kind::Var: env[p.var] = hole(); return;
      case Pattern::Kind::Bind: env[p.var] = mk_const(p.constant); return;
      case Pattern::Kind::Pair:
      case Pattern::Kind::And:
      case Pattern::Kind::Or:
        bind_pattern_vars(*p.a, env);
        bind_pattern_vars(*p.b, env);
        return;
      case Pattern::Kind::Record:
        for (const auto& fld : p.fields) bind_pattern_vars(*fld.p, env);
        return;
    }
  }

  ShapeId arg_shape(const Expr& e, const Env& env) {
    switch (e.kind) {
      case Expr::Kind::Const: return mk_const(e.constant);
      case Expr::Kind::Var: {
        auto it = env.find(e.var);
        return it == env.end() ? hole() : it->second;
      }
      case Expr::Kind::Pair: return mk_pair(arg_shape(*e.a, env), arg_shape(*e.b, env));
      case Expr::Kind::Record: {
        std::map<std::string, ShapeId> m;  // right-priority duplicates
        for (auto& fld : e.rfields) {
          if (fld.label_expr)
            throw Rejected{"recursive call arguments must be assembled from "
                           "variables and constants"};
          m[fld.label] = arg_shape(*fld.value, env);
        }
        return mk_record({m.begin(), m.end()}, false);
      }
      default:
        throw Rejected{"recursive call arguments must be assembled from "
                       "variables and constants"};
    }
  }

  // -- phase 2: abstract execution ------------------------------------------------

  void add_result(ShapeSet& out, ShapeId s) {
    out.insert(s);
    if (out.size() > kResultBudget)
      throw Rejected{"abstract result set exploded; cannot prove termination"};
  }

  void bind(Env& env, const std::string& var, ShapeId s) {
    if (run_marks_.count(var) && s != hole() && !is_value(s))
      throw Rejected{"recursion variable argument '" + var +
                     "' can bind a value assembled around parts of the input"};
    env[var] = s;
  }

  // All possible binding environments for p matched against shape A.
  // No-match outcomes contribute nothing; uncertain matches contribute their
  // match branch.
  std::vector<Env> match_shape(const Pattern& p, ShapeId A, const Env& base) {
    switch (p.kind) {
      case Pattern::Kind::Type: {
        const Shape& s = shapes_[A];
        if (s.kind == Shape::Kind::Const)
          return eng_.value_in(s.constant, p.ty) ? std::vector<Env>{base} : std::vector<Env>{};
        if (eng_.is_empty(eng_.intersect(atype(A), p.ty))) return {};
        return {base};
      }
      case Pattern::Kind::Var: {
        Env e = base;
        bind(e, p.var, A);
        return {e};
      }
      case Pattern::Kind::Bind: {
        Env e = base;
        bind(e, p.var, mk_const(p.constant));
        return {e};
      }
      case Pattern::Kind::Pair: {
        const Shape& s = shapes_[A];
        ShapeId l, r;
        if (s.kind == Shape::Kind::Pair) {
          l = s.a;
          r = s.b;
        } else if (s.kind == Shape::Kind::Hole) {
          l = hole();
          r = hole();
        } else if (s.kind == Shape::Kind::Opaque) {
          l = opaque();
          r = opaque();
        } else if (s.kind == Shape::Kind::Const && s.constant.is_pair()) {
          l = mk_const(s.constant.first());
          r = mk_const(s.constant.second());
        } else {
          return {};
        }
        std::vector<Env> out;
        for (const Env& e1 : match_shape(*p.a, l, base))
          for (const Env& e2 : match_shape(*p.b, r, e1)) {
            out.push_back(e2);
            if (out.size() > kMatchBudget)
              throw Rejected{"abstract match set exploded; cannot prove termination"};
          }
        return out;
      }
      case Pattern::Kind::Record: {
        const Shape& s = shapes_[A];
        std::vector<std::pair<std::string, ShapeId>> have;
        bool open_shape;
        ShapeId missing = hole();
        if (s.kind == Shape::Kind::Record) {
          have = s.fields;
          open_shape = s.open;
        } else if (s.kind == Shape::Kind::Hole) {
          open_shape = true;
        } else if (s.kind == Shape::Kind::Opaque) {
          open_shape = true;
          missing = opaque();
        } else if (s.kind == Shape::Kind::Const && s.constant.is_record()) {
          for (auto& [l, v] : s.constant.fields()) have.push_back({l, mk_const(v)});
          open_shape = false;
        } else {
          return {};
        }
        std::vector<Env> envs{base};
        for (const auto& fld : p.fields) {
          ShapeId fs = 0;
          bool found = false;
          for (auto& [l, t] : have)
            if (l == fld.label) {
              fs = t;
              found = true;
              break;
            }
          if (!found) {
            if (!open_shape) return {};
            fs = missing;
          }
          std::vector<Env> next;
          for (const Env& e : envs)
            for (const Env& e2 : match_shape(*fld.p, fs, e)) {
              next.push_back(e2);
              if (next.size() > kMatchBudget)
                throw Rejected{"abstract match set exploded; cannot prove termination"};
            }
          envs = std::move(next);
          if (envs.empty()) return {};
        }
        if (!p.open && s.kind == Shape::Kind::Const) {
          // closed pattern rejects constants with extra fields
          for (auto& [l, v] : s.constant.fields()) {
            bool listed = false;
            for (const auto& fld : p.fields)
              if (fld.label == l) listed = true;
            if (!listed) return {};
          }
        }
        return envs;
      }
      case Pattern::Kind::And: {
        std::vector<Env> out;
        for (const Env& e1 : match_shape(*p.a, A, base))
          for (const Env& e2 : match_shape(*p.b, A, e1)) {
            out.push_back(e2);
            if (out.size() > kMatchBudget)
              throw Rejected{"abstract match set exploded; cannot prove termination"};
          }
        return out;
      }
      case Pattern::Kind::Or: {
        std::vector<Env> out = match_shape(*p.a, A, base);
        for (Env& e : match_shape(*p.b, A, base)) {
          out.push_back(std::move(e));
          if (out.size() > kMatchBudget)
            throw Rejected{"abstract match set exploded; cannot prove termination"};
        }
        return out;
      }
    }
    return {};
  }

  ShapeSet shape_of_expr(const Expr& e, const Env& env) {
    ShapeSet out;
    switch (e.kind) {
      case Expr::Kind::Const: add_result(out, mk_const(e.constant)); return out;
      case Expr::Kind::Var: {
        auto it = env.find(e.var);
        add_result(out, it == env.end() ? hole() : it->second);
        return out;
      }
      case Expr::Kind::Pair: {
        for (ShapeId a : shape_of_expr(*e.a, env))
          for (ShapeId b : shape_of_expr(*e.b, env)) add_result(out, mk_pair(a, b));
        return out;
      }
      case Expr::Kind::Record: {
        bool exact = true;
        for (const auto& fld : e.rfields)
          if (fld.label_expr) exact = false;
        if (!exact) {
          // a computed label makes the whole record a host computation
          for_each_apply(e, env);
          add_result(out, opaque());
          return out;
        }
        std::vector<std::vector<std::pair<std::string, ShapeId>>> variants{{}};
        for (const auto& fld : e.rfields) {
          ShapeSet vs = shape_of_expr(*fld.value, env);
          std::vector<std::vector<std::pair<std::string, ShapeId>>> next;
          for (auto& base : variants)
            for (ShapeId v : vs) {
              auto row = base;
              row.push_back({fld.label, v});
              next.push_back(std::move(row));
              if (next.size() > kResultBudget)
                throw Rejected{"abstract result set exploded; cannot prove termination"};
            }
          variants = std::move(next);
        }
        for (auto& row : variants) {
          // right-priority duplicates
          std::map<std::string, ShapeId> m;
          for (auto& [l, v] : row) m[l] = v;
          add_result(out, mk_record({m.begin(), m.end()}, false));
        }
        return out;
      }
      case Expr::Kind::Delete:
      case Expr::Kind::Builtin: {
        // operand evaluation cannot recurse, but applications inside still
        // bind their own patterns and must pass the marked-variable rule
        for_each_apply(e, env);
        add_result(out, opaque());
        return out;
      }
      case Expr::Kind::Apply: {
        ShapeSet args = shape_of_expr(*e.arg, env);
        for (ShapeId a : args)
          for (ShapeId r : chk(*e.fn, a, env)) add_result(out, r);
        return out;
      }
    }
    add_result(out, opaque());
    return out;
  }

  void for_each_apply(const Expr& e, const Env& env) {
    switch (e.kind) {
      case Expr::Kind::Pair:
        for_each_apply(*e.a, env);
        for_each_apply(*e.b, env);
        return;
      case Expr::Kind::Delete: for_each_apply(*e.a, env); return;
      case Expr::Kind::Record:
        for (auto& fld : e.rfields) {
          if (fld.label_expr) for_each_apply(*fld.label_expr, env);
          for_each_apply(*fld.value, env);
        }
        return;
      case Expr::Kind::Builtin:
        for (auto& a : e.args) for_each_apply(*a, env);
        return;
      case Expr::Kind::Apply: shape_of_expr(e, env); return;
      default: return;
    }
  }

  ShapeSet chk(const Filter& f, ShapeId A, const Env& env) {
    ShapeSet out;
    // inputs that can never reach this filter contribute no behaviour
    if (eng_.is_empty(eng_.intersect(atype(A), accepted_filter(f, eng_, &acc_memo_))))
      return out;
    switch (f.kind) {
      case Filter::Kind::Expr: return shape_of_expr(*f.e, env);

      case Filter::Kind::Arrow: {
        for (const Env& e : match_shape(*f.p, A, env))
          for (ShapeId r : chk(*f.body, A, e)) add_result(out, r);
        return out;
      }

      case Filter::Kind::Product: {
        const Shape& s = shapes_[A];
        ShapeId l, r;
        if (s.kind == Shape::Kind::Pair) {
          l = s.a;
          r = s.b;
        } else if (s.kind == Shape::Kind::Hole) {
          l = hole();
          r = hole();
        } else if (s.kind == Shape::Kind::Opaque) {
          l = opaque();
          r = opaque();
        } else if (s.kind == Shape::Kind::Const && s.constant.is_pair()) {
          l = mk_const(s.constant.first());
          r = mk_const(s.constant.second());
        } else {
          return out;
        }
        for (ShapeId a : chk(*f.a, l, env))
          for (ShapeId b : chk(*f.b, r, env)) add_result(out, mk_pair(a, b));
        return out;
      }

      case Filter::Kind::Record: {
        const Shape& s = shapes_[A];
        ShapeId missing = s.kind == Shape::Kind::Opaque ? opaque() : hole();
        std::vector<std::vector<std::pair<std::string, ShapeId>>> variants{{}};
        for (const auto& fld : f.ffields) {
          ShapeId fs = missing;
          if (s.kind == Shape::Kind::Record) {
            for (auto& [l, t] : s.fields)
              if (l == fld.label) fs = t;
          } else if (s.kind == Shape::Kind::Const && s.constant.is_record()) {
            if (const Value* v = s.constant.field(fld.label)) fs = mk_const(*v);
          }
          ShapeSet rs = chk(*fld.f, fs, env);
          std::vector<std::vector<std::pair<std::string, ShapeId>>> next;
          for (auto& base : variants)
            for (ShapeId r : rs) {
              auto row = base;
              row.push_back({fld.label, r});
              next.push_back(std::move(row));
              if (next.size() > kResultBudget)
                throw Rejected{"abstract result set exploded; cannot prove termination"};
            }
          variants = std::move(next);
        }
        // the rebuilt record keeps unknown copied fields: open shape
        for (auto& row : variants) add_result(out, mk_record(row, true));
        return out;
      }

      case Filter::Kind::Union: {
        // first-match dispatch: a shape wholly inside the left branch's
        // accepted type never reaches the right branch
        for (ShapeId r : chk(*f.a, A, env)) add_result(out, r);
        if (!eng_.subtype(atype(A), accepted_filter(*f.a, eng_, &acc_memo_)))
          for (ShapeId r : chk(*f.b, A, env)) add_result(out, r);
        return out;
      }

      case Filter::Kind::Comp: {
        for (ShapeId m : chk(*f.a, A, env))
          for (ShapeId r : chk(*f.b, m, env)) add_result(out, r);
        return out;
      }

      case Filter::Kind::Rec:
      case Filter::Kind::Call: {
        // analyzed in isolation; the result of a recursive run is unknown
        add_result(out, opaque());
        return out;
      }

      case Filter::Kind::GroupBy:
      case Filter::Kind::OrderBy: {
        chk(*f.body, opaque(), env);
        add_result(out, opaque());
        return out;
      }
    }
    return out;
  }

  TypeEngine& eng_;
  bool explain_;
  std::vector<Shape> shapes_;
  std::map<std::string, ShapeId> interned_;
  std::set<std::string> run_marks_;
  std::unordered_map<uint64_t, NodeId> acc_memo_;
  std::vector<std::string> trace_;
};

inline bool check_terminates(TypeEngine& eng, const Filter& f) {
  return TerminationChecker(eng).check(f).ok;
}

}  // namespace fcalc
