#pragma once

// Type inference for filters. Given the type of the input, computes the type
// of the output; recursive filters are handled by memoizing (recursion
// variable, canonical input type) pairs and tying the resulting equation into
// a recursive type.
//
// Precision comes from three mechanisms:
//  * pattern_cases splits an arrow's input into alternatives with exact
//    per-variable binding types, and the body is typed once per alternative;
//  * a composition whose left side pipes a filter applied to one variable
//    is retyped once per first-match branch of that filter, so tests and
//    their continuations stay correlated;
//  * sequence combinators type their key filter per item type.
//
// Errors are reported to a sink and recovered with the empty type, which
// silently absorbs all downstream uses of the failed value: one fault, one
// report.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "fcalc/ast.hpp"
#include "fcalc/pattern.hpp"
#include "fcalc/printer.hpp"
#include "fcalc/types.hpp"
#include "fcalc/value.hpp"

namespace fcalc {

struct Diagnostic {
  std::string code;
  Span span;
  std::string message;
};

class DiagnosticSink {
 public:
  void report(std::string code, Span span, std::string message) {
    std::string key = code + "|" + std::to_string(span.begin) + "|" + std::to_string(span.end) +
                      "|" + message;
    if (!seen_.insert(std::move(key)).second) return;
    list_.push_back({std::move(code), span, std::move(message)});
  }

  const std::vector<Diagnostic>& diagnostics() const { return list_; }

  size_t error_count() const {
    size_t n = 0;
    for (const auto& d : list_)
      if (d.code != "E-UNREACHABLE-BRANCH") ++n;
    return n;
  }

 private:
  std::vector<Diagnostic> list_;
  std::set<std::string> seen_;
};

struct InferStats {
  uint64_t memo_creations = 0;
  uint64_t memo_hits = 0;
  uint64_t memo_inflight_hits = 0;
  uint64_t memo_purges = 0;
  size_t memo_entries = 0;
  size_t rec_vars = 0;
  size_t input_types = 0;
};

struct InferOptions {
  bool precise_groupby = false;
  uint64_t memo_budget = 100'000;
};

class Inferencer {
 public:
  using Options = InferOptions;

  Inferencer(TypeEngine& eng, DiagnosticSink& diags, Options opt = {})
      : eng_(eng), diags_(diags), opt_(opt) {}

  NodeId infer(const Filter& f, NodeId input) { return type_filter(f, input, nullptr, nullptr); }

  // Reports union branches that were never entered over the whole run.
  void finish() {
    std::vector<std::pair<Span, const Filter*>> dead;
    for (const auto& [u, used] : union_usage_) {
      const Filter* arm_a = u->a.get();
      const Filter* arm_b = u->b.get();
      if (!used.first && !arm_a->span.synthetic) dead.push_back({arm_a->span, arm_a});
      if (!used.second && !arm_b->span.synthetic) dead.push_back({arm_b->span, arm_b});
    }
    std::sort(dead.begin(), dead.end(), [](const auto& a, const auto& b) {
      return std::tie(a.first.begin, a.first.end) < std::tie(b.first.begin, b.first.end);
    });
    for (const auto& [span, arm] : dead)
      report("E-UNREACHABLE-BRANCH", span, "this branch can never be selected");
  }

  const std::vector<std::pair<int, NodeId>>& stage_types() const { return stage_types_; }

  InferStats stats() const {
    InferStats s = stats_;
    s.memo_entries = memo_.size();
    s.rec_vars = rec_vars_seen_.size();
    s.input_types = inputs_seen_.size();
    return s;
  }

  NodeId accepted(const Filter& f) { return accepted_filter(f, eng_, &acc_memo_); }

 private:
  // Diagnostics are muted during branch-correlated retyping: the joint pass
  // over the unrefined environment has already reported the program's faults,
  // and the refined slices would re-raise them against narrowed types (or
  // raise slice-local ones, e.g. a field absent in one union member but
  // present in another).
  void report(std::string code, Span span, std::string message) {
    if (mute_ == 0) diags_.report(std::move(code), span, std::move(message));
  }

  struct MuteGuard {
    explicit MuteGuard(Inferencer& inf) : inf_(inf) { ++inf_.mute_; }
    ~MuteGuard() { --inf_.mute_; }
    Inferencer& inf_;
  };

  // -- environments ----------------------------------------------------------

  struct TEnvNode;
  using TEnv = std::shared_ptr<const TEnvNode>;
  struct TEnvNode {
    std::string name;
    NodeId ty;
    TEnv next;
  };

  static TEnv tenv_bind(TEnv e, std::string name, NodeId ty) {
    return std::make_shared<const TEnvNode>(TEnvNode{std::move(name), ty, std::move(e)});
  }
  static const NodeId* tenv_lookup(const TEnv& e, std::string_view name) {
    for (const TEnvNode* n = e.get(); n; n = n->next.get())
      if (n->name == name) return &n->ty;
    return nullptr;
  }

  struct TDynNode;
  using TDyn = std::shared_ptr<const TDynNode>;
  struct TDynNode {
    std::string name;
    const Filter* body;
    TEnv env;
    TDyn next;
  };

  static TDyn tdyn_find(const TDyn& d, std::string_view name) {
    for (TDyn cur = d; cur; cur = cur->next)
      if (cur->name == name) return cur;
    return nullptr;
  }

  // -- recursion memo ----------------------------------------------------------

  struct MemoEntry {
    VarId var;
    std::optional<NodeId> closed;
    std::vector<VarId> closed_free;  // in-flight variables the closed type still mentions
  };

  NodeId type_rec_apply(const TDyn& binder, NodeId t) {
    if (eng_.is_empty(t)) return kNodeEmpty;
    rec_vars_seen_.insert(binder->name);
    inputs_seen_.insert(t);
    std::string key = binder->name + "#" + std::to_string(t);
    if (auto it = memo_.find(key); it != memo_.end()) {
      MemoEntry& e = it->second;
      if (!e.closed) {
        ++stats_.memo_inflight_hits;
        return eng_.var_type(e.var);
      }
      bool valid = true;
      for (VarId v : e.closed_free)
        if (!inflight_.count(v)) { valid = false; break; }
      if (valid) {
        ++stats_.memo_hits;
        return *e.closed;
      }
      ++stats_.memo_purges;
      memo_.erase(it);
    }
    if (stats_.memo_creations >= opt_.memo_budget)
      throw EngineFault("type inference memo budget exceeded");
    ++stats_.memo_creations;
    VarId v = eng_.fresh_var();
    memo_.emplace(key, MemoEntry{v, std::nullopt, {}});
    inflight_.insert(v);
    NodeId r;
    try {
      r = type_filter(*binder->body, t, binder->env, binder);
    } catch (...) {
      inflight_.erase(v);
      memo_.erase(key);
      throw;
    }
    inflight_.erase(v);
    NodeId closed = eng_.tie_var(v, r);
    MemoEntry& e = memo_[key];
    e.closed = closed;
    e.closed_free = eng_.free_vars(closed);
    return closed;
  }

  // -- filters ------------------------------------------------------------------

  NodeId type_filter(const Filter& f, NodeId t, const TEnv& env, const TDyn& dyn) {
    if (eng_.is_empty(t)) return kNodeEmpty;
    switch (f.kind) {
      case Filter::Kind::Expr: return type_expr(*f.e, env, dyn);

      case Filter::Kind::Arrow: {
        NodeId dom = accepted_pattern(*f.p, eng_);
        if (!eng_.subtype(t, dom)) {
          report("E-ACCEPT", f.p->span,
                        "pattern cannot match every input: got " + show(t) + ", pattern accepts " +
                            show(dom));
          return kNodeEmpty;
        }
        NodeId out = kNodeEmpty;
        for (const PatCase& c : pattern_cases(*f.p, t, eng_)) {
          TEnv e2 = env;
          for (const auto& [name, ty] : c.env) e2 = tenv_bind(e2, name, ty);
          out = eng_.unite(out, type_filter(*f.body, c.slice, e2, dyn));
        }
        return out;
      }

      case Filter::Kind::Product: {
        if (!eng_.subtype(t, eng_.any_pair())) {
          report("E-ACCEPT", f.span,
                        "pair filter applied to input that is not always a pair: " + show(t));
          return kNodeEmpty;
        }
        NodeId out = kNodeEmpty;
        for (auto& [l, r] : eng_.product_decomposition(t)) {
          NodeId rl = type_filter(*f.a, l, env, dyn);
          NodeId rr = type_filter(*f.b, r, env, dyn);
          out = eng_.unite(out, eng_.product(rl, rr));
        }
        return out;
      }

      case Filter::Kind::Record: {
        if (!eng_.subtype(t, eng_.any_record())) {
          report("E-ACCEPT", f.span,
                        "record filter applied to input that is not always a record: " + show(t));
          return kNodeEmpty;
        }
        for (const auto& fld : f.ffields) {
          if (!eng_.subtype(t, eng_.record({{fld.label, kNodeAny, false}}, true))) {
            report("E-FIELD", f.span,
                          "input records may lack field '" + fld.label + "': " + show(t));
            return kNodeEmpty;
          }
        }
        NodeId out = kNodeEmpty;
        for (const auto& sh : eng_.record_decomposition(t)) {
          std::vector<RecordField> fs;
          bool listed_empty = false;
          for (const auto& fld : f.ffields) {
            NodeId fty = sh.open ? kNodeAny : kNodeEmpty;
            for (const auto& sf : sh.fields)
              if (sf.label == fld.label) { fty = sf.ty; break; }
            NodeId u = type_filter(*fld.f, fty, env, dyn);
            if (eng_.is_empty(fty)) listed_empty = true;
            fs.push_back({fld.label, u, false});
          }
          if (listed_empty) continue;  // closed shape without the field: dead here
          for (const auto& sf : sh.fields) {
            bool listed = false;
            for (const auto& fld : f.ffields)
              if (fld.label == sf.label) { listed = true; break; }
            if (!listed) fs.push_back(sf);
          }
          out = eng_.unite(out, eng_.record(std::move(fs), sh.open));
        }
        return out;
      }

      case Filter::Kind::Union: {
        auto& used = union_usage_[&f];
        NodeId dom = accepted(*f.a);
        NodeId t1 = eng_.intersect(t, dom);
        NodeId t2 = eng_.subtract(t, dom);
        NodeId out = kNodeEmpty;
        if (!eng_.is_empty(t1)) {
          used.first = true;
          out = eng_.unite(out, type_filter(*f.a, t1, env, dyn));
        }
        if (!eng_.is_empty(t2)) {
          used.second = true;
          out = eng_.unite(out, type_filter(*f.b, t2, env, dyn));
        }
        return out;
      }

      case Filter::Kind::Comp: {
        // Branch-correlated retyping: when the left side is `g(x)` or
        // `(g(x), e)` for a variable x, the whole composition is typed once
        // per first-match branch of g over the type of x.
        if (const Expr* app = refinement_site(f)) {
          const NodeId* xt = tenv_lookup(env, app->arg->var);
          if (xt && !eng_.has_free_vars(*xt) && eng_.subtype(*xt, accepted(*app->fn))) {
            std::vector<NodeId> slices;
            union_slices(*app->fn, *xt, slices);
            if (slices.size() >= 2 && slices.size() <= 64) {
              // Joint pass for diagnostics, refined passes for the type.
              NodeId joint_mid = type_filter(*f.a, t, env, dyn);
              if (!eng_.has_free_vars(joint_mid)) type_filter(*f.b, joint_mid, env, dyn);
              MuteGuard mg(*this);
              NodeId out = kNodeEmpty;
              for (NodeId u : slices) {
                TEnv e2 = tenv_bind(env, app->arg->var, u);
                NodeId mid = type_filter(*f.a, t, e2, dyn);
                out = eng_.unite(out, type_filter(*f.b, mid, e2, dyn));
              }
              return out;
            }
          }
        }
        NodeId mid = type_filter(*f.a, t, env, dyn);
        if (eng_.has_free_vars(mid))
          throw EngineFault(
              "intermediate type of a composition depends on an unfinished recursion; "
              "finish the recursive call before composing");
        return type_filter(*f.b, mid, env, dyn);
      }

      case Filter::Kind::Rec: {
        auto node = std::make_shared<const TDynNode>(
            TDynNode{f.rec_var, f.body.get(), env, dyn});
        return type_rec_apply(node, t);
      }

      case Filter::Kind::Call: {
        TDyn node = tdyn_find(dyn, f.rec_var);
        if (!node) throw std::logic_error("unbound recursion variable: " + f.rec_var);
        if (!is_call_arg_shape(*f.arg))
          throw std::logic_error("recursive call argument must be built from variables, "
                                 "constants, pairs and records");
        NodeId targ = type_expr(*f.arg, env, dyn);
        if (eng_.has_free_vars(targ))
          throw EngineFault("recursive call argument depends on an unfinished recursion");
        return type_rec_apply(node, targ);
      }

      case Filter::Kind::GroupBy: {
        NodeId seq = eng_.list_star(kNodeAny);
        if (!eng_.subtype(t, seq)) {
          report("E-ACCEPT", f.span,
                        "grouping input must always be a sequence: " + show(t));
          return kNodeEmpty;
        }
        std::vector<NodeId> items = eng_.item_set(t);
        NodeId item_u = eng_.unite(items);
        if (eng_.is_empty(item_u)) return eng_.nil_type();
        if (opt_.precise_groupby) {
          if (auto r = precise_groupby(f, item_u, env, dyn)) return *r;
        }
        NodeId keys = kNodeEmpty;
        for (NodeId ti : items) keys = eng_.unite(keys, type_filter(*f.body, ti, env, dyn));
        return eng_.list_star(eng_.product(keys, eng_.list_plus(item_u)));
      }

      case Filter::Kind::OrderBy: {
        NodeId seq = eng_.list_star(kNodeAny);
        if (!eng_.subtype(t, seq)) {
          report("E-ACCEPT", f.span,
                        "ordering input must always be a sequence: " + show(t));
          return kNodeEmpty;
        }
        std::vector<NodeId> items = eng_.item_set(t);
        for (NodeId ti : items) type_filter(*f.body, ti, env, dyn);  // key diagnostics
        return eng_.list_star(eng_.unite(items));
      }
    }
    return kNodeEmpty;
  }

  // Groups come out exact when distinct branches of the key filter yield
  // disjoint non-recursive key types: every group is then pure.
  std::optional<NodeId> precise_groupby(const Filter& f, NodeId item_u, const TEnv& env,
                                        const TDyn& dyn) {
    if (!eng_.subtype(item_u, accepted(*f.body))) return std::nullopt;
    std::vector<NodeId> slices;
    union_slices(*f.body, item_u, slices);
    if (slices.size() < 2 || slices.size() > 64) return std::nullopt;
    std::vector<NodeId> keys;
    for (NodeId u : slices) {
      NodeId k = type_filter(*f.body, u, env, dyn);
      if (eng_.is_empty(k) || eng_.has_free_vars(k) || !eng_.is_finite(k)) return std::nullopt;
      keys.push_back(k);
    }
    for (size_t i = 0; i < keys.size(); ++i)
      for (size_t j = i + 1; j < keys.size(); ++j)
        if (!eng_.is_empty(eng_.intersect(keys[i], keys[j]))) return std::nullopt;
    NodeId out = kNodeEmpty;
    for (size_t i = 0; i < keys.size(); ++i)
      out = eng_.unite(out, eng_.product(keys[i], eng_.list_plus(slices[i])));
    return eng_.list_star(out);
  }

  // First-match slices of t through the union structure of g, each leaf slice
  // further split into the union members of its type; empty ones dropped.
  void union_slices(const Filter& g, NodeId t, std::vector<NodeId>& out) {
    if (eng_.is_empty(t)) return;
    if (g.kind == Filter::Kind::Union) {
      NodeId dom = accepted(*g.a);
      union_slices(*g.a, eng_.intersect(t, dom), out);
      union_slices(*g.b, eng_.subtract(t, dom), out);
      return;
    }
    for (NodeId a : eng_.union_atoms(t)) out.push_back(a);
  }

  static const Expr* refinement_site(const Filter& comp) {
    if (comp.a->kind != Filter::Kind::Expr) return nullptr;
    const Expr* e = comp.a->e.get();
    const Expr* app = nullptr;
    if (e->kind == Expr::Kind::Apply)
      app = e;
    else if (e->kind == Expr::Kind::Pair && e->a->kind == Expr::Kind::Apply)
      app = e->a.get();
    if (!app || app->arg->kind != Expr::Kind::Var) return nullptr;
    return app;
  }

  // -- expressions -----------------------------------------------------------------

  NodeId type_expr(const Expr& e, const TEnv& env, const TDyn& dyn) {
    switch (e.kind) {
      case Expr::Kind::Const: return eng_.singleton(e.constant);

      case Expr::Kind::Var: {
        const NodeId* t = tenv_lookup(env, e.var);
        if (!t) throw std::logic_error("unbound variable: " + e.var);
        return *t;
      }

      case Expr::Kind::Pair: {
        NodeId a = type_expr(*e.a, env, dyn);
        NodeId b = type_expr(*e.b, env, dyn);
        if (eng_.is_empty(a) || eng_.is_empty(b)) return kNodeEmpty;
        return eng_.product(a, b);
      }

      case Expr::Kind::Record: {
        NodeId acc = eng_.record({}, false);
        bool poisoned = false;
        for (const auto& fld : e.rfields) {
          NodeId vt = type_expr(*fld.value, env, dyn);
          if (eng_.is_empty(vt)) poisoned = true;
          NodeId fr = kNodeEmpty;
          if (!fld.label_expr) {
            fr = eng_.record({{fld.label, vt, false}}, false);
          } else {
            NodeId lt = type_expr(*fld.label_expr, env, dyn);
            if (eng_.is_empty(lt)) {
              poisoned = true;
            } else if (!eng_.subtype(lt, eng_.basic(ScalarKind::String))) {
              report("E-LABEL", fld.label_expr->span,
                            "computed field label must be a string, found " + show(lt));
              fr = eng_.any_record();
            } else if (eng_.is_finite(lt)) {
              fr = kNodeEmpty;
              for (const Value& v : eng_.enumerate_values(lt))
                fr = eng_.unite(fr, eng_.record({{v.string_value(), vt, false}}, false));
            } else {
              fr = eng_.any_record();  // unknown label may override any field
            }
          }
          acc = eng_.record_concat(acc, fr);
        }
        return poisoned ? kNodeEmpty : acc;
      }

      case Expr::Kind::Delete: {
        NodeId t = type_expr(*e.a, env, dyn);
        if (eng_.is_empty(t)) return kNodeEmpty;
        if (!eng_.subtype(t, eng_.any_record())) {
          report("E-OP", e.span, "field removal applied to non-record: " + show(t));
          return kNodeEmpty;
        }
        return eng_.record_delete(t, e.label);
      }

      case Expr::Kind::Builtin: {
        // All arguments are typed even when an earlier one failed, so every
        // independent fault in the expression tree surfaces.
        std::vector<NodeId> ts;
        ts.reserve(e.args.size());
        for (const auto& a : e.args) ts.push_back(type_expr(*a, env, dyn));
        return type_builtin(e, ts);
      }

      case Expr::Kind::Apply: {
        NodeId targ = type_expr(*e.arg, env, dyn);
        if (eng_.is_empty(targ)) return kNodeEmpty;
        NodeId acc = accepted(*e.fn);
        if (!eng_.subtype(targ, acc)) {
          if (e.from_field_access)
            report("E-FIELD", e.span,
                          "field '" + e.label + "' cannot be selected from " + show(targ));
          else
            report("E-ACCEPT", e.span,
                          "filter cannot accept " + show(targ) + "; its domain is " + show(acc));
          return kNodeEmpty;
        }
        if (e.from_field_access) {
          NodeId recs = eng_.intersect(targ, eng_.any_record());
          if (!eng_.is_empty(recs) &&
              eng_.is_empty(eng_.intersect(
                  recs, eng_.record({{e.label, kNodeAny, false}}, true)))) {
            report("E-FIELD", e.span,
                          "no record in " + show(targ) + " has field '" + e.label + "'");
            return kNodeEmpty;
          }
        }
        NodeId r = type_filter(*e.fn, targ, env, dyn);
        if (e.pipeline_stage >= 0) stage_types_.push_back({e.pipeline_stage, r});
        return r;
      }
    }
    return kNodeEmpty;
  }

  NodeId type_builtin(const Expr& e, const std::vector<NodeId>& ts) {
    const std::string& op = e.op;
    NodeId int_t = eng_.basic(ScalarKind::Int);
    // An empty argument type marks a subexpression whose fault was already
    // reported; the operator stays silent about it but still checks its other
    // arguments, so independent faults are not masked.
    bool poisoned = false;
    for (NodeId t : ts)
      if (eng_.is_empty(t)) poisoned = true;
    auto all_le = [&](NodeId bound) {
      for (NodeId t : ts)
        if (!eng_.subtype(t, bound)) return false;
      return true;
    };
    auto op_error = [&]() {
      std::string shown;
      for (NodeId t : ts) {
        if (eng_.is_empty(t)) continue;
        shown += (shown.empty() ? "" : ", ") + show(t);
      }
      report("E-OP", e.span, "operator '" + op + "' cannot be applied to " + shown);
      return kNodeEmpty;
    };
    // Checks the surviving arguments against the operator's domain, then
    // absorbs the poisoned call.
    auto absorb = [&](NodeId dom) {
      for (NodeId t : ts)
        if (!eng_.is_empty(t) && !eng_.subtype(t, dom)) return op_error();
      return kNodeEmpty;
    };
    auto single_of = [&](NodeId t) -> std::optional<Value> {
      if (eng_.has_free_vars(t) || !eng_.is_finite(t)) return std::nullopt;
      auto vs = eng_.enumerate_values(t);
      if (vs.size() != 1) return std::nullopt;
      return vs[0];
    };

    if (op == "+") {
      if (poisoned) return absorb(eng_.unite(int_t, eng_.any_record()));
      if (all_le(eng_.any_record())) return eng_.record_concat(ts[0], ts[1]);
      if (all_le(int_t)) return int_t;
      return op_error();
    }
    if (op == "-" || op == "*" || op == "/" || op == "neg") {
      if (poisoned) return absorb(int_t);
      if (all_le(int_t)) return int_t;
      return op_error();
    }
    if (op == "<" || op == "<=" || op == ">" || op == ">=") {
      // Comparisons are three-valued: a null operand yields null rather than
      // an error, so filters over optional fields can drop the null case.
      NodeId null_t = eng_.singleton(Value::null());
      if (poisoned) {
        NodeId scalars = null_t;
        for (ScalarKind k :
             {ScalarKind::Int, ScalarKind::Float, ScalarKind::String, ScalarKind::Char})
          scalars = eng_.unite(scalars, eng_.basic(k));
        return absorb(scalars);
      }
      if ((eng_.subtype(ts[0], null_t) && !eng_.is_empty(ts[0])) ||
          (eng_.subtype(ts[1], null_t) && !eng_.is_empty(ts[1])))
        return null_t;
      NodeId nn0 = eng_.intersect(ts[0], eng_.negate(null_t));
      NodeId nn1 = eng_.intersect(ts[1], eng_.negate(null_t));
      bool nullable = !eng_.is_empty(eng_.intersect(ts[0], null_t)) ||
                      !eng_.is_empty(eng_.intersect(ts[1], null_t));
      for (ScalarKind k :
           {ScalarKind::Int, ScalarKind::Float, ScalarKind::String, ScalarKind::Char}) {
        NodeId kt = eng_.basic(k);
        if (eng_.subtype(nn0, kt) && eng_.subtype(nn1, kt))
          return nullable ? eng_.unite(eng_.bool_type(), null_t) : eng_.bool_type();
      }
      return op_error();
    }
    if (op == "==" || op == "!=") {
      if (poisoned) return kNodeEmpty;
      bool eq_true, known = false;
      if (eng_.is_empty(eng_.intersect(ts[0], ts[1]))) {
        eq_true = false;
        known = true;
      } else if (auto v1 = single_of(ts[0])) {
        if (auto v2 = single_of(ts[1])) {
          eq_true = value_eq(*v1, *v2);
          known = true;
        }
      }
      if (!known) return eng_.bool_type();
      if (op == "!=") eq_true = !eq_true;
      return eng_.singleton(Value::boolean(eq_true));
    }
    if (op == "@") {
      if (poisoned) return absorb(eng_.basic(ScalarKind::String));
      if (all_le(eng_.basic(ScalarKind::String))) return eng_.basic(ScalarKind::String);
      return op_error();
    }
    if (op == "and" || op == "or") {
      if (poisoned) return absorb(eng_.bool_type());
      if (!all_le(eng_.bool_type())) return op_error();
      auto v1 = single_of(ts[0]), v2 = single_of(ts[1]);
      if (v1 && v2) {
        bool a = v1->is_atom("true"), b = v2->is_atom("true");
        return eng_.singleton(Value::boolean(op == "and" ? (a && b) : (a || b)));
      }
      return eng_.bool_type();
    }
    if (op == "not") {
      if (poisoned) return absorb(eng_.bool_type());
      if (!all_le(eng_.bool_type())) return op_error();
      if (auto v = single_of(ts[0])) return eng_.singleton(Value::boolean(!v->is_atom("true")));
      return eng_.bool_type();
    }
    if (op == "to_string") {
      if (poisoned) return kNodeEmpty;
      return eng_.basic(ScalarKind::String);
    }
    if (op == "count") {
      if (poisoned) return absorb(eng_.list_star(kNodeAny));
      if (eng_.subtype(ts[0], eng_.list_star(kNodeAny))) return int_t;
      return op_error();
    }
    throw std::logic_error("unknown builtin: " + op);
  }

  std::string show(NodeId t) {
    std::string s = print_type(eng_, t);
    if (s.size() > 160) {
      s.resize(157);
      s += "...";
    }
    return s;
  }

  TypeEngine& eng_;
  DiagnosticSink& diags_;
  int mute_ = 0;
  Options opt_;
  std::unordered_map<std::string, MemoEntry> memo_;
  std::set<VarId> inflight_;
  std::set<std::string> rec_vars_seen_;
  std::set<NodeId> inputs_seen_;
  std::map<const Filter*, std::pair<bool, bool>> union_usage_;
  std::unordered_map<uint64_t, NodeId> acc_memo_;
  std::vector<std::pair<int, NodeId>> stage_types_;
  InferStats stats_;
};

}  // namespace fcalc
