#pragma once

// Big-step evaluator. Filters transform one input value into one output
// value; failure to match is an ordinary outcome (std::nullopt) that union
// filters backtrack over, while resource exhaustion is an EvalFault and
// aborts the whole evaluation.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fcalc/ast.hpp"
#include "fcalc/pattern.hpp"
#include "fcalc/types.hpp"
#include "fcalc/value.hpp"

namespace fcalc {

struct EvalFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalLimits {
  uint64_t step_budget = 10'000'000;
  uint32_t depth_bound = 2'000;
};

// Persistent value environment.
struct EnvNode;
using Env = std::shared_ptr<const EnvNode>;
struct EnvNode {
  std::string name;
  Value v;
  Env next;
};

inline Env env_bind(Env e, std::string name, Value v) {
  return std::make_shared<const EnvNode>(EnvNode{std::move(name), std::move(v), std::move(e)});
}

inline const Value* env_lookup(const Env& e, std::string_view name) {
  for (const EnvNode* n = e.get(); n; n = n->next.get())
    if (n->name == name) return &n->v;
  return nullptr;
}

// Persistent recursion environment. A call re-enters the binder's own node,
// so the chain visible from inside the body is exactly the chain at binding
// time plus the binder itself.
struct DynNode;
using Dyn = std::shared_ptr<const DynNode>;
struct DynNode {
  std::string name;
  FilterPtr body;
  Env env;
  Dyn next;
};

inline Dyn dyn_bind(Dyn d, std::string name, FilterPtr body, Env env) {
  return std::make_shared<const DynNode>(
      DynNode{std::move(name), std::move(body), std::move(env), std::move(d)});
}

inline const DynNode* dyn_lookup(const Dyn& d, std::string_view name) {
  for (const DynNode* n = d.get(); n; n = n->next.get())
    if (n->name == name) return n;
  return nullptr;
}

inline Dyn dyn_at(const Dyn& d, const DynNode* node) {
  for (Dyn cur = d; cur; cur = cur->next)
    if (cur.get() == node) return cur;
  return nullptr;
}

class Evaluator {
 public:
  explicit Evaluator(TypeEngine& eng, EvalLimits limits = {}) : eng_(eng), limits_(limits) {}

  std::optional<Value> run(const Filter& f, const Value& input) {
    steps_ = 0;
    depth_ = 0;
    return apply_filter(f, input, nullptr, nullptr);
  }

  uint64_t steps() const { return steps_; }

  std::optional<Value> apply_filter(const Filter& f, const Value& input, const Env& env,
                                    const Dyn& dyn) {
    Ticket guard(*this);
    switch (f.kind) {
      case Filter::Kind::Expr: return eval_expr(*f.e, env, dyn);
      case Filter::Kind::Arrow: {
        auto m = match_value(*f.p, input, eng_);
        if (!m) return std::nullopt;
        Env e2 = env;
        for (auto& [name, v] : *m) e2 = env_bind(e2, name, std::move(v));
        return apply_filter(*f.body, input, e2, dyn);
      }
      case Filter::Kind::Product: {
        if (!input.is_pair()) return std::nullopt;
        auto r1 = apply_filter(*f.a, input.first(), env, dyn);
        if (!r1) return std::nullopt;
        auto r2 = apply_filter(*f.b, input.second(), env, dyn);
        if (!r2) return std::nullopt;
        return Value::pair(std::move(*r1), std::move(*r2));
      }
      case Filter::Kind::Record: {
        if (!input.is_record()) return std::nullopt;
        RecordFields out;
        for (const auto& [label, v] : input.fields()) {
          const Filter* sub = nullptr;
          for (const auto& fld : f.ffields)
            if (fld.label == label) { sub = fld.f.get(); break; }
          if (!sub) {
            out.emplace_back(label, v);
            continue;
          }
          auto r = apply_filter(*sub, v, env, dyn);
          if (!r) return std::nullopt;
          out.emplace_back(label, std::move(*r));
        }
        // Every listed field must actually be present.
        for (const auto& fld : f.ffields)
          if (!input.field(fld.label)) return std::nullopt;
        return Value::record(std::move(out));
      }
      case Filter::Kind::Union: {
        if (auto r = apply_filter(*f.a, input, env, dyn)) return r;
        return apply_filter(*f.b, input, env, dyn);
      }
      case Filter::Kind::Comp: {
        auto r1 = apply_filter(*f.a, input, env, dyn);
        if (!r1) return std::nullopt;
        return apply_filter(*f.b, *r1, env, dyn);
      }
      case Filter::Kind::Rec:
        return apply_filter(*f.body, input, env, dyn_bind(dyn, f.rec_var, f.body, env));
      case Filter::Kind::Call: {
        auto arg = eval_expr(*f.arg, env, dyn);
        if (!arg) return std::nullopt;
        const DynNode* node = dyn_lookup(dyn, f.rec_var);
        if (!node) throw std::logic_error("unbound recursion variable: " + f.rec_var);
        Dyn scope = dyn_at(dyn, node);
        return apply_filter(*node->body, *arg, node->env, scope);
      }
      case Filter::Kind::GroupBy: {
        auto items = input.as_list();
        if (!items) return std::nullopt;
        std::vector<std::pair<Value, std::vector<Value>>> groups;
        for (const Value& item : *items) {
          auto k = apply_filter(*f.body, item, env, dyn);
          if (!k) return std::nullopt;
          auto it = std::find_if(groups.begin(), groups.end(),
                                 [&](const auto& g) { return value_eq(g.first, *k); });
          if (it == groups.end())
            groups.push_back({std::move(*k), {item}});
          else
            it->second.push_back(item);
        }
        std::sort(groups.begin(), groups.end(),
                  [](const auto& a, const auto& b) { return value_order(a.first, b.first) < 0; });
        std::vector<Value> out;
        out.reserve(groups.size());
        for (auto& [k, members] : groups)
          out.push_back(Value::pair(std::move(k), Value::list(std::move(members))));
        return Value::list(std::move(out));
      }
      case Filter::Kind::OrderBy: {
        auto items = input.as_list();
        if (!items) return std::nullopt;
        std::vector<std::pair<Value, size_t>> keyed;
        keyed.reserve(items->size());
        for (size_t i = 0; i < items->size(); ++i) {
          auto k = apply_filter(*f.body, (*items)[i], env, dyn);
          if (!k) return std::nullopt;
          keyed.push_back({std::move(*k), i});
        }
        std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
          return value_order(a.first, b.first) < 0;
        });
        std::vector<Value> out;
        out.reserve(keyed.size());
        for (auto& [k, i] : keyed) out.push_back((*items)[i]);
        return Value::list(std::move(out));
      }
    }
    return std::nullopt;
  }

  std::optional<Value> eval_expr(const Expr& e, const Env& env, const Dyn& dyn) {
    Ticket guard(*this);
    switch (e.kind) {
      case Expr::Kind::Const: return e.constant;
      case Expr::Kind::Var: {
        const Value* v = env_lookup(env, e.var);
        if (!v) throw std::logic_error("unbound variable: " + e.var);
        return *v;
      }
      case Expr::Kind::Pair: {
        auto a = eval_expr(*e.a, env, dyn);
        if (!a) return std::nullopt;
        auto b = eval_expr(*e.b, env, dyn);
        if (!b) return std::nullopt;
        return Value::pair(std::move(*a), std::move(*b));
      }
      case Expr::Kind::Record: {
        RecordFields out;
        for (const auto& f : e.rfields) {
          std::string label = f.label;
          if (f.label_expr) {
            auto lv = eval_expr(*f.label_expr, env, dyn);
            if (!lv) return std::nullopt;
            if (!lv->is_string()) return std::nullopt;
            label = lv->string_value();
          }
          auto v = eval_expr(*f.value, env, dyn);
          if (!v) return std::nullopt;
          out.emplace_back(std::move(label), std::move(*v));
        }
        return Value::record(std::move(out));
      }
      case Expr::Kind::Delete: {
        auto v = eval_expr(*e.a, env, dyn);
        if (!v) return std::nullopt;
        if (!v->is_record()) return std::nullopt;
        RecordFields out;
        for (const auto& [label, fv] : v->fields())
          if (label != e.label) out.emplace_back(label, fv);
        return Value::record(std::move(out));
      }
      case Expr::Kind::Builtin: {
        std::vector<Value> args;
        args.reserve(e.args.size());
        for (const auto& a : e.args) {
          auto v = eval_expr(*a, env, dyn);
          if (!v) return std::nullopt;
          args.push_back(std::move(*v));
        }
        return eval_builtin(e.op, args);
      }
      case Expr::Kind::Apply: {
        auto v = eval_expr(*e.arg, env, dyn);
        if (!v) return std::nullopt;
        return apply_filter(*e.fn, *v, env, dyn);
      }
    }
    return std::nullopt;
  }

  static std::optional<Value> eval_builtin(const std::string& op, const std::vector<Value>& args) {
    auto wrap_add = [](int64_t a, int64_t b) {
      return static_cast<int64_t>(static_cast<uint64_t>(a) + static_cast<uint64_t>(b));
    };
    if (op == "+") {
      if (args[0].is_int() && args[1].is_int())
        return Value::integer(wrap_add(args[0].int_value(), args[1].int_value()));
      if (args[0].is_record() && args[1].is_record()) {
        RecordFields out(args[0].fields());
        for (const auto& [label, v] : args[1].fields()) {
          auto it = std::find_if(out.begin(), out.end(),
                                 [&](const auto& f) { return f.first == label; });
          if (it == out.end())
            out.emplace_back(label, v);
          else
            it->second = v;
        }
        return Value::record(std::move(out));
      }
      return std::nullopt;
    }
    if (op == "-" || op == "*" || op == "/") {
      if (!args[0].is_int() || !args[1].is_int()) return std::nullopt;
      int64_t a = args[0].int_value(), b = args[1].int_value();
      if (op == "-") return Value::integer(wrap_add(a, -b));
      if (op == "*")
        return Value::integer(
            static_cast<int64_t>(static_cast<uint64_t>(a) * static_cast<uint64_t>(b)));
      if (b == 0) return std::nullopt;
      if (a == std::numeric_limits<int64_t>::min() && b == -1) return Value::integer(a);
      return Value::integer(a / b);
    }
    if (op == "neg") {
      if (!args[0].is_int()) return std::nullopt;
      return Value::integer(static_cast<int64_t>(-static_cast<uint64_t>(args[0].int_value())));
    }
    if (op == "<" || op == "<=" || op == ">" || op == ">=") {
      // Three-valued: null operands yield null; otherwise both sides must be
      // scalars of the same kind.
      if (args[0].is_atom("null") || args[1].is_atom("null")) return Value::null();
      bool same_kind = (args[0].is_int() && args[1].is_int()) ||
                       (args[0].is_float() && args[1].is_float()) ||
                       (args[0].is_string() && args[1].is_string()) ||
                       (args[0].is_char() && args[1].is_char());
      if (!same_kind) return std::nullopt;
      int c = value_order(args[0], args[1]);
      bool r = op == "<" ? c < 0 : op == "<=" ? c <= 0 : op == ">" ? c > 0 : c >= 0;
      return Value::boolean(r);
    }
    if (op == "==") return Value::boolean(value_eq(args[0], args[1]));
    if (op == "!=") return Value::boolean(!value_eq(args[0], args[1]));
    if (op == "@") {
      if (!args[0].is_string() || !args[1].is_string()) return std::nullopt;
      return Value::string(args[0].string_value() + args[1].string_value());
    }
    if (op == "and" || op == "or") {
      auto truth = [](const Value& v) -> std::optional<bool> {
        if (!v.is_atom()) return std::nullopt;
        if (v.atom_name() == "true") return true;
        if (v.atom_name() == "false") return false;
        return std::nullopt;
      };
      auto a = truth(args[0]), b = truth(args[1]);
      if (!a || !b) return std::nullopt;
      return Value::boolean(op == "and" ? (*a && *b) : (*a || *b));
    }
    if (op == "not") {
      if (!args[0].is_atom()) return std::nullopt;
      if (args[0].atom_name() == "true") return Value::boolean(false);
      if (args[0].atom_name() == "false") return Value::boolean(true);
      return std::nullopt;
    }
    if (op == "to_string") return Value::string(to_text(args[0]));
    if (op == "count") {
      auto items = args[0].as_list();
      if (!items) return std::nullopt;
      return Value::integer(static_cast<int64_t>(items->size()));
    }
    throw std::logic_error("unknown builtin: " + op);
  }

 private:
  // Charges one step and one recursion level for the enclosing call.
  struct Ticket {
    explicit Ticket(Evaluator& ev) : ev_(ev) {
      if (++ev_.steps_ > ev_.limits_.step_budget) throw EvalFault("step budget exhausted");
      if (++ev_.depth_ > ev_.limits_.depth_bound) throw EvalFault("recursion depth exceeded");
    }
    ~Ticket() { --ev_.depth_; }
    Evaluator& ev_;
  };

  TypeEngine& eng_;
  EvalLimits limits_;
  uint64_t steps_ = 0;
  uint32_t depth_ = 0;
};

}  // namespace fcalc
