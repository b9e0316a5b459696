#pragma once

// Renders filters, patterns and expressions back to readable surface syntax.
// The output round-trips through the parser for everything the surface
// language can express; desugared forms (field access, if/then/else) print
// as the core they compiled to.

#include <string>

#include "fcalc/ast.hpp"
#include "fcalc/printer.hpp"
#include "fcalc/types.hpp"
#include "fcalc/value.hpp"

namespace fcalc {

class CoreText {
 public:
  explicit CoreText(TypeEngine& eng) : types_(eng) {}

  std::string filter(const Filter& f) { return flt_text(f, 0); }
  std::string pattern(const Pattern& p) { return pat_text(p, 0); }
  std::string expr(const Expr& e) { return ex_text(e, 0); }

 private:
  // parse-time alpha-renaming appends '@n'; display the surface name
  static std::string display_rec(const std::string& name) {
    auto cut = name.find('@');
    return cut == std::string::npos ? name : name.substr(0, cut);
  }

  // precedence: 0 union, 1 arrow body, 2 composition, 3 atom
  std::string flt_text(const Filter& f, int need) {
    auto wrap = [&](int prec, std::string s) {
      return prec < need ? "(" + std::move(s) + ")" : std::move(s);
    };
    switch (f.kind) {
      case Filter::Kind::Expr: return ex_text(*f.e, need >= 3 ? 1 : 0);
      case Filter::Kind::Arrow:
        return wrap(1, pat_text(*f.p, 1) + " => " + flt_text(*f.body, 1));
      case Filter::Kind::Product:
        return "(" + flt_text(*f.a, 0) + ", " + flt_text(*f.b, 0) + ")";
      case Filter::Kind::Record: {
        std::string s = "{";
        bool first = true;
        for (const auto& fd : f.ffields) {
          if (!first) s += ", ";
          first = false;
          s += fd.label + ": " + flt_text(*fd.f, 0);
        }
        return s + "}";
      }
      case Filter::Kind::Union:
        return wrap(1, flt_text(*f.a, 1) + " | " + flt_text(*f.b, 0));
      case Filter::Kind::Comp:
        return wrap(2, flt_text(*f.a, 3) + " ; " + flt_text(*f.b, 2));
      case Filter::Kind::Rec:
        return wrap(1, "rec " + display_rec(f.rec_var) + ". " + flt_text(*f.body, 0));
      case Filter::Kind::Call:
        return display_rec(f.rec_var) + "(" + ex_text(*f.arg, 0) + ")";
      case Filter::Kind::GroupBy: return "groupby " + flt_text(*f.body, 3);
      case Filter::Kind::OrderBy: return "orderby " + flt_text(*f.body, 3);
    }
    return "?";
  }

  // precedence: 0 or, 1 and, 2 atom
  std::string pat_text(const Pattern& p, int need) {
    auto wrap = [&](int prec, std::string s) {
      return prec < need ? "(" + std::move(s) + ")" : std::move(s);
    };
    switch (p.kind) {
      case Pattern::Kind::Type: {
        if (p.ty == kNodeAny) return "_";
        return types_.print(p.ty);
      }
      case Pattern::Kind::Var: return p.var;
      case Pattern::Kind::Bind: return wrap(1, p.var + " := " + to_text(p.constant));
      case Pattern::Kind::Pair:
        return "(" + pat_text(*p.a, 0) + ", " + pat_text(*p.b, 0) + ")";
      case Pattern::Kind::Record: {
        std::string s = "{";
        bool first = true;
        for (const auto& fd : p.fields) {
          if (!first) s += ", ";
          first = false;
          s += fd.label + ": " + pat_text(*fd.p, 0);
        }
        if (p.open) s += first ? ".." : ", ..";
        return s + "}";
      }
      case Pattern::Kind::And: {
        // print "p as x" when the right side is a bare variable
        if (p.b->kind == Pattern::Kind::Var)
          return wrap(1, pat_text(*p.a, 2) + " as " + p.b->var);
        return wrap(1, pat_text(*p.a, 2) + " & " + pat_text(*p.b, 1));
      }
      case Pattern::Kind::Or:
        return wrap(0, pat_text(*p.a, 1) + " | " + pat_text(*p.b, 0));
    }
    return "?";
  }

  // precedence: 0 compare, 1 additive, 2 multiplicative, 3 postfix/atom
  std::string ex_text(const Expr& e, int need) {
    auto wrap = [&](int prec, std::string s) {
      return prec < need ? "(" + std::move(s) + ")" : std::move(s);
    };
    switch (e.kind) {
      case Expr::Kind::Const: return to_text(e.constant);
      case Expr::Kind::Var: return e.var;
      case Expr::Kind::Pair:
        return "(" + ex_text(*e.a, 0) + ", " + ex_text(*e.b, 0) + ")";
      case Expr::Kind::Record: {
        std::string s = "{";
        bool first = true;
        for (const auto& fd : e.rfields) {
          if (!first) s += ", ";
          first = false;
          if (fd.label_expr)
            s += "(" + ex_text(*fd.label_expr, 0) + ")";
          else
            s += fd.label;
          s += ": " + ex_text(*fd.value, 0);
        }
        return s + "}";
      }
      case Expr::Kind::Delete:
        return wrap(3, ex_text(*e.a, 3) + " \\ " + e.label);
      case Expr::Kind::Builtin: {
        const std::string& op = e.op;
        if (e.args.size() == 2) {
          int prec = (op == "+" || op == "-" || op == "@") ? 1
                     : (op == "*" || op == "/")            ? 2
                     : (op == "and" || op == "or")         ? 1
                                                           : 0;
          return wrap(prec, ex_text(*e.args[0], prec) + " " + op + " " +
                                ex_text(*e.args[1], prec + 1));
        }
        if (e.args.size() == 1 && (op == "neg" || op == "not")) {
          std::string head = op == "neg" ? "-" : "not ";
          return wrap(2, head + ex_text(*e.args[0], 3));
        }
        std::string s = op + "(";
        for (size_t i = 0; i < e.args.size(); ++i) {
          if (i) s += ", ";
          s += ex_text(*e.args[i], 0);
        }
        return s + ")";
      }
      case Expr::Kind::Apply: {
        if (e.from_field_access)
          return wrap(3, ex_text(*e.arg, 3) + "." + e.label);
        return "(" + flt_text(*e.fn, 0) + ")(" + ex_text(*e.arg, 0) + ")";
      }
    }
    return "?";
  }

  TypePrinter types_;
};

inline std::string core_text(TypeEngine& eng, const Filter& f) {
  return CoreText(eng).filter(f);
}

}  // namespace fcalc
