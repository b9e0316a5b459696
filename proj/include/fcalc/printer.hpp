#pragma once

// Human-readable rendering of types. List-shaped recursive nodes are printed
// as [regexp] sequence types via automaton state elimination; other cyclic
// nodes fall back to named equations appended as "where X1 = ...".
// Rendering is display-only: tests and tools compare types by mutual
// subtyping, never by string.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fcalc/types.hpp"
#include "fcalc/value.hpp"

namespace fcalc {

namespace detail {

struct RE {
  enum class K { None, Eps, Sym, Cat, Alt, Star };
  K k = K::None;
  std::string sym;
  std::vector<RE> kids;

  static RE none() { return {}; }
  static RE eps() { return {K::Eps, {}, {}}; }
  static RE symbol(std::string s) { return {K::Sym, std::move(s), {}}; }

  bool is(K kk) const { return k == kk; }
};

inline bool re_equal(const RE& a, const RE& b) {
  if (a.k != b.k || a.sym != b.sym || a.kids.size() != b.kids.size()) return false;
  for (size_t i = 0; i < a.kids.size(); ++i)
    if (!re_equal(a.kids[i], b.kids[i])) return false;
  return true;
}

inline RE re_alt(RE a, RE b) {
  if (a.is(RE::K::None)) return b;
  if (b.is(RE::K::None)) return a;
  if (re_equal(a, b)) return a;
  RE r{RE::K::Alt, {}, {}};
  auto feed = [&](RE x) {
    if (x.is(RE::K::Alt))
      for (auto& kk : x.kids) r.kids.push_back(std::move(kk));
    else
      r.kids.push_back(std::move(x));
  };
  feed(std::move(a));
  feed(std::move(b));
  return r;
}

inline RE re_cat(RE a, RE b) {
  if (a.is(RE::K::None) || b.is(RE::K::None)) return RE::none();
  if (a.is(RE::K::Eps)) return b;
  if (b.is(RE::K::Eps)) return a;
  RE r{RE::K::Cat, {}, {}};
  auto feed = [&](RE x) {
    if (x.is(RE::K::Cat))
      for (auto& kk : x.kids) r.kids.push_back(std::move(kk));
    else
      r.kids.push_back(std::move(x));
  };
  feed(std::move(a));
  feed(std::move(b));
  return r;
}

inline RE re_star(RE a) {
  if (a.is(RE::K::None) || a.is(RE::K::Eps)) return RE::eps();
  if (a.is(RE::K::Star)) return a;
  RE r{RE::K::Star, {}, {}};
  r.kids.push_back(std::move(a));
  return r;
}

// Rendering precedence: Alt(0) < Cat(1) < unary(2).
inline std::string re_str(const RE& r, int prec = 0);

inline bool atom_like(const std::string& s) {
  // Needs no parentheses when starred: single token or a bracketed form.
  if (s.empty()) return false;
  if (s.front() == '[' || s.front() == '{' || s.front() == '(') return true;
  for (char c : s)
    if (c == ' ' || c == '|' || c == '&') return false;
  return true;
}

inline std::string re_str(const RE& r, int prec) {
  switch (r.k) {
    case RE::K::None: return "empty";
    case RE::K::Eps: return "";
    case RE::K::Sym: {
      if (atom_like(r.sym)) return r.sym;
      return "(" + r.sym + ")";
    }
    case RE::K::Cat: {
      std::string out;
      bool opt_tail = false;
      for (size_t i = 0; i < r.kids.size(); ++i) {
        // x x*  prints as  x+
        if (i + 1 < r.kids.size() && r.kids[i + 1].is(RE::K::Star) &&
            re_equal(r.kids[i + 1].kids[0], r.kids[i])) {
          if (!out.empty()) out += ' ';
          out += re_str(r.kids[i], 2) + "+";
          ++i;
          continue;
        }
        if (!out.empty()) out += ' ';
        out += re_str(r.kids[i], 1);
        (void)opt_tail;
      }
      if (prec > 1) return "(" + out + ")";
      return out;
    }
    case RE::K::Alt: {
      // eps | x  prints as  x?
      const RE* eps = nullptr;
      std::vector<const RE*> rest;
      for (const auto& kk : r.kids)
        if (kk.is(RE::K::Eps))
          eps = &kk;
        else
          rest.push_back(&kk);
      if (eps && rest.size() == 1) return re_str(*rest[0], 2) + "?";
      std::string out;
      for (size_t i = 0; i < r.kids.size(); ++i) {
        if (i) out += "|";
        std::string part = re_str(r.kids[i], 1);
        out += part.empty() ? "()" : part;
      }
      if (prec > 0) return "(" + out + ")";
      return out;
    }
    case RE::K::Star: return re_str(r.kids[0], 2) + "*";
  }
  return "?";
}

}  // namespace detail

class TypePrinter {
 public:
  explicit TypePrinter(TypeEngine& eng) : eng_(eng) {}

  std::string print(NodeId n) {
    names_.clear();
    defs_.clear();
    defs_done_.clear();
    listing_.clear();
    next_name_ = 1;
    assign_names(n);
    std::string body = render(n, /*allow_name=*/false);
    if (defs_.empty()) return body;
    std::string out = body + " where ";
    for (size_t i = 0; i < defs_.size(); ++i) {
      if (i) out += "; ";
      out += defs_[i];
    }
    return out;
  }

 private:
  TypeEngine& eng_;
  std::map<NodeId, std::string> names_;
  std::vector<std::string> defs_;
  std::set<NodeId> defs_done_;
  std::set<NodeId> listing_;
  std::map<NodeId, NodeId> simp_;
  int next_name_ = 1;

  // -- display simplification --------------------------------------------------

  NodeId atom_node(AtomId id) {
    const TypeAtom& a = eng_.atom(id);
    switch (a.kind) {
      case TypeAtom::Kind::Basic: return eng_.basic(a.basic);
      case TypeAtom::Kind::Single: return eng_.singleton(a.single);
      case TypeAtom::Kind::Product: return eng_.product(a.left, a.right);
      case TypeAtom::Kind::Record: return eng_.record(a.fields, a.open);
      case TypeAtom::Kind::Var: return eng_.var_type(a.var);
    }
    return kNodeEmpty;
  }

  // Equivalence-preserving cleanup of one node's top-level clause structure:
  // semantically empty clauses vanish, and a clause holding intersections or
  // negations of pairs/records is re-decomposed into plain rectangles or
  // shapes. Children are left alone; they get the same treatment when the
  // renderer descends into them.
  NodeId simp(NodeId n) {
    if (auto it = simp_.find(n); it != simp_.end()) return it->second;
    if (n == kNodeEmpty || n == kNodeAny || eng_.has_free_vars(n)) {
      simp_.emplace(n, n);
      return n;
    }
    NodeId acc = kNodeEmpty;
    for (const Clause& c : eng_.node(n).clauses) {
      NodeId cid = kNodeAny;
      for (AtomId id : c.pos) cid = eng_.intersect(cid, atom_node(id));
      for (AtomId id : c.neg) cid = eng_.subtract(cid, atom_node(id));
      if (eng_.is_empty(cid)) continue;
      if (c.pos.size() + c.neg.size() > 1) {
        if (eng_.subtype(cid, eng_.any_pair())) {
          NodeId un = kNodeEmpty;
          for (auto& [l, r] : eng_.product_decomposition(cid))
            un = eng_.unite(un, eng_.product(l, r));
          cid = un;
        } else if (eng_.subtype(cid, eng_.any_record())) {
          NodeId un = kNodeEmpty;
          for (const auto& sh : eng_.record_decomposition(cid))
            un = eng_.unite(un, eng_.record(sh.fields, sh.open));
          if (eng_.equiv(un, cid)) cid = un;  // shapes may widen; keep only exact
        }
      }
      acc = eng_.unite(acc, cid);
    }
    if (!eng_.equiv(acc, n)) acc = n;
    simp_.emplace(n, acc);
    return acc;
  }

  // -- cycle detection ------------------------------------------------------

  void assign_names(NodeId root) {
    std::set<NodeId> on_stack, done;
    walk(root, on_stack, done);
  }

  void walk(NodeId raw, std::set<NodeId>& on_stack, std::set<NodeId>& done) {
    NodeId n = simp(raw);
    if (done.count(n)) return;
    if (on_stack.count(n)) {
      if (!names_.count(n)) names_[n] = "X" + std::to_string(next_name_++);
      return;
    }
    on_stack.insert(n);
    for (const Clause& c : eng_.node(n).clauses) {
      auto visit_atoms = [&](const std::vector<AtomId>& ids) {
        for (AtomId id : ids) {
          const TypeAtom& a = eng_.atom(id);
          if (a.kind == TypeAtom::Kind::Product) {
            walk(a.left, on_stack, done);
            walk(a.right, on_stack, done);
          } else if (a.kind == TypeAtom::Kind::Record) {
            for (const auto& f : a.fields) walk(f.ty, on_stack, done);
          }
        }
      };
      visit_atoms(c.pos);
      visit_atoms(c.neg);
    }
    on_stack.erase(n);
    done.insert(n);
  }

  // -- list automaton -------------------------------------------------------

  // A node is a list state when every clause is exactly `nil or exactly one
  // positive product atom.
  bool list_state(NodeId n, std::vector<std::pair<NodeId, NodeId>>& edges, bool& accepting) {
    edges.clear();
    accepting = false;
    const NodeData& nd = eng_.node(n);
    if (nd.clauses.empty()) return false;
    for (const Clause& c : nd.clauses) {
      if (!c.neg.empty() || c.pos.size() != 1) return false;
      const TypeAtom& a = eng_.atom(c.pos[0]);
      if (a.kind == TypeAtom::Kind::Single && a.single.is_atom("nil")) {
        accepting = true;
      } else if (a.kind == TypeAtom::Kind::Product) {
        edges.push_back({a.left, a.right});
      } else {
        return false;
      }
    }
    return true;
  }

  bool try_list(NodeId n, std::string& out) {
    if (listing_.count(n)) return false;  // cycle through an item position
    listing_.insert(n);
    bool ok = try_list_inner(n, out);
    listing_.erase(n);
    return ok;
  }

  bool try_list_inner(NodeId n, std::string& out) {
    // Collect the closure of tail states.
    std::vector<NodeId> states{n};
    std::set<NodeId> seen{n};
    std::map<NodeId, std::vector<std::pair<NodeId, NodeId>>> edges;
    std::map<NodeId, bool> accepting;
    for (size_t i = 0; i < states.size(); ++i) {
      if (states.size() > 32) return false;
      NodeId q = states[i];
      std::vector<std::pair<NodeId, NodeId>> es;
      bool acc;
      if (!list_state(q, es, acc)) return false;
      for (auto& [item, next] : es) {
        next = simp(next);
        if (seen.insert(next).second) states.push_back(next);
      }
      edges[q] = std::move(es);
      accepting[q] = acc;
    }
    // GNFA elimination over states, with a fresh final state (id: max+1).
    using detail::RE;
    std::map<std::pair<NodeId, NodeId>, RE> r;
    NodeId fin = *std::max_element(states.begin(), states.end()) + 1;
    auto get = [&](NodeId p, NodeId q) -> RE {
      auto it = r.find({p, q});
      return it == r.end() ? RE::none() : it->second;
    };
    auto put = [&](NodeId p, NodeId q, RE re) {
      if (re.is(RE::K::None)) return;
      r[{p, q}] = detail::re_alt(get(p, q), std::move(re));
    };
    for (NodeId q : states) {
      for (auto& [item, next] : edges[q]) put(q, next, RE::symbol(render(item, true)));
      if (accepting[q]) put(q, fin, RE::eps());
    }
    std::vector<NodeId> order(states.begin(), states.end());
    for (NodeId q : order) {
      if (q == n) continue;  // initial state is eliminated last
      RE self = detail::re_star(get(q, q));
      for (NodeId p : states) {
        if (p == q) continue;
        RE in = get(p, q);
        if (in.is(RE::K::None)) continue;
        for (NodeId s : states) {
          if (s == q) continue;
          RE out_e = get(q, s);
          if (!out_e.is(RE::K::None))
            put(p, s, detail::re_cat(in, detail::re_cat(self, out_e)));
        }
        RE out_f = get(q, fin);
        if (!out_f.is(RE::K::None))
          put(p, fin, detail::re_cat(in, detail::re_cat(self, out_f)));
        r.erase({p, q});
      }
      // drop remaining edges of q
      for (NodeId s : states) r.erase({q, s});
      r.erase({q, fin});
    }
    RE loop = detail::re_star(get(n, n));
    RE tail = get(n, fin);
    if (tail.is(RE::K::None)) return false;
    RE full = detail::re_cat(std::move(loop), std::move(tail));
    out = "[" + detail::re_str(full) + "]";
    return true;
  }

  // -- structural rendering ---------------------------------------------------

  std::string render(NodeId raw, bool allow_name) {
    (void)allow_name;
    NodeId n = simp(raw);
    if (n == kNodeEmpty) return "empty";
    if (n == kNodeAny) return "any";
    if (n == eng_.bool_type()) return "bool";
    std::string s;
    if (auto it = names_.find(n); it != names_.end()) {
      // Cyclic node: list automaton rendering absorbs the cycle; anything
      // else becomes a named equation.
      if (try_list(n, s)) return s;
      emit_def(n, it->second);
      return it->second;
    }
    if (try_list(n, s)) return s;
    return render_union(n);
  }

  void emit_def(NodeId n, const std::string& name) {
    if (!defs_done_.insert(n).second) return;
    defs_.push_back(name + " = " + "?");  // reserve slot to stop recursion
    size_t slot = defs_.size() - 1;
    std::set<NodeId> outer_listing;
    std::swap(outer_listing, listing_);  // the definition starts a fresh rendering scope
    std::string body;
    if (!try_list(n, body)) body = render_union(n);
    std::swap(outer_listing, listing_);
    defs_[slot] = name + " = " + body;
  }

  std::string render_union(NodeId n) {
    const NodeData& nd = eng_.node(n);
    std::string out;
    for (size_t i = 0; i < nd.clauses.size(); ++i) {
      if (i) out += " | ";
      out += render_clause(nd.clauses[i], nd.clauses.size() > 1);
    }
    return out;
  }

  std::string render_clause(const Clause& c, bool parens_needed) {
    std::vector<std::string> parts;
    for (AtomId id : c.pos) parts.push_back(render_atom(eng_.atom(id)));
    for (AtomId id : c.neg) parts.push_back("~" + render_atom(eng_.atom(id)));
    if (parts.empty()) return "any";
    if (c.pos.empty()) parts.insert(parts.begin(), "any");
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
      if (i) out += " & ";
      out += parts[i];
    }
    if (parts.size() > 1 && parens_needed) return "(" + out + ")";
    return out;
  }

  std::string render_atom(const TypeAtom& a) {
    switch (a.kind) {
      case TypeAtom::Kind::Basic:
        switch (a.basic) {
          case ScalarKind::Atom: return "atom";
          case ScalarKind::Int: return "int";
          case ScalarKind::Float: return "float";
          case ScalarKind::Char: return "char";
          case ScalarKind::String: return "string";
        }
        return "?";
      case TypeAtom::Kind::Single: return to_text(a.single);
      case TypeAtom::Kind::Product:
        return "(" + render(a.left, true) + ", " + render(a.right, true) + ")";
      case TypeAtom::Kind::Record: {
        std::string out = "{";
        bool first = true;
        for (const auto& f : a.fields) {
          if (!first) out += ", ";
          first = false;
          out += f.label;
          if (f.opt) out += "?";
          out += ": " + render(f.ty, true);
        }
        if (a.open) {
          if (!first) out += ", ";
          out += "..";
        }
        out += "}";
        return out;
      }
      case TypeAtom::Kind::Var: return "%" + std::to_string(a.var);
    }
    return "?";
  }
};

inline std::string print_type(TypeEngine& eng, NodeId n) { return TypePrinter(eng).print(n); }

}  // namespace fcalc
