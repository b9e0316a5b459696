#pragma once

// Set-theoretic type engine.
//
// A type is a node: a union of clauses in disjunctive normal form. A clause
// is a conjunction of positive and negated atoms. Atoms are interned and
// shared; nodes are interned by their normalized clause set, so structurally
// identical acyclic types get the same node id. Recursive types are built by
// allocating a placeholder node and installing its clauses once the body is
// known; cycles may only pass through a constructor (product or record
// field), never through the boolean connectives.
//
// Emptiness is decided coinductively: a node whose check is already on the
// call stack is assumed empty. Provisionally-empty results are committed to
// the memo table only when the outermost query confirms them; any non-empty
// verdict is committed immediately and clears the provisional set, since
// non-emptiness never rests on an assumption.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fcalc/value.hpp"

namespace fcalc {

using NodeId = uint32_t;
using AtomId = uint32_t;
using VarId = uint32_t;

inline constexpr NodeId kNodeEmpty = 0;
inline constexpr NodeId kNodeAny = 1;

enum class ScalarKind : uint8_t { Atom = 0, Int, Float, Char, String };

inline std::optional<ScalarKind> scalar_kind_of(const Value& v) {
  switch (v.kind()) {
    case Value::Kind::Atom: return ScalarKind::Atom;
    case Value::Kind::Int: return ScalarKind::Int;
    case Value::Kind::Float: return ScalarKind::Float;
    case Value::Kind::Char: return ScalarKind::Char;
    case Value::Kind::String: return ScalarKind::String;
    default: return std::nullopt;
  }
}

inline const char* scalar_kind_name(ScalarKind k) {
  switch (k) {
    case ScalarKind::Atom: return "atom";
    case ScalarKind::Int: return "int";
    case ScalarKind::Float: return "float";
    case ScalarKind::Char: return "char";
    case ScalarKind::String: return "string";
  }
  return "?";
}

// Raised when a recursive definition cycles through a boolean connective
// instead of a constructor.
struct UnguardedRecursion : std::runtime_error {
  explicit UnguardedRecursion(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an internal iteration budget is exhausted; distinct from both
// type errors and runtime match failure.
struct EngineFault : std::runtime_error {
  explicit EngineFault(const std::string& what) : std::runtime_error(what) {}
};

struct RecordField {
  std::string label;
  NodeId ty;
  bool opt;  // true: the field may also be absent
};

struct TypeAtom {
  enum class Kind : uint8_t { Basic, Single, Product, Record, Var };
  Kind kind;
  ScalarKind basic{};             // Basic
  Value single;                   // Single, always a scalar
  NodeId left{}, right{};         // Product
  std::vector<RecordField> fields;  // Record, sorted by label
  bool open{};                    // Record
  VarId var{};                    // Var
};

struct Clause {
  std::vector<AtomId> pos, neg;  // sorted, disjoint
};

struct NodeData {
  std::vector<Clause> clauses;
  bool installed = false;
};

class TypeEngine {
public:
  TypeEngine() {
    nodes_.push_back({{}, true});                    // 0: empty
    node_keys_.emplace(node_key({}), kNodeEmpty);
    nodes_.push_back({{Clause{}}, true});            // 1: any
    node_keys_.emplace(node_key({Clause{}}), kNodeAny);
  }

  TypeEngine(const TypeEngine&) = delete;
  TypeEngine& operator=(const TypeEngine&) = delete;

  NodeId empty() const { return kNodeEmpty; }
  NodeId any() const { return kNodeAny; }

  const NodeData& node(NodeId n) const { return nodes_[n]; }
  const TypeAtom& atom(AtomId a) const { return atoms_[a]; }
  size_t node_count() const { return nodes_.size(); }

  // -- Atom construction ----------------------------------------------------

  AtomId basic_atom(ScalarKind k) {
    TypeAtom a;
    a.kind = TypeAtom::Kind::Basic;
    a.basic = k;
    return intern_atom(std::move(a));
  }

  AtomId single_atom(const Value& v) {
    if (!scalar_kind_of(v)) throw std::logic_error("single_atom: not a scalar");
    TypeAtom a;
    a.kind = TypeAtom::Kind::Single;
    a.single = v;
    return intern_atom(std::move(a));
  }

  AtomId product_atom(NodeId l, NodeId r) {
    TypeAtom a;
    a.kind = TypeAtom::Kind::Product;
    a.left = l;
    a.right = r;
    return intern_atom(std::move(a));
  }

  AtomId record_atom(std::vector<RecordField> fields, bool open) {
    std::sort(fields.begin(), fields.end(),
              [](const RecordField& x, const RecordField& y) { return x.label < y.label; });
    for (size_t i = 1; i < fields.size(); ++i)
      if (fields[i].label == fields[i - 1].label)
        throw std::logic_error("record_atom: duplicate label " + fields[i].label);
    TypeAtom a;
    a.kind = TypeAtom::Kind::Record;
    a.fields = std::move(fields);
    a.open = open;
    return intern_atom(std::move(a));
  }

  AtomId var_atom(VarId v) {
    TypeAtom a;
    a.kind = TypeAtom::Kind::Var;
    a.var = v;
    return intern_atom(std::move(a));
  }

  // -- Node construction ----------------------------------------------------

  NodeId basic(ScalarKind k) { return node_of_atom(basic_atom(k)); }

  NodeId singleton(const Value& v) {
    switch (v.kind()) {
      case Value::Kind::Pair: return product(singleton(v.first()), singleton(v.second()));
      case Value::Kind::Record: {
        std::vector<RecordField> fs;
        fs.reserve(v.fields().size());
        for (const auto& [l, fv] : v.fields()) fs.push_back({l, singleton(fv), false});
        return record(std::move(fs), false);
      }
      default: return node_of_atom(single_atom(v));
    }
  }

  NodeId product(NodeId l, NodeId r) { return node_of_atom(product_atom(l, r)); }

  NodeId record(std::vector<RecordField> fields, bool open) {
    return node_of_atom(record_atom(std::move(fields), open));
  }

  VarId fresh_var() { return next_var_++; }
  NodeId var_type(VarId v) { return node_of_atom(var_atom(v)); }

  NodeId unite(NodeId a, NodeId b) {
    if (a == b) return a;
    if (a == kNodeAny || b == kNodeAny) return kNodeAny;
    if (a == kNodeEmpty) return b;
    if (b == kNodeEmpty) return a;
    require_installed(a);
    require_installed(b);
    if (NodeId* hit = op_memo_find(OpKind::Union, a, b)) return *hit;
    std::vector<Clause> cs = nodes_[a].clauses;
    cs.insert(cs.end(), nodes_[b].clauses.begin(), nodes_[b].clauses.end());
    NodeId r = mk_node(std::move(cs));
    op_memo_store(OpKind::Union, a, b, r);
    return r;
  }

  NodeId unite(const std::vector<NodeId>& ns) {
    NodeId acc = kNodeEmpty;
    for (NodeId n : ns) acc = unite(acc, n);
    return acc;
  }

  NodeId intersect(NodeId a, NodeId b) {
    if (a == b) return a;
    if (a == kNodeEmpty || b == kNodeEmpty) return kNodeEmpty;
    if (a == kNodeAny) return b;
    if (b == kNodeAny) return a;
    require_installed(a);
    require_installed(b);
    if (NodeId* hit = op_memo_find(OpKind::Inter, a, b)) return *hit;
    std::vector<Clause> cs;
    for (const Clause& ca : nodes_[a].clauses)
      for (const Clause& cb : nodes_[b].clauses) {
        Clause m;
        m.pos = merge_ids(ca.pos, cb.pos);
        m.neg = merge_ids(ca.neg, cb.neg);
        cs.push_back(std::move(m));
      }
    NodeId r = mk_node(std::move(cs));
    op_memo_store(OpKind::Inter, a, b, r);
    return r;
  }

  NodeId negate(NodeId a) {
    if (a == kNodeEmpty) return kNodeAny;
    if (a == kNodeAny) return kNodeEmpty;
    require_installed(a);
    if (auto it = neg_memo_.find(a); it != neg_memo_.end()) return it->second;
    // De Morgan over the DNF: one literal flipped from every clause.
    std::vector<Clause> acc{Clause{}};
    for (const Clause& c : nodes_[a].clauses) {
      std::vector<Clause> next;
      next.reserve(acc.size() * (c.pos.size() + c.neg.size()));
      for (const Clause& base : acc) {
        for (AtomId p : c.pos) {
          Clause m = base;
          m.neg = merge_ids(m.neg, {p});
          if (auto n = normalize_clause(std::move(m))) next.push_back(std::move(*n));
        }
        for (AtomId q : c.neg) {
          Clause m = base;
          m.pos = merge_ids(m.pos, {q});
          if (auto n = normalize_clause(std::move(m))) next.push_back(std::move(*n));
        }
      }
      sort_unique_clauses(next);
      if (next.size() > 512) subsume_clauses(next, 4096);
      if (next.size() > 200000) throw EngineFault("negation blow-up");
      acc = std::move(next);
    }
    NodeId r = mk_node(std::move(acc));
    neg_memo_.emplace(a, r);
    neg_memo_.emplace(r, a);
    return r;
  }

  NodeId subtract(NodeId a, NodeId b) {
    if (b == kNodeEmpty) return a;
    if (a == kNodeEmpty || a == b) return kNodeEmpty;
    return intersect(a, negate(b));
  }

  // -- Placeholders for recursive construction -------------------------------

  NodeId alloc_placeholder() {
    nodes_.push_back({{}, false});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  bool installed(NodeId n) const { return nodes_[n].installed; }

  // Gives a placeholder its clause set. The clauses come from an already
  // normalized donor node or a raw list; either way they are re-normalized
  // for this id. Returns the placeholder id.
  NodeId install(NodeId ph, std::vector<Clause> clauses) {
    if (nodes_[ph].installed) throw std::logic_error("install: node already installed");
    std::vector<Clause> cs;
    cs.reserve(clauses.size());
    for (Clause& c : clauses)
      if (auto n = normalize_clause(std::move(c))) cs.push_back(std::move(*n));
    sort_unique_clauses(cs);
    subsume_clauses(cs);
    for (const Clause& c : cs)
      if (c.pos.empty() && c.neg.empty()) {
        cs = {Clause{}};
        break;
      }
    nodes_[ph].clauses = std::move(cs);
    nodes_[ph].installed = true;
    node_keys_.emplace(node_key(nodes_[ph].clauses), ph);  // keep first binding
    return ph;
  }

  NodeId install_from(NodeId ph, NodeId donor) {
    require_installed(donor);
    return install(ph, nodes_[donor].clauses);
  }

  // -- Common shapes ----------------------------------------------------------

  NodeId any_pair() { return cached(any_pair_, [&] { return product(kNodeAny, kNodeAny); }); }
  NodeId any_record() { return cached(any_record_, [&] { return record({}, true); }); }
  NodeId nil_type() { return cached(nil_type_, [&] { return singleton(Value::nil()); }); }
  NodeId bool_type() {
    return cached(bool_type_, [&] {
      return unite(singleton(Value::boolean(true)), singleton(Value::boolean(false)));
    });
  }

  // Possibly-empty sequence [t*]: the least solution of L = `nil | (t, L).
  NodeId list_star(NodeId t) {
    if (auto it = list_memo_.find(t); it != list_memo_.end()) return it->second;
    require_installed(t);
    NodeId r;
    if (t == kNodeEmpty) {
      r = nil_type();
    } else {
      NodeId ph = alloc_placeholder();
      std::vector<Clause> cs;
      cs.push_back(Clause{{single_atom(Value::nil())}, {}});
      cs.push_back(Clause{{product_atom(t, ph)}, {}});
      r = install(ph, std::move(cs));
    }
    list_memo_.emplace(t, r);
    return r;
  }

  // Non-empty sequence [t+].
  NodeId list_plus(NodeId t) { return product(t, list_star(t)); }

  // -- Emptiness, subtyping ---------------------------------------------------

  bool is_empty(NodeId n) {
    require_installed(n);
    ++stat_empty_queries_;
    bool top = empty_depth_ == 0;
    bool r;
    try {
      r = empty_rec(n);
    } catch (...) {
      if (top) {
        empty_stack_.clear();
        empty_pending_.clear();
        empty_pending_set_.clear();
        empty_depth_ = 0;
      }
      throw;
    }
    if (top) {
      if (r)
        for (NodeId p : empty_pending_) empty_memo_[p] = true;
      empty_pending_.clear();
      empty_pending_set_.clear();
    }
    return r;
  }

  bool subtype(NodeId a, NodeId b) {
    if (a == b || a == kNodeEmpty || b == kNodeAny) return true;
    return is_empty(subtract(a, b));
  }

  bool equiv(NodeId a, NodeId b) { return subtype(a, b) && subtype(b, a); }

  // -- Decompositions ---------------------------------------------------------

  // The pair part of t as a finite union of rectangles l x r, each non-empty.
  std::vector<std::pair<NodeId, NodeId>> product_decomposition(NodeId t) {
    require_installed(t);
    if (auto it = pdec_memo_.find(t); it != pdec_memo_.end()) return it->second;
    std::vector<std::pair<NodeId, NodeId>> out;
    for (const Clause& c : nodes_[t].clauses) clause_product_summands(c, out);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    pdec_memo_.emplace(t, out);
    return out;
  }

  // One summand of a record decomposition: an explicit field-state table.
  // A field with (empty, opt) means the label must be absent.
  struct RecordShape {
    std::vector<RecordField> fields;  // sorted by label
    bool open;
  };

  // The record part of t as a finite union of shapes. Exact except that a
  // residual "some unlisted field present" constraint arising from a negated
  // closed record is widened to an unconstrained open rest; the union is
  // always a superset of t's record part and equal to it away from that
  // corner.
  std::vector<RecordShape> record_decomposition(NodeId t) {
    require_installed(t);
    if (auto it = rdec_memo_.find(t); it != rdec_memo_.end()) return it->second;
    std::vector<RecordShape> out;
    for (const Clause& c : nodes_[t].clauses) clause_record_summands(c, out);
    dedupe_shapes(out);
    rdec_memo_.emplace(t, out);
    return out;
  }

  // -- Sequences ----------------------------------------------------------------

  // Item types of a sequence type: heads of every pair summand, transitively
  // through the tails. Sorted, unique.
  std::vector<NodeId> item_set(NodeId t) {
    require_installed(t);
    if (auto it = item_memo_.find(t); it != item_memo_.end()) return it->second;
    std::set<NodeId> items;
    std::set<NodeId> seen;
    std::vector<NodeId> work{t};
    size_t budget = 10000;
    while (!work.empty()) {
      NodeId n = work.back();
      work.pop_back();
      if (!seen.insert(n).second) continue;
      if (--budget == 0) throw EngineFault("item_set budget exhausted");
      for (auto& [h, tail] : product_decomposition(n)) {
        items.insert(h);
        if (!seen.count(tail)) work.push_back(tail);
      }
    }
    std::vector<NodeId> out(items.begin(), items.end());
    item_memo_.emplace(t, out);
    return out;
  }

  // Splits t into a union of simpler parts, one per top-level shape: each
  // scalar kind's slice (broken into singletons when small and finite), one
  // rectangle per pair summand, one shape per record summand. The parts cover
  // t exactly but need not be disjoint. Falls back to {t} past the cap.
  std::vector<NodeId> union_atoms(NodeId t, size_t cap = 16) {
    require_installed(t);
    if (is_empty(t) || has_free_vars(t)) return {t};
    std::vector<NodeId> out;
    auto add_scalar = [&](ScalarKind k) {
      NodeId p = intersect(t, basic(k));
      if (is_empty(p)) return;
      if (is_finite(p)) {
        auto vs = enumerate_values(p);
        if (vs.size() <= 8) {
          for (const Value& v : vs) out.push_back(singleton(v));
          return;
        }
      }
      out.push_back(p);
    };
    for (ScalarKind k : {ScalarKind::Atom, ScalarKind::Int, ScalarKind::Float, ScalarKind::Char,
                         ScalarKind::String})
      add_scalar(k);
    for (auto& [l, r] : product_decomposition(t)) out.push_back(product(l, r));
    for (const RecordShape& sh : record_decomposition(t)) {
      NodeId p = intersect(t, record(sh.fields, sh.open));
      if (!is_empty(p)) out.push_back(p);
    }
    if (out.size() > cap || out.size() <= 1) return {t};
    return out;
  }

  // -- Record operations ---------------------------------------------------------

  // Type of r1 + r2 where fields of r2 win: per pair of shapes, a field takes
  // r2's state when surely listed there, falls back to r1's when r2 may lack
  // it, and degrades to unknown when r2 is open about it.
  NodeId record_concat(NodeId t1, NodeId t2) {
    auto d1 = record_decomposition(t1);
    auto d2 = record_decomposition(t2);
    std::vector<NodeId> parts;
    for (const RecordShape& s1 : d1)
      for (const RecordShape& s2 : d2) {
        std::vector<std::string> labels = union_labels(s1, s2);
        std::vector<RecordField> fs;
        for (const std::string& l : labels) {
          auto [u1, o1] = shape_state(s1, l);
          auto [u2, o2] = shape_state(s2, l);
          NodeId ty;
          bool opt;
          if (listed(s2, l) || !s2.open) {
            if (o2) {
              ty = unite(u2, u1);
              opt = o1;
            } else {
              ty = u2;
              opt = false;
            }
          } else {
            ty = kNodeAny;
            opt = true;
          }
          fs.push_back({l, ty, opt});
        }
        parts.push_back(record(std::move(fs), s1.open || s2.open));
      }
    return unite(parts);
  }

  // Type of r \ l: the field l is forced absent in every shape.
  NodeId record_delete(NodeId t, const std::string& label) {
    std::vector<NodeId> parts;
    for (const RecordShape& s : record_decomposition(t)) {
      std::vector<RecordField> fs;
      bool placed = false;
      for (const RecordField& f : s.fields) {
        if (f.label == label) {
          fs.push_back({label, kNodeEmpty, true});
          placed = true;
        } else {
          fs.push_back(f);
        }
      }
      if (!placed && s.open) fs.push_back({label, kNodeEmpty, true});
      parts.push_back(record(std::move(fs), s.open));
    }
    return unite(parts);
  }

  // -- Finiteness and enumeration --------------------------------------------------

  bool is_finite(NodeId t) {
    require_installed(t);
    if (auto it = finite_memo_.find(t); it != finite_memo_.end()) return it->second;
    std::set<NodeId> in_progress;
    bool r = finite_rec(t, in_progress);
    finite_memo_.emplace(t, r);
    return r;
  }

  // All values of a finite type, sorted by value_order.
  std::vector<Value> enumerate_values(NodeId t) {
    if (!is_finite(t)) throw std::logic_error("enumerate_values: type is infinite");
    std::vector<Value> cand;
    collect_candidates(t, cand);
    std::vector<Value> out;
    for (const Value& v : cand)
      if (value_in(v, t)) out.push_back(v);
    std::sort(out.begin(), out.end(), ValueLess{});
    out.erase(std::unique(out.begin(), out.end(),
                          [](const Value& a, const Value& b) { return value_eq(a, b); }),
              out.end());
    return out;
  }

  // Structural membership; independent of the emptiness decision procedure,
  // so it doubles as an oracle for it.
  bool value_in(const Value& v, NodeId t) {
    require_installed(t);
    for (const Clause& c : nodes_[t].clauses) {
      bool ok = true;
      for (AtomId a : c.pos)
        if (!value_in_atom(v, a)) {
          ok = false;
          break;
        }
      if (!ok) continue;
      for (AtomId a : c.neg)
        if (value_in_atom(v, a)) {
          ok = false;
          break;
        }
      if (ok) return true;
    }
    return false;
  }

  // -- Variables and recursion tying -------------------------------------------------

  bool reaches_var(NodeId n, VarId v) {
    uint64_t key = (static_cast<uint64_t>(n) << 32) | v;
    if (auto it = reach_memo_.find(key); it != reach_memo_.end()) return it->second;
    std::set<NodeId> visited;
    bool r = reaches_var_rec(n, v, visited);
    reach_memo_.emplace(key, r);
    return r;
  }

  bool has_free_vars(NodeId n) {
    std::set<NodeId> visited;
    return has_vars_rec(n, visited);
  }

  // All variables occurring in n, sorted.
  std::vector<VarId> free_vars(NodeId n) {
    std::set<NodeId> visited;
    std::set<VarId> vars;
    collect_vars_rec(n, visited, vars);
    return {vars.begin(), vars.end()};
  }

  // Closes one recursion variable: clauses of s that mention v at the
  // boolean level are dropped (the variable adds nothing new to the union in
  // a least fixpoint), and remaining occurrences under constructors are tied
  // back to the result node.
  NodeId tie_var(VarId v, NodeId s) {
    require_installed(s);
    std::vector<Clause> kept;
    for (const Clause& c : nodes_[s].clauses) {
      if (clause_has_var(c.neg, v))
        throw std::logic_error("tie_var: negated recursion variable");
      if (clause_has_var(c.pos, v)) continue;
      kept.push_back(c);
    }
    if (kept.empty()) return kNodeEmpty;
    bool reaches = false;
    for (const Clause& c : kept)
      for (AtomId a : c.pos)
        reaches = reaches || atom_reaches_var(a, v);
    for (const Clause& c : kept)
      for (AtomId a : c.neg)
        reaches = reaches || atom_reaches_var(a, v);
    if (!reaches) return mk_node(std::move(kept));

    // Rebuild the reachable region with a knot at the root. Phase one maps
    // every node that reaches v to a fresh placeholder and rewrites atoms;
    // clauses that mention v at a nested boolean level stay symbolic. Phase
    // two splices the root's clause list into those, then installs.
    TieState st{v, alloc_placeholder(), {}, {}};
    std::vector<RewrittenClause> root_clauses;
    for (const Clause& c : kept) root_clauses.push_back(rewrite_clause(c, st));
    for (const auto& rc : root_clauses)
      if (rc.has_var) throw std::logic_error("tie_var: variable escaped the drop");
    std::vector<Clause> root_final;
    for (auto& rc : root_clauses) root_final.push_back(std::move(rc.clause));

    for (auto& [orig, entry] : st.rebuilt) {
      (void)orig;
      std::vector<Clause> final_cs;
      for (auto& rc : entry.clauses) {
        if (!rc.has_var) {
          final_cs.push_back(rc.clause);
          continue;
        }
        // T & rest, T the variable being tied: splice each root clause in.
        for (const Clause& root_c : root_final) {
          Clause m;
          m.pos = merge_ids(rc.clause.pos, root_c.pos);
          m.neg = merge_ids(rc.clause.neg, root_c.neg);
          final_cs.push_back(std::move(m));
        }
      }
      install(entry.placeholder, std::move(final_cs));
    }
    return install(st.root, std::move(root_final));
  }

  // -- Generic structural memo (used by parsers for named/recursive shapes) -----------

  std::optional<NodeId> find_cached(const std::string& key) const {
    if (auto it = shape_memo_.find(key); it != shape_memo_.end()) return it->second;
    return std::nullopt;
  }
  void store_cached(const std::string& key, NodeId n) { shape_memo_.emplace(key, n); }

  struct Stats {
    uint64_t empty_queries = 0;
    size_t nodes = 0, atoms = 0, memo_entries = 0;
  };
  Stats stats() const {
    return {stat_empty_queries_, nodes_.size(), atoms_.size(), empty_memo_.size()};
  }

private:
  enum class OpKind : uint8_t { Union, Inter };

  struct ShapeState {
    NodeId ty;
    bool opt;
  };

  // -- interning ---

  AtomId intern_atom(TypeAtom a) {
    std::string key = atom_key(a);
    if (auto it = atom_keys_.find(key); it != atom_keys_.end()) return it->second;
    atoms_.push_back(std::move(a));
    AtomId id = static_cast<AtomId>(atoms_.size() - 1);
    atom_keys_.emplace(std::move(key), id);
    return id;
  }

  static std::string atom_key(const TypeAtom& a) {
    std::string k;
    switch (a.kind) {
      case TypeAtom::Kind::Basic:
        k = "b";
        k += std::to_string(static_cast<int>(a.basic));
        break;
      case TypeAtom::Kind::Single:
        k = "v";
        value_key_into(k, a.single);
        break;
      case TypeAtom::Kind::Product:
        k = "p";
        k += std::to_string(a.left);
        k += ',';
        k += std::to_string(a.right);
        break;
      case TypeAtom::Kind::Record:
        k = a.open ? "ro" : "rc";
        for (const auto& f : a.fields) {
          k += std::to_string(f.label.size());
          k += ':';
          k += f.label;
          k += '=';
          k += std::to_string(f.ty);
          k += f.opt ? "?" : "!";
        }
        break;
      case TypeAtom::Kind::Var:
        k = "x";
        k += std::to_string(a.var);
        break;
    }
    return k;
  }

  NodeId node_of_atom(AtomId a) {
    return mk_node({Clause{{a}, {}}});
  }

  static std::string clause_key(const Clause& c) {
    std::string k = "P";
    for (AtomId a : c.pos) {
      k += std::to_string(a);
      k += ',';
    }
    k += "N";
    for (AtomId a : c.neg) {
      k += std::to_string(a);
      k += ',';
    }
    return k;
  }

  static std::string node_key(const std::vector<Clause>& cs) {
    std::string k;
    for (const Clause& c : cs) {
      k += clause_key(c);
      k += ';';
    }
    return k;
  }

  static std::vector<AtomId> merge_ids(const std::vector<AtomId>& a, const std::vector<AtomId>& b) {
    std::vector<AtomId> out;
    out.reserve(a.size() + b.size());
    std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  // Category of a positive atom for contradiction pruning: products, records
  // and each scalar kind are pairwise disjoint. Vars are transparent.
  static int atom_category(const TypeAtom& a) {
    switch (a.kind) {
      case TypeAtom::Kind::Product: return 0;
      case TypeAtom::Kind::Record: return 1;
      case TypeAtom::Kind::Basic: return 2 + static_cast<int>(a.basic);
      case TypeAtom::Kind::Single: return 2 + static_cast<int>(*scalar_kind_of(a.single));
      case TypeAtom::Kind::Var: return -1;
    }
    return -1;
  }

  // Sorts, dedupes, drops syntactically contradictory clauses and negations
  // that cannot intersect the positive part. Returns nullopt for a clause
  // that denotes the empty set.
  std::optional<Clause> normalize_clause(Clause c) {
    std::sort(c.pos.begin(), c.pos.end());
    c.pos.erase(std::unique(c.pos.begin(), c.pos.end()), c.pos.end());
    std::sort(c.neg.begin(), c.neg.end());
    c.neg.erase(std::unique(c.neg.begin(), c.neg.end()), c.neg.end());
    // A literal both asserted and denied.
    {
      size_t i = 0, j = 0;
      while (i < c.pos.size() && j < c.neg.size()) {
        if (c.pos[i] == c.neg[j]) return std::nullopt;
        (c.pos[i] < c.neg[j]) ? ++i : ++j;
      }
    }
    int cat = -1;
    const Value* single = nullptr;
    bool has_nonvar_pos = false;
    for (AtomId id : c.pos) {
      const TypeAtom& a = atoms_[id];
      int ac = atom_category(a);
      if (ac < 0) continue;
      has_nonvar_pos = true;
      if (cat >= 0 && ac != cat) return std::nullopt;  // disjoint kinds
      cat = ac;
      if (a.kind == TypeAtom::Kind::Single) {
        if (single && !value_eq(*single, a.single)) return std::nullopt;
        single = &a.single;
      }
    }
    if (has_nonvar_pos) {
      // Negations of other categories are vacuous; a denied whole kind that
      // covers a positive singleton empties the clause.
      std::vector<AtomId> neg;
      for (AtomId id : c.neg) {
        const TypeAtom& a = atoms_[id];
        int ac = atom_category(a);
        if (ac >= 0 && ac != cat) continue;
        if (single && a.kind == TypeAtom::Kind::Basic) return std::nullopt;
        neg.push_back(id);
      }
      c.neg = std::move(neg);
    }
    return c;
  }

  static void sort_unique_clauses(std::vector<Clause>& cs) {
    std::sort(cs.begin(), cs.end(), [](const Clause& a, const Clause& b) {
      if (a.pos != b.pos) return a.pos < b.pos;
      return a.neg < b.neg;
    });
    cs.erase(std::unique(cs.begin(), cs.end(),
                         [](const Clause& a, const Clause& b) {
                           return a.pos == b.pos && a.neg == b.neg;
                         }),
             cs.end());
  }

  static bool subset_ids(const std::vector<AtomId>& a, const std::vector<AtomId>& b) {
    return std::includes(b.begin(), b.end(), a.begin(), a.end());
  }

  // A clause with strictly fewer literals denotes a superset; drop clauses it
  // absorbs. Quadratic, so only applied below a size cap.
  static void subsume_clauses(std::vector<Clause>& cs, size_t cap = 64) {
    if (cs.size() > cap) return;
    std::vector<bool> dead(cs.size(), false);
    for (size_t i = 0; i < cs.size(); ++i) {
      if (dead[i]) continue;
      for (size_t j = 0; j < cs.size(); ++j) {
        if (i == j || dead[j]) continue;
        if (subset_ids(cs[i].pos, cs[j].pos) && subset_ids(cs[i].neg, cs[j].neg)) dead[j] = true;
      }
    }
    size_t w = 0;
    for (size_t i = 0; i < cs.size(); ++i)
      if (!dead[i]) {
        if (w != i) cs[w] = std::move(cs[i]);
        ++w;
      }
    cs.resize(w);
  }

  NodeId mk_node(std::vector<Clause> raw) {
    std::vector<Clause> cs;
    cs.reserve(raw.size());
    for (Clause& c : raw)
      if (auto n = normalize_clause(std::move(c))) cs.push_back(std::move(*n));
    sort_unique_clauses(cs);
    subsume_clauses(cs);
    for (const Clause& c : cs)
      if (c.pos.empty() && c.neg.empty()) return kNodeAny;
    if (cs.empty()) return kNodeEmpty;
    std::string key = node_key(cs);
    if (auto it = node_keys_.find(key); it != node_keys_.end()) return it->second;
    nodes_.push_back({std::move(cs), true});
    NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    node_keys_.emplace(std::move(key), id);
    return id;
  }

  void require_installed(NodeId n) const {
    if (!nodes_[n].installed)
      throw UnguardedRecursion("recursive reference used outside a constructor");
  }

  NodeId* op_memo_find(OpKind op, NodeId a, NodeId b) {
    if (a > b) std::swap(a, b);
    auto it = op_memo_.find(op_key(op, a, b));
    return it == op_memo_.end() ? nullptr : &it->second;
  }
  void op_memo_store(OpKind op, NodeId a, NodeId b, NodeId r) {
    if (a > b) std::swap(a, b);
    op_memo_.emplace(op_key(op, a, b), r);
  }
  static uint64_t op_key(OpKind op, NodeId a, NodeId b) {
    return (static_cast<uint64_t>(op) << 62) | (static_cast<uint64_t>(a) << 31) | b;
  }

  template <typename F>
  NodeId cached(std::optional<NodeId>& slot, F f) {
    if (!slot) slot = f();
    return *slot;
  }

  // -- emptiness ---

  bool empty_rec(NodeId n) {
    if (auto it = empty_memo_.find(n); it != empty_memo_.end()) return it->second;
    if (empty_stack_.count(n)) return true;  // coinductive hypothesis
    if (empty_pending_set_.count(n)) return true;
    empty_stack_.insert(n);
    ++empty_depth_;
    bool r = true;
    for (const Clause& c : nodes_[n].clauses)
      if (!clause_empty(c)) {
        r = false;
        break;
      }
    --empty_depth_;
    empty_stack_.erase(n);
    if (!r) {
      // Non-emptiness is witness-backed and assumption-free: commit it and
      // drop every provisional emptiness derived meanwhile.
      empty_memo_[n] = false;
      empty_pending_.clear();
      empty_pending_set_.clear();
    } else {
      empty_pending_.push_back(n);
      empty_pending_set_.insert(n);
    }
    return r;
  }

  bool clause_empty(const Clause& c) {
    // Partition literals. Vars must not reach emptiness; the callers keep
    // variable-carrying types away from semantic queries.
    int cat = -1;
    const TypeAtom* single = nullptr;
    std::vector<const TypeAtom*> pos_products, pos_records;
    for (AtomId id : c.pos) {
      const TypeAtom& a = atoms_[id];
      if (a.kind == TypeAtom::Kind::Var)
        throw std::logic_error("emptiness query on a type with a free variable");
      cat = atom_category(a);
      if (a.kind == TypeAtom::Kind::Single) single = &a;
      if (a.kind == TypeAtom::Kind::Product) pos_products.push_back(&a);
      if (a.kind == TypeAtom::Kind::Record) pos_records.push_back(&a);
    }
    std::vector<const TypeAtom*> neg_products, neg_records;
    std::vector<const TypeAtom*> neg_scalars;
    for (AtomId id : c.neg) {
      const TypeAtom& a = atoms_[id];
      if (a.kind == TypeAtom::Kind::Var)
        throw std::logic_error("emptiness query on a type with a free variable");
      if (a.kind == TypeAtom::Kind::Product) neg_products.push_back(&a);
      else if (a.kind == TypeAtom::Kind::Record) neg_records.push_back(&a);
      else neg_scalars.push_back(&a);
    }

    if (cat == -1) {
      // Purely negative: non-empty when any category retains a value.
      for (int k = 0; k < 5; ++k)
        if (!scalar_residual_empty(static_cast<ScalarKind>(k), nullptr, false, neg_scalars))
          return false;
      if (!product_residual_empty(kNodeAny, kNodeAny, neg_products, 0)) return false;
      RecShapeQ top;
      top.open = true;
      if (!record_residual_empty(top, neg_records, 0)) return false;
      return true;
    }
    if (cat == 0) {
      NodeId l = kNodeAny, r = kNodeAny;
      for (const TypeAtom* p : pos_products) {
        l = intersect(l, p->left);
        r = intersect(r, p->right);
      }
      return product_residual_empty(l, r, neg_products, 0);
    }
    if (cat == 1) {
      RecShapeQ shape;
      shape.open = true;
      for (const TypeAtom* p : pos_records) merge_record_atom(shape, *p);
      return record_residual_empty(shape, neg_records, 0);
    }
    // Scalar clause.
    ScalarKind k = static_cast<ScalarKind>(cat - 2);
    return scalar_residual_empty(k, single ? &single->single : nullptr, true, neg_scalars);
  }

  // Every scalar kind is treated as an infinite universe: a whole kind minus
  // finitely many constants stays inhabited.
  bool scalar_residual_empty(ScalarKind k, const Value* base, bool has_pos,
                             const std::vector<const TypeAtom*>& negs) {
    (void)has_pos;
    for (const TypeAtom* n : negs) {
      if (n->kind == TypeAtom::Kind::Basic && n->basic == k) return true;
      if (base && n->kind == TypeAtom::Kind::Single && value_eq(n->single, *base)) return true;
    }
    return false;
  }

  // S1 x S2 minus a list of rectangles, by cutting one rectangle per step:
  // the remainder is empty iff both the left-cut and the right-cut remainders
  // are.
  bool product_residual_empty(NodeId s1, NodeId s2, const std::vector<const TypeAtom*>& negs,
                              size_t idx) {
    if (empty_rec(s1) || empty_rec(s2)) return true;
    if (idx == negs.size()) return false;
    const TypeAtom* n = negs[idx];
    return product_residual_empty(subtract(s1, n->left), s2, negs, idx + 1) &&
           product_residual_empty(s1, subtract(s2, n->right), negs, idx + 1);
  }

  // Field-state table used during record emptiness: explicit per-label states
  // plus the open flag for all unlisted labels.
  struct RecShapeQ {
    std::map<std::string, ShapeState> states;
    bool open = true;
  };

  ShapeState default_state(const RecShapeQ& s) const {
    return s.open ? ShapeState{kNodeAny, true} : ShapeState{kNodeEmpty, true};
  }

  static ShapeState atom_state(const TypeAtom& a, const std::string& l) {
    auto it = std::lower_bound(a.fields.begin(), a.fields.end(), l,
                               [](const RecordField& f, const std::string& s) { return f.label < s; });
    if (it != a.fields.end() && it->label == l) return {it->ty, it->opt};
    return a.open ? ShapeState{kNodeAny, true} : ShapeState{kNodeEmpty, true};
  }

  void merge_record_atom(RecShapeQ& shape, const TypeAtom& a) {
    for (const RecordField& f : a.fields)
      if (!shape.states.count(f.label)) shape.states.emplace(f.label, default_state(shape));
    for (auto& [l, st] : shape.states) {
      ShapeState as = atom_state(a, l);
      st = {intersect(st.ty, as.ty), st.opt && as.opt};
    }
    shape.open = shape.open && a.open;
  }

  bool shape_state_dead(const ShapeState& st) { return !st.opt && empty_rec(st.ty); }

  // shape minus a list of negated record atoms. Cutting one negation splits
  // into per-label branches (the value disagrees at that label) plus, for a
  // negated closed atom under an open shape, a branch standing for "some
  // unlisted label is present", which the fresh-label argument shows can
  // never force emptiness on its own.
  bool record_residual_empty(RecShapeQ shape, const std::vector<const TypeAtom*>& negs,
                             size_t idx) {
    for (auto& [l, st] : shape.states) {
      (void)l;
      if (shape_state_dead(st)) return true;
    }
    if (idx == negs.size()) return false;
    const TypeAtom* n = negs[idx];
    for (const RecordField& f : n->fields)
      if (!shape.states.count(f.label)) shape.states.emplace(f.label, default_state(shape));
    for (const auto& [l, st] : shape.states) {
      ShapeState ns = atom_state(*n, l);
      ShapeState cut{subtract(st.ty, ns.ty), st.opt && !ns.opt};
      if (empty_rec(cut.ty) && !cut.opt) continue;  // dead branch
      RecShapeQ br = shape;
      br.states[l] = cut;
      if (!record_residual_empty(std::move(br), negs, idx + 1)) return false;
    }
    if (shape.open && !n->open) {
      // Extra-label branch; the presence constraint itself is always
      // satisfiable under an open rest, so it is not tracked further.
      if (!record_residual_empty(shape, negs, idx + 1)) return false;
    }
    return true;
  }

  // -- decompositions ---

  void clause_product_summands(const Clause& c, std::vector<std::pair<NodeId, NodeId>>& out) {
    NodeId s1 = kNodeAny, s2 = kNodeAny;
    bool other_cat = false;
    for (AtomId id : c.pos) {
      const TypeAtom& a = atoms_[id];
      if (a.kind == TypeAtom::Kind::Product) {
        s1 = intersect(s1, a.left);
        s2 = intersect(s2, a.right);
      } else if (a.kind != TypeAtom::Kind::Var) {
        other_cat = true;
      }
    }
    if (other_cat) return;  // clause has no pair part
    std::vector<const TypeAtom*> negs;
    for (AtomId id : c.neg) {
      const TypeAtom& a = atoms_[id];
      if (a.kind == TypeAtom::Kind::Product) negs.push_back(&a);
    }
    if (negs.size() > 16) throw EngineFault("product decomposition blow-up");
    size_t m = negs.size();
    for (size_t mask = 0; mask < (size_t{1} << m); ++mask) {
      NodeId l = s1, r = s2;
      for (size_t j = 0; j < m; ++j) {
        if (mask & (size_t{1} << j))
          l = subtract(l, negs[j]->left);
        else
          r = subtract(r, negs[j]->right);
      }
      if (!is_empty(l) && !is_empty(r)) out.emplace_back(l, r);
    }
  }

  void clause_record_summands(const Clause& c, std::vector<RecordShape>& out) {
    RecShapeQ shape;
    shape.open = true;
    bool other_cat = false;
    for (AtomId id : c.pos) {
      const TypeAtom& a = atoms_[id];
      if (a.kind == TypeAtom::Kind::Record)
        merge_record_atom(shape, a);
      else if (a.kind != TypeAtom::Kind::Var)
        other_cat = true;
    }
    if (other_cat) return;
    std::vector<const TypeAtom*> negs;
    for (AtomId id : c.neg) {
      const TypeAtom& a = atoms_[id];
      if (a.kind == TypeAtom::Kind::Record) negs.push_back(&a);
    }
    size_t budget = 4096;
    expand_record_shape(std::move(shape), negs, 0, budget, out);
  }

  void expand_record_shape(RecShapeQ shape, const std::vector<const TypeAtom*>& negs, size_t idx,
                           size_t& budget, std::vector<RecordShape>& out) {
    if (budget == 0) throw EngineFault("record decomposition blow-up");
    --budget;
    for (auto& [l, st] : shape.states) {
      (void)l;
      if (shape_state_dead(st)) return;
    }
    if (idx == negs.size()) {
      RecordShape rs;
      for (auto& [l, st] : shape.states) rs.fields.push_back({l, st.ty, st.opt});
      rs.open = shape.open;
      out.push_back(std::move(rs));
      return;
    }
    const TypeAtom* n = negs[idx];
    for (const RecordField& f : n->fields)
      if (!shape.states.count(f.label)) shape.states.emplace(f.label, default_state(shape));
    for (const auto& [l, st] : shape.states) {
      ShapeState ns = atom_state(*n, l);
      ShapeState cut{subtract(st.ty, ns.ty), st.opt && !ns.opt};
      if (is_empty(cut.ty) && !cut.opt) continue;
      RecShapeQ br = shape;
      br.states[l] = cut;
      expand_record_shape(std::move(br), negs, idx + 1, budget, out);
    }
    if (shape.open && !n->open) expand_record_shape(std::move(shape), negs, idx + 1, budget, out);
  }

  void dedupe_shapes(std::vector<RecordShape>& out) {
    std::set<std::string> seen;
    std::vector<RecordShape> uniq;
    for (RecordShape& s : out) {
      std::string k = s.open ? "o" : "c";
      for (const RecordField& f : s.fields) {
        k += f.label;
        k += ':';
        k += std::to_string(f.ty);
        k += f.opt ? "?;" : "!;";
      }
      if (seen.insert(std::move(k)).second) uniq.push_back(std::move(s));
    }
    out = std::move(uniq);
  }

  static bool listed(const RecordShape& s, const std::string& l) {
    for (const RecordField& f : s.fields)
      if (f.label == l) return true;
    return false;
  }

  std::pair<NodeId, bool> shape_state(const RecordShape& s, const std::string& l) const {
    for (const RecordField& f : s.fields)
      if (f.label == l) return {f.ty, f.opt};
    return s.open ? std::pair<NodeId, bool>{kNodeAny, true}
                  : std::pair<NodeId, bool>{kNodeEmpty, true};
  }

  static std::vector<std::string> union_labels(const RecordShape& a, const RecordShape& b) {
    std::set<std::string> ls;
    for (const RecordField& f : a.fields) ls.insert(f.label);
    for (const RecordField& f : b.fields) ls.insert(f.label);
    return {ls.begin(), ls.end()};
  }

  // -- finiteness / enumeration ---

  bool finite_rec(NodeId t, std::set<NodeId>& in_progress) {
    if (auto it = finite_memo_.find(t); it != finite_memo_.end()) return it->second;
    if (in_progress.count(t)) return false;  // inhabited descent cycle
    if (is_empty(t)) return true;
    in_progress.insert(t);
    bool fin = true;
    for (const Clause& c : nodes_[t].clauses) {
      if (!fin) break;
      fin = clause_finite(c, in_progress);
    }
    in_progress.erase(t);
    if (fin) finite_memo_.emplace(t, true);
    return fin;
  }

  bool clause_finite(const Clause& c, std::set<NodeId>& in_progress) {
    NodeId cn = mk_node({c});
    if (is_empty(cn)) return true;
    int cat = -1;
    for (AtomId id : c.pos) {
      int ac = atom_category(atoms_[id]);
      if (ac >= 0) cat = ac;
    }
    auto scalar_part_finite = [&](ScalarKind k) {
      // Finite only if a constant pins it down or the whole kind is denied.
      for (AtomId id : c.pos) {
        const TypeAtom& a = atoms_[id];
        if (a.kind == TypeAtom::Kind::Single) return true;
      }
      for (AtomId id : c.neg) {
        const TypeAtom& a = atoms_[id];
        if (a.kind == TypeAtom::Kind::Basic && a.basic == k) return true;
      }
      return false;
    };
    auto product_part_finite = [&]() {
      for (auto& [l, r] : product_decomposition(cn))
        if (!finite_rec(l, in_progress) || !finite_rec(r, in_progress)) return false;
      return true;
    };
    auto record_part_finite = [&]() {
      for (const RecordShape& s : record_decomposition(cn)) {
        if (shape_inhabited(s)) {
          if (s.open) return false;  // fresh labels extend it forever
          for (const RecordField& f : s.fields)
            if (!finite_rec(f.ty, in_progress)) return false;
        }
      }
      return true;
    };
    if (cat == -1) {
      for (int k = 0; k < 5; ++k) {
        ScalarKind sk = static_cast<ScalarKind>(k);
        std::vector<const TypeAtom*> negs;
        for (AtomId id : c.neg) {
          const TypeAtom& a = atoms_[id];
          if (a.kind != TypeAtom::Kind::Product && a.kind != TypeAtom::Kind::Record)
            negs.push_back(&a);
        }
        if (!scalar_residual_empty(sk, nullptr, false, negs) && !scalar_part_finite(sk))
          return false;
      }
      return product_part_finite() && record_part_finite();
    }
    if (cat == 0) return product_part_finite();
    if (cat == 1) return record_part_finite();
    return scalar_part_finite(static_cast<ScalarKind>(cat - 2));
  }

  bool shape_inhabited(const RecordShape& s) {
    for (const RecordField& f : s.fields)
      if (!f.opt && is_empty(f.ty)) return false;
    return true;
  }

  void collect_candidates(NodeId t, std::vector<Value>& out) {
    for (const Clause& c : nodes_[t].clauses) {
      NodeId cn = mk_node({c});
      if (is_empty(cn)) continue;
      for (AtomId id : c.pos) {
        const TypeAtom& a = atoms_[id];
        if (a.kind == TypeAtom::Kind::Single) out.push_back(a.single);
      }
      for (auto& [l, r] : product_decomposition(cn)) {
        std::vector<Value> ls = enumerate_values(l);
        std::vector<Value> rs = enumerate_values(r);
        if (ls.size() * rs.size() > 100000) throw EngineFault("enumeration blow-up");
        for (const Value& lv : ls)
          for (const Value& rv : rs) out.push_back(Value::pair(lv, rv));
      }
      for (const RecordShape& s : record_decomposition(cn)) {
        if (s.open || !shape_inhabited(s)) continue;
        std::vector<std::vector<std::optional<Value>>> opts;
        for (const RecordField& f : s.fields) {
          std::vector<std::optional<Value>> o;
          if (f.opt) o.push_back(std::nullopt);
          for (Value& v : enumerate_values(f.ty)) o.push_back(std::move(v));
          opts.push_back(std::move(o));
        }
        std::vector<size_t> ix(opts.size(), 0);
        size_t total = 1;
        for (auto& o : opts) {
          total *= o.size();
          if (total > 100000) throw EngineFault("enumeration blow-up");
        }
        for (size_t n = 0; n < total; ++n) {
          size_t rem = n;
          RecordFields fs;
          for (size_t i = 0; i < opts.size(); ++i) {
            size_t pick = rem % opts[i].size();
            rem /= opts[i].size();
            if (opts[i][pick]) fs.emplace_back(s.fields[i].label, *opts[i][pick]);
          }
          out.push_back(Value::record(std::move(fs)));
        }
      }
    }
  }

  bool value_in_atom(const Value& v, AtomId id) {
    const TypeAtom& a = atoms_[id];
    switch (a.kind) {
      case TypeAtom::Kind::Basic: {
        auto k = scalar_kind_of(v);
        return k && *k == a.basic;
      }
      case TypeAtom::Kind::Single: return value_eq(v, a.single);
      case TypeAtom::Kind::Product:
        return v.is_pair() && value_in(v.first(), a.left) && value_in(v.second(), a.right);
      case TypeAtom::Kind::Record: {
        if (!v.is_record()) return false;
        for (const RecordField& f : a.fields) {
          const Value* fv = v.field(f.label);
          if (fv ? !value_in(*fv, f.ty) : !f.opt) return false;
        }
        if (!a.open)
          for (const auto& [l, fv] : v.fields()) {
            (void)fv;
            auto it = std::lower_bound(
                a.fields.begin(), a.fields.end(), l,
                [](const RecordField& f, const std::string& s) { return f.label < s; });
            if (it == a.fields.end() || it->label != l) return false;
          }
        return true;
      }
      case TypeAtom::Kind::Var:
        throw std::logic_error("membership query on a type with a free variable");
    }
    return false;
  }

  // -- variables ---

  static bool clause_has_var_atom(const TypeAtom& a, VarId v) {
    return a.kind == TypeAtom::Kind::Var && a.var == v;
  }

  bool clause_has_var(const std::vector<AtomId>& ids, VarId v) {
    for (AtomId id : ids)
      if (clause_has_var_atom(atoms_[id], v)) return true;
    return false;
  }

  bool atom_reaches_var(AtomId id, VarId v) {
    const TypeAtom& a = atoms_[id];
    switch (a.kind) {
      case TypeAtom::Kind::Var: return a.var == v;
      case TypeAtom::Kind::Product: return reaches_var(a.left, v) || reaches_var(a.right, v);
      case TypeAtom::Kind::Record:
        for (const RecordField& f : a.fields)
          if (reaches_var(f.ty, v)) return true;
        return false;
      default: return false;
    }
  }

  bool reaches_var_rec(NodeId n, VarId v, std::set<NodeId>& visited) {
    if (!visited.insert(n).second) return false;
    for (const Clause& c : nodes_[n].clauses) {
      for (AtomId id : c.pos)
        if (atom_reaches_rec(id, v, visited)) return true;
      for (AtomId id : c.neg)
        if (atom_reaches_rec(id, v, visited)) return true;
    }
    return false;
  }

  bool atom_reaches_rec(AtomId id, VarId v, std::set<NodeId>& visited) {
    const TypeAtom& a = atoms_[id];
    switch (a.kind) {
      case TypeAtom::Kind::Var: return a.var == v;
      case TypeAtom::Kind::Product:
        return reaches_var_rec(a.left, v, visited) || reaches_var_rec(a.right, v, visited);
      case TypeAtom::Kind::Record:
        for (const RecordField& f : a.fields)
          if (reaches_var_rec(f.ty, v, visited)) return true;
        return false;
      default: return false;
    }
  }

  bool has_vars_rec(NodeId n, std::set<NodeId>& visited) {
    if (!visited.insert(n).second) return false;
    for (const Clause& c : nodes_[n].clauses) {
      for (AtomId id : c.pos)
        if (atom_has_vars_rec(id, visited)) return true;
      for (AtomId id : c.neg)
        if (atom_has_vars_rec(id, visited)) return true;
    }
    return false;
  }

  bool atom_has_vars_rec(AtomId id, std::set<NodeId>& visited) {
    const TypeAtom& a = atoms_[id];
    switch (a.kind) {
      case TypeAtom::Kind::Var: return true;
      case TypeAtom::Kind::Product:
        return has_vars_rec(a.left, visited) || has_vars_rec(a.right, visited);
      case TypeAtom::Kind::Record:
        for (const RecordField& f : a.fields)
          if (has_vars_rec(f.ty, visited)) return true;
        return false;
      default: return false;
    }
  }

  void collect_vars_rec(NodeId n, std::set<NodeId>& visited, std::set<VarId>& out) {
    if (!visited.insert(n).second) return;
    auto visit_atom = [&](AtomId id) {
      const TypeAtom& a = atoms_[id];
      switch (a.kind) {
        case TypeAtom::Kind::Var: out.insert(a.var); break;
        case TypeAtom::Kind::Product:
          collect_vars_rec(a.left, visited, out);
          collect_vars_rec(a.right, visited, out);
          break;
        case TypeAtom::Kind::Record:
          for (const RecordField& f : a.fields) collect_vars_rec(f.ty, visited, out);
          break;
        default: break;
      }
    };
    for (const Clause& c : nodes_[n].clauses) {
      for (AtomId id : c.pos) visit_atom(id);
      for (AtomId id : c.neg) visit_atom(id);
    }
  }

  // -- recursion tying ---

  struct RewrittenClause {
    Clause clause;
    bool has_var = false;  // mentioned the tied variable at boolean level
  };

  struct TieEntry {
    NodeId placeholder;
    std::vector<RewrittenClause> clauses;
  };

  struct TieState {
    VarId var;
    NodeId root;
    std::map<NodeId, NodeId> node_map;  // original -> placeholder
    std::map<NodeId, TieEntry> rebuilt;
  };

  NodeId rewrite_node(NodeId n, TieState& st) {
    if (!reaches_var(n, st.var)) return n;
    if (is_bare_var_node(n, st.var)) return st.root;
    if (auto it = st.node_map.find(n); it != st.node_map.end()) return it->second;
    NodeId ph = alloc_placeholder();
    st.node_map.emplace(n, ph);
    TieEntry entry;
    entry.placeholder = ph;
    for (const Clause& c : nodes_[n].clauses) entry.clauses.push_back(rewrite_clause(c, st));
    st.rebuilt.emplace(n, std::move(entry));
    return ph;
  }

  RewrittenClause rewrite_clause(const Clause& c, TieState& st) {
    RewrittenClause out;
    for (AtomId id : c.pos) {
      const TypeAtom& a = atoms_[id];
      if (clause_has_var_atom(a, st.var)) {
        out.has_var = true;
        continue;
      }
      out.clause.pos.push_back(rewrite_atom(id, st));
    }
    for (AtomId id : c.neg) {
      const TypeAtom& a = atoms_[id];
      if (clause_has_var_atom(a, st.var))
        throw std::logic_error("tie_var: negated recursion variable");
      out.clause.neg.push_back(rewrite_atom(id, st));
    }
    std::sort(out.clause.pos.begin(), out.clause.pos.end());
    std::sort(out.clause.neg.begin(), out.clause.neg.end());
    return out;
  }

  AtomId rewrite_atom(AtomId id, TieState& st) {
    const TypeAtom& a = atoms_[id];
    switch (a.kind) {
      case TypeAtom::Kind::Product: {
        NodeId l = reaches_var(a.left, st.var) ? rewrite_node(a.left, st) : a.left;
        NodeId r = reaches_var(a.right, st.var) ? rewrite_node(a.right, st) : a.right;
        if (l == a.left && r == a.right) return id;
        return product_atom(l, r);
      }
      case TypeAtom::Kind::Record: {
        bool changed = false;
        std::vector<RecordField> fs = a.fields;
        for (RecordField& f : fs)
          if (reaches_var(f.ty, st.var)) {
            f.ty = rewrite_node(f.ty, st);
            changed = true;
          }
        if (!changed) return id;
        return record_atom(std::move(fs), a.open);
      }
      case TypeAtom::Kind::Var:
        // The tied variable itself is intercepted in rewrite_clause; any
        // other variable passes through untouched.
        return id;
      default: return id;
    }
  }

  bool is_bare_var_node(NodeId n, VarId v) {
    const NodeData& nd = nodes_[n];
    if (nd.clauses.size() != 1) return false;
    const Clause& c = nd.clauses[0];
    if (!c.neg.empty() || c.pos.size() != 1) return false;
    const TypeAtom& a = atoms_[c.pos[0]];
    return a.kind == TypeAtom::Kind::Var && a.var == v;
  }

  std::vector<TypeAtom> atoms_;
  std::unordered_map<std::string, AtomId> atom_keys_;
  std::vector<NodeData> nodes_;
  std::unordered_map<std::string, NodeId> node_keys_;

  std::unordered_map<uint64_t, NodeId> op_memo_;
  std::unordered_map<NodeId, NodeId> neg_memo_;

  std::unordered_map<NodeId, bool> empty_memo_;
  std::unordered_set<NodeId> empty_stack_;
  std::vector<NodeId> empty_pending_;
  std::unordered_set<NodeId> empty_pending_set_;
  int empty_depth_ = 0;

  std::unordered_map<NodeId, std::vector<std::pair<NodeId, NodeId>>> pdec_memo_;
  std::unordered_map<NodeId, std::vector<RecordShape>> rdec_memo_;
  std::unordered_map<NodeId, std::vector<NodeId>> item_memo_;
  std::unordered_map<NodeId, bool> finite_memo_;
  std::unordered_map<uint64_t, bool> reach_memo_;
  std::unordered_map<NodeId, NodeId> list_memo_;
  std::unordered_map<std::string, NodeId> shape_memo_;

  std::optional<NodeId> any_pair_, any_record_, nil_type_, bool_type_;
  VarId next_var_ = 0;
  uint64_t stat_empty_queries_ = 0;
};

}  // namespace fcalc
