#pragma once

// Frontend for a Jaql-style pipeline language over JSON sequences.
//
// Source programs are a sequence of headers followed by one pipeline
// expression:
//
//   type Emp = {dept: int, income: int, ..};
//   declare employees : [Emp*];
//   employees -> filter each x (x.income > 100) -> transform each x (x.dept);
//
// Expressions: literals, `$`, variables, arrays [e, ...], records {l: e, ...}
// (labels may be computed: {(e): e'}), field access e.l, indexing e[k],
// operator calls op(e, ...), pipelines e -> stage, and co-grouping
//   group e1 by k = key1 as g1, e2 by k = key2 as g2 into e.
//
// Pipeline stages: filter / transform / expand, each with an optional
// `each x` binder (default binder is `$`), and group with optional
// `each x`, `by k = e` and `as g` clauses.  Stage bodies parse up to the
// next `->`; parenthesize a body to nest a pipeline inside it.
//
// Every construct is compiled down to core filters:
//   - field access becomes a recursive selector that returns null for
//     records lacking the field (or for null itself) and maps over
//     sequences, mirroring the source language's lenient dot;
//   - filter/transform/expand become instances of the sequence
//     combinators built in this header;
//   - group becomes a key-extraction groupby followed by a transform of
//     the (key, group) pairs;
//   - co-grouping tags each input with its position, merges them, groups
//     the union, and splits every group back per input.
//
// The result keeps the stage structure (Program::stages) so a driver can
// type the pipeline one stage at a time and report the intermediate types.

#include <atomic>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ast.hpp"
#include "parser.hpp"
#include "types.hpp"
#include "value.hpp"

namespace fcalc::jaql {

// ---------------------------------------------------------------------------
// Built-in sequence combinators.
//
// `filter_of`/`transform_of` take the per-element filter F and wrap it in the
// usual nil/cons recursion.  The element filter is applied through an
// expression-level application, so F must be closed (no free recursion
// variables); translated stage bodies always are.
//
// Note on filter_of: the element predicate's result is paired with the tail
// before dispatching on it, because a bare boolean is not a pair and the
// continuation needs both the verdict and the rest of the sequence.

namespace detail {

inline std::string fresh_name() {
  static std::atomic<uint64_t> ctr{0};
  return "$jq" + std::to_string(ctr.fetch_add(1, std::memory_order_relaxed));
}

inline std::string fresh_rec(const char* base) {
  static std::atomic<uint64_t> ctr{0};
  return std::string(base) + "@jq" +
         std::to_string(ctr.fetch_add(1, std::memory_order_relaxed));
}

inline Span src_span(size_t begin, size_t end) {
  return Span{static_cast<uint32_t>(begin), static_cast<uint32_t>(end), false};
}

}  // namespace detail

inline FilterPtr nil_arm(TypeEngine& eng) {
  return flt::arrow(pat::type(eng.singleton(Value::nil())), flt::expr(ex::constant(Value::nil())));
}

// F is applied to each element; only elements whose result is `true are
// kept. A `null verdict drops the element like `false does, so predicates
// over optional fields (which read as null when absent) filter them out.
inline FilterPtr filter_of(TypeEngine& eng, FilterPtr pred) {
  std::string X = detail::fresh_rec("Filter");
  std::string x = detail::fresh_name(), tl = detail::fresh_name(), t2 = detail::fresh_name();
  FilterPtr keep = flt::arrow(
      pat::pair(pat::type(eng.singleton(Value::boolean(true))), pat::var(t2)),
      flt::product(flt::expr(ex::var(x)), flt::call(X, ex::var(t2))));
  FilterPtr drop = flt::arrow(
      pat::pair(pat::type(eng.unite(eng.singleton(Value::boolean(false)),
                                    eng.singleton(Value::null()))),
                pat::var(t2)),
      flt::call(X, ex::var(t2)));
  FilterPtr cons = flt::arrow(
      pat::pair(pat::var(x), pat::var(tl)),
      flt::comp(flt::expr(ex::pair(ex::apply(std::move(pred), ex::var(x)), ex::var(tl))),
                flt::alt(std::move(keep), std::move(drop))));
  return flt::rec(X, flt::alt(nil_arm(eng), std::move(cons)));
}

// F is applied to each element; the results are collected in order.
inline FilterPtr transform_of(TypeEngine& eng, FilterPtr body) {
  std::string X = detail::fresh_rec("Transform");
  std::string x = detail::fresh_name(), tl = detail::fresh_name();
  FilterPtr cons = flt::arrow(
      pat::pair(pat::var(x), pat::var(tl)),
      flt::product(flt::expr(ex::apply(std::move(body), ex::var(x))),
                   flt::call(X, ex::var(tl))));
  return flt::rec(X, flt::alt(nil_arm(eng), std::move(cons)));
}

// Flattens one level: a sequence of sequences into the concatenation.
inline FilterPtr expand_filter(TypeEngine& eng) {
  std::string X = detail::fresh_rec("Expand");
  std::string x = detail::fresh_name(), xs = detail::fresh_name(), tl = detail::fresh_name();
  FilterPtr empty_head = flt::arrow(
      pat::pair(pat::type(eng.singleton(Value::nil())), pat::var(tl)), flt::call(X, ex::var(tl)));
  FilterPtr cons_head = flt::arrow(
      pat::pair(pat::pair(pat::var(x), pat::var(xs)), pat::var(tl)),
      flt::product(flt::expr(ex::var(x)), flt::call(X, ex::pair(ex::var(xs), ex::var(tl)))));
  return flt::rec(X, flt::alt(nil_arm(eng), flt::alt(std::move(empty_head), std::move(cons_head))));
}

// First element of a sequence, or `null when it is empty.
inline FilterPtr head_filter(TypeEngine& eng) {
  std::string x = detail::fresh_name(), xs = detail::fresh_name();
  return flt::alt(
      flt::arrow(pat::type(eng.singleton(Value::nil())), flt::expr(ex::constant(Value::null()))),
      flt::arrow(pat::pair(pat::var(x), pat::var(xs)), flt::expr(ex::var(x))));
}

// Rest of a sequence; empty stays empty so indexing past the end yields null.
inline FilterPtr tail_filter(TypeEngine& eng) {
  std::string x = detail::fresh_name(), xs = detail::fresh_name();
  return flt::alt(
      nil_arm(eng),
      flt::arrow(pat::pair(pat::var(x), pat::var(xs)), flt::expr(ex::var(xs))));
}

// Keeps the payloads of the elements tagged (i, payload), dropping the rest.
inline FilterPtr group_split_filter(TypeEngine& eng, int64_t tag) {
  std::string X = detail::fresh_rec("Split");
  std::string x = detail::fresh_name(), tail = detail::fresh_name();
  FilterPtr take = flt::arrow(
      pat::pair(pat::pair(pat::type(eng.singleton(Value::integer(tag))), pat::var(x)), pat::var(tail)),
      flt::product(flt::expr(ex::var(x)), flt::call(X, ex::var(tail))));
  FilterPtr skip = flt::arrow(pat::pair(pat::type(kNodeAny), pat::var(tail)),
                              flt::call(X, ex::var(tail)));
  return flt::rec(X, flt::alt(nil_arm(eng), flt::alt(std::move(take), std::move(skip))));
}

// Lenient field selection: records yield the field (or null when absent or
// when the value is null itself), sequences are mapped element-wise.
inline FilterPtr lenient_field(TypeEngine& eng, const std::string& label) {
  std::string X = detail::fresh_rec(("Dot_" + label).c_str());
  std::string x = detail::fresh_name(), h = detail::fresh_name(), t = detail::fresh_name();
  FilterPtr present = flt::arrow(pat::record({{label, pat::var(x)}}, /*open=*/true),
                                 flt::expr(ex::var(x)));
  FilterPtr empty = nil_arm(eng);
  FilterPtr absent = flt::arrow(
      pat::alt(pat::record({}, /*open=*/true), pat::type(eng.singleton(Value::null()))),
      flt::expr(ex::constant(Value::null())));
  FilterPtr seq = flt::arrow(pat::pair(pat::var(h), pat::var(t)),
                             flt::product(flt::call(X, ex::var(h)), flt::call(X, ex::var(t))));
  return flt::rec(X, flt::alt(std::move(present),
                              flt::alt(std::move(empty),
                                       flt::alt(std::move(absent), std::move(seq)))));
}

// ---------------------------------------------------------------------------
// Source AST.

struct Stage;
struct Term;
using TermPtr = std::shared_ptr<const Term>;
using StagePtr = std::shared_ptr<const Stage>;

struct Stage {
  enum class Kind { Filter, Transform, Expand, Group };
  Kind kind;
  Span span;
  std::string binder;  // `each x`; empty means the default binder `$`
  TermPtr body;        // predicate / element body; null for a plain `expand`
  // group clauses
  bool has_by = false;
  std::string key_var;  // `by k = e` binds k to the key inside `into`
  TermPtr key;          // null for `group into e` (constant-true key)
  std::string as_var;   // group list binder inside `into`; empty means `$`
  TermPtr into;
};

struct Term {
  enum class Kind { Const, Var, Dollar, Array, Record, Field, Index, Op, Pipe, CoGroup };
  Kind kind;
  Span span;
  Value constant{};
  std::string name;  // Var name, Field label, Op name
  std::vector<TermPtr> items;
  struct RField {
    TermPtr label_expr;  // null for a literal label
    std::string label;
    TermPtr value;
  };
  std::vector<RField> rfields;
  TermPtr base;  // Field / Index / Pipe
  int64_t index = 0;
  std::vector<StagePtr> stages;  // Pipe
  struct CoInput {
    TermPtr src;
    std::string key_var;
    TermPtr key;
    std::string as_var;
    Span span;
  };
  std::vector<CoInput> inputs;  // CoGroup
  TermPtr into;                 // CoGroup
};

// ---------------------------------------------------------------------------
// Parsed and translated program.

struct ProgramStage {
  std::string label;  // "filter", "transform", "expand", "group", ...
  FilterPtr f;
  Span span;
};

struct Program {
  // Declared inputs in source order; the driver binds them as a tuple.
  std::vector<std::pair<std::string, NodeId>> inputs;
  std::map<std::string, NodeId> named_types;
  ExprPtr initial;                   // produces the value entering the pipeline
  std::vector<ProgramStage> stages;  // applied in order to the initial value
};

// ---------------------------------------------------------------------------
// Lexer.

namespace detail {

enum class Tok {
  End, Ident, Dollar, Int, Float, Str,
  LParen, RParen, LBrack, RBrack, LBrace, RBrace,
  Comma, Colon, Semi, Dot, Arrow, Assign,
  Plus, Minus, Star, Slash, At, Lt, Le, Gt, Ge, EqEq, Ne,
  KwFilter, KwTransform, KwExpand, KwGroup, KwEach, KwBy, KwAs, KwInto,
  KwAnd, KwOr, KwNot, KwTrue, KwFalse, KwNull,
};

struct Token {
  Tok kind = Tok::End;
  std::string text;
  size_t begin = 0, end = 0;
  int64_t int_val = 0;
  double float_val = 0;
};

inline bool word_start(char c) { return std::isalpha((unsigned char)c) || c == '_'; }
inline bool word_char(char c) { return std::isalnum((unsigned char)c) || c == '_'; }

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_blank();
      Token t = scan();
      bool end = t.kind == Tok::End;
      out.push_back(std::move(t));
      if (end) return out;
    }
  }

 private:
  void skip_blank() {
    for (;;) {
      while (pos_ < src_.size() && std::isspace((unsigned char)src_[pos_])) ++pos_;
      if (pos_ + 1 < src_.size() && src_[pos_] == '/' && src_[pos_ + 1] == '/') {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
        continue;
      }
      if (pos_ < src_.size() && src_[pos_] == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
        continue;
      }
      return;
    }
  }

  [[noreturn]] void fail(const std::string& msg, size_t at) {
    throw ParseError{msg, detail::src_span(at, at + 1)};
  }

  Token scan() {
    Token t;
    t.begin = pos_;
    if (pos_ >= src_.size()) {
      t.kind = Tok::End;
      t.end = pos_;
      return t;
    }
    char c = src_[pos_];
    auto two = [&](char a, char b) {
      return c == a && pos_ + 1 < src_.size() && src_[pos_ + 1] == b;
    };
    if (word_start(c)) {
      size_t b = pos_;
      while (pos_ < src_.size() && word_char(src_[pos_])) ++pos_;
      t.text = src_.substr(b, pos_ - b);
      t.end = pos_;
      t.kind = keyword(t.text);
      return t;
    }
    if (std::isdigit((unsigned char)c)) return number();
    if (c == '"') return string_lit();
    if (c == '$') { ++pos_; t.kind = Tok::Dollar; t.end = pos_; t.text = "$"; return t; }
    if (two('-', '>')) { pos_ += 2; t.kind = Tok::Arrow; t.end = pos_; return t; }
    if (two('<', '=')) { pos_ += 2; t.kind = Tok::Le; t.end = pos_; return t; }
    if (two('>', '=')) { pos_ += 2; t.kind = Tok::Ge; t.end = pos_; return t; }
    if (two('=', '=')) { pos_ += 2; t.kind = Tok::EqEq; t.end = pos_; return t; }
    if (two('!', '=')) { pos_ += 2; t.kind = Tok::Ne; t.end = pos_; return t; }
    ++pos_;
    t.end = pos_;
    switch (c) {
      case '(': t.kind = Tok::LParen; return t;
      case ')': t.kind = Tok::RParen; return t;
      case '[': t.kind = Tok::LBrack; return t;
      case ']': t.kind = Tok::RBrack; return t;
      case '{': t.kind = Tok::LBrace; return t;
      case '}': t.kind = Tok::RBrace; return t;
      case ',': t.kind = Tok::Comma; return t;
      case ':': t.kind = Tok::Colon; return t;
      case ';': t.kind = Tok::Semi; return t;
      case '.': t.kind = Tok::Dot; return t;
      case '=': t.kind = Tok::Assign; return t;
      case '+': t.kind = Tok::Plus; return t;
      case '-': t.kind = Tok::Minus; return t;
      case '*': t.kind = Tok::Star; return t;
      case '/': t.kind = Tok::Slash; return t;
      case '@': t.kind = Tok::At; return t;
      case '<': t.kind = Tok::Lt; return t;
      case '>': t.kind = Tok::Gt; return t;
      default: fail("unexpected character", t.begin);
    }
  }

  static Tok keyword(const std::string& w) {
    if (w == "filter") return Tok::KwFilter;
    if (w == "transform") return Tok::KwTransform;
    if (w == "expand") return Tok::KwExpand;
    if (w == "group") return Tok::KwGroup;
    if (w == "each") return Tok::KwEach;
    if (w == "by") return Tok::KwBy;
    if (w == "as") return Tok::KwAs;
    if (w == "into") return Tok::KwInto;
    if (w == "and") return Tok::KwAnd;
    if (w == "or") return Tok::KwOr;
    if (w == "not") return Tok::KwNot;
    if (w == "true") return Tok::KwTrue;
    if (w == "false") return Tok::KwFalse;
    if (w == "null") return Tok::KwNull;
    return Tok::Ident;
  }

  Token number() {
    Token t;
    t.begin = pos_;
    size_t b = pos_;
    while (pos_ < src_.size() && std::isdigit((unsigned char)src_[pos_])) ++pos_;
    bool is_float = false;
    if (pos_ + 1 < src_.size() && src_[pos_] == '.' &&
        std::isdigit((unsigned char)src_[pos_ + 1])) {
      is_float = true;
      ++pos_;
      while (pos_ < src_.size() && std::isdigit((unsigned char)src_[pos_])) ++pos_;
    }
    t.text = src_.substr(b, pos_ - b);
    t.end = pos_;
    if (is_float) {
      t.kind = Tok::Float;
      t.float_val = std::stod(t.text);
    } else {
      t.kind = Tok::Int;
      try {
        t.int_val = std::stoll(t.text);
      } catch (const std::out_of_range&) {
        fail("integer literal out of range", b);
      }
    }
    return t;
  }

  Token string_lit() {
    Token t;
    t.begin = pos_;
    ++pos_;  // opening quote
    std::string s;
    while (pos_ < src_.size() && src_[pos_] != '"') {
      char c = src_[pos_++];
      if (c == '\\') {
        if (pos_ >= src_.size()) fail("unterminated string", t.begin);
        char e = src_[pos_++];
        switch (e) {
          case 'n': s += '\n'; break;
          case 't': s += '\t'; break;
          case '\\': s += '\\'; break;
          case '"': s += '"'; break;
          default: fail("unknown escape in string", pos_ - 1);
        }
      } else {
        s += c;
      }
    }
    if (pos_ >= src_.size()) fail("unterminated string", t.begin);
    ++pos_;  // closing quote
    t.kind = Tok::Str;
    t.text = std::move(s);
    t.end = pos_;
    return t;
  }

  const std::string& src_;
  size_t pos_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Parser + translation.

class Parser {
 public:
  Parser(std::string src, TypeEngine& eng) : src_(std::move(src)), eng_(eng) {}

  Program parse_program() {
    Program prog;
    parse_headers(prog);
    std::string body = src_;
    for (size_t i = 0; i < body_begin_; ++i)
      if (body[i] != '\n') body[i] = ' ';
    toks_ = detail::Lexer(body).run();
    pos_ = 0;

    TermPtr root = parse_expr();
    if (at(detail::Tok::Semi)) next();
    if (!at(detail::Tok::End)) fail("expected end of program", peek().begin);

    for (const auto& [name, ty] : prog.inputs) globals_.insert(name);
    assemble(prog, root);
    return prog;
  }

 private:
  using Tok = detail::Tok;
  using Token = detail::Token;

  // -- headers ---------------------------------------------------------------
  //
  // `type N = <type>;` and `declare x : <type>;` share one type-name scope.
  // The type sub-grammar is the host language's; rather than duplicating it,
  // the headers are re-assembled into a host-syntax prelude and parsed with
  // the host parser, mapping error locations back through a segment table.

  struct Segment {
    size_t synth_begin, synth_end, src_begin;
  };

  void parse_headers(Program& prog) {
    size_t pos = 0;
    std::string synth;
    std::vector<Segment> segs;
    std::vector<std::pair<std::string, std::string>> declares;  // name, slot type name
    auto skip_blank = [&] {
      for (;;) {
        while (pos < src_.size() && std::isspace((unsigned char)src_[pos])) ++pos;
        if (pos + 1 < src_.size() && src_[pos] == '/' && src_[pos + 1] == '/') {
          while (pos < src_.size() && src_[pos] != '\n') ++pos;
          continue;
        }
        if (pos < src_.size() && src_[pos] == '#') {
          while (pos < src_.size() && src_[pos] != '\n') ++pos;
          continue;
        }
        return;
      }
    };
    auto word_at = [&](const char* w) {
      size_t n = std::strlen(w);
      if (src_.compare(pos, n, w) != 0) return false;
      if (pos + n < src_.size() && detail::word_char(src_[pos + n])) return false;
      return true;
    };
    auto take_word = [&] {
      size_t b = pos;
      while (pos < src_.size() && detail::word_char(src_[pos])) ++pos;
      return src_.substr(b, pos - b);
    };
    auto copy_to_semi = [&]() {
      // Types never contain ';' or string literals, so the raw scan is safe.
      size_t b = pos;
      while (pos < src_.size() && src_[pos] != ';') ++pos;
      if (pos >= src_.size()) fail("missing ';' after header", b);
      segs.push_back({synth.size(), synth.size() + (pos - b), b});
      synth += src_.substr(b, pos - b);
      ++pos;  // ';'
      synth += ";\n";
    };

    int decl_count = 0;
    for (;;) {
      skip_blank();
      size_t stmt_begin = pos;
      if (word_at("type")) {
        take_word();
        skip_blank();
        size_t name_at = pos;
        std::string name = take_word();
        if (name.empty() || !std::isupper((unsigned char)name[0]))
          fail("type names start with an uppercase letter", name_at);
        if (name.rfind("JqIn", 0) == 0)
          fail("type names starting with 'JqIn' are reserved", name_at);
        named_order_.push_back(name);
        skip_blank();
        if (pos >= src_.size() || src_[pos] != '=') fail("expected '=' in type header", pos);
        ++pos;
        synth += "type " + name + " = ";
        copy_to_semi();
        continue;
      }
      if (word_at("declare")) {
        take_word();
        skip_blank();
        size_t name_at = pos;
        std::string name = take_word();
        if (name.empty()) fail("expected a name after 'declare'", name_at);
        for (const auto& [n, s] : declares)
          if (n == name) fail("duplicate declaration of '" + name + "'", name_at);
        skip_blank();
        if (pos >= src_.size() || src_[pos] != ':') fail("expected ':' in declare header", pos);
        ++pos;
        std::string slot = "JqIn" + std::to_string(decl_count++);
        declares.push_back({name, slot});
        synth += "type " + slot + " = ";
        copy_to_semi();
        continue;
      }
      pos = stmt_begin;
      break;
    }
    body_begin_ = pos;

    if (!synth.empty() || !declares.empty()) {
      synth += "_ => `nil\n";
      try {
        fcalc::Parser host(synth, eng_);
        fcalc::Program hp = host.parse_program();
        for (const auto& name : named_order_) prog.named_types[name] = hp.named_types.at(name);
        for (const auto& [name, slot] : declares)
          prog.inputs.push_back({name, hp.named_types.at(slot)});
      } catch (ParseError& e) {
        e.span = remap(segs, e.span);
        throw;
      }
    }
  }

  static Span remap(const std::vector<Segment>& segs, Span s) {
    for (const auto& g : segs) {
      if (s.begin >= g.synth_begin && s.begin < g.synth_end) {
        size_t off = s.begin - g.synth_begin;
        size_t len = s.end > s.begin ? s.end - s.begin : 1;
        return detail::src_span(g.src_begin + off, g.src_begin + off + len);
      }
    }
    // Error in generated glue: point at the nearest following segment.
    for (const auto& g : segs)
      if (g.synth_begin >= s.begin) return detail::src_span(g.src_begin, g.src_begin + 1);
    return detail::src_span(0, 1);
  }

  // -- token plumbing ---------------------------------------------------------

  const Token& peek(size_t k = 0) const {
    size_t i = pos_ + k;
    if (i >= toks_.size()) i = toks_.size() - 1;
    return toks_[i];
  }
  bool at(Tok k, size_t ahead = 0) const { return peek(ahead).kind == k; }
  Token next() {
    Token t = peek();
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }
  void expect(Tok k, const char* what) {
    if (!at(k)) fail(std::string("expected ") + what, peek().begin);
    next();
  }
  [[noreturn]] void fail(const std::string& msg, size_t begin) const {
    throw ParseError{msg, detail::src_span(begin, begin + 1)};
  }
  Span span_from(size_t begin) const {
    size_t end = pos_ > 0 ? toks_[pos_ - 1].end : begin + 1;
    if (end <= begin) end = begin + 1;
    return detail::src_span(begin, end);
  }

  static std::shared_ptr<Term> mk(Term::Kind k, Span s) {
    auto t = std::make_shared<Term>();
    t->kind = k;
    t->span = s;
    return t;
  }

  // -- expression grammar ------------------------------------------------------

  TermPtr parse_expr() {
    if (at(Tok::KwGroup)) {
      TermPtr g = parse_group_expr();
      return parse_pipe_tail(std::move(g));
    }
    TermPtr e = parse_or();
    return parse_pipe_tail(std::move(e));
  }

  TermPtr parse_pipe_tail(TermPtr base) {
    if (!at(Tok::Arrow)) return base;
    size_t b = base->span.begin;
    auto pipe = mk(Term::Kind::Pipe, base->span);
    pipe->base = std::move(base);
    while (at(Tok::Arrow)) {
      next();
      pipe->stages.push_back(parse_stage());
    }
    pipe->span = span_from(b);
    return pipe;
  }

  // `group ...` at expression level: either the single-input core form used
  // as a leading stage, or the multi-input co-grouping form.
  TermPtr parse_group_expr() {
    size_t b = peek().begin;
    if (at(Tok::KwEach, 1) || at(Tok::KwBy, 1) || at(Tok::KwInto, 1))
      fail("a group stage needs a piped input; write 'e -> group ...'", b);
    next();  // group
    auto g = mk(Term::Kind::CoGroup, detail::src_span(b, b + 5));
    for (;;) {
      Term::CoInput in;
      size_t ib = peek().begin;
      in.src = parse_or();
      expect(Tok::KwBy, "'by' in group input");
      Token kv = next();
      if (kv.kind != Tok::Ident) fail("expected a key variable name after 'by'", kv.begin);
      in.key_var = kv.text;
      expect(Tok::Assign, "'=' after the key variable");
      in.key = parse_or();
      if (at(Tok::KwAs)) {
        next();
        Token av = next();
        if (av.kind != Tok::Ident) fail("expected a name after 'as'", av.begin);
        in.as_var = av.text;
      }
      in.span = span_from(ib);
      g->inputs.push_back(std::move(in));
      if (at(Tok::Comma)) {
        next();
        continue;
      }
      break;
    }
    expect(Tok::KwInto, "'into' to close the group");
    g->into = parse_or();
    g->span = span_from(b);
    for (const auto& in : g->inputs)
      if (in.key_var != g->inputs.front().key_var)
        fail("all group inputs must bind the same key variable", g->span.begin);
    if (g->inputs.size() > 1)
      for (const auto& in : g->inputs)
        if (in.as_var.empty())
          fail("every input of a multi-input group needs an 'as' name", g->span.begin);
    return g;
  }

  StagePtr parse_stage() {
    size_t b = peek().begin;
    auto st = std::make_shared<Stage>();
    switch (peek().kind) {
      case Tok::KwFilter:
      case Tok::KwTransform: {
        st->kind = at(Tok::KwFilter) ? Stage::Kind::Filter : Stage::Kind::Transform;
        next();
        st->binder = parse_each_clause();
        st->body = parse_or();
        break;
      }
      case Tok::KwExpand: {
        st->kind = Stage::Kind::Expand;
        next();
        st->binder = parse_each_clause();
        if (!st->binder.empty() || starts_expr()) st->body = parse_or();
        break;
      }
      case Tok::KwGroup: {
        st->kind = Stage::Kind::Group;
        next();
        st->binder = parse_each_clause();
        if (at(Tok::KwBy)) {
          next();
          st->has_by = true;
          Token kv = next();
          if (kv.kind != Tok::Ident) fail("expected a key variable name after 'by'", kv.begin);
          st->key_var = kv.text;
          expect(Tok::Assign, "'=' after the key variable");
          st->key = parse_or();
        }
        if (at(Tok::KwAs)) {
          next();
          Token av = next();
          if (av.kind != Tok::Ident) fail("expected a name after 'as'", av.begin);
          st->as_var = av.text;
        }
        expect(Tok::KwInto, "'into' in the group stage");
        st->into = parse_or();
        break;
      }
      default:
        fail("expected a pipeline stage (filter, transform, expand, or group)", b);
    }
    st->span = span_from(b);
    return st;
  }

  std::string parse_each_clause() {
    if (!at(Tok::KwEach)) return {};
    next();
    Token t = next();
    if (t.kind != Tok::Ident) fail("expected a binder name after 'each'", t.begin);
    return t.text;
  }

  bool starts_expr() const {
    switch (peek().kind) {
      case Tok::Ident: case Tok::Dollar: case Tok::Int: case Tok::Float: case Tok::Str:
      case Tok::LParen: case Tok::LBrack: case Tok::LBrace: case Tok::Minus:
      case Tok::KwNot: case Tok::KwTrue: case Tok::KwFalse: case Tok::KwNull:
        return true;
      default:
        return false;
    }
  }

  TermPtr parse_or() {
    size_t b = peek().begin;
    TermPtr e = parse_and();
    while (at(Tok::KwOr)) {
      next();
      TermPtr r = parse_and();
      auto n = mk(Term::Kind::Op, span_from(b));
      n->name = "or";
      n->items = {std::move(e), std::move(r)};
      e = std::move(n);
    }
    return e;
  }

  TermPtr parse_and() {
    size_t b = peek().begin;
    TermPtr e = parse_cmp();
    while (at(Tok::KwAnd)) {
      next();
      TermPtr r = parse_cmp();
      auto n = mk(Term::Kind::Op, span_from(b));
      n->name = "and";
      n->items = {std::move(e), std::move(r)};
      e = std::move(n);
    }
    return e;
  }

  TermPtr parse_cmp() {
    size_t b = peek().begin;
    TermPtr e = parse_add();
    const char* op = nullptr;
    switch (peek().kind) {
      case Tok::Lt: op = "<"; break;
      case Tok::Le: op = "<="; break;
      case Tok::Gt: op = ">"; break;
      case Tok::Ge: op = ">="; break;
      case Tok::EqEq: op = "=="; break;
      case Tok::Ne: op = "!="; break;
      default: return e;
    }
    next();
    TermPtr r = parse_add();
    auto n = mk(Term::Kind::Op, span_from(b));
    n->name = op;
    n->items = {std::move(e), std::move(r)};
    return n;
  }

  TermPtr parse_add() {
    size_t b = peek().begin;
    TermPtr e = parse_mul();
    for (;;) {
      const char* op = nullptr;
      if (at(Tok::Plus)) op = "+";
      else if (at(Tok::Minus)) op = "-";
      else if (at(Tok::At)) op = "@";
      else return e;
      next();
      TermPtr r = parse_mul();
      auto n = mk(Term::Kind::Op, span_from(b));
      n->name = op;
      n->items = {std::move(e), std::move(r)};
      e = std::move(n);
    }
  }

  TermPtr parse_mul() {
    size_t b = peek().begin;
    TermPtr e = parse_unary();
    for (;;) {
      const char* op = nullptr;
      if (at(Tok::Star)) op = "*";
      else if (at(Tok::Slash)) op = "/";
      else return e;
      next();
      TermPtr r = parse_unary();
      auto n = mk(Term::Kind::Op, span_from(b));
      n->name = op;
      n->items = {std::move(e), std::move(r)};
      e = std::move(n);
    }
  }

  TermPtr parse_unary() {
    size_t b = peek().begin;
    if (at(Tok::Minus)) {
      next();
      if (at(Tok::Int)) {
        Token t = next();
        auto n = mk(Term::Kind::Const, span_from(b));
        n->constant = Value::integer(-t.int_val);
        return n;
      }
      if (at(Tok::Float)) {
        Token t = next();
        auto n = mk(Term::Kind::Const, span_from(b));
        n->constant = Value::real(-t.float_val);
        return n;
      }
      TermPtr e = parse_unary();
      auto n = mk(Term::Kind::Op, span_from(b));
      n->name = "neg";
      n->items = {std::move(e)};
      return n;
    }
    if (at(Tok::KwNot)) {
      next();
      TermPtr e = parse_unary();
      auto n = mk(Term::Kind::Op, span_from(b));
      n->name = "not";
      n->items = {std::move(e)};
      return n;
    }
    return parse_postfix();
  }

  TermPtr parse_postfix() {
    size_t b = peek().begin;
    TermPtr e = parse_primary();
    for (;;) {
      if (at(Tok::Dot)) {
        next();
        Token l = next();
        if (l.text.empty()) fail("expected a field name after '.'", l.begin);
        auto n = mk(Term::Kind::Field, span_from(b));
        n->name = l.text;
        n->base = std::move(e);
        e = std::move(n);
        continue;
      }
      if (at(Tok::LBrack)) {
        next();
        Token ix = next();
        if (ix.kind != Tok::Int || ix.int_val < 0)
          fail("indexing takes a non-negative integer literal", ix.begin);
        expect(Tok::RBrack, "']' after the index");
        auto n = mk(Term::Kind::Index, span_from(b));
        n->index = ix.int_val;
        n->base = std::move(e);
        e = std::move(n);
        continue;
      }
      break;
    }
    return e;
  }

  TermPtr parse_primary() {
    size_t b = peek().begin;
    switch (peek().kind) {
      case Tok::Int: {
        Token t = next();
        auto n = mk(Term::Kind::Const, span_from(b));
        n->constant = Value::integer(t.int_val);
        return n;
      }
      case Tok::Float: {
        Token t = next();
        auto n = mk(Term::Kind::Const, span_from(b));
        n->constant = Value::real(t.float_val);
        return n;
      }
      case Tok::Str: {
        Token t = next();
        auto n = mk(Term::Kind::Const, span_from(b));
        n->constant = Value::string(t.text);
        return n;
      }
      case Tok::KwTrue:
      case Tok::KwFalse: {
        bool v = at(Tok::KwTrue);
        next();
        auto n = mk(Term::Kind::Const, span_from(b));
        n->constant = Value::boolean(v);
        return n;
      }
      case Tok::KwNull: {
        next();
        auto n = mk(Term::Kind::Const, span_from(b));
        n->constant = Value::null();
        return n;
      }
      case Tok::Dollar: {
        next();
        return mk(Term::Kind::Dollar, span_from(b));
      }
      case Tok::Ident: {
        Token t = next();
        if (at(Tok::LParen)) {
          next();
          auto n = mk(Term::Kind::Op, Span{});
          n->name = t.text;
          if (!at(Tok::RParen)) {
            n->items.push_back(parse_expr());
            while (at(Tok::Comma)) {
              next();
              n->items.push_back(parse_expr());
            }
          }
          expect(Tok::RParen, "')' after the arguments");
          n->span = span_from(b);
          return n;
        }
        auto n = mk(Term::Kind::Var, span_from(b));
        n->name = t.text;
        return n;
      }
      case Tok::LBrack: {
        next();
        auto n = mk(Term::Kind::Array, Span{});
        if (!at(Tok::RBrack)) {
          n->items.push_back(parse_expr());
          while (at(Tok::Comma)) {
            next();
            n->items.push_back(parse_expr());
          }
        }
        expect(Tok::RBrack, "']' after the array elements");
        n->span = span_from(b);
        return n;
      }
      case Tok::LBrace: {
        next();
        auto n = mk(Term::Kind::Record, Span{});
        if (!at(Tok::RBrace)) {
          parse_record_field(*n);
          while (at(Tok::Comma)) {
            next();
            parse_record_field(*n);
          }
        }
        expect(Tok::RBrace, "'}' after the record fields");
        n->span = span_from(b);
        return n;
      }
      case Tok::LParen: {
        next();
        TermPtr e = parse_expr();
        expect(Tok::RParen, "')'");
        return e;
      }
      default:
        fail("expected an expression", b);
    }
  }

  void parse_record_field(Term& rec) {
    Term::RField f;
    if (at(Tok::LParen)) {
      next();
      f.label_expr = parse_expr();
      expect(Tok::RParen, "')' after the computed label");
    } else if (at(Tok::Ident) || at(Tok::Str)) {
      f.label = next().text;
    } else {
      fail("expected a field label", peek().begin);
    }
    expect(Tok::Colon, "':' after the field label");
    f.value = parse_expr();
    rec.rfields.push_back(std::move(f));
  }

  // -- translation --------------------------------------------------------------

  struct ScopeEntry {
    std::string jaql_name;  // "$" for the default binder
    std::string core_name;
  };

  std::string scope_lookup(const std::string& name) const {
    for (auto it = scope_.rbegin(); it != scope_.rend(); ++it)
      if (it->jaql_name == name) return it->core_name;
    return {};
  }

  ExprPtr translate(const TermPtr& t) {
    switch (t->kind) {
      case Term::Kind::Const:
        return ex::constant(t->constant, t->span);
      case Term::Kind::Dollar: {
        std::string core = scope_lookup("$");
        if (core.empty()) fail("'$' is only available inside a pipeline stage", t->span.begin);
        return ex::var(core, t->span);
      }
      case Term::Kind::Var: {
        std::string core = scope_lookup(t->name);
        if (!core.empty()) return ex::var(core, t->span);
        if (globals_.count(t->name)) return ex::var(t->name, t->span);
        fail("unbound variable '" + t->name + "'", t->span.begin);
      }
      case Term::Kind::Array: {
        std::vector<ExprPtr> items;
        items.reserve(t->items.size());
        for (const auto& it : t->items) items.push_back(translate(it));
        return ex::list(std::move(items), t->span);
      }
      case Term::Kind::Record: {
        std::vector<Expr::Field> fs;
        fs.reserve(t->rfields.size());
        for (const auto& f : t->rfields) {
          Expr::Field out;
          if (f.label_expr) out.label_expr = translate(f.label_expr);
          out.label = f.label;
          out.value = translate(f.value);
          fs.push_back(std::move(out));
        }
        return ex::record(std::move(fs), t->span);
      }
      case Term::Kind::Field: {
        ExprPtr base = translate(t->base);
        ExprPtr out = ex::apply(lenient_field(eng_, t->name), std::move(base), t->span);
        const_cast<Expr*>(out.get())->from_field_access = true;
        const_cast<Expr*>(out.get())->label = t->name;
        return out;
      }
      case Term::Kind::Index: {
        ExprPtr base = translate(t->base);
        FilterPtr f = head_filter(eng_);
        for (int64_t i = 0; i < t->index; ++i) f = flt::comp(tail_filter(eng_), std::move(f));
        return ex::apply(std::move(f), std::move(base), t->span);
      }
      case Term::Kind::Op: {
        std::vector<ExprPtr> args;
        args.reserve(t->items.size());
        for (const auto& a : t->items) args.push_back(translate(a));
        return ex::builtin(t->name, std::move(args), t->span);
      }
      case Term::Kind::Pipe: {
        ExprPtr base = translate(t->base);
        FilterPtr chain;
        for (const auto& st : t->stages) {
          FilterPtr f = translate_stage(*st);
          chain = chain ? flt::comp(std::move(chain), std::move(f)) : std::move(f);
        }
        return ex::apply(std::move(chain), std::move(base), t->span);
      }
      case Term::Kind::CoGroup: {
        CoPieces cp = build_cogroup(*t);
        FilterPtr chain = cp.per_input;
        auto add = [&](FilterPtr f) {
          chain = chain ? flt::comp(std::move(chain), std::move(f)) : std::move(f);
        };
        add(std::move(cp.tag_merge));
        add(std::move(cp.group));
        add(std::move(cp.into));
        return ex::apply(std::move(chain), cp.inputs_list, t->span);
      }
    }
    fail("unsupported construct", t->span.begin);
  }

  FilterPtr translate_stage(const Stage& st) {
    switch (st.kind) {
      case Stage::Kind::Filter:
      case Stage::Kind::Transform: {
        std::string binder = st.binder.empty() ? "$" : st.binder;
        std::string core = detail::fresh_name();
        scope_.push_back({binder, core});
        ExprPtr body = translate(st.body);
        scope_.pop_back();
        FilterPtr f = flt::arrow(pat::var(core), flt::expr(std::move(body)));
        FilterPtr out = st.kind == Stage::Kind::Filter ? filter_of(eng_, std::move(f))
                                                       : transform_of(eng_, std::move(f));
        const_cast<Filter*>(out.get())->span = st.span;
        return out;
      }
      case Stage::Kind::Expand: {
        FilterPtr ex_f = expand_filter(eng_);
        if (!st.body) {
          const_cast<Filter*>(ex_f.get())->span = st.span;
          return ex_f;
        }
        std::string binder = st.binder.empty() ? "$" : st.binder;
        std::string core = detail::fresh_name();
        scope_.push_back({binder, core});
        ExprPtr body = translate(st.body);
        scope_.pop_back();
        FilterPtr tr =
            transform_of(eng_, flt::arrow(pat::var(core), flt::expr(std::move(body))));
        FilterPtr out = flt::comp(std::move(ex_f), std::move(tr), st.span);
        return out;
      }
      case Stage::Kind::Group: {
        std::string binder = st.binder.empty() ? "$" : st.binder;
        std::string core_x = detail::fresh_name();
        ExprPtr key_body;
        if (st.has_by) {
          scope_.push_back({binder, core_x});
          key_body = translate(st.key);
          scope_.pop_back();
        } else {
          key_body = ex::constant(Value::boolean(true));
        }
        FilterPtr key = flt::arrow(pat::var(core_x), flt::expr(std::move(key_body)));

        std::string key_var = st.has_by ? st.key_var : detail::fresh_name();
        std::string as_var = st.as_var.empty() ? "$" : st.as_var;
        std::string core_y = detail::fresh_name(), core_g = detail::fresh_name();
        scope_.push_back({key_var, core_y});
        scope_.push_back({as_var, core_g});
        ExprPtr into = translate(st.into);
        scope_.pop_back();
        scope_.pop_back();
        FilterPtr shape = flt::arrow(pat::pair(pat::var(core_y), pat::var(core_g)),
                                     flt::expr(std::move(into)));
        return flt::comp(flt::groupby(std::move(key)), transform_of(eng_, std::move(shape)),
                         st.span);
      }
    }
    fail("unsupported stage", st.span.begin);
  }

  struct CoPieces {
    ExprPtr inputs_list;
    FilterPtr per_input;  // null when no input carries its own stages
    FilterPtr tag_merge;
    FilterPtr group;
    FilterPtr into;
  };

  // A fixed-width list of filters: applies f_i to the i-th element of an
  // n-element sequence.
  FilterPtr list_of_filters(std::vector<FilterPtr> fs) {
    FilterPtr out = nil_arm(eng_);
    for (auto it = fs.rbegin(); it != fs.rend(); ++it)
      out = flt::product(std::move(*it), std::move(out));
    return out;
  }

  FilterPtr identity_filter() {
    std::string w = detail::fresh_name();
    return flt::arrow(pat::var(w), flt::expr(ex::var(w)));
  }

  CoPieces build_cogroup(const Term& t) {
    CoPieces cp;
    size_t n = t.inputs.size();

    // Stage 0: the raw inputs, with any per-input pipelines peeled off.
    std::vector<ExprPtr> bases;
    std::vector<FilterPtr> chains;
    bool any_chain = false;
    for (const auto& in : t.inputs) {
      if (in.src->kind == Term::Kind::Pipe) {
        bases.push_back(translate(in.src->base));
        FilterPtr chain;
        for (const auto& st : in.src->stages) {
          FilterPtr f = translate_stage(*st);
          chain = chain ? flt::comp(std::move(chain), std::move(f)) : std::move(f);
        }
        chains.push_back(std::move(chain));
        any_chain = true;
      } else {
        bases.push_back(translate(in.src));
        chains.push_back(nullptr);
      }
    }
    cp.inputs_list = ex::list(std::move(bases), t.span);

    if (any_chain) {
      std::vector<FilterPtr> fs;
      for (auto& c : chains) fs.push_back(c ? std::move(c) : identity_filter());
      cp.per_input = list_of_filters(std::move(fs));
    }

    // Tag every element with its input's position and merge the sequences.
    std::vector<FilterPtr> tags;
    for (size_t i = 0; i < n; ++i) {
      std::string x = detail::fresh_name();
      tags.push_back(transform_of(
          eng_, flt::arrow(pat::var(x), flt::expr(ex::pair(
                                            ex::constant(Value::integer((int64_t)(i + 1))),
                                            ex::var(x))))));
    }
    cp.tag_merge = flt::comp(list_of_filters(std::move(tags)), expand_filter(eng_));

    // Group by the per-input keys, dispatching on the tag.
    FilterPtr key;
    for (size_t i = 0; i < n; ++i) {
      std::string v = detail::fresh_name();
      scope_.push_back({"$", v});
      ExprPtr k = translate(t.inputs[i].key);
      scope_.pop_back();
      FilterPtr arm = flt::arrow(
          pat::pair(pat::type(eng_.singleton(Value::integer((int64_t)(i + 1)))), pat::var(v)),
          flt::expr(std::move(k)));
      key = key ? flt::alt(std::move(key), std::move(arm)) : std::move(arm);
    }
    cp.group = flt::groupby(std::move(key));

    // Split each group back into the per-input sub-sequences and build the
    // output from the `into` expression.
    std::string key_var = t.inputs.front().key_var;
    std::string core_y = detail::fresh_name(), core_l = detail::fresh_name();
    std::vector<ExprPtr> splits;
    for (size_t i = 0; i < n; ++i)
      splits.push_back(
          ex::apply(group_split_filter(eng_, (int64_t)(i + 1)), ex::var(core_l)));

    PatternPtr subgroups = pat::type(eng_.singleton(Value::nil()));
    std::vector<std::string> core_g(n);
    for (size_t i = n; i-- > 0;) {
      core_g[i] = detail::fresh_name();
      subgroups = pat::pair(pat::var(core_g[i]), std::move(subgroups));
    }

    scope_.push_back({key_var, core_y});
    for (size_t i = 0; i < n; ++i)
      scope_.push_back({t.inputs[i].as_var.empty() ? "$" : t.inputs[i].as_var, core_g[i]});
    ExprPtr into = translate(t.into);
    for (size_t i = 0; i <= n; ++i) scope_.pop_back();

    FilterPtr shape = flt::arrow(
        pat::pair(pat::var(core_y), pat::var(core_l)),
        flt::comp(flt::expr(ex::list(std::move(splits))),
                  flt::arrow(std::move(subgroups), flt::expr(std::move(into)))));
    cp.into = transform_of(eng_, std::move(shape));
    return cp;
  }

  // -- program assembly -----------------------------------------------------------

  void assemble(Program& prog, const TermPtr& root) {
    const Term* r = root.get();
    std::vector<StagePtr> pipe_stages;
    if (r->kind == Term::Kind::Pipe) {
      pipe_stages = r->stages;
      r = r->base.get();
    }
    if (r->kind == Term::Kind::CoGroup && r->inputs.size() > 1) {
      CoPieces cp = build_cogroup(*r);
      prog.initial = cp.inputs_list;
      if (cp.per_input) prog.stages.push_back({"per-input filters", cp.per_input, r->span});
      prog.stages.push_back({"tag and merge", cp.tag_merge, r->span});
      prog.stages.push_back({"group", cp.group, r->span});
      prog.stages.push_back({"into", cp.into, r->span});
    } else if (r->kind == Term::Kind::CoGroup) {
      // Single-input group written in the standalone form: treat the input
      // as the pipeline source and group as its first stage.
      const Term::CoInput& in = r->inputs.front();
      const Term* src = in.src.get();
      if (src->kind == Term::Kind::Pipe) {
        prog.initial = translate(src->base);
        for (const auto& st : src->stages)
          prog.stages.push_back({stage_label(st->kind), translate_stage(*st), st->span});
      } else {
        prog.initial = translate(in.src);
      }
      Stage g;
      g.kind = Stage::Kind::Group;
      g.span = r->span;
      g.has_by = true;
      g.key_var = in.key_var;
      g.key = in.key;
      g.as_var = in.as_var;
      g.into = r->into;
      prog.stages.push_back({"group", translate_stage(g), r->span});
    } else {
      prog.initial = translate(TermPtr(root, r));
    }
    for (const auto& st : pipe_stages)
      prog.stages.push_back({stage_label(st->kind), translate_stage(*st), st->span});
  }

  static const char* stage_label(Stage::Kind k) {
    switch (k) {
      case Stage::Kind::Filter: return "filter";
      case Stage::Kind::Transform: return "transform";
      case Stage::Kind::Expand: return "expand";
      case Stage::Kind::Group: return "group";
    }
    return "stage";
  }

  std::string src_;
  TypeEngine& eng_;
  size_t body_begin_ = 0;
  std::vector<std::string> named_order_;
  std::vector<Token> toks_;
  size_t pos_ = 0;
  std::vector<ScopeEntry> scope_;
  std::set<std::string> globals_;
};

inline Program parse_program(std::string src, TypeEngine& eng) {
  return Parser(std::move(src), eng).parse_program();
}

}  // namespace fcalc::jaql
