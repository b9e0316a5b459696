#pragma once

// Surface language for filters. A program is a run of headers followed by
// one filter:
//
//   type Depts = [({size?: int, ..} | Depts)*];
//   let filter Keep[P] = rec X. (`nil => `nil | (h, t) => ...);
//   input : [int*];
//   rec X. ((x, (y, z)) => (y, X((x, z))) | w => w)
//
// Expressions are the preferred reading wherever both an expression and a
// filter parse (pairs, records), matching how the calculus treats
// expressions as a syntactic subclass of filters. Recursion binders are
// alpha-renamed to globally unique names at parse time so memoization keys
// never collide across nested or reused binders.
//
// Branch extent: '|' separates union arms and binds loosest. The branches of
// if/then/else parse a single filter (parenthesize a union or composition to
// nest one there); the body of let..in extends through ';' but also stops at
// '|'. 'rec X. f' extends to the closing delimiter, which reads naturally
// for its usual arm-list bodies.

#include <cctype>
#include <utility>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fcalc/ast.hpp"
#include "fcalc/types.hpp"
#include "fcalc/value.hpp"

namespace fcalc {

struct ParseError {
  std::string message;
  Span span;
};

struct Program {
  FilterPtr main;
  std::optional<NodeId> input_type;
  std::map<std::string, NodeId> named_types;
};

namespace detail {

enum class Tok : uint8_t {
  End, Ident, TypeName, Atom, Int, Float, Str, Char,
  LParen, RParen, LBrack, RBrack, LBrace, RBrace,
  Comma, Semi, Colon, ColonEq, Dot, DotDot, Arrow, Bar, Amp, Tilde,
  Star, Plus, Question, Assign, Backslash,
  Lt, Le, Gt, Ge, EqEq, Ne, At, Minus, Slash,
  KwType, KwLet, KwFilter, KwInput, KwRec, KwIf, KwThen, KwElse, KwIn,
  KwGroupBy, KwOrderBy, KwAs, KwAnd, KwOr, KwNot,
  KwInt, KwFloat, KwString, KwChar, KwBool, KwAtomT, KwAny, KwEmpty,
  KwTrue, KwFalse, KwNull, KwNil, Underscore,
};

struct Token {
  Tok kind;
  std::string text;
  uint32_t begin, end;
  int64_t int_val{};
  double float_val{};
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_ws();
      uint32_t b = pos_;
      if (pos_ >= src_.size()) {
        out.push_back({Tok::End, "", b, b});
        return out;
      }
      char c = src_[pos_];
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        out.push_back(word());
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(c))) {
        out.push_back(number(false));
        continue;
      }
      switch (c) {
        case '`': out.push_back(atom_tok()); continue;
        case '"': out.push_back(string_tok()); continue;
        case '\'': out.push_back(char_tok()); continue;
        case '#': while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_; continue;
        default: break;
      }
      auto two = [&](char d) { return pos_ + 1 < src_.size() && src_[pos_ + 1] == d; };
      auto emit = [&](Tok k, uint32_t len) {
        out.push_back({k, std::string(src_.substr(pos_, len)), pos_, pos_ + len});
        pos_ += len;
      };
      switch (c) {
        case '(': emit(Tok::LParen, 1); continue;
        case ')': emit(Tok::RParen, 1); continue;
        case '[': emit(Tok::LBrack, 1); continue;
        case ']': emit(Tok::RBrack, 1); continue;
        case '{': emit(Tok::LBrace, 1); continue;
        case '}': emit(Tok::RBrace, 1); continue;
        case ',': emit(Tok::Comma, 1); continue;
        case ';': emit(Tok::Semi, 1); continue;
        case ':': emit(two('=') ? Tok::ColonEq : Tok::Colon, two('=') ? 2 : 1); continue;
        case '.': emit(two('.') ? Tok::DotDot : Tok::Dot, two('.') ? 2 : 1); continue;
        case '=':
          if (two('>')) { emit(Tok::Arrow, 2); continue; }
          if (two('=')) { emit(Tok::EqEq, 2); continue; }
          emit(Tok::Assign, 1);
          continue;
        case '|': emit(Tok::Bar, 1); continue;
        case '&': emit(Tok::Amp, 1); continue;
        case '~': emit(Tok::Tilde, 1); continue;
        case '*': emit(Tok::Star, 1); continue;
        case '+': emit(Tok::Plus, 1); continue;
        case '?': emit(Tok::Question, 1); continue;
        case '\\': emit(Tok::Backslash, 1); continue;
        case '<': emit(two('=') ? Tok::Le : Tok::Lt, two('=') ? 2 : 1); continue;
        case '>': emit(two('=') ? Tok::Ge : Tok::Gt, two('=') ? 2 : 1); continue;
        case '!':
          if (two('=')) { emit(Tok::Ne, 2); continue; }
          throw ParseError{"unexpected '!'", user_span(pos_, pos_ + 1)};
        case '@': emit(Tok::At, 1); continue;
        case '-': emit(Tok::Minus, 1); continue;
        case '/': emit(Tok::Slash, 1); continue;
        default:
          throw ParseError{std::string("unexpected character '") + c + "'",
                           user_span(pos_, pos_ + 1)};
      }
    }
  }

 private:
  void skip_ws() {
    while (pos_ < src_.size() &&
           std::isspace(static_cast<unsigned char>(src_[pos_])))
      ++pos_;
  }

  Token word() {
    uint32_t b = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
      ++pos_;
    std::string w(src_.substr(b, pos_ - b));
    static const std::map<std::string, Tok> kw = {
        {"type", Tok::KwType}, {"let", Tok::KwLet}, {"filter", Tok::KwFilter},
        {"input", Tok::KwInput}, {"rec", Tok::KwRec}, {"if", Tok::KwIf},
        {"then", Tok::KwThen}, {"else", Tok::KwElse}, {"in", Tok::KwIn},
        {"groupby", Tok::KwGroupBy}, {"orderby", Tok::KwOrderBy}, {"as", Tok::KwAs},
        {"and", Tok::KwAnd}, {"or", Tok::KwOr}, {"not", Tok::KwNot},
        {"int", Tok::KwInt}, {"float", Tok::KwFloat}, {"string", Tok::KwString},
        {"char", Tok::KwChar}, {"bool", Tok::KwBool}, {"atom", Tok::KwAtomT},
        {"any", Tok::KwAny}, {"empty", Tok::KwEmpty},
        {"true", Tok::KwTrue}, {"false", Tok::KwFalse}, {"null", Tok::KwNull},
        {"nil", Tok::KwNil},
    };
    if (w == "_") return {Tok::Underscore, w, b, pos_};
    if (auto it = kw.find(w); it != kw.end()) return {it->second, w, b, pos_};
    bool upper = std::isupper(static_cast<unsigned char>(w[0]));
    return {upper ? Tok::TypeName : Tok::Ident, w, b, pos_};
  }

  Token number(bool neg) {
    uint32_t b = pos_;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    bool is_float = false;
    if (pos_ + 1 < src_.size() && src_[pos_] == '.' &&
        std::isdigit(static_cast<unsigned char>(src_[pos_ + 1]))) {
      is_float = true;
      ++pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    std::string text(src_.substr(b, pos_ - b));
    Token t{is_float ? Tok::Float : Tok::Int, text, b, pos_};
    if (is_float)
      t.float_val = (neg ? -1 : 1) * std::stod(text);
    else
      t.int_val = (neg ? -1 : 1) * std::stoll(text);
    return t;
  }

  Token atom_tok() {
    uint32_t b = pos_++;
    uint32_t s = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
      ++pos_;
    if (pos_ == s) throw ParseError{"expected atom name after '`'", user_span(b, pos_)};
    return {Tok::Atom, std::string(src_.substr(s, pos_ - s)), b, pos_};
  }

  Token string_tok() {
    uint32_t b = pos_++;
    std::string out;
    while (pos_ < src_.size() && src_[pos_] != '"') {
      char c = src_[pos_++];
      if (c == '\\' && pos_ < src_.size()) {
        char d = src_[pos_++];
        switch (d) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '\\': out += '\\'; break;
          case '"': out += '"'; break;
          default: out += d; break;
        }
      } else {
        out += c;
      }
    }
    if (pos_ >= src_.size()) throw ParseError{"unterminated string", user_span(b, pos_)};
    ++pos_;
    return {Tok::Str, std::move(out), b, pos_};
  }

  Token char_tok() {
    uint32_t b = pos_++;
    if (pos_ >= src_.size()) throw ParseError{"unterminated character", user_span(b, pos_)};
    char c = src_[pos_++];
    if (c == '\\' && pos_ < src_.size()) {
      char d = src_[pos_++];
      c = d == 'n' ? '\n' : d == 't' ? '\t' : d;
    }
    if (pos_ >= src_.size() || src_[pos_] != '\'')
      throw ParseError{"unterminated character", user_span(b, pos_)};
    ++pos_;
    return {Tok::Char, std::string(1, c), b, pos_};
  }

  std::string_view src_;
  uint32_t pos_ = 0;
};

}  // namespace detail

class Parser {
 public:
  Parser(std::string source, TypeEngine& eng)
      : src_(std::move(source)), eng_(eng) {
    toks_ = detail::Lexer(src_).run();
  }

  Program parse_program() {
    Program prog;
    parse_headers(prog);
    prog.main = parse_filter();
    eat(detail::Tok::Semi);
    expect(detail::Tok::End, "input continues after the filter");
    // resolve unused definitions too; a closing resolution can re-open
    // mutually recursive partners, so sweep to a fixpoint
    for (bool again = true; again;) {
      again = false;
      for (auto& [name, st] : types_)
        if (st.state != TypeSlot::Done) {
          resolve_type(name, span_here());
          again = true;
        }
    }
    for (auto& [name, st] : types_) prog.named_types.emplace(name, st.id);
    return prog;
  }

  // Entry point for a bare type expression (CLI helpers, tests).
  NodeId parse_type_only() {
    NodeId t = parse_type();
    expect(detail::Tok::End, "input continues after the type");
    return t;
  }

 private:
  using Tok = detail::Tok;
  using Token = detail::Token;

  // -- token plumbing ----------------------------------------------------------

  const Token& peek(size_t k = 0) const {
    size_t i = pos_ + k;
    if (i >= limit_) return fence_end_;
    return i < toks_.size() ? toks_[i] : toks_.back();
  }
  bool at(Tok k, size_t ahead = 0) const { return peek(ahead).kind == k; }
  Token next() {
    if (pos_ >= limit_) return fence_end_;
    return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_];
  }
  bool eat(Tok k) {
    if (!at(k)) return false;
    next();
    return true;
  }
  Token expect(Tok k, const std::string& what) {
    if (!at(k)) throw ParseError{"expected " + what, span_here()};
    return next();
  }
  Span span_here() const { return user_span(peek().begin, peek().end); }
  static Span span_from(const Token& t) { return user_span(t.begin, t.end); }
  Span span_range(uint32_t b) const {
    uint32_t e = pos_ > 0 ? toks_[pos_ - 1].end : b;
    return user_span(b, e < b ? b : e);
  }

  [[noreturn]] void fail(const std::string& msg) { throw ParseError{msg, span_here()}; }

  // -- headers ------------------------------------------------------------------

  struct TypeSlot {
    enum State { Pending, InProgress, Done } state = Pending;
    size_t tok_begin = 0;    // token index of the definition body
    NodeId id = kNodeEmpty;  // final node when Done
    VarId var = 0;           // recursion variable while InProgress
  };

  struct FilterDef {
    std::vector<std::string> params;
    size_t tok_begin = 0, tok_end = 0;  // token range of the body
  };

  void parse_headers(Program& prog) {
    while (true) {
      if (at(Tok::KwType) && at(Tok::TypeName, 1) && at(Tok::Assign, 2)) {
        next();
        std::string name = next().text;
        next();
        if (types_.count(name)) fail("type '" + name + "' is defined twice");
        TypeSlot slot;
        slot.tok_begin = pos_;
        skip_to_semi();
        types_.emplace(name, slot);
        continue;
      }
      if (at(Tok::KwLet) && at(Tok::KwFilter, 1)) {
        next();
        next();
        std::string name = expect(Tok::TypeName, "a capitalized filter name").text;
        FilterDef def;
        if (eat(Tok::LBrack)) {
          while (!eat(Tok::RBrack)) {
            def.params.push_back(expect(Tok::TypeName, "a parameter name").text);
            if (!at(Tok::RBrack)) expect(Tok::Comma, "',' between parameters");
          }
        }
        expect(Tok::Assign, "'=' in filter definition");
        def.tok_begin = pos_;
        skip_to_semi();
        def.tok_end = pos_ - 1;  // before the ';'
        if (filters_.count(name)) fail("filter '" + name + "' is defined twice");
        filters_.emplace(name, def);
        continue;
      }
      if (at(Tok::KwInput)) {
        next();
        expect(Tok::Colon, "':' after 'input'");
        prog.input_type = parse_type();
        expect(Tok::Semi, "';' after the input type");
        continue;
      }
      break;
    }
  }

  void skip_to_semi() {
    int depth = 0;
    while (!at(Tok::End)) {
      Tok k = peek().kind;
      if (k == Tok::LParen || k == Tok::LBrack || k == Tok::LBrace) ++depth;
      if (k == Tok::RParen || k == Tok::RBrack || k == Tok::RBrace) --depth;
      if (k == Tok::Semi && depth == 0) {
        next();
        return;
      }
      next();
    }
    fail("missing ';' after definition");
  }

  // -- named types ---------------------------------------------------------------

  // A recursive reference parses as a fresh type variable; once the body is
  // known the variable is tied into a least fixpoint. Mutually recursive
  // names can come out of the inner resolution still mentioning the outer
  // variable; those are cleared and re-resolved once the outer name closes.
  NodeId resolve_type(const std::string& name, Span at_span) {
    auto it = types_.find(name);
    if (it == types_.end()) throw ParseError{"unknown type '" + name + "'", at_span};
    if (it->second.state == TypeSlot::Done) return it->second.id;
    if (it->second.state == TypeSlot::InProgress)
      return eng_.var_type(it->second.var);
    it->second.state = TypeSlot::InProgress;
    it->second.var = eng_.fresh_var();
    ++resolving_;
    size_t save = pos_;
    pos_ = slot(name).tok_begin;
    NodeId body;
    try {
      body = parse_type();
      expect(Tok::Semi, "';' after type definition");
    } catch (...) {
      --resolving_;
      reset_slot(name);
      throw;
    }
    --resolving_;
    pos_ = save;
    TypeSlot& done = slot(name);
    done.id = eng_.tie_var(done.var, body);
    done.state = TypeSlot::Done;
    if (resolving_ == 0) {
      NodeId out = done.id;
      for (auto& [n, s] : types_)
        if (s.state == TypeSlot::Done && eng_.has_free_vars(s.id))
          s.state = TypeSlot::Pending;
      if (eng_.has_free_vars(out))
        throw ParseError{"type '" + name + "' leaks a recursion variable", at_span};
      return out;
    }
    return done.id;
  }

  TypeSlot& slot(const std::string& name) { return types_.at(name); }

  void reset_slot(const std::string& name) {
    TypeSlot& s = types_.at(name);
    s.state = TypeSlot::Pending;
    s.id = kNodeEmpty;
  }

  // -- types ------------------------------------------------------------------------

  NodeId parse_type() {
    NodeId t = parse_type_inter();
    while (eat(Tok::Bar)) t = eng_.unite(t, parse_type_inter());
    return t;
  }

  NodeId parse_type_inter() {
    NodeId t = parse_type_neg();
    while (eat(Tok::Amp)) t = eng_.intersect(t, parse_type_neg());
    return t;
  }

  NodeId parse_type_neg() {
    if (eat(Tok::Tilde)) return eng_.negate(parse_type_neg());
    return parse_type_primary();
  }

  NodeId parse_type_primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::KwInt: next(); return eng_.basic(ScalarKind::Int);
      case Tok::KwFloat: next(); return eng_.basic(ScalarKind::Float);
      case Tok::KwString: next(); return eng_.basic(ScalarKind::String);
      case Tok::KwChar: next(); return eng_.basic(ScalarKind::Char);
      case Tok::KwBool: next(); return eng_.bool_type();
      case Tok::KwAtomT: next(); return eng_.basic(ScalarKind::Atom);
      case Tok::KwAny: next(); return kNodeAny;
      case Tok::KwEmpty: next(); return kNodeEmpty;
      case Tok::KwTrue: next(); return eng_.singleton(Value::boolean(true));
      case Tok::KwFalse: next(); return eng_.singleton(Value::boolean(false));
      case Tok::KwNull: next(); return eng_.singleton(Value::null());
      case Tok::KwNil: next(); return eng_.nil_type();
      case Tok::Atom: next(); return eng_.singleton(Value::atom(t.text));
      case Tok::Int: next(); return eng_.singleton(Value::integer(t.int_val));
      case Tok::Float: next(); return eng_.singleton(Value::real(t.float_val));
      case Tok::Str: next(); return eng_.singleton(Value::string(t.text));
      case Tok::Char: next(); return eng_.singleton(Value::character(t.text[0]));
      case Tok::Minus: {
        next();
        const Token& n = peek();
        if (n.kind == Tok::Int) {
          next();
          return eng_.singleton(Value::integer(-n.int_val));
        }
        if (n.kind == Tok::Float) {
          next();
          return eng_.singleton(Value::real(-n.float_val));
        }
        fail("expected a number after '-'");
      }
      case Tok::TypeName: {
        next();
        return resolve_type(t.text, span_from(t));
      }
      case Tok::LParen: {
        next();
        NodeId a = parse_type();
        if (eat(Tok::Comma)) {
          NodeId b = parse_type();
          expect(Tok::RParen, "')'");
          return eng_.product(a, b);
        }
        expect(Tok::RParen, "')'");
        return a;
      }
      case Tok::LBrace: return parse_record_type();
      case Tok::LBrack: return parse_list_type();
      default: fail("expected a type");
    }
  }

  NodeId parse_record_type() {
    expect(Tok::LBrace, "'{'");
    std::vector<RecordField> fs;
    bool open = false;
    while (!at(Tok::RBrace)) {
      if (eat(Tok::DotDot)) {
        open = true;
        break;
      }
      std::string label = parse_label();
      bool opt = eat(Tok::Question);
      expect(Tok::Colon, "':' in record type field");
      NodeId ft = parse_type();
      fs.push_back({std::move(label), ft, opt});
      if (!at(Tok::RBrace)) expect(Tok::Comma, "',' between record fields");
    }
    expect(Tok::RBrace, "'}'");
    return eng_.record(std::move(fs), open);
  }

  std::string parse_label() {
    if (at(Tok::Ident) || at(Tok::TypeName) || at(Tok::Str)) return next().text;
    // allow keyword-looking labels such as {type: ...}
    if (!peek().text.empty() &&
        std::isalpha(static_cast<unsigned char>(peek().text[0])))
      return next().text;
    fail("expected a field label");
  }

  // Sequence types: the content of [...] is a regular expression over types.
  struct Re {
    enum class K { Eps, Ty, Cat, Alt, Star, Plus, Opt } k;
    NodeId ty{};
    std::vector<Re> kids;
  };

  NodeId parse_list_type() {
    Token open = expect(Tok::LBrack, "'['");
    if (eat(Tok::RBrack)) return eng_.nil_type();
    Re re = parse_re_alt();
    expect(Tok::RBrack, "']'");
    std::string key = re_key(re);
    if (auto hit = eng_.find_cached(key)) return *hit;
    NodeId out = build_list(re);
    eng_.store_cached(key, out);
    return out;
  }

  Re parse_re_alt() {
    Re first = parse_re_cat();
    if (!at(Tok::Bar)) return first;
    Re alt{Re::K::Alt, 0, {std::move(first)}};
    while (eat(Tok::Bar)) alt.kids.push_back(parse_re_cat());
    return alt;
  }

  Re parse_re_cat() {
    Re cat{Re::K::Cat, 0, {}};
    while (!at(Tok::RBrack) && !at(Tok::Bar) && !at(Tok::End))
      cat.kids.push_back(parse_re_post());
    if (cat.kids.empty()) return {Re::K::Eps, 0, {}};
    if (cat.kids.size() == 1) return std::move(cat.kids[0]);
    return cat;
  }

  Re parse_re_post() {
    Re r{Re::K::Ty, parse_type_inter(), {}};
    while (true) {
      if (eat(Tok::Star))
        r = Re{Re::K::Star, 0, {std::move(r)}};
      else if (eat(Tok::Plus))
        r = Re{Re::K::Plus, 0, {std::move(r)}};
      else if (eat(Tok::Question))
        r = Re{Re::K::Opt, 0, {std::move(r)}};
      else
        break;
    }
    return r;
  }

  std::string re_key(const Re& r) {
    switch (r.k) {
      case Re::K::Eps: return "e";
      case Re::K::Ty: return "t" + std::to_string(r.ty);
      case Re::K::Cat:
      case Re::K::Alt:
      case Re::K::Star:
      case Re::K::Plus:
      case Re::K::Opt: {
        std::string s =
            r.k == Re::K::Cat ? "C(" : r.k == Re::K::Alt ? "A(" :
            r.k == Re::K::Star ? "S(" : r.k == Re::K::Plus ? "P(" : "O(";
        for (const Re& k : r.kids) s += re_key(k) + ",";
        return s + ")";
      }
    }
    return "?";
  }

  // Position automaton over the regular expression, realized as one
  // placeholder node per state whose clauses are (item, next-state) pairs
  // plus `nil on accepting states.
  NodeId build_list(const Re& re) {
    // fast paths reuse the engine's canonical sequence constructors
    if (re.k == Re::K::Star && re.kids[0].k == Re::K::Ty)
      return eng_.list_star(re.kids[0].ty);
    if (re.k == Re::K::Plus && re.kids[0].k == Re::K::Ty)
      return eng_.list_plus(re.kids[0].ty);

    std::vector<NodeId> pos_ty;  // type at each position
    std::set<int> first, last;
    std::map<int, std::set<int>> follow;
    bool nullable = glushkov(re, pos_ty, first, last, follow);

    size_t n = pos_ty.size();
    std::vector<NodeId> state(n + 1);
    for (size_t i = 0; i <= n; ++i) state[i] = eng_.alloc_placeholder();
    // state[n] is the start; state[i] is "just consumed position i"
    auto out_edges = [&](const std::set<int>& nexts, bool accepting) {
      NodeId u = accepting ? eng_.nil_type() : kNodeEmpty;
      for (int j : nexts) u = eng_.unite(u, eng_.product(pos_ty[j], state[j]));
      return u;
    };
    for (size_t i = 0; i < n; ++i)
      eng_.install_from(state[i], out_edges(follow[static_cast<int>(i)], last.count(static_cast<int>(i)) > 0));
    eng_.install_from(state[n], out_edges(first, nullable));
    return state[n];
  }

  // Returns nullability; fills positions, first/last/follow sets.
  bool glushkov(const Re& r, std::vector<NodeId>& pos_ty, std::set<int>& first,
                std::set<int>& last, std::map<int, std::set<int>>& follow) {
    switch (r.k) {
      case Re::K::Eps: return true;
      case Re::K::Ty: {
        int p = static_cast<int>(pos_ty.size());
        pos_ty.push_back(r.ty);
        first.insert(p);
        last.insert(p);
        return false;
      }
      case Re::K::Cat: {
        bool nul = true;
        std::set<int> fs, ls;
        for (const Re& k : r.kids) {
          std::set<int> f2, l2;
          bool n2 = glushkov(k, pos_ty, f2, l2, follow);
          for (int a : ls)
            for (int b : f2) follow[a].insert(b);
          if (nul) fs.insert(f2.begin(), f2.end());
          if (n2)
            ls.insert(l2.begin(), l2.end());
          else
            ls = std::move(l2);
          nul = nul && n2;
        }
        first.insert(fs.begin(), fs.end());
        last.insert(ls.begin(), ls.end());
        return nul;
      }
      case Re::K::Alt: {
        bool nul = false;
        for (const Re& k : r.kids) nul = glushkov(k, pos_ty, first, last, follow) || nul;
        return nul;
      }
      case Re::K::Star:
      case Re::K::Plus: {
        std::set<int> f2, l2;
        bool n2 = glushkov(r.kids[0], pos_ty, f2, l2, follow);
        for (int a : l2)
          for (int b : f2) follow[a].insert(b);
        first.insert(f2.begin(), f2.end());
        last.insert(l2.begin(), l2.end());
        return r.k == Re::K::Star || n2;
      }
      case Re::K::Opt: {
        glushkov(r.kids[0], pos_ty, first, last, follow);
        return true;
      }
    }
    return true;
  }

  // -- filters ----------------------------------------------------------------------

  FilterPtr parse_filter() { return parse_union(); }

  FilterPtr parse_union() {
    uint32_t b = peek().begin;
    FilterPtr f = parse_arm();
    while (at(Tok::Bar)) {
      next();
      FilterPtr g = parse_arm();
      f = flt::alt(std::move(f), std::move(g), span_range(b));
    }
    return f;
  }

  // An arm is committed once "pattern =>" has been seen; errors in the body
  // then surface as such instead of re-reading the arm as a sequence.
  FilterPtr parse_arm() {
    size_t save = pos_;
    uint32_t b = peek().begin;
    PatternPtr p;
    try {
      // at arm level '|' separates union branches; or-patterns take parens
      p = parse_pat_and();
      if (!at(Tok::Arrow)) p = nullptr;
    } catch (const ParseError&) {
      p = nullptr;
    }
    if (!p) {
      pos_ = save;
      return parse_seq();
    }
    next();
    FilterPtr body = parse_arm();
    return flt::arrow(std::move(p), std::move(body), span_range(b));
  }

  FilterPtr parse_seq() {
    uint32_t b = peek().begin;
    FilterPtr f = parse_primary_filter();
    while (at(Tok::Semi) && !at(Tok::End, 1)) {
      // a top-level trailing ';' belongs to the program, not a composition
      next();
      FilterPtr g = parse_primary_filter();
      f = flt::comp(std::move(f), std::move(g), span_range(b));
    }
    return f;
  }

  FilterPtr parse_primary_filter() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::KwRec: return parse_rec();
      case Tok::KwIf: return parse_if();
      case Tok::KwLet: return parse_let();
      case Tok::KwGroupBy: {
        next();
        return flt::groupby(parse_primary_filter(), span_from(t));
      }
      case Tok::KwOrderBy: {
        next();
        return flt::orderby(parse_primary_filter(), span_from(t));
      }
      default: break;
    }

    // calls and named filters
    if (t.kind == Tok::TypeName) {
      if (auto rec_name = scope_lookup(t.text)) {
        next();
        expect(Tok::LParen, "'(' for the recursive call argument");
        ExprPtr arg = parse_call_arg();
        expect(Tok::RParen, "')'");
        if (!is_call_arg_shape(*arg))
          throw ParseError{
              "a recursive call argument is built from variables, constants, pairs "
              "and records only",
              arg->span};
        return flt::call(*rec_name, std::move(arg), span_from(t));
      }
      if (filters_.count(t.text) && !at(Tok::LParen, 1)) {
        next();
        return instantiate_filter(t.text, span_from(t));
      }
      if (filter_params_.count(t.text) && !at(Tok::LParen, 1)) {
        next();
        return filter_params_.at(t.text);
      }
    }

    // expression reading, preferred when it parses
    {
      size_t save = pos_;
      try {
        ExprPtr e = parse_expr();
        Span sp = e->span;
        return flt::expr(std::move(e), sp);
      } catch (const ParseError&) {
        pos_ = save;
      }
    }

    if (t.kind == Tok::LParen) {
      next();
      FilterPtr a = parse_filter();
      if (eat(Tok::Comma)) {
        FilterPtr bfl = parse_filter();
        expect(Tok::RParen, "')'");
        return flt::product(std::move(a), std::move(bfl),
                            user_span(t.begin, toks_[pos_ - 1].end));
      }
      expect(Tok::RParen, "')'");
      return a;
    }

    if (t.kind == Tok::LBrace) return parse_record_filter();

    fail("expected a filter");
  }

  FilterPtr parse_rec() {
    Token kw = expect(Tok::KwRec, "'rec'");
    std::string surface = expect(Tok::TypeName, "a recursion variable").text;
    expect(Tok::Dot, "'.' after the recursion variable");
    std::string unique = surface + "@" + std::to_string(rec_counter_++);
    scope_.push_back({surface, unique});
    FilterPtr body = parse_union();
    scope_.pop_back();
    return flt::rec(unique, std::move(body), user_span(kw.begin, toks_[pos_ - 1].end));
  }

  FilterPtr parse_if() {
    Token kw = expect(Tok::KwIf, "'if'");
    ExprPtr c = parse_expr();
    expect(Tok::KwThen, "'then'");
    FilterPtr f1 = parse_primary_filter();
    expect(Tok::KwElse, "'else'");
    FilterPtr f2 = parse_primary_filter();
    return desugar_if(std::move(c), std::move(f1), std::move(f2),
                      user_span(kw.begin, toks_[pos_ - 1].end));
  }

  // if c then f1 else f2: tag the input with the condition's value, then
  // dispatch on the tag and restore the input for the chosen branch.
  FilterPtr desugar_if(ExprPtr c, FilterPtr f1, FilterPtr f2, Span sp) {
    std::string w = fresh_var(), w2 = fresh_var();
    auto arm = [&](bool b, FilterPtr fk) {
      return flt::arrow(
          pat::pair(pat::type(eng_.singleton(Value::boolean(b))), pat::var(w2)),
          flt::comp(flt::expr(ex::var(w2)), std::move(fk)));
    };
    return flt::arrow(pat::var(w),
                      flt::comp(flt::expr(ex::pair(std::move(c), ex::var(w))),
                                flt::alt(arm(true, std::move(f1)), arm(false, std::move(f2)))),
                      sp);
  }

  FilterPtr parse_let() {
    Token kw = expect(Tok::KwLet, "'let'");
    PatternPtr p = parse_pattern();
    expect(Tok::Assign, "'=' in let");
    ExprPtr e = parse_expr();
    expect(Tok::KwIn, "'in'");
    FilterPtr body = parse_seq();
    // bind the pattern against the expression, then restore the input
    std::string w = fresh_var(), w2 = fresh_var();
    Span sp = user_span(kw.begin, toks_[pos_ - 1].end);
    return flt::arrow(
        pat::var(w),
        flt::comp(flt::expr(ex::pair(std::move(e), ex::var(w))),
                  flt::arrow(pat::pair(std::move(p), pat::var(w2)),
                             flt::comp(flt::expr(ex::var(w2)), std::move(body)))),
        sp);
  }

  FilterPtr parse_record_filter() {
    Token open = expect(Tok::LBrace, "'{'");
    std::vector<Filter::Field> fs;
    while (!at(Tok::RBrace)) {
      std::string label = parse_label();
      expect(Tok::Colon, "':' in record filter field");
      fs.push_back({label, parse_filter()});
      if (!at(Tok::RBrace)) expect(Tok::Comma, "',' between fields");
    }
    Token close = expect(Tok::RBrace, "'}'");
    return flt::record(std::move(fs), user_span(open.begin, close.end));
  }

  FilterPtr instantiate_filter(const std::string& name, Span at_span) {
    const FilterDef& def = filters_.at(name);
    std::map<std::string, FilterPtr> args;
    if (!def.params.empty()) {
      expect(Tok::LBrack, "'[' with arguments for filter " + name);
      for (size_t i = 0; i < def.params.size(); ++i) {
        args[def.params[i]] = parse_filter();
        if (i + 1 < def.params.size()) expect(Tok::Comma, "',' between filter arguments");
      }
      expect(Tok::RBrack, "']'");
    }
    if (instantiating_.count(name))
      throw ParseError{"filter '" + name + "' expands through itself", at_span};
    instantiating_.insert(name);
    size_t save = pos_;
    // macro hygiene: the body sees only its own parameters and binders
    auto saved_params = std::exchange(filter_params_, std::move(args));
    auto saved_scope = std::exchange(scope_, {});
    auto saved_limit = limit_;
    auto saved_fence = fence_end_;
    FilterPtr body;
    try {
      pos_ = def.tok_begin;
      limit_ = def.tok_end;
      fence_end_ = {Tok::End, "", toks_[def.tok_end].begin, toks_[def.tok_end].begin};
      body = parse_filter();
      if (pos_ != def.tok_end)
        throw ParseError{"filter '" + name + "' has trailing tokens", span_here()};
    } catch (...) {
      limit_ = saved_limit;
      fence_end_ = saved_fence;
      filter_params_ = std::move(saved_params);
      scope_ = std::move(saved_scope);
      instantiating_.erase(name);
      throw;
    }
    pos_ = save;
    limit_ = saved_limit;
    fence_end_ = saved_fence;
    filter_params_ = std::move(saved_params);
    scope_ = std::move(saved_scope);
    instantiating_.erase(name);
    return body;
  }

  // -- patterns ------------------------------------------------------------------------

  PatternPtr parse_pattern() {
    uint32_t b = peek().begin;
    PatternPtr p = parse_pat_and();
    while (eat(Tok::Bar)) {
      PatternPtr q = parse_pat_and();
      p = pat::alt(std::move(p), std::move(q), span_range(b));
    }
    return p;
  }

  PatternPtr parse_pat_and() {
    uint32_t b = peek().begin;
    PatternPtr p = parse_pat_primary();
    while (true) {
      if (eat(Tok::Amp)) {
        PatternPtr q = parse_pat_primary();
        p = pat::conj(std::move(p), std::move(q), span_range(b));
        continue;
      }
      if (eat(Tok::KwAs)) {
        Token v = expect(Tok::Ident, "a variable after 'as'");
        p = pat::conj(std::move(p), pat::var(v.text, span_from(v)), span_range(b));
        continue;
      }
      break;
    }
    return p;
  }

  PatternPtr parse_pat_primary() {
    const Token& t = peek();
    if (t.kind == Tok::Underscore) {
      next();
      return pat::type(kNodeAny, span_from(t));
    }
    if (t.kind == Tok::Ident) {
      if (at(Tok::ColonEq, 1)) {
        next();
        next();
        Value c = parse_const_value();
        return pat::bind(t.text, std::move(c), span_range(t.begin));
      }
      next();
      return pat::var(t.text, span_from(t));
    }
    if (t.kind == Tok::LParen) {
      next();
      PatternPtr a = parse_pattern();
      if (eat(Tok::Comma)) {
        PatternPtr b = parse_pattern();
        expect(Tok::RParen, "')'");
        return pat::pair(std::move(a), std::move(b), user_span(t.begin, toks_[pos_ - 1].end));
      }
      expect(Tok::RParen, "')'");
      return a;
    }
    if (t.kind == Tok::LBrace) return parse_record_pattern();
    // everything else must be a type
    uint32_t b = t.begin;
    NodeId ty = parse_type_inter();
    return pat::type(ty, span_range(b));
  }

  PatternPtr parse_record_pattern() {
    size_t save = pos_;
    Token open = expect(Tok::LBrace, "'{'");
    std::vector<Pattern::Field> fs;
    bool open_rec = false;
    while (!at(Tok::RBrace)) {
      if (eat(Tok::DotDot)) {
        open_rec = true;
        break;
      }
      std::string label = parse_label();
      if (at(Tok::Question)) {
        // optional fields are type syntax; reparse the braces as a type
        pos_ = save;
        uint32_t b = peek().begin;
        NodeId ty = parse_record_type();
        return pat::type(ty, span_range(b));
      }
      expect(Tok::Colon, "':' in record pattern field");
      fs.push_back({label, parse_pattern()});
      if (!at(Tok::RBrace)) expect(Tok::Comma, "',' between fields");
    }
    Token close = expect(Tok::RBrace, "'}'");
    return pat::record(std::move(fs), open_rec, user_span(open.begin, close.end));
  }

  Value parse_const_value() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::Int: next(); return Value::integer(t.int_val);
      case Tok::Float: next(); return Value::real(t.float_val);
      case Tok::Str: next(); return Value::string(t.text);
      case Tok::Char: next(); return Value::character(t.text[0]);
      case Tok::Atom: next(); return Value::atom(t.text);
      case Tok::KwTrue: next(); return Value::boolean(true);
      case Tok::KwFalse: next(); return Value::boolean(false);
      case Tok::KwNull: next(); return Value::null();
      case Tok::KwNil: next(); return Value::nil();
      case Tok::Minus: {
        next();
        const Token& n = peek();
        if (n.kind == Tok::Int) {
          next();
          return Value::integer(-n.int_val);
        }
        if (n.kind == Tok::Float) {
          next();
          return Value::real(-n.float_val);
        }
        fail("expected a number after '-'");
      }
      default: fail("expected a constant");
    }
  }

  // -- expressions -----------------------------------------------------------------------

  ExprPtr parse_expr() { return parse_cmp(); }

  // X(a, b) is accepted as sugar for X((a, b))
  ExprPtr parse_call_arg() {
    uint32_t b = peek().begin;
    ExprPtr e = parse_expr();
    while (eat(Tok::Comma)) {
      ExprPtr rhs = parse_expr();
      e = ex::pair(std::move(e), std::move(rhs), span_range(b));
    }
    return e;
  }

  ExprPtr parse_cmp() {
    uint32_t b = peek().begin;
    ExprPtr e = parse_bool();
    while (true) {
      std::string op;
      switch (peek().kind) {
        case Tok::EqEq: op = "=="; break;
        case Tok::Ne: op = "!="; break;
        case Tok::Lt: op = "<"; break;
        case Tok::Le: op = "<="; break;
        case Tok::Gt: op = ">"; break;
        case Tok::Ge: op = ">="; break;
        default: return e;
      }
      next();
      ExprPtr rhs = parse_bool();
      e = ex::builtin(op, {std::move(e), std::move(rhs)}, span_range(b));
    }
  }

  ExprPtr parse_bool() {
    uint32_t b = peek().begin;
    ExprPtr e = parse_add();
    while (at(Tok::KwAnd) || at(Tok::KwOr)) {
      std::string op = next().text;
      ExprPtr rhs = parse_add();
      e = ex::builtin(op, {std::move(e), std::move(rhs)}, span_range(b));
    }
    return e;
  }

  ExprPtr parse_add() {
    uint32_t b = peek().begin;
    ExprPtr e = parse_mul();
    while (true) {
      std::string op;
      if (at(Tok::Plus))
        op = "+";
      else if (at(Tok::Minus))
        op = "-";
      else if (at(Tok::At))
        op = "@";
      else
        return e;
      next();
      ExprPtr rhs = parse_mul();
      e = ex::builtin(op, {std::move(e), std::move(rhs)}, span_range(b));
    }
  }

  ExprPtr parse_mul() {
    uint32_t b = peek().begin;
    ExprPtr e = parse_unary();
    while (at(Tok::Star) || at(Tok::Slash)) {
      std::string op = next().kind == Tok::Star ? "*" : "/";
      ExprPtr rhs = parse_unary();
      e = ex::builtin(op, {std::move(e), std::move(rhs)}, span_range(b));
    }
    return e;
  }

  ExprPtr parse_unary() {
    const Token& t = peek();
    if (t.kind == Tok::Minus) {
      next();
      if (at(Tok::Int)) {
        Token n = next();
        return ex::constant(Value::integer(-n.int_val), span_from(n));
      }
      if (at(Tok::Float)) {
        Token n = next();
        return ex::constant(Value::real(-n.float_val), span_from(n));
      }
      ExprPtr e = parse_unary();
      return ex::builtin("neg", {std::move(e)}, span_from(t));
    }
    if (t.kind == Tok::KwNot) {
      next();
      ExprPtr e = parse_unary();
      return ex::builtin("not", {std::move(e)}, span_from(t));
    }
    return parse_postfix();
  }

  ExprPtr parse_postfix() {
    uint32_t b = peek().begin;
    ExprPtr e = parse_expr_primary();
    while (true) {
      if (at(Tok::Dot) && !peek(1).text.empty() &&
          (std::isalpha(static_cast<unsigned char>(peek(1).text[0])) ||
           peek(1).text[0] == '_')) {
        next();
        Token l = next();
        e = make_field_access(std::move(e), l.text, span_range(b));
        continue;
      }
      if (at(Tok::Backslash)) {
        next();
        Token l = next();
        if (l.text.empty()) fail("expected a label after '\\'");
        e = ex::del(std::move(e), l.text, span_range(b));
        continue;
      }
      break;
    }
    return e;
  }

  // e.l : strict field selection as filter application, so the type error
  // speaks about the field
  ExprPtr make_field_access(ExprPtr e, const std::string& label, Span sp) {
    std::string x = fresh_var();
    FilterPtr sel = flt::arrow(pat::record({{label, pat::var(x)}}, /*open=*/true),
                               flt::expr(ex::var(x)));
    ExprPtr out = ex::apply(std::move(sel), std::move(e), sp);
    const_cast<Expr*>(out.get())->from_field_access = true;
    const_cast<Expr*>(out.get())->label = label;
    return out;
  }

  ExprPtr parse_expr_primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::Int: next(); return ex::constant(Value::integer(t.int_val), span_from(t));
      case Tok::Float: next(); return ex::constant(Value::real(t.float_val), span_from(t));
      case Tok::Str: next(); return ex::constant(Value::string(t.text), span_from(t));
      case Tok::Char: next(); return ex::constant(Value::character(t.text[0]), span_from(t));
      case Tok::Atom: next(); return ex::constant(Value::atom(t.text), span_from(t));
      case Tok::KwTrue: next(); return ex::constant(Value::boolean(true), span_from(t));
      case Tok::KwFalse: next(); return ex::constant(Value::boolean(false), span_from(t));
      case Tok::KwNull: next(); return ex::constant(Value::null(), span_from(t));
      case Tok::KwNil: next(); return ex::constant(Value::nil(), span_from(t));
      case Tok::Ident: {
        // builtin function-call names
        if ((t.text == "count" || t.text == "to_string") && at(Tok::LParen, 1)) {
          next();
          next();
          ExprPtr a = parse_expr();
          expect(Tok::RParen, "')'");
          return ex::builtin(t.text, {std::move(a)}, span_range(t.begin));
        }
        if ((t.text == "fst" || t.text == "snd") && at(Tok::LParen, 1)) {
          next();
          next();
          ExprPtr a = parse_expr();
          expect(Tok::RParen, "')'");
          std::string x = fresh_var();
          PatternPtr p = t.text == "fst"
                             ? pat::pair(pat::var(x), pat::type(kNodeAny))
                             : pat::pair(pat::type(kNodeAny), pat::var(x));
          FilterPtr sel = flt::arrow(std::move(p), flt::expr(ex::var(x)));
          return ex::apply(std::move(sel), std::move(a), span_range(t.begin));
        }
        next();
        return ex::var(t.text, span_from(t));
      }
      case Tok::TypeName: {
        if (scope_lookup(t.text))
          fail("a recursive call is a filter, not an expression");
        if (filters_.count(t.text)) {
          next();
          FilterPtr f = instantiate_filter(t.text, span_from(t));
          expect(Tok::LParen, "'(' to apply filter " + t.text);
          ExprPtr a = parse_call_arg();
          expect(Tok::RParen, "')'");
          return ex::apply(std::move(f), std::move(a), span_range(t.begin));
        }
        if (filter_params_.count(t.text)) {
          next();
          FilterPtr f = filter_params_.at(t.text);
          expect(Tok::LParen, "'(' to apply filter " + t.text);
          ExprPtr a = parse_call_arg();
          expect(Tok::RParen, "')'");
          return ex::apply(std::move(f), std::move(a), span_range(t.begin));
        }
        fail("unknown name '" + t.text + "'");
      }
      case Tok::LParen: {
        next();
        ExprPtr a = parse_expr();
        if (eat(Tok::Comma)) {
          ExprPtr b = parse_expr();
          expect(Tok::RParen, "')'");
          return ex::pair(std::move(a), std::move(b), span_range(t.begin));
        }
        expect(Tok::RParen, "')'");
        return a;
      }
      case Tok::LBrack: {
        next();
        std::vector<ExprPtr> items;
        while (!at(Tok::RBrack)) {
          items.push_back(parse_expr());
          if (!at(Tok::RBrack)) expect(Tok::Comma, "',' between list items");
        }
        next();
        return ex::list(std::move(items), span_range(t.begin));
      }
      case Tok::LBrace: {
        next();
        std::vector<Expr::Field> fs;
        while (!at(Tok::RBrace)) {
          Expr::Field f;
          if (at(Tok::LParen)) {
            next();
            f.label_expr = parse_expr();
            expect(Tok::RParen, "')'");
          } else {
            f.label = parse_label();
          }
          expect(Tok::Colon, "':' in record field");
          f.value = parse_expr();
          fs.push_back(std::move(f));
          if (!at(Tok::RBrace)) expect(Tok::Comma, "',' between fields");
        }
        next();
        return ex::record(std::move(fs), span_range(t.begin));
      }
      default: fail("expected an expression");
    }
  }

  // -- scope ------------------------------------------------------------------------------

  std::optional<std::string> scope_lookup(const std::string& surface) const {
    for (auto it = scope_.rbegin(); it != scope_.rend(); ++it)
      if (it->first == surface) return it->second;
    return std::nullopt;
  }

  std::string fresh_var() { return "$" + std::to_string(var_counter_++); }

  std::string src_;
  TypeEngine& eng_;
  std::vector<Token> toks_;
  size_t pos_ = 0;
  std::map<std::string, TypeSlot> types_;
  std::map<std::string, FilterDef> filters_;
  std::map<std::string, FilterPtr> filter_params_;
  std::set<std::string> instantiating_;
  std::vector<std::pair<std::string, std::string>> scope_;  // surface -> unique
  int rec_counter_ = 0;
  int var_counter_ = 0;
  int resolving_ = 0;
  size_t limit_ = SIZE_MAX;  // token fence for macro body reparses
  Token fence_end_{Tok::End, "", 0, 0};
};

// Line/column helper for reporting parse errors against the source text.
inline std::string describe_location(std::string_view src, Span sp) {
  uint32_t line = 1, col = 1;
  for (uint32_t i = 0; i < sp.begin && i < src.size(); ++i) {
    if (src[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace fcalc
