// SPDX-License-Identifier: Apache-2.0
//
// Cell-specification language: AST, parser and pretty-printer.
//
//   cell NAME {
//     state h: H;            # port with an optional base type
//     input x: X;
//     f = sigmoid(affine[general, bias](x));
//     h' = f (*) h + (1 - f) (*) affine[general](x);
//   }
//
// Expressions: `+` and `-` (lowest, left-assoc), gating `a (*) b` (left-assoc),
// numbers, names, `name'` after it has been assigned, parentheses and the
// calls sigmoid(e), tanh(e), relu(e), scale[NUM](e), max(a, b), min(a, b) and
// affine[KIND(, bias)?](e, ...) with KIND one of general, orthogonal,
// diagonal, symmetric, scalar. Comments run from `#` or `//` to end of line.

#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace strnn::dsl {

struct Span {
  std::uint32_t line = 1;
  std::uint32_t col = 1;
  friend auto operator<=>(const Span&, const Span&) = default;
};

inline std::string to_string(Span s) { return std::to_string(s.line) + ":" + std::to_string(s.col); }

class SpecError : public std::runtime_error {
public:
  SpecError(Span at, const std::string& what)
      : std::runtime_error(to_string(at) + ": " + what), span(at) {}
  Span span;
};

enum class MatrixKind : std::uint8_t { general, orthogonal, diagonal, symmetric, scalar };

inline constexpr std::array<std::string_view, 5> kMatrixKindNames{"general", "orthogonal", "diagonal",
                                                                  "symmetric", "scalar"};

inline std::string_view to_string(MatrixKind k) { return kMatrixKindNames[static_cast<std::size_t>(k)]; }

/// Kinds whose multiplication keeps the operand's type.
inline bool preserves_type(MatrixKind k) {
  return k == MatrixKind::diagonal || k == MatrixKind::symmetric || k == MatrixKind::scalar;
}

enum class ExprKind : std::uint8_t { ref, constant, unary, binary, gate, affine };
enum class UnaryFn : std::uint8_t { sigmoid, tanh, relu, scale };
enum class BinaryFn : std::uint8_t { add, sub, max, min };

struct Expr {
  ExprKind kind = ExprKind::constant;
  Span span;
  std::string name;  // ref
  bool primed = false;
  double value = 0.0;  // constant, or the factor of scale[...]
  UnaryFn unary = UnaryFn::sigmoid;
  BinaryFn binary = BinaryFn::add;
  MatrixKind matrix = MatrixKind::general;
  bool bias = false;
  int affine_id = 0;  // 1-based, in source order
  std::vector<Expr> args;
};

struct Port {
  std::string name;
  std::string type;  // empty when not declared
  bool is_state = false;
  Span span;
};

struct Statement {
  std::string target;  // without the prime
  bool next_state = false;
  Span span;
  Expr expr;
};

struct CellSpec {
  std::string name;
  std::vector<Port> ports;
  std::vector<Statement> statements;
  int affine_count = 0;

  const Port* find_port(std::string_view n) const {
    for (const auto& p : ports)
      if (p.name == n) return &p;
    return nullptr;
  }
  std::vector<const Port*> states() const {
    std::vector<const Port*> out;
    for (const auto& p : ports)
      if (p.is_state) out.push_back(&p);
    return out;
  }
  std::vector<const Port*> inputs() const {
    std::vector<const Port*> out;
    for (const auto& p : ports)
      if (!p.is_state) out.push_back(&p);
    return out;
  }
  /// Type of a port: the declared base type, else the port's own name.
  static std::string port_type(const Port& p) { return p.type.empty() ? p.name : p.type; }
};

/// Printed form of a statement target, e.g. "h'".
inline std::string target_name(const Statement& s) { return s.next_state ? s.target + "'" : s.target; }

// ---------------------------------------------------------------------------
// Lexer

namespace detail {

enum class Tok : std::uint8_t { ident, number, prime, lbrace, rbrace, lparen, rparen, lbracket,
                                rbracket, comma, colon, semi, equals, plus, minus, gate, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  double number = 0.0;
  Span span;
};

inline std::string_view describe(Tok t) {
  static constexpr std::array<std::string_view, 17> names{
      "identifier", "number", "'''", "'{'", "'}'", "'('", "')'", "'['", "']'",
      "','",        "':'",    "';'", "'='", "'+'", "'-'", "'(*)'", "end of input"};
  return names[static_cast<std::size_t>(t)];
}

inline std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  std::uint32_t line = 1, col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  auto is_ident_start = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
  };
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  while (i < src.size()) {
    const char c = src[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      advance(1);
      continue;
    }
    if (c == '#' || (c == '/' && i + 1 < src.size() && src[i + 1] == '/')) {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    Token t;
    t.span = {line, col};
    if (is_ident_start(c)) {
      std::size_t j = i;
      while (j < src.size() && (is_ident_start(src[j]) || is_digit(src[j]))) ++j;
      t.kind = Tok::ident;
      t.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else if (is_digit(c) || (c == '.' && i + 1 < src.size() && is_digit(src[i + 1]))) {
      std::size_t j = i;
      while (j < src.size() && (is_digit(src[j]) || src[j] == '.')) ++j;
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && is_digit(src[k])) {
          j = k;
          while (j < src.size() && is_digit(src[j])) ++j;
        }
      }
      t.kind = Tok::number;
      t.text = std::string(src.substr(i, j - i));
      const auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
      if (res.ec != std::errc() || res.ptr != t.text.data() + t.text.size()) {
        throw SpecError(t.span, "malformed number '" + t.text + "'");
      }
      advance(j - i);
    } else if (src.substr(i, 3) == "(*)") {
      t.kind = Tok::gate;
      t.text = "(*)";
      advance(3);
    } else {
      switch (c) {
        case '\'': t.kind = Tok::prime; break;
        case '{': t.kind = Tok::lbrace; break;
        case '}': t.kind = Tok::rbrace; break;
        case '(': t.kind = Tok::lparen; break;
        case ')': t.kind = Tok::rparen; break;
        case '[': t.kind = Tok::lbracket; break;
        case ']': t.kind = Tok::rbracket; break;
        case ',': t.kind = Tok::comma; break;
        case ':': t.kind = Tok::colon; break;
        case ';': t.kind = Tok::semi; break;
        case '=': t.kind = Tok::equals; break;
        case '+': t.kind = Tok::plus; break;
        case '-': t.kind = Tok::minus; break;
        default: throw SpecError(t.span, std::string("unexpected character '") + c + "'");
      }
      t.text = std::string(1, c);
      advance(1);
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.span = {line, col};
  out.push_back(end);
  return out;
}

inline const std::set<std::string, std::less<>>& reserved_words() {
  static const std::set<std::string, std::less<>> words{
      "cell", "state", "input", "affine", "sigmoid", "tanh", "relu", "scale", "max", "min", "bias"};
  return words;
}

class Parser {
public:
  explicit Parser(std::string_view src) : toks_(lex(src)) {}

  CellSpec parse() {
    CellSpec spec;
    expect_word("cell");
    spec.name = expect(Tok::ident).text;
    expect(Tok::lbrace);
    while (peek().kind != Tok::rbrace) {
      if (peek().kind == Tok::end) throw SpecError(peek().span, "expected '}' before end of input");
      item(spec);
    }
    expect(Tok::rbrace);
    if (peek().kind != Tok::end) throw SpecError(peek().span, "unexpected text after the cell body");
    for (const Port* s : spec.states()) {
      if (!assigned_next_.count(s->name)) {
        throw SpecError(s->span, "state '" + s->name + "' has no next-state assignment");
      }
    }
    spec.affine_count = affine_count_;
    return spec;
  }

private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int affine_count_ = 0;
  std::set<std::string, std::less<>> bound_;         // binding names
  std::set<std::string, std::less<>> assigned_next_;  // states with s' assigned
  const CellSpec* spec_ = nullptr;

  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  Token take() { return toks_[std::min(pos_++, toks_.size() - 1)]; }
  Token expect(Tok k) {
    if (peek().kind != k) {
      throw SpecError(peek().span, "expected " + std::string(describe(k)) + ", found " + found());
    }
    return take();
  }
  void expect_word(std::string_view w) {
    if (peek().kind != Tok::ident || peek().text != w) {
      throw SpecError(peek().span, "expected '" + std::string(w) + "', found " + found());
    }
    take();
  }
  std::string found() const {
    const Token& t = peek();
    if (t.kind == Tok::end) return "end of input";
    return "'" + t.text + "'";
  }
  bool at_word(std::string_view w) const { return peek().kind == Tok::ident && peek().text == w; }

  void check_fresh_name(const Token& t, const CellSpec& spec) {
    if (reserved_words().count(t.text)) throw SpecError(t.span, "'" + t.text + "' is a reserved word");
    if (spec.find_port(t.text) || bound_.count(t.text)) {
      throw SpecError(t.span, "duplicate binding '" + t.text + "'");
    }
  }

  void item(CellSpec& spec) {
    spec_ = &spec;
    if (at_word("state") || at_word("input")) {
      const bool is_state = take().text == "state";
      if (!spec.statements.empty()) {
        throw SpecError(peek().span, "port declarations must precede statements");
      }
      const Token name = expect(Tok::ident);
      check_fresh_name(name, spec);
      Port p{name.text, "", is_state, name.span};
      if (peek().kind == Tok::colon) {
        take();
        p.type = expect(Tok::ident).text;
      }
      expect(Tok::semi);
      spec.ports.push_back(std::move(p));
      return;
    }
    const Token name = expect(Tok::ident);
    Statement st;
    st.span = name.span;
    st.target = name.text;
    if (peek().kind == Tok::prime) {
      take();
      const Port* port = spec.find_port(name.text);
      if (port == nullptr || !port->is_state) {
        throw SpecError(name.span, "'" + name.text + "'' does not name a state port");
      }
      if (assigned_next_.count(name.text)) {
        throw SpecError(name.span, "duplicate binding '" + name.text + "''");
      }
      st.next_state = true;
    } else {
      check_fresh_name(name, spec);
    }
    expect(Tok::equals);
    st.expr = expr();
    expect(Tok::semi);
    if (st.next_state) {
      assigned_next_.insert(st.target);
    } else {
      bound_.insert(st.target);
    }
    spec.statements.push_back(std::move(st));
  }

  Expr expr() {
    Expr lhs = gate_term();
    while (peek().kind == Tok::plus || peek().kind == Tok::minus) {
      const Token op = take();
      Expr e;
      e.kind = ExprKind::binary;
      e.binary = op.kind == Tok::plus ? BinaryFn::add : BinaryFn::sub;
      e.span = op.span;
      e.args.push_back(std::move(lhs));
      e.args.push_back(gate_term());
      lhs = std::move(e);
    }
    return lhs;
  }

  Expr gate_term() {
    Expr lhs = primary();
    while (peek().kind == Tok::gate) {
      const Token op = take();
      Expr e;
      e.kind = ExprKind::gate;
      e.span = op.span;
      e.args.push_back(std::move(lhs));
      e.args.push_back(primary());
      lhs = std::move(e);
    }
    return lhs;
  }

  double number_literal() {
    bool neg = false;
    if (peek().kind == Tok::minus) {
      take();
      neg = true;
    }
    const double v = expect(Tok::number).number;
    return neg ? -v : v;
  }

  Expr call_args(Expr e, std::size_t min_args, std::size_t max_args) {
    expect(Tok::lparen);
    e.args.push_back(expr());
    while (peek().kind == Tok::comma) {
      take();
      e.args.push_back(expr());
    }
    const Token close = expect(Tok::rparen);
    if (e.args.size() < min_args || e.args.size() > max_args) {
      throw SpecError(close.span, "wrong number of arguments");
    }
    return e;
  }

  Expr primary() {
    const Token& t = peek();
    Expr e;
    e.span = t.span;
    if (t.kind == Tok::number) {
      e.kind = ExprKind::constant;
      e.value = take().number;
      return e;
    }
    if (t.kind == Tok::lparen) {
      take();
      Expr inner = expr();
      expect(Tok::rparen);
      return inner;
    }
    if (t.kind != Tok::ident) throw SpecError(t.span, "expected an expression, found " + found());
    const std::string word = t.text;
    if (word == "sigmoid" || word == "tanh" || word == "relu") {
      take();
      e.kind = ExprKind::unary;
      e.unary = word == "sigmoid" ? UnaryFn::sigmoid : word == "tanh" ? UnaryFn::tanh : UnaryFn::relu;
      return call_args(std::move(e), 1, 1);
    }
    if (word == "scale") {
      take();
      e.kind = ExprKind::unary;
      e.unary = UnaryFn::scale;
      expect(Tok::lbracket);
      e.value = number_literal();
      expect(Tok::rbracket);
      return call_args(std::move(e), 1, 1);
    }
    if (word == "max" || word == "min") {
      take();
      e.kind = ExprKind::binary;
      e.binary = word == "max" ? BinaryFn::max : BinaryFn::min;
      return call_args(std::move(e), 2, 2);
    }
    if (word == "affine") {
      take();
      e.kind = ExprKind::affine;
      e.affine_id = ++affine_count_;
      expect(Tok::lbracket);
      const Token kind = expect(Tok::ident);
      bool known = false;
      for (std::size_t k = 0; k < kMatrixKindNames.size(); ++k) {
        if (kMatrixKindNames[k] == kind.text) {
          e.matrix = static_cast<MatrixKind>(k);
          known = true;
        }
      }
      if (!known) throw SpecError(kind.span, "unknown matrix kind '" + kind.text + "'");
      if (peek().kind == Tok::comma) {
        take();
        expect_word("bias");
        e.bias = true;
      }
      expect(Tok::rbracket);
      return call_args(std::move(e), 1, SIZE_MAX);
    }
    if (reserved_words().count(word)) throw SpecError(t.span, "unexpected '" + word + "'");
    const Token name = take();
    e.kind = ExprKind::ref;
    e.name = name.text;
    if (peek().kind == Tok::prime) {
      take();
      e.primed = true;
      if (!assigned_next_.count(name.text)) {
        throw SpecError(name.span, "unknown identifier '" + name.text + "''");
      }
      return e;
    }
    if (spec_->find_port(name.text) == nullptr && !bound_.count(name.text)) {
      throw SpecError(name.span, "unknown identifier '" + name.text + "'");
    }
    return e;
  }
};

}  // namespace detail

/// Parses one cell specification; errors carry line and column.
inline CellSpec parse_spec(std::string_view text) { return detail::Parser(text).parse(); }

// ---------------------------------------------------------------------------
// Pretty-printer

namespace detail {

inline std::string format_number(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

// Precedence: 1 = sum, 2 = gate, 3 = primary.
inline int precedence(const Expr& e) {
  if (e.kind == ExprKind::binary && (e.binary == BinaryFn::add || e.binary == BinaryFn::sub)) return 1;
  if (e.kind == ExprKind::gate) return 2;
  if (e.kind == ExprKind::constant && e.value < 0) return 1;
  return 3;
}

inline void print_expr(const Expr& e, std::string& out, int min_prec) {
  const bool parens = precedence(e) < min_prec;
  if (parens) out += '(';
  switch (e.kind) {
    case ExprKind::ref:
      out += e.name;
      if (e.primed) out += '\'';
      break;
    case ExprKind::constant:
      out += format_number(e.value);
      break;
    case ExprKind::unary:
      switch (e.unary) {
        case UnaryFn::sigmoid: out += "sigmoid("; break;
        case UnaryFn::tanh: out += "tanh("; break;
        case UnaryFn::relu: out += "relu("; break;
        case UnaryFn::scale: out += "scale[" + format_number(e.value) + "]("; break;
      }
      print_expr(e.args[0], out, 1);
      out += ')';
      break;
    case ExprKind::binary:
      if (e.binary == BinaryFn::max || e.binary == BinaryFn::min) {
        out += e.binary == BinaryFn::max ? "max(" : "min(";
        print_expr(e.args[0], out, 1);
        out += ", ";
        print_expr(e.args[1], out, 1);
        out += ')';
      } else {
        print_expr(e.args[0], out, 1);
        out += e.binary == BinaryFn::add ? " + " : " - ";
        print_expr(e.args[1], out, 2);
      }
      break;
    case ExprKind::gate:
      print_expr(e.args[0], out, 2);
      out += " (*) ";
      print_expr(e.args[1], out, 3);
      break;
    case ExprKind::affine:
      out += "affine[";
      out += to_string(e.matrix);
      if (e.bias) out += ", bias";
      out += "](";
      for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (i > 0) out += ", ";
        print_expr(e.args[i], out, 1);
      }
      out += ')';
      break;
  }
  if (parens) out += ')';
}

}  // namespace detail

inline std::string print_expr(const Expr& e) {
  std::string out;
  detail::print_expr(e, out, 1);
  return out;
}

/// Canonical text; parse_spec(print_spec(s)) reproduces `s` up to spans.
inline std::string print_spec(const CellSpec& spec) {
  std::string out = "cell " + spec.name + " {\n";
  for (const auto& p : spec.ports) {
    out += p.is_state ? "  state " : "  input ";
    out += p.name;
    if (!p.type.empty()) out += ": " + p.type;
    out += ";\n";
  }
  for (const auto& s : spec.statements) {
    out += "  " + target_name(s) + " = " + print_expr(s.expr) + ";\n";
  }
  out += "}\n";
  return out;
}

/// Structural equality ignoring source spans.
inline bool same_structure(const Expr& a, const Expr& b) {
  if (a.kind != b.kind || a.args.size() != b.args.size()) return false;
  switch (a.kind) {
    case ExprKind::ref:
      if (a.name != b.name || a.primed != b.primed) return false;
      break;
    case ExprKind::constant:
      if (a.value != b.value) return false;
      break;
    case ExprKind::unary:
      if (a.unary != b.unary || (a.unary == UnaryFn::scale && a.value != b.value)) return false;
      break;
    case ExprKind::binary:
      if (a.binary != b.binary) return false;
      break;
    case ExprKind::gate:
      break;
    case ExprKind::affine:
      if (a.matrix != b.matrix || a.bias != b.bias || a.affine_id != b.affine_id) return false;
      break;
  }
  for (std::size_t i = 0; i < a.args.size(); ++i)
    if (!same_structure(a.args[i], b.args[i])) return false;
  return true;
}

inline bool same_structure(const CellSpec& a, const CellSpec& b) {
  if (a.name != b.name || a.ports.size() != b.ports.size() ||
      a.statements.size() != b.statements.size() || a.affine_count != b.affine_count) {
    return false;
  }
  for (std::size_t i = 0; i < a.ports.size(); ++i) {
    const auto &p = a.ports[i], &q = b.ports[i];
    if (p.name != q.name || p.type != q.type || p.is_state != q.is_state) return false;
  }
  for (std::size_t i = 0; i < a.statements.size(); ++i) {
    const auto &s = a.statements[i], &t = b.statements[i];
    if (s.target != t.target || s.next_state != t.next_state || !same_structure(s.expr, t.expr)) {
      return false;
    }
  }
  return true;
}

}  // namespace strnn::dsl
