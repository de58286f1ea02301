// SPDX-License-Identifier: Apache-2.0
//
// Type checker for cell specifications.
//
// Every expression gets a type variable. Base types come from port
// declarations (Named), each general affine node produces a fresh Rigid type
// and each orthogonal node a Transformed(node, operand type). Diagonal,
// symmetric and scalar nodes keep their operand's type, unary maps keep their
// argument's type, binary maps unify their arguments and `g (*) v` takes the
// type of v. A Rigid or Transformed type may be identified with a Named one
// (the base type is then that latent type), but two distinct Rigid or
// Transformed heads never unify.
//
// Independently, a cell is rejected when a state port reaches itself in the
// one-step dataflow graph through a general or orthogonal affine node.

#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "strnn/spec_dsl.hpp"

namespace strnn::dsl {

struct Diagnostic {
  enum class Kind : std::uint8_t { type_clash, cycle };
  Kind kind = Kind::type_clash;
  Span span;
  std::string message;            // single line, without the location
  std::string lhs, rhs;           // clashing types (type_clash)
  std::vector<std::string> path;  // offending cycle (cycle)
};

struct Verdict {
  bool well_typed = false;
  std::string cell;
  std::vector<Diagnostic> diagnostics;
  std::vector<std::pair<std::string, std::string>> binding_types;  // in statement order
};

namespace detail {

class TypeStore {
public:
  struct Head {
    bool transformed = false;
    int node = 0;    // affine id
    int inner = -1;  // type variable, for Transformed
  };

  int fresh() {
    parent_.push_back(static_cast<int>(parent_.size()));
    named_.emplace_back();
    head_.emplace_back();
    return static_cast<int>(parent_.size()) - 1;
  }
  int named(const std::string& label) {
    auto it = named_vars_.find(label);
    if (it != named_vars_.end()) return it->second;
    const int v = fresh();
    named_[v] = label;
    named_vars_.emplace(label, v);
    return v;
  }
  int rigid(int node) {
    const int v = fresh();
    head_[v] = Head{false, node, -1};
    return v;
  }
  int transformed(int node, int inner) {
    const int v = fresh();
    head_[v] = Head{true, node, inner};
    return v;
  }

  int find(int v) {
    while (parent_[v] != v) {
      parent_[v] = parent_[parent_[v]];
      v = parent_[v];
    }
    return v;
  }

  /// False when the two types cannot be identified.
  bool unify(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return true;
    if (named_[a] && named_[b] && *named_[a] != *named_[b]) return false;
    if (head_[a] && head_[b]) {
      const Head ha = *head_[a], hb = *head_[b];
      if (ha.transformed != hb.transformed || ha.node != hb.node) return false;
      parent_[b] = a;
      if (!named_[a]) named_[a] = named_[b];
      return !ha.transformed || unify(ha.inner, hb.inner);
    }
    // Occurs check: a class may not contain a transform of itself.
    const auto& h = head_[a] ? head_[a] : head_[b];
    if (h && h->transformed) {
      const int inner = find(h->inner);
      if (inner == a || inner == b) return false;
    }
    parent_[b] = a;
    if (!named_[a]) named_[a] = named_[b];
    if (!head_[a]) head_[a] = head_[b];
    return true;
  }

  std::string show(int v) {
    v = find(v);
    std::string head;
    if (head_[v]) {
      const Head h = *head_[v];
      head = "affine#" + std::to_string(h.node);
      if (h.transformed) head += "(" + show(h.inner) + ")";
    }
    if (named_[v] && !head.empty()) return *named_[v] + "=" + head;
    if (named_[v]) return *named_[v];
    if (!head.empty()) return head;
    return "?";
  }

private:
  std::vector<int> parent_;
  std::vector<std::optional<std::string>> named_;
  std::vector<std::optional<Head>> head_;
  std::map<std::string, int> named_vars_;
};

class Checker {
public:
  explicit Checker(const CellSpec& spec) : spec_(spec) {}

  Verdict run() {
    Verdict v;
    v.cell = spec_.name;
    for (const auto& p : spec_.ports) env_[p.name] = store_.named(CellSpec::port_type(p));
    for (const auto& s : spec_.statements) {
      const int t = infer(s.expr, v);
      if (s.next_state) {
        const Port& port = *spec_.find_port(s.target);
        const int pt = env_[port.name];
        unify_or_report(v, s.span, t, pt, "next state " + target_name(s));
        primed_[s.target] = t;
      } else {
        env_[s.target] = t;
      }
      types_.emplace_back(target_name(s), t);
    }
    cycles(v);
    std::stable_sort(v.diagnostics.begin(), v.diagnostics.end(),
                     [](const Diagnostic& a, const Diagnostic& b) { return a.span < b.span; });
    v.well_typed = v.diagnostics.empty();
    if (v.well_typed) {
      for (const auto& [name, t] : types_) v.binding_types.emplace_back(name, store_.show(t));
    }
    return v;
  }

private:
  const CellSpec& spec_;
  TypeStore store_;
  std::map<std::string, int> env_;
  std::map<std::string, int> primed_;
  std::vector<std::pair<std::string, int>> types_;

  // Both sides are rendered before unifying so the message shows the types
  // as they were.
  void unify_or_report(Verdict& v, Span at, int a, int b, const std::string& where) {
    const std::string sa = store_.show(a), sb = store_.show(b);
    if (store_.unify(a, b)) return;
    Diagnostic d;
    d.kind = Diagnostic::Kind::type_clash;
    d.span = at;
    d.lhs = sa;
    d.rhs = sb;
    d.message = "cannot unify " + sa + " with " + sb + " in " + where;
    v.diagnostics.push_back(std::move(d));
  }

  int infer(const Expr& e, Verdict& v) {
    switch (e.kind) {
      case ExprKind::ref:
        return e.primed ? primed_.at(e.name) : env_.at(e.name);
      case ExprKind::constant:
        return store_.fresh();
      case ExprKind::unary:
        return infer(e.args[0], v);
      case ExprKind::binary: {
        const int a = infer(e.args[0], v);
        const int b = infer(e.args[1], v);
        static constexpr const char* names[] = {"'+'", "'-'", "'max'", "'min'"};
        unify_or_report(v, e.span, a, b, names[static_cast<int>(e.binary)]);
        return a;
      }
      case ExprKind::gate:
        infer(e.args[0], v);
        return infer(e.args[1], v);
      case ExprKind::affine: {
        std::vector<int> ops;
        for (const auto& a : e.args) ops.push_back(infer(a, v));
        if (e.matrix == MatrixKind::general) return store_.rigid(e.affine_id);
        const std::string where = "affine#" + std::to_string(e.affine_id) + "[" +
                                  std::string(to_string(e.matrix)) + "]";
        for (std::size_t i = 1; i < ops.size(); ++i) unify_or_report(v, e.span, ops[0], ops[i], where);
        if (e.matrix == MatrixKind::orthogonal) return store_.transformed(e.affine_id, ops[0]);
        return ops[0];
      }
    }
    return store_.fresh();
  }

  // ---- recurrence cycles ---------------------------------------------------
  //
  // Graph nodes, in source order: ports, then for each statement its affine
  // nodes (by position) followed by the binding itself. Operators between
  // them are transparent. Binding s' flows into port s.

  struct Node {
    std::string label;
    Span span;
    bool port = false;
    bool next_state = false;  // binding s'
    int affine_id = 0;
    MatrixKind matrix = MatrixKind::general;
    std::vector<int> out;
  };
  std::vector<Node> nodes_;
  std::map<std::string, int> node_of_name_;     // ports and plain bindings
  std::map<std::string, int> node_of_primed_;   // s' bindings

  // Adds edges from every graph node feeding `e` to `sink`; affine
  // sub-expressions become nodes of their own.
  void feed(const Expr& e, int sink) {
    switch (e.kind) {
      case ExprKind::ref: {
        const int src = e.primed ? node_of_primed_.at(e.name) : node_of_name_.at(e.name);
        nodes_[src].out.push_back(sink);
        return;
      }
      case ExprKind::constant:
        return;
      case ExprKind::affine: {
        Node n;
        n.label = "affine#" + std::to_string(e.affine_id) + "[" + std::string(to_string(e.matrix)) + "]";
        n.span = e.span;
        n.affine_id = e.affine_id;
        n.matrix = e.matrix;
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(std::move(n));
        for (const auto& a : e.args) feed(a, id);
        nodes_[id].out.push_back(sink);
        return;
      }
      default:
        for (const auto& a : e.args) feed(a, sink);
        return;
    }
  }

  void cycles(Verdict& v) {
    for (const auto& p : spec_.ports) {
      Node n;
      n.label = p.name;
      n.span = p.span;
      n.port = true;
      node_of_name_[p.name] = static_cast<int>(nodes_.size());
      nodes_.push_back(std::move(n));
    }
    for (const auto& s : spec_.statements) {
      // Affine nodes are numbered before the binding they feed, so node
      // order follows source order. Edges into the binding go to a
      // placeholder until its index is known.
      Node b;
      b.label = target_name(s);
      b.span = s.span;
      b.next_state = s.next_state;
      constexpr int kSink = -1;
      feed(s.expr, kSink);
      const int id = static_cast<int>(nodes_.size());
      nodes_.push_back(std::move(b));
      for (auto& n : nodes_)
        for (int& o : n.out)
          if (o == kSink) o = id;
      if (s.next_state) {
        node_of_primed_[s.target] = id;
        nodes_[id].out.push_back(node_of_name_.at(s.target));
      } else {
        node_of_name_[s.target] = id;
      }
    }
    for (auto& n : nodes_) {
      std::sort(n.out.begin(), n.out.end());
      n.out.erase(std::unique(n.out.begin(), n.out.end()), n.out.end());
    }
    for (int a = 0; a < static_cast<int>(nodes_.size()); ++a) {
      const Node& n = nodes_[a];
      if (n.affine_id == 0 || preserves_type(n.matrix)) continue;
      std::vector<int> cyc = shortest_cycle(a);
      if (cyc.empty()) continue;
      Diagnostic d;
      d.kind = Diagnostic::Kind::cycle;
      d.span = n.span;
      d.path = render(cyc);
      d.message = "cycle";
      for (std::size_t i = 0; i < d.path.size(); ++i) d.message += (i == 0 ? " " : " → ") + d.path[i];
      v.diagnostics.push_back(std::move(d));
    }
  }

  // Shortest path a -> ... -> a (BFS, successors in source order), as the
  // node sequence without the repeated endpoint.
  std::vector<int> shortest_cycle(int a) const {
    std::vector<int> prev(nodes_.size(), -2);
    std::deque<int> q;
    for (int s : nodes_[a].out) {
      if (prev[s] != -2) continue;
      prev[s] = a;
      q.push_back(s);
    }
    while (!q.empty()) {
      const int u = q.front();
      q.pop_front();
      if (u == a) break;
      for (int w : nodes_[u].out) {
        if (prev[w] != -2) continue;
        prev[w] = u;
        q.push_back(w);
      }
    }
    if (prev[a] == -2) return {};
    std::vector<int> cyc;
    int u = prev[a];
    cyc.push_back(a);
    while (u != a) {
      cyc.push_back(u);
      u = prev[u];
    }
    std::reverse(cyc.begin() + 1, cyc.end());
    return cyc;
  }

  // Rotates to start at the earliest-declared port and drops s' bindings
  // that flow straight into their port.
  std::vector<std::string> render(std::vector<int> cyc) const {
    std::size_t start = 0;
    int best = -1;
    for (std::size_t i = 0; i < cyc.size(); ++i) {
      if (nodes_[cyc[i]].port && (best < 0 || cyc[i] < best)) {
        best = cyc[i];
        start = i;
      }
    }
    std::rotate(cyc.begin(), cyc.begin() + static_cast<std::ptrdiff_t>(start), cyc.end());
    cyc.push_back(cyc.front());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < cyc.size(); ++i) {
      const Node& n = nodes_[cyc[i]];
      if (n.next_state && i + 1 < cyc.size() && nodes_[cyc[i + 1]].port) continue;
      out.push_back(n.label);
    }
    return out;
  }
};

}  // namespace detail

inline Verdict typecheck(const CellSpec& spec) { return detail::Checker(spec).run(); }

/// One line per diagnostic, or a WELL-TYPED header followed by binding types.
/// With `spans`, every diagnostic ends in " at LINE:COL".
inline std::string format_verdict(const Verdict& v, bool spans = false) {
  std::string out;
  if (v.well_typed) {
    out += "WELL-TYPED: " + v.cell + "\n";
    for (const auto& [name, type] : v.binding_types) out += "  " + name + " : " + type + "\n";
    return out;
  }
  for (const auto& d : v.diagnostics) {
    out += "ILL-TYPED: " + d.message;
    if (spans) out += " at " + to_string(d.span);
    out += "\n";
  }
  return out;
}

}  // namespace strnn::dsl
