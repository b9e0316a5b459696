#pragma once

// Front door shared by the CLI and the test suites: stages query pipelines
// over their declared inputs, runs the termination gate, and applies
// inference/evaluation uniformly to both surface syntaxes.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fcalc/ast.hpp"
#include "fcalc/check.hpp"
#include "fcalc/eval.hpp"
#include "fcalc/infer.hpp"
#include "fcalc/jaql.hpp"
#include "fcalc/parser.hpp"
#include "fcalc/pattern.hpp"
#include "fcalc/types.hpp"
#include "fcalc/value.hpp"

namespace fcalc {

// Threads the declared-input tuple of a query program through its stages.
// Stage filters see the declared names via a scaffold pattern
// (x1, (x2, ... `nil)); each stage is typed and run on its own with the
// current pipeline value passed alongside the tuple, which is what lets the
// per-stage types be reported and pinned individually.
class PipeDriver {
 public:
  PipeDriver(TypeEngine& eng, const jaql::Program& prog) : eng_(eng), prog_(prog) {
    PatternPtr pat = pat::type(eng.singleton(Value::nil()));
    NodeId ty = eng.singleton(Value::nil());
    for (size_t i = prog.inputs.size(); i-- > 0;) {
      pat = pat::pair(pat::var(prog.inputs[i].first), std::move(pat));
      ty = eng.product(prog.inputs[i].second, ty);
    }
    scaffold_ = std::move(pat);
    env_ty_ = ty;
  }

  struct Traced {
    std::string label;
    NodeId type;
  };

  // One entry per traced stage: the value entering the pipeline first, then
  // the result of every stage in order.
  std::vector<Traced> trace_types(Inferencer& inf) const {
    std::vector<Traced> out;
    NodeId t = inf.infer(*flt::arrow(scaffold_, flt::expr(prog_.initial)), env_ty_);
    out.push_back({"input", t});
    for (const auto& st : prog_.stages) {
      t = inf.infer(*stage_wrapper(st), eng_.product(env_ty_, t));
      out.push_back({st.label, t});
    }
    return out;
  }

  NodeId result_type(Inferencer& inf) const { return trace_types(inf).back().type; }

  // Evaluates the pipeline on one value per declared input (in declaration
  // order). Ω from any stage is Ω for the whole run.
  std::optional<Value> run(Evaluator& ev, const std::vector<Value>& inputs) const {
    Value env_val = Value::nil();
    for (size_t i = prog_.inputs.size(); i-- > 0;)
      env_val = Value::pair(i < inputs.size() ? inputs[i] : Value::nil(), std::move(env_val));
    auto v = ev.run(*flt::arrow(scaffold_, flt::expr(prog_.initial)), env_val);
    for (const auto& st : prog_.stages) {
      if (!v) return std::nullopt;
      v = ev.run(*stage_wrapper(st), Value::pair(env_val, *v));
    }
    return v;
  }

  // The pipeline as a single filter over the declared-input tuple, for the
  // termination gate and core emission.
  FilterPtr whole() const {
    FilterPtr chain;
    for (size_t i = prog_.stages.size(); i-- > 0;) {
      const FilterPtr& f = prog_.stages[i].f;
      chain = chain ? flt::comp(f, std::move(chain)) : f;
    }
    FilterPtr body = flt::expr(prog_.initial);
    if (chain) body = flt::comp(std::move(body), std::move(chain));
    return flt::arrow(scaffold_, std::move(body));
  }

  NodeId env_type() const { return env_ty_; }

 private:
  FilterPtr stage_wrapper(const jaql::ProgramStage& st) const {
    return flt::arrow(pat::pair(scaffold_, pat::var("$pipe")),
                      flt::comp(flt::expr(ex::var("$pipe")), st.f));
  }

  TypeEngine& eng_;
  const jaql::Program& prog_;
  PatternPtr scaffold_;
  NodeId env_ty_;
};

// The input type a calculus program is typed against when its source has no
// header: everything its main filter accepts.
inline NodeId program_input_type(TypeEngine& eng, const Program& prog) {
  if (prog.input_type) return *prog.input_type;
  return accepted_filter(*prog.main, eng, nullptr);
}

}  // namespace fcalc
