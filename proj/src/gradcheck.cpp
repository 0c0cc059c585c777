#include "segadv/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "segadv/error.hpp"
#include "segadv/rng.hpp"

namespace segadv {

namespace {

struct Evaluation {
  double value = 0.0;
  std::vector<std::uint8_t> branches;
  bool finite = true;
};

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Evaluation evaluate(const Program& program, const std::vector<Tensor>& inputs,
                    const Tensor& seed) {
  Tape tape;
  tape.set_record_branches(true);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.input(t));
  Var out = program(tape, vars);
  Evaluation e;
  e.value = dot(out.value(), seed);
  e.finite = std::isfinite(e.value);
  e.branches = tape.branch_pattern();
  return e;
}

}  // namespace

std::string FiniteDiffReport::summary() const {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << "max_rel_err=" << max_relative_error
     << " checked=" << checked << " kinks_excluded=" << kink_coordinates.size();
  if (non_finite) {
    os << " non_finite_at=" << non_finite->input << ':' << non_finite->index;
  }
  os << (passed ? " PASS" : " FAIL");
  return os.str();
}

FiniteDiffReport finite_diff_check(const Program& program,
                                   const std::vector<Tensor>& inputs, double h,
                                   double tol) {
  if (!(h > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "finite difference step must be positive");
  }
  FiniteDiffReport report;

  Tape tape;
  tape.set_record_branches(true);
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.input(t));
  Var out = program(tape, vars);

  Tensor seed(out.shape(), 1.0);
  if (out.value().size() > 1) {
    Rng rng(0x5eed);
    for (double& v : seed.data()) v = rng.uniform(-1.0, 1.0);
  }
  const GradientResult grads = tape.backward(out, seed);
  const std::vector<std::uint8_t> base_branches = tape.branch_pattern();

  double scale = 0.0;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const Tensor& g = grads.input(vars[k]);
    if (!all_finite(g)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) {
          report.non_finite = Coordinate{k, i};
          return report;
        }
      }
    }
    scale = std::max(scale, max_abs(g));
  }
  const double floor = std::max(1e-3 * scale, 1e-12);

  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = grads.input(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + h;
      const Evaluation plus = evaluate(program, probe, seed);
      probe[k][i] = x0 - h;
      const Evaluation minus = evaluate(program, probe, seed);
      probe[k][i] = x0;
      if (!plus.finite || !minus.finite) {
        report.non_finite = Coordinate{k, i};
        report.passed = false;
        return report;
      }
      if (plus.branches != minus.branches || plus.branches != base_branches) {
        report.kink_coordinates.push_back(Coordinate{k, i});
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / denom;
      ++report.checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst = Coordinate{k, i};
      }
    }
  }
  report.passed = report.max_relative_error < tol;
  return report;
}

}  // namespace segadv
