#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fairlab/tensor.hpp"

namespace fairlab {

struct GradCheckReport {
    double max_rel_error = 0.0;
    bool pass = true;
    std::string worst;  // "input#i[j]" of the worst coordinate
};

// Compares reverse-mode gradients against central finite differences
// (f(x+eps*e) - f(x-eps*e)) / (2*eps) for every coordinate of every input
// that requires grad. Inputs with requires_grad=false (stop-gradient leaves
// included) are skipped on both sides of the comparison.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& f,
                           std::vector<Tensor<T>> inputs, T eps, T tol) {
    GradCheckReport report;

    // One analytic pass.
    Graph<T> graph;
    {
        typename Graph<T>::Scope scope(graph);
        for (auto& t : inputs) t.zero_grad();
        Tensor<T> loss = f(inputs);
        if (!loss.is_scalar()) throw std::invalid_argument("grad_check: f must return a scalar");
        graph.backward(loss);
    }

    // Finite differences, evaluated off-tape.
    auto value_of = [&](const std::vector<Tensor<T>>& xs) { return f(xs).item(); };
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        auto analytic = inputs[i].grad();
        auto vals = inputs[i].values();
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const T keep = vals[j];
            vals[j] = keep + eps;
            const T up = value_of(inputs);
            vals[j] = keep - eps;
            const T down = value_of(inputs);
            vals[j] = keep;
            const double fd = (static_cast<double>(up) - static_cast<double>(down)) /
                              (2.0 * static_cast<double>(eps));
            const double an = static_cast<double>(analytic[j]);
            const double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
            const double rel = std::abs(an - fd) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                std::ostringstream os;
                os << "input#" << i << "[" << j << "] analytic=" << an << " fd=" << fd;
                report.worst = os.str();
            }
        }
    }
    report.pass = report.max_rel_error <= static_cast<double>(tol);
    return report;
}

}  // namespace fairlab
