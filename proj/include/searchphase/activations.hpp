#pragma once

#include <functional>
#include <optional>
#include <string>

namespace searchphase {

enum class Parity { odd, even, none };
enum class LabelTransform { identity, square };

struct ActivationSpec {
    std::string name;
    std::function<double(double)> evaluate;
    // Empty means "use a central difference".
    std::function<double(double)> derivative;
    Parity parity = Parity::none;
    std::optional<int> pure_hermite_degree;
    // Degree of an exact polynomial (finite Hermite expansion), if any.
    std::optional<int> polynomial_degree;
    // Kinked functions need a longer quadrature rule.
    bool smooth = true;

    double operator()(double z) const { return evaluate(z); }
    double deriv(double z) const;
    bool has_analytic_derivative() const { return static_cast<bool>(derivative); }
};

// linear, erf, relu, sigmoid, hermite(k) (alias heK)
ActivationSpec builtin(const std::string& name);

ActivationSpec transform_teacher(const ActivationSpec& spec, LabelTransform t);

double apply_label_transform(LabelTransform t, double y);

LabelTransform parse_label_transform(const std::string& s);
std::string to_string(LabelTransform t);
std::string to_string(Parity p);

}  // namespace searchphase
