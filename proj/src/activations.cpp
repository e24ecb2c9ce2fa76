#include "searchphase/activations.hpp"

#include <cmath>
#include <regex>

#include "searchphase/errors.hpp"
#include "searchphase/hermite.hpp"

namespace searchphase {

double ActivationSpec::deriv(double z) const {
    if (derivative) return derivative(z);
    const double h = 1e-5 * std::max(1.0, std::abs(z));
    return (evaluate(z + h) - evaluate(z - h)) / (2.0 * h);
}

namespace {

ActivationSpec hermite_spec(int k) {
    ActivationSpec s;
    s.name = "hermite(" + std::to_string(k) + ")";
    s.evaluate = [k](double z) { return eval_scaled_hermite(k, 1.0, z); };
    s.derivative = [k](double z) { return k == 0 ? 0.0 : k * eval_scaled_hermite(k - 1, 1.0, z); };
    s.parity = (k % 2 == 0) ? Parity::even : Parity::odd;
    s.pure_hermite_degree = k;
    s.polynomial_degree = k;
    return s;
}

}  // namespace

ActivationSpec builtin(const std::string& name) {
    if (name == "linear") {
        // linear is He_1; the closed-form coefficient path applies to it too
        ActivationSpec s = hermite_spec(1);
        s.name = "linear";
        s.evaluate = [](double z) { return z; };
        s.derivative = [](double) { return 1.0; };
        return s;
    }
    if (name == "erf") {
        ActivationSpec s;
        s.name = "erf";
        s.evaluate = [](double z) { return std::erf(z); };
        s.derivative = [](double z) { return 2.0 / std::sqrt(M_PI) * std::exp(-z * z); };
        s.parity = Parity::odd;
        return s;
    }
    if (name == "relu") {
        ActivationSpec s;
        s.name = "relu";
        s.evaluate = [](double z) { return z > 0.0 ? z : 0.0; };
        s.derivative = [](double z) { return z > 0.0 ? 1.0 : (z < 0.0 ? 0.0 : 0.5); };
        s.parity = Parity::none;
        s.smooth = false;
        return s;
    }
    if (name == "sigmoid") {
        ActivationSpec s;
        s.name = "sigmoid";
        s.evaluate = [](double z) {
            if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
            const double e = std::exp(z);
            return e / (1.0 + e);
        };
        s.derivative = [f = s.evaluate](double z) {
            const double v = f(z);
            return v * (1.0 - v);
        };
        s.parity = Parity::none;
        return s;
    }
    static const std::regex herm(R"(^\s*(?:hermite\((\d+)\)|he(\d+))\s*$)");
    std::smatch mt;
    if (std::regex_match(name, mt, herm)) {
        const int k = std::stoi(mt[1].matched ? mt[1].str() : mt[2].str());
        if (k > 40) throw InvalidArgument("hermite degree too large: " + name);
        return hermite_spec(k);
    }
    throw LookupError("unknown activation: '" + name + "'");
}

double apply_label_transform(LabelTransform t, double y) {
    return t == LabelTransform::square ? y * y : y;
}

ActivationSpec transform_teacher(const ActivationSpec& spec, LabelTransform t) {
    if (t == LabelTransform::identity) return spec;
    ActivationSpec s;
    s.name = "square(" + spec.name + ")";
    s.evaluate = [f = spec.evaluate](double z) {
        const double v = f(z);
        return v * v;
    };
    if (spec.derivative) {
        s.derivative = [f = spec.evaluate, g = spec.derivative](double z) { return 2.0 * f(z) * g(z); };
    }
    s.parity = spec.parity == Parity::none ? Parity::none : Parity::even;
    if (spec.polynomial_degree) s.polynomial_degree = 2 * *spec.polynomial_degree;
    s.smooth = spec.smooth;
    return s;
}

LabelTransform parse_label_transform(const std::string& s) {
    if (s == "identity" || s == "none" || s.empty()) return LabelTransform::identity;
    if (s == "square") return LabelTransform::square;
    throw LookupError("unknown label transform: '" + s + "'");
}

std::string to_string(LabelTransform t) { return t == LabelTransform::square ? "square" : "identity"; }

std::string to_string(Parity p) {
    switch (p) {
        case Parity::odd: return "odd";
        case Parity::even: return "even";
        default: return "none";
    }
}

}  // namespace searchphase
