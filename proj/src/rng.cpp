#include "searchphase/rng.hpp"

#include <boost/random/normal_distribution.hpp>

namespace searchphase {

std::mt19937_64 keyed_engine(std::uint64_t seed, Stream stream, std::uint64_t counter) {
    const auto s = static_cast<std::uint64_t>(stream);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(counter),
                      static_cast<std::uint32_t>(counter >> 32)};
    return std::mt19937_64(seq);
}

NormalSource::NormalSource(std::uint64_t seed, Stream stream, std::uint64_t counter)
    : engine_(keyed_engine(seed, stream, counter)) {}

double NormalSource::operator()() {
    boost::random::normal_distribution<double> n;
    return n(engine_);
}

void NormalSource::fill(double* out, std::size_t n) {
    boost::random::normal_distribution<double> dist;
    for (std::size_t i = 0; i < n; ++i) out[i] = dist(engine_);
}

Eigen::VectorXd NormalSource::vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    fill(v.data(), static_cast<std::size_t>(n));
    return v;
}

Eigen::MatrixXd NormalSource::matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    fill(m.data(), static_cast<std::size_t>(rows * cols));
    return m;
}

Eigen::VectorXd random_unit_vector(NormalSource& src, Eigen::Index d) {
    for (;;) {
        Eigen::VectorXd v = src.vector(d);
        const double n = v.norm();
        if (n > 0.0) return v / n;
    }
}

}  // namespace searchphase
