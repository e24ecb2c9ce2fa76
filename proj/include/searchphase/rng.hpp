#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>

namespace searchphase {

// Disjoint stream ids; a (seed, stream, counter) triple fully determines the draws.
enum class Stream : std::uint64_t {
    teacher = 1,
    student = 2,
    xi = 3,
    train = 4,
    test = 5,
    committee_teacher = 6,
    committee_student = 7,
    committee_train = 8,
    committee_test = 9,
};

// Engine keyed by (seed, stream, counter); independent of thread scheduling.
std::mt19937_64 keyed_engine(std::uint64_t seed, Stream stream, std::uint64_t counter);

// Standard normals from a keyed engine. Uses Boost's ziggurat sampler, whose
// output is fixed by the engine output across platforms.
class NormalSource {
public:
    NormalSource(std::uint64_t seed, Stream stream, std::uint64_t counter);
    double operator()();
    void fill(double* out, std::size_t n);
    Eigen::VectorXd vector(Eigen::Index n);
    Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols);

private:
    std::mt19937_64 engine_;
};

Eigen::VectorXd random_unit_vector(NormalSource& src, Eigen::Index d);

}  // namespace searchphase
