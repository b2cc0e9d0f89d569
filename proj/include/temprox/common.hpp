// Shared error types, seeding helpers and small utilities.

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace temprox {

// Error taxonomy. Every contract violation in the library throws one of
// these; the CLI maps them to exit codes.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct index_error : std::runtime_error {
    explicit index_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// splitmix64: cheap, well-mixed stream derivation. All stochastic pieces of
// the pipeline seed their own mt19937_64 from derive_seed(root, tags...), so
// skipping one consumer (e.g. the pseudo-positive forward when lambda=0)
// cannot perturb any other stream.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root) { return splitmix64(root); }

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t tag, Tags... rest) {
    return derive_seed(splitmix64(root ^ splitmix64(tag)), rest...);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace temprox
