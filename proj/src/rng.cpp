#include "coevo/rng.hpp"

namespace coevo {

std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

Rng Rng::child(std::uint64_t master_seed, std::string_view name) {
    return Rng(mix64(mix64(master_seed) ^ fnv1a64(name)), 0);
}

std::uint64_t Rng::next() {
    ++counter_;
    return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    // Rejection sampling keeps the result exactly uniform.
    const std::uint64_t limit = max() - (max() % n);
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return x % n;
}

double Rng::uniform01() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

}  // namespace coevo
