// hash.hpp - 64-bit FNV-1a, used for basis fingerprints, config hashes and cache checksums

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string_view>

namespace pfflow {

class Fnv1a {
public:
    static constexpr std::uint64_t offset = 0xcbf29ce484222325ULL;
    static constexpr std::uint64_t prime = 0x100000001b3ULL;

    Fnv1a& bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= prime;
        }
        return *this;
    }
    Fnv1a& str(std::string_view s) {
        bytes(s.data(), s.size());
        const unsigned char sep = 0xff;
        return bytes(&sep, 1);
    }
    Fnv1a& u64(std::uint64_t v) { return bytes(&v, sizeof v); }
    Fnv1a& i64(std::int64_t v) { return bytes(&v, sizeof v); }
    Fnv1a& f64(double v) { return u64(std::bit_cast<std::uint64_t>(v)); }

    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_ = offset;
};

inline std::uint64_t fnv1a(std::string_view s) { return Fnv1a().bytes(s.data(), s.size()).value(); }

}  // namespace pfflow
