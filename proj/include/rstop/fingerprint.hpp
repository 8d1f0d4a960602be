#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace rstop {

/// 64-bit FNV-1a running hash. Used for policy and run fingerprints; stable
/// across platforms because it only ever consumes explicit byte sequences.
class Fnv1a {
public:
    static constexpr std::uint64_t kOffset = 14695981039346656037ull;
    static constexpr std::uint64_t kPrime = 1099511628211ull;

    constexpr Fnv1a() noexcept = default;

    void feed_bytes(const void* data, std::size_t n) noexcept {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= kPrime;
        }
    }

    void feed(std::string_view s) noexcept { feed_bytes(s.data(), s.size()); }

    void feed(std::uint64_t v) noexcept {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        feed_bytes(b, 8);
    }

    void feed(std::int64_t v) noexcept { feed(static_cast<std::uint64_t>(v)); }
    void feed(int v) noexcept { feed(static_cast<std::uint64_t>(static_cast<std::int64_t>(v))); }

    void feed(double v) noexcept {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, 8);
        feed(bits);
    }

    [[nodiscard]] std::uint64_t value() const noexcept { return state_; }

    /// Fixed-width lowercase hex rendering, e.g. "f0e1d2c3b4a59687".
    [[nodiscard]] std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        std::uint64_t v = state_;
        for (int i = 15; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = digits[v & 0xf];
            v >>= 4;
        }
        return out;
    }

private:
    std::uint64_t state_ = kOffset;
};

} // namespace rstop
