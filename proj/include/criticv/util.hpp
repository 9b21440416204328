#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace criticv {

// FNV-1a, used everywhere a platform-stable hash is required (tie breaks,
// per-sample seeds, config hashes). std::hash is not stable across stdlibs.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::string_view s) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = char((seed >> (8 * i)) & 0xff);
    return fnv1a64(s, fnv1a64(std::string_view(buf, 8)));
}

// Deterministic, platform-independent generator (splitmix64).
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi) {
        return lo + int(next() % std::uint64_t(hi - lo + 1));
    }

    double uniform_real() {
        return double(next() >> 11) * (1.0 / 9007199254740992.0);
    }

private:
    std::uint64_t state_;
};

inline int whitespace_token_count(std::string_view text) {
    int count = 0;
    bool in_token = false;
    for (char c : text) {
        bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (!ws && !in_token) ++count;
        in_token = !ws;
    }
    return count;
}

inline double population_mean(const std::vector<double>& xs) {
    double s = 0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / double(xs.size());
}

inline double population_std(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double m = population_mean(xs);
    double s = 0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / double(xs.size()));
}

inline std::string base64_encode(std::string_view in) {
    static const char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 3 <= in.size()) {
        std::uint32_t v = (std::uint8_t(in[i]) << 16) | (std::uint8_t(in[i + 1]) << 8) | std::uint8_t(in[i + 2]);
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += tbl[(v >> 6) & 63];
        out += tbl[v & 63];
        i += 3;
    }
    if (i + 1 == in.size()) {
        std::uint32_t v = std::uint8_t(in[i]) << 16;
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == in.size()) {
        std::uint32_t v = (std::uint8_t(in[i]) << 16) | (std::uint8_t(in[i + 1]) << 8);
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += tbl[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(std::uint8_t(s[b]))) ++b;
    while (e > b && std::isspace(std::uint8_t(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace criticv
