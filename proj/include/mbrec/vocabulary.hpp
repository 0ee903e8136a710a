#pragma once

#include <string>
#include <utility>

#include "mbrec/common.hpp"
#include "mbrec/rng.hpp"

namespace mbrec::tok {

enum class TokenRole { padding, bos, eos, user, behavior, digit };

// Flat token space shared by encoder and decoder:
//   [PAD, BOS, EOS][user buckets][behaviors][level-1 digits]...[level-m digits]
// Each code level owns a disjoint token range, so a digit token identifies both
// its level and its value.
struct Vocabulary {
    std::size_t user_buckets = 0;
    std::size_t num_behaviors = 0;
    std::size_t digit_positions = 0;  // m
    std::size_t digit_base = 0;       // per-level code count

    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr std::size_t kSpecials = 3;

    std::size_t size() const {
        return kSpecials + user_buckets + num_behaviors + digit_positions * digit_base;
    }

    int user_token(std::size_t bucket) const {
        if (bucket >= user_buckets)
            throw ConfigError("vocabulary: user bucket " + std::to_string(bucket) +
                              " outside " + std::to_string(user_buckets));
        return static_cast<int>(kSpecials + bucket);
    }

    int behavior_token(int behavior) const {
        if (behavior < 0 || static_cast<std::size_t>(behavior) >= num_behaviors)
            throw ConfigError("vocabulary: behavior " + std::to_string(behavior) +
                              " outside " + std::to_string(num_behaviors));
        return static_cast<int>(kSpecials + user_buckets + static_cast<std::size_t>(behavior));
    }

    int digit_token(std::size_t position, int value) const {
        if (position >= digit_positions)
            throw ConfigError("vocabulary: digit position " + std::to_string(position) +
                              " outside " + std::to_string(digit_positions));
        if (value < 0 || static_cast<std::size_t>(value) >= digit_base)
            throw ConfigError("vocabulary: digit value " + std::to_string(value) +
                              " outside base " + std::to_string(digit_base));
        return static_cast<int>(kSpecials + user_buckets + num_behaviors +
                                position * digit_base + static_cast<std::size_t>(value));
    }

    int first_behavior_token() const { return static_cast<int>(kSpecials + user_buckets); }
    int first_digit_token(std::size_t position) const {
        return static_cast<int>(kSpecials + user_buckets + num_behaviors +
                                position * digit_base);
    }

    TokenRole role(int token) const {
        auto t = static_cast<std::size_t>(check_token(token));
        if (t == static_cast<std::size_t>(kPad)) return TokenRole::padding;
        if (t == static_cast<std::size_t>(kBos)) return TokenRole::bos;
        if (t == static_cast<std::size_t>(kEos)) return TokenRole::eos;
        if (t < kSpecials + user_buckets) return TokenRole::user;
        if (t < kSpecials + user_buckets + num_behaviors) return TokenRole::behavior;
        return TokenRole::digit;
    }

    int behavior_of(int token) const {
        if (role(token) != TokenRole::behavior)
            throw ConfigError("vocabulary: token " + std::to_string(token) +
                              " is not a behavior token");
        return token - first_behavior_token();
    }

    // (position, value) of a digit token.
    std::pair<std::size_t, int> digit_of(int token) const {
        if (role(token) != TokenRole::digit)
            throw ConfigError("vocabulary: token " + std::to_string(token) +
                              " is not a digit token");
        const std::size_t off =
            static_cast<std::size_t>(token) - (kSpecials + user_buckets + num_behaviors);
        return {off / digit_base, static_cast<int>(off % digit_base)};
    }

    std::size_t bucket_of(int token) const {
        if (role(token) != TokenRole::user)
            throw ConfigError("vocabulary: token " + std::to_string(token) +
                              " is not a user token");
        return static_cast<std::size_t>(token) - kSpecials;
    }

private:
    int check_token(int token) const {
        if (token < 0 || static_cast<std::size_t>(token) >= size())
            throw ConfigError("vocabulary: token " + std::to_string(token) + " outside size " +
                              std::to_string(size()));
        return token;
    }
};

// Hashing trick: raw user ids map onto a fixed bucket range.
inline std::size_t hash_user_bucket(const std::string& raw_id, std::size_t buckets) {
    if (buckets == 0) throw ConfigError("hash_user_bucket: zero buckets");
    return static_cast<std::size_t>(fnv1a64(raw_id) % buckets);
}

}  // namespace mbrec::tok
