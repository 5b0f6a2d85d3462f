#pragma once

// Parser for the `name(key=value, ...)` values used in distribution specs,
// experiment files and CLI flags.

#include "redund/error.hpp"

#include <cctype>
#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace redund {

inline std::string_view trim(std::string_view s) noexcept
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

inline std::string to_lower(std::string_view s)
{
    std::string out(s);
    for (char& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

/// Splits on `sep` outside of parentheses. Empty pieces are dropped.
inline std::vector<std::string> split_top_level(std::string_view text, char sep)
{
    std::vector<std::string> out;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        const bool end = i == text.size();
        if (!end && text[i] == '(')
            ++depth;
        else if (!end && text[i] == ')')
            --depth;
        if (depth < 0)
            throw ConfigError("unbalanced ')' in '" + std::string(text) + "'");
        if (end || (text[i] == sep && depth == 0)) {
            auto piece = trim(text.substr(start, i - start));
            if (!piece.empty())
                out.emplace_back(piece);
            start = i + 1;
        }
    }
    if (depth != 0)
        throw ConfigError("unbalanced '(' in '" + std::string(text) + "'");
    return out;
}

inline double parse_number(std::string_view text, std::string_view what)
{
    text = trim(text);
    double value = 0.0;
    // Accept simple fractions such as 1/3.
    if (auto slash = text.find('/'); slash != std::string_view::npos) {
        const double num = parse_number(text.substr(0, slash), what);
        const double den = parse_number(text.substr(slash + 1), what);
        if (den == 0.0)
            throw ConfigError("division by zero in " + std::string(what));
        return num / den;
    }
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw ConfigError("expected a number for " + std::string(what) + ", got '" +
                          std::string(text) + "'");
    return value;
}

struct CallExpr {
    std::string name;
    std::vector<std::pair<std::string, std::string>> args;

    std::optional<std::string> find(std::string_view key) const
    {
        for (const auto& [k, v] : args)
            if (k == key)
                return v;
        return std::nullopt;
    }

    double number(std::string_view key) const
    {
        auto v = find(key);
        if (!v)
            throw ConfigError(name + "(...) requires argument '" + std::string(key) + "'");
        return parse_number(*v, name + "." + std::string(key));
    }

    double number_or(std::string_view key, double fallback) const
    {
        auto v = find(key);
        return v ? parse_number(*v, name + "." + std::string(key)) : fallback;
    }

    /// Rejects argument names outside `allowed`.
    void expect_only(std::initializer_list<std::string_view> allowed) const
    {
        for (const auto& [k, v] : args) {
            bool ok = false;
            for (auto a : allowed)
                ok = ok || k == a;
            if (!ok)
                throw ConfigError("unknown argument '" + k + "' for " + name + "(...)");
        }
    }
};

/// Parses `name` or `name(key=value, ...)`. Names and keys are lower-cased.
inline CallExpr parse_call(std::string_view text)
{
    text = trim(text);
    CallExpr call;
    const auto open = text.find('(');
    if (open == std::string_view::npos) {
        call.name = to_lower(text);
    } else {
        if (text.back() != ')')
            throw ConfigError("expected ')' at end of '" + std::string(text) + "'");
        call.name = to_lower(trim(text.substr(0, open)));
        const auto inner = text.substr(open + 1, text.size() - open - 2);
        for (const auto& piece : split_top_level(inner, ',')) {
            const auto eq = piece.find('=');
            if (eq == std::string::npos)
                throw ConfigError("expected key=value in '" + std::string(text) + "'");
            call.args.emplace_back(to_lower(trim(std::string_view(piece).substr(0, eq))),
                                   std::string(trim(std::string_view(piece).substr(eq + 1))));
        }
    }
    if (call.name.empty())
        throw ConfigError("empty call expression");
    for (char c : call.name)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
            throw ConfigError("invalid name '" + call.name + "'");
    return call;
}

} // namespace redund
