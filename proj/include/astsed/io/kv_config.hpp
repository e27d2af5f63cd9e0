#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

#include "astsed/tensor/errors.hpp"

namespace astsed {

namespace kv_detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace kv_detail

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

/// Flat `dotted.key = value` settings. Text form accepts `# comments`,
/// blank lines and `[section]` headers, which prefix the keys below them.
class KeyValues {
 public:
    using Map = std::map<std::string, std::string>;

    static KeyValues parse(std::string_view text, const std::string& source = "<config>") {
        KeyValues kv;
        std::string section;
        std::istringstream in{std::string(text)};
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const std::string t = kv_detail::trim(line);
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']') throw ConfigError(source + ":" + std::to_string(lineno) + ": bad section header");
                section = kv_detail::trim(std::string_view(t).substr(1, t.size() - 2));
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
            }
            std::string key = kv_detail::trim(std::string_view(t).substr(0, eq));
            if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
            if (!section.empty()) key = section + "." + key;
            kv.entries_[key] = kv_detail::trim(std::string_view(t).substr(eq + 1));
        }
        return kv;
    }

    static KeyValues load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot read config file " + path.string());
        std::stringstream ss;
        ss << is.rdbuf();
        return parse(ss.str(), path.string());
    }

    void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

    std::optional<std::string> get(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    bool contains(const std::string& key) const { return entries_.count(key) != 0; }
    void erase(const std::string& key) { entries_.erase(key); }

    /// Entries of `over` replace ours.
    void merge(const KeyValues& over) {
        for (const auto& [k, v] : over.entries_) entries_[k] = v;
    }

    std::string to_text() const {
        std::string out;
        for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
        return out;
    }

    const Map& entries() const noexcept { return entries_; }

    friend bool operator==(const KeyValues&, const KeyValues&) = default;

 private:
    Map entries_;
};

// Config structs expose `template <class V> void visit(V& v)` calling
// v("name", field) for each field. Enums provide ADL overloads
// `const char* to_string(E)` and `void from_string(std::string_view, E&)`.

struct KvWriter {
    KeyValues& kv;
    std::string prefix;

    template <typename X>
    void operator()(const char* name, const X& field) {
        kv.set(prefix + name, render(field));
    }

    template <typename X>
    static std::string render(const X& field) {
        if constexpr (std::is_same_v<X, bool>) return field ? "true" : "false";
        else if constexpr (std::is_enum_v<X>) return to_string(field);
        else if constexpr (std::is_floating_point_v<X>) return format_double(field);
        else if constexpr (std::is_integral_v<X>) return std::to_string(field);
        else if constexpr (std::is_same_v<X, std::string>) return field;
        else if constexpr (std::is_same_v<X, std::vector<std::size_t>>) {
            std::string s;
            for (std::size_t i = 0; i < field.size(); ++i) s += (i ? "," : "") + std::to_string(field[i]);
            return s;
        } else {
            static_assert(sizeof(X) == 0, "unsupported config field type");
        }
    }
};

struct KvReader {
    const KeyValues& kv;
    std::string prefix;
    std::set<std::string>* consumed = nullptr;

    template <typename X>
    void operator()(const char* name, X& field) {
        const std::string key = prefix + name;
        auto value = kv.get(key);
        if (!value) return;
        if (consumed) consumed->insert(key);
        parse(key, *value, field);
    }

    template <typename X>
    static void parse(const std::string& key, const std::string& text, X& field) {
        auto bad = [&]() { return ConfigError("invalid value '" + text + "' for " + key); };
        if constexpr (std::is_same_v<X, bool>) {
            if (text == "true" || text == "1") field = true;
            else if (text == "false" || text == "0") field = false;
            else throw bad();
        } else if constexpr (std::is_enum_v<X>) {
            try {
                from_string(text, field);
            } catch (const ConfigError&) {
                throw bad();
            }
        } else if constexpr (std::is_floating_point_v<X>) {
            X v{};
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc() || p != text.data() + text.size()) throw bad();
            field = v;
        } else if constexpr (std::is_integral_v<X>) {
            if (!text.empty() && text.front() == '-' && std::is_unsigned_v<X>) throw bad();
            X v{};
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc() || p != text.data() + text.size()) throw bad();
            field = v;
        } else if constexpr (std::is_same_v<X, std::string>) {
            field = text;
        } else if constexpr (std::is_same_v<X, std::vector<std::size_t>>) {
            field.clear();
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ',')) {
                std::size_t v{};
                parse(key, kv_detail::trim(item), v);
                field.push_back(v);
            }
        } else {
            static_assert(sizeof(X) == 0, "unsupported config field type");
        }
    }
};

template <typename Config>
void write_config(KeyValues& kv, const std::string& prefix, const Config& cfg) {
    KvWriter w{kv, prefix};
    const_cast<Config&>(cfg).visit(w);
}

template <typename Config>
void read_config(const KeyValues& kv, const std::string& prefix, Config& cfg,
                 std::set<std::string>* consumed = nullptr) {
    KvReader r{kv, prefix, consumed};
    cfg.visit(r);
}

}  // namespace astsed
