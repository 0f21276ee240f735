#include "xfit/gym/partition.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "xfit/errors.hpp"
#include "xfit/json_util.hpp"

namespace xfit::gym {

namespace {

// Just enough of a reader for partition listings: an object of string arrays.
class Reader {
public:
    Reader(std::string_view text, std::string where) : s_(text), where_(std::move(where)) {}

    std::map<std::string, std::vector<std::string>> object_of_lists() {
        std::map<std::string, std::vector<std::string>> out;
        skip();
        expect('{');
        while (true) {
            skip();
            if (peek() == '}') {
                ++i_;
                break;
            }
            const std::size_t key_line = line_;
            std::string key = string();
            skip();
            expect(':');
            skip();
            auto list = string_array();
            if (out.count(key)) fail("duplicate key '" + key + "'", key_line);
            out.emplace(std::move(key), std::move(list));
            skip();
            if (peek() == ',') {
                ++i_;
                continue;
            }
            skip();
            expect('}');
            break;
        }
        skip();
        if (i_ != s_.size()) fail("unexpected trailing content");
        return out;
    }

    [[noreturn]] void fail(const std::string& msg, std::size_t line = 0) const {
        throw DataError(where_ + ":" + std::to_string(line ? line : line_) + ": " + msg);
    }

private:
    char peek() const { return i_ < s_.size() ? s_[i_] : '\0'; }

    void skip() {
        while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t' || s_[i_] == '\r' || s_[i_] == '\n')) {
            if (s_[i_] == '\n') ++line_;
            ++i_;
        }
    }

    void expect(char c) {
        if (peek() != c) {
            const std::string got = i_ < s_.size() ? std::string("'") + s_[i_] + "'" : std::string("end of input");
            fail(std::string("expected '") + c + "', got " + got);
        }
        ++i_;
    }

    std::string string() {
        const char q = peek();
        if (q != '"' && q != '\'') fail("expected a quoted string");
        ++i_;
        std::string out;
        while (true) {
            if (i_ >= s_.size()) fail("unterminated string");
            const char c = s_[i_++];
            if (c == q) break;
            if (c == '\n') fail("newline inside string");
            if (c != '\\') {
                out.push_back(c);
                continue;
            }
            if (i_ >= s_.size()) fail("unterminated escape");
            const char e = s_[i_++];
            switch (e) {
                case '"': case '\'': case '\\': case '/': out.push_back(e); break;
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                default: fail(std::string("unsupported escape '\\") + e + "'");
            }
        }
        return out;
    }

    std::vector<std::string> string_array() {
        std::vector<std::string> out;
        expect('[');
        while (true) {
            skip();
            if (peek() == ']') {
                ++i_;
                return out;
            }
            out.push_back(string());
            skip();
            if (peek() == ',') {
                ++i_;
                continue;
            }
            expect(']');
            return out;
        }
    }

    std::string_view s_;
    std::string where_;
    std::size_t i_ = 0;
    std::size_t line_ = 1;
};

std::string join(const std::vector<std::string>& xs) {
    std::string out;
    for (const auto& x : xs) out += (out.empty() ? "" : ", ") + x;
    return out;
}

}  // namespace

Partition parse_partition(std::string_view text, const std::string& name, const PartitionOptions& options) {
    const std::string where = "partition " + name;
    Reader r(text, where);
    auto lists = r.object_of_lists();
    for (const auto& [k, v] : lists) {
        if (k != "train" && k != "dev" && k != "test") throw DataError(where + ": unknown key '" + k + "'");
    }
    for (const char* k : {"train", "dev", "test"}) {
        if (!lists.count(k)) throw DataError(where + ": missing key '" + k + "'");
    }
    Partition p{name, lists["train"], lists["dev"], lists["test"], {}};
    if (p.train.empty()) throw DataError(where + ": train list is empty");
    if (p.test.empty()) throw DataError(where + ": test list is empty");

    std::map<std::string, std::vector<std::string>> where_found;
    for (const auto& [list, names] : {std::pair{"train", &p.train}, std::pair{"dev", &p.dev}, std::pair{"test", &p.test}}) {
        std::set<std::string> seen;
        for (const auto& n : *names) {
            if (!seen.insert(n).second) throw DataError(where + ": '" + n + "' repeated in " + list);
            where_found[n].push_back(list);
        }
    }
    std::vector<std::string> overlap, detail;
    for (const auto& [n, lists_in] : where_found) {
        if (lists_in.size() < 2) continue;
        overlap.push_back(n);
        std::string d = n + " (";
        for (std::size_t i = 0; i < lists_in.size(); ++i) d += (i ? "/" : "") + lists_in[i];
        detail.push_back(d + ")");
    }
    if (!overlap.empty()) {
        if (!options.allow_overlap) throw DataError(where + ": task sets overlap: " + join(detail));
        p.overlaps = overlap;
    }
    if (options.registry) {
        std::vector<std::string> unknown;
        for (const auto& [n, unused] : where_found) {
            if (!options.registry->count(n)) unknown.push_back(n);
        }
        if (!unknown.empty()) throw DataError(where + ": unknown tasks: " + join(unknown));
    }
    return p;
}

Partition load_partition(const std::filesystem::path& path, const PartitionOptions& options) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("partition " + path.string() + ": cannot open");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_partition(ss.str(), path.stem().string(), options);
}

void write_partition(const std::filesystem::path& path, const Partition& p) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << Json{{"train", p.train}, {"dev", p.dev}, {"test", p.test}}.dump(4) << '\n';
}

}  // namespace xfit::gym
