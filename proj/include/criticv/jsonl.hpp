#pragma once

#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace criticv::jsonl {

using json = nlohmann::json;

struct JsonlError : std::runtime_error {
    int line;
    long byte_offset;
    JsonlError(const std::string& msg, int line_, long offset_)
        : std::runtime_error(msg + " (line " + std::to_string(line_) + ", byte offset " +
                             std::to_string(offset_) + ")"),
          line(line_),
          byte_offset(offset_) {}
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One JSON object per line, UTF-8. Parse errors carry line number and the
// byte offset of the start of the offending line.
inline std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<json> out;
    std::string line;
    int line_no = 0;
    long offset = 0;
    while (std::getline(in, line)) {
        ++line_no;
        long line_start = offset;
        offset += long(line.size()) + 1;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw JsonlError("malformed JSON line", line_no, line_start);
        out.push_back(std::move(j));
    }
    return out;
}

template <typename T>
std::vector<T> read_jsonl_as(const std::string& path, T (*parse)(const json&)) {
    auto raw = read_jsonl(path);
    std::vector<T> out;
    out.reserve(raw.size());
    int line_no = 0;
    for (const auto& j : raw) {
        ++line_no;
        try {
            out.push_back(parse(j));
        } catch (const std::exception& e) {
            throw JsonlError(std::string("schema error: ") + e.what(), line_no, -1);
        }
    }
    return out;
}

// Single-owner append-style writer; each record is flushed as one full line.
class Writer {
public:
    explicit Writer(const std::string& path, bool append = false)
        : out_(path, append ? std::ios::binary | std::ios::app : std::ios::binary) {
        if (!out_) throw IoError("cannot open for writing: " + path);
    }

    void write(const json& j) {
        out_ << j.dump() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

inline void write_jsonl(const std::vector<json>& records, const std::string& path) {
    Writer w(path);
    for (const auto& j : records) w.write(j);
}

}  // namespace criticv::jsonl
