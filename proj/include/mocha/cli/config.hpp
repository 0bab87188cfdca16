#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "mocha/error.hpp"
#include "mocha/log.hpp"

namespace mocha::cli {

namespace fs = std::filesystem;

struct RunOptions {
    fs::path config;
    fs::path workdir = ".";
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    bool quiet = false;
};

/// Throws InvalidConfig for any key of `given` that `reference` lacks.
/// Objects and arrays of objects are checked recursively; `reference` is normally the JSON form
/// of a default-constructed config, so it lists every accepted key.
inline void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& where) {
    if (given.is_array() && reference.is_array() && !reference.empty()) {
        for (std::size_t i = 0; i < given.size(); ++i)
            reject_unknown_keys(given[i], reference.front(), where + "[" + std::to_string(i) + "]");
        return;
    }
    if (!given.is_object() || !reference.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        const auto it = reference.find(key);
        if (it == reference.end()) fail(ErrorKind::InvalidConfig, "unknown key \"" + key + "\" in " + where);
        reject_unknown_keys(value, *it, where + "." + key);
    }
}

/// Strict parse: unknown keys are rejected, missing keys take defaults.
template <typename T>
T parse_strict(const nlohmann::json& j, const std::string& where) {
    require(j.is_object(), ErrorKind::InvalidConfig, where + " must be a JSON object");
    reject_unknown_keys(j, nlohmann::json(T{}), where);
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidConfig, where + ": " + e.what());
    }
}

/// One subcommand invocation: resolves paths against the workdir and owns the
/// run's event log, resolved-config snapshot and error record.
class RunContext {
public:
    RunContext(std::string command, RunOptions opts) : command_(std::move(command)), opts_(std::move(opts)) {
        std::error_code ec;
        fs::create_directories(opts_.workdir, ec);
        require(!ec && fs::is_directory(opts_.workdir), ErrorKind::Io,
                "cannot use workdir " + opts_.workdir.string());
        fs::remove(path(command_ + ".error.json"), ec);
        events_.open(path(command_ + ".events.jsonl"), std::ios::binary | std::ios::trunc);
        require(events_.good(), ErrorKind::Io, "cannot open the event log in " + opts_.workdir.string());
    }

    const std::string& command() const { return command_; }
    const RunOptions& options() const { return opts_; }
    unsigned threads() const { return opts_.threads == 0 ? 1u : opts_.threads; }

    fs::path path(const std::string& relative) const {
        const fs::path p(relative);
        return p.is_absolute() ? p : opts_.workdir / p;
    }

    /// The config document, or an empty object when no --config was given.
    nlohmann::json config_document() const {
        if (opts_.config.empty()) return nlohmann::json::object();
        const fs::path& p = opts_.config;
        std::ifstream in(p, std::ios::binary);
        require(in.good(), ErrorKind::Io, "cannot read config " + p.string());
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::InvalidConfig, "config " + p.string() + " is not valid JSON: " + e.what());
        }
    }

    std::string read_text(const std::string& relative) const {
        std::ifstream in(path(relative), std::ios::binary);
        require(in.good(), ErrorKind::Io, "cannot read " + path(relative).string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    nlohmann::json read_json(const std::string& relative) const {
        const std::string text = read_text(relative);
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::InvalidConfig, relative + " is not valid JSON: " + e.what());
        }
    }

    void write_text(const std::string& relative, const std::string& content) {
        const fs::path p = path(relative);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        require(out.good(), ErrorKind::Io, "cannot write " + p.string());
        out << content;
        out.close();
        require(!out.fail(), ErrorKind::Io, "failed writing " + p.string());
        event("output.written", {{"path", relative}, {"bytes", content.size()}});
    }

    void write_json(const std::string& relative, const nlohmann::json& j) { write_text(relative, j.dump(2) + "\n"); }

    void write_resolved_config(const nlohmann::json& resolved) {
        write_json(command_ + ".resolved.json", resolved);
    }

    /// One JSON line in the run log plus a short human line on stderr.
    void event(const std::string& name, const nlohmann::json& fields = nlohmann::json::object()) {
        nlohmann::json line = {{"event", name}, {"command", command_}};
        if (!fields.empty()) line["fields"] = fields;
        events_ << line.dump() << '\n';
        events_.flush();
        if (!opts_.quiet) std::cerr << "[" << command_ << "] " << name << (fields.empty() ? "" : " " + fields.dump()) << '\n';
    }

    void write_error(ErrorKind kind, const std::string& message) {
        event("run.failed", {{"kind", std::string(to_string(kind))}, {"message", message}});
        std::ofstream out(path(command_ + ".error.json"), std::ios::binary | std::ios::trunc);
        out << nlohmann::json{{"command", command_}, {"kind", std::string(to_string(kind))}, {"message", message}}.dump(2)
            << '\n';
    }

private:
    std::string command_;
    RunOptions opts_;
    std::ofstream events_;
};

} // namespace mocha::cli
