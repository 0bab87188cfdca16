#pragma once

#include <functional>
#include <mutex>
#include <string>
#include <utility>

#include <json.hpp>

namespace mocha {

// Structured events ("pca.sigma_floor", "distill.batch", ...) go to one
// process-wide sink. The default sink drops them.
using EventSink = std::function<void(const std::string& event, const nlohmann::json& fields)>;

namespace detail {
inline std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}
inline EventSink& sink_slot() {
    static EventSink sink;
    return sink;
}
} // namespace detail

inline void set_event_sink(EventSink sink) {
    std::lock_guard lock(detail::sink_mutex());
    detail::sink_slot() = std::move(sink);
}

inline void log_event(const std::string& event, const nlohmann::json& fields = nlohmann::json::object()) {
    std::lock_guard lock(detail::sink_mutex());
    if (detail::sink_slot()) detail::sink_slot()(event, fields);
}

/// Installs a sink for the lifetime of the guard and restores the previous one.
class ScopedEventSink {
public:
    explicit ScopedEventSink(EventSink sink) {
        std::lock_guard lock(detail::sink_mutex());
        previous_ = std::exchange(detail::sink_slot(), std::move(sink));
    }
    ~ScopedEventSink() {
        std::lock_guard lock(detail::sink_mutex());
        detail::sink_slot() = std::move(previous_);
    }
    ScopedEventSink(const ScopedEventSink&) = delete;
    ScopedEventSink& operator=(const ScopedEventSink&) = delete;

private:
    EventSink previous_;
};

} // namespace mocha
