#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace geonew::log {

// GEONEW_LOG = error | info | debug (default info)
inline int level() {
    static int lvl = [] {
        const char* env = std::getenv("GEONEW_LOG");
        if (!env) return 1;
        if (std::strcmp(env, "error") == 0) return 0;
        if (std::strcmp(env, "debug") == 0) return 2;
        return 1;
    }();
    return lvl;
}

inline void vlog(const char* tag, const char* fmt, va_list args) {
    std::fprintf(stderr, "[%s] ", tag);
    std::vfprintf(stderr, fmt, args);
    std::fprintf(stderr, "\n");
}

inline void error(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    vlog("error", fmt, args);
    va_end(args);
}

inline void warn(const char* fmt, ...) {
    if (level() < 1) return;
    va_list args;
    va_start(args, fmt);
    vlog("warn", fmt, args);
    va_end(args);
}

inline void info(const char* fmt, ...) {
    if (level() < 1) return;
    va_list args;
    va_start(args, fmt);
    vlog("info", fmt, args);
    va_end(args);
}

inline void debug(const char* fmt, ...) {
    if (level() < 2) return;
    va_list args;
    va_start(args, fmt);
    vlog("debug", fmt, args);
    va_end(args);
}

}  // namespace geonew::log
