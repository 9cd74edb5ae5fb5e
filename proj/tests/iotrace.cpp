// LD_PRELOAD shim that appends one line per file opened for writing, and per
// rename, to the file named by OLTS_IOTRACE:
//   <pid> open <path>
//   <pid> rename <from> <to>
// Read-only opens are not logged. Inherited by child processes through the
// environment.

#include <dlfcn.h>
#include <fcntl.h>
#include <unistd.h>

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace {

template <typename Fn>
Fn next(const char* name) {
    return reinterpret_cast<Fn>(dlsym(RTLD_NEXT, name));
}

using open_fn = int (*)(const char*, int, ...);
using openat_fn = int (*)(int, const char*, int, ...);
using creat_fn = int (*)(const char*, mode_t);
using fopen_fn = FILE* (*)(const char*, const char*);
using rename_fn = int (*)(const char*, const char*);

void log_line(const char* what, const char* a, const char* b) {
    const char* target = std::getenv("OLTS_IOTRACE");
    if (target == nullptr || a == nullptr) return;
    static open_fn real_open = next<open_fn>("open");
    const int fd = real_open(target, O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) return;
    char line[4096];
    const int n = b == nullptr ? std::snprintf(line, sizeof line, "%d %s %s\n", static_cast<int>(getpid()), what, a)
                               : std::snprintf(line, sizeof line, "%d %s %s %s\n", static_cast<int>(getpid()), what,
                                               a, b);
    // One write per line; O_APPEND keeps lines from different processes whole.
    if (n > 0) {
        const std::size_t len = n < static_cast<int>(sizeof line) ? static_cast<std::size_t>(n) : sizeof line - 1;
        [[maybe_unused]] const ssize_t w = write(fd, line, len);
    }
    close(fd);
}

bool writes(int flags) { return (flags & (O_WRONLY | O_RDWR | O_CREAT | O_TRUNC | O_APPEND)) != 0; }

bool writes(const char* mode) { return mode != nullptr && std::strpbrk(mode, "wa+") != nullptr; }

mode_t mode_arg(int flags, va_list ap) {
    return (flags & (O_CREAT | O_TMPFILE)) != 0 ? static_cast<mode_t>(va_arg(ap, int)) : 0;
}

}  // namespace

extern "C" {

int open(const char* path, int flags, ...) {
    va_list ap;
    va_start(ap, flags);
    const mode_t mode = mode_arg(flags, ap);
    va_end(ap);
    if (writes(flags)) log_line("open", path, nullptr);
    static open_fn real = next<open_fn>("open");
    return real(path, flags, mode);
}

int open64(const char* path, int flags, ...) {
    va_list ap;
    va_start(ap, flags);
    const mode_t mode = mode_arg(flags, ap);
    va_end(ap);
    if (writes(flags)) log_line("open", path, nullptr);
    static open_fn real = next<open_fn>("open64");
    return real(path, flags, mode);
}

int openat(int dirfd, const char* path, int flags, ...) {
    va_list ap;
    va_start(ap, flags);
    const mode_t mode = mode_arg(flags, ap);
    va_end(ap);
    if (writes(flags)) log_line("open", path, nullptr);
    static openat_fn real = next<openat_fn>("openat");
    return real(dirfd, path, flags, mode);
}

int creat(const char* path, mode_t mode) {
    log_line("open", path, nullptr);
    static creat_fn real = next<creat_fn>("creat");
    return real(path, mode);
}

FILE* fopen(const char* path, const char* mode) {
    if (writes(mode)) log_line("open", path, nullptr);
    static fopen_fn real = next<fopen_fn>("fopen");
    return real(path, mode);
}

FILE* fopen64(const char* path, const char* mode) {
    if (writes(mode)) log_line("open", path, nullptr);
    static fopen_fn real = next<fopen_fn>("fopen64");
    return real(path, mode);
}

int rename(const char* from, const char* to) {
    log_line("rename", from, to);
    static rename_fn real = next<rename_fn>("rename");
    return real(from, to);
}

}  // extern "C"
