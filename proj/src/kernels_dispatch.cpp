#include <cstdlib>
#include <stdexcept>
#include <string>

#include "spikefed/kernels.hpp"

namespace spikefed::kernels {

const Table& scalar_table();
#if defined(__x86_64__) || defined(__i386__)
const Table& avx2_table();
#endif
#if defined(__ARM_NEON) && defined(__aarch64__)
const Table& neon_table();
#endif

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
        case Backend::neon: return "neon";
    }
    return "?";
}

bool backend_supported(Backend b) {
    switch (b) {
        case Backend::scalar:
            return true;
        case Backend::avx2:
#if defined(__x86_64__) || defined(__i386__)
            return __builtin_cpu_supports("avx2") != 0;
#else
            return false;
#endif
        case Backend::neon:
#if defined(__ARM_NEON) && defined(__aarch64__)
            return true;
#else
            return false;
#endif
    }
    return false;
}

namespace {

Backend detect_backend() {
    if (const char* env = std::getenv("SPIKEFED_KERNEL")) {
        const std::string want(env);
        Backend b = Backend::scalar;
        if (want == "scalar") b = Backend::scalar;
        else if (want == "avx2") b = Backend::avx2;
        else if (want == "neon") b = Backend::neon;
        else throw std::runtime_error("SPIKEFED_KERNEL: unknown backend '" + want + "'");
        if (!backend_supported(b))
            throw std::runtime_error("SPIKEFED_KERNEL: backend '" + want +
                                     "' not supported on this CPU");
        return b;
    }
    if (backend_supported(Backend::avx2)) return Backend::avx2;
    if (backend_supported(Backend::neon)) return Backend::neon;
    return Backend::scalar;
}

Backend& current_backend() {
    static Backend b = detect_backend();
    return b;
}

}  // namespace

Backend active_backend() { return current_backend(); }

void force_backend(Backend b) {
    if (!backend_supported(b))
        throw std::runtime_error(std::string("kernel backend '") +
                                 backend_name(b) + "' not supported on this CPU");
    current_backend() = b;
}

const Table& table_for(Backend b) {
    switch (b) {
#if defined(__x86_64__) || defined(__i386__)
        case Backend::avx2: return avx2_table();
#endif
#if defined(__ARM_NEON) && defined(__aarch64__)
        case Backend::neon: return neon_table();
#endif
        default: return scalar_table();
    }
}

const Table& table() { return table_for(current_backend()); }

}  // namespace spikefed::kernels
