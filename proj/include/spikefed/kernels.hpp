#pragma once

#include <cstddef>
#include <cstdint>

namespace spikefed::kernels {

enum class Backend { scalar, avx2, neon };

const char* backend_name(Backend b);

// Backend chosen at startup: best instruction set the CPU supports, or the
// one named in SPIKEFED_KERNEL (scalar|avx2|neon).
Backend active_backend();

// Test hook. Throws if the requested backend is not usable on this CPU.
void force_backend(Backend b);

bool backend_supported(Backend b);

// Float kernel table; entries match the reference semantics in
// kernels_ref.hpp bit for bit.
struct Table {
    void (*add)(float*, const float*, const float*, std::size_t);
    void (*sub)(float*, const float*, const float*, std::size_t);
    void (*mul)(float*, const float*, const float*, std::size_t);
    void (*div)(float*, const float*, const float*, std::size_t);
    void (*affine)(float*, const float*, float, float, std::size_t);
    void (*axpy)(float*, const float*, float, std::size_t);
    void (*matmul)(float*, const float*, const float*, int, int, int, bool);
    void (*bntt_apply)(float*, float*, const float*, const float*, const float*,
                       const float*, int, int, int);
    std::uint64_t (*lif_step)(float*, float*, float*, const float*, float,
                              float, std::size_t);
    void (*sgd_step)(float*, float*, const float*, float, float, float,
                     std::size_t);
    void (*relu)(float*, const float*, std::size_t);
    void (*relu_grad)(float*, const float*, const float*, std::size_t);
};

const Table& table();              // table for the active backend
const Table& table_for(Backend b); // table for a specific backend (tests)

}  // namespace spikefed::kernels
