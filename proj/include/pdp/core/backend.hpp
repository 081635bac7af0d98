#pragma once

namespace pdp {

// Kernel execution path. Serial is the reference implementation used by tests
// and as a cross-check oracle; Parallel is the OpenMP/BLAS path used by
// default. Both must produce the same results up to summation order.
enum class Backend { Serial, Parallel };

Backend backend();
void set_backend(Backend b);

// RAII scope switch for tests.
class BackendScope {
public:
    explicit BackendScope(Backend b) : prev_(backend()) { set_backend(b); }
    ~BackendScope() { set_backend(prev_); }

private:
    Backend prev_;
};

}  // namespace pdp
