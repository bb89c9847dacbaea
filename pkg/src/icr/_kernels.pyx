# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Gibbs chain kernel; see _kernels_py.run_chain for the contract."""

cimport cython
from libc.stdint cimport int64_t


def run_chain(const int64_t[:, :, ::1] next_state,
              const double[:, :, ::1] cdf,
              const int64_t[::1] kcount,
              const double[:, ::1] uniforms,
              int64_t state,
              int64_t[::1] counts,
              Py_ssize_t record_from):
    cdef Py_ssize_t n = uniforms.shape[0]
    cdef Py_ssize_t nb = next_state.shape[0]
    cdef Py_ssize_t i, b, k, kmax
    cdef double u
    with nogil:
        for i in range(n):
            for b in range(nb):
                u = uniforms[i, b]
                kmax = kcount[b] - 1
                k = 0
                while k < kmax and u >= cdf[b, state, k]:
                    k += 1
                state = next_state[b, state, k]
            if i >= record_from:
                counts[state] += 1
    return state
