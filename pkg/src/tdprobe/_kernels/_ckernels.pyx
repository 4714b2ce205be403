# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Must stay arithmetic-for-arithmetic identical to _pykernels.py."""

from libc.stdlib cimport malloc, free


def ks_sorted(double[:] a, double[:] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef double x, d, best = 0.0
    while i < na and j < nb:
        x = a[i] if a[i] <= b[j] else b[j]
        while i < na and a[i] <= x:
            i += 1
        while j < nb and b[j] <= x:
            j += 1
        d = (<double>i) / na - (<double>j) / nb
        if d < 0:
            d = -d
        if d > best:
            best = d
    return best


cdef void _allocate(double* demand, double* weight, double capacity, double* out,
                    Py_ssize_t n, char* active) nogil:
    cdef Py_ssize_t i
    cdef double total = 0.0, remaining, s
    cdef int n_active, n_capped
    for i in range(n):
        total += demand[i]
    if total <= capacity:
        for i in range(n):
            out[i] = demand[i]
        return
    n_active = 0
    for i in range(n):
        out[i] = 0.0
        active[i] = 1 if demand[i] > 0.0 else 0
        n_active += active[i]
    remaining = capacity
    while n_active > 0:
        s = 0.0
        for i in range(n):
            if active[i]:
                s += weight[i] * demand[i]
        n_capped = 0
        for i in range(n):
            if active[i] and remaining * weight[i] * demand[i] / s >= demand[i]:
                active[i] = 2
                n_capped += 1
        if n_capped == 0:
            for i in range(n):
                if active[i]:
                    out[i] = remaining * weight[i] * demand[i] / s
            return
        # freeze capped flows in index order, matching the Python loop
        for i in range(n):
            if active[i] == 2:
                out[i] = demand[i]
                remaining -= demand[i]
                active[i] = 0
                n_active -= 1


def allocate(double[:] demand, double[:] weight, double capacity, double[:] out):
    cdef Py_ssize_t n = demand.shape[0]
    cdef char* active = <char*> malloc(n + 1)
    try:
        _allocate(&demand[0], &weight[0], capacity, &out[0], n, active)
    finally:
        free(active)


def simulate_link(double[:, :] offered, double[:] rate_Bps, double[:] burst, double[:] weight,
                  double capacity_bps, double tick_s, double[:, :] alloc, double[:, :] demand_out):
    cdef Py_ssize_t n_ticks = offered.shape[0], n = offered.shape[1]
    cdef Py_ssize_t t, i
    cdef double d, allowance
    cdef double* tokens = <double*> malloc((n + 1) * sizeof(double))
    cdef double* demand = <double*> malloc((n + 1) * sizeof(double))
    cdef double* row = <double*> malloc((n + 1) * sizeof(double))
    cdef double* w = <double*> malloc((n + 1) * sizeof(double))
    cdef char* active = <char*> malloc(n + 1)
    try:
        for i in range(n):
            tokens[i] = burst[i]
            w[i] = weight[i]
        with nogil:
            for t in range(n_ticks):
                for i in range(n):
                    d = offered[t, i]
                    if rate_Bps[i] > 0.0:
                        tokens[i] = min(burst[i], tokens[i] + rate_Bps[i] * tick_s)
                        allowance = tokens[i] * 8.0 / tick_s
                        if allowance < d:
                            d = allowance
                    demand[i] = d
                _allocate(demand, w, capacity_bps, row, n, active)
                for i in range(n):
                    alloc[t, i] = row[i]
                    demand_out[t, i] = demand[i]
                    if rate_Bps[i] > 0.0:
                        tokens[i] = max(0.0, tokens[i] - row[i] * tick_s / 8.0)
    finally:
        free(tokens)
        free(demand)
        free(row)
        free(w)
        free(active)


BACKEND = "cython"
