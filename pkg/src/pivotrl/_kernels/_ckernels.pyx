# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Same semantics and operation order as ``_pure``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs, sqrt

cnp.import_array()

N_PARAMS = 8
SLOT_BLOCK, PERC_KW_BLOCK, PERC_PLAIN_BLOCK, ANSWER_BLOCK = 0, 1, 2, 3


cdef inline double _logprob(double l_chosen, double l_other) nogil:
    cdef double d = l_other - l_chosen
    cdef double pos = d if d > 0.0 else 0.0
    return -(pos + log1p(exp(-fabs(d))))


cdef inline double _prob_first(double l0, double l1) nogil:
    cdef double d = l1 - l0
    cdef double e
    if d >= 0.0:
        e = exp(-d)
        return e / (1.0 + e)
    return 1.0 / (1.0 + exp(d))


def sample_episode(theta, uniforms, Py_ssize_t n_slots):
    cdef Py_ssize_t n = 2 * n_slots + 1
    if len(uniforms) != n:
        raise ValueError(f"need {n} uniforms, got {len(uniforms)}")
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef double[::1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    blocks_arr = np.empty(n, dtype=np.int64)
    choices_arr = np.empty(n, dtype=np.int64)
    lp_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] blocks = blocks_arr
    cdef cnp.int64_t[::1] choices = choices_arr
    cdef double[::1] lp = lp_arr
    cdef Py_ssize_t k
    cdef int b, c
    cdef double l0, l1
    for k in range(n):
        if k == n - 1:
            b = 3
        elif k % 2 == 0:
            b = 0
        else:
            b = 1 if choices[k - 1] == 0 else 2
        l0 = th[2 * b]
        l1 = th[2 * b + 1]
        c = 0 if u[k] < _prob_first(l0, l1) else 1
        blocks[k] = b
        choices[k] = c
        lp[k] = _logprob(l0, l1) if c == 0 else _logprob(l1, l0)
    return blocks_arr, choices_arr, lp_arr


def decision_logprobs(theta, blocks, choices):
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.int64_t[::1] bl = np.ascontiguousarray(blocks, dtype=np.int64)
    cdef cnp.int64_t[::1] ch = np.ascontiguousarray(choices, dtype=np.int64)
    cdef Py_ssize_t n = bl.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k
    cdef Py_ssize_t b, c
    for k in range(n):
        b = bl[k]
        c = ch[k]
        out[k] = _logprob(th[2 * b + c], th[2 * b + 1 - c])
    return out_arr


def decision_jacobian(theta, blocks, choices):
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.int64_t[::1] bl = np.ascontiguousarray(blocks, dtype=np.int64)
    cdef cnp.int64_t[::1] ch = np.ascontiguousarray(choices, dtype=np.int64)
    cdef Py_ssize_t n = bl.shape[0]
    jac_arr = np.zeros((n, 8), dtype=np.float64)
    cdef double[:, ::1] jac = jac_arr
    cdef Py_ssize_t k, b, c
    cdef double p
    for k in range(n):
        b = bl[k]
        c = ch[k]
        p = exp(_logprob(th[2 * b + c], th[2 * b + 1 - c]))
        jac[k, 2 * b + c] = 1.0 - p
        jac[k, 2 * b + 1 - c] = p - 1.0
    return jac_arr


def clipped_surrogate(old_lp, new_lp, adv, double eps_low, double eps_high):
    cdef Py_ssize_t n = len(old_lp)
    if len(new_lp) != n or len(adv) != n:
        raise ValueError("misaligned token arrays")
    cdef double[::1] old = np.ascontiguousarray(old_lp, dtype=np.float64)
    cdef double[::1] new = np.ascontiguousarray(new_lp, dtype=np.float64)
    cdef double[::1] a = np.ascontiguousarray(adv, dtype=np.float64)
    coef_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] coef = coef_arr
    cdef double lo = 1.0 - eps_low
    cdef double hi = 1.0 + eps_high
    cdef double total = 0.0
    cdef double r, unclipped, clipped, rc
    cdef Py_ssize_t t
    for t in range(n):
        r = exp(new[t] - old[t])
        unclipped = r * a[t]
        rc = r if r > lo else lo
        rc = rc if rc < hi else hi
        clipped = rc * a[t]
        if unclipped <= clipped:
            total += unclipped
            coef[t] = unclipped
        else:
            total += clipped
    return total, coef_arr


def accumulate_rows(coef, jac):
    cdef double[::1] cf = np.ascontiguousarray(coef, dtype=np.float64)
    cdef double[:, ::1] J = np.ascontiguousarray(jac, dtype=np.float64)
    cdef Py_ssize_t n = J.shape[0], p = J.shape[1]
    out_arr = np.zeros(p, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, j
    cdef double c
    for k in range(n):
        c = cf[k]
        if c == 0.0:
            continue
        for j in range(p):
            out[j] += c * J[k, j]
    return out_arr


def group_advantages(rewards, double std_epsilon):
    cdef double[::1] v = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], i
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double lo = v[0], hi = v[0]
    for i in range(n):
        if v[i] < lo:
            lo = v[i]
        if v[i] > hi:
            hi = v[i]
    if lo == hi:
        return out_arr
    cdef double mean = 0.0, var = 0.0
    for i in range(n):
        mean += v[i]
    mean /= n
    for i in range(n):
        var += (v[i] - mean) * (v[i] - mean)
    cdef double denom = sqrt(var / n) + std_epsilon
    if denom == 0.0:
        return out_arr
    for i in range(n):
        out[i] = (v[i] - mean) / denom
    return out_arr
