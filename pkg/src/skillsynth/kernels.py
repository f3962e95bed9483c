"""Hot numeric kernels with numba-compiled and pure-numpy variants.

The public names (``group_standardize``, ``group_center``, ``sech2_gate_many``,
``solve_congruences``, ``first_conflict_index``, ``count_solutions``,
``probe_attempts``) are bound at import time: numba when available, pure numpy
otherwise.  Set ``SKILLSYNTH_NUMBA=0`` to force the numpy path.  Integer
kernels (congruence solving, probe sampling) produce bit-identical results on
both paths; float kernels may differ in the last ulp.

Candidate sampling uses a counter-based splitmix64 generator so probe results
depend only on ``(seed, attempt, draw)`` and never on call order.
"""

from __future__ import annotations

import os

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_ATTEMPT_SALT = 0xA24BAED4963EE407
_DRAW_SALT = 0x9FB21C651E98DF25

NUMBA_ENABLED = os.environ.get("SKILLSYNTH_NUMBA", "1") != "0"
if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:
        NUMBA_ENABLED = False


def _splitmix64_py(z: int) -> int:
    z = (z + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed, order-sensitively."""
    state = 0
    for p in parts:
        state = _splitmix64_py((state ^ (p & _MASK64)) & _MASK64)
    return state


# ---------------------------------------------------------------------------
# pure-numpy reference implementations
# ---------------------------------------------------------------------------


def _group_sums_np(values, group_ids, n_groups):
    sums = np.zeros(n_groups, dtype=np.float64)
    counts = np.zeros(n_groups, dtype=np.float64)
    np.add.at(sums, group_ids, values)
    np.add.at(counts, group_ids, 1.0)
    return sums, counts


def _group_standardize_np(values, group_ids, n_groups, sigma_floor):
    values = np.asarray(values, dtype=np.float64)
    group_ids = np.asarray(group_ids, dtype=np.int64)
    sums, counts = _group_sums_np(values, group_ids, n_groups)
    means = sums / np.maximum(counts, 1.0)
    centered = values - means[group_ids]
    sq = np.zeros(n_groups, dtype=np.float64)
    np.add.at(sq, group_ids, centered * centered)
    stds = np.sqrt(sq / np.maximum(counts, 1.0))
    denom = np.where(stds < sigma_floor, sigma_floor, stds)
    return centered / denom[group_ids]


def _group_center_np(values, group_ids, n_groups):
    values = np.asarray(values, dtype=np.float64)
    group_ids = np.asarray(group_ids, dtype=np.int64)
    sums, counts = _group_sums_np(values, group_ids, n_groups)
    means = sums / np.maximum(counts, 1.0)
    return values - means[group_ids]


def _sech2_gate_many_np(weights, ratios, tau_pos, tau_neg):
    weights = np.asarray(weights, dtype=np.float64)
    ratios = np.asarray(ratios, dtype=np.float64)
    tau = np.where(weights >= 0.0, tau_pos, tau_neg)
    x = np.abs(0.5 * tau * (ratios - 1.0))
    # sech(x) = 2 e^{-x} / (1 + e^{-2x}), stable for large |x|
    e = np.exp(-x)
    sech = 2.0 * e / (1.0 + e * e)
    return sech * sech * weights


def _egcd(a: int, b: int):
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r != 0:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    return old_r, old_s, old_t


def _solve_congruences_py(residues, moduli):
    """Merge x = r_i (mod m_i) pairwise.  Returns (solvable, least, period)."""
    r, m = 0, 1
    for i in range(len(residues)):
        r2, m2 = int(residues[i]), int(moduli[i])
        g, p, _ = _egcd(m, m2)
        if (r2 - r) % g != 0:
            return False, -1, m * m2 // g
        lcm = m * m2 // g
        t = ((r2 - r) // g * p) % (m2 // g)
        r = (r + m * t) % lcm
        m = lcm
    return True, r, m


def _first_conflict_index_py(residues, moduli):
    """Index of the first congruence incompatible with the merged prefix, else -1."""
    r, m = 0, 1
    for i in range(len(residues)):
        r2, m2 = int(residues[i]), int(moduli[i])
        g, p, _ = _egcd(m, m2)
        if (r2 - r) % g != 0:
            return i
        lcm = m * m2 // g
        t = ((r2 - r) // g * p) % (m2 // g)
        r = (r + m * t) % lcm
        m = lcm
    return -1


def _count_solutions_py(residues, moduli, window):
    solvable, least, period = _solve_congruences_py(residues, moduli)
    if not solvable or least >= window:
        return 0
    return (window - 1 - least) // period + 1


def _candidate_py(seed, attempt, draw):
    state = _splitmix64_py((seed ^ (attempt * _ATTEMPT_SALT)) & _MASK64)
    return _splitmix64_py((state ^ (draw * _DRAW_SALT)) & _MASK64)


def _probe_attempts_np(residues, moduli, window, draws, k, seed):
    residues = np.asarray(residues, dtype=np.int64)
    moduli = np.asarray(moduli, dtype=np.int64)
    attempts = np.arange(k, dtype=np.uint64)
    ds = np.arange(draws, dtype=np.uint64)
    state = _vec_mix((np.uint64(seed & _MASK64) ^ (attempts * np.uint64(_ATTEMPT_SALT)))[:, None])
    cand = _vec_mix(state ^ (ds[None, :] * np.uint64(_DRAW_SALT)))
    xs = (cand % np.uint64(window)).astype(np.int64)
    ok = np.ones(xs.shape, dtype=bool)
    for j in range(len(residues)):
        ok &= (xs % moduli[j]) == residues[j]
    return int(ok.any(axis=1).sum())


def _vec_mix(z):
    z = z + np.uint64(_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


# ---------------------------------------------------------------------------
# numba variants
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:

    @njit(cache=True)
    def _group_standardize_nb(values, group_ids, n_groups, sigma_floor):  # pragma: no cover
        sums = np.zeros(n_groups)
        counts = np.zeros(n_groups)
        for i in range(values.shape[0]):
            sums[group_ids[i]] += values[i]
            counts[group_ids[i]] += 1.0
        means = np.empty(n_groups)
        for g in range(n_groups):
            means[g] = sums[g] / max(counts[g], 1.0)
        sq = np.zeros(n_groups)
        for i in range(values.shape[0]):
            d = values[i] - means[group_ids[i]]
            sq[group_ids[i]] += d * d
        out = np.empty_like(values)
        for g in range(n_groups):
            sq[g] = np.sqrt(sq[g] / max(counts[g], 1.0))
            if sq[g] < sigma_floor:
                sq[g] = sigma_floor
        for i in range(values.shape[0]):
            out[i] = (values[i] - means[group_ids[i]]) / sq[group_ids[i]]
        return out

    @njit(cache=True)
    def _group_center_nb(values, group_ids, n_groups):  # pragma: no cover
        sums = np.zeros(n_groups)
        counts = np.zeros(n_groups)
        for i in range(values.shape[0]):
            sums[group_ids[i]] += values[i]
            counts[group_ids[i]] += 1.0
        out = np.empty_like(values)
        for i in range(values.shape[0]):
            g = group_ids[i]
            out[i] = values[i] - sums[g] / max(counts[g], 1.0)
        return out

    @njit(cache=True)
    def _sech2_gate_many_nb(weights, ratios, tau_pos, tau_neg):  # pragma: no cover
        out = np.empty_like(weights)
        for i in range(weights.shape[0]):
            tau = tau_pos if weights[i] >= 0.0 else tau_neg
            x = abs(0.5 * tau * (ratios[i] - 1.0))
            e = np.exp(-x)
            sech = 2.0 * e / (1.0 + e * e)
            out[i] = sech * sech * weights[i]
        return out

    @njit(cache=True)
    def _merge_nb(residues, moduli):  # pragma: no cover
        r = np.int64(0)
        m = np.int64(1)
        for i in range(residues.shape[0]):
            r2 = residues[i]
            m2 = moduli[i]
            old_r, rr = m, m2
            old_s, s = np.int64(1), np.int64(0)
            while rr != 0:
                q = old_r // rr
                old_r, rr = rr, old_r - q * rr
                old_s, s = s, old_s - q * s
            g = old_r
            p = old_s
            if (r2 - r) % g != 0:
                return np.int64(i), np.int64(-1), m * m2 // g
            lcm = m * m2 // g
            t = ((r2 - r) // g * p) % (m2 // g)
            r = (r + m * t) % lcm
            m = lcm
        return np.int64(-1), r, m

    @njit(cache=True)
    def _count_solutions_nb(residues, moduli, window):  # pragma: no cover
        conflict, least, period = _merge_nb(residues, moduli)
        if conflict >= 0 or least >= window:
            return np.int64(0)
        return (window - 1 - least) // period + 1

    @njit(cache=True)
    def _mix_nb(z):  # pragma: no cover
        z = z + np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True)
    def _probe_attempts_nb(residues, moduli, window, draws, k, seed):  # pragma: no cover
        successes = 0
        w = np.uint64(window)
        for a in range(k):
            state = _mix_nb(np.uint64(seed) ^ (np.uint64(a) * np.uint64(_ATTEMPT_SALT)))
            for d in range(draws):
                cand = _mix_nb(state ^ (np.uint64(d) * np.uint64(_DRAW_SALT)))
                x = np.int64(cand % w)
                ok = True
                for j in range(residues.shape[0]):
                    if x % moduli[j] != residues[j]:
                        ok = False
                        break
                if ok:
                    successes += 1
                    break
        return successes


# ---------------------------------------------------------------------------
# public bindings
# ---------------------------------------------------------------------------


def _as_i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if NUMBA_ENABLED:

    def group_standardize(values, group_ids, n_groups, sigma_floor=1e-6):
        return _group_standardize_nb(_as_f64(values), _as_i64(group_ids), n_groups, sigma_floor)

    def group_center(values, group_ids, n_groups):
        return _group_center_nb(_as_f64(values), _as_i64(group_ids), n_groups)

    def sech2_gate_many(weights, ratios, tau_pos, tau_neg):
        return _sech2_gate_many_nb(_as_f64(weights), _as_f64(ratios), tau_pos, tau_neg)

    def solve_congruences(residues, moduli):
        conflict, least, period = _merge_nb(_as_i64(residues), _as_i64(moduli))
        return conflict < 0, int(least), int(period)

    def first_conflict_index(residues, moduli):
        conflict, _, _ = _merge_nb(_as_i64(residues), _as_i64(moduli))
        return int(conflict)

    def count_solutions(residues, moduli, window):
        return int(_count_solutions_nb(_as_i64(residues), _as_i64(moduli), window))

    def probe_attempts(residues, moduli, window, draws, k, seed):
        return int(
            _probe_attempts_nb(
                _as_i64(residues), _as_i64(moduli), window, draws, k, np.uint64(seed & _MASK64)
            )
        )

else:

    def group_standardize(values, group_ids, n_groups, sigma_floor=1e-6):
        return _group_standardize_np(values, group_ids, n_groups, sigma_floor)

    def group_center(values, group_ids, n_groups):
        return _group_center_np(values, group_ids, n_groups)

    def sech2_gate_many(weights, ratios, tau_pos, tau_neg):
        return _sech2_gate_many_np(weights, ratios, tau_pos, tau_neg)

    def solve_congruences(residues, moduli):
        return _solve_congruences_py(_as_i64(residues), _as_i64(moduli))

    def first_conflict_index(residues, moduli):
        return _first_conflict_index_py(_as_i64(residues), _as_i64(moduli))

    def count_solutions(residues, moduli, window):
        return _count_solutions_py(_as_i64(residues), _as_i64(moduli), window)

    def probe_attempts(residues, moduli, window, draws, k, seed):
        return _probe_attempts_np(residues, moduli, window, draws, k, seed & _MASK64)
