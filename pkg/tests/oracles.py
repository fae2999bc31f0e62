"""Brute-force reference computations used by the test suite.

None of these import the code paths they are used to check.
"""
import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import null_space


def generator(k12, k21, k23, k31):
    return np.array(
        [
            [-k12, k21, k31],
            [k12, -(k21 + k23), 0.0],
            [0.0, k23, -k31],
        ]
    )


def eigen_decay_times(k12, k21, k23, k31):
    """The two nonzero decay times of the rate matrix, sorted fast first."""
    lam = np.linalg.eigvals(generator(k12, k21, k23, k31))
    lam = lam[np.argsort(np.abs(lam))][1:]
    if np.max(np.abs(lam.imag)) > 0:
        raise ValueError("complex eigenvalues")
    times = np.sort(-1.0 / lam.real)
    return times[0], times[1]


def stationary_populations(k12, k21, k23, k31):
    ns = null_space(generator(k12, k21, k23, k31))[:, 0]
    return ns / ns.sum()


def conditional_g2(k12, k21, k23, k31, taus):
    """n2(tau | ground state at 0) / n2(inf) by direct ODE integration."""
    M = generator(k12, k21, k23, k31)
    sol = solve_ivp(
        lambda t, n: M @ n,
        (0.0, float(np.max(taus))),
        [1.0, 0.0, 0.0],
        t_eval=np.sort(taus),
        method="DOP853",
        rtol=1e-11,
        atol=1e-13,
    )
    n2_inf = stationary_populations(k12, k21, k23, k31)[1]
    return sol.y[1] / n2_inf


def long_time_populations(k12, k21, k23, k31, t_end):
    M = generator(k12, k21, k23, k31)
    sol = solve_ivp(lambda t, n: M @ n, (0.0, t_end), [1.0, 0.0, 0.0], method="Radau", rtol=1e-12, atol=1e-14)
    return sol.y[:, -1]


def all_pairs_histogram(t0, t1, bin_ps, n_side):
    """O(N^2) cross-correlation with centred bins k*bin_ps, |k| <= n_side."""
    counts = np.zeros(2 * n_side + 1, dtype=np.int64)
    for a in t0:
        for b in t1:
            d = int(b) - int(a)
            k = (2 * abs(d) + bin_ps) // (2 * bin_ps)
            if k <= n_side:
                counts[n_side + (k if d >= 0 else -k)] += 1
    return counts
