"""Effective sample sizes and posterior summaries."""

import numpy as np

DEGENERATE = "degenerate"
ANTITHETIC = "antithetic"


def autocorrelation(x):
    """Sample autocorrelation of a 1-D series at all lags (FFT, biased estimator)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    if acov[0] <= 0:
        return np.ones(n)
    return acov / acov[0]


def _ess_1d(x):
    n = x.size
    if np.ptp(x) == 0:
        return 1.0, DEGENERATE
    rho = autocorrelation(x)
    # Geyer's initial positive sequence on sums of adjacent pairs
    tau = -1.0
    for m in range(n // 2):
        gamma = rho[2 * m] + (rho[2 * m + 1] if 2 * m + 1 < n else 0.0)
        if gamma <= 0:
            break
        tau += 2 * gamma
    if tau <= 1.0 / n:
        return float(n), ANTITHETIC
    ess = n / tau
    if ess > n:
        return float(n), ANTITHETIC
    return float(ess), ""


def ess_mcmc(samples):
    """Initial-positive-sequence ESS per dimension of an unweighted chain.

    Returns ``(ess, flags)``.  A constant dimension gets ESS 1 and flag
    ``"degenerate"``; an estimate above the chain length is clamped to the
    length and flagged ``"antithetic"``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 10:
        raise ValueError("ESS needs a chain of at least 10 draws")
    out = [_ess_1d(x[:, i]) for i in range(x.shape[1])]
    return np.array([e for e, _ in out]), [f for _, f in out]


def ess_is(weights):
    """Importance-sampling ESS ``1 / sum(w^2)`` of normalised weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def weighted_moments(samples, weights=None):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if weights is None:
        return x.mean(axis=0), x.std(axis=0)
    w = np.asarray(weights, dtype=float)
    mean = w @ x
    return mean, np.sqrt(w @ (x - mean) ** 2)


def mcse(samples, weights=None):
    """Monte Carlo standard error of the posterior mean, per dimension.

    Unweighted chains use ``sd / sqrt(ESS)``; weighted samples use the
    self-normalised importance-sampling delta-method estimate.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if weights is None:
        ess, _ = ess_mcmc(x)
        return x.std(axis=0, ddof=1) / np.sqrt(ess)
    w = np.asarray(weights, dtype=float)
    mean = w @ x
    return np.sqrt((w * w) @ (x - mean) ** 2)
