"""Small goodness-of-fit helpers shared by the Monte Carlo tests."""
import numpy as np
from scipy import stats


def chi2_pvalue(counts, probs):
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    exp = probs / probs.sum() * counts.sum()
    return stats.chisquare(counts, exp).pvalue


def hotelling_pvalue(samples, mu):
    """One-sample Hotelling T^2 test of E[samples] == mu (rows are draws)."""
    x = np.asarray(samples, dtype=float)
    n, k = x.shape
    d = x.mean(axis=0) - np.asarray(mu, dtype=float)
    cov = np.cov(x, rowvar=False)
    t2 = n * d @ np.linalg.solve(cov, d)
    f = (n - k) / (k * (n - 1)) * t2
    return stats.f.sf(f, k, n - k)
