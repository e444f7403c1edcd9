"""Independent reference implementations shared by the test modules."""

import numpy as np
from scipy import stats


def bounded_loglik_grid(grid, sum_log_x, n, a, b):
    """Bounded log-likelihood on a grid of exponents, with c = (1-d)/(b^(1-d) - a^(1-d))."""
    one = 1.0 - np.asarray(grid, dtype=float)
    near = np.abs(one) < 1e-9
    safe = np.where(near, 0.5, one)
    log_c = np.where(near, -np.log(np.log(b / a)), np.log(safe / (b ** safe - a ** safe)))
    return n * log_c - (1.0 - one) * sum_log_x


def ks_double_loop(x, cdf):
    """Sup-norm distance checked on both sides of every empirical step."""
    x = sorted(x)
    n = len(x)
    best = 0.0
    for xi in x:
        F = float(cdf(xi))
        below = sum(1 for v in x if v < xi) / n
        upto = sum(1 for v in x if v <= xi) / n
        best = max(best, abs(upto - F), abs(below - F))
    return best


def normal_equations(X, y):
    """Solve (X'X) b = X'y and the classical covariance directly."""
    XtX = X.T @ X
    b = np.linalg.solve(XtX, X.T @ y)
    resid = y - X @ b
    s2 = resid @ resid / (X.shape[0] - X.shape[1])
    return b, np.sqrt(np.diag(s2 * np.linalg.inv(XtX)))


def anova_two_pass(groups):
    """Textbook two-pass sums of squares."""
    allv = [v for g in groups for v in g]
    grand = sum(allv) / len(allv)
    means = [sum(g) / len(g) for g in groups]
    ssb = sum(len(g) * (m - grand) ** 2 for g, m in zip(groups, means))
    ssw = sum((v - m) ** 2 for g, m in zip(groups, means) for v in g)
    dfb, dfw = len(groups) - 1, len(allv) - len(groups)
    F = (ssb / dfb) / (ssw / dfw)
    return F, stats.f.sf(F, dfb, dfw)
