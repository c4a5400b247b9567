"""Independent reference implementations used as test oracles.

Each one recomputes a quantity by a different route from the package code:
plain loops instead of vectorised shifts, dense solves instead of cached
Cholesky factors, a generic optimiser and adaptive quadrature instead of
Newton iterations and Gauss-Hermite.
"""
import math

import numpy as np
from scipy import integrate, optimize

CIRCLE16 = [
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
]


def fast_brute(pixels, threshold=20, arc=9):
    """Set of ``(x, y)`` corners by a per-pixel segment test."""
    img = [[int(v) for v in row] for row in np.asarray(pixels)]
    h, w = len(img), len(img[0])
    out = set()
    for y in range(3, h - 3):
        for x in range(3, w - 3):
            c = img[y][x]
            ring = [img[y + dy][x + dx] for dx, dy in CIRCLE16]
            for test in (lambda v: v > c + threshold, lambda v: v < c - threshold):
                flags = [test(v) for v in ring]
                best = run = 0
                for f in flags + flags:
                    run = run + 1 if f else 0
                    best = max(best, run)
                if min(best, 16) >= arc:
                    out.add((x, y))
                    break
    return out


def fd_gradient(f, get_flat, set_flat, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. a flat parameter vector."""
    theta = get_flat().copy()
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        t = theta.copy()
        t[i] += h
        set_flat(t)
        fp = f()
        t[i] -= 2 * h
        set_flat(t)
        fm = f()
        g[i] = (fp - fm) / (2 * h)
    set_flat(theta)
    return g


def rbf_loops(A, B, ell, sf2):
    K = np.empty((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            K[i, j] = sf2 * math.exp(-float(np.dot(a - b, a - b)) / (2 * ell * ell))
    return K


def gp_regression_dense(X, y01, Xs, ell, sf2=1.0, sn2=0.1):
    """Posterior mean/variance of GP regression on ``2y - 1`` by dense solves."""
    t = 2.0 * np.asarray(y01, float) - 1.0
    K = rbf_loops(X, X, ell, sf2) + sn2 * np.eye(len(X))
    Ks = rbf_loops(Xs, X, ell, sf2)
    mean = Ks @ np.linalg.solve(K, t)
    var = np.array([sf2 - ks @ np.linalg.solve(K, ks) for ks in Ks])
    return mean, var


def laplace_quadrature(X, y01, Xs, ell, sf2=1.0):
    """Logistic GP classifier: mode by BFGS, latent Gaussian at the mode, probability by quad."""
    y = np.asarray(y01, float)
    K = rbf_loops(X, X, ell, sf2) + 1e-10 * np.eye(len(X))
    Kinv = np.linalg.inv(K)

    def negpost(f):
        ll = np.sum(y * f - np.logaddexp(0.0, f))
        return -ll + 0.5 * f @ Kinv @ f

    def grad(f):
        pi = 1.0 / (1.0 + np.exp(-f))
        return -(y - pi) + Kinv @ f

    res = optimize.minimize(negpost, np.zeros(len(X)), jac=grad, method="BFGS", options={"gtol": 1e-10})
    f = res.x
    pi = 1.0 / (1.0 + np.exp(-f))
    W = np.diag(pi * (1 - pi))
    Ks = rbf_loops(Xs, X, ell, sf2)
    out = []
    for ks in Ks:
        m = ks @ Kinv @ f
        v = sf2 - ks @ np.linalg.solve(K + np.linalg.inv(W), ks)
        sd = math.sqrt(max(v, 0.0))
        if sd < 1e-12:
            out.append(1.0 / (1.0 + math.exp(-m)))
            continue
        integrand = lambda z: 1.0 / (1.0 + math.exp(-z)) * math.exp(-0.5 * ((z - m) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        val, _ = integrate.quad(integrand, m - 12 * sd, m + 12 * sd)
        out.append(val)
    return np.array(out), f
