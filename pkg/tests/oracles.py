"""Independent reference implementations used only by the tests.

Written directly from the model definitions with plain loops, sharing no code
with the library beyond the effects-coding table.
"""
import itertools

import numpy as np
from scipy.special import logsumexp

from ppdesign.master import MasterDesign, anova_matrices, variance_balance_weights


def code_profile(profile, levels, interactions):
    def main(level, d):
        v = np.zeros(d - 1)
        if level < d:
            v[level - 1] = 1.0
        else:
            v[:] = -1.0
        return v

    blocks = [main(lv, d) for lv, d in zip(profile, levels)]
    cols = list(itertools.chain.from_iterable(blocks))
    for a, b in interactions:
        cols += [x * y for x in blocks[a] for y in blocks[b]]
    return np.array(cols)


def coded_design(design_levels, levels, interactions):
    S, J, _ = design_levels.shape
    return np.array([[code_profile(design_levels[s, j], levels, interactions) for j in range(J)] for s in range(S)])


def one_respondent_loglik(X, beta, choices):
    """Log-likelihood when profile ``choices[s]`` is picked in every set s."""
    total = 0.0
    for s in range(X.shape[0]):
        u = X[s] @ beta
        total += u[choices[s]] - logsumexp(u)
    return total


def fd_hessian(f, x, h=1e-3):
    m = x.size
    H = np.zeros((m, m))
    E = np.eye(m) * h
    for a in range(m):
        for b in range(a, m):
            v = (f(x + E[a] + E[b]) - f(x + E[a] - E[b]) - f(x - E[a] + E[b]) + f(x - E[a] - E[b])) / (4 * h * h)
            H[a, b] = H[b, a] = v
    return H


def fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for a in range(x.size):
        e = np.zeros_like(x)
        e[a] = h
        g[a] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def brute_force_information(X, beta):
    m = X.shape[-1]
    M = np.zeros((m, m))
    for Xs in X:
        u = Xs @ beta
        p = np.exp(u - u.max())
        p /= p.sum()
        M += Xs.T @ (np.diag(p) - np.outer(p, p)) @ Xs
    return M


def projection_oracle(inc):
    """Q'(I - P_Z)Q from explicitly built matrices with a pseudo-inverse."""
    Q, Z = anova_matrices(MasterDesign(inc))
    P = Z @ np.linalg.pinv(Z.T @ Z) @ Z.T
    return Q.T @ (np.eye(len(Q)) - P) @ Q


def brute_force_best(S, K, tv, objective, levels):
    w = None if objective.kind == "d_optimal" else variance_balance_weights(levels, objective.scheme)
    rows = [r for r in itertools.product([0, 1], repeat=K) if sum(r) == tv]
    best = -np.inf
    for combo in itertools.product(rows, repeat=S):
        inc = np.array(combo)
        C = projection_oracle(inc)
        if np.linalg.matrix_rank(C, tol=1e-9) < K:
            continue
        if objective.kind == "d_optimal":
            val = np.linalg.slogdet(C)[1]
        else:
            val = -float(w @ np.diag(np.linalg.inv(C)))
        best = max(best, val)
    return best, len(rows) ** S
