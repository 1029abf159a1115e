import numpy as np

from facevoice.embedding import RandomSource


def gaussian_tuples(rho, K=2, n=2000, seed=0):
    """``(n, K)`` equicorrelated standard normal slots."""
    R = np.full((K, K), rho)
    np.fill_diagonal(R, 1.0)
    L = np.linalg.cholesky(R)
    return RandomSource(seed).normal((n, K)) @ L.T


def shuffled(emb, seed):
    perm = RandomSource(seed).permutation(len(emb))
    return emb.with_labels([emb.labels[i] for i in perm])


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
