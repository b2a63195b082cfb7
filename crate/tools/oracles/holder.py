"""Discrete Hölder seminorm by enumerating all node pairs of the closed disk."""
import itertools

import numpy as np

N, alpha = 9, 0.5
g = np.linspace(-1.0, 1.0, N)
pts = [np.array([a, b]) for a in g for b in g if a * a + b * b <= 1.0 + 1e-12]
u = lambda p: p[0] ** 2 - 0.5 * p[1] + np.sin(3.0 * p[0] * p[1])
best = max(abs(u(p) - u(q)) / np.linalg.norm(p - q) ** alpha for p, q in itertools.combinations(pts, 2))
print(f"nodes = {len(pts)} seminorm = {float(best)!r}")
