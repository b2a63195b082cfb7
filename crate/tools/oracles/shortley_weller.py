"""Shortley-Weller Dirichlet Laplacian on the unit disk assembled with scipy.sparse."""
import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla


def solve(N, f, exact):
    h = 2.0 / (N - 1)
    x = np.linspace(-1.0, 1.0, N)
    inside = {}
    for i in range(N):
        for j in range(N):
            if x[i] ** 2 + x[j] ** 2 < 1.0:
                inside[(i, j)] = len(inside)
    A = sps.lil_matrix((len(inside), len(inside)))
    b = np.zeros(len(inside))
    for (i, j), k in inside.items():
        p = np.array([x[i], x[j]])
        b[k] = f(p)
        for axis in range(2):
            arms = []
            for d in (-1, 1):
                nb = (i + d, j) if axis == 0 else (i, j + d)
                if nb in inside:
                    arms.append((h, inside[nb]))
                else:
                    # distance to the circle along the axis
                    other = p[1 - axis]
                    s = np.sqrt(1.0 - other**2) - d * p[axis]
                    arms.append((min(s, h), None))
            (hl, ql), (hr, qr) = arms
            if ql is not None:
                A[k, ql] += 2.0 / (hl * (hl + hr))
            if qr is not None:
                A[k, qr] += 2.0 / (hr * (hl + hr))
            A[k, k] -= 2.0 / (hl * hr)
    u = spla.spsolve(A.tocsr(), b)
    err = max(abs(u[k] - exact(np.array([x[i], x[j]]))) for (i, j), k in inside.items())
    return u, inside, err, h


for name, f, exact in [
    ("const4", lambda p: 4.0, lambda p: p @ p - 1.0),
    ("r2", lambda p: p @ p, lambda p: ((p @ p) ** 2 - 1.0) / 16.0),
]:
    for N in (17, 33):
        u, inside, err, h = solve(N, f, exact)
        c = (N - 1) // 2
        probe = (c + (N - 1) // 4, c - (N - 1) // 8)
        print(f"{name} N={N} u(center)={float(u[inside[(c, c)]])!r} u{probe}={float(u[inside[probe]])!r} max_err={float(err)!r} 5h^2={5 * h * h!r}")
