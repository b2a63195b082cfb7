"""Jet vectors of a polynomial map, their Gram determinant and the pseudo-inverse solution."""
import numpy as np
import sympy as sp

x, y = sp.symbols("x y")
F = sp.Matrix([x, y, x**2, x * y, y**2, x**3 + 3 * x * y**2, y**3 - x**2 * y])
p = {x: sp.Rational(1, 4), y: sp.Rational(-1, 2)}
rows = [F.diff(x), F.diff(y), F.diff(x, 2), F.diff(x, y), F.diff(y, 2)]
A = np.array([[float(v.subs(p)) for v in r] for r in rows])
print(f"gram_det = {float(np.linalg.det(A @ A.T))!r}")
rhs = np.array([0.3, -0.2, 1.0, 0.5, -0.7])
v = np.linalg.pinv(A) @ rhs
print("E(h, f) =", [float(c) for c in v])
print(f"residual = {np.abs(A @ v - rhs).max():.1e}")
