"""Profile curve, speed, antiderivative and inverse by adaptive quadrature and bracketing."""
import warnings

import numpy as np
import sympy as sp
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import brentq

warnings.simplefilter("ignore", IntegrationWarning)

t = sp.symbols("t", real=True)
r3 = sp.sqrt(3)
a1 = sp.cos(t) - sp.cos(3 * t) / r3
a2 = sp.sin(t) + sp.sin(3 * t) / r3
speed2 = sp.simplify(sp.diff(a1, t) ** 2 + sp.diff(a2, t) ** 2)
rho = sp.lambdify(t, sp.sqrt(speed2), "numpy")
wr = sp.lambdify(t, sp.diff(a1, t) * sp.diff(a2, t, 2) - sp.diff(a2, t) * sp.diff(a1, t, 2), "numpy")
d2 = [sp.lambdify(t, sp.diff(a, t, 2), "numpy") for a in (a1, a2)]


def P(s):
    return quad(rho, 0.0, s, epsabs=1e-14, epsrel=1e-14, limit=400)[0]


def beta(s):
    return brentq(lambda x: P(x) - s, s / 4.0 - 1.0, s / 0.5 + 1.0, xtol=1e-15, rtol=1e-15)


print(f"speed2 = {speed2}")
print(f"p_mean = {P(2 * np.pi) / (2 * np.pi)!r}")
for s in (1.0, -2.5):
    print(f"P({s}) = {P(s)!r}")
for s in (-7.5, 0.3, 4.0, 9.9):
    b = beta(s)
    print(f"beta({s}) = {b!r}")
for x in (0.3, 1.1):
    print(f"wronskian({x}) = {float(wr(x))!r}")
    print(f"alpha''({x}) = {float(d2[0](x))!r}, {float(d2[1](x))!r}")
for i, a in enumerate((a1, a2)):
    f = sp.lambdify(t, a, "numpy")
    m = quad(lambda x: f(x) * rho(x), -np.pi, np.pi, epsabs=1e-14, limit=400)[0]
    print(f"moment_{i} = {m:.3e}")
ws = wr(np.linspace(-np.pi, np.pi, 100001))
print(f"wronskian max = {float(ws.max())!r}  2*sqrt3-8 = {float(2 * np.sqrt(3) - 8)!r}")
