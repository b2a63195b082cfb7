"""Interior node counts of the ball grid by direct enumeration."""
import numpy as np

for n, N in [(1, 5), (2, 3), (2, 65)]:
    x = np.linspace(-1.0, 1.0, N)
    mesh = np.meshgrid(*([x] * n), indexing="ij")
    r2 = sum(m**2 for m in mesh)
    count = int((r2 < 1.0).sum())
    print(f"n={n} N={N} interior={count} pi/4*N^2={np.pi / 4 * N**2:.3f} pi/h^2={np.pi * ((N - 1) / 2) ** 2:.3f}")
