"""Taylor coefficients of composite expressions by symbolic differentiation."""
import sympy as sp

x, y = sp.symbols("x y")
x0, y0 = sp.Rational(3, 10), sp.Rational(-1, 5)
cases = {
    "exp(sin x + y^2)": sp.exp(sp.sin(x) + y**2),
    "sqrt(1 + x^2 y) / (2 + cos y)": sp.sqrt(1 + x**2 * y) / (2 + sp.cos(y)),
}
for name, e in cases.items():
    print(name)
    for a in range(5):
        for b in range(5 - a):
            c = sp.diff(e, x, a, y, b).subs({x: x0, y: y0}) / (sp.factorial(a) * sp.factorial(b))
            print(f"  [{a}, {b}] {float(c)!r}")
