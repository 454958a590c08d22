#!/usr/bin/env python3
"""Reference values for the smoothing-kernel constants, via exact rational
integration of the piecewise-polynomial forms.  Output is frozen into
tests/test_kernels.cpp and tests/acceptance.cpp; rerun only to regenerate."""
from fractions import Fraction as F


def poly_mul(a, b):
    out = [F(0)] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            out[i + j] += ai * bj
    return out


def integrate_sym(p):
    """integral of p(v) dv over [-1, 1], p given as coefficient list."""
    return sum(2 * c / F(k + 1) for k, c in enumerate(p) if k % 2 == 0)


def shift_x(p, k):
    return [F(0)] * k + list(p)


# g(u) on [-1,1] and g'(v) on [-1,1] as coefficient lists (constant first)
KERNELS = {
    "horowitz4": (
        [F(1, 2), F(105, 64), 0, -F(105, 64) * F(5, 3), 0, F(105, 64) * F(7, 5), 0, -F(105, 64) * F(3, 7)],
        [F(105, 64), 0, -F(105, 64) * 5, 0, F(105, 64) * 7, 0, -F(105, 64) * 3],
        4,
    ),
    "epanechnikov2": (
        [F(1, 2), F(3, 4), 0, -F(1, 4)],
        [F(3, 4), 0, -F(3, 4)],
        2,
    ),
    "uniform2": (
        [F(1, 2), F(1, 2)],
        [F(1, 2)],
        2,
    ),
}

for name, (g, gp, r) in KERNELS.items():
    print(f"== {name} (r={r})")
    for k in range(0, 9):
        mk = integrate_sym(shift_x(gp, k))
        print(f"  moment_{k} = {mk} = {float(mk):.17g}")
    one_minus_g_sq = 1 - integrate_sym(poly_mul(g, g))
    print(f"  one_minus_g_sq = {one_minus_g_sq} = {float(one_minus_g_sq):.17g}")
    vgp = shift_x(gp, 1)
    gpv2 = integrate_sym(poly_mul(vgp, vgp))
    print(f"  gprime_v_sq = {gpv2} = {float(gpv2):.17g}")
    print(f"  g_prime_at_zero = {gp[0]} = {float(gp[0]):.17g}")
