"""High-precision reference values frozen into the Rust tests.

Run with `python3 python/oracles.py`; needs mpmath only.
"""

from mpmath import mp, mpf, sqrt, findroot

mp.dps = 30


def phi_aux_inv(y, kappa, big_delta):
    return kappa * y - sqrt(y * y + big_delta * big_delta)


def sheet(x, focus_x, focus_h, b, kappa):
    k2m1 = kappa * kappa - 1
    a = b / k2m1
    return focus_h - kappa * a - sqrt(a * a + (x - focus_x) ** 2 / k2m1)


def bisect(f, lo, hi, steps=200):
    flo = f(lo)
    for _ in range(steps):
        mid = (lo + hi) / 2
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return (lo + hi) / 2


def pipeline(kappa, big_delta, w, tau1):
    inv = phi_aux_inv(tau1, kappa, big_delta)
    big_l = phi_aux_inv(inv / (kappa - 1), kappa, big_delta)
    delta = phi_aux_inv(big_l / (kappa - 1) - w, kappa, big_delta)
    tau0 = tau1 + w - delta / (kappa - 1)
    return inv, big_l, delta, tau0


def b1_bar(heights, kappa, big_delta):
    m = min((h - sqrt(h * h + big_delta**2)) / (kappa - 1) for h in heights[1:])
    m_star = heights[0] + m
    return m_star, phi_aux_inv(m_star, kappa, big_delta)


def two_target_b2(kappa, big_delta, y1, y2, h, b1, tie_x):
    """b2 placing the interface of the two sheets at `tie_x`, by bisection."""
    target = sheet(tie_x, y1, h, b1, kappa)
    return bisect(lambda b: sheet(tie_x, y2, h, b, kappa) - target, mpf("1e-6"), (kappa - 1) * h)


def g_second_difference(kappa, step):
    def g(t):
        q = (kappa - sqrt(1 - (kappa * kappa - 1) * t * t)) / (1 + t * t)
        return 1 / q

    return (g(step) - 2 * g(0) + g(-step)) / step**2


def minimal_tau1(kappa, big_delta, w):
    """Root of the binding condition tau1 = tau0 + kappa Delta/(kappa-1)."""
    return findroot(lambda t: t - pipeline(kappa, big_delta, w, t)[3] - kappa * big_delta / (kappa - 1), mpf(3.5))


if __name__ == "__main__":
    two = mpf(2)
    print("phi_aux_inv(10), kappa 2, Delta 1:", phi_aux_inv(mpf(10), two, 1))
    print("chain at tau1 = 10:", pipeline(two, mpf(1), mpf("0.5"), mpf(10)))
    print("b1_bar, heights 10:", b1_bar([mpf(10)] * 3, two, mpf(1)))
    print("binding tau1 for Delta 1, w 0.5:", minimal_tau1(two, mpf(1), mpf("0.5")))
    print("G second difference h = 0.1:", g_second_difference(two, mpf("0.1")))
    # line scene: Omega = [-1, 1], targets at -0.5 and 0.5, height 10
    m_star, b1 = b1_bar([mpf(10), mpf(10)], two, mpf(2))
    print("line scene b1_bar:", b1)
    print("symmetric b2 (tie at 0):", two_target_b2(two, mpf(2), mpf("-0.5"), mpf("0.5"), mpf(10), b1, mpf(0)))
    print("weights 0.8/1.2 b2 (tie at -0.2):",
          two_target_b2(two, mpf(2), mpf("-0.5"), mpf("0.5"), mpf(10), b1, mpf("-0.2")))
