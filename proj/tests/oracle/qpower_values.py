"""Frozen reference values for the local-power curve Q_d.

Noncentral chi-square pdf via the Bessel closed form at 40 digits;
Q_d assembled from the two-bracket formula directly.
"""
import mpmath as mp

mp.mp.dps = 40


def chi2_pdf(x, k):
    x, k = mp.mpf(x), mp.mpf(k)
    return x ** (k / 2 - 1) * mp.e ** (-x / 2) / (2 ** (k / 2) * mp.gamma(k / 2))


def ncx2_pdf(x, k, lam):
    x, k, lam = mp.mpf(x), mp.mpf(k), mp.mpf(lam)
    if lam == 0:
        return chi2_pdf(x, k)
    return (mp.mpf("0.5") * mp.e ** (-(x + lam) / 2) * (x / lam) ** (k / 4 - mp.mpf("0.5"))
            * mp.besseli(k / 2 - 1, mp.sqrt(lam * x)))


def q_power(c, tau2, r, d):
    c, tau2 = mp.mpf(c), mp.mpf(tau2)
    lead = 1 - mp.mpf(1) / (2 * r)
    bracket = ncx2_pdf(c, d, tau2) * chi2_pdf(c, d + 2) / chi2_pdf(c, d) - ncx2_pdf(c, d + 2, tau2)
    tail = (tau2 / d) * (ncx2_pdf(c, d + 4, tau2) - ncx2_pdf(c, d + 2, tau2))
    return lead * bracket - tail


def chi2_quantile(p, k):
    return mp.findroot(lambda x: mp.gammainc(mp.mpf(k) / 2, 0, x / 2, regularized=True) - mp.mpf(p), mp.mpf(k))


if __name__ == "__main__":
    print("q_power(5, 2.5, 4, 3)       =", mp.nstr(q_power(5, "2.5", 4, 3), 17))
    print("q_power(4.605..., 6, 2, 2)  =", mp.nstr(q_power(chi2_quantile("0.9", 2), 6, 2, 2), 17))
    print("q_power(7.7794..., 12, 4, 4)=", mp.nstr(q_power(chi2_quantile("0.9", 4), 12, 4, 4), 17))
    print("c10_2 =", mp.nstr(chi2_quantile("0.9", 2), 17))
    print("c10_4 =", mp.nstr(chi2_quantile("0.9", 4), 17))
    print("g6(c10_4)/g4(c10_4) =", mp.nstr(chi2_pdf(chi2_quantile("0.9", 4), 6) / chi2_pdf(chi2_quantile("0.9", 4), 4), 17))
