"""Reference values for the analysis unit tests (numpy/scipy).

Run: python3 tests/oracles/analysis_oracles.py
"""
import math

import numpy as np
from scipy.linalg import expm, sqrtm

sx = np.array([[0, 1], [1, 0]], complex)
sy = np.array([[0, -1j], [1j, 0]])
sz = np.diag([1.0, -1.0]).astype(complex)
e = np.array([1, 0], complex)
g = np.array([0, 1], complex)
plus = (e + g) / math.sqrt(2)


def proj(v):
    return np.outer(v, v.conj())


def fid(a, b):
    s = sqrtm(a)
    return np.trace(sqrtm(s @ b @ s)).real ** 2


r1 = 0.7 * proj(e) + 0.3 * proj(plus)
r2 = 0.5 * np.eye(2) + 0.2 * sy + 0.1 * sz
print(f"fidelity(r1, r2) = {fid(r1, r2):.15f}")


def concurrence(r):
    yy = np.kron(sy, sy)
    rt = yy @ r.conj() @ yy
    lam = np.sort(np.sqrt(np.abs(np.linalg.eigvals(r @ rt))))[::-1]
    return max(0.0, lam[0] - lam[1] - lam[2] - lam[3])


psip = np.array([0, 1, 1, 0]) / math.sqrt(2)
w = 0.8 * proj(psip) + 0.2 * np.eye(4) / 4
print(f"concurrence(Werner p=0.8) = {concurrence(w):.15f}")
v = np.array([0.6, 0.3j, -0.2, 0.5 + 0.1j])
v /= np.linalg.norm(v)
mix = 0.75 * proj(v) + 0.25 * proj(np.array([0, 0, 1, 0], complex))
print(f"concurrence(mix) = {concurrence(mix):.15f} (double precision)")

# Same state at 50 digits; the rank-2 state has two zero eigenvalues whose
# square roots amplify rounding in double precision.
import mpmath as mp  # noqa: E402

mp.mp.dps = 50
vm = mp.matrix([mp.mpf("0.6"), mp.mpc(0, "0.3"), mp.mpf("-0.2"), mp.mpc("0.5", "0.1")])
vm = vm / mp.sqrt(sum(abs(x) ** 2 for x in vm))
R = mp.mpf("0.75") * vm * vm.H
R[2, 2] += mp.mpf("0.25")
YY = mp.matrix([[0, 0, 0, -1], [0, 0, 1, 0], [0, 1, 0, 0], [-1, 0, 0, 0]])
Rt = YY * R.conjugate() * YY
ev = mp.eig(R * Rt, left=False, right=False)
lam = sorted((mp.sqrt(abs(mp.re(x))) for x in ev), reverse=True)
print("concurrence(mix) 50 digits =", mp.nstr(lam[0] - lam[1] - lam[2] - lam[3], 20))


def destroy(n):
    return np.diag(np.sqrt(np.arange(1, n)), 1).astype(complex)


def coh(a, n):
    c = np.array([a**k / math.sqrt(math.factorial(k)) for k in range(n)], complex)
    return c / np.linalg.norm(c)


def wigner(rho, beta, pad=80):
    n = rho.shape[0]
    big = np.zeros((pad, pad), complex)
    big[:n, :n] = rho
    a = destroy(pad)
    D = expm(beta * a.conj().T - np.conj(beta) * a)
    P = np.diag([(-1.0) ** k for k in range(pad)])
    return 2 / math.pi * np.trace(D @ P @ D.conj().T @ big).real


n = 25
cat = coh(2, n) - coh(-2, n)
cat /= np.linalg.norm(cat)
print(f"W(odd cat 2, 0) = {wigner(proj(cat), 0):.12f}")
print(f"W(odd cat 2, 0.3+0.4i) = {wigner(proj(cat), 0.3 + 0.4j):.12f}")
print(f"W(odd cat 2, 1.7-0.2i) = {wigner(proj(cat), 1.7 - 0.2j):.12f}")
c1 = coh(1, n)
print(f"W(|1>, 0.5+0.2i) = {wigner(proj(c1), 0.5 + 0.2j):.12f} closed form {2 / math.pi * math.exp(-2 * abs(0.5 + 0.2j - 1) ** 2):.12f}")
f3 = np.zeros(n, complex)
f3[3] = 1
print(f"W(|3>, 0.8) = {wigner(proj(f3), 0.8):.12f}")
