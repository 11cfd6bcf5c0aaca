"""What an eavesdropper can learn, analytically and by simulation.

Attacker model: the eavesdropper records every ADC code, knows the basis map,
``M``, ``b_max`` and ``sigma_V``, but not the shared basis sequence. Its
decision rule picks the (bit, basis) level nearest to the observed voltage.

Two analytic success models are provided:

``"exact"``
    Success probability of that rule under Gaussian noise and the 2M-level
    ADC. With ``J = round(noise / step)`` the guess is right whenever the
    lattice point ``J`` steps away carries the same bit, so

        P_R = sum_j P(J = j) * s(j mod 2M)

    where ``s(r)`` is the fraction of lattice points whose bit survives a
    shift by ``r`` (1 for even shifts and 0 for odd ones, corrected for the
    two seams). This is what Monte Carlo reproduces.

``"conservative"``
    One-sided point weights ``w_j = exp(-(j step)^2 / 2 sigma^2)``,
    ``j = 0..M-1``, with ``P_R = sum_even w / sum w``. It overstates the
    attacker's advantage (about 0.583 instead of 0.5001 at the 10 V
    operating point) and is kept as a conservative leak estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

from .codec import MaryConfig, candidate_levels, dequantize, encode_sample

EXACT = "exact"
CONSERVATIVE = "conservative"
LEAK_MODELS = (EXACT, CONSERVATIVE)


@dataclass(frozen=True)
class AttackStats:
    p_right: float
    p_wrong: float
    p_success: float
    p_error: float
    per_bit_leak: float

    @classmethod
    def from_right(cls, p_right: float) -> "AttackStats":
        p_right = min(max(p_right, 0.0), 1.0)
        p_wrong = 1.0 - p_right
        p_s = 0.5 + 0.5 * (p_right - p_wrong)
        return cls(p_right, p_wrong, p_s, 1.0 - p_s, p_s - 0.5)

    @classmethod
    def from_success(cls, p_success: float) -> "AttackStats":
        if not 0.5 <= p_success <= 1.0:
            raise ValueError("p_success must lie in [0.5, 1]")
        return cls.from_right(p_success)


def _shift_survival(r: np.ndarray, M: int) -> np.ndarray:
    """Fraction of lattice points whose bit equals the bit ``r`` steps away."""
    L = 2 * M
    r = np.mod(r, L)
    seam = np.minimum(r, L - r) / M
    return np.where(r % 2 == 0, 1.0 - seam, seam)


def _displacement_pmf(sigma: float, cfg: MaryConfig) -> tuple[np.ndarray, np.ndarray] | None:
    """``(j, P(J = j))`` for the noise rounded to lattice steps; None when it wraps uniformly."""
    step = cfg.grid_step
    if sigma >= 3 * 2 * cfg.M * step:
        # Noise wraps the circle many times: J mod 2M is uniform to ~1e-70.
        return None
    half = int(math.ceil(12 * sigma / step)) + 2
    j = np.arange(-half, half + 1)
    upper = ndtr((j + 0.5) * step / sigma)
    lower = ndtr((j - 0.5) * step / sigma)
    # Use the upper tail for positive j to avoid cancellation near 1.
    p = np.where(j > 0, ndtr(-(j - 0.5) * step / sigma) - ndtr(-(j + 0.5) * step / sigma), upper - lower)
    return j, p / p.sum()


def _exact_p_right(sigma: float, cfg: MaryConfig) -> float:
    pmf = _displacement_pmf(sigma, cfg)
    if pmf is None:
        return float(_shift_survival(np.arange(2 * cfg.M), cfg.M).mean())
    j, p = pmf
    return float(p @ _shift_survival(j, cfg.M))


def symbol_information(sigma_v: float, cfg: MaryConfig) -> float:
    """Bits the ADC code reveals about the whole (bit, basis) symbol.

    With uniform symbols the code is uniform over 2M levels, so
    ``I = log2(2M) - H(J mod 2M)``. This counts what the eavesdropper
    learns about the basis bits as well as the key bit; when it exceeds
    one bit per symbol a round cannot replace its own bases.
    """
    if not sigma_v > 0:
        raise ValueError("sigma_v must be positive")
    L = 2 * cfg.M
    pmf = _displacement_pmf(sigma_v, cfg)
    if pmf is None:
        return 0.0
    j, p = pmf
    folded = np.bincount(np.mod(j, L), weights=p, minlength=L)
    nz = folded[folded > 0]
    return max(float(math.log2(L) + (nz * np.log2(nz)).sum()), 0.0)


def _one_sided_weights(sigma: float, cfg: MaryConfig) -> np.ndarray:
    j = np.arange(cfg.M)
    return -((j * cfg.grid_step) ** 2) / (2 * sigma**2)


def attack_stats(sigma_v: float, cfg: MaryConfig, model: str = EXACT) -> AttackStats:
    """Attacker right/wrong/success/error probabilities at noise ``sigma_v``."""
    if not sigma_v > 0:
        raise ValueError("sigma_v must be positive")
    if model == EXACT:
        return AttackStats.from_right(_exact_p_right(sigma_v, cfg))
    if model == CONSERVATIVE:
        logw = _one_sided_weights(sigma_v, cfg)
        total = logsumexp(logw)
        return AttackStats.from_right(math.exp(logsumexp(logw[::2]) - total))
    raise ValueError(f"unknown leak model {model!r}; expected one of {LEAK_MODELS}")


def log10_p_err_b(q: int, sigma_v: float, cfg: MaryConfig) -> float:
    """log10 of the relative weight of a fluctuation ``q`` lattice steps wide."""
    if not 0 <= q < cfg.M:
        raise ValueError("q must lie in [0, M)")
    logw = _one_sided_weights(sigma_v, cfg)
    return float((logw[q] - logsumexp(logw)) / math.log(10))


def p_err_b(q: int, sigma_v: float, cfg: MaryConfig) -> float:
    return 10.0 ** log10_p_err_b(q, sigma_v, cfg)


def log10_receiver_error(sigma_v: float, cfg: MaryConfig) -> float:
    """log10 probability that the legitimate decoder picks the wrong bit.

    The decoder errs once the rounded noise exceeds ``b_max/2`` (M/2
    lattice steps) in either direction; ties at exactly M/2 steps are
    counted as errors, which is conservative.
    """
    half = cfg.M // 2
    z = (half - 0.5) * cfg.grid_step / sigma_v
    return float((math.log(2) + log_ndtr(-z)) / math.log(10))


# --- attacker oracle -------------------------------------------------------

def ml_attack(codes, cfg: MaryConfig) -> tuple[np.ndarray, np.ndarray]:
    """Nearest (bit, basis) candidate for each ADC code; ties go to bit 0.

    Returns ``(bits, basis_indices)`` arrays.
    """
    volts, cbits, cks = candidate_levels(cfg)
    order = np.argsort(volts, kind="stable")
    volts, cbits, cks = volts[order], cbits[order], cks[order]
    L = volts.size
    v = np.atleast_1d(np.asarray(dequantize(codes, cfg), dtype=float))
    hi = np.searchsorted(volts, v) % L
    lo = (hi - 1) % L
    period = cfg.v_max

    def dist(idx):
        d = np.abs(v - volts[idx]) % period
        return np.minimum(d, period - d)

    d_lo, d_hi = dist(lo), dist(hi)
    pick = np.where(d_lo < d_hi, lo, hi)
    tie_to_lo = (d_lo == d_hi) & (cbits[lo] == 0)
    pick = np.where(tie_to_lo, lo, pick)
    return cbits[pick].astype(np.uint8), cks[pick].astype(np.int64)


def ml_attack_guess(code: int, cfg: MaryConfig) -> int:
    bits, _ = ml_attack(np.array([code]), cfg)
    return int(bits[0])


def simulate_attack(n: int, sigma_v: float, cfg: MaryConfig, seed: int = 0) -> float:
    """Monte Carlo attacker success rate over ``n`` independently coded bits."""
    rng = np.random.Generator(np.random.PCG64(seed))
    bits = rng.integers(0, 2, size=n, dtype=np.uint8)
    ks = rng.integers(0, cfg.M, size=n)
    noise = rng.normal(0.0, sigma_v, size=n) if sigma_v > 0 else np.zeros(n)
    codes = encode_sample(bits, ks, noise, cfg)
    guess, _ = ml_attack(codes, cfg)
    return float(np.mean(guess == bits))


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


# --- leak accounting ------------------------------------------------------

def leaked_bits(n: int, p_success: float) -> int:
    """``t = ceil(n (P_s - 1/2))``; rounded up, except float noise just above an integer."""
    if not 0.5 <= p_success <= 1.0:
        raise ValueError("p_success must lie in [0.5, 1]")
    if n < 0:
        raise ValueError("n must be non-negative")
    x = n * (p_success - 0.5)
    nearest = round(x)
    if abs(x - nearest) <= 1e-9 * max(1.0, abs(x)):
        return int(nearest)
    return int(math.ceil(x))


def fraction_left(n: int, t: int, lam: int) -> float:
    if n <= 0 or t < 0 or lam < 0 or t + lam > n:
        raise ValueError("need n > 0 and 0 <= t + lambda <= n")
    return (n - t - lam) / n


def log2_pa_leak_bound(lam: int) -> float:
    """log2 of ``1 / (2^lambda ln 2)``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return -lam - math.log2(math.log(2))


def pa_leak_bound(lam: int) -> float:
    """Residual attacker information in bits (underflows to 0 beyond ~1070)."""
    return 2.0 ** log2_pa_leak_bound(lam)


@dataclass(frozen=True)
class LeakBudget:
    n: int
    t: int
    lam: int
    r: int
    z: int
    log2_mutual_info: float
    fraction_left: float

    @property
    def mutual_info_bound(self) -> float:
        return 2.0 ** self.log2_mutual_info

    def as_dict(self) -> dict:
        return {"n": self.n, "t": self.t, "lambda": self.lam, "r": self.r, "z": self.z,
                "log2_I": self.log2_mutual_info, "f": self.fraction_left}


def leak_budget(a: int, m: int, t: int, lam: int) -> LeakBudget:
    """Bit bookkeeping of one round: ``r = n - t - lambda = z + m a``."""
    n = a + m * a
    r = n - t - lam
    z = a - t - lam
    if r < 0:
        raise ValueError("t + lambda exceeds the pool")
    return LeakBudget(n=n, t=t, lam=lam, r=r, z=z, log2_mutual_info=log2_pa_leak_bound(lam),
                      fraction_left=fraction_left(n, t, lam))


# --- information theory ---------------------------------------------------

class JointDistribution:
    """Joint pmf ``P(x, y)`` stored as a dense matrix (rows x, columns y)."""

    def __init__(self, table, tol: float = 1e-12) -> None:
        p = np.asarray(table, dtype=float)
        if p.ndim != 2:
            raise ValueError("joint distribution must be a 2-D table")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > tol:
            raise ValueError(f"joint distribution sums to {p.sum()!r}, not 1")
        self.p = p

    @classmethod
    def from_pairs(cls, pairs: Mapping[tuple, float]) -> "JointDistribution":
        xs = sorted({x for x, _ in pairs})
        ys = sorted({y for _, y in pairs})
        xi = {x: i for i, x in enumerate(xs)}
        yi = {y: i for i, y in enumerate(ys)}
        table = np.zeros((len(xs), len(ys)))
        for (x, y), pr in pairs.items():
            table[xi[x], yi[y]] += pr
        return cls(table)

    @property
    def px(self) -> np.ndarray:
        return self.p.sum(axis=1)

    @property
    def py(self) -> np.ndarray:
        return self.p.sum(axis=0)


def _joint(joint) -> JointDistribution:
    return joint if isinstance(joint, JointDistribution) else JointDistribution(joint)


def shannon_entropy(dist, tol: float = 1e-12) -> float:
    p = np.asarray(dist, dtype=float).ravel()
    if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise ValueError("distribution must be non-negative and sum to 1")
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def conditional_entropy(joint) -> float:
    """``H(X|Y) = -sum P(x,y) log2 P(x|y)``."""
    j = _joint(joint)
    py = np.broadcast_to(j.py, j.p.shape)
    mask = j.p > 0
    return float(-(j.p[mask] * np.log2(j.p[mask] / py[mask])).sum())


def mutual_information(joint) -> float:
    j = _joint(joint)
    outer = np.outer(j.px, j.py)
    mask = j.p > 0
    return float((j.p[mask] * np.log2(j.p[mask] / outer[mask])).sum())


def otp_joint(n_bits: int, message_dist=None, key_dist=None) -> JointDistribution:
    """Exact ``P(M, C)`` for ``C = M xor K`` by enumerating every (m, k) pair."""
    if not 1 <= n_bits <= 8:
        raise ValueError("enumeration is limited to 1..8 bit messages")
    size = 1 << n_bits
    pm = np.full(size, 1.0 / size) if message_dist is None else np.asarray(message_dist, dtype=float)
    pk = np.full(size, 1.0 / size) if key_dist is None else np.asarray(key_dist, dtype=float)
    if pm.shape != (size,) or pk.shape != (size,):
        raise ValueError("distributions must cover all 2^N values")
    table = np.zeros((size, size))
    for m in range(size):
        for k in range(size):
            table[m, m ^ k] += pm[m] * pk[k]
    return JointDistribution(table)


def otp_secrecy_check(n_bits: int, message_dist=None, key_dist=None) -> float:
    """``I(M; C)`` in bits for an N-bit one-time pad."""
    return mutual_information(otp_joint(n_bits, message_dist, key_dist))

