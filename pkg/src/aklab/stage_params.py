"""Exact arithmetic for the stage recursion alpha_n = p_n / q_n.

Everything here is integer or ``mpq`` arithmetic: no floats enter a
comparison. Two modes are supported. ``"paper-faithful"`` enforces the
divisibility, coprimality and growth constraints of the convergence
construction; ``"desk"`` keeps only the structural divisibility rules so
that small denominators can be used for testing every stagewise lemma.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import gmpy2
from gmpy2 import mpq, mpz

from ._rational import Q, balanced_mod, ceil, floor, to_str
from .exceptions import BoundViolated, ConfigError, NoAdmissibleM, TargetExhausted

MODES = ("paper-faithful", "desk")


def _base(n: int) -> int:
    return 260 * n**4


@dataclass(frozen=True)
class StageParams:
    """Arithmetic data of stage ``n``.

    Attributes:
        n: Stage index, at least 1.
        dim_m: Manifold dimension m >= 2.
        sigma: Exponent in (0, 1) used for the shear width floor(n q^sigma).
        p: Numerator of alpha_n.
        q: Denominator of alpha_n (not necessarily in lowest terms).
        k_n: Norm-control index, strictly increasing across stages.
        mode: ``"paper-faithful"`` or ``"desk"``.
        m_n: Mixing time towards the next stage, once computed.
        a_n: Exact error term belonging to ``m_n``.
    """

    n: int
    dim_m: int
    sigma: object
    p: int
    q: int
    k_n: int = 1
    mode: str = "desk"
    m_n: Optional[int] = None
    a_n: Optional[object] = None

    def __post_init__(self):
        object.__setattr__(self, "sigma", Q(self.sigma))
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "q", int(self.q))
        if self.a_n is not None:
            object.__setattr__(self, "a_n", Q(self.a_n))
        self.validate()

    @property
    def alpha(self):
        return mpq(self.p, self.q)

    @property
    def b(self) -> int:
        """Shear width floor(n q^sigma), computed with an exact integer root."""
        from ._rational import floor_n_q_pow

        return floor_n_q_pow(self.n, self.q, self.sigma)

    def validate(self) -> None:
        """Check the structural invariants.

        Raises:
            ConfigError: If any invariant fails.
        """
        if self.n < 1:
            raise ConfigError(f"stage index must be >= 1, got {self.n}")
        if self.dim_m < 2:
            raise ConfigError(f"dimension must be >= 2, got {self.dim_m}")
        if not (0 < self.sigma < 1):
            raise ConfigError(f"sigma must lie strictly inside (0, 1), got {self.sigma}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.q < 1:
            raise ConfigError("q must be positive")
        if self.k_n < 1:
            raise ConfigError("k_n must be a positive integer")
        if not validate_q(self.n, self.dim_m, self.q):
            raise ConfigError(f"260*n^4 = {_base(self.n)} does not divide q = {self.q}")
        if self.mode == "paper-faithful":
            d = _base(self.n)
            if self.p % d != 0 or math.gcd(self.p // d, self.q // d) != 1:
                raise ConfigError("paper-faithful mode needs p = 260n^4 p~ with gcd(p~, q~) = 1")

    def check_link(self, nxt: "StageParams") -> None:
        """Validate the invariants that involve the following stage."""
        if self.m_n is not None:
            if not (1 <= self.m_n <= nxt.q):
                raise ConfigError(f"m_n = {self.m_n} outside [1, q_(n+1)]")
            if self.a_n is not None and abs(self.a_n) > mpq(_base(self.n + 1), nxt.q):
                raise BoundViolated(f"|a_n| = {self.a_n} exceeds 260(n+1)^4/q_(n+1)")

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "dim_m": self.dim_m,
            "sigma": to_str(self.sigma),
            "p": str(self.p),
            "q": str(self.q),
            "k_n": self.k_n,
            "mode": self.mode,
            "m_n": self.m_n,
            "a_n": None if self.a_n is None else to_str(self.a_n),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageParams":
        return cls(
            n=int(d["n"]),
            dim_m=int(d["dim_m"]),
            sigma=mpq(d["sigma"]),
            p=int(d["p"]),
            q=int(d["q"]),
            k_n=int(d.get("k_n", 1)),
            mode=d.get("mode", "desk"),
            m_n=None if d.get("m_n") is None else int(d["m_n"]),
            a_n=None if d.get("a_n") is None else mpq(d["a_n"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class LiouvilleTarget:
    """Finite list of rational approximants standing in for a Liouville alpha.

    The last approximant plays the role of alpha itself in every
    comparison, so all distances stay exact.
    """

    approximants: tuple
    mode: str = "paper-faithful"

    def __post_init__(self):
        apx = tuple(Q(a) for a in self.approximants)
        object.__setattr__(self, "approximants", apx)
        dens = [int(a.denominator) for a in apx]
        if any(b <= a for a, b in zip(dens, dens[1:])):
            raise ConfigError("approximant denominators must strictly increase")
        gaps = [abs(b - a) for a, b in zip(apx, apx[1:])]
        if any(g2 >= g1 for g1, g2 in zip(gaps, gaps[1:])):
            raise ConfigError("successive approximant distances must strictly decrease")

    @property
    def alpha(self):
        return self.approximants[-1]


# ----------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------


def validate_q(n: int, dim_m: int, q: int) -> bool:
    """Return True iff 260 n^4 divides q.

    Args:
        n: Stage index.
        dim_m: Manifold dimension (unused by the rule, kept for symmetry).
        q: Candidate denominator.
    """
    if n < 1 or q < 1:
        return False
    return int(q) % _base(n) == 0


def growth_lower_bound(prev: StageParams) -> int:
    """Lower bound 64*260*(n+1)^4*n^11*q_n^((m-1)n^2+3) for q_(n+1)."""
    n, m = prev.n, prev.dim_m
    if n < 1:
        raise ConfigError("growth bound undefined for n = 0")
    return 64 * 260 * (n + 1) ** 4 * n**11 * int(mpz(prev.q) ** ((m - 1) * n * n + 3))


def first_multiple_in_range(a: int, M: int, lo: int, hi: int) -> int:
    """Least x >= 0 with lo <= (a*x mod M) <= hi, or -1 if none.

    Requires 0 <= lo <= hi < M. Runs in O(log M) by the Euclid-style
    reduction of the lattice {a*x - M*y}.
    """
    a %= M
    if lo == 0:
        return 0
    if a == 0:
        return -1
    k = (lo + a - 1) // a
    if a * k <= hi:
        return k
    y = first_multiple_in_range(M % a, a, (a - hi % a) % a, (a - lo % a) % a)
    if y == -1:
        return -1
    return (M * y + lo + a - 1) // a


def _mn_predicate(m: int, c, n: int, tol) -> bool:
    x = m * c - mpq(1, n)
    d = x - floor(x)
    return min(d, 1 - d) <= tol


def compute_m_n(stage_n: StageParams, nxt: StageParams) -> int:
    """Least m in [1, q_(n+1)] with dist(m q_n p_(n+1)/q_(n+1) - 1/n, Z) <= 260(n+1)^4 q_n/q_(n+1).

    Raises:
        NoAdmissibleM: If the admissible set is empty.
    """
    n = stage_n.n
    c = mpq(stage_n.q * nxt.p, nxt.q)
    tol = mpq(_base(n + 1) * stage_n.q, nxt.q)
    if tol >= mpq(1, 2):
        return 1
    u, v = int(c.numerator), int(c.denominator)
    u %= v
    lo = ceil((mpq(1, n) - tol) * v)
    hi = floor((mpq(1, n) + tol) * v)
    best = None
    if hi - lo + 1 >= v:
        best = 0
    else:
        # shift by one so the search variable x = m - 1 starts at zero
        lo_s, hi_s = lo - u, hi - u
        lo_r = lo_s % v
        hi_r = lo_r + (hi_s - lo_s)
        ranges = [(lo_r, hi_r)] if hi_r < v else [(lo_r, v - 1), (0, hi_r - v)]
        for lo_i, hi_i in ranges:
            x = first_multiple_in_range(u, v, lo_i, hi_i)
            if x >= 0 and (best is None or x < best):
                best = x
    if best is None or best + 1 > nxt.q:
        raise NoAdmissibleM(f"no admissible mixing time for n = {n}")
    m = best + 1
    assert _mn_predicate(m, c, n, tol)
    return m


def compute_m_n_bruteforce(stage_n: StageParams, nxt: StageParams) -> int:
    """Reference scan over m = 1..q_(n+1). Only for small q."""
    n = stage_n.n
    c = mpq(stage_n.q * nxt.p, nxt.q)
    tol = mpq(_base(n + 1) * stage_n.q, nxt.q)
    for m in range(1, nxt.q + 1):
        if _mn_predicate(m, c, n, tol):
            return m
    raise NoAdmissibleM(f"no admissible mixing time for n = {n}")


def certify_m_n_minimal(stage_n: StageParams, nxt: StageParams, m_n: int) -> bool:
    """Rescan every m < m_n and confirm each violates the defining inequality."""
    n = stage_n.n
    c = mpq(stage_n.q * nxt.p, nxt.q)
    tol = mpq(_base(n + 1) * stage_n.q, nxt.q)
    if not _mn_predicate(m_n, c, n, tol):
        return False
    return not any(_mn_predicate(m, c, n, tol) for m in range(1, m_n))


def compute_a_n(stage_n: StageParams, nxt: StageParams, m_n: int):
    """Error term (m_n alpha_(n+1) - 1/(n q_n)) reduced into (-1/(2q_n), 1/(2q_n)].

    Raises:
        BoundViolated: If |a_n| exceeds 260 (n+1)^4 / q_(n+1).
    """
    n, qn = stage_n.n, stage_n.q
    x = m_n * mpq(nxt.p, nxt.q) - mpq(1, n * qn)
    a = balanced_mod(x, mpq(1, qn))
    if abs(a) > mpq(_base(n + 1), nxt.q):
        raise BoundViolated(f"|a_n| = {a} > 260(n+1)^4/q_(n+1)")
    return a


def with_mixing(stage_n: StageParams, nxt: StageParams) -> StageParams:
    """Return ``stage_n`` with m_n and a_n filled in."""
    m = compute_m_n(stage_n, nxt)
    a = compute_a_n(stage_n, nxt, m)
    out = replace(stage_n, m_n=m, a_n=a)
    out.check_link(nxt)
    return out


def desk_chain(
    N: int,
    dim_m: int = 2,
    sigma="1/4",
    q1: int = 260,
    p1: int = 0,
    factors: Sequence[int] | None = None,
    q_overrides: dict | None = None,
    p_overrides: dict | None = None,
    k_schedule: Sequence[int] | None = None,
) -> list:
    """Build N desk stages (plus the (N+1)-th for m_N, a_N).

    Default recursion: q_(n+1) = c_n * lcm(n q_n, 260 (n+1)^4) and
    alpha_(n+1) = alpha_n + 1/(n q_n), which gives m_n = 1 and a_n = 0.

    Args:
        N: Number of fully populated stages.
        dim_m: Dimension m.
        sigma: Exponent sigma as a rational string or number.
        q1: First denominator.
        p1: First numerator.
        factors: Optional multipliers c_n (default 1).
        q_overrides: Optional ``{n: q_n}`` forcing specific denominators.
        p_overrides: Optional ``{n: p_n}`` forcing specific numerators.
        k_schedule: Optional k_n values (default k_n = n).

    Returns:
        List of N + 1 StageParams; the first N carry m_n and a_n.
    """
    q_overrides = dict(q_overrides or {})
    p_overrides = dict(p_overrides or {})
    sig = Q(sigma)
    ks = list(k_schedule) if k_schedule else list(range(1, N + 2))
    if len(ks) < N + 1:
        ks += list(range(ks[-1] + 1, ks[-1] + 2 + N - len(ks)))
    q = int(q_overrides.get(1, q1))
    p = int(p_overrides.get(1, p1))
    stages = [StageParams(1, dim_m, sig, p, q, ks[0], "desk")]
    for n in range(1, N + 1):
        prev = stages[-1]
        c = int(factors[n - 1]) if factors and len(factors) >= n else 1
        qn1 = int(q_overrides.get(n + 1, c * math.lcm(n * prev.q, _base(n + 1))))
        if (n + 1) in p_overrides:
            pn1 = int(p_overrides[n + 1])
        else:
            alpha = prev.alpha + mpq(1, n * prev.q)
            val = alpha * qn1
            if val.denominator != 1:
                raise ConfigError(f"q_{n + 1} = {qn1} cannot represent alpha_{n + 1} = {alpha}")
            pn1 = int(val.numerator)
        stages.append(StageParams(n + 1, dim_m, sig, pn1, qn1, ks[n], "desk"))
    for i in range(N):
        stages[i] = with_mixing(stages[i], stages[i + 1])
    return stages


def lemma_conv_conditions(
    alpha,
    cand_p: int,
    cand_q: int,
    n: int,
    k_n: int,
    norm_H_k1: float,
    norm_H_1: float,
    norm_DH_prev: float,
    C_k: float,
) -> dict:
    """Evaluate the three parameter-selection conditions exactly.

    Norms are converted to exact rationals (binary value of the float),
    and ``ln q > n ||DH||`` is decided by comparing ``ln q`` with
    ``n ||DH||`` at 256-bit precision.
    """
    a_n = mpq(cand_p, cand_q)
    dist = abs(Q(alpha) - a_n)
    nk = Q(norm_H_k1)
    n1 = Q(norm_H_1)
    c1 = dist < 1 / (2 * k_n * Q(C_k) * nk ** (k_n + 1))
    c2 = dist < 1 / (mpz(2) ** (n + 1) * cand_q * n1)
    # condition 3: ||DH_(n-1)||_0 < ln(q_n)/n, decided with an exact log bound
    with gmpy2.local_context(gmpy2.context(), precision=256):
        c3 = bool(gmpy2.log(mpz(cand_q)) > gmpy2.mpfr(Q(norm_DH_prev) * n))
    return {"cond1": bool(c1), "cond2": bool(c2), "cond3": c3}


def select_next_stage(
    prev: Optional[StageParams],
    target: LiouvilleTarget,
    norm_estimate_H: float,
    C_k_surrogate: float,
    *,
    configured_q: int | None = None,
    configured_p: int | None = None,
    norm_DH_prev: float | None = None,
    dim_m: int = 2,
    sigma="1/4",
    k_next: int | None = None,
) -> tuple:
    """Pick alpha_(n+1).

    Paper-faithful mode scans the target approximants for the first
    p~/q~ whose scaled copy q = 260(n+1)^4 q~ passes the three selection
    conditions, the growth bound, and strict improvement over alpha_n.
    Desk mode passes the configured q, p through and only records which
    conditions hold.

    Args:
        prev: Stage n, or None to select stage 1 (H_0 = id).
        target: Approximant list; its last entry stands for alpha.
        norm_estimate_H: Measured |||H|||_(k+1), also used for |||H|||_1.
        C_k_surrogate: Positive stand-in for the non-constructive C_k.
        configured_q: Desk-mode denominator.
        configured_p: Desk-mode numerator.
        norm_DH_prev: ||DH_n||_0 for condition 3 (default ``norm_estimate_H``).
        dim_m: Dimension when ``prev`` is None.
        sigma: Sigma when ``prev`` is None.
        k_next: k_(n+1); default k_n + 1.

    Returns:
        (StageParams, conditions dict).

    Raises:
        TargetExhausted: In paper-faithful mode when nothing qualifies.
    """
    if C_k_surrogate <= 0 or norm_estimate_H <= 0:
        raise ConfigError("norm estimate and C_k surrogate must be positive")
    n1 = 1 if prev is None else prev.n + 1
    m = dim_m if prev is None else prev.dim_m
    sig = Q(sigma) if prev is None else prev.sigma
    k1 = k_next if k_next is not None else (1 if prev is None else prev.k_n + 1)
    dh = norm_estimate_H if norm_DH_prev is None else norm_DH_prev
    mode = target.mode if prev is None else prev.mode
    if mode == "desk":
        if configured_q is None or configured_p is None:
            raise ConfigError("desk mode needs configured q and p")
        conds = lemma_conv_conditions(
            target.alpha, configured_p, configured_q, n1, k1, norm_estimate_H, norm_estimate_H, dh, C_k_surrogate
        )
        conds["growth"] = prev is None or configured_q >= growth_lower_bound(prev)
        conds["enforced"] = False
        return StageParams(n1, m, sig, configured_p, configured_q, k1, "desk"), conds
    base = _base(n1)
    alpha = target.alpha
    for apx in target.approximants[:-1]:
        pt, qt = int(apx.numerator), int(apx.denominator)
        cq, cp = base * qt, base * pt
        conds = lemma_conv_conditions(alpha, cp, cq, n1, k1, norm_estimate_H, norm_estimate_H, dh, C_k_surrogate)
        conds["growth"] = prev is None or cq >= growth_lower_bound(prev)
        conds["monotone"] = prev is None or abs(alpha - mpq(cp, cq)) < abs(alpha - prev.alpha)
        if all(conds.values()):
            conds["enforced"] = True
            return StageParams(n1, m, sig, cp, cq, k1, "paper-faithful"), conds
    raise TargetExhausted(f"no approximant qualifies for stage {n1}")
