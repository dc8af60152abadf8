"""Exact finite-state computations and rate-bound evaluators.

Everything here is deterministic arithmetic: stationary laws and mixing
rates of the single-lineage kernel, the closed-form second moment of a
generation average, full-enumeration moment oracles, exact probabilities
of the ancestor-coincidence events that drive the fourth-moment bound,
and evaluators for every deviation/exponential bound family.

The multiplicative constants of the bound families are configuration,
never reconstructed from theory: harness experiments fit them as the
largest observed ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .kernels import FiniteKernel, Functional, mean_kernel, single_functional

REGIME_TOL = 1e-12
ALPHA_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# Stationary law and geometric-ergodicity constants


def stationary_distribution(q: np.ndarray) -> np.ndarray:
    """Stationary probability vector of a row-stochastic matrix.

    The chain must be irreducible and aperiodic, checked by strict
    positivity of some power up to ``m**2``; the returned vector solves
    ``mu q = mu`` with residual below 1e-12.
    """
    q = np.asarray(q, dtype=np.float64)
    m = q.shape[0]
    if q.shape != (m, m):
        raise ValueError("transition matrix must be square")
    if np.any(q < 0) or np.max(np.abs(q.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("rows must be probability vectors")
    power = np.eye(m)
    primitive = False
    for _ in range(m * m):
        power = power @ q
        if np.all(power > 0):
            primitive = True
            break
    if not primitive:
        raise ValueError("chain is reducible or periodic (no strictly positive power)")
    # Left fixed vector via the singular linear system (I - q^T) mu = 0,
    # with the normalization sum(mu) = 1 appended.
    a = np.vstack([np.eye(m) - q.T, np.ones(m)])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    mu, *_ = np.linalg.lstsq(a, b, rcond=None)
    residual = np.max(np.abs(mu @ q - mu))
    if residual > 1e-12:
        raise ValueError(f"stationary solve residual {residual:.2e} above 1e-12")
    return mu


@dataclass(frozen=True)
class ErgodicityEstimate:
    """Certificate |Q^r f(x)| <= c * alpha^r for r up to ``horizon``.

    ``alpha`` is the modulus of the second-largest eigenvalue of the
    single-lineage kernel (clamped to 1e-9 from below so that bound
    evaluators never divide by zero); ``c`` is the smallest uniform
    constant observed over the horizon, re-checked pointwise at
    construction.  ``mode`` records whether the certificate is read as a
    pointwise-dominated (geometric) or uniform (bounded-state) decay.
    """

    alpha: float
    c: float
    horizon: int
    mode: str = "H2-uniform"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.c <= 0:
            raise ValueError("c must be positive")


def ergodicity_constants(q: np.ndarray, f: Functional, horizon: int,
                         mode: str = "H2-uniform") -> ErgodicityEstimate:
    """Fit (alpha, c) so that |Q^r f| <= c alpha^r for all r <= horizon.

    ``f`` must be centered against the stationary law (checked to
    1e-10).  Raises if the second eigenvalue modulus is above
    1 - 1e-9 (not geometrically ergodic at tolerance).
    """
    q = np.asarray(q, dtype=np.float64)
    if f.kind != "single" or f.table is None:
        raise ValueError("needs a single-state table functional")
    mu = stationary_distribution(q)
    if abs(float(mu @ f.table)) > 1e-10:
        raise ValueError("functional must be centered against the stationary law")
    eigvals = np.sort(np.abs(np.linalg.eigvals(q)))[::-1]
    alpha = float(eigvals[1])
    if alpha >= 1.0 - ALPHA_FLOOR:
        raise ValueError(f"second eigenvalue modulus {alpha} too close to 1")
    alpha = max(alpha, ALPHA_FLOOR)
    c = 0.0
    g = f.table.copy()
    for r in range(horizon + 1):
        c = max(c, float(np.max(np.abs(g))) / alpha**r)
        g = q @ g
    # Certificate re-check, pointwise.
    g = f.table.copy()
    for r in range(horizon + 1):
        if np.any(np.abs(g) > c * alpha**r * (1 + 1e-12) + 1e-300):
            raise AssertionError("ergodicity certificate failed its own re-check")
        g = q @ g
    return ErgodicityEstimate(alpha=alpha, c=c, horizon=horizon, mode=mode)


# ---------------------------------------------------------------------------
# Exact moments


def _pair_integral(kernel: FiniteKernel, g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """x -> sum_{y,z} p[x,y,z] g(y) h(z)."""
    return np.einsum("xyz,y,z->x", kernel.p, g, h)


def second_moment_generation(kernel: FiniteKernel, f: Functional, r: int) -> float:
    """Exact E[(generation-r average of f)^2] by tensor contractions.

    Decomposes the pair expectation over the generation of the last
    common ancestor: weight 2^(-p-1) for a split at generation p < r and
    2^(-r) for the diagonal, where the diagonal term integrates f^2.
    ``f`` must be centered against the stationary law of the lineage
    kernel (tolerance 1e-10).
    """
    if f.kind != "single" or f.table is None:
        raise ValueError("needs a single-state table functional")
    if r < 0:
        raise ValueError("generation index must be >= 0")
    q = mean_kernel(kernel)
    mu = stationary_distribution(q)
    if abs(float(mu @ f.table)) > 1e-10:
        raise ValueError("functional must be centered against the stationary law")
    # qf[j] = Q^j f ; nuq[p] = nu Q^p
    qf = [f.table.copy()]
    for _ in range(r):
        qf.append(q @ qf[-1])
    nuq = [kernel.nu.copy()]
    for _ in range(r):
        nuq.append(nuq[-1] @ q)
    total = 0.0
    for p in range(r):
        g = qf[r - p - 1]
        total += 2.0 ** (-p - 1) * float(nuq[p] @ _pair_integral(kernel, g, g))
    total += 2.0**-r * float(nuq[r] @ (f.table**2))
    return total


def brute_force_moment(kernel: FiniteKernel, f: Functional, r: int,
                       order: int, scope: str = "generation",
                       max_configs: int = 10_000_000) -> float:
    """Exact E[(average of f over the scope)^order] by full enumeration.

    Walks every configuration of the tree through generation ``r``
    (guarded at ``max_configs``), accumulating path probabilities
    incrementally.  Scope is ``"generation"`` (average over generation
    ``r``) or ``"tree"`` (average over the whole subtree).  This is the
    independent oracle against which the closed-form moment and the
    fourth-moment bounds are checked; it shares no code with them.
    """
    if f.kind != "single" or f.table is None:
        raise ValueError("needs a single-state table functional")
    if order not in (1, 2, 4):
        raise ValueError("order must be 1, 2 or 4")
    if scope not in ("generation", "tree"):
        raise ValueError("scope must be 'generation' or 'tree'")
    m = kernel.n_states
    size = 2 ** (r + 1) - 1
    if m**size > max_configs:
        raise ValueError(
            f"state space m^|tree| = {m}**{size} exceeds the enumeration guard"
        )
    ftab = f.table
    nu = kernel.nu
    p = kernel.p
    n_internal = 2**r - 1
    weight = 2**r if scope == "generation" else size
    in_scope_all = scope == "tree"

    values = np.empty(size, dtype=np.intp)
    total = 0.0

    def contrib(node: int, state: int) -> float:
        if in_scope_all or node >= 2**r:
            return float(ftab[state])
        return 0.0

    def walk(pair_idx: int, prob: float, acc: float) -> None:
        nonlocal total
        if pair_idx == n_internal:
            total += prob * (acc / weight) ** order
            return
        mother = values[pair_idx]
        base = 2 * (pair_idx + 1)  # node id of the left daughter
        for y in range(m):
            for z in range(m):
                pr = prob * p[mother, y, z]
                if pr == 0.0:
                    continue
                values[base - 1] = y
                values[base] = z
                walk(pair_idx + 1, pr,
                     acc + contrib(base, y) + contrib(base + 1, z))

    for x0 in range(m):
        if nu[x0] == 0.0:
            continue
        values[0] = x0
        walk(0, float(nu[x0]), contrib(1, x0))
    return total


def random_finite_kernel(m: int, rng: np.random.Generator) -> FiniteKernel:
    """A random valid kernel: Dirichlet tensor slices and initial law."""
    p = rng.dirichlet(np.ones(m * m), size=m).reshape(m, m, m)
    nu = rng.dirichlet(np.ones(m))
    # Renormalize exactly to survive the 1e-12 constructor check.
    p = p / p.reshape(m, -1).sum(axis=1)[:, None, None]
    nu = nu / nu.sum()
    return FiniteKernel(p=p, nu=nu)


def centered_functional(kernel: FiniteKernel, table) -> Functional:
    """Center a state table against the stationary law of the lineage kernel."""
    table = np.asarray(table, dtype=np.float64)
    mu = stationary_distribution(mean_kernel(kernel))
    return single_functional(table=table - float(mu @ table), name="centered")


# ---------------------------------------------------------------------------
# Ancestor-coincidence events


@dataclass(frozen=True)
class AncestorEventReport:
    """Exact probabilities of the ancestor-coincidence patterns.

    For four independent uniform draws from generation ``r``, classified
    by the partition their generation-``p`` ancestors induce:
    E0 all distinct, E1 exactly one pair, E2 two pairs, E3 three equal,
    E4 all equal.  ``products`` holds the joint probabilities of
    (one pair at p, all distinct at p+1) and (two pairs at p, all
    distinct at p+1); at ``p = r`` the second level is read as certain.
    ``quoted`` carries companion closed-form values quoted for the same
    quantities, for side-by-side comparison; the enumeration is the
    authority whenever the two disagree.
    """

    r: int
    p: int
    probabilities: dict[str, Fraction]
    products: dict[str, Fraction]
    quoted: dict[str, Fraction]
    total_count: int

    def comparison_rows(self):
        rows = []
        for key in ("E0", "E1", "E2", "E3", "E4"):
            quoted = self.quoted.get(key)
            enum = self.probabilities[key]
            rows.append((key, enum, quoted, quoted is not None and quoted == enum))
        for key in ("E1_then_split", "E2_then_split"):
            quoted = self.quoted.get(key)
            enum = self.products[key]
            rows.append((key, enum, quoted, quoted is not None and quoted == enum))
        return rows


def _partition_pattern(a, b, c, d) -> str:
    groups = {}
    for v in (a, b, c, d):
        groups[v] = groups.get(v, 0) + 1
    sizes = sorted(groups.values(), reverse=True)
    return {
        (1, 1, 1, 1): "E0",
        (2, 1, 1): "E1",
        (2, 2): "E2",
        (3, 1): "E3",
        (4,): "E4",
    }[tuple(sizes)]


def ancestor_event_probabilities(r: int, p: int) -> AncestorEventReport:
    """Count the ancestor-coincidence events exhaustively.

    Enumerates all ``2^(4r)`` quadruples of generation-``r`` nodes (as
    offsets), classifies their generation-``p`` ancestors, and counts the
    joint events with an all-distinct pattern one generation further
    down.  Exact rational output.
    """
    if not 2 <= p <= r <= 4:
        raise ValueError("need 2 <= p <= r <= 4 (enumeration guard)")
    n = 2**r
    counts = {k: 0 for k in ("E0", "E1", "E2", "E3", "E4")}
    prod_counts = {"E1_then_split": 0, "E2_then_split": 0}
    offsets = np.arange(n)
    anc_p = offsets >> (r - p)
    # At p = r the one-level-deeper pattern is certain by convention.
    next_is_certain = p == r
    anc_next = offsets if next_is_certain else offsets >> (r - p - 1)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    pat = _partition_pattern(
                        anc_p[i], anc_p[j], anc_p[k], anc_p[l]
                    )
                    counts[pat] += 1
                    if pat in ("E1", "E2"):
                        if next_is_certain or _partition_pattern(
                            anc_next[i], anc_next[j], anc_next[k], anc_next[l]
                        ) == "E0":
                            prod_counts[f"{pat}_then_split"] += 1
    total = n**4
    assert sum(counts.values()) == total
    quoted = {
        "E1": Fraction(3 * (2**p - 1), 2 ** (2 * p)),
        "E2": Fraction(6 * (2**p - 1), 2 ** (3 * p)),
        "E3": Fraction(4 * (2**p - 1), 2 ** (3 * p)),
        "E4": Fraction(6, 2 ** (3 * p)),
    }
    if next_is_certain:
        # The split at p + 1 is certain, so the product is the marginal.
        quoted["E1_then_split"] = quoted["E1"]
        quoted["E2_then_split"] = quoted["E2"]
    else:
        quoted["E1_then_split"] = Fraction(3, 2) * Fraction(2**p - 1, 2 ** (2 * p))
        quoted["E2_then_split"] = Fraction(6, 4) * Fraction(2**p - 1, 2 ** (3 * p))
    if p == 2:
        quoted["E0"] = Fraction(3, 32)
    return AncestorEventReport(
        r=r,
        p=p,
        probabilities={k: Fraction(v, total) for k, v in counts.items()},
        products={k: Fraction(v, total) for k, v in prod_counts.items()},
        quoted=quoted,
        total_count=total,
    )


# ---------------------------------------------------------------------------
# Bound evaluators


FAMILIES = (
    "moment2",
    "moment4",
    "probaineq",
    "expoineq",
    "estimator-dev-gaussian",
    "estimator-dev-bounded",
)
SCOPES = ("generation", "tree", "permuted-n")


@dataclass(frozen=True)
class BoundSpec:
    """Configuration of one bound family.

    ``alpha`` is the mixing rate; ``c``, ``c_prime``, ``c_dprime`` are
    the multiplicative constants (fit empirically, never derived);
    ``delta`` is the deviation level where the family uses one.
    """

    family: str
    scope: str = "tree"
    alpha: float = 0.5
    c: float = 1.0
    c_prime: float = 1.0
    c_dprime: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown bound family {self.family!r}")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}")
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if min(self.c, self.c_prime, self.c_dprime) <= 0:
            raise ValueError("constants must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


def _cmp(value: float, threshold: float) -> int:
    """-1 / 0 / +1 with the regime boundary tolerance."""
    if abs(value - threshold) <= REGIME_TOL:
        return 0
    return -1 if value < threshold else 1


def evaluate_bound_log(spec: BoundSpec, r: int | None = None,
                       n: int | None = None) -> float:
    """Natural log of the configured bound at generation r (or size n).

    For the permuted scope pass ``n``; the generation index is then
    ``floor(log2 n)``.  The boundary regime (middle branch) is selected
    when the relevant comparison lands within 1e-12 of its threshold.
    Log-space keeps the exponential families finite far beyond float
    underflow.
    """
    if (r is None) == (n is None):
        raise ValueError("pass exactly one of r, n")
    if spec.scope == "permuted-n":
        if n is None:
            raise ValueError("permuted scope needs n")
        if n < 1:
            raise ValueError("n must be >= 1")
        rr = int(n).bit_length() - 1
    else:
        if r is None:
            raise ValueError(f"scope {spec.scope!r} needs r")
        if r < 0:
            raise ValueError("r must be >= 0")
        rr = r
    alpha = max(spec.alpha, ALPHA_FLOOR)
    a2 = alpha * alpha
    side_a2 = _cmp(a2, 0.5)
    log_half = math.log(0.5)

    # log(rr) for the boundary-regime polynomial corrections; the displayed
    # forms vanish at r = 0, i.e. -inf in log space.
    log_rr = math.log(rr) if rr > 0 else -math.inf

    if spec.family in ("moment2", "probaineq", "moment4"):
        exponent = rr if spec.scope == "generation" else rr + 1
        power = 2 if spec.family in ("moment2", "probaineq") else 4
        if side_a2 < 0:
            log_shape = power / 2.0 * exponent * log_half
        elif side_a2 == 0:
            log_shape = power / 2.0 * (exponent * log_half + log_rr)
        else:
            log_shape = power * exponent * math.log(alpha)
        value = math.log(spec.c) + log_shape
        if spec.family == "probaineq":
            value -= 2.0 * math.log(spec.delta)
        return value

    if spec.family == "estimator-dev-gaussian":
        if side_a2 < 0:
            return math.log(spec.c) + 2 * (rr + 1) * log_half
        if side_a2 == 0:
            return math.log(spec.c) + 2 * log_rr + 2 * (rr + 1) * log_half
        return math.log(spec.c) + 4 * (rr + 1) * math.log(alpha)

    if spec.family == "estimator-dev-bounded":
        size = 2 ** (rr + 1) - 1
        if side_a2 == 0:
            return math.log(spec.c_dprime) - spec.c_prime * size / (rr + 1)
        if side_a2 > 0:
            return math.log(spec.c_dprime) - spec.c_prime * (1.0 / a2) ** (rr + 1)
        if _cmp(alpha, 0.5) == 0:
            return (math.log(spec.c_dprime) - spec.c_prime * size
                    + 2 * spec.c_prime * spec.delta * (rr + 1))
        if alpha < 0.5:
            return math.log(spec.c_dprime) - spec.c_prime * size
        raise ValueError(
            "bounded estimator bound has no branch for 1/2 < alpha < sqrt(2)/2"
        )

    # expoineq
    delta2 = spec.delta**2
    if spec.scope == "generation":
        size = 2**rr
        if side_a2 < 0:
            return -spec.c_prime * delta2 * size
        if side_a2 == 0:
            return -spec.c_prime * size / max(rr, 1)
        return -spec.c_prime * delta2 * (1.0 / alpha) ** (2 * rr)
    size = 2 ** (rr + 1) - 1 if spec.scope == "tree" else int(n)
    side_half = _cmp(alpha, 0.5)
    if side_half < 0:
        return math.log(spec.c_dprime) - spec.c_prime * delta2 * size
    if side_half == 0:
        return (-spec.c_prime * delta2 * size
                + 2 * spec.c_prime * spec.delta * (rr + 1))
    if side_a2 < 0:
        return math.log(2.0) - spec.c_prime * delta2 * size
    if side_a2 == 0:
        return -spec.c_prime * delta2 * size / (rr + 1)
    return -spec.c_prime * delta2 * (1.0 / a2) ** (rr + 1)


def evaluate_bound(spec: BoundSpec, r: int | None = None,
                   n: int | None = None) -> float:
    """Numeric value of the configured bound; see :func:`evaluate_bound_log`.

    Exponential-family values below the float range underflow to 0.0;
    use the log evaluator where that matters.
    """
    return math.exp(evaluate_bound_log(spec, r=r, n=n))


def bound_shape(spec: BoundSpec, r: int | None = None, n: int | None = None) -> float:
    """The bound with all multiplicative constants set to 1 (for fitting)."""
    from dataclasses import replace

    return evaluate_bound(replace(spec, c=1.0, c_dprime=1.0), r=r, n=n)


# ---------------------------------------------------------------------------
# Speed sequences for moderate-deviation scalings


@dataclass(frozen=True)
class SpeedSequence:
    """The scaling b_n = n^gamma together with a validity report.

    ``setting`` is ``"hh2"`` (requires b_n growing past sqrt(n) but
    below sqrt(n log n)) or ``"h1-with-alpha"`` (regime-dependent decay
    conditions driven by the mixing rate).  The report evaluates the
    relevant ratios on a dyadic horizon and records monotone-tail
    diagnostics; the asymptotic statements themselves are not decidable
    numerically and are not claimed.
    """

    gamma: float
    setting: str
    alpha: float | None = None
    horizon: int = 2**20

    def __post_init__(self):
        if not 0.5 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (1/2, 1)")
        if self.setting not in ("hh2", "h1-with-alpha"):
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.setting == "h1-with-alpha":
            if self.alpha is None or not 0 < self.alpha < 1:
                raise ValueError("setting h1-with-alpha needs alpha in (0, 1)")

    def at(self, n) -> np.ndarray:
        return np.asarray(n, dtype=np.float64) ** self.gamma

    def report(self) -> dict:
        ns = 2 ** np.arange(3, int(math.log2(self.horizon)) + 1)
        b = self.at(ns)
        out = {"gamma": self.gamma, "setting": self.setting, "n_grid": ns.tolist()}
        growth = b / np.sqrt(ns)
        out["b_over_sqrt_n_increasing"] = bool(np.all(np.diff(growth) > 0))
        if self.setting == "hh2":
            ratio = b / np.sqrt(ns * np.log(ns))
            out["ratio"] = ratio.tolist()
            out["ratio_name"] = "b_n / sqrt(n log n)"
            out["tail_decreasing"] = bool(np.all(np.diff(ratio[len(ratio) // 2 :]) < 0))
        else:
            a2 = self.alpha**2
            side = _cmp(a2, 0.5)
            rn = np.floor(np.log2(ns))
            if side < 0:
                ratio = b / ns
                out["ratio_name"] = "b_n / n"
            elif side == 0:
                ratio = b * np.log(ns) / ns
                out["ratio_name"] = "b_n log n / n"
            else:
                ratio = b * self.alpha ** (rn + 1) / np.sqrt(ns)
                out["ratio_name"] = "b_n alpha^(r_n + 1) / sqrt(n)"
            out["ratio"] = ratio.tolist()
            out["tail_decreasing"] = bool(np.all(np.diff(ratio[len(ratio) // 2 :]) < 0))
        out["valid"] = out["b_over_sqrt_n_increasing"] and out["tail_decreasing"]
        return out


def speed_sequence(gamma: float, setting: str, alpha: float | None = None,
                   horizon: int = 2**20) -> SpeedSequence:
    """Validated polynomial speed sequence b_n = n^gamma."""
    return SpeedSequence(gamma=gamma, setting=setting, alpha=alpha, horizon=horizon)
