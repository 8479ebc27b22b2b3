"""IsoFLOP analysis and compute scaling laws.

Per compute budget, validation loss is fit as a quadratic in ``log N``; the
vertex gives the loss-optimal size ``N*`` and loss ``L*``.  The optima
across budgets are regressed as ``log L* = alpha log C + beta``.  Natural
logarithms throughout: the base cancels in ``alpha`` and rescales ``beta``.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class RunRecord:
    N: float
    D: float
    loss: float
    C: float | None = None

    def __post_init__(self):
        for name in ("N", "D", "loss"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.N <= 0 or self.D <= 0:
            raise ValueError("N and D must be positive")
        if not self.loss > 0:
            raise ValueError(f"loss must be positive, got {self.loss}")
        c = 6.0 * self.N * self.D
        if self.C is None:
            object.__setattr__(self, "C", c)
        else:
            object.__setattr__(self, "C", float(self.C))
        if abs(self.C - c) > 1e-6 * c:
            raise ValueError(f"C={self.C} disagrees with 6*N*D={c}")


@dataclass(frozen=True)
class QuadFit:
    """``loss ~ a (log N)**2 + b log N + c``."""

    a: float
    b: float
    c: float
    rss: float
    n_points: int

    @property
    def degenerate(self) -> bool:
        return not self.a > 0

    @property
    def log_n_opt(self) -> float:
        return -self.b / (2 * self.a)

    @property
    def n_opt(self) -> float:
        if self.degenerate:
            return math.nan
        return math.exp(self.log_n_opt)

    @property
    def loss_opt(self) -> float:
        if self.degenerate:
            return math.nan
        return self.c - self.b**2 / (4 * self.a)

    def __call__(self, N):
        x = np.log(np.asarray(N, dtype=np.float64))
        return self.a * x**2 + self.b * x + self.c


@dataclass(frozen=True)
class PowerLawFit:
    """``loss(C) = exp(beta) * C**alpha``."""

    alpha: float
    beta: float

    def __call__(self, C):
        return np.exp(self.beta) * np.asarray(C, dtype=np.float64) ** self.alpha

    def compute_for_loss(self, loss_level: float) -> float:
        if not self.alpha < 0:
            raise ValueError("loss level unreachable: alpha must be negative")
        if loss_level <= 0:
            raise ValueError("loss level must be positive")
        return math.exp((math.log(loss_level) - self.beta) / self.alpha)


def quad_fit(points) -> QuadFit:
    """Least-squares quadratic of loss against ``log N``.

    Args:
        points: iterable of ``(N, loss)`` pairs with at least 3 distinct ``N``.

    A non-positive leading coefficient is returned with ``degenerate=True``
    rather than extrapolated.
    """
    pts = np.asarray(list(points), dtype=np.float64).reshape(-1, 2)
    if np.any(pts[:, 0] <= 0):
        raise ValueError("model sizes must be positive")
    if np.unique(pts[:, 0]).size < 3:
        raise ValueError("quad_fit needs at least 3 distinct model sizes")
    x = np.log(pts[:, 0])
    A = np.column_stack([x**2, x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, pts[:, 1], rcond=None)
    resid = pts[:, 1] - A @ coef
    return QuadFit(float(coef[0]), float(coef[1]), float(coef[2]), float(resid @ resid), len(pts))


def power_law_fit(pairs) -> PowerLawFit:
    """Ordinary least squares of ``log L*`` on ``log C``."""
    arr = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    if len(arr) < 2:
        raise ValueError("power_law_fit needs at least 2 budgets")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("compute budgets and losses must be positive and finite")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    A = np.column_stack([x, np.ones_like(x)])
    (alpha, beta), *_ = np.linalg.lstsq(A, y, rcond=None)
    return PowerLawFit(float(alpha), float(beta))


def compute_gap(fit_a: PowerLawFit, fit_b: PowerLawFit, loss_level: float) -> float:
    """Ratio ``C_b / C_a`` of compute needed by each fit to reach ``loss_level``."""
    if not (fit_a.alpha < 0 and fit_b.alpha < 0):
        raise ValueError("both fits need alpha < 0 for a reachable loss level")
    la = (math.log(loss_level) - fit_a.beta) / fit_a.alpha
    lb = (math.log(loss_level) - fit_b.beta) / fit_b.alpha
    return math.exp(lb - la)


@dataclass(frozen=True)
class BudgetOptimum:
    C: float
    fit: QuadFit

    def to_dict(self) -> dict:
        return {"C": self.C, "a": self.fit.a, "b": self.fit.b, "c": self.fit.c,
                "rss": self.fit.rss, "n_points": self.fit.n_points,
                "degenerate": self.fit.degenerate,
                "N_opt": None if self.fit.degenerate else self.fit.n_opt,
                "loss_opt": None if self.fit.degenerate else self.fit.loss_opt}


def group_by_budget(records, rel_tol: float = 1e-6) -> dict:
    """Bucket runs whose compute agrees to ``rel_tol``; keys are the first C seen."""
    groups: dict[float, list] = defaultdict(list)
    keys: list[float] = []
    for r in records:
        for k in keys:
            if abs(r.C - k) <= rel_tol * k:
                groups[k].append(r)
                break
        else:
            keys.append(r.C)
            groups[r.C].append(r)
    return dict(groups)


def isoflop_analysis(records) -> tuple[list, PowerLawFit | None]:
    """Quadratic fit per budget, then the power law over non-degenerate optima."""
    optima = []
    for C, runs in sorted(group_by_budget(records).items()):
        if len({r.N for r in runs}) < 3:
            continue
        optima.append(BudgetOptimum(C, quad_fit([(r.N, r.loss) for r in runs])))
    valid = [(o.C, o.fit.loss_opt) for o in optima if not o.fit.degenerate]
    law = power_law_fit(valid) if len(valid) >= 2 else None
    return optima, law


def synthetic_isoflop_records(budgets, sizes_per_budget: int = 7, alpha: float = -0.1,
                              beta: float = 2.0, n_opt_scale: float = 1.0,
                              n_opt_exponent: float = 0.5, curvature: float = 0.05,
                              noise: float = 0.0, rng: np.random.Generator | None = None):
    """Runs whose per-budget losses are parabolas in ``log N`` with power-law optima.

    Optimal sizes follow ``n_opt_scale * C**n_opt_exponent``; sizes are spread
    evenly in ``log N`` over ``+/- 1.5`` around the optimum.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    out = []
    for C in budgets:
        log_nopt = math.log(n_opt_scale) + n_opt_exponent * math.log(C)
        lstar = math.exp(beta) * C**alpha
        for dx in np.linspace(-1.5, 1.5, sizes_per_budget):
            N = math.exp(log_nopt + dx)
            loss = lstar + curvature * dx**2
            if noise:
                loss *= 1.0 + noise * rng.standard_normal()
            out.append(RunRecord(N, C / (6.0 * N), loss))
    return out


def read_runs_csv(path_or_text) -> dict:
    """Parse run logs with columns ``N, D, loss`` (optional ``family``).

    Returns a mapping family -> list of :class:`RunRecord`.  Errors carry the
    offending line number.
    """
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text()
    reader = csv.DictReader(io.StringIO(text))
    need = {"N", "D", "loss"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ValueError(f"line 1: header must contain columns {sorted(need)}")
    extra = set(reader.fieldnames) - need - {"family", "C"}
    if extra:
        raise ValueError(f"line 1: unknown columns {sorted(extra)}")
    families: dict[str, list] = defaultdict(list)
    for row in reader:
        lineno = reader.line_num
        try:
            C = float(row["C"]) if row.get("C") not in (None, "") else None
            rec = RunRecord(float(row["N"]), float(row["D"]), float(row["loss"]), C)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        families[row.get("family") or "default"].append(rec)
    if not families:
        raise ValueError("no runs found")
    return dict(families)


def optima_csv(optima) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["C", "N_opt", "loss_opt", "degenerate"])
    for o in optima:
        d = o.to_dict()
        cells = [float(o.C), d["N_opt"], d["loss_opt"]]
        w.writerow(["" if v is None else repr(v) for v in cells] + [d["degenerate"]])
    return buf.getvalue()


def fit_report(families: dict) -> dict:
    """Fits per family plus pairwise compute gaps at a few shared loss levels."""
    out = {"families": {}, "gaps": []}
    laws = {}
    for name, records in sorted(families.items()):
        optima, law = isoflop_analysis(records)
        out["families"][name] = {
            "budgets": [o.to_dict() for o in optima],
            "power_law": None if law is None else asdict(law),
        }
        if law is not None:
            laws[name] = (law, [o.fit.loss_opt for o in optima if not o.fit.degenerate])
    names = sorted(laws)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            (la, la_loss), (lb, lb_loss) = laws[a], laws[b]
            if not (la.alpha < 0 and lb.alpha < 0):
                continue
            pool = np.asarray(la_loss + lb_loss)
            levels = [float(np.min(pool)), float(np.exp(np.log(pool).mean())), float(np.max(pool))]
            out["gaps"].append({"reference": a, "other": b, "loss_levels": levels,
                                "ratio": [compute_gap(la, lb, v) for v in levels]})
    return out
