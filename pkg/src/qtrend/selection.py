"""Choosing the penalty of each quantile level.

Every level is first fitted with one shared penalty on a grid; each level
then takes the grid value minimising its criterion, and the levels are
refitted together with the chosen vector. All criteria are minimised; ties
go to the larger penalty (the smoother fit).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import json
import math

import numpy as np
from scipy.special import gammaln

from .errors import SelectionError
from .solver import DEFAULT_K, QuantileSpec, WeightMask, check_loss, solve_block

CRITERIA = ("sic", "bic", "ebic", "validation")
GAMMA_EBIC = 1.0
HOLDOUT_STRIDE = 5
TIE_RTOL = 1e-6


@dataclass(frozen=True)
class LambdaGrid:
    values: tuple

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if v.size == 0:
            raise ValueError("lambda grid is empty")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("lambda grid values must be finite and > 0")
        v = np.unique(v)
        object.__setattr__(self, "values", tuple(v.tolist()))

    @classmethod
    def default(cls, n, size=20):
        """``size`` log-spaced values spanning [1e-2, 1e2] * n / 5."""
        return cls(np.logspace(-2.0, 2.0, int(size)) * n / 5.0)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class CriterionValue:
    criterion: str
    lam: float
    tau: float
    value: float
    nu: int
    degenerate: bool = False


def _sigma(tau):
    return (1.0 - abs(1.0 - 2.0 * tau)) / 2.0


def sic(y, theta_col, tau, nu, n=None, mask=None):
    """log of the mean check loss plus nu log(n) / (2n); -inf when the loss is zero."""
    if nu < 0:
        raise ValueError("nu must be >= 0")
    y = np.asarray(y, dtype=float)
    n = _count(y, mask) if n is None else int(n)
    loss = check_loss(_resid(y, theta_col, mask), tau, mask) / n
    if loss <= 0.0:
        return -math.inf
    return math.log(loss) + nu * math.log(n) / (2.0 * n)


def bic_scaled(y, theta_col, tau, nu, n=None, mask=None):
    """(2 / sigma) times the check loss plus nu log(n), sigma = (1 - |1 - 2 tau|) / 2."""
    if nu < 0:
        raise ValueError("nu must be >= 0")
    y = np.asarray(y, dtype=float)
    n = _count(y, mask) if n is None else int(n)
    loss = check_loss(_resid(y, theta_col, mask), tau, mask)
    return 2.0 / _sigma(tau) * loss + nu * math.log(n)


def log_binom(p, k):
    return float(gammaln(p + 1.0) - gammaln(k + 1.0) - gammaln(p - k + 1.0))


def ebic(y, theta_col, tau, nu, n=None, k=DEFAULT_K, mask=None, gamma_ebic=GAMMA_EBIC):
    """Scaled BIC plus 2 gamma_ebic log C(P, nu) with P = n - k - 1."""
    y = np.asarray(y, dtype=float)
    length = y.size
    P = length - k - 1
    if not 0 <= nu <= P:
        raise ValueError(f"nu={nu} outside [0, P={P}]")
    return bic_scaled(y, theta_col, tau, nu, n, mask) + 2.0 * gamma_ebic * log_binom(P, nu)


def _count(y, mask):
    if mask is None:
        return y.size
    w = mask.weights if isinstance(mask, WeightMask) else np.asarray(mask)
    return int(np.count_nonzero(w))


def _resid(y, theta_col, mask):
    r = y - np.asarray(theta_col, dtype=float)
    if mask is not None:
        w = mask.weights if isinstance(mask, WeightMask) else np.asarray(mask)
        r = np.where(w > 0, r, 0.0)
    return r


def holdout_mask(n, stride=HOLDOUT_STRIDE, mask=None):
    """Validation mask keeping all but every ``stride``-th observation."""
    w = np.ones(int(n))
    w[stride - 1::stride] = 0.0
    if mask is not None:
        w *= mask.weights if isinstance(mask, WeightMask) else np.asarray(mask, dtype=float)
    return WeightMask(w)


def validation_error(y, spec, lam=None, holdout=None, controls=None, fit=None):
    """Check loss on the held-out set V (zeros of ``holdout``) of a fit that never saw V.

    Returns one value per quantile level. ``fit`` reuses an existing masked fit.
    """
    y = np.asarray(y, dtype=float)
    if holdout is None:
        holdout = holdout_mask(y.size)
    v = holdout.weights == 0
    v &= np.isfinite(y)
    if not np.any(v):
        raise SelectionError("validation set is empty")
    if lam is not None:
        spec = spec.with_lambdas(np.broadcast_to(np.asarray(lam, dtype=float), (spec.J,)))
    if fit is None:
        fit = solve_block(np.where(np.isfinite(y), y, 0.0), spec, holdout, controls=controls)
    return np.array([check_loss(y[v] - fit.theta[v, j], tau) for j, tau in enumerate(spec.taus)])


@dataclass
class SelectionReport:
    criterion: str
    taus: tuple
    grid: tuple
    k: int
    table: list = field(default_factory=list)
    chosen: tuple = ()
    nu: tuple = ()

    def values(self):
        """len(grid) x J matrix of criterion values."""
        out = np.full((len(self.grid), len(self.taus)), np.nan)
        gi = {g: i for i, g in enumerate(self.grid)}
        ti = {t: j for j, t in enumerate(self.taus)}
        for cv in self.table:
            out[gi[cv.lam], ti[cv.tau]] = cv.value
        return out

    def to_dict(self):
        d = asdict(self)
        for row in d["table"]:
            if math.isinf(row["value"]):
                row["value"] = "-inf" if row["value"] < 0 else "inf"
        return d

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        table = []
        for row in d.pop("table"):
            if isinstance(row["value"], str):
                row["value"] = float(row["value"])
            table.append(CriterionValue(**row))
        return cls(table=table, **{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _pick(values, grid):
    """Index of the smallest non-sentinel value, ties toward the larger grid value.

    Values within TIE_RTOL (relative, floor 1) of the minimum count as ties:
    fits that agree up to solver accuracy must not be told apart by round-off.
    """
    ok = [i for i in range(len(grid)) if not (math.isinf(values[i]) and values[i] < 0)]
    if not ok:
        return None
    low = min(values[i] for i in ok)
    cut = low + TIE_RTOL * max(1.0, abs(low))
    return max(i for i in ok if values[i] <= cut)


def select_lambdas(y, taus, grid=None, criterion="ebic", k=DEFAULT_K, mask=None, controls=None,
                   holdout=None, workers=None):
    """Per-level penalties by grid search; returns (SelectionReport, refit FitResult)."""
    criterion = criterion.lower()
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    if mask is None and np.any(~np.isfinite(y)):
        mask = WeightMask.from_missing(y)
    yf = np.where(np.isfinite(y), y, 0.0)
    grid = grid if isinstance(grid, LambdaGrid) else (
        LambdaGrid.default(n) if grid is None else LambdaGrid(grid))
    base = QuantileSpec(taus, (grid.values[0],), k)
    J = base.J
    fit_mask = mask
    if criterion == "validation":
        holdout = holdout or holdout_mask(n, mask=mask)
        fit_mask = holdout

    def fit(lam):
        return solve_block(yf, base.with_lambdas([lam] * J), fit_mask, controls=controls)

    if workers == 1:
        fits = [fit(lam) for lam in grid.values]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(fit, grid.values))

    report = SelectionReport(criterion=criterion, taus=base.taus, grid=grid.values, k=base.k)
    values = np.empty((len(grid), J))
    for i, (lam, res) in enumerate(zip(grid.values, fits)):
        held = validation_error(y, base, holdout=holdout, fit=res) if criterion == "validation" else None
        for j, tau in enumerate(base.taus):
            nu = res.knots[j]
            col = res.theta[:, j]
            if criterion == "sic":
                v = sic(yf, col, tau, nu, mask=mask)
            elif criterion == "bic":
                v = bic_scaled(yf, col, tau, nu, mask=mask)
            elif criterion == "ebic":
                v = ebic(yf, col, tau, nu, k=base.k, mask=mask)
            else:
                v = float(held[j])
            values[i, j] = v
            report.table.append(CriterionValue(criterion, lam, tau, float(v), int(nu),
                                               degenerate=bool(math.isinf(v))))

    chosen = []
    for j in range(J):
        best = _pick(values[:, j], grid.values)
        if best is None:
            flagged = [g for g, v in zip(grid.values, values[:, j]) if math.isinf(v)]
            raise SelectionError(f"every criterion value is degenerate at tau={base.taus[j]}; "
                                 f"flagged lambdas: {flagged}")
        chosen.append(grid.values[best])
    spec = base.with_lambdas(chosen)
    refit = solve_block(yf, spec, mask, controls=controls)
    report.chosen = tuple(chosen)
    report.nu = tuple(int(v) for v in refit.knots)
    return report, refit
