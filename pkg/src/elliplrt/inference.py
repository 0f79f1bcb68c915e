"""Maximum-likelihood fitting and standard/adjusted likelihood ratio tests.

Fitting maximizes the log-likelihood with a damped Newton iteration on
internally transformed coordinates (variance-type parameters move on the
log scale, everything else on the natural scale), using the analytic
score and observed information; an L-BFGS-B stage plus jittered restarts
back it up when Newton stalls.  Reported quantities (theta, score,
information, standard errors) are always on the natural scale.

Tests: for interest block psi of dimension q,

    LR   = 2 (l-hat - l-tilde)                       ~ chi2_q
    r    = sign(psi-hat - psi0) sqrt(LR)  (q = 1)    ~ N(0, 1)
    r*   = r - log(gamma) / r
    LR*  = LR (1 - log(rho)/LR)^2
    LR** = LR - 2 log(rho)

where gamma and rho are assembled from sample-space derivatives taken
through the approximate ancillary (see the ancillary module):

    gamma = |J-hat|^(1/2) |U'~|^(-1) |J~_ww|^(1/2)
            r / [(l-hat' - l-tilde')' (U'~)^(-1)]_psi

    rho   = |J-hat|^(1/2) |U'~|^(-1) |J~_ww|^(1/2) |JJ_ww|^(-1/2) |JJ|^(1/2)
            (U~' JJ^(-1) U~)^(q/2) / [LR^(q/2-1) (l-hat' - l-tilde')' (U'~)^(-1) U~]

with JJ the double-tilde information.  Determinants enter through their
absolute values; a negative raw determinant is surfaced as a note.
Degenerate situations (|r| below 1e-4, LR below 1e-8, nonpositive ratio
terms) skip the adjustment (factor 1) and set a flag rather than
producing unusable output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.special import gammaincc, ndtr

from .ancillary import AncillaryBundle, SampleSpaceDerivs, build_ancillary, doubletilde_info, sample_space_gradients
from .families import EllipticalFamily
from .likelihood import score_info
from .model import Dataset, ModelEval, ModelSpec, NonSPDError, evaluate

__all__ = [
    "FitError",
    "StageError",
    "FitResult",
    "Hypothesis",
    "TestReport",
    "fit",
    "lr_and_r",
    "gamma_factor",
    "rho_factor",
    "adjusted_statistics",
    "p_values",
    "run_test",
]

R_DEGENERATE = 1e-4
LR_DEGENERATE = 1e-8
BOUNDARY_EPS = 1e-10
# adjustment factors within rounding noise of 1 are treated as exactly 1,
# so exact cases (Gaussian, known Sigma) report identical adjusted statistics
FACTOR_SNAP = 1e-10


class FitError(RuntimeError):
    """No usable starting point: the model could not be evaluated anywhere."""


class StageError(RuntimeError):
    """A test-pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, detail):
        self.stage = stage
        super().__init__(f"stage {stage!r}: {detail}")


@dataclass(frozen=True)
class Hypothesis:
    """Interest block, hypothesized value and tail direction.

    ``sided``: "two" for psi = psi0 against psi != psi0; "lower" for the
    alternative psi < psi0; "upper" for psi > psi0.  One-sided tests
    require a scalar interest parameter.
    """

    interest_indices: tuple
    psi0: np.ndarray
    sided: str = "two"

    def __post_init__(self):
        idx = tuple(int(i) for i in self.interest_indices)
        if len(idx) < 1 or len(set(idx)) != len(idx):
            raise ValueError("interest indices must be a nonempty set of distinct indices")
        object.__setattr__(self, "interest_indices", idx)
        object.__setattr__(self, "psi0", np.atleast_1d(np.asarray(self.psi0, dtype=float)))
        if self.psi0.size != len(idx):
            raise ValueError("psi0 length must match the number of interest indices")
        if self.sided not in ("two", "lower", "upper"):
            raise ValueError(f"sided must be 'two', 'lower' or 'upper', got {self.sided!r}")
        if self.sided != "two" and len(idx) != 1:
            raise ValueError("one-sided tests require a scalar interest parameter")

    @property
    def q(self) -> int:
        return len(self.interest_indices)


@dataclass
class FitResult:
    """Outcome of a maximum-likelihood fit (natural parameter scale)."""

    theta: np.ndarray
    loglik: float
    score_norm: float
    info: np.ndarray
    converged: bool
    iterations: int
    restricted: bool
    stderr: np.ndarray
    diagnostics: list = field(default_factory=list)
    restriction: tuple | None = None
    eval_: ModelEval | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _to_internal(theta_free, is_log):
    x = theta_free.copy()
    x[is_log] = np.log(theta_free[is_log])
    return x


def _from_internal(x, is_log):
    t = x.copy()
    t[is_log] = np.exp(np.minimum(x[is_log], 700.0))
    return t


class _Objective:
    """Evaluation cache for one fit: natural theta from free internal coords."""

    def __init__(self, model, family, data, template, free):
        self.model, self.family, self.data = model, family, data
        self.template = template.copy()
        self.free = free
        self.is_log = np.array([j in model.positive for j in free], dtype=bool)

    def theta_of(self, x):
        theta = self.template.copy()
        theta[self.free] = _from_internal(x, self.is_log)
        return theta

    def eval(self, x, want_info=True):
        theta = self.theta_of(x)
        ev = evaluate(self.model, theta, self.data)
        si = score_info(self.family, ev, want_info=want_info)
        return theta, ev, si

    def scale(self, x):
        s = np.ones_like(x)
        s[self.is_log] = _from_internal(x, self.is_log)[self.is_log]
        return s


def _newton(obj: _Objective, x0, score_tol, step_tol, max_iter):
    """Damped Newton ascent; returns (x, ev, si, converged, iterations)."""
    x = x0.copy()
    theta, ev, si = obj.eval(x)
    iters = 0
    converged = False
    if x.size == 0:
        return x, ev, si, True, 0
    for _ in range(max_iter):
        Uf = si.score[obj.free]
        tol = score_tol * (1.0 + abs(si.loglik))
        if np.max(np.abs(Uf)) < tol:
            converged = True
            break
        s = obj.scale(x)
        g = Uf * s  # gradient of the log-likelihood in internal coords
        H = s[:, None] * si.info[np.ix_(obj.free, obj.free)] * s[None, :]
        H[np.diag_indices_from(H)] -= np.where(obj.is_log, g, 0.0)
        # modified Cholesky: ridge until the Newton system is PD
        tau = 0.0
        base = max(np.max(np.abs(np.diag(H))), 1.0)
        for _ in range(60):
            try:
                L = np.linalg.cholesky(H + tau * np.eye(H.shape[0]))
                break
            except np.linalg.LinAlgError:
                tau = max(2.0 * tau, 1e-10 * base)
        else:
            break
        d = _cho_solve(L, g)
        slope = float(g @ d)
        if not np.isfinite(slope) or slope <= 0:
            break
        t = 1.0
        accepted = False
        for _ in range(40):
            try:
                theta2, ev2, si2 = obj.eval(x + t * d)
            except NonSPDError:
                t *= 0.5
                continue
            ok = np.isfinite(si2.loglik) and np.all(np.isfinite(si2.score[obj.free]))
            if ok and si2.loglik >= si.loglik + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        iters += 1
        if not accepted:
            break
        rel_step = np.max(np.abs(t * d)) / max(1.0, np.max(np.abs(x)))
        x = x + t * d
        theta, ev, si = theta2, ev2, si2
        if rel_step < step_tol:
            Uf = si.score[obj.free]
            converged = bool(np.max(np.abs(Uf)) < score_tol * (1.0 + abs(si.loglik)))
            break
    return x, ev, si, converged, iters


def _cho_solve(L, b):
    y = scipy.linalg.solve_triangular(L, b, lower=True)
    return scipy.linalg.solve_triangular(L.T, y, lower=False)


def _lbfgs(obj: _Objective, x0, maxiter=300):
    def fun(x):
        try:
            _, _, si = obj.eval(x, want_info=False)
        except NonSPDError:
            return 1e15, np.zeros_like(x)
        g = si.score[obj.free] * obj.scale(x)
        if not (np.isfinite(si.loglik) and np.all(np.isfinite(g))):
            return 1e15, np.zeros_like(x)
        return -si.loglik, -g

    res = scipy.optimize.minimize(
        fun, x0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter, "ftol": 1e-14, "gtol": 1e-10}
    )
    return res.x, int(res.nit)


def fit(
    model: ModelSpec,
    family: EllipticalFamily,
    data: Dataset,
    restriction: tuple | None = None,
    start=None,
    *,
    score_tol: float = 1e-8,
    step_tol: float = 1e-10,
    max_iter: int = 500,
    restarts: int = 5,
) -> FitResult:
    """Maximize the log-likelihood, optionally with the interest block frozen.

    ``restriction`` is (interest_indices, psi0); the psi block is pinned
    at psi0 and only the nuisance block is optimized.  Convergence
    requires the free-block score to satisfy
    ||U||_inf < score_tol (1 + |l|).  Non-convergence is reported in the
    result, never silently; a FitError is raised only when no starting
    point is evaluable at all.
    """
    p = model.p
    if not p < data.n:
        raise ValueError(f"model has p={p} parameters but only n={data.n} observations (need p < n)")
    template = np.zeros(p)
    if restriction is not None:
        interest = tuple(int(i) for i in restriction[0])
        psi0 = np.atleast_1d(np.asarray(restriction[1], dtype=float))
        fixed = set(interest)
        free = np.array([j for j in range(p) if j not in fixed], dtype=int)
        template[list(interest)] = psi0
    else:
        interest, psi0 = (), None
        free = np.arange(p)

    base_start = np.asarray(start, dtype=float).copy() if start is not None else model.start(data)
    if base_start.shape != (p,):
        raise ValueError(f"start has shape {base_start.shape}, expected ({p},)")
    free_set = set(free.tolist())
    for j in model.positive:
        if j in free_set and base_start[j] <= 0:
            base_start[j] = 1e-4

    rng = np.random.default_rng(0x5EED)  # deterministic jitter stream
    best = None
    total_iters = 0
    for attempt in range(restarts + 1):
        theta0 = base_start.copy()
        if attempt > 0:
            for j in free:
                if j in model.positive:
                    theta0[j] = theta0[j] * math.exp(0.25 * rng.standard_normal())
                else:
                    theta0[j] = theta0[j] + 0.2 * max(1.0, abs(theta0[j])) * rng.standard_normal()
        theta0[list(interest)] = psi0 if psi0 is not None else theta0[list(interest)]
        obj = _Objective(model, family, data, template, free)
        x0 = _to_internal(theta0[free], obj.is_log)
        try:
            x, ev, si, converged, iters = _newton(obj, x0, score_tol, step_tol, max_iter)
        except NonSPDError:
            continue
        total_iters += iters
        if not converged and free.size:
            x, lb_iters = _lbfgs(obj, x)
            total_iters += lb_iters
            try:
                x, ev, si, converged, iters = _newton(obj, x, score_tol, step_tol, max_iter)
                total_iters += iters
            except NonSPDError:
                continue
        cand = (converged, si.loglik, x, ev, si, obj)
        if best is None or (cand[0], cand[1]) > (best[0], best[1]):
            best = cand
        if converged:
            break
    if best is None:
        raise FitError("every starting point failed model evaluation (non-SPD scatter)")

    converged, _, x, ev, si, obj = best
    theta = obj.theta_of(x)
    Uf = si.score[obj.free] if obj.free.size else np.zeros(0)
    score_norm = float(np.max(np.abs(Uf))) if Uf.size else 0.0

    diagnostics = list(dict.fromkeys(f"near_zero_residual obs={i}" for i in si.clamped))
    stderr = np.full(p, np.nan)
    try:
        L = np.linalg.cholesky(si.info)
        stderr = np.sqrt(np.diag(_cho_inv(L)))
    except np.linalg.LinAlgError:
        diagnostics.append("nonpd_info")
    if any(theta[j] < BOUNDARY_EPS for j in model.positive if j in free_set):
        diagnostics.append("boundary_fit")

    return FitResult(
        theta=theta,
        loglik=float(si.loglik),
        score_norm=score_norm,
        info=si.info,
        converged=bool(converged),
        iterations=total_iters,
        restricted=restriction is not None,
        stderr=stderr,
        diagnostics=diagnostics,
        restriction=(interest, psi0) if restriction is not None else None,
        eval_=ev,
    )


def _cho_inv(L):
    p = L.shape[0]
    return _cho_solve(L, np.eye(p))


# ---------------------------------------------------------------------------
# Test statistics
# ---------------------------------------------------------------------------


def lr_and_r(fit_hat: FitResult, fit_tilde: FitResult, interest):
    """Likelihood ratio statistic and, for scalar interest, its signed root."""
    if not (fit_hat.converged and fit_tilde.converged):
        raise ValueError("both fits must have converged")
    LR = 2.0 * (fit_hat.loglik - fit_tilde.loglik)
    LR = max(LR, 0.0)
    r = None
    if len(interest) == 1:
        j = interest[0]
        psi0 = fit_tilde.theta[j]
        r = math.copysign(math.sqrt(LR), fit_hat.theta[j] - psi0) if LR > 0 else 0.0
    return LR, r


def _logabsdet(M: np.ndarray, notes: list, label: str) -> float:
    if M.size == 0:
        return 0.0  # empty-product convention
    sign, lad = np.linalg.slogdet(M)
    if sign == 0 or not np.isfinite(lad):
        raise StageError("adjustment", f"singular matrix in {label}")
    if sign < 0:
        notes.append(f"negative raw determinant: {label}")
    return float(lad)


def _curvature_scale(J_hat: np.ndarray) -> np.ndarray:
    """Per-parameter scale sqrt(diag(J-hat)) for conditioning.

    gamma and rho are exactly invariant under diagonal reparameterization,
    so evaluating their ingredients in unit-curvature coordinates changes
    nothing mathematically while keeping determinants and solves
    well-conditioned when parameter scales differ by orders of magnitude.
    """
    d = np.diag(J_hat)
    if np.all(np.isfinite(d)) and np.all(d > 0):
        return np.sqrt(d)
    return np.ones(J_hat.shape[0])


def gamma_factor(
    fit_hat: FitResult,
    fit_tilde: FitResult,
    bundle: AncillaryBundle,
    derivs: SampleSpaceDerivs,
    interest,
):
    """Barndorff-Nielsen correction factor gamma (scalar interest only).

    Returns (gamma, flags, notes); degenerate cases come back as
    gamma = 1 with an explanatory flag.
    """
    if len(interest) != 1:
        raise ValueError("gamma is defined for a scalar interest parameter")
    flags: set = set()
    notes: list = []
    LR, r = lr_and_r(fit_hat, fit_tilde, interest)
    if abs(r) < R_DEGENERATE:
        return 1.0, {"near_zero_r"}, notes
    p = fit_hat.theta.size
    nuis = [j for j in range(p) if j not in set(interest)]
    s = _curvature_scale(fit_hat.info)
    ss = np.outer(s, s)
    lad = (
        0.5 * _logabsdet(fit_hat.info / ss, notes, "J_hat")
        - _logabsdet(derivs.U_tilde_prime / ss, notes, "U_tilde_prime")
        + 0.5 * _logabsdet(fit_tilde.info[np.ix_(nuis, nuis)] / ss[np.ix_(nuis, nuis)], notes, "J_tilde_nuisance")
    )
    diff = (derivs.ell_hat_prime - derivs.ell_tilde_prime) / s
    try:
        vec = np.linalg.solve(derivs.U_tilde_prime.T / ss, diff)
    except np.linalg.LinAlgError:
        raise StageError("adjustment", "singular U_tilde_prime") from None
    denom = float(vec[interest[0]])
    ratio = r / denom if denom != 0.0 else np.inf
    if not np.isfinite(ratio) or ratio <= 0.0:
        notes.append("nonpositive gamma ratio; adjustment skipped")
        return 1.0, {"near_zero_r"}, notes
    gamma = float(math.exp(lad) * ratio)
    if abs(gamma - 1.0) < FACTOR_SNAP:
        gamma = 1.0
    return gamma, flags, notes


def rho_factor(
    fit_hat: FitResult,
    fit_tilde: FitResult,
    bundle: AncillaryBundle,
    derivs: SampleSpaceDerivs,
    interest,
    U_tilde: np.ndarray,
):
    """Skovgaard correction factor rho for a q-dimensional interest block.

    Returns (rho, flags, notes).  ``U_tilde`` is the score vector at the
    restricted estimate with the actual data.
    """
    flags: set = set()
    notes: list = []
    LR, _ = lr_and_r(fit_hat, fit_tilde, interest)
    if LR < LR_DEGENERATE:
        return 1.0, {"near_zero_LR"}, notes
    q = len(interest)
    p = fit_hat.theta.size
    nuis = [j for j in range(p) if j not in set(interest)]
    s = _curvature_scale(fit_hat.info)
    ss = np.outer(s, s)
    JJ = derivs.J_doubletilde / ss
    lad = (
        0.5 * _logabsdet(fit_hat.info / ss, notes, "J_hat")
        - _logabsdet(derivs.U_tilde_prime / ss, notes, "U_tilde_prime")
        + 0.5 * _logabsdet(fit_tilde.info[np.ix_(nuis, nuis)] / ss[np.ix_(nuis, nuis)], notes, "J_tilde_nuisance")
        - 0.5 * _logabsdet(JJ[np.ix_(nuis, nuis)], notes, "J_doubletilde_nuisance")
        + 0.5 * _logabsdet(JJ, notes, "J_doubletilde")
    )
    U_star = U_tilde / s
    try:
        quad = float(U_star @ np.linalg.solve(JJ, U_star))
    except np.linalg.LinAlgError:
        raise StageError("adjustment", "singular double-tilde information") from None
    diff = (derivs.ell_hat_prime - derivs.ell_tilde_prime) / s
    try:
        vec = np.linalg.solve(derivs.U_tilde_prime.T / ss, diff)
    except np.linalg.LinAlgError:
        raise StageError("adjustment", "singular U_tilde_prime") from None
    denom = float(vec @ U_star)
    if quad <= 0.0:
        notes.append("nonpositive score quadratic form; adjustment skipped")
        return 1.0, {"nonpd_info"}, notes
    if denom <= 0.0:
        notes.append("nonpositive rho denominator; adjustment skipped")
        return 1.0, {"near_zero_LR"}, notes
    log_rho = lad + 0.5 * q * math.log(quad) - (0.5 * q - 1.0) * math.log(LR) - math.log(denom)
    rho = float(math.exp(log_rho))
    if abs(rho - 1.0) < FACTOR_SNAP:
        rho = 1.0
    return rho, flags, notes


def adjusted_statistics(LR: float, r, gamma, rho: float, q: int):
    """(r*, LR*, LR**) from the raw statistics and correction factors.

    Degenerate inputs must already carry gamma = rho = 1, in which case
    the statistics pass through unadjusted.  LR** is returned raw (it can
    be slightly negative in finite samples); LR* is floored at zero.
    """
    notes = []
    r_star = None
    if r is not None and gamma is not None:
        r_star = r if gamma == 1.0 else r - math.log(gamma) / r
    if rho == 1.0:
        LR_star, LR_star2 = LR, LR
    else:
        log_rho = math.log(rho)
        inner = 1.0 - log_rho / LR
        if inner < 0.0:
            notes.append("negative inner factor in LR*")
        LR_star = max(LR * inner * inner, 0.0)
        LR_star2 = LR - 2.0 * log_rho
    return r_star, LR_star, LR_star2, notes


def _chi2_sf(x: float, q: int) -> float:
    return float(gammaincc(0.5 * q, 0.5 * x))


def _phi(x: float) -> float:
    return float(ndtr(x))


def p_values(LR, r, r_star, LR_star, LR_star2, q: int, sided: str) -> dict:
    """Asymptotic p-values: chi2_q for the LR family, N(0,1) for r and r*.

    Two-sided r-based p-values use 2(1 - Phi(|r|)); one-sided tests use
    the tail indicated by the alternative (lower: Phi(r); upper:
    1 - Phi(r)).  The LR** p-value is computed from max(LR**, 0).
    """
    out = {
        "p_LR": _chi2_sf(LR, q),
        "p_LR_star": _chi2_sf(LR_star, q),
        "p_LR_star2": _chi2_sf(max(LR_star2, 0.0), q),
        "p_r": None,
        "p_r_star": None,
    }

    def tail(val):
        if sided == "lower":
            return _phi(val)
        if sided == "upper":
            return _phi(-val)
        return 2.0 * _phi(-abs(val))

    if r is not None:
        out["p_r"] = tail(r)
    if r_star is not None:
        out["p_r_star"] = tail(r_star)
    return out


# ---------------------------------------------------------------------------
# Test report and pipeline
# ---------------------------------------------------------------------------

_REPORT_FLOATS = ("LR", "r", "gamma", "rho", "r_star", "LR_star", "LR_star2",
                  "p_LR", "p_r", "p_r_star", "p_LR_star", "p_LR_star2")


@dataclass
class TestReport:
    """Full outcome of one hypothesis test."""

    __test__ = False  # class name looks like a pytest test case; it is not

    sided: str
    interest_indices: tuple
    psi0: np.ndarray
    LR: float
    rho: float
    LR_star: float
    LR_star2: float
    p_LR: float
    p_LR_star: float
    p_LR_star2: float
    r: float | None = None
    gamma: float | None = None
    r_star: float | None = None
    p_r: float | None = None
    p_r_star: float | None = None
    flags: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "hypothesis": {
                "sided": self.sided,
                "interest_indices": list(self.interest_indices),
                "psi0": [float(v) for v in np.atleast_1d(self.psi0)],
            },
            "flags": sorted(self.flags),
            "notes": list(self.notes),
        }
        for name in _REPORT_FLOATS:
            val = getattr(self, name)
            if val is not None:
                d[name] = float(val)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestReport":
        hyp = d["hypothesis"]
        kwargs = {name: d.get(name) for name in _REPORT_FLOATS}
        return cls(
            sided=hyp["sided"],
            interest_indices=tuple(hyp["interest_indices"]),
            psi0=np.asarray(hyp["psi0"], dtype=float),
            flags=sorted(d.get("flags", [])),
            notes=list(d.get("notes", [])),
            **kwargs,
        )

    def pvalue(self, statistic: str):
        """p-value by statistic label ("LR", "LR*", "LR**", "r", "r*")."""
        key = {"LR": "p_LR", "LR*": "p_LR_star", "LR**": "p_LR_star2", "r": "p_r", "r*": "p_r_star"}[statistic]
        return getattr(self, key)


def run_test(
    model: ModelSpec,
    family: EllipticalFamily,
    data: Dataset,
    hypothesis: Hypothesis,
    start=None,
    **fit_kwargs,
) -> TestReport:
    """Full pipeline: both fits, ancillary, adjustments, p-values.

    Raises StageError (with the offending stage) on fit failures or
    singular adjustment systems.
    """
    interest = hypothesis.interest_indices
    q = hypothesis.q

    try:
        fit_hat = fit(model, family, data, start=start, **fit_kwargs)
    except (FitError, NonSPDError) as exc:
        raise StageError("unrestricted_fit", exc) from exc
    if not fit_hat.converged:
        raise StageError("unrestricted_fit", "did not converge")

    tilde_start = fit_hat.theta.copy()
    tilde_start[list(interest)] = hypothesis.psi0
    try:
        fit_tilde = fit(model, family, data, restriction=(interest, hypothesis.psi0), start=tilde_start, **fit_kwargs)
    except (FitError, NonSPDError) as exc:
        raise StageError("restricted_fit", exc) from exc
    if not fit_tilde.converged:
        raise StageError("restricted_fit", "did not converge")

    # the restricted optimum can only be bettered by the unrestricted one
    if fit_tilde.loglik > fit_hat.loglik + 1e-10 * (1.0 + abs(fit_hat.loglik)):
        refit = fit(model, family, data, start=fit_tilde.theta, **fit_kwargs)
        if refit.converged and refit.loglik >= fit_hat.loglik:
            fit_hat = refit

    flags: set = set()
    notes: list = []
    for source, label in ((fit_hat, "unrestricted"), (fit_tilde, "restricted")):
        for msg in source.diagnostics:
            if msg == "boundary_fit":
                flags.add("boundary_fit")
            elif msg == "nonpd_info" and not source.restricted:
                # the full information at the restricted optimum is allowed
                # to be indefinite; only J(theta-hat) losing definiteness
                # is a health flag
                flags.add("nonpd_info")
            else:
                notes.append(f"{label} fit: {msg}")
    notes = list(dict.fromkeys(notes))

    try:
        bundle = build_ancillary(fit_hat, data, model, family)
        ell_hat, _ = sample_space_gradients(fit_hat.eval_, bundle, family)
        eval_tilde = fit_tilde.eval_
        ell_tilde, U_tilde_prime = sample_space_gradients(eval_tilde, bundle, family)
        JJ = doubletilde_info(eval_tilde, bundle, family)
    except NonSPDError as exc:
        raise StageError("ancillary", exc) from exc
    derivs = SampleSpaceDerivs(
        ell_hat_prime=ell_hat, ell_tilde_prime=ell_tilde, U_tilde_prime=U_tilde_prime, J_doubletilde=JJ
    )
    U_tilde = score_info(family, eval_tilde, want_info=False).score

    LR, r = lr_and_r(fit_hat, fit_tilde, interest)
    gamma = None
    if q == 1:
        gamma, gflags, gnotes = gamma_factor(fit_hat, fit_tilde, bundle, derivs, interest)
        flags |= gflags
        notes += gnotes
    rho, rflags, rnotes = rho_factor(fit_hat, fit_tilde, bundle, derivs, interest, U_tilde)
    flags |= rflags
    notes += rnotes
    if LR < LR_DEGENERATE:
        flags.add("near_zero_LR")
    if r is not None and abs(r) < R_DEGENERATE:
        flags.add("near_zero_r")

    r_star, LR_star, LR_star2, adj_notes = adjusted_statistics(LR, r, gamma, rho, q)
    notes += adj_notes
    pv = p_values(LR, r, r_star, LR_star, LR_star2, q, hypothesis.sided)

    return TestReport(
        sided=hypothesis.sided,
        interest_indices=interest,
        psi0=hypothesis.psi0,
        LR=LR,
        r=r,
        gamma=gamma,
        rho=rho,
        r_star=r_star,
        LR_star=LR_star,
        LR_star2=LR_star2,
        flags=sorted(flags),
        notes=notes,
        **pv,
    )
