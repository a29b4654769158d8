"""Additive-model assembly and penalized fitting.

Models are sums of an intercept, dummy-coded categorical effects and
centred smooth blocks.  Gaussian responses are fitted by penalized least
squares with GCV-selected smoothing; the scaled-t, GEV and
ordered-categorical families are fitted by penalized maximum likelihood
with the smoothing level chosen on the same grid via an AIC-style score.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .basis import SmoothTerm, build_block, fit_ranges
from .families import FAMILIES, GEVFamily, OcatFamily, gaussian_loglik
from .features import DOW_LEVELS, SLOT_GRID, mat_cols
from .series import SLOTS_PER_DAY

log = logging.getLogger(__name__)

LAMBDA_LOG_GRID = np.arange(-4.0, 6.0 + 1e-9, 0.25)
LAMBDA_SWEEPS = 2

PARAMETRIC_LEVELS = {
    "dow": list(DOW_LEVELS),
    "t": list(range(SLOTS_PER_DAY)),
}

MATRIX_COVARIATES = ("matTem", "matTem95", "matLag")


class RankError(np.linalg.LinAlgError):
    """Penalized normal matrix is singular; a larger lambda may help."""


class DegenerateFitError(ValueError):
    """The fit interpolates the data, leaving GCV undefined."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, grad_norm=None, partial=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.partial = partial  # best iterate reached, usable as a warm start


@dataclass(frozen=True)
class ModelSpec:
    """What to regress on what, and under which response distribution."""

    response: str
    family: str = "gaussian"
    parametric: tuple[str, ...] = ("dow",)
    smooths: tuple[SmoothTerm, ...] = ()

    def __post_init__(self):
        if self.family not in ("gaussian", "scaled_t", "gev", "ocat"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "ocat" and self.response != "IP":
            raise ValueError("the ordered-categorical family requires the IP response")
        if self.family in ("gev", "scaled_t") and self.response != "DP":
            raise ValueError(f"family {self.family} requires the scalar DP response")


@dataclass
class Design:
    """Assembled design matrix with aligned penalty blocks."""

    X: np.ndarray
    penalties: list[tuple[slice, np.ndarray]]
    layout: list[tuple[str, int, int]]
    terms: tuple[SmoothTerm, ...]
    transforms: tuple[np.ndarray, ...]
    clamp_count: int = 0

    def full_penalties(self) -> list[np.ndarray]:
        p = self.X.shape[1]
        out = []
        for span, s in self.penalties:
            full = np.zeros((p, p))
            full[span, span] = s
            out.append(full)
        return out


def covariate_array(df, name: str) -> np.ndarray:
    """Fetch a covariate by name: scalar column, slot matrix or slot grid."""
    if name == "matInt":
        return SLOT_GRID
    if name in MATRIX_COVARIATES:
        return df[mat_cols(name)].to_numpy(dtype=float)
    if name not in df.columns:
        raise KeyError(f"unknown covariate {name!r}")
    return df[name].to_numpy(dtype=float)


def _dummy_code(values, levels) -> np.ndarray:
    """Treatment coding against the first level."""
    arr = np.asarray(values)
    cols = [np.asarray(arr == lev, dtype=float) for lev in levels[1:]]
    return np.column_stack(cols) if cols else np.zeros((arr.size, 0))


def assemble(spec: ModelSpec, df, fitted: "FittedModel | None" = None,
             need_response: bool = True):
    """Build (Design, response vector) for spec against a data frame.

    Without ``fitted``, knot ranges and centering transforms are derived
    from the given rows (training).  With it, the stored ones are reused so
    prediction rows live in the same column space.  Prediction frames may
    omit the response column when ``need_response`` is off.
    """
    if len(df) == 0:
        raise ValueError("empty data")
    n = len(df)
    blocks = [np.ones((n, 1))]
    layout = [("intercept", 0, 1)]
    penalties: list[tuple[slice, np.ndarray]] = []

    for name in spec.parametric:
        if name not in PARAMETRIC_LEVELS:
            raise KeyError(f"unknown parametric covariate {name!r}")
        cols = _dummy_code(df[name].to_numpy(), PARAMETRIC_LEVELS[name])
        start = sum(b.shape[1] for b in blocks)
        blocks.append(cols)
        layout.append((name, start, start + cols.shape[1]))

    terms, transforms, clamp_count = [], [], 0
    for i, term in enumerate(spec.smooths):
        arrays = {c: covariate_array(df, c) for c in term.covariates}
        if fitted is None:
            term = fit_ranges(term, arrays) if term.knot_ranges is None else term
            block = build_block(term, arrays)
        else:
            term = fitted.terms[i]
            block = build_block(term, arrays, transform=fitted.transforms[i])
        start = sum(b.shape[1] for b in blocks)
        blocks.append(block.columns)
        layout.append((term.label(), start, start + block.n_cols))
        span = slice(start, start + block.n_cols)
        penalties.extend((span, s) for s in block.penalties)
        terms.append(term)
        transforms.append(block.transform)
        clamp_count += block.clamp_count

    X = np.hstack(blocks)
    if spec.response in df.columns:
        y = df[spec.response].to_numpy(dtype=float)
    elif need_response:
        raise KeyError(f"response column {spec.response!r} missing from data")
    else:
        y = None
    design = Design(X, penalties, layout, tuple(terms), tuple(transforms), clamp_count)
    return design, y


class PenalizedLS:
    """Workspace for Gaussian penalized least squares at varying lambdas.

    Caches X'X and X'y so each smoothing configuration costs one
    p x p factorization.
    """

    def __init__(self, X, y, penalties):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.n, self.p = self.X.shape
        self.xtx = self.X.T @ self.X
        self.xty = self.X.T @ self.y
        self.yty = float(self.y @ self.y)
        self.penalties = [np.asarray(s, dtype=float) for s in penalties]
        for s in self.penalties:
            if s.shape != (self.p, self.p):
                raise ValueError("penalty shape must match the column count")

    def _penalized_matrix(self, lambdas) -> np.ndarray:
        m = self.xtx.copy()
        for lam, s in zip(lambdas, self.penalties, strict=True):
            m += lam * s
        return m

    def solve(self, lambdas) -> np.ndarray:
        m = self._penalized_matrix(lambdas)
        try:
            c, low = linalg.cho_factor(m)
        except np.linalg.LinAlgError as exc:
            raise RankError(
                "penalized normal matrix is singular; increase lambda"
            ) from exc
        return linalg.cho_solve((c, low), self.xty)

    def rss(self, beta) -> float:
        return max(self.yty - 2.0 * beta @ self.xty + beta @ self.xtx @ beta, 0.0)

    def edf(self, lambdas) -> float:
        m = self._penalized_matrix(lambdas)
        try:
            c, low = linalg.cho_factor(m)
        except np.linalg.LinAlgError as exc:
            raise RankError(
                "penalized normal matrix is singular; increase lambda"
            ) from exc
        return float(np.trace(linalg.cho_solve((c, low), self.xtx)))

    def gcv(self, lambdas) -> float:
        beta = self.solve(lambdas)
        tr_a = self.edf(lambdas)
        if tr_a >= self.n:
            raise DegenerateFitError(
                f"effective degrees of freedom {tr_a:.2f} >= n={self.n}"
            )
        return self.n * self.rss(beta) / (self.n - tr_a) ** 2


def fit_gaussian_pls(X, y, penalties, lambdas) -> np.ndarray:
    """Minimise ||y - X b||^2 + sum_j lambda_j b' S_j b."""
    return PenalizedLS(X, y, penalties).solve(np.asarray(lambdas, dtype=float))


def gcv_score(X, y, penalties, lambdas) -> float:
    """Generalised cross-validation score n RSS / (n - edf)^2."""
    return PenalizedLS(X, y, penalties).gcv(np.asarray(lambdas, dtype=float))


def edf(X, penalties, lambdas) -> float:
    """Trace of the influence matrix of the penalized least-squares fit."""
    return PenalizedLS(np.asarray(X, dtype=float), np.zeros(np.asarray(X).shape[0]),
                       penalties).edf(np.asarray(lambdas, dtype=float))


def grid_search_lambdas(n_penalties: int, criterion) -> np.ndarray:
    """Coordinate descent for log10-lambda over a fixed grid.

    ``criterion(lambdas) -> float`` is evaluated one penalty at a time
    while the others stay fixed; two full sweeps.  Candidates are visited
    walking outward from the incumbent value so criteria that warm-start
    from the previous evaluation see one grid step at a time.  Non-finite
    scores and raised fit degeneracies exclude a grid point from
    selection.
    """
    if n_penalties == 0:
        return np.zeros(0)
    log_lam = np.zeros(n_penalties)
    for _ in range(LAMBDA_SWEEPS):
        for j in range(n_penalties):
            scores = np.full(LAMBDA_LOG_GRID.size, np.inf)
            here = int(np.argmin(np.abs(LAMBDA_LOG_GRID - log_lam[j])))
            order = list(range(here, -1, -1)) + list(range(here + 1, LAMBDA_LOG_GRID.size))
            for g in order:
                trial = log_lam.copy()
                trial[j] = LAMBDA_LOG_GRID[g]
                try:
                    value = criterion(10.0**trial)
                except (DegenerateFitError, RankError, ConvergenceError):
                    continue
                if np.isfinite(value):
                    scores[g] = value
            if np.isfinite(scores).any():
                log_lam[j] = LAMBDA_LOG_GRID[int(np.argmin(scores))]
    return 10.0**log_lam


def optimize_lambdas(X, y, penalties, criterion=None) -> np.ndarray:
    """Select lambdas on the grid; GCV by default for Gaussian responses."""
    if criterion is None:
        ws = PenalizedLS(X, y, penalties)
        criterion = ws.gcv
    return grid_search_lambdas(len(penalties), criterion)


def compute_aic(loglik: float, edf_value: float, n_family_params: int) -> float:
    return -2.0 * loglik + 2.0 * (edf_value + n_family_params)


@dataclass
class FittedModel:
    """A fitted additive model, sufficient to rebuild predictions exactly."""

    spec: ModelSpec
    terms: tuple[SmoothTerm, ...]
    transforms: tuple[np.ndarray, ...]
    layout: list[tuple[str, int, int]]
    coefficients: np.ndarray
    lambdas: np.ndarray
    family_params: dict
    raw_family_params: np.ndarray
    edf: float
    aic: float
    loglik: float
    n_train: int
    clamp_warnings: int = field(default=0, compare=False)

    def design_for(self, df) -> Design:
        design, _ = assemble(self.spec, df, fitted=self, need_response=False)
        self.clamp_warnings += design.clamp_count
        if design.clamp_count:
            log.warning(
                "%d covariate value(s) clamped to the training knot range",
                design.clamp_count,
            )
        return design

    def location(self, df) -> np.ndarray:
        """Linear predictor (location parameter) for new rows."""
        return self.design_for(df).X @ self.coefficients

    def predict(self, df) -> np.ndarray:
        """Point forecasts: the location for scalar families, the modal
        category for the ordered-categorical family."""
        mu = self.location(df)
        if self.spec.family != "ocat":
            return mu
        return np.argmax(self.predict_proba(df, mu=mu), axis=1)

    def predict_proba(self, df, mu=None) -> np.ndarray:
        if self.spec.family != "ocat":
            raise ValueError("probabilities are only defined for the ocat family")
        if mu is None:
            mu = self.location(df)
        fam = OcatFamily(n_categories=SLOTS_PER_DAY)
        return np.exp(fam.category_logprobs(mu, self.raw_family_params))

    def to_json(self) -> str:
        payload = {
            "format_version": 1,
            "spec": {
                "response": self.spec.response,
                "family": self.spec.family,
                "parametric": list(self.spec.parametric),
                "smooths": [_term_to_dict(t) for t in self.spec.smooths],
            },
            "terms": [_term_to_dict(t) for t in self.terms],
            "transforms": [t.tolist() for t in self.transforms],
            "layout": [list(item) for item in self.layout],
            "coefficients": self.coefficients.tolist(),
            "lambdas": self.lambdas.tolist(),
            "family_params": self.family_params,
            "raw_family_params": self.raw_family_params.tolist(),
            "edf": self.edf,
            "aic": self.aic,
            "loglik": self.loglik,
            "n_train": self.n_train,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        payload = json.loads(text)
        if payload.get("format_version") != 1:
            raise ValueError("unsupported model file version")
        spec = ModelSpec(
            response=payload["spec"]["response"],
            family=payload["spec"]["family"],
            parametric=tuple(payload["spec"]["parametric"]),
            smooths=tuple(_term_from_dict(d) for d in payload["spec"]["smooths"]),
        )
        return cls(
            spec=spec,
            terms=tuple(_term_from_dict(d) for d in payload["terms"]),
            transforms=tuple(np.asarray(t, dtype=float) for t in payload["transforms"]),
            layout=[tuple(item) for item in payload["layout"]],
            coefficients=np.asarray(payload["coefficients"], dtype=float),
            lambdas=np.asarray(payload["lambdas"], dtype=float),
            family_params=payload["family_params"],
            raw_family_params=np.asarray(payload["raw_family_params"], dtype=float),
            edf=payload["edf"],
            aic=payload["aic"],
            loglik=payload["loglik"],
            n_train=payload["n_train"],
        )


def _term_to_dict(term: SmoothTerm) -> dict:
    return {
        "kind": term.kind,
        "covariates": list(term.covariates),
        "basis_sizes": list(term.basis_sizes),
        "penalty_order": term.penalty_order,
        "degree": term.degree,
        "knot_ranges": None if term.knot_ranges is None
        else [list(r) for r in term.knot_ranges],
    }


def _term_from_dict(d: dict) -> SmoothTerm:
    return SmoothTerm(
        kind=d["kind"],
        covariates=tuple(d["covariates"]),
        basis_sizes=tuple(d["basis_sizes"]),
        penalty_order=d["penalty_order"],
        degree=d["degree"],
        knot_ranges=None if d["knot_ranges"] is None
        else tuple(tuple(r) for r in d["knot_ranges"]),
    )


def _embedded_total_penalty(design: Design, lambdas) -> np.ndarray:
    p = design.X.shape[1]
    total = np.zeros((p, p))
    for lam, (span, s) in zip(lambdas, design.penalties, strict=True):
        total[span, span] += lam * s
    return total


def penalized_mle(X, y, s_total, family, init, max_iter=500, grad_tol=1e-6,
                  param_ridge=0.0, param_center=None):
    """Quasi-Newton maximisation of a penalized log-likelihood.

    ``init`` stacks coefficients then raw family parameters.  The
    coefficient block is preconditioned by the Cholesky factor of the
    penalized information matrix and the few family parameters by their
    own curvature, so the identity BFGS seed matches the local geometry;
    the preconditioner is rebuilt at the stopping point whenever an
    iteration chunk runs out, which keeps the tail of the optimisation
    fast as the scale parameters move.  Infeasible trial points (e.g.
    outside the GEV support) simply shorten the Armijo line search, and
    accepted steps never increase the penalized negative log-likelihood.

    ``param_ridge`` adds a weak quadratic anchor on the raw family
    parameters around their starting values; ordinal-model cut points
    with no observations between them would otherwise drift to infinity.
    """
    chunk = 60
    point = np.asarray(init, dtype=float)
    if param_center is None:
        param_center = point
    used = 0
    last_error = None
    while used < max_iter:
        budget = min(chunk, max_iter - used)
        try:
            return _mle_chunk(X, y, s_total, family, point, budget, grad_tol,
                              param_ridge, np.asarray(param_center, dtype=float))
        except ConvergenceError as exc:
            used += budget
            if exc.partial is None:
                raise
            point = exc.partial
            last_error = exc
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations "
        f"(max |gradient| = {last_error.grad_norm:.3e})",
        grad_norm=last_error.grad_norm,
        partial=point,
    )


def _mle_chunk(X, y, s_total, family, init, max_iter, grad_tol,
               param_ridge=0.0, param_center=None):
    p = X.shape[1]
    q = init.size - p
    init = np.asarray(init, dtype=float)

    w0 = np.maximum(family.location_curvature(y, X @ init[:p], init[p:]), 0.0)
    info = X.T @ (w0[:, None] * X) + s_total
    ridge = 1e-7 * max(float(np.trace(info)) / p, 1e-12)
    try:
        chol = np.linalg.cholesky(info + ridge * np.eye(p))
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(
            np.diag(np.maximum(np.diag(info), ridge)) + ridge * np.eye(p)
        )
    # work in u = chol' beta coordinates: X~ = X chol^{-T}, S~ = L^{-1} S L^{-T}
    x_t = linalg.solve_triangular(chol, X.T, lower=True).T
    s_t = linalg.solve_triangular(chol, s_total, lower=True)
    s_t = linalg.solve_triangular(chol, s_t.T, lower=True).T
    s_t = 0.5 * (s_t + s_t.T)
    fam_scale = _family_param_scales(X, y, family, init, p, q, param_ridge)

    def to_original(v):
        beta = linalg.solve_triangular(chol.T, v[:p], lower=False)
        return np.concatenate([beta, v[p:] / fam_scale])

    center = param_center[p:] if param_center is not None else np.zeros(q)

    def objective(v):
        raw = v[p:] / fam_scale
        ll = family.loglik(y, x_t @ v[:p], raw)
        if not np.isfinite(ll):
            return np.inf
        anchor = 0.5 * param_ridge * np.sum((raw - center) ** 2)
        return -ll + 0.5 * v[:p] @ s_t @ v[:p] + anchor

    def gradient(v):
        raw = v[p:] / fam_scale
        dmu, draw = family.grads(y, x_t @ v[:p], raw)
        g_fam = (-draw + param_ridge * (raw - center)) / fam_scale
        return np.concatenate([-(x_t.T @ dmu) + s_t @ v[:p], g_fam])

    def original_grad_norm(g):
        parts = [chol @ g[:p]]
        if q:
            parts.append(g[p:] * fam_scale)
        return float(np.abs(np.concatenate(parts)).max())

    v = np.concatenate([chol.T @ init[:p], init[p:] * fam_scale])
    f = objective(v)
    if not np.isfinite(f):
        raise ConvergenceError("infeasible starting point for penalized MLE")
    g = gradient(v)
    h_inv = np.eye(p + q)
    scale = max(1.0, float(np.abs(init).max()))
    for iteration in range(max_iter):
        if original_grad_norm(g) <= grad_tol * scale:
            out = to_original(v)
            return out, family.loglik(y, X @ out[:p], out[p:])
        d = -h_inv @ g
        slope = g @ d
        if slope >= 0.0:
            h_inv = np.eye(p + q)
            d = -g
            slope = g @ d
        alpha, accepted = 1.0, False
        for _ in range(60):
            f_new = objective(v + alpha * d)
            if np.isfinite(f_new) and (
                f_new <= f + 1e-4 * alpha * slope
                or (alpha < 1e-8 and f_new < f)
            ):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise ConvergenceError(
                "line search found no feasible step",
                grad_norm=original_grad_norm(g),
                partial=to_original(v),
            )
        v_new = v + alpha * d
        g_new = gradient(v_new)
        s_step = v_new - v
        y_step = g_new - g
        sy = s_step @ y_step
        if sy > 1e-12 * np.linalg.norm(s_step) * np.linalg.norm(y_step):
            # rank-2 inverse update using symmetry: H - rho(s hy' + hy s')
            # + (rho + rho^2 y'Hy) s s'
            rho = 1.0 / sy
            hy = h_inv @ y_step
            coef = rho + rho * rho * (y_step @ hy)
            h_inv -= rho * (np.multiply.outer(s_step, hy)
                            + np.multiply.outer(hy, s_step))
            h_inv += coef * np.multiply.outer(s_step, s_step)
        v, f, g = v_new, f_new, g_new
        if iteration % 8 == 0:
            scale = max(1.0, float(np.abs(to_original(v)).max()))
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations "
        f"(max |gradient| = {original_grad_norm(g):.3e})",
        grad_norm=original_grad_norm(g),
        partial=to_original(v),
    )


def _family_param_scales(X, y, family, init, p, q, param_ridge=0.0) -> np.ndarray:
    """Square-root curvature of each family parameter at the start point.

    Rescaling these few coordinates onto the same footing as the
    preconditioned coefficients keeps the quasi-Newton seed sensible.
    The anchor ridge counts toward the curvature so weakly identified
    (anchored-only) directions stay well scaled too.
    """
    if q == 0:
        return np.ones(0)
    mu = X @ init[:p]
    scales = np.ones(q)
    for j in range(q):
        h = 1e-4 * max(1.0, abs(init[p + j]))
        up, down = init[p:].copy(), init[p:].copy()
        up[j] += h
        down[j] -= h
        g_up = family.grads(y, mu, up)[1][j]
        g_down = family.grads(y, mu, down)[1][j]
        curvature = abs(g_up - g_down) / (2.0 * h) + param_ridge
        scales[j] = np.sqrt(np.clip(curvature, 1e-2, 1e12))
    return scales


def _likelihood_edf(X, W, s_total) -> float:
    """Trace of (X'WX + S)^{-1} X'WX, the smoothing-aware parameter count.

    Negative observed-curvature weights (redescending heavy-tail
    influence) are clamped to zero so near-interpolating fits cannot
    understate their own complexity.
    """
    xtwx = X.T @ (np.maximum(W, 0.0)[:, None] * X)
    m = xtwx + s_total
    try:
        c, low = linalg.cho_factor(m)
        return float(np.trace(linalg.cho_solve((c, low), xtwx)))
    except np.linalg.LinAlgError:
        pass
    try:
        return float(np.trace(linalg.solve(m, xtwx, assume_a="sym")))
    except np.linalg.LinAlgError as exc:
        raise RankError("penalized information matrix is singular") from exc


def _make_family(spec: ModelSpec):
    if spec.family == "ocat":
        return OcatFamily(n_categories=SLOTS_PER_DAY)
    return FAMILIES[spec.family]()


def _initial_point(design: Design, y, family, spec: ModelSpec):
    """Moderately penalized Gaussian fit as a starting location."""
    ws = PenalizedLS(design.X, y, design.full_penalties())
    lambdas = np.full(len(design.penalties), 10.0)
    if spec.family == "ocat":
        cuts = family.cut_points(family.init_params(y, y))
        padded = np.concatenate([cuts, [cuts[-1] + (cuts[-1] - cuts[0]) / max(len(cuts) - 1, 1)]])
        latent = padded[y.astype(int)]
        ws = PenalizedLS(design.X, latent, design.full_penalties())
        beta0 = ws.solve(lambdas)
        raw0 = family.init_params(y, design.X @ beta0)
        return np.concatenate([beta0, raw0])
    beta0 = ws.solve(lambdas)
    raw0 = family.init_params(y, design.X @ beta0)
    return np.concatenate([beta0, raw0])


def fit_likelihood(spec: ModelSpec, design: Design, y, lambdas=None) -> FittedModel:
    """Penalized maximum likelihood for the scaled-t, GEV and ocat families.

    With ``lambdas`` unset they are chosen on the grid by the AIC-style
    score -2 loglik + 2 edf, warm-starting each candidate fit from the
    previous optimum.  Location-scale responses are standardized
    internally so the optimizer works on unit scales; the reported
    coefficients, scale and log-likelihood are mapped back.

    GEV smoothing is selected under the shape-zero (Gumbel) member: the
    polynomial upper tail of positive-shape members rewards
    near-interpolating fits enough to defeat the selection score, while
    the exponential Gumbel tail cannot.  The final fit at the selected
    smoothing frees the shape.
    """
    family = _make_family(spec)
    scan_family = GEVFamily(fixed_shape=0.0) if spec.family == "gev" else family
    p = design.X.shape[1]
    # weak anchor keeps unobserved-category cut points finite; tiny against
    # the data curvature of any cut with likelihood mass nearby
    param_ridge = 1e-2 if spec.family == "ocat" else 0.0

    shift, scale = 0.0, 1.0
    if spec.family in ("gev", "scaled_t"):
        shift = float(np.mean(y))
        scale = max(float(np.std(y)), 1e-12)
    y_work = (y - shift) / scale

    init = _initial_point(design, y_work, scan_family, spec)
    cache: dict[tuple, float] = {}
    solved: list[tuple[np.ndarray, np.ndarray]] = []  # (log-lambdas, optimum)

    def warm_point(key):
        if not solved:
            return init
        dists = [np.abs(k - key).sum() for k, _ in solved]
        return solved[int(np.argmin(dists))][1]

    def criterion(lams):
        key = np.log10(lams)
        cache_key = tuple(np.round(key, 6))
        if cache_key in cache:
            return cache[cache_key]
        s_total = _embedded_total_penalty(design, lams)
        try:
            # selection only needs the score to a few decimals; the final
            # fit below runs at the full gradient tolerance
            v, ll = penalized_mle(design.X, y_work, s_total, scan_family,
                                  warm_point(key), max_iter=120, grad_tol=1e-5,
                                  param_ridge=param_ridge, param_center=init)
        except ConvergenceError as exc:
            if exc.partial is not None:
                solved.append((key, exc.partial))
            raise
        solved.append((key, v))
        w = scan_family.location_curvature(y_work, design.X @ v[:p], v[p:])
        edf_beta = _likelihood_edf(design.X, w, s_total)
        value = compute_aic(ll, edf_beta, scan_family.n_params)
        cache[cache_key] = value
        return value

    if lambdas is None:
        lambdas = grid_search_lambdas(len(design.penalties), criterion)
    lambdas = np.asarray(lambdas, dtype=float)

    start = warm_point(np.log10(np.maximum(lambdas, 1e-300)))
    if scan_family is not family:
        # free the shape coordinate for the final fit
        start = np.concatenate([start, family.init_params(y_work, design.X @ start[:p])[1:]])
    s_total = _embedded_total_penalty(design, lambdas)
    try:
        v, ll = penalized_mle(design.X, y_work, s_total, family, start,
                              param_ridge=param_ridge,
                              param_center=init if param_ridge else None)
    except ConvergenceError:
        if scan_family is family:
            raise
        # the free-shape fit can stall against the shape bound; the
        # shape-zero member is the defensible fallback (and is where the
        # smoothing was selected)
        log.warning("free-shape GEV fit did not converge; keeping shape at 0")
        family = scan_family
        v, ll = penalized_mle(design.X, y_work, s_total, family,
                              warm_point(np.log10(np.maximum(lambdas, 1e-300))))
    beta, raw = v[:p], v[p:]
    if spec.family == "ocat":
        cuts = family.cut_points(raw)
        assert (np.diff(cuts) > 0).all(), "cut points lost their ordering"
    w = family.location_curvature(y_work, design.X @ beta, raw)
    edf_beta = _likelihood_edf(design.X, w, s_total)

    if scale != 1.0 or shift != 0.0:
        beta = beta * scale
        beta[0] += shift  # column 0 is the intercept
        ll = ll - y.size * np.log(scale)
        raw = raw.copy()
        raw[0] += np.log(scale)  # log-scale parameter leads for both families
    return FittedModel(
        spec=spec,
        terms=design.terms,
        transforms=design.transforms,
        layout=design.layout,
        coefficients=beta,
        lambdas=lambdas,
        family_params=family.unpack(raw),
        raw_family_params=raw,
        edf=edf_beta,
        aic=compute_aic(ll, edf_beta, family.n_params),
        loglik=ll,
        n_train=y.size,
    )


def fit_gam(spec: ModelSpec, df, lambdas=None) -> FittedModel:
    """Fit a model spec to a data frame, selecting smoothing if not given."""
    design, y = assemble(spec, df)
    if spec.family != "gaussian":
        return fit_likelihood(spec, design, y, lambdas=lambdas)

    ws = PenalizedLS(design.X, y, design.full_penalties())
    if lambdas is None:
        lambdas = grid_search_lambdas(len(design.penalties), ws.gcv)
    lambdas = np.asarray(lambdas, dtype=float)
    beta = ws.solve(lambdas)
    edf_value = ws.edf(lambdas)
    rss = ws.rss(beta)
    ll = gaussian_loglik(y, design.X @ beta)
    sigma = float(np.sqrt(rss / y.size))
    return FittedModel(
        spec=spec,
        terms=design.terms,
        transforms=design.transforms,
        layout=design.layout,
        coefficients=beta,
        lambdas=lambdas,
        family_params={"sigma": sigma},
        raw_family_params=np.array([np.log(max(sigma, 1e-300))]),
        edf=edf_value,
        aic=compute_aic(ll, edf_value, 1),
        loglik=ll,
        n_train=y.size,
    )
