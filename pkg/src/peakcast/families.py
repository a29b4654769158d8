"""Response distributions for peak models beyond the Gaussian baseline.

Each family exposes the summed log-likelihood, analytic gradients with
respect to the per-observation location and its own free parameters (on
unconstrained scales), and the per-observation negative second derivative
in the location, which drives effective-degrees-of-freedom computations.
"""

from __future__ import annotations

import numpy as np
from scipy.special import digamma, expit, gammaln

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_loglik(y: np.ndarray, mu: np.ndarray) -> float:
    """Gaussian log-likelihood profiled over the variance (MLE plug-in)."""
    n = y.size
    rss = float(np.sum((y - mu) ** 2))
    return -0.5 * n * (np.log(max(rss, 1e-300) / n) + LOG_2PI + 1.0)


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


class ScaledTFamily:
    """Location-scale Student-t with free scale and degrees of freedom.

    Raw parameters: (log scale, log(dof - min_dof)).  The floor keeps the
    variance finite and blocks the spiked-likelihood degeneracy of
    near-interpolating fits chasing dof -> 2; approaching it is a smooth
    interior limit of the raw coordinate, never a wall.  A fixed dof drops
    the second raw parameter.
    """

    name = "scaled_t"
    min_dof = 3.0

    def __init__(self, fixed_dof: float | None = None):
        self.fixed_dof = fixed_dof
        self.n_params = 1 if fixed_dof is not None else 2

    def init_params(self, y: np.ndarray, mu0: np.ndarray) -> np.ndarray:
        scale = max(float(np.std(y - mu0)), 1e-6)
        if self.fixed_dof is not None:
            return np.array([np.log(scale)])
        return np.array([np.log(scale), np.log(4.0 - self.min_dof)])

    def _nu(self, raw: np.ndarray) -> float:
        if self.fixed_dof is not None:
            return float(self.fixed_dof)
        return self.min_dof + np.exp(raw[1])

    def unpack(self, raw: np.ndarray) -> dict:
        return {"scale": float(np.exp(raw[0])), "dof": self._nu(raw)}

    def loglik(self, y, mu, raw) -> float:
        if not -50.0 < raw[0] < 50.0:
            return -np.inf
        nu = self._nu(raw)
        sigma = np.exp(raw[0])
        z = (y - mu) / sigma
        li = (
            gammaln((nu + 1.0) / 2.0)
            - gammaln(nu / 2.0)
            - 0.5 * np.log(nu * np.pi)
            - raw[0]
            - 0.5 * (nu + 1.0) * np.log1p(z * z / nu)
        )
        total = float(np.sum(li))
        return total if np.isfinite(total) else -np.inf

    def grads(self, y, mu, raw):
        sigma = np.exp(raw[0])
        nu = self._nu(raw)
        z = (y - mu) / sigma
        denom = nu + z * z
        dmu = (nu + 1.0) * z / (sigma * denom)
        dlog_sigma = float(np.sum(-1.0 + (nu + 1.0) * z * z / denom))
        if self.fixed_dof is not None:
            return dmu, np.array([dlog_sigma])
        dnu = (
            0.5 * (digamma((nu + 1.0) / 2.0) - digamma(nu / 2.0))
            - 0.5 / nu
            - 0.5 * np.log1p(z * z / nu)
            + 0.5 * (nu + 1.0) * z * z / (nu * denom)
        )
        drho = float(np.sum(dnu)) * (nu - self.min_dof)
        return dmu, np.array([dlog_sigma, drho])

    def location_curvature(self, y, mu, raw) -> np.ndarray:
        sigma = np.exp(raw[0])
        nu = self._nu(raw)
        z = (y - mu) / sigma
        return (nu + 1.0) * (nu - z * z) / (sigma**2 * (nu + z * z) ** 2)


class GEVFamily:
    """Generalised extreme value distribution with global scale and shape.

    Raw parameters: (log scale, shape coordinate).  The shape is mapped
    onto (-0.5, 0.5) by a tanh so extreme-shape excursions during
    optimisation stay smooth; shapes within 1e-6 of zero are evaluated on
    the Gumbel branch.
    """

    name = "gev"
    shape_eps = 1e-6
    shape_bound = 0.5

    def __init__(self, fixed_shape: float | None = None):
        self.fixed_shape = fixed_shape
        self.n_params = 1 if fixed_shape is not None else 2

    def init_params(self, y: np.ndarray, mu0: np.ndarray) -> np.ndarray:
        resid_sd = max(float(np.std(y - mu0)), 1e-6)
        # moment-match a Gumbel: sd = sigma * pi / sqrt(6)
        log_scale = np.log(resid_sd * np.sqrt(6.0) / np.pi)
        if self.fixed_shape is not None:
            return np.array([log_scale])
        return np.array([log_scale, np.arctanh(0.05 / self.shape_bound)])

    def _shape(self, raw: np.ndarray) -> float:
        if self.fixed_shape is not None:
            return float(self.fixed_shape)
        return self.shape_bound * np.tanh(raw[1])

    def unpack(self, raw: np.ndarray) -> dict:
        return {"scale": float(np.exp(raw[0])), "shape": float(self._shape(raw))}

    def loglik(self, y, mu, raw) -> float:
        if not -50.0 < raw[0] < 50.0:
            return -np.inf
        sigma = np.exp(raw[0])
        xi = self._shape(raw)
        z = (y - mu) / sigma
        with np.errstate(over="ignore"):
            if abs(xi) < self.shape_eps:
                li = -raw[0] - z - np.exp(-z)
            else:
                t = 1.0 + xi * z
                if np.any(t <= 0.0):
                    return -np.inf
                li = -raw[0] - (1.0 + 1.0 / xi) * np.log(t) - t ** (-1.0 / xi)
        total = float(np.sum(li))
        return total if np.isfinite(total) else -np.inf

    def grads(self, y, mu, raw):
        # undefined outside the support; the optimizer never asks there
        sigma = np.exp(raw[0])
        xi = self._shape(raw)
        z = (y - mu) / sigma
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            if abs(xi) < self.shape_eps:
                emz = np.exp(-z)
                dmu = (1.0 - emz) / sigma
                dlog_sigma = float(np.sum(-1.0 + z * (1.0 - emz)))
                dxi = float(np.sum(z * z / 2.0 - z - (z * z / 2.0) * emz))
            else:
                t = 1.0 + xi * z
                tpow = t ** (-1.0 / xi)
                core = ((1.0 + xi) - tpow) / t
                dmu = core / sigma
                dlog_sigma = float(np.sum(-1.0 + z * core))
                logt = np.log(t)
                dxi = float(
                    np.sum(
                        logt / xi**2
                        - (1.0 + 1.0 / xi) * z / t
                        - tpow * (logt / xi**2 - z / (xi * t))
                    )
                )
        if self.fixed_shape is not None:
            return dmu, np.array([dlog_sigma])
        jac = self.shape_bound * (1.0 - np.tanh(raw[1]) ** 2)
        return dmu, np.array([dlog_sigma, dxi * jac])

    def location_curvature(self, y, mu, raw) -> np.ndarray:
        sigma = np.exp(raw[0])
        xi = self._shape(raw)
        z = (y - mu) / sigma
        if abs(xi) < self.shape_eps:
            return np.exp(-z) / sigma**2
        t = 1.0 + xi * z
        return (1.0 + xi) * (t ** (-1.0 / xi - 2.0) - xi / t**2) / sigma**2


class OcatFamily:
    """Ordered-categorical model on a latent logistic variable.

    Category probabilities are differences of the logistic CDF at cut
    points; the first cut point is pinned at -1 so the linear predictor's
    intercept stays identified, the rest are parameterised by positive
    increments.  Raw parameters: log-increments (n_categories - 2 of them).
    """

    name = "ocat"
    first_cut = -1.0

    def __init__(self, n_categories: int = 48):
        if n_categories < 2:
            raise ValueError("need at least 2 categories")
        self.n_categories = n_categories
        self.n_params = n_categories - 2

    def init_params(self, y: np.ndarray, mu0: np.ndarray) -> np.ndarray:
        # evenly spread cuts over roughly +-4 latent units
        width = 8.0 / max(self.n_categories - 1, 1)
        return np.full(self.n_params, np.log(width))

    def cut_points(self, raw: np.ndarray) -> np.ndarray:
        cuts = np.empty(self.n_categories - 1)
        cuts[0] = self.first_cut
        if self.n_params:
            cuts[1:] = self.first_cut + np.cumsum(np.exp(raw))
        return cuts

    def unpack(self, raw: np.ndarray) -> dict:
        return {"cut_points": self.cut_points(raw).tolist()}

    def _bounds(self, y: np.ndarray, mu: np.ndarray, raw: np.ndarray):
        cuts = self.cut_points(raw)
        padded = np.concatenate([[-np.inf], cuts, [np.inf]])
        y = y.astype(int)
        return padded[y] - mu, padded[y + 1] - mu

    def loglik(self, y, mu, raw) -> float:
        lo, hi = self._bounds(y, mu, raw)
        return float(np.sum(self._log_prob(lo, hi)))

    @staticmethod
    def _log_prob(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        # log(F(hi) - F(lo)) for the logistic CDF, stable in both tails
        out = np.where(np.isneginf(lo), _log_sigmoid(hi), 0.0)
        out = np.where(np.isposinf(hi), _log_sigmoid(-lo), out)
        interior = np.isfinite(lo) & np.isfinite(hi)
        lo_i = np.where(interior, lo, 0.0)
        hi_i = np.where(interior, hi, 1.0)
        with np.errstate(divide="ignore"):
            mid = (
                _log_sigmoid(hi_i)
                + _log_sigmoid(-lo_i)
                + np.log1p(-np.exp(lo_i - hi_i))
            )
        return np.where(interior, mid, out)

    def grads(self, y, mu, raw):
        y = y.astype(int)
        lo, hi = self._bounds(y, mu, raw)
        logp = self._log_prob(lo, hi)
        r_lo = self._density_ratio(lo, logp)
        r_hi = self._density_ratio(hi, logp)
        dmu = r_lo - r_hi

        # gradient on the cut points, then chained onto log-increments
        n_cuts = self.n_categories - 1
        g_cuts = np.zeros(n_cuts)
        upper = y + 1  # 1-based index of the cut acting as upper bound
        np.add.at(g_cuts, np.clip(upper - 1, 0, n_cuts - 1), np.where(upper <= n_cuts, r_hi, 0.0))
        np.add.at(g_cuts, np.clip(y - 1, 0, n_cuts - 1), np.where(y >= 1, -r_lo, 0.0))
        if not self.n_params:
            return dmu, np.zeros(0)
        tail_sums = np.cumsum(g_cuts[::-1])[::-1]
        dtheta = np.exp(raw) * tail_sums[1:]
        return dmu, dtheta

    @staticmethod
    def _density_ratio(u: np.ndarray, logp: np.ndarray) -> np.ndarray:
        """f(u) / P on the log scale; zero at infinite bounds."""
        finite = np.isfinite(u)
        u_f = np.where(finite, u, 0.0)
        log_f = _log_sigmoid(u_f) + _log_sigmoid(-u_f)
        return np.where(finite, np.exp(log_f - logp), 0.0)

    def location_curvature(self, y, mu, raw) -> np.ndarray:
        y = y.astype(int)
        lo, hi = self._bounds(y, mu, raw)
        logp = self._log_prob(lo, hi)
        r_lo = self._density_ratio(lo, logp)
        r_hi = self._density_ratio(hi, logp)
        slope_lo = self._bent_ratio(lo, r_lo)
        slope_hi = self._bent_ratio(hi, r_hi)
        return -(slope_hi - slope_lo - (r_lo - r_hi) ** 2)

    @staticmethod
    def _bent_ratio(u: np.ndarray, ratio: np.ndarray) -> np.ndarray:
        """f'(u)/P given f(u)/P, using f' = f (1 - 2F)."""
        finite = np.isfinite(u)
        u_f = np.where(finite, u, 0.0)
        return np.where(finite, ratio * (1.0 - 2.0 * expit(u_f)), 0.0)

    def category_logprobs(self, mu: np.ndarray, raw: np.ndarray) -> np.ndarray:
        """Log-probability of every category for each observation."""
        cuts = self.cut_points(raw)
        padded = np.concatenate([[-np.inf], cuts, [np.inf]])
        lo = padded[:-1][None, :] - mu[:, None]
        hi = padded[1:][None, :] - mu[:, None]
        return self._log_prob(lo, hi)


FAMILIES = {
    "scaled_t": ScaledTFamily,
    "gev": GEVFamily,
    "ocat": OcatFamily,
}
