"""Link functions mapping means to linear predictors.

Four links are supported: ``log`` (Poisson), ``logit``, ``cloglog`` and
``cloglog_sub``.  The last one is the complementary log-log link corrected
for zero-deflated subsampling with ratio ``r = pi0 / pi1``::

    g(t) = log(log(1 + r * t / (1 - t)))
    g^-1(eta) = u / (r + u),   u = exp(exp(eta)) - 1

With ``r = 1`` it coincides with ``cloglog``.

Besides ``apply``/``invert``/``mean_derivative`` each binomial link exposes
``log_mean`` and ``log1m_mean`` (``log mu`` and ``log(1 - mu)`` as functions
of ``eta``) so that likelihoods stay finite far into the tails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import LinkDomainError

KINDS = ("log", "logit", "cloglog", "cloglog_sub")

# exp(exp(eta)) overflows past this; means are saturated and flagged
_ETA_SATURATE = np.log(700.0)
_TINY = np.finfo(np.float64).tiny
_EPS = np.finfo(np.float64).eps


def _log1p_expm1_over_r(s, log_r):
    """``log(1 + expm1(s) / r)`` for ``s >= 0``, accurate for tiny ``s`` and without overflow."""
    shape = np.shape(s)
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    r = np.exp(log_r)
    out = np.empty_like(s)
    big = s > 1.0
    sb = s[big]
    # 1 + (e^s - 1)/r = e^s (1 + (r - 1) e^-s) / r
    out[big] = sb - log_r + np.log1p((r - 1.0) * np.exp(-sb))
    out[~big] = np.log1p(np.expm1(s[~big]) / r)
    return out.reshape(shape)


def _log_expm1(s, eta):
    """``log(expm1(s))`` with ``s = exp(eta)``; ``eta`` keeps precision when ``s`` underflows."""
    shape = np.shape(s)
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    out = np.empty_like(s)
    big = s > 30.0
    small = s < 1e-8
    mid = ~(big | small)
    out[big] = s[big] + np.log1p(-np.exp(-s[big]))
    out[small] = eta[small] + 0.5 * s[small]
    out[mid] = np.log(np.expm1(s[mid]))
    return out.reshape(shape)


@dataclass(frozen=True)
class LinkFunction:
    """A link ``g`` with inverse and derivative of the inverse.

    ``ratio`` is ``pi0 / pi1`` and is only meaningful for ``cloglog_sub``.
    """

    kind: str
    ratio: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown link {self.kind!r}; expected one of {KINDS}")
        if self.kind == "cloglog_sub":
            if self.ratio is None or not np.isfinite(self.ratio) or self.ratio <= 0:
                raise ValueError(f"cloglog_sub needs a positive finite ratio, got {self.ratio!r}")
            object.__setattr__(self, "ratio", float(self.ratio))
        elif self.ratio is not None:
            raise ValueError(f"link {self.kind!r} takes no ratio")

    @classmethod
    def log(cls):
        return cls("log")

    @classmethod
    def logit(cls):
        return cls("logit")

    @classmethod
    def cloglog(cls):
        return cls("cloglog")

    @classmethod
    def cloglog_sub(cls, ratio: float):
        return cls("cloglog_sub", ratio)

    @property
    def is_binomial(self) -> bool:
        return self.kind != "log"

    def __str__(self):
        if self.kind == "cloglog_sub":
            return f"cloglog_sub(r={self.ratio!r})"
        return self.kind

    # -- mean -> eta -----------------------------------------------------

    def apply(self, mean):
        """Linear predictor ``g(mean)``; raises :class:`LinkDomainError` at the boundary."""
        mu = np.asarray(mean, dtype=np.float64)
        if self.kind == "log":
            if np.any(~(mu > 0)) or np.any(~np.isfinite(mu)):
                raise LinkDomainError("log link needs mean > 0")
            return _scalar(np.log(mu))
        if np.any(~((mu > 0) & (mu < 1))):
            raise LinkDomainError(f"{self.kind} link needs mean in (0, 1)")
        if self.kind == "logit":
            out = np.log(mu) - np.log1p(-mu)
        elif self.kind == "cloglog":
            out = np.log(-np.log1p(-mu))
        else:
            odds = mu / (1.0 - mu)
            out = np.log(np.log1p(self.ratio * odds))
        return _scalar(out)

    # -- eta -> mean -----------------------------------------------------

    def invert(self, eta):
        """Mean ``g^-1(eta)``.

        Binomial means are kept strictly inside (0, 1): when the exact value
        rounds to 1 it is replaced by ``1 - eps/2`` (see :meth:`saturated`).
        """
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "log":
            return _scalar(np.exp(eta))
        if self.kind == "logit":
            out = np.exp(-np.logaddexp(0.0, -eta))
        elif self.kind == "cloglog":
            out = -np.expm1(-np.exp(eta))
        else:
            out = np.exp(self.log_mean(eta))
        out = np.minimum(out, 1.0 - _EPS / 2)
        return _scalar(out)

    def saturated(self, eta):
        """True where :meth:`invert` had to clamp the mean to the domain boundary."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "log":
            return _scalar(eta > 709.0)
        return _scalar(self.log1m_mean(eta) < np.log(_EPS / 2))

    def log_mean(self, eta):
        """``log g^-1(eta)`` computed without forming the mean."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "log":
            return _scalar(eta.copy())
        if self.kind == "logit":
            return _scalar(-np.logaddexp(0.0, -eta))
        s = np.exp(np.minimum(eta, 700.0))
        if self.kind == "cloglog":
            return _scalar(_log_expm1(s, eta) - s)
        log_r = np.log(self.ratio)
        return _scalar(_log_expm1(s, eta) - log_r - _log1p_expm1_over_r(s, log_r))

    def log1m_mean(self, eta):
        """``log(1 - g^-1(eta))`` for the binomial links."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "log":
            raise ValueError("log1m_mean is only defined for binomial links")
        if self.kind == "logit":
            return _scalar(-np.logaddexp(0.0, eta))
        s = np.exp(np.minimum(eta, 700.0))
        if self.kind == "cloglog":
            return _scalar(-s)
        log_r = np.log(self.ratio)
        return _scalar(-_log1p_expm1_over_r(s, log_r))

    def mean_derivative(self, eta):
        """``d mean / d eta`` in closed form."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "log":
            return _scalar(np.exp(eta))
        if self.kind == "logit":
            # mu (1 - mu) = exp(-softplus(-eta) - softplus(eta))
            return _scalar(np.exp(-np.logaddexp(0.0, -eta) - np.logaddexp(0.0, eta)))
        s = np.exp(np.minimum(eta, 700.0))
        if self.kind == "cloglog":
            return _scalar(np.exp(eta - s))
        # mu = u / (r + u), u = expm1(s): dmu/deta = r s e^s / (r + u)^2
        log_r = np.log(self.ratio)
        return _scalar(np.exp(eta + s - log_r - 2.0 * _log1p_expm1_over_r(s, log_r)))

    def score_factor(self, eta):
        """``mean_derivative / variance`` for the family this link belongs to.

        Equals 1 for the canonical pairs (log/Poisson, logit/binomial).  For
        the cloglog links it simplifies to ``s / (1 - exp(-s))`` with
        ``s = exp(eta)``, independently of the ratio.
        """
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind in ("log", "logit"):
            return _scalar(np.ones_like(eta))
        s = np.exp(np.minimum(eta, 700.0))
        out = np.where(s < 1e-300, 1.0, s / -np.expm1(-np.maximum(s, 1e-300)))
        return _scalar(out)


def _scalar(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


LOG = LinkFunction("log")
LOGIT = LinkFunction("logit")
CLOGLOG = LinkFunction("cloglog")
