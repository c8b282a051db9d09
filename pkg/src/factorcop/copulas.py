"""Bivariate copula families used as linking copulas between a response and
the latent cluster factor.

Every family works on numpy arrays and exposes the cdf, density, h-function
``h(u | v) = dC(u, v)/dv``, its inverse in ``u``, Kendall's tau conversions and
the map from a real linear predictor to the family's parameter range.

The likelihood code also needs first derivatives of ``log c`` and ``h`` with
respect to ``u`` and the copula parameter.  Closed forms are provided for all
five families; :class:`CopulaFamily` keeps a central finite-difference fallback
for any family that does not override them.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize, special, stats

#: Interior clamp applied to ``u`` and ``v`` before density/h-function evaluation.
EPS = 1e-14

FAMILY_NAMES = ("clayton", "frank", "gumbel", "gaussian", "student")


class CopulaDomainError(ValueError):
    """Raised when a copula parameter or argument is outside its domain."""


class CopulaNumericError(ArithmeticError):
    """Raised when an iterative inversion fails to converge."""


def _clamp(x):
    return np.clip(np.asarray(x, dtype=float), EPS, 1.0 - EPS)


class CopulaFamily:
    """Base class of a one-parameter bivariate copula family.

    Subclasses implement the closed forms.  Arguments broadcast against each
    other; ``param`` may be a scalar or an array of per-observation values.
    """

    name = "copula"
    #: half-open or open interval of valid parameter values
    param_bounds = (-np.inf, np.inf)
    fd_step = 1e-6

    # -- parameter link -----------------------------------------------------
    def param_from_predictor(self, s):
        raise NotImplementedError

    def dparam_dpredictor(self, s):
        raise NotImplementedError

    def predictor_from_param(self, param):
        raise NotImplementedError

    def check_param(self, param):
        p = np.asarray(param, dtype=float)
        lo, hi = self.param_bounds
        if not np.all(np.isfinite(p)) or np.any(p < lo) or np.any(p > hi):
            raise CopulaDomainError(
                f"{self.name} parameter must lie in [{lo}, {hi}], got {param!r}")
        return p

    # -- core functions -----------------------------------------------------
    def cdf(self, param, u, v):
        raise NotImplementedError

    def logpdf(self, param, u, v):
        raise NotImplementedError

    def pdf(self, param, u, v):
        return np.exp(self.logpdf(param, u, v))

    def _hfunc(self, param, u, v):
        raise NotImplementedError

    def hfunc(self, param, u, v):
        """Conditional cdf of ``U`` given ``V = v``; exact 0/1 at ``u`` in {0, 1}."""
        param = self.check_param(param)
        u = np.asarray(u, dtype=float)
        out = self._hfunc(param, _clamp(u), _clamp(v))
        out = np.clip(out, 0.0, 1.0)
        out = np.where(u <= 0.0, 0.0, out)
        out = np.where(u >= 1.0, 1.0, out)
        return out

    def hinv(self, param, w, v):
        """Left inverse of :meth:`hfunc` in its first argument."""
        param = self.check_param(param)
        return self._hinv_numeric(param, w, v)

    def _hinv_numeric(self, param, w, v, tol=1e-10, max_iter=200):
        # safeguarded bisection on u, then Newton polish
        w = np.asarray(w, dtype=float)
        v = _clamp(v)
        w, v, param = np.broadcast_arrays(w, v, np.asarray(param, dtype=float))
        lo = np.zeros(w.shape)
        hi = np.ones(w.shape)
        for _ in range(min(max_iter, 64)):
            mid = 0.5 * (lo + hi)
            below = self._hfunc(param, np.clip(mid, 1e-300, 1.0), v) < w
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        u = 0.5 * (lo + hi)
        for _ in range(3):
            uc = _clamp(u)
            resid = self._hfunc(param, uc, v) - w
            dens = self.pdf(param, uc, v)
            step = np.where(dens > 0, resid / np.where(dens > 0, dens, 1.0), 0.0)
            cand = u - step
            inside = (cand > lo) & (cand < hi)
            u = np.where(inside, cand, u)
        resid = np.abs(self._hfunc(param, _clamp(u), v) - w)
        # residual is measured on the clamped scale, so only flag genuine failures
        bad = (resid > 1e-6) & (u > EPS) & (u < 1 - EPS)
        if np.any(bad):
            raise CopulaNumericError(
                f"{self.name} h-inverse did not converge, max residual {resid.max():.3g}")
        return u

    # -- Kendall's tau --------------------------------------------------------
    def tau(self, param):
        raise NotImplementedError

    def tau_to_param(self, tau):
        raise NotImplementedError

    # -- derivatives used by the score ---------------------------------------
    def dlogpdf_du(self, param, u, v):
        h = self.fd_step
        u = _clamp(u)
        return (self.logpdf(param, u + h, v) - self.logpdf(param, u - h, v)) / (2 * h)

    def dlogpdf_dparam(self, param, u, v):
        h = self.fd_step * (1.0 + np.abs(param))
        return (self.logpdf(param + h, u, v) - self.logpdf(param - h, u, v)) / (2 * h)

    def dhfunc_dparam(self, param, u, v):
        h = self.fd_step * (1.0 + np.abs(param))
        u = _clamp(u)
        return (self._hfunc(param + h, u, v) - self._hfunc(param - h, u, v)) / (2 * h)

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other) and self.__dict__ == other.__dict__

    def __hash__(self):
        return hash((type(self).__name__, tuple(sorted(self.__dict__.items()))))


class Clayton(CopulaFamily):
    """Clayton copula, ``theta > 0``; parameter link ``theta = 2 exp(s)``."""

    name = "clayton"
    param_bounds = (1e-12, np.inf)

    def param_from_predictor(self, s):
        return 2.0 * np.exp(s)

    def dparam_dpredictor(self, s):
        return 2.0 * np.exp(s)

    def predictor_from_param(self, param):
        return np.log(np.asarray(param, dtype=float) / 2.0)

    @staticmethod
    def _log_t(theta, u, v):
        # log(u^-theta + v^-theta - 1) without overflow
        a = -theta * np.log(u)
        b = -theta * np.log(v)
        m = np.maximum(a, b)
        ea, eb, em = np.exp(a - m), np.exp(b - m), np.exp(-m)
        rest = ea + eb - em
        with np.errstate(over="ignore", invalid="ignore"):
            # expm1/log1p keep full precision near independence (small theta)
            small = np.log1p(np.expm1(np.minimum(a, 50.0)) + np.expm1(np.minimum(b, 50.0)))
        logt = np.where(m < 50.0, small, m + np.log(rest))
        return logt, a, b, ea, eb, rest

    def cdf(self, param, u, v):
        theta = self.check_param(param)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logt = self._log_t(theta, np.maximum(u, 1e-300), np.maximum(v, 1e-300))[0]
            out = np.exp(-logt / theta)
        return np.where((u <= 0) | (v <= 0), 0.0, out)

    def logpdf(self, param, u, v):
        theta = self.check_param(param)
        u, v = _clamp(u), _clamp(v)
        logt = self._log_t(theta, u, v)[0]
        return (np.log1p(theta) - (1 + theta) * (np.log(u) + np.log(v))
                - (2 + 1 / theta) * logt)

    def _hfunc(self, theta, u, v):
        logt = self._log_t(theta, u, v)[0]
        return np.exp(-(theta + 1) * np.log(v) - (1 / theta + 1) * logt)

    def hinv(self, param, w, v):
        theta = self.check_param(param)
        w = np.asarray(w, dtype=float)
        v = _clamp(v)
        # log T = -theta/(1+theta) * (log w + (1+theta) log v)
        with np.errstate(divide="ignore"):
            logt = -theta / (1 + theta) * np.log(w) - theta * np.log(v)
        # u^-theta = T - v^-theta + 1, computed as v^-theta * (exp(logt + theta log v) - 1) + 1
        b = -theta * np.log(v)
        inner = np.exp(b) * np.expm1(logt - b) + 1.0
        u = np.exp(-np.log(inner) / theta)
        return np.where(w <= 0, 0.0, np.where(w >= 1, 1.0, u))

    def tau(self, param):
        theta = self.check_param(param)
        return theta / (theta + 2)

    def tau_to_param(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any((tau <= 0) | (tau >= 1)):
            raise CopulaDomainError("Clayton tau must lie in (0, 1)")
        theta = 2 * tau / (1 - tau)
        self.check_param(theta)
        return theta

    def dlogpdf_du(self, param, u, v):
        theta = np.asarray(param, dtype=float)
        u, v = _clamp(u), _clamp(v)
        _, a, b, ea, eb, rest = self._log_t(theta, u, v)
        dlogt_du = -theta * ea / (u * rest)
        return -(1 + theta) / u - (2 + 1 / theta) * dlogt_du

    def _dlogt_dtheta(self, theta, u, v):
        logt, a, b, ea, eb, rest = self._log_t(theta, u, v)
        return logt, (a * ea + b * eb) / (theta * rest)

    def dlogpdf_dparam(self, param, u, v):
        theta = np.asarray(param, dtype=float)
        u, v = _clamp(u), _clamp(v)
        logt, dlogt = self._dlogt_dtheta(theta, u, v)
        return (1 / (1 + theta) - np.log(u) - np.log(v) + logt / theta**2
                - (2 + 1 / theta) * dlogt)

    def dhfunc_dparam(self, param, u, v):
        theta = np.asarray(param, dtype=float)
        u, v = _clamp(u), _clamp(v)
        logt, dlogt = self._dlogt_dtheta(theta, u, v)
        h = np.exp(-(theta + 1) * np.log(v) - (1 / theta + 1) * logt)
        return h * (-np.log(v) + logt / theta**2 - (1 / theta + 1) * dlogt)


class Gumbel(CopulaFamily):
    """Gumbel copula, ``theta >= 1``; parameter link ``theta = 1 + exp(s)``."""

    name = "gumbel"
    param_bounds = (1.0, np.inf)

    def param_from_predictor(self, s):
        return 1.0 + np.exp(s)

    def dparam_dpredictor(self, s):
        return np.exp(s)

    def predictor_from_param(self, param):
        return np.log(np.asarray(param, dtype=float) - 1.0)

    @staticmethod
    def _parts(theta, u, v):
        lx = np.log(-np.log(u))
        ly = np.log(-np.log(v))
        logs = np.logaddexp(theta * lx, theta * ly)
        a = np.exp(logs / theta)
        return lx, ly, logs, a

    def cdf(self, param, u, v):
        theta = self.check_param(param)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            uu = np.clip(u, 1e-300, 1.0)
            vv = np.clip(v, 1e-300, 1.0)
            x = -np.log(uu)
            y = -np.log(vv)
            # A = (x^theta + y^theta)^(1/theta), exact when one side is 0
            m = np.maximum(x, y)
            ms = np.where(m > 0, m, 1.0)
            a = ms * ((x / ms) ** theta + (y / ms) ** theta) ** (1 / theta)
            out = np.where(m > 0, np.exp(-a), 1.0)
        return np.where((u <= 0) | (v <= 0), 0.0, out)

    def logpdf(self, param, u, v):
        theta = self.check_param(param)
        u, v = _clamp(u), _clamp(v)
        lx, ly, logs, a = self._parts(theta, u, v)
        return (-a - np.log(u) - np.log(v) + (theta - 1) * (lx + ly)
                + (1 / theta - 2) * logs + np.log(a + theta - 1))

    def _hfunc(self, theta, u, v):
        lx, ly, logs, a = self._parts(theta, u, v)
        return np.exp(-a + (1 / theta - 1) * logs + (theta - 1) * ly - np.log(v))

    def hinv(self, param, w, v):
        theta = self.check_param(param)
        return self._hinv_numeric(theta, w, v)

    def tau(self, param):
        theta = self.check_param(param)
        return 1 - 1 / theta

    def tau_to_param(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any((tau < 0) | (tau >= 1)):
            raise CopulaDomainError("Gumbel tau must lie in [0, 1)")
        return 1 / (1 - tau)

    def dlogpdf_du(self, param, u, v):
        theta = np.asarray(param, dtype=float)
        u, v = _clamp(u), _clamp(v)
        lx, ly, logs, a = self._parts(theta, u, v)
        x = np.exp(lx)
        r = np.exp((theta - 1) * lx - logs)  # x^(theta-1) / S
        dx = -a * r + (theta - 1) / x + (1 - 2 * theta) * r + a * r / (a + theta - 1)
        return -1 / u - dx / u

    def _a_theta(self, theta, lx, ly, logs, a):
        ws = np.exp(theta * lx - logs) * lx + np.exp(theta * ly - logs) * ly  # S_theta / S
        return ws, a * (ws / theta - logs / theta**2)

    def dlogpdf_dparam(self, param, u, v):
        theta = np.asarray(param, dtype=float)
        u, v = _clamp(u), _clamp(v)
        lx, ly, logs, a = self._parts(theta, u, v)
        ws, at = self._a_theta(theta, lx, ly, logs, a)
        return (-at + lx + ly - logs / theta**2 + (1 / theta - 2) * ws
                + (at + 1) / (a + theta - 1))

    def dhfunc_dparam(self, param, u, v):
        theta = np.asarray(param, dtype=float)
        u, v = _clamp(u), _clamp(v)
        lx, ly, logs, a = self._parts(theta, u, v)
        ws, at = self._a_theta(theta, lx, ly, logs, a)
        h = np.exp(-a + (1 / theta - 1) * logs + (theta - 1) * ly - np.log(v))
        return h * (-at - logs / theta**2 + (1 / theta - 1) * ws + ly)


def _debye1(x):
    """First Debye function ``D1(x) = x^-1 int_0^x t / (e^t - 1) dt``."""
    if x == 0:
        return 1.0
    if x < 0:
        return _debye1(-x) - x / 2
    val, _ = integrate.quad(lambda t: t / np.expm1(t) if t > 0 else 1.0, 0.0, x,
                            epsabs=1e-14, epsrel=1e-13)
    return val / x


class Frank(CopulaFamily):
    """Frank copula, any real ``theta``; identity parameter link.

    Negative parameters are evaluated through ``c_{-t}(u, v) = c_t(u, 1 - v)``
    so every exponential stays below one.
    """

    name = "frank"
    small = 1e-6

    def param_from_predictor(self, s):
        return np.asarray(s, dtype=float) * 1.0

    def dparam_dpredictor(self, s):
        return np.ones_like(np.asarray(s, dtype=float))

    def predictor_from_param(self, param):
        return np.asarray(param, dtype=float) * 1.0

    def cdf(self, param, u, v):
        theta = self.check_param(param)
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        v = np.clip(np.asarray(v, dtype=float), 0.0, 1.0)
        neg, t, _, vr = self._pos(theta, u, v)
        small = t < self.small
        t = np.where(small, 1.0, t)
        *_, r = self._r(t, u, vr)
        with np.errstate(divide="ignore", invalid="ignore"):
            pos = np.where(
                t < 1.0,
                -np.log1p(np.expm1(-t * u) * np.expm1(-t * vr) / np.expm1(-t)) / t,
                -(np.log(r) - np.log(-np.expm1(-t))) / t)
        # C_{-t}(u, v) = u - C_t(u, 1 - v)
        out = np.where(neg, u - pos, pos)
        out = np.where(small, u * v, out)
        return np.clip(np.where((u <= 0) | (v <= 0), 0.0, out), 0.0, np.minimum(u, v))

    @staticmethod
    def _pos(theta, u, v):
        # reflect to a positive parameter
        neg = theta < 0
        t = np.abs(theta)
        v = np.where(neg, 1 - v, v)
        return neg, t, u, v

    @staticmethod
    def _r(t, u, v):
        # R = (1 - e^-t) - (1 - e^-tu)(1 - e^-tv), summed in the stable order for t
        eu, ev, euv, e1 = np.exp(-t * u), np.exp(-t * v), np.exp(-t * (u + v)), np.exp(-t)
        r = np.where(t < 1.0, -np.expm1(-t) - np.expm1(-t * u) * np.expm1(-t * v),
                     eu + ev - euv - e1)
        return eu, ev, euv, e1, r

    def logpdf(self, param, u, v):
        theta = self.check_param(param)
        u, v = _clamp(u), _clamp(v)
        neg, t, u, v = self._pos(theta, u, v)
        small = t < self.small
        t = np.where(small, 1.0, t)
        *_, r = self._r(t, u, v)
        out = np.log(t) + np.log(-np.expm1(-t)) - t * (u + v) - 2 * np.log(r)
        return np.where(small, 0.0, out)

    def _hfunc(self, theta, u, v):
        neg, t, u, v = self._pos(theta, u, v)
        small = t < self.small
        t = np.where(small, 1.0, t)
        eu, ev, euv, e1, r = self._r(t, u, v)
        out = ev * (-np.expm1(-t * u)) / r
        return np.where(small, u, out)

    def hinv(self, param, w, v):
        theta = self.check_param(param)
        w = np.asarray(w, dtype=float)
        v = _clamp(v)
        neg, t, _, v = self._pos(theta, 0.0, v)
        small = t < self.small
        t = np.where(small, 1.0, t)
        ev = np.exp(-t * v)
        frac = w * (-np.expm1(-t)) / (ev * (1 - w) + w)
        with np.errstate(divide="ignore"):
            u = -np.log1p(-frac) / t
        u = np.where(small, w, u)
        return np.clip(np.where(w >= 1, 1.0, np.where(w <= 0, 0.0, u)), 0.0, 1.0)

    def tau(self, param):
        theta = self.check_param(param)
        flat = np.atleast_1d(theta).astype(float)
        # series tau = theta/9 - theta^3/900 near independence
        out = np.array([t / 9 - t**3 / 900 if abs(t) < self.small
                        else 1 - 4 / t * (1 - _debye1(t))
                        for t in flat.ravel()]).reshape(flat.shape)
        return out if np.ndim(theta) else float(out[0])

    def tau_to_param(self, tau):
        tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
        lo_tau, hi_tau = self.tau(-50.0), self.tau(50.0)
        if np.any((tau_arr <= lo_tau) | (tau_arr >= hi_tau)):
            raise CopulaDomainError(
                f"Frank tau must lie in ({lo_tau:.6f}, {hi_tau:.6f}) for |theta| <= 50")
        out = []
        for t in tau_arr:
            if t == 0:
                out.append(0.0)
                continue
            out.append(optimize.bisect(lambda th: self.tau(th) - t, -50.0, 50.0,
                                       xtol=1e-13, rtol=1e-15, maxiter=200))
        out = np.array(out)
        return out if np.ndim(tau) else float(out[0])

    def dlogpdf_du(self, param, u, v):
        theta = np.asarray(param, dtype=float)
        u, v = _clamp(u), _clamp(v)
        neg, t, ur, vr = self._pos(theta, u, v)
        small = t < self.small
        t = np.where(small, 1.0, t)
        eu, ev, euv, e1, r = self._r(t, ur, vr)
        dr_du = -t * eu * (-np.expm1(-t * vr))
        return np.where(small, -theta * (1 - 2 * v), -t - 2 * dr_du / r)

    def dlogpdf_dparam(self, param, u, v):
        theta = np.asarray(param, dtype=float)
        u, v = _clamp(u), _clamp(v)
        neg, t, ur, vr = self._pos(theta, u, v)
        small = t < self.small
        t = np.where(small, 1.0, t)
        eu, ev, euv, e1, r = self._r(t, ur, vr)
        dr_dt = -ur * eu - vr * ev + (ur + vr) * euv + e1
        out = 1 / t + e1 / (-np.expm1(-t)) - (ur + vr) - 2 * dr_dt / r
        out = np.where(neg, -out, out)
        # first-order expansion c = 1 + theta (1-2u)(1-2v)/2 near independence
        return np.where(small, (1 - 2 * u) * (1 - 2 * v) / 2, out)

    def dhfunc_dparam(self, param, u, v):
        theta = np.asarray(param, dtype=float)
        u, v = _clamp(u), _clamp(v)
        neg, t, ur, vr = self._pos(theta, u, v)
        small = t < self.small
        t = np.where(small, 1.0, t)
        eu, ev, euv, e1, r = self._r(t, ur, vr)
        dr_dt = -ur * eu - vr * ev + (ur + vr) * euv + e1
        h = ev * (-np.expm1(-t * ur)) / r
        out = h * (-vr + ur * eu / (-np.expm1(-t * ur)) - dr_dt / r)
        out = np.where(neg, -out, out)
        return np.where(small, u * (1 - u) * (1 - 2 * v) / 2, out)


class Gaussian(CopulaFamily):
    """Gaussian copula with correlation ``rho``; link ``rho = tanh(s)``."""

    name = "gaussian"
    param_bounds = (-1 + 1e-15, 1 - 1e-15)

    def param_from_predictor(self, s):
        return np.tanh(s)

    def dparam_dpredictor(self, s):
        return 1 - np.tanh(s) ** 2

    def predictor_from_param(self, param):
        return np.arctanh(param)

    def cdf(self, param, u, v):
        rho = self.check_param(param)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        rho, u, v = np.broadcast_arrays(rho, u, v)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = _bvn_cdf(special.ndtri(np.clip(u, 0, 1)),
                           special.ndtri(np.clip(v, 0, 1)), rho)
        out = np.where(u >= 1, v, np.where(v >= 1, u, out))
        return np.clip(np.where((u <= 0) | (v <= 0), 0.0, out), 0.0, 1.0)

    def logpdf(self, param, u, v):
        rho = self.check_param(param)
        x, y = special.ndtri(_clamp(u)), special.ndtri(_clamp(v))
        r2 = 1 - rho**2
        return -0.5 * np.log(r2) - (rho**2 * (x**2 + y**2) - 2 * rho * x * y) / (2 * r2)

    def _hfunc(self, rho, u, v):
        x, y = special.ndtri(u), special.ndtri(v)
        return special.ndtr((x - rho * y) / np.sqrt(1 - rho**2))

    def hinv(self, param, w, v):
        rho = self.check_param(param)
        w = np.asarray(w, dtype=float)
        y = special.ndtri(_clamp(v))
        with np.errstate(divide="ignore"):
            return special.ndtr(np.sqrt(1 - rho**2) * special.ndtri(w) + rho * y)

    def tau(self, param):
        rho = self.check_param(param)
        return 2 / np.pi * np.arcsin(rho)

    def tau_to_param(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(np.abs(tau) >= 1):
            raise CopulaDomainError("tau must lie in (-1, 1)")
        return np.sin(np.pi * tau / 2)

    def dlogpdf_du(self, param, u, v):
        rho = np.asarray(param, dtype=float)
        u = _clamp(u)
        x, y = special.ndtri(u), special.ndtri(_clamp(v))
        dx = -(rho**2 * x - rho * y) / (1 - rho**2)
        return dx / stats.norm.pdf(x)

    def dlogpdf_dparam(self, param, u, v):
        rho = np.asarray(param, dtype=float)
        x, y = special.ndtri(_clamp(u)), special.ndtri(_clamp(v))
        r2 = 1 - rho**2
        q = rho**2 * (x**2 + y**2) - 2 * rho * x * y
        dq = 2 * rho * (x**2 + y**2) - 2 * x * y
        return rho / r2 - (dq * r2 + 2 * rho * q) / (2 * r2**2)

    def dhfunc_dparam(self, param, u, v):
        rho = np.asarray(param, dtype=float)
        x, y = special.ndtri(_clamp(u)), special.ndtri(_clamp(v))
        s = np.sqrt(1 - rho**2)
        z = (x - rho * y) / s
        return stats.norm.pdf(z) * (-y / s + (x - rho * y) * rho / s**3)


class Student(CopulaFamily):
    """Student-t copula with fixed degrees of freedom; link ``rho = tanh(s)``."""

    name = "student"
    param_bounds = (-1 + 1e-15, 1 - 1e-15)

    def __init__(self, df=15.0):
        df = float(df)
        if not df > 2:
            raise CopulaDomainError(f"Student copula needs df > 2, got {df}")
        self.df = df

    def __repr__(self):
        return f"Student(df={self.df:g})"

    param_from_predictor = Gaussian.param_from_predictor
    dparam_dpredictor = Gaussian.dparam_dpredictor
    predictor_from_param = Gaussian.predictor_from_param
    tau = Gaussian.tau
    tau_to_param = Gaussian.tau_to_param

    def cdf(self, param, u, v):
        rho = self.check_param(param)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        rho, u, v = np.broadcast_arrays(rho, u, v)
        inner = (u > 0) & (u < 1) & (v > 0) & (v < 1)
        edge = np.where((u <= 0) | (v <= 0), 0.0, np.where(u >= 1, v, u))
        if float(self.df).is_integer():
            uc, vc = np.where(inner, u, 0.5), np.where(inner, v, 0.5)
            val = _bvt_cdf(int(self.df), stats.t.ppf(uc, self.df), stats.t.ppf(vc, self.df), rho)
            val = np.clip(val, 0.0, np.minimum(uc, vc))
            return np.where(inner, val, edge)
        out = np.array(edge, dtype=float)
        for idx in zip(*np.nonzero(inner)):
            uu, vv, rr = u[idx], v[idx], rho[idx]
            val, _ = integrate.quad(
                lambda s: float(self._hfunc(rr, uu, s)), 0.0, vv,
                epsabs=1e-14, epsrel=1e-12, limit=200)
            out[idx] = min(max(val, 0.0), min(uu, vv))
        return out

    def logpdf(self, param, u, v):
        rho = self.check_param(param)
        nu = self.df
        x = stats.t.ppf(_clamp(u), nu)
        y = stats.t.ppf(_clamp(v), nu)
        r2 = 1 - rho**2
        m = (x**2 + y**2 - 2 * rho * x * y) / (nu * r2)
        const = (special.gammaln((nu + 2) / 2) + special.gammaln(nu / 2)
                 - 2 * special.gammaln((nu + 1) / 2))
        return (const - 0.5 * np.log(r2) - (nu + 2) / 2 * np.log1p(m)
                + (nu + 1) / 2 * (np.log1p(x**2 / nu) + np.log1p(y**2 / nu)))

    def _scale(self, y, rho):
        nu = self.df
        return np.sqrt((nu + y**2) * (1 - rho**2) / (nu + 1))

    def _hfunc(self, rho, u, v):
        nu = self.df
        x = stats.t.ppf(u, nu)
        y = stats.t.ppf(v, nu)
        return stats.t.cdf((x - rho * y) / self._scale(y, rho), nu + 1)

    def hinv(self, param, w, v):
        rho = self.check_param(param)
        nu = self.df
        w = np.asarray(w, dtype=float)
        y = stats.t.ppf(_clamp(v), nu)
        return stats.t.cdf(stats.t.ppf(w, nu + 1) * self._scale(y, rho) + rho * y, nu)

    def dlogpdf_du(self, param, u, v):
        rho = np.asarray(param, dtype=float)
        nu = self.df
        x = stats.t.ppf(_clamp(u), nu)
        y = stats.t.ppf(_clamp(v), nu)
        r2 = 1 - rho**2
        m = (x**2 + y**2 - 2 * rho * x * y) / (nu * r2)
        dm = (2 * x - 2 * rho * y) / (nu * r2)
        dx = -(nu + 2) / 2 * dm / (1 + m) + (nu + 1) * x / (nu + x**2)
        return dx / stats.t.pdf(x, nu)

    def dlogpdf_dparam(self, param, u, v):
        rho = np.asarray(param, dtype=float)
        nu = self.df
        x = stats.t.ppf(_clamp(u), nu)
        y = stats.t.ppf(_clamp(v), nu)
        r2 = 1 - rho**2
        q = x**2 + y**2 - 2 * rho * x * y
        m = q / (nu * r2)
        dm = (-2 * x * y * r2 + 2 * rho * q) / (nu * r2**2)
        return rho / r2 - (nu + 2) / 2 * dm / (1 + m)

    def dhfunc_dparam(self, param, u, v):
        rho = np.asarray(param, dtype=float)
        nu = self.df
        x = stats.t.ppf(_clamp(u), nu)
        y = stats.t.ppf(_clamp(v), nu)
        s = np.sqrt(1 - rho**2)
        k = np.sqrt((nu + y**2) / (nu + 1))
        z = (x - rho * y) / (s * k)
        dz = (-y / s + (x - rho * y) * rho / s**3) / k
        return stats.t.pdf(z, nu + 1) * dz


def _bvt_cdf(nu: int, dh, dk, r):
    """P(X < dh, Y < dk) for the bivariate t with integer ``nu`` degrees of freedom.

    Finite series of Dunnett and Sobel (1954), in the recurrence form used by
    Genz's ``bvtl``; exact up to rounding.
    """
    dh, dk, r = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (dh, dk, r)))
    tpi = 2 * math.pi
    ors = 1 - r * r
    hrk, krh = dh - r * dk, dk - r * dh
    with np.errstate(invalid="ignore", divide="ignore"):
        xnhk = np.nan_to_num(hrk**2 / (hrk**2 + ors * (nu + dk**2)))
        xnkh = np.nan_to_num(krh**2 / (krh**2 + ors * (nu + dh**2)))
    hs, ks = np.sign(hrk), np.sign(krh)
    if nu % 2 == 0:
        bvt = np.arctan2(np.sqrt(ors), -r) / tpi
        gmph = dh / np.sqrt(16 * (nu + dh**2))
        gmpk = dk / np.sqrt(16 * (nu + dk**2))
        btnckh = 2 * np.arctan2(np.sqrt(xnkh), np.sqrt(1 - xnkh)) / math.pi
        btpdkh = 2 * np.sqrt(xnkh * (1 - xnkh)) / math.pi
        btnchk = 2 * np.arctan2(np.sqrt(xnhk), np.sqrt(1 - xnhk)) / math.pi
        btpdhk = 2 * np.sqrt(xnhk * (1 - xnhk)) / math.pi
        for j in range(1, nu // 2 + 1):
            bvt = bvt + gmph * (1 + ks * btnckh) + gmpk * (1 + hs * btnchk)
            btnckh = btnckh + btpdkh
            btpdkh = 2 * j * btpdkh * (1 - xnkh) / (2 * j + 1)
            btnchk = btnchk + btpdhk
            btpdhk = 2 * j * btpdhk * (1 - xnhk) / (2 * j + 1)
            gmph = gmph * (2 * j - 1) / (2 * j * (1 + dh**2 / nu))
            gmpk = gmpk * (2 * j - 1) / (2 * j * (1 + dk**2 / nu))
    else:
        qhrk = np.sqrt(np.maximum(dh**2 + dk**2 - 2 * r * dh * dk + nu * ors, 0.0))
        hkrn, hkn, hpk = dh * dk + r * nu, dh * dk - nu, dh + dk
        bvt = np.arctan2(-math.sqrt(nu) * (hkn * qhrk + hpk * hkrn),
                         hkn * hkrn - nu * hpk * qhrk) / tpi
        bvt = np.where(bvt < -1e-15, bvt + 1, bvt)
        gmph = dh / (tpi * math.sqrt(nu) * (1 + dh**2 / nu))
        gmpk = dk / (tpi * math.sqrt(nu) * (1 + dk**2 / nu))
        btnckh = np.sqrt(xnkh)
        btpdkh = btnckh
        btnchk = np.sqrt(xnhk)
        btpdhk = btnchk
        for j in range(1, (nu - 1) // 2 + 1):
            bvt = bvt + gmph * (1 + ks * btnckh) + gmpk * (1 + hs * btnchk)
            btpdkh = (2 * j - 1) * btpdkh * (1 - xnkh) / (2 * j)
            btnckh = btnckh + btpdkh
            btpdhk = (2 * j - 1) * btpdhk * (1 - xnhk) / (2 * j)
            btnchk = btnchk + btpdhk
            gmph = gmph * 2 * j / ((2 * j + 1) * (1 + dh**2 / nu))
            gmpk = gmpk * 2 * j / ((2 * j + 1) * (1 + dk**2 / nu))
    return bvt


def _owen_term(h, k, r, s):
    if h != 0:
        return special.owens_t(h, (k - r * h) / (h * s))
    return 0.25 * math.copysign(1.0, k)


def _bvn_cdf(h, k, rho):
    """Standard bivariate normal cdf via Owen's T function."""
    h, k, rho = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float),
                                    np.asarray(rho, float))
    out = np.empty(h.shape)
    for idx in np.ndindex(h.shape):
        hh, kk, r = float(h[idx]), float(k[idx]), float(rho[idx])
        if np.isneginf(hh) or np.isneginf(kk):
            out[idx] = 0.0
        elif np.isposinf(hh):
            out[idx] = special.ndtr(kk)
        elif np.isposinf(kk):
            out[idx] = special.ndtr(hh)
        elif hh == 0 and kk == 0:
            out[idx] = 0.25 + math.asin(r) / (2 * math.pi)
        else:
            s = math.sqrt(1 - r * r)
            corr = 0.5 if (hh * kk < 0 or (hh * kk == 0 and hh + kk < 0)) else 0.0
            out[idx] = (0.5 * (special.ndtr(hh) + special.ndtr(kk))
                        - _owen_term(hh, kk, r, s) - _owen_term(kk, hh, r, s) - corr)
    return out


_REGISTRY = {"clayton": Clayton, "frank": Frank, "gumbel": Gumbel,
             "gaussian": Gaussian, "student": Student}


def get_family(name: str | CopulaFamily, df: float = 15.0) -> CopulaFamily:
    """Return a copula family from its lowercase name (``"student"`` takes ``df``)."""
    if isinstance(name, CopulaFamily):
        return name
    key = str(name).strip().lower()
    if key not in _REGISTRY:
        raise CopulaDomainError(
            f"unknown copula family {name!r}; expected one of {', '.join(FAMILY_NAMES)}")
    if key == "student":
        return Student(df)
    return _REGISTRY[key]()


# Functional interface ---------------------------------------------------------

def param_from_predictor(family, s):
    """Map a real linear predictor to the family's parameter range."""
    s_arr = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s_arr)):
        raise CopulaDomainError("copula linear predictor must be finite")
    out = get_family(family).param_from_predictor(s_arr)
    return out if np.ndim(s) else float(out)


def cdf(family, param, u, v):
    return get_family(family).cdf(param, u, v)


def hfunc(family, param, u, v):
    v_arr = np.asarray(v, dtype=float)
    if np.any((v_arr < 0) | (v_arr > 1)):
        raise CopulaDomainError("v must lie in [0, 1]")
    return get_family(family).hfunc(param, u, v)


def hinv(family, param, w, v):
    return get_family(family).hinv(param, w, v)


def density(family, param, u, v):
    return get_family(family).pdf(param, u, v)


def tau(family, param):
    return get_family(family).tau(param)


def tau_to_param(family, tau_value):
    return get_family(family).tau_to_param(tau_value)
