"""Simulation data-generating processes with oracle values attached.

Fifteen settings are implemented, organized in four families:

=========  =============================================================
a4s1       Kang-Schafer: nonlinear observed features of a Gaussian
           latent, linear prognostic score in the latent, extreme
           propensity scores
a4s2-a4s5  linear (A) or squared (B) prognostic score with a probit
           propensity under strong (sigma=10) or weak (sigma=sqrt(30))
           overlap
a5s1-a5s4  100 clipped-Gaussian features; sparse linear / transformed
           prognostic and logistic propensity combinations
a6s1-a6s3  variable selection among 100 raw features with weak signals
           and slight misspecification
a7s1-a7s3  four nonlinear observed features of a uniform latent; scores
           linear or nonlinear in the latent
=========  =============================================================

Every generated dataset stores the per-row oracle values m0 and e (the
scores may live in the latent, so values rather than functions of X are
the faithful oracle). The estimand theta0 = E[Y(0) | T=1] and the
population treated fraction are Monte Carlo calibrated once per setting
under a pinned calibration seed, and the calibration cross-checks the
two identity forms of theta0 against each other.

Draw order is fixed per generator (latents/features first, then the
treatment uniforms, then outcome noise); chi-square(1) draws are squared
standard normals and Bernoulli draws are uniform thresholds, so streams
are reproducible from the seed recipe in ``rng``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from . import rng as rngmod
from .data import Dataset
from .errors import IdentityMismatch, MissingOracles

#: Pinned seed and size for the theta0 calibration pass.
CALIBRATION_SEED = 20240601
CALIBRATION_SIZE = 1_000_000


@dataclass(frozen=True)
class SyntheticDataset:
    """A Dataset plus per-row oracle values and calibration constants."""

    dataset: Dataset
    m0: np.ndarray
    e: np.ndarray
    setting: str
    latent: np.ndarray | None = None
    theta0: float | None = None
    treat_frac: float | None = None

    @property
    def w_star(self) -> np.ndarray:
        """Oracle density ratio e/(1-e) * P(T=0)/P(T=1) per row."""
        if self.treat_frac is None:
            raise MissingOracles("treated fraction not calibrated; call with_calibration")
        ratio = (1.0 - self.treat_frac) / self.treat_frac
        return self.e / (1.0 - self.e) * ratio

    def with_calibration(self) -> "SyntheticDataset":
        cal = calibration(self.setting)
        return replace(self, theta0=cal.theta0, treat_frac=cal.treat_frac)


def _assemble(setting, rng, x, m0_vals, e_vals, latent=None) -> SyntheticDataset:
    """Common tail of every generator: draw T, then noise, then wrap up."""
    n = x.shape[0]
    t = (rng.uniform(size=n) < e_vals).astype(np.int8)
    if t.sum() == 0:
        t[int(np.argmax(e_vals))] = 1
    elif t.sum() == n:
        t[int(np.argmin(e_vals))] = 0
    noise = rng.standard_normal(n)
    y = m0_vals + noise  # Y(0); estimators of theta0 never use treated Y
    return SyntheticDataset(
        dataset=Dataset(X=x, T=t, Y=y),
        m0=m0_vals,
        e=e_vals,
        setting=setting,
        latent=latent,
    )


def _phi(z: np.ndarray) -> np.ndarray:
    """Standard normal CDF."""
    return ndtr(z)


def gen_kang_schafer(n: int, seed: int) -> SyntheticDataset:
    """Kang-Schafer design (setting a4s1)."""
    if n < 50:
        raise ValueError("n must be at least 50")
    rng = rngmod.child_generator(seed, "dgp")
    u = rng.standard_normal((n, 6))
    x = np.column_stack(
        [
            np.exp(u[:, 0] / 2.0),
            u[:, 0] / (1.0 + np.exp(u[:, 0])) + 10.0,
            (u[:, 0] * u[:, 2] / 25.0 + 0.6) ** 3,
            (u[:, 1] * u[:, 3] + 20.0) ** 2,
        ]
    )
    m0 = 210.0 + 27.4 * u[:, 0] + 13.7 * (u[:, 1] + u[:, 2] + u[:, 3])
    e = 1.0 / (1.0 + np.exp(u[:, 0] - 0.5 * u[:, 1] + 0.25 * u[:, 2] + 0.1 * u[:, 3]))
    return _assemble("a4s1", rng, x, m0, e, latent=u)


_CHATTO_COV = np.array([[2.0, 1.0, -1.0], [1.0, 1.0, -0.5], [-1.0, -0.5, 1.0]])


def _chatto_features(rng, n):
    chol = np.linalg.cholesky(_CHATTO_COV)
    x123 = rng.standard_normal((n, 3)) @ chol.T
    x4 = rng.uniform(-3.0, 3.0, size=n)
    x5 = rng.standard_normal(n) ** 2  # chi-square(1)
    x6 = (rng.uniform(size=n) < 0.5).astype(np.float64)
    return np.column_stack([x123, x4, x5, x6])


def gen_chatto(design: str, sigma: float, n: int, seed: int) -> SyntheticDataset:
    """Linear/probit designs (settings a4s2-a4s5)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if design not in ("A", "B"):
        raise ValueError("design must be 'A' or 'B'")
    rng = rngmod.child_generator(seed, "dgp")
    x = _chatto_features(rng, n)
    if design == "A":
        m0 = x.sum(axis=1)
    else:
        m0 = (x[:, 0] + x[:, 1] + x[:, 4]) ** 2
    score = (
        x[:, 0] + 2.0 * x[:, 1] - 2.0 * x[:, 2] - x[:, 3] - 0.5 * x[:, 4] + x[:, 5]
    ) / sigma
    e = np.clip(_phi(score), 1e-12, 1.0 - 1e-12)
    label = {("A", 10.0): "a4s2", ("B", 10.0): "a4s3"}.get(
        (design, round(sigma, 6)), None
    )
    if label is None:
        label = "a4s4" if design == "A" else "a4s5"
    return _assemble(label, rng, x, m0, e)


def _highdim_g(x: np.ndarray) -> np.ndarray:
    g = x.copy()
    g[:, 0] = np.exp(x[:, 0] / 2.0)
    g[:, 1] = np.sin(x[:, 1])
    g[:, 2] = x[:, 2] ** 2
    g[:, 3] = x[:, 5] / (1.0 + np.exp(x[:, 0]))
    g[:, 4] = x[:, 3]
    g[:, 5] = x[:, 4]
    return g


def gen_highdim(setting: int, n: int, seed: int) -> SyntheticDataset:
    """High-dimensional designs (settings a5s1-a5s4), p = 100."""
    if setting not in (1, 2, 3, 4):
        raise ValueError("setting must be 1..4")
    if n < 100:
        raise ValueError("n must be at least 100")
    p = 100
    rng = rngmod.child_generator(seed, "dgp")
    x = np.clip(rng.standard_normal((n, p)), -1.0, 1.0)
    alpha = (np.arange(1, p + 1) <= 10).astype(np.float64)
    beta = (np.arange(1, p + 1) <= 5).astype(np.float64)
    g = _highdim_g(x)
    if setting == 1:
        m0, score = x @ alpha, x @ beta
    elif setting == 2:
        m0, score = x @ alpha, g @ beta
    elif setting == 3:
        m0, score = g @ alpha, x @ beta
    else:
        mix = x + 0.2 * g
        m0, score = mix @ alpha, mix @ beta
    e = 1.0 / (1.0 + np.exp(-score))
    return _assemble(f"a5s{setting}", rng, x, m0, e)


def gen_varsel_raw(setting: int, n: int, seed: int) -> SyntheticDataset:
    """Raw-feature selection designs (settings a6s1-a6s3), p = 100."""
    if setting not in (1, 2, 3):
        raise ValueError("setting must be 1..3")
    p = 100
    rng = rngmod.child_generator(seed, "dgp")
    if setting == 1:
        u = rng.uniform(size=(n, p))
        x = u.copy()
        x[:, 0] = 3.0 * (np.exp(u[:, 0] / 2.0) - 1.0)
        x[:, 1] = 2.0 * u[:, 1] / (1.0 + np.exp(u[:, 4]))
        x[:, 2] = (u[:, 1] * u[:, 2] / 2.0 + 0.6) ** 3
        x[:, 3] = (u[:, 1] + u[:, 3]) ** 2
        m0 = (
            1.74 * x[:, 1]
            + 2.0 * x[:, 2]
            + 0.1 * (x[:, 4] > 0.5)
            + 0.2 * (x[:, 7] - 0.5) ** 2
            + 0.1 * u[:, 0]
        )
        score = (
            0.5 * x[:, 1]
            + x[:, 2]
            + 2.0 * x[:, 4]
            + 0.1 * x[:, 7]
            + 0.2 * (x[:, 7] - 0.5) ** 2
            - 1.0
        )
        e = 1.0 / (1.0 + np.exp(score))
        return _assemble("a6s1", rng, x, m0, e, latent=u)
    if setting == 2:
        # first six columns follow the a4s2-a4s5 covariate law; the
        # remaining are independent standard normal noise features
        x6 = _chatto_features(rng, n)
        rest = rng.standard_normal((n, p - 6))
        x = np.column_stack([x6, rest])
        m0 = x[:, 0] + x[:, 4] + 0.1 * x[:, 3] + 0.1 * x[:, 5]
        score = 1.5 + (
            x[:, 0]
            + 0.2 * x[:, 1]
            + 0.2 * x[:, 2]
            + 4.0 * x[:, 3]
            - 0.1 * x[:, 4]
            + 0.5 * x[:, 5]
            - 6.0
        ) / math.sqrt(10.0)
        e = 1.0 / (1.0 + np.exp(score))
        return _assemble("a6s2", rng, x, m0, e)
    x = rng.standard_normal((n, p))
    j = np.arange(1, p + 1)
    alpha = np.where(j <= 4, 0.4, 0.0)
    alpha[j >= 7] = 0.1 * (j[j >= 7] - 6.0) ** -2
    beta = np.zeros(p)
    beta[j >= 5] = (j[j >= 5] - 4.0) ** -2.0
    m0 = x @ (0.5 * alpha + 0.1 * beta)
    score = -1.0 + 2.0 * (x @ alpha) + 0.2 * ((x**2) @ beta)
    e = 1.0 / (1.0 + np.exp(-score))
    return _assemble("a6s3", rng, x, m0, e)


def gen_varsel_basis(setting: int, n: int, seed: int) -> SyntheticDataset:
    """Basis-dictionary selection designs (settings a7s1-a7s3), 4 features."""
    if setting not in (1, 2, 3):
        raise ValueError("setting must be 1..3")
    rng = rngmod.child_generator(seed, "dgp")
    u = rng.uniform(size=(n, 4))
    x = np.column_stack(
        [
            np.exp(u[:, 0] / 2.0),
            u[:, 0] / (1.0 + np.exp(u[:, 0])),
            (u[:, 0] * u[:, 2] / 25.0 + 0.6) ** 3,
            (u[:, 1] + u[:, 3]) ** 2,
        ]
    )
    if setting in (1, 3):
        m0 = 210.0 + 27.4 * u[:, 0] + 13.7 * (u[:, 1] + u[:, 2] + u[:, 3])
    else:
        u2sq = u[:, 1] ** 2
        m0 = (
            210.0
            + 27.4 * np.exp(u[:, 0])
            + 13.7 * u2sq * (u2sq > 0.2)
            + 13.7 * (u[:, 1] + u[:, 2]) ** 2
            + 13.7 * u[:, 3]
            + 0.05 * (u[:, 1] + u[:, 2]) * u2sq * (u2sq > 0.6)
        )
    if setting == 1:
        score = (1.0 + u[:, 0] - 0.5 * u[:, 1] + 0.25 * u[:, 2] + 0.1 * u[:, 3]) / 2.0
    elif setting == 2:
        score = 1.0 + u[:, 0] - u[:, 1] + 1.5 * u[:, 2] + 0.1 * u[:, 3]
    else:
        score = (1.0 + x[:, 0] - 0.5 * x[:, 1] + 0.25 * x[:, 2] - 0.1 * x[:, 3]) / 2.0
    e = 1.0 / (1.0 + np.exp(score))
    return _assemble(f"a7s{setting}", rng, x, m0, e, latent=u)


#: Registry of the 15 implemented settings.
SETTINGS: dict[str, dict] = {
    "a4s1": {"factory": gen_kang_schafer, "family": "lowdim-learned"},
    "a4s2": {
        "factory": lambda n, seed: gen_chatto("A", 10.0, n, seed),
        "family": "lowdim-learned",
    },
    "a4s3": {
        "factory": lambda n, seed: gen_chatto("B", 10.0, n, seed),
        "family": "lowdim-learned",
    },
    "a4s4": {
        "factory": lambda n, seed: gen_chatto("A", math.sqrt(30.0), n, seed),
        "family": "lowdim-learned",
    },
    "a4s5": {
        "factory": lambda n, seed: gen_chatto("B", math.sqrt(30.0), n, seed),
        "family": "lowdim-learned",
    },
    **{
        f"a5s{s}": {
            "factory": (lambda s: lambda n, seed: gen_highdim(s, n, seed))(s),
            "family": "highdim-learned",
        }
        for s in (1, 2, 3, 4)
    },
    **{
        f"a6s{s}": {
            "factory": (lambda s: lambda n, seed: gen_varsel_raw(s, n, seed))(s),
            "family": "varsel-raw",
        }
        for s in (1, 2, 3)
    },
    **{
        f"a7s{s}": {
            "factory": (lambda s: lambda n, seed: gen_varsel_basis(s, n, seed))(s),
            "family": "varsel-basis",
        }
        for s in (1, 2, 3)
    },
}


def make_dataset(setting: str, n: int, seed: int) -> SyntheticDataset:
    """Generate a dataset for a registered setting id."""
    if setting not in SETTINGS:
        raise KeyError(f"unknown DGP setting {setting!r}")
    return SETTINGS[setting]["factory"](n, seed)


@dataclass(frozen=True)
class Calibration:
    setting: str
    theta0: float
    treat_frac: float
    form_outcome: float
    form_weight: float
    combined_se: float
    n_mc: int
    seed: int


_CAL_CACHE: dict[str, Calibration] = {}


def calibrate_theta0(
    setting: str,
    n_mc: int = CALIBRATION_SIZE,
    seed: int = CALIBRATION_SEED,
    batch: int = 100_000,
) -> Calibration:
    """Monte Carlo calibration of theta0 = E[Y(0) | T=1].

    Both identity forms are computed from realized draws: the outcome
    form averages m0 over treated rows, the weight form averages
    w*(X) Y over control rows. They must agree within three combined
    standard errors or the setting's implementation is buggy.
    """
    if n_mc < 100_000:
        raise ValueError("calibration needs at least 1e5 draws")
    factory = SETTINGS[setting]["factory"]
    m0_parts, e_parts, t_parts, y_parts = [], [], [], []
    n_batches = int(np.ceil(n_mc / batch))
    for b in range(n_batches):
        size = min(batch, n_mc - b * batch)
        sd = factory(size, rngmod.hash64(seed, "calibration", b))
        m0_parts.append(sd.m0)
        e_parts.append(sd.e)
        t_parts.append(sd.dataset.T)
        y_parts.append(sd.dataset.Y)
    m0 = np.concatenate(m0_parts)
    e = np.concatenate(e_parts)
    t = np.concatenate(t_parts)
    y = np.concatenate(y_parts)
    treated = t == 1
    n_t, n_c = int(treated.sum()), int((~treated).sum())
    form_a = float(m0[treated].mean())
    se_a = float(m0[treated].std(ddof=1) / np.sqrt(n_t))
    # population ratio P(T=0)/P(T=1) from E[e]; the realized-count ratio
    # would inject binomial noise that multiplies the whole mean
    p1 = float(e.mean())
    wstar = e / (1.0 - e) * ((1.0 - p1) / p1)
    wy = wstar[~treated] * y[~treated]
    form_b = float(wy.mean())
    se_b = float(wy.std(ddof=1) / np.sqrt(n_c))
    combined = float(np.hypot(se_a, se_b))
    if abs(form_a - form_b) > 3.0 * combined:
        raise IdentityMismatch(
            f"{setting}: theta0 forms disagree ({form_a:.4f} vs {form_b:.4f}, "
            f"3se={3 * combined:.4f})"
        )
    return Calibration(
        setting=setting,
        theta0=form_a,
        treat_frac=p1,
        form_outcome=form_a,
        form_weight=form_b,
        combined_se=combined,
        n_mc=n_mc,
        seed=seed,
    )


def calibration(setting: str) -> Calibration:
    """Cached calibration under the pinned seed and size."""
    if setting not in _CAL_CACHE:
        _CAL_CACHE[setting] = calibrate_theta0(setting)
    return _CAL_CACHE[setting]
