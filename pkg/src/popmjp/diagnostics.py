"""MCMC output analysis and exactness audits."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "Trace",
    "autocorrelation",
    "effective_sample_size",
    "integrated_autocorrelation_time",
    "path_credible_band",
    "lemma1_check",
    "Lemma1Report",
    "geweke_test",
    "GewekeReport",
    "format_report",
]


@dataclass
class Trace:
    """Per-sweep parameters, log densities, jump counts and wall-clock seconds."""

    param_names: tuple
    params: list = field(default_factory=list)
    log_density: list = field(default_factory=list)
    n_jumps: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, params, log_density: float, n_jumps: int, seconds: float):
        self.params.append(np.asarray(params, dtype=float).copy())
        self.log_density.append(float(log_density))
        self.n_jumps.append(int(n_jumps))
        self.seconds.append(float(seconds))

    def __len__(self):
        return len(self.params)

    def column(self, name: str) -> np.ndarray:
        if name in self.param_names:
            k = self.param_names.index(name)
            return np.array([p[k] for p in self.params])
        if name in ("log_density", "n_jumps", "seconds"):
            return np.asarray(getattr(self, name), dtype=float)
        raise KeyError(name)

    def to_csv(self, path=None, sweeps=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sweep", *self.param_names, "log_density", "n_jumps", "seconds"])
        sweeps = range(1, len(self) + 1) if sweeps is None else sweeps
        for k, (s, p, ld, nj, sec) in enumerate(zip(sweeps, self.params, self.log_density, self.n_jumps,
                                                    self.seconds)):
            w.writerow([s, *[repr(float(v)) for v in p], repr(ld), nj, repr(sec)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "Trace":
        if isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source) as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        names = tuple(header[1:-3])
        tr = cls(names)
        for r in rows[1:]:
            tr.append([float(v) for v in r[1:-3]], float(r[-3]), int(r[-2]), float(r[-1]))
        return tr


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation at lags ``0..max_lag`` (FFT based)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2 * max_lag:
        raise ValueError("need at least 2 * max_lag samples")
    xc = x - x.mean()
    var = np.dot(xc, xc) / n
    if var <= 0:
        warnings.warn("constant series; autocorrelation set to the identity", RuntimeWarning)
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return out
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1] / n
    return acov / acov[0]


def integrated_autocorrelation_time(x) -> float:
    """``1 + 2 sum rho_k`` truncated by the initial monotone positive sequence."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if np.ptp(x) == 0:
        return math.inf
    rho = autocorrelation(x, n // 2 - 1 if n % 2 == 0 else (n - 1) // 2)
    pairs = rho[: 2 * (len(rho) // 2)].reshape(-1, 2).sum(axis=1)
    positive = np.nonzero(pairs <= 0)[0]
    m = positive[0] if len(positive) else len(pairs)
    gam = np.minimum.accumulate(pairs[:m])
    return max(-1.0 + 2.0 * gam.sum(), 1.0 / n)


def effective_sample_size(x) -> float:
    """``n / tau`` with Geyer's initial monotone sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 100:
        raise ValueError("ESS needs at least 100 samples")
    if np.ptp(x) == 0:
        warnings.warn("constant series; ESS reported as 0", RuntimeWarning)
        return 0.0
    return n / integrated_autocorrelation_time(x)


def path_credible_band(samples, level: float = 0.95):
    """Pointwise mean and central quantile band of path samples ``(n, grid)``."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 100:
        raise ValueError("need at least 100 path samples on a common grid")
    tail = (1 - level) / 2
    return samples.mean(axis=0), np.quantile(samples, tail, axis=0), np.quantile(samples, 1 - tail, axis=0)


@dataclass
class Lemma1Report:
    kappas: np.ndarray
    sample_means: np.ndarray
    expected_means: np.ndarray
    standard_errors: np.ndarray
    mean_square_errors: np.ndarray
    target: float

    @property
    def z_scores(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (self.sample_means - self.expected_means) / self.standard_errors
        return np.where(self.standard_errors > 0, z, 0.0)

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.mean_square_errors) < 0))

    def passed(self, z_max: float = 4.0) -> bool:
        return bool(np.all(np.abs(self.z_scores) < z_max) and (self.monotone or len(self.kappas) < 2))


def lemma1_check(a: float, b: float, c: float, kappas, n_draws: int, rng) -> Lemma1Report:
    """Monte Carlo check that ``(1 + a/k)^V``, ``V ~ Poisson((k+b)c)``, tends to ``e^{ac}``."""
    kappas = np.asarray(kappas, dtype=float)
    if np.any(np.diff(kappas) <= 0):
        raise ValueError("kappa values must increase")
    if np.any(1 + a / kappas <= 0):
        raise ValueError("need 1 + a/kappa > 0")
    target = math.exp(a * c)
    means, expected, ses, mses = [], [], [], []
    for k in kappas:
        v = rng.poisson((k + b) * c, size=n_draws)
        u = np.exp(v * math.log1p(a / k))
        means.append(u.mean())
        expected.append(math.exp(a * c + a * b * c / k))
        ses.append(u.std(ddof=1) / math.sqrt(n_draws))
        mses.append(np.mean((u - target) ** 2))
    return Lemma1Report(kappas, np.array(means), np.array(expected), np.array(ses), np.array(mses), target)


def lemma1_moments(a: float, b: float, c: float, kappa: float) -> tuple[float, float]:
    """Closed-form first and second moments of ``(1 + a/k)^V``."""
    m1 = math.exp(a * c + a * b * c / kappa)
    m2 = math.exp(2 * a * c + (a * a * c + 2 * a * b * c) / kappa + a * a * b * c / kappa**2)
    return m1, m2


@dataclass
class GewekeReport:
    names: tuple
    forward_means: np.ndarray
    gibbs_means: np.ndarray
    z_scores: np.ndarray
    n_forward: int
    n_gibbs: int

    @property
    def inconclusive(self) -> bool:
        return self.n_forward == 0 or self.n_gibbs == 0

    def passed(self, threshold: float = 3.0) -> bool:
        return (not self.inconclusive) and bool(np.all(np.abs(self.z_scores) < threshold))


def _mean_se(x, correlated: bool):
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return float(x.mean()), 0.0
    var = x.var(ddof=1)
    tau = integrated_autocorrelation_time(x) if correlated and len(x) >= 100 else 1.0
    return float(x.mean()), math.sqrt(var * tau / len(x))


def geweke_test(model, config, n_forward: int, n_gibbs: int, rng, observations=None,
                statistics=None) -> GewekeReport:
    """Compare marginal-conditional and successive-conditional simulators.

    The forward simulator draws parameters from the prior, a path and fresh
    observations; the Gibbs simulator alternates path, parameter and
    observation updates.  Test functions default to every free parameter
    and the number of jumps.
    """
    from .samplers import ChainState, gibbs_sweep

    if observations is None:
        observations = []
    names = [n for n, f in zip(model.param_names, model.free) if f] + ["n_jumps"]

    def features(params, path):
        free = [p for p, f in zip(params, model.free) if f]
        return np.array(free + [len(path.times) - 1], dtype=float)

    stat = statistics or features
    if n_forward == 0 or n_gibbs == 0:
        nan = np.full(len(names), np.nan)
        return GewekeReport(tuple(names), nan, nan, nan, n_forward, n_gibbs)
    fwd = []
    for _ in range(n_forward):
        params = model.sample_prior(rng)
        path = model.simulate(params, rng)
        fwd.append(stat(params, path))
    fwd = np.array(fwd)
    params = model.sample_prior(rng)
    path = model.simulate(params, rng)
    obs = [o.simulate(path, rng) for o in observations]
    chain = ChainState(path, params)
    gib = []
    for _ in range(n_gibbs):
        chain = gibbs_sweep(chain, model, config, obs, rng)
        obs = [o.simulate(chain.path, rng) for o in observations]
        gib.append(stat(chain.params, chain.path))
    gib = np.array(gib)
    fm, gm, z = [], [], []
    for k in range(len(names)):
        m1, s1 = _mean_se(fwd[:, k], False)
        m2, s2 = _mean_se(gib[:, k], True)
        fm.append(m1)
        gm.append(m2)
        se = math.hypot(s1, s2)
        z.append((m1 - m2) / se if se > 0 else 0.0)
    return GewekeReport(tuple(names), np.array(fm), np.array(gm), np.array(z), n_forward, n_gibbs)


def format_report(items: dict) -> str:
    """``key: value`` lines."""
    lines = []
    for k, v in items.items():
        if isinstance(v, (float, np.floating)):
            v = f"{float(v):.6g}"
        elif isinstance(v, np.ndarray):
            v = " ".join(f"{float(x):.6g}" for x in v.ravel())
        lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"
