"""Image-quality metrics and paired agreement statistics."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .volume import MultiEchoVolume

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03
EXACT_LIMIT = 16


def _arrays(a, b):
    a = a.data if isinstance(a, MultiEchoVolume) else np.asarray(a)
    b = b.data if isinstance(b, MultiEchoVolume) else np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def rmse(a, b) -> float:
    a, b = _arrays(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak SNR in dB; ``math.inf`` when the inputs are identical."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    a, b = _arrays(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def _local_mean(x: np.ndarray, window: np.ndarray, axes) -> np.ndarray:
    for axis in axes:
        x = ndimage.correlate1d(x, window, axis=axis, mode="mirror")
    return x


def ssim_map(a, b, dynamic_range: float = 1.0, window_size=SSIM_WINDOW, sigma=SSIM_SIGMA, axes=None):
    a, b = _arrays(a, b)
    axes = tuple(range(a.ndim)) if axes is None else axes
    w = gaussian_window(window_size, sigma)
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    mu_a = _local_mean(a, w, axes)
    mu_b = _local_mean(b, w, axes)
    var_a = _local_mean(a * a, w, axes) - mu_a * mu_a
    var_b = _local_mean(b * b, w, axes) - mu_b * mu_b
    cov = _local_mean(a * b, w, axes) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, per_slice: bool = False, **kwargs) -> float:
    """Mean structural similarity over a 3D volume (one echo).

    Local statistics use a separable Gaussian window (11 voxels, sigma 1.5)
    with mirrored borders. ``per_slice=True`` averages 2D SSIM over z-slices
    instead.
    """
    a, b = _arrays(a, b)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ValueError("ssim takes a single echo; select one first")
        a, b = a[0], b[0]
    if a.min() < 0 or a.max() > 1 or b.min() < 0 or b.max() > 1:
        raise ValueError("ssim inputs must lie in [0, 1]")
    if per_slice:
        return float(np.mean([np.mean(ssim_map(a[..., k], b[..., k], **kwargs)) for k in range(a.shape[-1])]))
    return float(np.mean(ssim_map(a, b, **kwargs)))


@dataclass
class QualityReport:
    echo: str
    ssim: float
    psnr: float
    rmse: float

    @property
    def rmse_e3(self) -> float:
        return self.rmse * 1e3

    def to_json(self) -> dict:
        out = asdict(self)
        out["rmse_e3"] = self.rmse_e3
        if math.isinf(self.psnr):
            out["psnr"] = "inf"
        return out


def quality_report(truth: MultiEchoVolume, test: MultiEchoVolume, per_slice: bool = False) -> list[QualityReport]:
    if truth.data.shape != test.data.shape:
        raise ValueError(f"shape mismatch: {truth.data.shape} vs {test.data.shape}")
    out = []
    for e in range(truth.echoes):
        t, s = truth.data[e], test.data[e]
        out.append(QualityReport(f"S{e + 1}", ssim(s, t, per_slice=per_slice), psnr(s, t), rmse(s, t)))
    return out


# -- paired agreement --------------------------------------------------------


def _pairs(pairs):
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) == 0:
        raise ValueError("pairs must be a non-empty sequence of (truth, method) values")
    return arr[:, 0], arr[:, 1]


def _mean_sd(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return float(np.mean(values)), sd


def mean_sd(values) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; sd is 0 for one value."""
    return _mean_sd(values)


def cv_percent(pairs) -> tuple[float, float]:
    """Duplicate-measurement CV% per pair, summarized as mean and sample sd."""
    g, m = _pairs(pairs)
    if np.any(g <= 0) or np.any(m <= 0):
        raise ValueError("CV% needs strictly positive values")
    cv = 100.0 * (np.abs(m - g) / math.sqrt(2)) / ((m + g) / 2)
    return _mean_sd(cv)


def mean_difference(pairs) -> tuple[float, float]:
    g, m = _pairs(pairs)
    return _mean_sd(np.abs(m - g))


def ccc(pairs) -> float:
    """Lin's concordance correlation with population (1/n) moments."""
    g, m = _pairs(pairs)
    if len(g) < 2:
        raise ValueError("CCC needs at least two pairs")
    mg, mm = g.mean(), m.mean()
    cov = np.mean((g - mg) * (m - mm))
    den = g.var() + m.var() + (mg - mm) ** 2
    if den == 0:
        raise ValueError("CCC undefined for two identical constant lists")
    return float(2 * cov / den)


def midranks(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def mann_whitney_u(x, y, mode: str = "auto") -> tuple[float, float]:
    """Two-sided Mann-Whitney U test.

    Returns ``(U_x, p)`` where ``U_x`` counts pairs with x > y (ties count
    one half). ``exact`` enumerates every split of the pooled midranks and is
    limited to ``len(x) + len(y) <= 16``; ``normal`` uses the tie-corrected
    normal approximation with continuity correction; ``auto`` picks exact
    when it is allowed.
    """
    x, y = list(x), list(y)
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise ValueError("both samples must be non-empty")
    if mode == "auto":
        mode = "exact" if n + m <= EXACT_LIMIT else "normal"
    ranks = midranks(x + y)
    u = float(ranks[:n].sum() - n * (n + 1) / 2)
    centre = n * m / 2
    if mode == "exact":
        if n + m > EXACT_LIMIT:
            raise ValueError(f"exact mode limited to n + m <= {EXACT_LIMIT}")
        observed = abs(u - centre)
        offset = n * (n + 1) / 2
        hits = total = 0
        # Half-integer U values make a small tolerance safe.
        for group in itertools.combinations(range(n + m), n):
            total += 1
            if abs(ranks[list(group)].sum() - offset - centre) >= observed - 1e-9:
                hits += 1
        return u, min(1.0, hits / total)
    if mode == "normal":
        _, counts = np.unique(ranks, return_counts=True)
        big_n = n + m
        tie = float(np.sum(counts**3 - counts))
        var = n * m / 12.0 * ((big_n + 1) - tie / (big_n * (big_n - 1))) if big_n > 1 else 0.0
        if var <= 0:
            return u, 1.0
        z = max(abs(u - centre) - 0.5, 0.0) / math.sqrt(var)
        return u, min(1.0, math.erfc(z / math.sqrt(2)))
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class AgreementReport:
    pairs: list[tuple[float, float]]
    subjects: list[str]
    truth_mean: float
    truth_sd: float
    method_mean: float
    method_sd: float
    cv_mean: float
    cv_sd: float
    diff_mean: float
    diff_sd: float
    ccc: float | None
    u: float
    p: float
    u_mode: str

    def to_json(self) -> dict:
        out = asdict(self)
        out["pairs"] = [list(p) for p in self.pairs]
        return out


def agreement_report(pairs, subjects=None, mode: str = "auto") -> AgreementReport:
    g, m = _pairs(pairs)
    subjects = [str(i + 1) for i in range(len(g))] if subjects is None else list(subjects)
    tm, ts = _mean_sd(g)
    mm, ms = _mean_sd(m)
    cvm, cvs = cv_percent(pairs)
    dm, ds = mean_difference(pairs)
    try:
        c = ccc(pairs)
    except ValueError:
        c = None
    if mode == "auto":
        mode = "exact" if 2 * len(g) <= EXACT_LIMIT else "normal"
    u, p = mann_whitney_u(list(g), list(m), mode=mode)
    return AgreementReport(
        pairs=[(float(a), float(b)) for a, b in zip(g, m)],
        subjects=subjects,
        truth_mean=tm,
        truth_sd=ts,
        method_mean=mm,
        method_sd=ms,
        cv_mean=cvm,
        cv_sd=cvs,
        diff_mean=dm,
        diff_sd=ds,
        ccc=c,
        u=u,
        p=p,
        u_mode=mode,
    )
