"""Photon time-tag streams and the estimators applied to them.

Timestamps are integer picoseconds (TTTR-style). Analysis functions take
times in seconds; ``PhotonStream.scale_ps`` records how many picoseconds
correspond to one model time unit 1/gamma, so curves can be mapped back
for comparison with simulations.

Binary photon-tag format (little endian)::

    b"PTAG" | version u16 | scale_ps f64 | count u64 | count x u64 timestamps

The format carries no trace duration; readers take it from the caller (or
a sidecar written next to the file) and otherwise fall back to the last
timestamp plus one picosecond.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from kerrdpt.correlations import CorrelationCurve
from kerrdpt.errors import InsufficientDataError, StreamFormatError

MAGIC = b"PTAG"
VERSION = 1
_HEADER = struct.Struct("<4sHdQ")
PS = 1e-12
MIN_CLICKS = 100


@dataclass(frozen=True, eq=False)
class PhotonStream:
    clicks: np.ndarray
    duration: int
    scale_ps: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        clicks = np.ascontiguousarray(self.clicks, dtype=np.int64)
        if clicks.ndim != 1:
            raise ValueError("clicks must be one-dimensional")
        if clicks.size and (clicks[0] < 0 or clicks[-1] >= self.duration):
            raise ValueError("timestamps must lie in [0, duration)")
        if clicks.size > 1 and np.any(np.diff(clicks) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.scale_ps <= 0:
            raise ValueError("scale_ps must be positive")
        clicks.setflags(write=False)
        object.__setattr__(self, "clicks", clicks)
        object.__setattr__(self, "duration", int(self.duration))

    def __len__(self):
        return self.clicks.size

    def __eq__(self, other):
        return (isinstance(other, PhotonStream) and self.duration == other.duration
                and self.scale_ps == other.scale_ps and np.array_equal(self.clicks, other.clicks))

    @property
    def duration_s(self) -> float:
        return self.duration * PS

    @property
    def times_s(self) -> np.ndarray:
        return self.clicks * PS

    @property
    def time_unit_s(self) -> float:
        """Seconds per model time unit."""
        return self.scale_ps * PS

    @property
    def rate(self) -> float:
        """Clicks per second."""
        return self.clicks.size / self.duration_s

    def concatenate(self, other: "PhotonStream") -> "PhotonStream":
        if other.scale_ps != self.scale_ps:
            raise ValueError("cannot join streams with different time scales")
        return PhotonStream(np.concatenate([self.clicks, other.clicks + self.duration]),
                            self.duration + other.duration, self.scale_ps, dict(self.meta))


def write_ptag(stream: PhotonStream, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, float(stream.scale_ps), stream.clicks.size))
        fh.write(stream.clicks.astype("<u8").tobytes())


def read_ptag(path, duration: int | None = None) -> PhotonStream:
    """Load a photon-tag file; ``duration`` is in picoseconds."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise StreamFormatError(f"{path}: truncated header ({len(head)} bytes)")
        magic, version, scale, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise StreamFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise StreamFormatError(f"{path}: unsupported version {version}, expected {VERSION}")
        body = fh.read()
    if len(body) != 8 * count:
        raise StreamFormatError(f"{path}: header announces {count} timestamps, body holds {len(body) / 8:g}")
    clicks = np.frombuffer(body, dtype="<u8").astype(np.int64)
    if duration is None:
        duration = int(clicks[-1]) + 1 if clicks.size else 1
    try:
        return PhotonStream(clicks, duration, scale)
    except ValueError as exc:
        raise StreamFormatError(f"{path}: {exc}") from exc


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "__dataclass_fields__"):
        return {k: _jsonable(getattr(value, k)) for k in value.__dataclass_fields__}
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    return value


def sidecar_path(path) -> str:
    return os.fspath(path) + ".json"


def save_stream(stream: PhotonStream, path) -> list[str]:
    """Write the photon-tag file plus a JSON sidecar holding the duration
    and metadata; returns both paths."""
    write_ptag(stream, path)
    side = sidecar_path(path)
    with open(side, "w") as fh:
        json.dump({"duration_ps": stream.duration, "scale_ps": stream.scale_ps,
                   "meta": _jsonable(stream.meta)}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return [os.fspath(path), side]


def load_stream(path) -> PhotonStream:
    """Read a photon-tag file, taking duration and metadata from its sidecar if present."""
    side = sidecar_path(path)
    duration, meta = None, {}
    if os.path.exists(side):
        with open(side) as fh:
            try:
                info = json.load(fh)
            except json.JSONDecodeError as exc:
                raise StreamFormatError(f"{side}: {exc}") from exc
        duration, meta = int(info["duration_ps"]), info.get("meta", {})
    stream = read_ptag(path, duration)
    return PhotonStream(stream.clicks, stream.duration, stream.scale_ps, meta)


@dataclass(frozen=True)
class IntensityTrace:
    bin_width: float  # seconds
    counts: np.ndarray
    origin: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(self.counts.size)


def bin_intensity(stream: PhotonStream, bin_width: float) -> IntensityTrace:
    """Counts per contiguous bin of ``bin_width`` seconds; the final partial bin is dropped."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    width_ps = bin_width / PS
    if width_ps >= stream.duration:
        raise ValueError(f"bin width {bin_width:g} s is not shorter than the trace ({stream.duration_s:g} s)")
    nbins = int(np.floor(stream.duration / width_ps * (1 + 1e-12)))
    idx = np.floor(stream.clicks / width_ps).astype(np.int64)
    idx = idx[idx < nbins]
    counts = np.bincount(idx, minlength=nbins).astype(np.int64)
    return IntensityTrace(float(bin_width), counts)


@dataclass(frozen=True)
class IntensityHistogram:
    values: np.ndarray        # count values 0..max
    probabilities: np.ndarray
    bin_width: float
    modality: int
    peaks: tuple = ()
    smoothed: np.ndarray | None = None


def _local_maxima(p: np.ndarray, min_height: float) -> list[int]:
    ext = np.concatenate([[-np.inf], p, [-np.inf]])
    peaks = []
    i = 1
    while i <= p.size:
        j = i
        while j + 1 <= p.size and ext[j + 1] == ext[i]:
            j += 1  # plateau
        if ext[i] > ext[i - 1] and ext[i] > ext[j + 1] and ext[i] >= min_height:
            peaks.append((i + j) // 2 - 1)
        i = j + 1
    return peaks


def histogram(trace: IntensityTrace, bandwidth: float | None = None, min_height: float = 0.01) -> IntensityHistogram:
    """Normalized count distribution p(I) and its number of modes.

    Modes are local maxima of p(I) smoothed by a Gaussian kernel of width
    ``max(1, sqrt(mean count))`` count values; maxima lower than
    ``min_height`` times the tallest are ignored.
    """
    counts = np.asarray(trace.counts)
    if counts.size == 0:
        raise ValueError("empty intensity trace")
    freq = np.bincount(counts)
    p = freq / counts.size
    if bandwidth is None:
        bandwidth = max(1.0, float(np.sqrt(counts.mean())))
    smooth = gaussian_filter1d(p.astype(float), bandwidth, mode="reflect") if p.size > 1 else p.astype(float)
    peaks = _local_maxima(smooth, min_height * smooth.max())
    return IntensityHistogram(np.arange(p.size), p, trace.bin_width, len(peaks), tuple(peaks), smooth)


def _pair_histogram(ticks: np.ndarray, bin_ps: float, nbins: int) -> np.ndarray:
    """Histogram of ``t_j - t_i`` over ordered pairs i < j in bins of ``bin_ps``."""
    max_delay = bin_ps * nbins
    counts = np.zeros(nbins, dtype=np.int64)
    n = ticks.size
    k = 1
    while k < n:
        d = ticks[k:] - ticks[:-k]
        d = d[d < max_delay]
        if d.size == 0:
            break
        idx = np.minimum((d / bin_ps).astype(np.int64), nbins - 1)
        counts += np.bincount(idx, minlength=nbins)
        k += 1
    return counts


def _g2_counts(clicks: np.ndarray, T: float, b: float, nb: int):
    counts = _pair_histogram(clicks, b, nb)
    N = clicks.size
    # integer lags d with floor(d / b) == k, i.e. d in [ceil(k b), ceil((k+1) b) - 1]
    first = np.ceil(np.arange(nb) * b - 1e-9)
    first[0] = 1.0  # clicks are strictly increasing, lag 0 never occurs
    last = np.ceil(np.arange(1, nb + 1) * b - 1e-9) - 1.0
    lag_mean = 0.5 * (first + last)
    expected = N * (N - 1) / (T * (T - 1)) * (last - first + 1) * (T - lag_mean)
    return counts, expected, lag_mean


def g2_direct(stream: PhotonStream, bin_width: float, max_delay: float,
              downsample: int = 1, blocks: int | None = None) -> CorrelationCurve:
    """Single-stream photon-pair correlation with Poisson normalization.

    Coincidences of ordered pairs with delay in ``[k b, (k+1) b)`` are
    divided by their expectation for the same number of clicks scattered
    uniformly over the trace. Timestamps are integer picoseconds, so the
    expectation sums ``N(N-1)(T-d) / (T(T-1))`` over the integer lags ``d``
    inside each bin; bins that are not a whole number of picoseconds wide
    hold unequal lag counts, and this keeps them unbiased. ``delays`` are
    the mean integer lag of each bin, in seconds.

    Errors are Poisson on the pair counts unless ``blocks`` is given, in
    which case they are the standard error over that many contiguous,
    separately normalized segments. Pair counts of bunched light are
    overdispersed, so block errors are the honest choice for such streams.
    """
    if bin_width <= 0 or max_delay <= bin_width:
        raise ValueError("need bin_width > 0 and max_delay > bin_width")
    N = len(stream)
    if N < MIN_CLICKS:
        raise InsufficientDataError(f"g2 needs at least {MIN_CLICKS} clicks, stream has {N}")
    b = bin_width / PS
    if b < 1:
        raise ValueError("bin_width is below the 1 ps timestamp resolution")
    nb = int(np.floor(max_delay / bin_width + 1e-9))
    T = float(stream.duration)
    if nb * b >= T:
        raise InsufficientDataError("max_delay must be shorter than the trace")
    counts, expected, lag_mean = _g2_counts(stream.clicks, T, b, nb)
    values = counts / expected
    if blocks is None:
        errors = np.sqrt(np.maximum(counts, 1)) / expected
    else:
        if blocks < 2:
            raise ValueError("blocks must be >= 2")
        edges = np.linspace(0.0, T, blocks + 1)
        Tb = T / blocks
        if nb * b >= Tb:
            raise InsufficientDataError("max_delay must be shorter than one block")
        per = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            seg = stream.clicks[(stream.clicks >= lo) & (stream.clicks < hi)]
            if seg.size < 2:
                raise InsufficientDataError("a block holds fewer than 2 clicks")
            c, e, _ = _g2_counts(seg, Tb, b, nb)
            per.append(c / e)
        errors = np.std(per, axis=0, ddof=1) / np.sqrt(blocks)
    curve = CorrelationCurve(lag_mean * PS, values, "G2", errors, time_unit_s=1.0)
    return downsample_curve(curve, downsample) if downsample > 1 else curve


def downsample_curve(curve: CorrelationCurve, factor: int) -> CorrelationCurve:
    """Block-average ``factor`` consecutive delay bins; a ragged tail is dropped."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    m = (len(curve) // factor) * factor
    if m == 0:
        raise ValueError("curve shorter than one block")

    def block(x):
        return x[:m].reshape(-1, factor).mean(axis=1)

    errors = None
    if curve.errors is not None:
        errors = np.sqrt((curve.errors[:m].reshape(-1, factor) ** 2).sum(axis=1)) / factor
    return CorrelationCurve(block(curve.delays), block(curve.values), curve.kind, errors,
                            curve.baseline, None, curve.time_unit_s)


def g2_classical(trace: IntensityTrace, max_delay: float, blocks: int = 10) -> CorrelationCurve:
    """Intensity autocorrelation <I(t) I(t+tau)> / <I>^2 of binned counts.

    Lag ``j`` averages the ``n - j`` overlapping products and normalizes by
    the squared mean of the whole trace, so a constant trace gives exactly 1.
    Errors are the spread of the estimate over ``blocks`` contiguous blocks.
    """
    I = np.asarray(trace.counts, dtype=float)
    n = I.size
    nlag = int(np.floor(max_delay / trace.bin_width + 1e-9)) + 1
    if nlag > n:
        raise ValueError("max_delay exceeds the trace span")
    mean = I.mean()
    if mean == 0:
        raise InsufficientDataError("intensity trace is empty")
    values = _autocorr(I, nlag) / mean**2
    errors = None
    size = n // blocks if blocks > 1 else 0
    if blocks > 1 and size > nlag:
        parts = []
        for k in range(blocks):
            seg = I[k * size:(k + 1) * size]
            if seg.mean() > 0:
                parts.append(_autocorr(seg, nlag) / seg.mean() ** 2)
        if len(parts) > 1:
            errors = np.std(parts, axis=0, ddof=1) / np.sqrt(len(parts))
    delays = np.arange(nlag) * trace.bin_width
    return CorrelationCurve(delays, values, "G2Classical", errors, time_unit_s=1.0)


def _autocorr(I: np.ndarray, nlag: int) -> np.ndarray:
    n = I.size
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(I, size)
    raw = np.fft.irfft(spec * np.conj(spec), size)[:nlag]
    return raw / (n - np.arange(nlag))


@dataclass(frozen=True)
class DwellStats:
    mean_low: float
    mean_high: float
    switches: int
    low_dwells: np.ndarray = field(repr=False, default=None)
    high_dwells: np.ndarray = field(repr=False, default=None)
    thresholds: tuple = ()
    sufficient: bool = True


def default_thresholds(trace: IntensityTrace, hist: IntensityHistogram | None = None) -> tuple[float, float]:
    """Histogram valley +- 25% of the separation of its two tallest modes."""
    hist = hist if hist is not None else histogram(trace)
    if hist.modality < 2:
        raise InsufficientDataError("intensity histogram is not bimodal; pass thresholds explicitly")
    tall = sorted(sorted(hist.peaks, key=lambda i: hist.smoothed[i])[-2:])
    lo_peak, hi_peak = tall
    valley = lo_peak + int(np.argmin(hist.smoothed[lo_peak:hi_peak + 1]))
    sep = hi_peak - lo_peak
    return valley - 0.25 * sep, valley + 0.25 * sep


def dwell_times(trace: IntensityTrace, thresholds: tuple[float, float] | None = None) -> DwellStats:
    """Schmitt-trigger segmentation into low/high states.

    The state flips to high when counts reach ``thresholds[1]`` and to low
    when they fall to ``thresholds[0]``. Dwell statistics use only complete
    segments (bounded by two switches); with fewer than two switches the
    partial segments are reported and ``sufficient`` is False.
    """
    if thresholds is None:
        thresholds = default_thresholds(trace)
    low, high = thresholds
    if not low < high:
        raise ValueError("need low threshold < high threshold")
    counts = np.asarray(trace.counts, dtype=float)
    state = np.empty(counts.size, dtype=bool)
    current = counts[0] >= 0.5 * (low + high)
    for i, c in enumerate(counts):
        if current and c <= low:
            current = False
        elif not current and c >= high:
            current = True
        state[i] = current
    flips = np.flatnonzero(np.diff(state.astype(np.int8)) != 0) + 1
    bounds = np.concatenate([[0], flips, [counts.size]])
    lengths = np.diff(bounds) * trace.bin_width
    states = state[bounds[:-1]]
    switches = flips.size
    sufficient = switches >= 2
    if sufficient:
        lengths, states = lengths[1:-1], states[1:-1]
    low_d, high_d = lengths[~states], lengths[states]
    mean = lambda x: float(x.mean()) if x.size else float("nan")
    return DwellStats(mean(low_d), mean(high_d), int(switches), low_d, high_d, (low, high), sufficient)


def telegraph_stream(rate_low: float, rate_high: float, dwell_low: float, dwell_high: float,
                     duration: float, seed: int, scale_ps: float = 1.0) -> PhotonStream:
    """Poisson clicks modulated by a two-state Markov chain (times in seconds).

    Exponential dwell times with means ``dwell_low``/``dwell_high``; the
    initial state is drawn from the stationary distribution.
    """
    rng = np.random.default_rng(seed)
    p_high = dwell_high / (dwell_low + dwell_high)
    high = rng.random() < p_high
    t = 0.0
    chunks = []
    while t < duration:
        dwell = rng.exponential(dwell_high if high else dwell_low)
        end = min(t + dwell, duration)
        rate = rate_high if high else rate_low
        k = rng.poisson(rate * (end - t))
        chunks.append(np.sort(rng.uniform(t, end, k)))
        t = end
        high = not high
    times = np.concatenate(chunks) if chunks else np.empty(0)
    return stream_from_times(times, duration, scale_ps)


def poisson_stream(rate: float, duration: float, seed: int, scale_ps: float = 1.0) -> PhotonStream:
    rng = np.random.default_rng(seed)
    times = np.sort(rng.uniform(0.0, duration, rng.poisson(rate * duration)))
    return stream_from_times(times, duration, scale_ps)


def stream_from_times(times_s: np.ndarray, duration_s: float, scale_ps: float = 1.0,
                      meta: dict | None = None) -> PhotonStream:
    """Quantize times to integer picoseconds; coincident ticks are pushed
    one picosecond later to keep the stream strictly increasing."""
    duration = int(np.ceil(duration_s / PS))
    ticks = np.round(np.asarray(times_s) / PS).astype(np.int64)
    ticks = _strictly_increasing(ticks)
    ticks = ticks[ticks < duration]
    return PhotonStream(ticks, duration, scale_ps, meta or {})


def _strictly_increasing(ticks: np.ndarray) -> np.ndarray:
    if ticks.size < 2:
        return ticks
    # t_i' = max(t_i, t_{i-1}' + 1)  <=>  t_i' - i = running max of (t_i - i)
    idx = np.arange(ticks.size, dtype=np.int64)
    return np.maximum.accumulate(ticks - idx) + idx


def telegraph_g2(tau, rate_low: float, rate_high: float, dwell_low: float, dwell_high: float):
    """Analytic g2 of the two-state Markov-modulated Poisson process."""
    kl, kh = 1.0 / dwell_low, 1.0 / dwell_high
    p_low, p_high = kh / (kl + kh), kl / (kl + kh)
    mean = p_low * rate_low + p_high * rate_high
    amp = p_low * p_high * (rate_high - rate_low) ** 2 / mean**2
    return 1.0 + amp * np.exp(-(kl + kh) * np.abs(np.asarray(tau, dtype=float)))
