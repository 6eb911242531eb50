"""Benchmark task bodies with controllable load imbalance.

Three families:

* Mandelbrot: per-pixel escape iteration of the quartic map z^4 + c over a
  boundary window of the set, where neighbouring pixels differ by orders of
  magnitude in iteration count.
* Spin images: one 2D histogram descriptor per oriented point of a 3D cloud;
  cost per image follows the (non-uniform) neighbour density.
* Synthetic: calibrated busy-waits drawn from a seeded distribution, plus a
  time-stepped variant whose hotspot drifts across the index space.

Kernels expose range execution for the runtime (``execute(start, stop, ctx)``)
so schedulers can hand out arbitrary sub-ranges; synthetic kernels also price
ranges without executing them (virtual mode).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Kernel",
    "MandelbrotKernel",
    "MandelbrotParams",
    "PerIndexKernel",
    "SpinImageKernel",
    "SpinImageParams",
    "SyntheticKernel",
    "SyntheticSpec",
    "TaskContext",
    "TimestepSpec",
    "busy_wait",
    "calibrate_spin",
    "generate_cluster_cloud",
    "load_point_cloud",
    "mandelbrot_pixel",
    "mandelbrot_range",
    "spin_image",
    "synthetic_task",
    "timestep_workload",
    "write_pgm",
    "write_spin_image_csv",
]

ESCAPE_NORM = 2.0  # escape when |z|^2 >= ESCAPE_NORM^2


# ---------------------------------------------------------------------------
# Mandelbrot (quartic map)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MandelbrotParams:
    """Viewport and iteration budget for the quartic escape-time kernel."""

    width: int
    height: int
    max_iter: int
    real_max: float
    real_min: float
    imag_max: float
    imag_min: float
    scale_color: int = 1

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.max_iter < 1:
            raise ValueError("width, height and max_iter must all be >= 1")
        if self.real_max <= self.real_min or self.imag_max <= self.imag_min:
            raise ValueError("viewport bounds must satisfy max > min")

    @property
    def scale_real(self) -> float:
        return (self.real_max - self.real_min) / self.width

    @property
    def scale_imag(self) -> float:
        return (self.imag_max - self.imag_min) / self.height

    @property
    def tasks(self) -> int:
        return self.width * self.height

    @classmethod
    def seahorse(cls, side: int = 768, max_iter: int = 10_000, scale_color: int = 1):
        """Default boundary window with extreme per-pixel variance.

        Centered on a valley of the quartic set where a thin interior band
        meets filament structure; at 256x256 and max_iter 10^4 the iteration
        counts have a coefficient of variation above 7 and roughly 80% of
        the total work falls in the top eighth of the rows.
        """
        cx, cy, w = -0.75, 0.37, 0.04
        return cls(
            width=side,
            height=side,
            max_iter=max_iter,
            real_max=cx + w / 2,
            real_min=cx - w / 2,
            imag_max=cy + w / 2,
            imag_min=cy - w / 2,
            scale_color=scale_color,
        )


def mandelbrot_pixel(i: int, params: MandelbrotParams) -> int:
    """Color value of pixel ``i`` (row-major) under the quartic map.

    Iterates z <- z^4 + c in expanded real/imaginary form until
    |z|^2 >= 4 or the iteration cap is hit, returning (k - 1) * scale_color.
    """
    if not 0 <= i < params.tasks:
        raise ValueError(f"pixel index {i} out of range [0, {params.tasks})")
    row = i // params.width
    col = i % params.width
    cr = params.real_min + col * params.scale_real
    ci = params.imag_min + (params.height - 1 - row) * params.scale_imag
    zr = 0.0
    zi = 0.0
    k = 0
    lengthsq = 0.0
    while lengthsq < ESCAPE_NORM * ESCAPE_NORM and k < params.max_iter:
        temp = zr**4 - 6.0 * zi**2 * zr**2 + zi**4 + cr
        zi = 4.0 * zr**3 * zi - 4.0 * zr * zi**3 + ci
        zr = temp
        lengthsq = zr * zr + zi * zi
        k += 1
    return (k - 1) * params.scale_color


_FILL_JIT = None


def _mandelbrot_fill_py(out, start, stop, width, height, max_iter, rmin, imin, sr, si, sc):
    for i in range(start, stop):
        row = i // width
        col = i % width
        cr = rmin + col * sr
        ci = imin + (height - 1 - row) * si
        zr = 0.0
        zi = 0.0
        k = 0
        lengthsq = 0.0
        while lengthsq < 4.0 and k < max_iter:
            temp = zr**4 - 6.0 * zi**2 * zr**2 + zi**4 + cr
            zi = 4.0 * zr**3 * zi - 4.0 * zr * zi**3 + ci
            zr = temp
            lengthsq = zr * zr + zi * zi
            k += 1
        out[i] = (k - 1) * sc


def _fill_fn():
    """Compiled range filler; falls back to pure Python without numba."""
    global _FILL_JIT
    if _FILL_JIT is None:
        try:
            import numba

            _FILL_JIT = numba.njit(nogil=True, cache=True)(_mandelbrot_fill_py)
        except ImportError:
            _FILL_JIT = _mandelbrot_fill_py
    return _FILL_JIT


def mandelbrot_range(out: np.ndarray, start: int, stop: int, params: MandelbrotParams) -> None:
    """Fill ``out[start:stop]`` with pixel colors; bit-identical to
    :func:`mandelbrot_pixel` on every index regardless of range splits."""
    _fill_fn()(
        out,
        start,
        stop,
        params.width,
        params.height,
        params.max_iter,
        params.real_min,
        params.imag_min,
        params.scale_real,
        params.scale_imag,
        params.scale_color,
    )


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2D integer image as binary PGM (P5); 16-bit when needed."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM output requires a 2D image")
    maxval = int(img.max()) if img.size else 0
    maxval = max(1, maxval)
    if maxval > 65535:
        raise ValueError(f"pixel value {maxval} exceeds PGM 16-bit range")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    payload = img.astype(">u2" if maxval > 255 else "u1").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


# ---------------------------------------------------------------------------
# Spin images
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpinImageParams:
    """Oriented point cloud plus binning parameters for spin-image descriptors."""

    width: int
    bin_size: float
    support_angle: float
    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        nms = np.asarray(self.normals, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or nms.shape != pts.shape:
            raise ValueError("points and normals must both have shape (M, 3)")
        if self.width < 1:
            raise ValueError("image width must be >= 1")
        if self.bin_size <= 0:
            raise ValueError("bin size must be positive")
        if not 0.0 <= self.support_angle <= math.pi:
            raise ValueError("support angle must lie in [0, pi]")
        norms = np.linalg.norm(nms, axis=1)
        if pts.shape[0] and np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("all normals must be unit length within 1e-9")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nms)

    @property
    def count(self) -> int:
        return self.points.shape[0]


def spin_image(image_index: int, params: SpinImageParams) -> np.ndarray:
    """Spin-image histogram of one oriented point against all others.

    A point X contributes when the angle between the two normals is within
    the support angle; its (k, l) bin comes from the signed distance along
    the normal and the radial distance around it.  Out-of-range bins and the
    point's pairing with itself are skipped.
    """
    if not 0 <= image_index < params.count:
        raise ValueError(f"image index {image_index} out of range [0, {params.count})")
    w, b = params.width, params.bin_size
    p = params.points[image_index]
    n_i = params.normals[image_index]

    cos_angle = params.normals @ n_i
    within = np.arccos(np.clip(cos_angle, -1.0, 1.0)) <= params.support_angle
    within[image_index] = False

    d = params.points - p
    beta = d @ n_i
    radial_sq = np.einsum("ij,ij->i", d, d) - beta * beta
    alpha = np.sqrt(np.maximum(radial_sq, 0.0))

    k = np.ceil((w / 2.0 - beta) / b).astype(np.int64)
    l = np.ceil(alpha / b).astype(np.int64)
    ok = within & (k >= 0) & (k < w) & (l >= 0) & (l < w)

    hist = np.zeros((w, w), dtype=np.int64)
    np.add.at(hist, (k[ok], l[ok]), 1)
    return hist


def generate_cluster_cloud(
    count: int, clusters: int = 4, spread: float = 0.15, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-mixture point cloud with unit normals.

    Cluster populations follow a geometric taper so neighbour density (and
    with it per-image cost) varies strongly across the cloud.
    """
    if count < 1:
        raise ValueError("point count must be >= 1")
    rng = np.random.default_rng(seed)
    weights = np.array([2.0**-j for j in range(clusters)])
    weights /= weights.sum()
    sizes = np.maximum(1, (weights * count).astype(int))
    sizes[0] += count - sizes.sum()
    centers = rng.uniform(-1.0, 1.0, size=(clusters, 3))
    pts = np.concatenate(
        [ctr + rng.normal(0.0, spread, size=(m, 3)) for ctr, m in zip(centers, sizes)]
    )
    normals = rng.normal(size=(count, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return pts, normals


def load_point_cloud(path) -> tuple[np.ndarray, np.ndarray]:
    """Read whitespace-separated ``px py pz nx ny nz`` rows."""
    data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if data.shape[1] != 6:
        raise ValueError(f"expected 6 columns (position + normal), got {data.shape[1]}")
    return data[:, :3].copy(), data[:, 3:].copy()


def write_spin_image_csv(path, hist: np.ndarray) -> None:
    np.savetxt(path, np.asarray(hist), fmt="%d", delimiter=",")


# ---------------------------------------------------------------------------
# Synthetic workloads
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_U64 = np.uint64


def _splitmix64_np(x: np.ndarray) -> np.ndarray:
    x = (x + _U64(0x9E3779B97F4A7C15)).astype(_U64)
    x = (x ^ (x >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> _U64(27))) * _U64(0x94D049BB133111EB)
    return x ^ (x >> _U64(31))


def _unit_uniform(seed: int, indices: np.ndarray, stream: int = 0) -> np.ndarray:
    """Deterministic U(0,1) per (seed, index, stream)."""
    base = _splitmix64_np(np.array([seed & _MASK64], dtype=_U64))[0]
    mixed = _splitmix64_np(
        indices.astype(_U64) ^ base ^ _U64((0x9E3779B97F4A7C15 * (stream + 1)) & _MASK64)
    )
    return (mixed >> _U64(11)).astype(np.float64) / float(1 << 53)


@dataclass(frozen=True)
class SyntheticSpec:
    """Seeded cost distribution over a loop of ``n`` tasks.

    ``base_cost_us`` scales every draw; per-index costs are pure functions
    of (seed, index) so repeated evaluation is reproducible.
    """

    n: int
    distribution: str
    base_cost_us: float
    seed: int = 0
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("task count must be >= 1")
        if self.base_cost_us <= 0:
            raise ValueError("base cost must be positive")
        if self.distribution not in {
            "constant",
            "uniform",
            "gaussian",
            "exponential",
            "hotspot",
        }:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "hotspot":
            frac = self.params[0]
            if not 0.0 < frac <= 1.0:
                raise ValueError("hotspot fraction must lie in (0, 1]")

    @classmethod
    def constant(cls, n, base_cost_us, seed=0):
        return cls(n, "constant", base_cost_us, seed)

    @classmethod
    def uniform(cls, n, base_cost_us, low, high, seed=0):
        if not 0 < low <= high:
            raise ValueError("uniform bounds must satisfy 0 < low <= high")
        return cls(n, "uniform", base_cost_us, seed, (low, high))

    @classmethod
    def gaussian(cls, n, base_cost_us, mean, stddev, seed=0):
        return cls(n, "gaussian", base_cost_us, seed, (mean, stddev))

    @classmethod
    def exponential(cls, n, base_cost_us, rate=1.0, seed=0):
        if rate <= 0:
            raise ValueError("exponential rate must be positive")
        return cls(n, "exponential", base_cost_us, seed, (rate,))

    @classmethod
    def hotspot(cls, n, base_cost_us, fraction, multiplier, start_fraction=None, seed=0):
        if multiplier <= 0:
            raise ValueError("hotspot multiplier must be positive")
        if start_fraction is None:
            start = int(_unit_uniform(seed, np.array([0], dtype=_U64), stream=7)[0] * n)
        else:
            start = int(start_fraction * n) % n
        return cls(n, "hotspot", base_cost_us, seed, (fraction, multiplier, float(start)))

    @property
    def hot_count(self) -> int:
        if self.distribution != "hotspot":
            return 0
        return math.ceil(self.params[0] * self.n)

    def costs(self, start: int, stop: int, step_shift: int = 0) -> np.ndarray:
        """Cost in seconds for each index of [start, stop)."""
        if not 0 <= start <= stop <= self.n:
            raise ValueError(f"range [{start}, {stop}) outside [0, {self.n})")
        idx = np.arange(start, stop, dtype=_U64)
        base = self.base_cost_us * 1e-6
        if self.distribution == "constant":
            return np.full(stop - start, base)
        if self.distribution == "uniform":
            low, high = self.params
            u = _unit_uniform(self.seed, idx)
            return base * (low + u * (high - low))
        if self.distribution == "gaussian":
            mean, stddev = self.params
            u1 = np.maximum(_unit_uniform(self.seed, idx, stream=0), 1e-300)
            u2 = _unit_uniform(self.seed, idx, stream=1)
            z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
            return base * np.maximum(mean + stddev * z, mean * 1e-3)
        if self.distribution == "exponential":
            (rate,) = self.params
            u = np.maximum(_unit_uniform(self.seed, idx), 1e-300)
            return base * np.maximum(-np.log(u) / rate, 1e-3)
        # hotspot: a contiguous (mod n) block of ceil(fraction*n) hot indices
        _, multiplier, hot_start = self.params
        offset = (idx.astype(np.int64) - (int(hot_start) + step_shift)) % self.n
        hot = offset < self.hot_count
        return base * np.where(hot, multiplier, 1.0)

    def cost(self, i: int) -> float:
        return float(self.costs(i, i + 1)[0])


@dataclass(frozen=True)
class TimestepSpec:
    """Synthetic workload whose hotspot drifts across time-steps.

    ``drift_per_step`` is the fraction of the index space the hot block
    moves each step; zero drift degenerates to the plain synthetic costs.
    """

    spec: SyntheticSpec
    drift_per_step: float = 0.0

    def costs(self, step: int, start: int, stop: int) -> np.ndarray:
        shift = int(round(self.drift_per_step * self.spec.n)) * step
        return self.spec.costs(start, stop, step_shift=shift)

    def cost(self, step: int, i: int) -> float:
        return float(self.costs(step, i, i + 1)[0])


# --- calibrated busy-wait -----------------------------------------------------

_SPIN_PER_US: float | None = None


def _spin(iterations: int) -> float:
    acc = 1.0
    for _ in range(iterations):
        acc = acc * 1.0000001 + 1e-9
    return acc


def calibrate_spin(sample_us: float = 2000.0) -> float:
    """Measure spin-loop iterations per microsecond (cached)."""
    global _SPIN_PER_US
    if _SPIN_PER_US is None:
        iters = 200_000
        best = float("inf")
        for _ in range(3):
            t0 = time.perf_counter()
            _spin(iters)
            best = min(best, time.perf_counter() - t0)
        _SPIN_PER_US = max(1.0, iters / (best * 1e6))
    return _SPIN_PER_US


def busy_wait(seconds: float) -> float:
    """Occupy the caller for ``seconds`` of wall time; returns the measured
    elapsed time.

    Long waits coarsely sleep down to the final stretch, then spin a small
    calibrated arithmetic batch between clock checks so the deadline is hit
    within a few microseconds on an unloaded machine.
    """
    t0 = time.perf_counter()
    if seconds <= 0.0:
        return 0.0
    deadline = t0 + seconds
    remaining = deadline - time.perf_counter()
    while remaining > 1.5e-3:
        time.sleep(remaining - 1e-3)
        remaining = deadline - time.perf_counter()
    batch = max(8, int(calibrate_spin() * 2))  # ~2us of spinning per check
    while time.perf_counter() < deadline:
        _spin(batch)
    return time.perf_counter() - t0


def synthetic_task(spec: SyntheticSpec, i: int) -> float:
    """Busy-wait for the sampled cost of task ``i``; returns elapsed seconds."""
    return busy_wait(spec.cost(i))


def timestep_workload(spec: TimestepSpec, step: int, i: int) -> float:
    return busy_wait(spec.cost(step, i))


# ---------------------------------------------------------------------------
# Runtime-facing kernel adapters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskContext:
    """Identity of the executing PE, passed to range execution."""

    rank: int = 0
    thread: int = 0


class Kernel:
    """Range-executable task body.

    ``execute`` performs the work for [start, stop); ``nominal_cost`` prices
    the range without executing it and is only available when
    ``supports_virtual`` is true.
    """

    supports_virtual = False
    tasks: int = 0

    def execute(self, start: int, stop: int, ctx: TaskContext) -> None:
        raise NotImplementedError

    def nominal_cost(self, start: int, stop: int, ctx: TaskContext) -> float:
        raise NotImplementedError(f"{type(self).__name__} cannot price work virtually")

    def set_timestep(self, step: int) -> None:  # noqa: B027 - optional hook
        pass


class MandelbrotKernel(Kernel):
    def __init__(self, params: MandelbrotParams):
        self.params = params
        self.tasks = params.tasks
        self.image = np.zeros(self.tasks, dtype=np.int64)

    def execute(self, start, stop, ctx):
        mandelbrot_range(self.image, start, stop, self.params)

    def image_2d(self) -> np.ndarray:
        return self.image.reshape(self.params.height, self.params.width)


class SpinImageKernel(Kernel):
    def __init__(self, params: SpinImageParams, store: bool = False):
        self.params = params
        self.tasks = params.count
        self.store = store
        self.images: dict[int, np.ndarray] = {}
        self.bin_totals = np.zeros(params.count, dtype=np.int64)

    def execute(self, start, stop, ctx):
        for i in range(start, stop):
            hist = spin_image(i, self.params)
            self.bin_totals[i] = int(hist.sum())
            if self.store:
                self.images[i] = hist


class SyntheticKernel(Kernel):
    """Busy-wait workload; per-rank multipliers emulate heterogeneous PEs."""

    supports_virtual = True

    def __init__(
        self,
        spec: SyntheticSpec,
        rank_multipliers: list[float] | None = None,
        timestep: TimestepSpec | None = None,
    ):
        self.spec = spec
        self.tasks = spec.n
        self.rank_multipliers = rank_multipliers
        self.timestep_spec = timestep
        self.step = 0

    @classmethod
    def timestepped(cls, tspec: TimestepSpec, rank_multipliers=None):
        return cls(tspec.spec, rank_multipliers, timestep=tspec)

    def set_timestep(self, step: int) -> None:
        self.step = step

    def _multiplier(self, ctx: TaskContext) -> float:
        if self.rank_multipliers is None:
            return 1.0
        return self.rank_multipliers[ctx.rank]

    def _costs(self, start, stop):
        if self.timestep_spec is not None:
            return self.timestep_spec.costs(self.step, start, stop)
        return self.spec.costs(start, stop)

    def execute(self, start, stop, ctx):
        mult = self._multiplier(ctx)
        for cost in self._costs(start, stop):
            busy_wait(float(cost) * mult)

    def nominal_cost(self, start, stop, ctx):
        return float(self._costs(start, stop).sum()) * self._multiplier(ctx)


class PerIndexKernel(Kernel):
    """Adapter for a plain ``task_fn(index) -> seconds`` callable."""

    def __init__(self, fn, tasks: int):
        self.fn = fn
        self.tasks = tasks

    def execute(self, start, stop, ctx):
        for i in range(start, stop):
            self.fn(i)
