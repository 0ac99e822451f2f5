"""Synthetic range-localization data.

Truth follows uniform circular motion; anchors sit equally spaced on a ring;
each epoch yields one noisy range per anchor. Noise is either Gaussian or a
two-component Gaussian mixture, drawn through an explicit Box-Muller transform
so the uniform-draw consumption per sample is fixed and datasets are
reproducible bit-for-bit from (scheme, seed).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import defaults
from .core import (
    DomainError,
    MeasurementModel,
    ProcessModel,
    StateVector,
    toa_position_jacobian,
    toa_range_values,
)

RNG_NAME = "pcg64"


class DatasetFormatError(ValueError):
    """A dataset file failed to parse; message carries the line number."""


# ---------------------------------------------------------------------------
# noise models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianNoise:
    """Zero-mean Gaussian range noise with standard deviation `std` (m)."""

    std: float

    def __post_init__(self):
        if self.std < 0.0 or not math.isfinite(self.std):
            raise ValueError("Gaussian std must be finite and >= 0")

    def mixture_std(self) -> float:
        return self.std

    def inlier_std(self) -> float:
        return self.std

    def header_token(self) -> str:
        return f"gaussian:{self.std:.17g}"


@dataclass(frozen=True)
class GmmNoise:
    """Zero-mean Gaussian-mixture range noise: sum_i w_i N(0, std_i^2)."""

    weights: tuple
    stds: tuple

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        stds = tuple(float(s) for s in self.stds)
        if len(weights) != len(stds) or not weights:
            raise ValueError("weights and stds must be equal-length, non-empty")
        if any(w <= 0.0 for w in weights):
            raise ValueError("mixture weights must be positive")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if any(s <= 0.0 for s in stds):
            raise ValueError("mixture stds must be positive")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "stds", stds)

    def mixture_std(self) -> float:
        return math.sqrt(sum(w * s * s for w, s in zip(self.weights, self.stds)))

    def inlier_std(self) -> float:
        # the dominant component is the nominal noise floor; ties -> smaller std
        best = max(range(len(self.weights)), key=lambda i: (self.weights[i], -self.stds[i]))
        return self.stds[best]

    def header_token(self) -> str:
        parts = ",".join(f"{w:.17g}:{s:.17g}" for w, s in zip(self.weights, self.stds))
        return f"gmm:{parts}"


def parse_noise_token(token: str):
    kind, _, rest = token.partition(":")
    if kind == "gaussian":
        return GaussianNoise(float(rest))
    if kind == "gmm":
        weights, stds = [], []
        for part in rest.split(","):
            w, _, s = part.partition(":")
            weights.append(float(w))
            stds.append(float(s))
        return GmmNoise(tuple(weights), tuple(stds))
    raise ValueError(f"unknown noise token '{token}'")


# ---------------------------------------------------------------------------
# data schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataScheme:
    """One named measurement condition: anchor ring radius + noise model.

    L  = large ring (1000 m, near-linear geometry at the receiver)
    NL = small ring (105 m, receiver sweeps through the near field)
    G  = Gaussian noise, NG = Gaussian-mixture noise with a heavy 20% tail
    """

    name: str
    anchor_radius: float
    noise: object
    anchor_count: int = defaults.ANCHOR_COUNT
    epochs: int = defaults.EPOCHS
    dt: float = defaults.DT

    def __post_init__(self):
        if self.name in SCHEME_TABLE and self.anchor_radius not in (1000.0, 105.0):
            raise ValueError(f"named scheme '{self.name}' must use radius 1000 or 105")
        if self.anchor_count < 3:
            raise ValueError("anchor_count must be >= 3")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")


SCHEME_TABLE = {
    "L+G": (1000.0, lambda: GaussianNoise(0.1)),
    "NL+G": (105.0, lambda: GaussianNoise(0.1)),
    "L+NG": (1000.0, lambda: GmmNoise((0.8, 0.2), (0.1, 10.0))),
    "NL+NG": (105.0, lambda: GmmNoise((0.8, 0.2), (0.1, 10.0))),
}


def named_scheme(name: str, epochs: int = defaults.EPOCHS, dt: float = defaults.DT,
                 anchor_count: int = defaults.ANCHOR_COUNT) -> DataScheme:
    if name not in SCHEME_TABLE:
        raise ValueError(f"unknown scheme '{name}'; expected one of {sorted(SCHEME_TABLE)}")
    radius, noise_factory = SCHEME_TABLE[name]
    return DataScheme(name, radius, noise_factory(), anchor_count, epochs, dt)


# ---------------------------------------------------------------------------
# seeded RNG with a fixed draw-consumption contract
# ---------------------------------------------------------------------------


class SeededRng:
    """Uniform-draw source (PCG64) under a frozen consumption contract.

    Every Gaussian sample consumes exactly two uniforms (Box-Muller); every
    mixture sample consumes one component-selection uniform plus the two
    Gaussian uniforms. Identical seeds therefore give identical datasets no
    matter how sampling is batched.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, n: int | None = None):
        """Uniform draws on [0, 1); scalar when n is None."""
        if n is None:
            return float(self._gen.random())
        return self._gen.random(n)


def _box_muller(u1, u2):
    # 1-u1 maps [0,1) draws into (0,1], keeping log() finite
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)


def sample_noise(model, rng: SeededRng) -> float:
    """One noise draw under the documented uniform-consumption contract."""
    if isinstance(model, GaussianNoise):
        u1 = rng.uniform()
        u2 = rng.uniform()
        return float(_box_muller(u1, u2) * model.std)
    if isinstance(model, GmmNoise):
        u = rng.uniform()
        std = _component_std(model, u)
        u1 = rng.uniform()
        u2 = rng.uniform()
        return float(_box_muller(u1, u2) * std)
    raise TypeError(f"unknown noise model {model!r}")


def _component_std(model: GmmNoise, u: float) -> float:
    acc = 0.0
    for w, s in zip(model.weights, model.stds):
        acc += w
        if u < acc:
            return s
    return model.stds[-1]


def sample_noise_batch(model, rng: SeededRng, n: int) -> np.ndarray:
    """Vectorized sampling, stream-identical to n calls of sample_noise()."""
    if isinstance(model, GaussianNoise):
        us = rng.uniform(2 * n).reshape(n, 2)
        return _box_muller(us[:, 0], us[:, 1]) * model.std
    if isinstance(model, GmmNoise):
        us = rng.uniform(3 * n).reshape(n, 3)
        stds = np.empty(n)
        acc = 0.0
        assigned = np.zeros(n, dtype=bool)
        for w, s in zip(model.weights, model.stds):
            acc += w
            pick = (~assigned) & (us[:, 0] < acc)
            stds[pick] = s
            assigned |= pick
        stds[~assigned] = model.stds[-1]
        return _box_muller(us[:, 1], us[:, 2]) * stds
    raise TypeError(f"unknown noise model {model!r}")


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def ucm_trajectory(initial_pos, initial_vel, omega: float, epochs: int,
                   dt: float = defaults.DT) -> list[StateVector]:
    """Uniform circular motion sampled at k*dt for k = 0..epochs-1.

    The circle is derived from the initial conditions: radius |v|/|omega|,
    center at initial_pos + radius * n, where n is the unit initial velocity
    rotated +90 deg for omega > 0 (-90 deg for omega < 0). Speed is constant.
    """
    if omega == 0.0:
        raise DomainError("omega must be nonzero for circular motion")
    pos = np.asarray(initial_pos, dtype=float)
    vel = np.asarray(initial_vel, dtype=float)
    speed = math.hypot(vel[0], vel[1])
    if speed == 0.0:
        raise DomainError("initial speed must be nonzero")
    if omega > 0.0:
        normal = np.array([-vel[1], vel[0]]) / speed
    else:
        normal = np.array([vel[1], -vel[0]]) / speed
    radius = speed / abs(omega)
    center = pos + radius * normal
    rel = pos - center
    states = []
    for k in range(epochs):
        theta = omega * k * dt
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        pk = center + rot @ rel
        vk = rot @ vel
        states.append(StateVector(pk[0], pk[1], vk[0], vk[1]))
    return states


def place_anchors(radius: float, count: int = defaults.ANCHOR_COUNT) -> np.ndarray:
    """`count` anchors equally spaced on a circle of `radius` about the origin."""
    if radius <= 0.0:
        raise ValueError("anchor radius must be positive")
    if count < 3:
        raise ValueError("anchor count must be >= 3")
    angles = 2.0 * np.pi * np.arange(count) / count
    return np.column_stack([radius * np.cos(angles), radius * np.sin(angles)])


def toa_measure(anchors: np.ndarray, position) -> np.ndarray:
    """Noise-free ranges from a receiver position to every anchor."""
    return toa_range_values(anchors, np.asarray(position, dtype=float))


def toa_jacobian(anchors: np.ndarray, state) -> np.ndarray:
    """Analytic (m, 4) range Jacobian; velocity columns are identically zero."""
    arr = state.as_array() if hasattr(state, "as_array") else np.asarray(state, dtype=float)
    jac = np.zeros((np.asarray(anchors).shape[0], 4))
    jac[:, :2] = toa_position_jacobian(anchors, arr[:2])
    return jac


# ---------------------------------------------------------------------------
# dataset generation and (de)serialization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Truth trajectory + noisy ranges for one (scheme, seed) draw.

    `init_state` is the true state one step before the first epoch; the
    per-epoch truth starts after one dt so a predict-then-update filter stays
    aligned with the data.
    """

    scheme: DataScheme
    anchors: np.ndarray            # (m, 2)
    truth: tuple                   # epochs StateVector entries
    ranges: np.ndarray             # (epochs, m)
    seed: int
    init_state: StateVector

    def __post_init__(self):
        if len(self.truth) != self.ranges.shape[0]:
            raise ValueError("truth and ranges must have the same epoch count")
        if len(self.truth) != self.scheme.epochs:
            raise ValueError("dataset epoch count must match its scheme")
        if self.ranges.shape[1] != self.anchors.shape[0]:
            raise ValueError("one range per anchor per epoch required")

    @property
    def epochs(self) -> int:
        return len(self.truth)

    def truth_positions(self) -> np.ndarray:
        return np.array([s.position() for s in self.truth])


def generate_dataset(scheme: DataScheme, seed: int,
                     initial_pos=defaults.INITIAL_POSITION,
                     initial_vel=defaults.INITIAL_VELOCITY,
                     omega: float = defaults.OMEGA) -> Dataset:
    """Simulate one dataset; deterministic in (scheme, seed) and the motion args."""
    anchors = place_anchors(scheme.anchor_radius, scheme.anchor_count)
    path = ucm_trajectory(initial_pos, initial_vel, omega, scheme.epochs + 1, scheme.dt)
    truth = tuple(path[1:])
    rng = SeededRng(seed)
    m = scheme.anchor_count
    noise = sample_noise_batch(scheme.noise, rng, scheme.epochs * m).reshape(scheme.epochs, m)
    ranges = np.empty((scheme.epochs, m))
    for k, state in enumerate(truth):
        ranges[k] = toa_measure(anchors, state.position()) + noise[k]
    return Dataset(scheme, anchors, truth, ranges, int(seed), path[0])


def dataset_to_csv(dataset: Dataset) -> str:
    """Serialize with 17 significant digits, enough to round-trip doubles."""
    g = "{:.17g}".format
    lines = [
        f"# scheme={dataset.scheme.name}",
        f"# seed={dataset.seed}",
        f"# rng={RNG_NAME}",
        "# anchors=" + ";".join(f"{g(x)},{g(y)}" for x, y in dataset.anchors),
        f"# dt={g(dataset.scheme.dt)}",
        f"# noise={dataset.scheme.noise.header_token()}",
        "# init_state=" + ",".join(g(v) for v in dataset.init_state.as_array()),
    ]
    for k, state in enumerate(dataset.truth, start=1):
        row = [str(k)] + [g(v) for v in state.as_array()]
        row += [g(v) for v in dataset.ranges[k - 1]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_dataset(dataset: Dataset, path) -> str:
    """Write the CSV and return its sha256 hex digest."""
    text = dataset_to_csv(dataset)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode("ascii")).hexdigest()


def dataset_hash(dataset: Dataset) -> str:
    return hashlib.sha256(dataset_to_csv(dataset).encode("ascii")).hexdigest()


_REQUIRED_HEADERS = ("scheme", "seed", "rng", "anchors")
_KNOWN_HEADERS = _REQUIRED_HEADERS + ("dt", "noise", "init_state")


def parse_dataset_csv(text: str) -> Dataset:
    headers = {}
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, sep, value = body.partition("=")
            key = key.strip()
            if not sep:
                raise DatasetFormatError(f"line {lineno}: header without '=': '{raw}'")
            if key not in _KNOWN_HEADERS:
                raise DatasetFormatError(f"line {lineno}: unknown header key '{key}'")
            headers[key] = value.strip()
            continue
        fields = line.split(",")
        try:
            rows.append((lineno, int(fields[0]), [float(v) for v in fields[1:]]))
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: unparseable row: {exc}") from exc
    for key in _REQUIRED_HEADERS:
        if key not in headers:
            raise DatasetFormatError(f"missing required header '# {key}='")
    if headers["rng"] != RNG_NAME:
        raise DatasetFormatError(f"unsupported rng '{headers['rng']}' (expected {RNG_NAME})")
    try:
        anchors = np.array(
            [[float(c) for c in pair.split(",")] for pair in headers["anchors"].split(";")]
        )
    except ValueError as exc:
        raise DatasetFormatError(f"malformed anchors header: {exc}") from exc
    if anchors.ndim != 2 or anchors.shape[1] != 2:
        raise DatasetFormatError("anchors header must list x,y pairs separated by ';'")
    if not rows:
        raise DatasetFormatError("dataset has no measurement rows")

    m = anchors.shape[0]
    truth, ranges = [], []
    for i, (lineno, k, values) in enumerate(rows, start=1):
        if k != i:
            raise DatasetFormatError(f"line {lineno}: epoch index {k}, expected {i}")
        if len(values) != 4 + m:
            raise DatasetFormatError(
                f"line {lineno}: expected {5 + m} fields, got {1 + len(values)}"
            )
        truth.append(StateVector.from_array(values[:4]))
        ranges.append(values[4:])

    noise = parse_noise_token(headers.get("noise", "gaussian:0.1"))
    dt = float(headers.get("dt", defaults.DT))
    name = headers["scheme"]
    radius = float(np.hypot(anchors[0, 0], anchors[0, 1]))
    scheme = DataScheme(name, radius, noise, m, len(rows), dt)
    if "init_state" in headers:
        init_state = StateVector.from_array([float(v) for v in headers["init_state"].split(",")])
    else:
        init_state = StateVector.from_array(defaults.INIT_STATE)
    return Dataset(scheme, anchors, tuple(truth), np.array(ranges), int(headers["seed"]),
                   init_state)


def read_dataset(path) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        return parse_dataset_csv(fh.read())


# ---------------------------------------------------------------------------
# default models derived from a dataset
# ---------------------------------------------------------------------------


def default_process_model(dataset: Dataset, q_diag=None) -> ProcessModel:
    return ProcessModel.constant_velocity(dataset.scheme.dt,
                                          defaults.Q_DIAG if q_diag is None else q_diag)


def default_measurement_model(dataset: Dataset, r_std: float | None = None) -> MeasurementModel:
    """Measurement model assuming the scheme's nominal (inlier) noise floor."""
    std = dataset.scheme.noise.inlier_std() if r_std is None else float(r_std)
    if std <= 0.0:
        raise ValueError(
            "scheme has no positive noise std; pass r_std explicitly for noiseless data"
        )
    m = dataset.anchors.shape[0]
    return MeasurementModel(dataset.anchors, (std * std) * np.eye(m))
