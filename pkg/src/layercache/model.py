"""Synthetic layered velocity network with controllable per-group time dynamics.

The network maps a latent state and a noise level sigma to a velocity through a
stack of groups. Group g applies a fixed random mixing matrix, a squashing
nonlinearity, and a sigma-dependent gain and bias:

    h_g = squash(A_g @ h_{g-1}) * (1 + a_g(sigma)) + b_g(sigma)

with h_{-1} = x and velocity = W @ h_{G-1}. The per-group time profiles make
some groups nearly static and others volatile, which is what the profiler and
scheduler exploit downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError

PROFILE_KINDS = ("smooth_decay", "oscillatory", "spike_train", "linear")
SQUASH_KINDS = ("tanh", "identity")


@dataclass(frozen=True)
class GroupProfile:
    """Shape of one group's sigma-dependent modulation.

    ``amplitude`` scales the multiplicative gain a_g, ``bias_amplitude`` scales
    the additive bias b_g. Both share the same base waveform, selected by
    ``kind``:

    * ``smooth_decay``: exp(-decay_rate * (1 - sigma)), settles as sigma drops.
    * ``oscillatory``: exp(-decay_rate * (1 - sigma)) * sin(2*pi*(1 - sigma)/period
      + phase), a damped oscillation; use decay_rate 0 for a steady one.
    * ``spike_train``: sum of narrow Gaussian bumps centered at the sigmas that
      a nominal ``num_steps``-step schedule visits at ``spike_steps``.
    * ``linear``: sigma itself, so group outputs are affine in sigma whenever
      mixing is disabled.
    """

    kind: str = "smooth_decay"
    amplitude: float = 0.0
    bias_amplitude: float = 0.0
    bias_offset: float = 0.0
    decay_rate: float = 4.0
    period: float = 0.25
    phase: float = 0.0
    spike_steps: tuple[int, ...] = ()
    spike_width: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in PROFILE_KINDS:
            raise ConfigurationError(f"unknown profile kind {self.kind!r}")
        if self.kind == "oscillatory" and self.period <= 0:
            raise ConfigurationError("oscillatory profile needs period > 0")
        if self.kind == "spike_train" and self.spike_width <= 0:
            raise ConfigurationError("spike_train profile needs spike_width > 0")

    def base(self, sigma: float, num_steps: int) -> float:
        """Evaluate the base waveform at one sigma."""
        if self.kind == "smooth_decay":
            return float(np.exp(-self.decay_rate * (1.0 - sigma)))
        if self.kind == "oscillatory":
            envelope = np.exp(-self.decay_rate * (1.0 - sigma))
            return float(envelope * np.sin(2.0 * np.pi * (1.0 - sigma) / self.period + self.phase))
        if self.kind == "spike_train":
            width = self.spike_width / num_steps
            total = 0.0
            for step in self.spike_steps:
                center = 1.0 - step / num_steps
                total += np.exp(-0.5 * ((sigma - center) / width) ** 2)
            return float(total)
        return float(sigma)


@dataclass(frozen=True)
class ModelConfig:
    """Full description of a synthetic model; everything downstream is seeded."""

    seed: int = 0
    num_groups: int = 3
    state_dim: int = 1024
    num_steps: int = 50
    mixing_scale: float = 0.9
    squash: str = "tanh"
    latent_shape: tuple[int, ...] = (32, 32)
    profiles: tuple[GroupProfile, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.num_groups < 1:
            raise ConfigurationError("num_groups must be >= 1")
        if self.state_dim < 1:
            raise ConfigurationError("state_dim must be >= 1")
        if self.num_steps < 1:
            raise ConfigurationError("num_steps must be >= 1")
        if not 0.0 <= self.mixing_scale <= 1.0:
            raise ConfigurationError("mixing_scale must lie in [0, 1]")
        if self.squash not in SQUASH_KINDS:
            raise ConfigurationError(f"unknown squash {self.squash!r}")
        if len(self.profiles) != self.num_groups:
            raise ConfigurationError(
                f"expected {self.num_groups} profiles, got {len(self.profiles)}"
            )
        if int(np.prod(self.latent_shape)) != self.state_dim:
            raise ConfigurationError("latent_shape must multiply out to state_dim")

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["latent_shape"] = list(self.latent_shape)
        out["profiles"] = []
        for prof in self.profiles:
            entry = asdict(prof)
            entry["spike_steps"] = list(prof.spike_steps)
            out["profiles"].append(entry)
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "ModelConfig":
        try:
            raw_profiles = data["profiles"]
        except KeyError as exc:
            raise ConfigurationError("model config missing 'profiles'") from exc
        profiles = []
        for entry in raw_profiles:
            entry = dict(entry)
            entry["spike_steps"] = tuple(entry.get("spike_steps", ()))
            try:
                profiles.append(GroupProfile(**entry))
            except TypeError as exc:
                raise ConfigurationError(f"bad profile entry: {exc}") from exc
        fields = {k: v for k, v in data.items() if k != "profiles"}
        fields["latent_shape"] = tuple(fields.get("latent_shape", ()))
        try:
            return cls(profiles=tuple(profiles), **fields)
        except TypeError as exc:
            raise ConfigurationError(f"bad model config: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _spectral_scale(matrix: np.ndarray, target: float) -> np.ndarray:
    if target == 0.0:
        return np.zeros_like(matrix)
    norm = float(np.linalg.norm(matrix, 2))
    return matrix * (target / norm)


class SyntheticModel:
    """Deterministic layered network built from a :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        dim = config.state_dim
        scale = 1.0 / np.sqrt(dim)
        self.mixers = []
        for _ in range(config.num_groups):
            raw = rng.standard_normal((dim, dim)) * scale
            self.mixers.append(_spectral_scale(raw, config.mixing_scale))
        self.bias_dirs = []
        for _ in range(config.num_groups):
            vec = rng.standard_normal(dim)
            self.bias_dirs.append(vec / np.linalg.norm(vec))
        raw_out = rng.standard_normal((dim, dim)) * scale
        self.readout = _spectral_scale(raw_out, 1.0)

    @property
    def num_groups(self) -> int:
        return self.config.num_groups

    @property
    def state_dim(self) -> int:
        return self.config.state_dim

    def _check_state(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.config.state_dim,):
            raise ConfigurationError(
                f"state must have shape ({self.config.state_dim},), got {x.shape}"
            )
        return x

    def gain(self, group: int, sigma: float) -> float:
        prof = self.config.profiles[group]
        return prof.amplitude * prof.base(sigma, self.config.num_steps)

    def bias(self, group: int, sigma: float) -> np.ndarray:
        prof = self.config.profiles[group]
        coeff = prof.bias_amplitude * (prof.bias_offset + prof.base(sigma, self.config.num_steps))
        return coeff * self.bias_dirs[group]

    def group_forward(self, group: int, h_in: np.ndarray, sigma: float) -> np.ndarray:
        """Apply one group to its upstream input at noise level sigma."""
        if not 0 <= group < self.config.num_groups:
            raise ConfigurationError(f"group index {group} out of range")
        h_in = self._check_state(h_in)
        pre = self.mixers[group] @ h_in
        if self.config.squash == "tanh":
            pre = np.tanh(pre)
        h = pre * (1.0 + self.gain(group, sigma)) + self.bias(group, sigma)
        if not np.all(np.isfinite(h)):
            raise NumericError(f"group {group} produced non-finite values at sigma={sigma}")
        return h

    def forward(self, x: np.ndarray, sigma: float) -> tuple[np.ndarray, list[np.ndarray]]:
        """Run the full stack; returns (velocity, per-group hidden states)."""
        h = self._check_state(x)
        hiddens = []
        for g in range(self.config.num_groups):
            h = self.group_forward(g, h, sigma)
            hiddens.append(h)
        velocity = self.readout @ h
        if not np.all(np.isfinite(velocity)):
            raise NumericError(f"readout produced non-finite values at sigma={sigma}")
        return velocity, hiddens

    def velocity_from_hidden(self, h_last: np.ndarray) -> np.ndarray:
        velocity = self.readout @ self._check_state(h_last)
        if not np.all(np.isfinite(velocity)):
            raise NumericError("readout produced non-finite values")
        return velocity

    def velocity_bound(self, sigma_max: float = 1.0) -> float:
        """Upper bound on ||velocity||_inf over states, valid for tanh squash."""
        if self.config.squash != "tanh":
            raise ConfigurationError("velocity_bound requires the tanh squash")
        grid = np.linspace(0.0, sigma_max, 2001)
        bound = 0.0
        g_last = self.config.num_groups - 1
        prof = self.config.profiles[g_last]
        base_max = max(abs(prof.base(float(s), self.config.num_steps)) for s in grid)
        gain_max = 1.0 + abs(prof.amplitude) * base_max
        bias_max = abs(prof.bias_amplitude) * (abs(prof.bias_offset) + base_max)
        h_inf = gain_max + bias_max * float(np.max(np.abs(self.bias_dirs[g_last])))
        row_sums = float(np.max(np.sum(np.abs(self.readout), axis=1)))
        bound = row_sums * h_inf
        return bound


def default_heterogeneous_config(
    seed: int = 7,
    state_dim: int = 1024,
    num_steps: int = 50,
) -> ModelConfig:
    """Three-group model with one calm, one oscillating, and one spiky group."""
    side = int(np.sqrt(state_dim))
    if side * side != state_dim:
        raise ConfigurationError("state_dim must be a perfect square for the 2-D latent view")
    profiles = (
        GroupProfile(kind="smooth_decay", amplitude=0.005, bias_amplitude=0.04,
                     bias_offset=0.3, decay_rate=2.0),
        GroupProfile(kind="oscillatory", amplitude=0.45, bias_amplitude=0.3,
                     period=1.2, decay_rate=1.0),
        GroupProfile(kind="spike_train", amplitude=0.9, bias_amplitude=0.7,
                     spike_steps=(3, 7, 11), spike_width=0.5),
    )
    return ModelConfig(
        seed=seed,
        num_groups=3,
        state_dim=state_dim,
        num_steps=num_steps,
        mixing_scale=0.75,
        squash="tanh",
        latent_shape=(side, side),
        profiles=profiles,
    )


def affine_config(
    seed: int = 11,
    state_dim: int = 96,
    num_groups: int = 3,
    num_steps: int = 50,
) -> ModelConfig:
    """Model whose group outputs are affine in sigma (mixing and gain disabled)."""
    profiles = tuple(
        GroupProfile(kind="linear", amplitude=0.0, bias_amplitude=0.6 + 0.2 * g,
                     bias_offset=0.25)
        for g in range(num_groups)
    )
    return ModelConfig(
        seed=seed,
        num_groups=num_groups,
        state_dim=state_dim,
        num_steps=num_steps,
        mixing_scale=0.0,
        squash="identity",
        latent_shape=(state_dim,),
        profiles=profiles,
    )


def linear_mixing_config(
    seed: int = 13,
    state_dim: int = 96,
    num_groups: int = 3,
    num_steps: int = 50,
    mixing_scale: float = 0.7,
) -> ModelConfig:
    """Fully linear model (identity squash) with mixing enabled.

    Substitution errors superpose exactly here, which makes it the reference
    case for the decomposition diagnostic.
    """
    profiles = tuple(
        GroupProfile(kind="linear", amplitude=0.0, bias_amplitude=0.5,
                     bias_offset=0.2)
        for _ in range(num_groups)
    )
    return ModelConfig(
        seed=seed,
        num_groups=num_groups,
        state_dim=state_dim,
        num_steps=num_steps,
        mixing_scale=mixing_scale,
        squash="identity",
        latent_shape=(state_dim,),
        profiles=profiles,
    )
