"""Score distillation against a pluggable noise-prediction oracle.

The optimizer renders an image x, perturbs it to z_t = sqrt(ab_t) x +
sqrt(1 - ab_t) eps, asks the oracle for its noise estimate eps_hat given the
part-label condition image and the prompt, and backpropagates the pixel
factor w(t) (eps_hat - eps) through the renderer. No gradient flows through
the oracle itself.

Built-in oracles make the math testable without a diffusion model:

* TargetImageOracle: the exact noise predictor of a point-mass distribution
  at a reference image; drives the field toward rendering that image.
* SilhouetteOracle: same math with the target synthesized from the condition
  image (palette colors over white), so conditioning is view-dependent.
* MultiViewTargetOracle: per-camera targets, selected through the
  optimizer's set_camera hook; the synthetic-recovery tests use this.
* external_oracle: a client speaking the newline-delimited-JSON wire
  protocol to an out-of-process noise predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GuidanceUnavailableError, InvalidInputError
from .raster import ConditionImage, PALETTE, palette_rgb

WEIGHT_MODES = ("one_minus_alpha_bar", "constant", "sigma")


@dataclass
class NoiseSchedule:
    """Discrete diffusion schedule: strictly decreasing alpha_bar in (0, 1].

    ``t_min``/``t_max`` bound the sampled noise level as fractions of T.
    """

    alpha_bar: np.ndarray
    t_min: float = 0.02
    t_max: float = 0.98

    def __post_init__(self):
        self.alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        ab = self.alpha_bar
        if ab.ndim != 1 or ab.shape[0] < 2:
            raise InvalidInputError("alpha_bar must be a 1D array of length >= 2")
        if not (np.all(ab > 0) and np.all(ab <= 1)):
            raise InvalidInputError("alpha_bar values must lie in (0, 1]")
        if not np.all(np.diff(ab) < 0):
            raise InvalidInputError("alpha_bar must be strictly decreasing")
        if not 0 <= self.t_min < self.t_max <= 1:
            raise InvalidInputError("need 0 <= t_min < t_max <= 1")

    @property
    def T(self) -> int:
        return self.alpha_bar.shape[0]

    @classmethod
    def cosine(cls, T: int = 1000, s: float = 0.008, **kw) -> "NoiseSchedule":
        t = np.arange(T, dtype=np.float64)
        f = np.cos((t / T + s) / (1 + s) * np.pi / 2) ** 2
        f0 = np.cos(s / (1 + s) * np.pi / 2) ** 2
        ab = np.clip(f / f0, 1e-6, 1.0)
        return cls(alpha_bar=ab, **kw)

    def sample_t(self, rng: np.random.Generator) -> int:
        lo = int(self.t_min * self.T)
        hi = max(lo + 1, int(self.t_max * self.T))
        return int(rng.integers(lo, hi))


def weight(t: int, schedule: NoiseSchedule, mode: str = "one_minus_alpha_bar") -> float:
    """The SDS weighting function w(t); a pure function of the noise level."""
    ab = float(schedule.alpha_bar[t])
    if mode == "one_minus_alpha_bar":
        return 1.0 - ab
    if mode == "constant":
        return 1.0
    if mode == "sigma":
        return float(np.sqrt(1.0 - ab))
    raise InvalidInputError(f"unknown weight mode {mode!r}; choose from {WEIGHT_MODES}")


def add_noise(x: np.ndarray, t: int, eps: np.ndarray,
              schedule: NoiseSchedule) -> np.ndarray:
    """Forward noising z_t = sqrt(ab_t) x + sqrt(1 - ab_t) eps."""
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if not 0 <= t < schedule.T:
        raise InvalidInputError(f"t={t} outside [0, {schedule.T})")
    if x.shape != eps.shape:
        raise InvalidInputError("x and eps shapes must agree")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps


@dataclass
class GuidanceRequest:
    """One SDS query: rendered image, noise level, drawn noise, condition
    image and prompt."""

    x: np.ndarray
    t: int
    eps: np.ndarray
    condition: ConditionImage | None
    prompt: str

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.eps = np.asarray(self.eps, dtype=np.float64)
        if self.x.shape != self.eps.shape:
            raise InvalidInputError("image and noise shapes must agree")
        if self.condition is not None and self.condition.labels.shape != self.x.shape[:2]:
            raise InvalidInputError("condition resolution must match the image")


class GuidanceOracle:
    """Interface: predict the noise inside z_t given (t, condition, prompt)."""

    def predict_noise(self, z_t: np.ndarray, t: int, condition: ConditionImage | None,
                      prompt: str) -> np.ndarray:
        raise NotImplementedError

    def set_camera(self, camera) -> None:
        """Optional per-iteration hook; the optimizer calls it with the
        iteration's camera before querying. Default: ignore."""

    def close(self) -> None:
        """Release any external resources. Default: nothing to do."""


def sds_pixel_grad(x, oracle: GuidanceOracle, t: int, eps, condition, prompt,
                   schedule: NoiseSchedule,
                   weight_mode: str = "one_minus_alpha_bar") -> np.ndarray:
    """The pixel-space SDS factor w(t) (eps_hat - eps).

    This is the single-sample Monte-Carlo estimator of the conditioned SDS
    gradient; the renderer's backward pass propagates it to the grids.
    """
    req = GuidanceRequest(x=x, t=t, eps=eps, condition=condition, prompt=prompt)
    z_t = add_noise(req.x, t, req.eps, schedule)
    eps_hat = oracle.predict_noise(z_t, t, condition, prompt)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != req.eps.shape:
        raise GuidanceUnavailableError(
            f"oracle returned shape {eps_hat.shape}, expected {req.eps.shape}")
    if not np.all(np.isfinite(eps_hat)):
        raise GuidanceUnavailableError("oracle returned non-finite values")
    return weight(t, schedule, weight_mode) * (eps_hat - req.eps)


class TargetImageOracle(GuidanceOracle):
    """Exact denoiser of a point mass at x_star:
    eps_hat = (z_t - sqrt(ab_t) x_star) / sqrt(1 - ab_t)."""

    def __init__(self, x_star: np.ndarray, schedule: NoiseSchedule):
        self.x_star = np.asarray(x_star, dtype=np.float64)
        if self.x_star.ndim != 3 or self.x_star.shape[-1] != 3:
            raise InvalidInputError("x_star must be an (H, W, 3) image")
        self.schedule = schedule

    def predict_noise(self, z_t, t, condition, prompt):
        z_t = np.asarray(z_t, dtype=np.float64)
        if z_t.shape != self.x_star.shape:
            raise InvalidInputError(
                f"z_t shape {z_t.shape} does not match target {self.x_star.shape}")
        ab = self.schedule.alpha_bar[t]
        return (z_t - np.sqrt(ab) * self.x_star) / np.sqrt(1.0 - ab)


def builtin_target_oracle(x_star, schedule: NoiseSchedule) -> TargetImageOracle:
    return TargetImageOracle(x_star, schedule)


class SilhouetteOracle(GuidanceOracle):
    """Target synthesized from the condition: part palette colors over a
    white background. Exercises the view-dependent conditioning path with
    the same point-mass math as the target oracle."""

    def __init__(self, schedule: NoiseSchedule):
        self.schedule = schedule

    def target_image(self, condition: ConditionImage) -> np.ndarray:
        rgb = palette_rgb(condition.labels).astype(np.float64) / 255.0
        bgmask = condition.labels == 0
        rgb[bgmask] = 1.0
        return rgb

    def predict_noise(self, z_t, t, condition, prompt):
        if condition is None:
            raise InvalidInputError("silhouette oracle requires a condition image")
        z_t = np.asarray(z_t, dtype=np.float64)
        target = self.target_image(condition)
        if z_t.shape != target.shape:
            raise InvalidInputError("z_t resolution does not match the condition")
        ab = self.schedule.alpha_bar[t]
        return (z_t - np.sqrt(ab) * target) / np.sqrt(1.0 - ab)


def builtin_silhouette_oracle(schedule: NoiseSchedule) -> SilhouetteOracle:
    return SilhouetteOracle(schedule)


class MultiViewTargetOracle(GuidanceOracle):
    """Point-mass targets keyed by camera, chosen via the set_camera hook."""

    def __init__(self, targets: dict, schedule: NoiseSchedule):
        if not targets:
            raise InvalidInputError("need at least one (camera, target) pair")
        self.targets = {cam: np.asarray(img, dtype=np.float64)
                        for cam, img in targets.items()}
        self.schedule = schedule
        self._current = None

    def set_camera(self, camera):
        if camera not in self.targets:
            raise GuidanceUnavailableError(f"no target registered for camera {camera}")
        self._current = self.targets[camera]

    def predict_noise(self, z_t, t, condition, prompt):
        if self._current is None:
            raise GuidanceUnavailableError("set_camera was never called")
        z_t = np.asarray(z_t, dtype=np.float64)
        if z_t.shape != self._current.shape:
            raise InvalidInputError("z_t shape does not match the view target")
        ab = self.schedule.alpha_bar[t]
        return (z_t - np.sqrt(ab) * self._current) / np.sqrt(1.0 - ab)


def external_oracle(endpoint: str, schedule: NoiseSchedule | None = None,
                    timeout: float = 30.0, cfg_scale: float = 7.5) -> GuidanceOracle:
    """Client for an out-of-process noise predictor.

    ``endpoint`` is "tcp:HOST:PORT" or "stdio:COMMAND ...". See
    docs/wire_protocol.md for the message schema.
    """
    from .wire import WireOracleClient

    return WireOracleClient(endpoint, schedule=schedule, timeout=timeout,
                            cfg_scale=cfg_scale)
