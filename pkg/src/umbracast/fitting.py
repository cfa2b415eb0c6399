"""Light-direction recovery from an observed shadow mask.

The objective compares a soft shadow render at candidate angles against
the observed mask,

    L(phi, theta) = 1 - 2<R, M> / (|R|_1 + |M|_1) + w * Omega,

where R is the splatted density, M the observed mask, and Omega the
fraction of occluder points whose cast failed (negative ray parameter,
back-facing, or off-screen). Minimization runs a coarse angular sweep
followed by finite-difference gradient descent with Armijo backtracking.

The density is rescaled to coverage units (splat mass times source-pixel
area in working-pixel units) and smoothly saturated at 1 per pixel before
the inner product. Without the rescale and saturation the denominator is
constant in (phi, theta) and the objective degenerates into "maximize
mass inside the mask", which any shadow strictly contained in M
satisfies; on the coverage scale the dice term behaves like a true soft
Dice (covering M exactly is optimal, both spilling and compressing are
penalized) and stays in [0, 1]. Failure penalties use equal weight per
category, giving a scale-free Omega in [0, 1] comparable to the dice
term.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .casting import (
    CastReport,
    ShadowRender,
    binarize_render,
    cast_points,
    soft_splat,
)
from .errors import EmptyMaskError, GrazingLightError
from .geometry import (
    BinaryMask,
    PinholeModel,
    PointMap,
    ReceiverPlane,
    UnitLightDirection,
    downsample_mask_fractional,
    light_from_angles,
    scale_model,
)

FLAG_PENALTY_SATURATED = "penalty_saturated"
FLAG_HIGH_PENALTY = "unreliable_high_penalty"
FLAG_POOR_MASK_MATCH = "poor_mask_match"


@dataclass(frozen=True)
class FitConfig:
    """Tunables for the sweep + refinement. Angles are in degrees here
    because that is how the grid is specified; the API itself is radians."""

    azimuth_step_deg: float = 10.0
    elevation_step_deg: float = 5.0
    elevation_min_deg: float = 5.0
    elevation_max_deg: float = 85.0
    penalty_weight: float = 0.5
    # narrower than the rendering default: at 64x64 a wide kernel blurs
    # away the sub-pixel coverage signal that localizes the light
    sigma: float = 0.35
    resolution: int = 64
    max_iters: int = 100
    fd_step_deg: float = 0.25
    grad_tol: float = 1e-4
    step_tol: float = 1e-5
    armijo_init_deg: float = 2.0
    armijo_shrink: float = 0.5
    armijo_c: float = 1e-4
    armijo_max_halvings: int = 20

    @classmethod
    def from_json(cls, text: str) -> "FitConfig":
        data = json.loads(text)
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass(frozen=True)
class FitObjectiveValue:
    total: float
    dice_term: float
    penalty_term: float
    weight_w: float
    grazing: bool = False


@dataclass(frozen=True, eq=False)
class FitResult:
    direction: UnitLightDirection
    objective: FitObjectiveValue
    sweep_best: tuple[float, float]
    refine_iterations: int
    converged: bool
    flags: tuple[str, ...]
    cast_report: CastReport
    fitted_mask: BinaryMask


@dataclass(frozen=True, eq=False)
class SweepResult:
    phi: float
    theta: float
    table: np.ndarray          # (n_elevations, n_azimuths) objective totals
    azimuths: np.ndarray       # radians
    elevations: np.ndarray     # radians


@dataclass(frozen=True, eq=False)
class _PreparedScene:
    """Scene resampled once to working resolution for repeated evaluation."""

    occluder_pts: np.ndarray
    mask: np.ndarray           # fractional observed shadow coverage
    mask_l1: float
    coverage_scale: float      # source-pixel area in working-pixel units
    plane: ReceiverPlane
    model: PinholeModel
    dims: tuple[int, int]


def _prepare(
    pm: PointMap,
    object_mask: BinaryMask,
    shadow_mask: BinaryMask,
    plane: ReceiverPlane,
    model: PinholeModel,
    resolution: int,
) -> _PreparedScene:
    if not shadow_mask.bits.any():
        raise EmptyMaskError("observed shadow mask is empty")
    out_h = min(resolution, pm.height)
    out_w = min(resolution, pm.width)
    # fractional (block-mean) restriction of the observed mask: any-true
    # pooling would fatten thin shadows and bias the match
    m = downsample_mask_fractional(shadow_mask, out_h, out_w)
    wmodel = scale_model(model, out_w / pm.width, out_h / pm.height)

    # cast every valid object pixel, exactly as the kernel sees them:
    # block-averaged positions would mix silhouette pixels with the
    # background behind them, and subsampling would shift the sampled
    # silhouette rim relative to the observed mask. Scaling the summed
    # density by the source-pixel area keeps it on the coverage scale of
    # the fractional mask instead of saturating at dozens of unit masses
    # per working pixel.
    occ = object_mask.bits & pm.valid
    if not occ.any():
        raise EmptyMaskError("object mask has no valid pixels")
    return _PreparedScene(
        occluder_pts=pm.points[occ],
        mask=m,
        mask_l1=float(m.sum()),
        coverage_scale=(out_h * out_w) / (pm.height * pm.width),
        plane=plane,
        model=wmodel,
        dims=(out_h, out_w),
    )


SATURATE_WIDTH = 0.1


def _soft_saturate(x: np.ndarray, width: float = SATURATE_WIDTH) -> np.ndarray:
    """Smooth min(x, 1): coverage above one working pixel cannot grow the
    match further. The smooth transition keeps the objective free of
    derivative kinks at pixels whose coverage hovers around 1, which a
    hard clamp would scatter across the whole interior of the shadow."""
    # softmin(x, 1) = min(x, 1) - width * log(1 + exp(-|x - 1| / width));
    # floored at 0 so empty pixels stay exactly empty
    soft = np.minimum(x, 1.0) - width * np.log1p(np.exp(-np.abs(x - 1.0) / width))
    return np.maximum(soft, 0.0)


def _objective(
    scene: _PreparedScene, phi: float, theta: float, w: float, sigma: float
) -> tuple[FitObjectiveValue, CastReport | None, ShadowRender | None]:
    light = light_from_angles(phi, theta)
    try:
        hits, report = cast_points(
            scene.occluder_pts, light, scene.plane, scene.model, scene.dims
        )
    except GrazingLightError:
        val = FitObjectiveValue(
            total=1.0 + w, dice_term=1.0, penalty_term=1.0, weight_w=w, grazing=True
        )
        return val, None, None

    render = soft_splat(hits, scene.model, scene.dims, sigma)
    capped = _soft_saturate(render.density * scene.coverage_scale)
    overlap = float((capped * scene.mask).sum())
    dice = 1.0 - 2.0 * overlap / (float(capped.sum()) + scene.mask_l1)
    penalty = report.failure_fraction
    val = FitObjectiveValue(
        total=dice + w * penalty, dice_term=dice, penalty_term=penalty, weight_w=w
    )
    return val, report, render


def fit_objective(
    pm: PointMap,
    object_mask: BinaryMask,
    shadow_mask: BinaryMask,
    plane: ReceiverPlane,
    model: PinholeModel,
    phi: float,
    theta: float,
    w: float = 0.5,
    sigma: float = FitConfig.sigma,
    resolution: int = 64,
) -> FitObjectiveValue:
    """Evaluate the mask-matching objective at one candidate light."""
    scene = _prepare(pm, object_mask, shadow_mask, plane, model, resolution)
    val, _, _ = _objective(scene, phi, theta, w, sigma)
    return val


def coarse_sweep(
    pm: PointMap,
    object_mask: BinaryMask,
    shadow_mask: BinaryMask,
    plane: ReceiverPlane,
    model: PinholeModel,
    config: FitConfig = FitConfig(),
) -> SweepResult:
    """Evaluate the objective on the full angular grid and return the
    argmin. Ties break toward smaller elevation, then smaller azimuth;
    the reduction is applied after the full table is built, so evaluation
    order cannot change the result."""
    scene = _prepare(pm, object_mask, shadow_mask, plane, model, config.resolution)
    return _sweep_prepared(scene, config)


def _sweep_prepared(scene: _PreparedScene, config: FitConfig) -> SweepResult:
    if config.azimuth_step_deg <= 0 or config.elevation_step_deg <= 0:
        raise ValueError("sweep steps must be positive")
    azis = np.radians(np.arange(0.0, 360.0, config.azimuth_step_deg))
    elevs = np.radians(
        np.arange(
            config.elevation_min_deg,
            config.elevation_max_deg + 1e-9,
            config.elevation_step_deg,
        )
    )
    table = np.empty((elevs.size, azis.size))
    for i, theta in enumerate(elevs):
        for j, phi in enumerate(azis):
            val, _, _ = _objective(
                scene, float(phi), float(theta), config.penalty_weight, config.sigma
            )
            table[i, j] = val.total
    best = sweep_argmin(table)
    return SweepResult(
        phi=float(azis[best[1]]),
        theta=float(elevs[best[0]]),
        table=table,
        azimuths=azis,
        elevations=elevs,
    )


def sweep_argmin(table: np.ndarray) -> tuple[int, int]:
    """First strict minimum scanning elevations then azimuths, so ties
    resolve to the smaller elevation and then the smaller azimuth
    regardless of how the grid was evaluated."""
    return np.unravel_index(int(np.argmin(table)), table.shape)  # type: ignore[return-value]


def refine(
    pm: PointMap,
    object_mask: BinaryMask,
    shadow_mask: BinaryMask,
    plane: ReceiverPlane,
    model: PinholeModel,
    start: tuple[float, float],
    config: FitConfig = FitConfig(),
    trace: list[float] | None = None,
) -> FitResult:
    """Gradient refinement from `start` (phi, theta in radians).

    When `trace` is given, the objective of every accepted iterate is
    appended to it (starting value first)."""
    scene = _prepare(pm, object_mask, shadow_mask, plane, model, config.resolution)
    return _refine_prepared(scene, start, start, config, trace)


def _clamp_angles(phi: float, theta: float) -> tuple[float, float]:
    # keep elevation inside a safe band: below-plane lights cannot cast
    # and near-vertical lights make azimuth unidentifiable
    theta = min(max(theta, math.radians(0.5)), math.radians(89.0))
    return phi % (2.0 * math.pi), theta


def _refine_prepared(
    scene: _PreparedScene,
    start: tuple[float, float],
    sweep_best: tuple[float, float],
    config: FitConfig,
    trace: list[float] | None = None,
) -> FitResult:
    w, sigma = config.penalty_weight, config.sigma
    h = math.radians(config.fd_step_deg)
    alpha0 = math.radians(config.armijo_init_deg)

    def f(phi, theta):
        val, _, _ = _objective(scene, phi, theta, w, sigma)
        return val.total

    phi, theta = _clamp_angles(*start)
    current = f(phi, theta)
    if trace is not None:
        trace.append(current)
    iterations = 0
    converged = False

    for _ in range(config.max_iters):
        gphi = (f(phi + h, theta) - f(phi - h, theta)) / (2.0 * h)
        gtheta = (f(*_clamp_angles(phi, theta + h)) - f(*_clamp_angles(phi, theta - h))) / (2.0 * h)
        gnorm = math.hypot(gphi, gtheta)
        if gnorm < config.grad_tol:
            converged = True
            break

        # backtracking line search along -g; first trial moves armijo_init
        # radians in parameter space
        alpha = alpha0 / gnorm
        accepted = False
        for _ in range(config.armijo_max_halvings + 1):
            cphi, ctheta = _clamp_angles(phi - alpha * gphi, theta - alpha * gtheta)
            trial = f(cphi, ctheta)
            if trial <= current - config.armijo_c * alpha * gnorm * gnorm:
                phi, theta, current = cphi, ctheta, trial
                if trace is not None:
                    trace.append(current)
                accepted = True
                break
            alpha *= config.armijo_shrink

        iterations += 1
        if not accepted:
            converged = True  # no descent step exists at this scale
            break
        if alpha * gnorm < config.step_tol:
            converged = True
            break

    final, report, render = _objective(scene, phi, theta, w, sigma)
    if report is None:  # grazing at the final iterate
        report = CastReport(0, 0, 0, len(scene.occluder_pts))
        fitted = BinaryMask(np.zeros(scene.dims, dtype=bool))
    else:
        fitted = binarize_render(render)

    flags = []
    if final.penalty_term >= 1.0:
        flags.append(FLAG_PENALTY_SATURATED)
    if final.penalty_term > 0.5:
        flags.append(FLAG_HIGH_PENALTY)
        converged = False
    if final.dice_term > 0.5:
        flags.append(FLAG_POOR_MASK_MATCH)

    return FitResult(
        direction=light_from_angles(phi, theta),
        objective=final,
        sweep_best=sweep_best,
        refine_iterations=iterations,
        converged=converged,
        flags=tuple(flags),
        cast_report=report,
        fitted_mask=fitted,
    )


def fit_light(
    pm: PointMap,
    object_mask: BinaryMask,
    shadow_mask: BinaryMask,
    plane: ReceiverPlane,
    model: PinholeModel,
    config: FitConfig = FitConfig(),
) -> tuple[FitResult, SweepResult]:
    """Coarse sweep followed by gradient refinement.

    Returns the fit plus the sweep table for diagnostics; the refined
    iterate never has a higher objective than the sweep argmin.
    """
    if not object_mask.bits.any():
        raise EmptyMaskError("object mask is empty")
    scene = _prepare(pm, object_mask, shadow_mask, plane, model, config.resolution)
    sweep = _sweep_prepared(scene, config)
    result = _refine_prepared(scene, (sweep.phi, sweep.theta), (sweep.phi, sweep.theta), config)
    return result, sweep


def fit_result_to_dict(result: FitResult) -> dict:
    """JSON-ready record: angles in degrees, unit vector, objective
    breakdown, convergence flags, and failure-category counts."""
    return {
        "phi_deg": math.degrees(result.direction.azimuth),
        "theta_deg": math.degrees(result.direction.elevation),
        "vector": [float(x) for x in result.direction.vector],
        "objective": {
            "total": result.objective.total,
            "dice_term": result.objective.dice_term,
            "penalty_term": result.objective.penalty_term,
            "weight_w": result.objective.weight_w,
            "grazing": result.objective.grazing,
        },
        "sweep_best": {
            "phi_deg": math.degrees(result.sweep_best[0]),
            "theta_deg": math.degrees(result.sweep_best[1]),
        },
        "refine_iterations": result.refine_iterations,
        "converged": result.converged,
        "flags": list(result.flags),
        "cast_report": {
            "n_cast": result.cast_report.n_cast,
            "n_negative_t": result.cast_report.n_negative_t,
            "n_backfacing": result.cast_report.n_backfacing,
            "n_offscreen": result.cast_report.n_offscreen,
        },
    }
