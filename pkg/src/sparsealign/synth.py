"""Synthetic terrain dataset generation.

A textured heightmap stands in for the orthophoto + elevation data the
alignment stages are evaluated on.  The renderer casts one ray per pixel
through a bilinearly interpolated height surface (ray marching with step
bounded by the lattice spacing, then 20 bisection refinements) and writes
texture color plus camera-frame z-depth.  Pose pairs are rejection-sampled
so that both view frusta stay over the map, and photometric jitter
emulates challenging light conditions.

World frame: z-up; elevation[i, j] is the height at (x, y) =
(j * spacing, i * spacing).  The texture covers the same ground extent and
may have a finer resolution than the elevation lattice.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import (
    CameraBelowTerrain,
    InsufficientValidDepth,
    RejectionBudgetExceeded,
)
from .geometry import PinholeCamera, Se3Pose
from .iclk import BORDER, SparseFeature
from .image import _bilinear

_BISECTIONS = 20
_PAIR_ATTEMPTS = 10000


@dataclass(frozen=True)
class HeightmapScene:
    """Elevation grid (meters) plus a georegistered RGB texture."""

    elevation: np.ndarray
    spacing: float
    texture: np.ndarray

    def __post_init__(self):
        elev = np.asarray(self.elevation, dtype=np.float64)
        tex = np.asarray(self.texture, dtype=np.float32)
        if elev.ndim != 2 or min(elev.shape) < 2:
            raise ValueError("elevation must be a grid of at least 2x2")
        if not np.isfinite(elev).all():
            raise ValueError("elevation contains non-finite heights")
        if tex.ndim != 3 or tex.shape[2] != 3 or min(tex.shape[:2]) < 2:
            raise ValueError("texture must be an (H, W, 3) image")
        if not self.spacing > 0:
            raise ValueError("lattice spacing must be positive")
        object.__setattr__(self, "elevation", elev)
        object.__setattr__(self, "texture", tex)

    @property
    def extent(self):
        """Ground coverage (x_max, y_max) in meters."""
        h, w = self.elevation.shape
        return ((w - 1) * self.spacing, (h - 1) * self.spacing)

    def surface_height(self, x, y):
        """Bilinear height of the surface at world (x, y); inputs may be arrays."""
        gh, gw = self.elevation.shape
        gx = np.clip(np.asarray(x, dtype=np.float64) / self.spacing, 0, gw - 1)
        gy = np.clip(np.asarray(y, dtype=np.float64) / self.spacing, 0, gh - 1)
        return _bilinear(self.elevation, gx, gy)

    def surface_tolerance(self) -> float:
        """Height tolerance of the bisection used by :func:`render`.

        The final bracket along the ray is spacing / 2^20 long; the height
        mismatch at the reported hit is bounded by (1 + L) times half the
        bracket, L being the surface slope bound.
        """
        gy, gx = np.gradient(self.elevation, self.spacing)
        slope = float(np.hypot(gx, gy).max())
        return (1.0 + slope) * self.spacing * 2.0**-_BISECTIONS

    def _texture_scale(self):
        ex, ey = self.extent
        th, tw = self.texture.shape[:2]
        return (tw - 1) / ex, (th - 1) / ey

    def save(self, heightmap_path, texture_path) -> None:
        io.write_heightmap(heightmap_path, self.elevation, self.spacing)
        io.write_png(texture_path, self.texture)

    @staticmethod
    def load(heightmap_path, texture_path) -> "HeightmapScene":
        elevation, spacing = io.read_heightmap(heightmap_path)
        texture = io.read_image(texture_path)
        return HeightmapScene(elevation, spacing, texture.astype(np.float32))


@dataclass
class RenderedView:
    rgb: np.ndarray
    depth: np.ndarray
    pose: Se3Pose
    camera: PinholeCamera


@dataclass(frozen=True)
class JitterParams:
    """Brightness/contrast/gamma photometric perturbation."""

    brightness_delta: float = 0.0
    contrast_factor: float = 1.0
    gamma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (self.contrast_factor > 0 and self.gamma > 0):
            raise ValueError("contrast factor and gamma must be positive")

    @staticmethod
    def random(
        seed: int,
        brightness_range: float = 0.2,
        contrast_range=(0.7, 1.3),
        gamma_range=(0.8, 1.25),
    ) -> "JitterParams":
        rng = np.random.default_rng(seed)
        return JitterParams(
            brightness_delta=float(rng.uniform(-brightness_range, brightness_range)),
            contrast_factor=float(rng.uniform(*contrast_range)),
            gamma=float(rng.uniform(*gamma_range)),
            seed=seed,
        )


@dataclass(frozen=True)
class PoseSamplingConstraints:
    """Acceptance rules for synthetic view pairs.

    Altitudes are measured above the terrain under the camera.  The view
    axis of the first pose is uniform within a cone of ``max_tilt`` around
    nadir (with uniform roll); the second pose stays within
    ``max_baseline`` / ``max_relative_angle`` of the first.
    """

    altitude_range: tuple = (100.0, 140.0)
    max_baseline: float = 8.0
    max_relative_angle: float = math.radians(4.0)
    max_tilt: float = math.radians(10.0)

    def to_dict(self) -> dict:
        return {
            "altitude_range": list(self.altitude_range),
            "max_baseline": self.max_baseline,
            "max_relative_angle": self.max_relative_angle,
            "max_tilt": self.max_tilt,
        }

    @staticmethod
    def from_dict(d: dict) -> "PoseSamplingConstraints":
        base = PoseSamplingConstraints()
        return PoseSamplingConstraints(
            altitude_range=tuple(d.get("altitude_range", base.altitude_range)),
            max_baseline=float(d.get("max_baseline", base.max_baseline)),
            max_relative_angle=float(
                d.get("max_relative_angle", base.max_relative_angle)
            ),
            max_tilt=float(d.get("max_tilt", base.max_tilt)),
        )


def _raycast(scene: HeightmapScene, origin: np.ndarray, directions: np.ndarray):
    """Intersect unit world-space rays with the height surface.

    Returns (s, hit): ray parameters of the intersection and a hit mask.
    Marching is restricted to the interval where the ray is over the map
    and inside the elevation band, which cannot skip a crossing.
    """
    ex, ey = scene.extent
    min_elev = float(scene.elevation.min())
    max_elev = float(scene.elevation.max())
    step = scene.spacing

    d = directions.reshape(-1, 3)
    n = d.shape[0]
    ox, oy, oz = origin

    # Parameter interval where (x, y) stays over the lattice (slab method).
    with np.errstate(divide="ignore", invalid="ignore"):
        tx0 = (0.0 - ox) / d[:, 0]
        tx1 = (ex - ox) / d[:, 0]
        ty0 = (0.0 - oy) / d[:, 1]
        ty1 = (ey - oy) / d[:, 1]
    x_par = np.abs(d[:, 0]) < 1e-15
    y_par = np.abs(d[:, 1]) < 1e-15
    x_in = (0.0 <= ox) & (ox <= ex)
    y_in = (0.0 <= oy) & (oy <= ey)
    sx_lo = np.where(x_par, np.where(x_in, -np.inf, np.inf), np.minimum(tx0, tx1))
    sx_hi = np.where(x_par, np.where(x_in, np.inf, -np.inf), np.maximum(tx0, tx1))
    sy_lo = np.where(y_par, np.where(y_in, -np.inf, np.inf), np.minimum(ty0, ty1))
    sy_hi = np.where(y_par, np.where(y_in, np.inf, -np.inf), np.maximum(ty0, ty1))
    s_in = np.maximum(np.maximum(sx_lo, sy_lo), 0.0)
    s_out = np.minimum(sx_hi, sy_hi)

    # Elevation band: crossings only happen while z is inside [min, max].
    dz = d[:, 2]
    descending = dz < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        s_top = (oz - max_elev) / -dz  # z(s) == max_elev
        s_bot = (oz - min_elev) / -dz
        s_up = (max_elev - oz) / dz
    lo = s_in.copy()
    hi = s_out.copy()
    if oz > max_elev:
        lo = np.where(descending, np.maximum(lo, s_top), lo)
        hi = np.where(descending, np.minimum(hi, s_bot + step), -np.inf)
    else:
        hi = np.where(descending, np.minimum(hi, s_bot + step), np.minimum(hi, s_up + step))

    def f(idx, s):
        x = ox + s * d[idx, 0]
        y = oy + s * d[idx, 1]
        z = oz + s * d[idx, 2]
        return z - scene.surface_height(x, y)

    s_hit_lo = np.zeros(n)
    s_hit_hi = np.zeros(n)
    hit = np.zeros(n, dtype=bool)

    active = np.flatnonzero(lo <= hi)
    if active.size:
        s = lo[active]
        fs = f(active, s)
        below = fs <= 0.0  # entered the map already under the surface
        if below.any():
            idx = active[below]
            s_hit_lo[idx] = s[below]
            s_hit_hi[idx] = s[below]
            hit[idx] = True
            active = active[~below]
            s = s[~below]
        while active.size:
            s_next = np.minimum(s + step, hi[active])
            fn = f(active, s_next)
            crossed = fn <= 0.0
            if crossed.any():
                idx = active[crossed]
                s_hit_lo[idx] = s[crossed]
                s_hit_hi[idx] = s_next[crossed]
                hit[idx] = True
            exhausted = s_next >= hi[active]
            keep = ~crossed & ~exhausted
            active = active[keep]
            s = s_next[keep]

    live = np.flatnonzero(hit)
    if live.size:
        a = s_hit_lo[live]
        b = s_hit_hi[live]
        for _ in range(_BISECTIONS):
            mid = 0.5 * (a + b)
            fm = f(live, mid)
            hit_side = fm <= 0.0
            b = np.where(hit_side, mid, b)
            a = np.where(hit_side, a, mid)
        s_hit_lo[live] = 0.5 * (a + b)
    return s_hit_lo, hit


def render(scene: HeightmapScene, pose: Se3Pose, camera: PinholeCamera) -> RenderedView:
    """Render RGB and dense camera-frame z-depth for a camera-to-world pose.

    Missed rays (sky, or leaving the map) get depth 0 and black color.
    """
    origin = pose.translation
    ex, ey = scene.extent
    if 0.0 <= origin[0] <= ex and 0.0 <= origin[1] <= ey:
        if origin[2] <= float(scene.surface_height(origin[0], origin[1])) + 1e-9:
            raise CameraBelowTerrain("camera is at or below the height surface")

    w, h = camera.width, camera.height
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs_cam = np.stack(
        [
            (us - camera.cx) / camera.fx,
            (vs - camera.cy) / camera.fy,
            np.ones_like(us),
        ],
        axis=-1,
    ).reshape(-1, 3)
    norms = np.linalg.norm(dirs_cam, axis=1)
    dirs_world = (dirs_cam / norms[:, None]) @ pose.rotation.T

    s, hit = _raycast(scene, origin, dirs_world)

    depth = np.zeros(w * h)
    depth[hit] = s[hit] / norms[hit]

    rgb = np.zeros((w * h, 3))
    if hit.any():
        px = origin[0] + s[hit] * dirs_world[hit, 0]
        py = origin[1] + s[hit] * dirs_world[hit, 1]
        sx, sy = scene._texture_scale()
        th, tw = scene.texture.shape[:2]
        gx = np.clip(px * sx, 0, tw - 1)
        gy = np.clip(py * sy, 0, th - 1)
        for c in range(3):
            rgb[hit, c] = _bilinear(scene.texture[:, :, c], gx, gy)
    return RenderedView(
        rgb=rgb.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        pose=pose,
        camera=camera,
    )


def _rotation_with_view_axis(view_dir: np.ndarray, roll: float) -> np.ndarray:
    """Camera-to-world rotation whose z-axis (optical axis) is ``view_dir``."""
    z = view_dir / np.linalg.norm(view_dir)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(z @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    y = np.cross(z, ref)
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    cr, sr = math.cos(roll), math.sin(roll)
    xr = cr * x + sr * y
    yr = -sr * x + cr * y
    return np.column_stack([xr, yr, z])


def _sample_cap_direction(rng, max_angle: float) -> np.ndarray:
    """Unit vector uniform over the spherical cap around straight down."""
    cos_t = rng.uniform(math.cos(max_angle), 1.0)
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([sin_t * math.cos(phi), sin_t * math.sin(phi), -cos_t])


def _sample_view(scene, rng, constraints) -> Se3Pose:
    ex, ey = scene.extent
    x = rng.uniform(0.0, ex)
    y = rng.uniform(0.0, ey)
    alt = rng.uniform(*constraints.altitude_range)
    z = float(scene.surface_height(x, y)) + alt
    view = _sample_cap_direction(rng, constraints.max_tilt)
    roll = rng.uniform(-math.pi, math.pi)
    return Se3Pose(_rotation_with_view_axis(view, roll), np.array([x, y, z]))


def _frustum_inside(scene, camera, pose) -> bool:
    """All four corner rays of the view must hit the surface over the map."""
    corners = np.array(
        [
            [0.0, 0.0],
            [camera.width - 1.0, 0.0],
            [0.0, camera.height - 1.0],
            [camera.width - 1.0, camera.height - 1.0],
        ]
    )
    dirs = np.column_stack(
        [
            (corners[:, 0] - camera.cx) / camera.fx,
            (corners[:, 1] - camera.cy) / camera.fy,
            np.ones(4),
        ]
    )
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    dirs_world = dirs @ pose.rotation.T
    _, hit = _raycast(scene, pose.translation, dirs_world)
    return bool(hit.all())


def _altitude_ok(scene, position, constraints) -> bool:
    ex, ey = scene.extent
    if not (0.0 <= position[0] <= ex and 0.0 <= position[1] <= ey):
        return False
    alt = position[2] - float(scene.surface_height(position[0], position[1]))
    lo, hi = constraints.altitude_range
    return lo - 1e-9 <= alt <= hi + 1e-9


def sample_pose_pair(
    scene: HeightmapScene,
    camera: PinholeCamera,
    rng,
    constraints: PoseSamplingConstraints | None = None,
):
    """Draw a pair of camera-to-world poses satisfying the constraints.

    Positions are uniform over the map at a uniform altitude above the
    surface; a candidate pair is rejected whenever a frustum corner ray of
    either view leaves the map.
    """
    constraints = constraints or PoseSamplingConstraints()
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    for _ in range(_PAIR_ATTEMPTS):
        pose0 = _sample_view(scene, rng, constraints)
        # Second position: uniform in the baseline ball around the first.
        while True:
            offset = rng.uniform(-1.0, 1.0, size=3) * constraints.max_baseline
            if np.linalg.norm(offset) <= constraints.max_baseline:
                break
        position1 = pose0.translation + offset
        angle = rng.uniform(0.0, constraints.max_relative_angle)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        dr = _so3_exp(angle * axis)
        pose1 = Se3Pose(pose0.rotation @ dr, position1)
        if not _altitude_ok(scene, position1, constraints):
            continue
        if not _frustum_inside(scene, camera, pose0):
            continue
        if not _frustum_inside(scene, camera, pose1):
            continue
        return pose0, pose1
    raise RejectionBudgetExceeded(
        f"no acceptable pose pair in {_PAIR_ATTEMPTS} attempts"
    )


def _so3_exp(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    k = np.array(
        [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]], dtype=np.float64
    )
    if theta < 1e-10:
        return np.eye(3) + k
    return (
        np.eye(3)
        + math.sin(theta) / theta * k
        + (1.0 - math.cos(theta)) / theta**2 * (k @ k)
    )


def jitter(rgb: np.ndarray, params: JitterParams) -> np.ndarray:
    """Apply brightness/contrast shift and gamma, clamped to [0, 1]."""
    img = np.asarray(rgb, dtype=np.float64)
    out = (img - 0.5) * params.contrast_factor + 0.5 + params.brightness_delta
    return np.clip(out, 0.0, 1.0) ** params.gamma


def sample_features(depth: np.ndarray, count: int = 50, rng=None) -> list:
    """Uniform integer feature locations inside the patch border.

    Locations are uniform over {b..W-b-1} x {b..H-b-1} restricted to valid
    (positive) depth pixels, drawn without replacement, with
    inverse_depth = 1 / depth at the pixel.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    h, w = depth.shape
    b = BORDER
    region = depth[b : h - b, b : w - b]
    ys, xs = np.nonzero(region > 0)
    if len(ys) < count:
        raise InsufficientValidDepth(
            f"only {len(ys)} valid depth pixels inside the border, need {count}"
        )
    chosen = rng.choice(len(ys), size=count, replace=False)
    feats = []
    for i in chosen:
        u, v = int(xs[i] + b), int(ys[i] + b)
        feats.append(SparseFeature(u=float(u), v=float(v), inverse_depth=1.0 / depth[v, u]))
    return feats


def make_dataset(
    scene: HeightmapScene,
    camera: PinholeCamera,
    n_pairs: int,
    out_dir,
    seed: int = 0,
    jitter_count: int = 10,
    feature_count: int = 50,
    constraints: PoseSamplingConstraints | None = None,
    scene_paths: tuple | None = None,
) -> Path:
    """Render ``n_pairs`` view pairs with ground truth to ``out_dir``.

    Per pair: both RGB views, both dense depth maps, absolute and relative
    poses, sampled features with inverse depth, and ``jitter_count``
    color-altered variants of each view.  Returns the manifest path; all
    manifest paths are relative to the manifest file.
    """
    constraints = constraints or PoseSamplingConstraints()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        pair_rel = Path("pairs") / f"{i:06d}"
        pair_dir = out / pair_rel
        pair_dir.mkdir(parents=True, exist_ok=True)
        pose0, pose1 = sample_pose_pair(scene, camera, rng, constraints)
        view0 = render(scene, pose0, camera)
        view1 = render(scene, pose1, camera)
        features = sample_features(view0.depth, count=feature_count, rng=rng)
        relative = pose1.inverse().compose(pose0)

        entry = {
            "id": i,
            "dir": str(pair_rel),
            "rgb0": str(pair_rel / "rgb0.png"),
            "rgb1": str(pair_rel / "rgb1.png"),
            "depth0": str(pair_rel / "depth0.dpth"),
            "depth1": str(pair_rel / "depth1.dpth"),
            "features": str(pair_rel / "features.csv"),
            "pose0": pose0.to_list(),
            "pose1": pose1.to_list(),
            "relative_pose": relative.to_list(),
            "jitter0": [],
            "jitter1": [],
        }
        io.write_png(out / entry["rgb0"], view0.rgb)
        io.write_png(out / entry["rgb1"], view1.rgb)
        io.write_depth(out / entry["depth0"], view0.depth)
        io.write_depth(out / entry["depth1"], view1.depth)
        io.write_features_csv(out / entry["features"], features)
        for j, view in enumerate((view0, view1)):
            for k in range(jitter_count):
                params = JitterParams.random(int(rng.integers(2**62)))
                rel = pair_rel / f"rgb{j}_jitter{k:02d}.png"
                io.write_png(out / rel, jitter(view.rgb, params))
                entry[f"jitter{j}"].append(str(rel))
        pair_json = {
            "camera": camera.to_dict(),
            "pose0": entry["pose0"],
            "pose1": entry["pose1"],
            "relative_pose": entry["relative_pose"],
            "rgb0": "rgb0.png",
            "rgb1": "rgb1.png",
            "depth0": "depth0.dpth",
            "depth1": "depth1.dpth",
            "features": "features.csv",
        }
        (pair_dir / "pair.json").write_text(json.dumps(pair_json, indent=1))
        pairs.append(entry)

    manifest = {
        "seed": seed,
        "camera": camera.to_dict(),
        "jitter_count": jitter_count,
        "feature_count": feature_count,
        "constraints": constraints.to_dict(),
        "pairs": pairs,
    }
    if scene_paths is not None:
        manifest["scene"] = {
            "heightmap": str(scene_paths[0]),
            "texture": str(scene_paths[1]),
        }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path


def _upsample_grid(coarse: np.ndarray, shape) -> np.ndarray:
    """Separable bilinear resample of a grid onto a uniform target grid."""
    h, w = shape
    ch, cw = coarse.shape
    gx = np.linspace(0.0, cw - 1.0, w)
    gy = np.linspace(0.0, ch - 1.0, h)
    x0 = np.clip(np.floor(gx).astype(np.int64), 0, cw - 2)
    y0 = np.clip(np.floor(gy).astype(np.int64), 0, ch - 2)
    fx = gx - x0
    fy = gy - y0
    rows = coarse[:, x0] * (1.0 - fx) + coarse[:, x0 + 1] * fx
    return rows[y0, :] * (1.0 - fy)[:, None] + rows[y0 + 1, :] * fy[:, None]


def _octave_noise(rng, shape, base_res: int, octaves: int, persistence: float):
    """Sum of bilinearly upsampled uniform-noise grids; values roughly [-1, 1]."""
    amps = [persistence**o for o in range(octaves)]
    return _shaped_noise(rng, shape, base_res, amps)


def _shaped_noise(rng, shape, base_res: int, amplitudes) -> np.ndarray:
    """Octave noise with an explicit per-octave amplitude envelope."""
    out = np.zeros(shape)
    total = 0.0
    for o, amp in enumerate(amplitudes):
        if amp == 0.0:
            continue
        res = base_res * 2**o
        coarse = rng.uniform(-1.0, 1.0, size=(res + 1, res + 1))
        out += amp * _upsample_grid(coarse, shape)
        total += amp
    return out / total


def generate_scene(
    seed: int,
    grid_size: int = 385,
    spacing: float = 1.0,
    height_scale: float = 15.0,
    texture_size: int = 2049,
) -> HeightmapScene:
    """Procedural rolling-terrain scene with a band-limited RGB texture.

    The texture's finest octave has a wavelength of a few meters so views
    rendered from flight altitude stay well-sampled (no aliasing between
    the two views of a pair), while still carrying gradient at every
    pyramid level.
    """
    rng = np.random.default_rng(seed)
    elevation = height_scale * _octave_noise(
        rng, (grid_size, grid_size), base_res=3, octaves=5, persistence=0.45
    )
    extent = (grid_size - 1) * spacing
    shape = (texture_size, texture_size)
    # Band-shaped albedo spectrum: little energy at map-scale wavelengths
    # (intensity ramps turn photometric offsets into alignment bias), a
    # strong mid band (wavelengths of a few tens of meters carry the
    # coarse-level convergence basin), and moderate fine detail down to
    # ~1 m for subpixel precision at full resolution.
    n_octaves = max(4, int(math.log2(extent / 3.0)) + 1)
    envelope = []
    for o in range(n_octaves):
        wavelength = extent / (3.0 * 2.0**o)
        envelope.append(1.0 / (1.0 + (wavelength / 24.0) ** 2 + (1.2 / wavelength) ** 2))
    channels = []
    for _ in range(3):
        mix = _shaped_noise(rng, shape, 3, envelope)
        mix = mix / max(mix.std(), 1e-9) * 0.16
        channels.append(np.clip(0.5 + mix, 0.02, 0.98))
    texture = np.stack(channels, axis=-1).astype(np.float32)
    return HeightmapScene(elevation=elevation, spacing=spacing, texture=texture)
