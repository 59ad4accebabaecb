"""Synthetic depth-scene oracle: analytic renders with exact ground truth.

The scene is three primitives — a rectangular table plane, a patient torso
capsule, and the scanner (bore cylinder shell + face annulus) — raycast
through a pinhole camera. Because every intersection is closed-form, a
noiseless render is an exact oracle: each valid pixel back-projects onto
its labeled primitive's surface to machine precision.

Scanner local frame: the entrance center is the origin, +z runs into the
bore along its axis, +y points up (away from the table), x completes the
right-handed frame. Ground truth is the camera-to-scanner transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import MAX_RANGE_M, CameraIntrinsics, DepthFrame, RigidTransform, as_cloud

LABEL_BACKGROUND = 0
LABEL_TABLE = 1
LABEL_TORSO = 2
LABEL_BORE = 3

LABEL_NAMES = {
    LABEL_BACKGROUND: "background",
    LABEL_TABLE: "table",
    LABEL_TORSO: "torso",
    LABEL_BORE: "bore",
}

_EPS = 1e-12


@dataclass(frozen=True)
class ScannerModel:
    """Bore cylinder shell plus face-plate annulus, posed in the world frame."""

    bore_radius: float = 0.35
    bore_length: float = 1.6
    face_outer_radius: float = 0.60
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not (0 < self.bore_radius < self.face_outer_radius):
            raise ValueError("need 0 < bore_radius < face_outer_radius")
        if self.bore_length <= 0:
            raise ValueError("bore_length must be positive")


@dataclass(frozen=True)
class TableModel:
    """Rectangle on a plane: center, two orthonormal in-plane axes, half extents."""

    center: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    half_u: float
    half_v: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        u = np.asarray(self.axis_u, dtype=np.float64)
        v = np.asarray(self.axis_v, dtype=np.float64)
        u = u / np.linalg.norm(u)
        v = v - (v @ u) * u
        v = v / np.linalg.norm(v)
        object.__setattr__(self, "axis_u", u)
        object.__setattr__(self, "axis_v", v)

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.axis_u, self.axis_v)


@dataclass(frozen=True)
class TorsoModel:
    """Capsule: segment between two endpoints, swept by a sphere."""

    end_a: np.ndarray
    end_b: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "end_a", np.asarray(self.end_a, dtype=np.float64))
        object.__setattr__(self, "end_b", np.asarray(self.end_b, dtype=np.float64))
        if self.radius <= 0:
            raise ValueError("capsule radius must be positive")


@dataclass(frozen=True)
class SceneConfig:
    scanner: ScannerModel
    table: TableModel
    torso: TorsoModel
    camera_pose: RigidTransform  # camera-to-world
    noise_sigma: float = 0.0
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not (0.0 <= self.dropout_rate <= 1.0):
            raise ValueError("dropout_rate must be in [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    labels: np.ndarray  # uint8 grid, same shape as the frame
    camera_to_scanner: RigidTransform


def look_at(eye, target, up=(0.0, 1.0, 0.0), roll_deg: float = 0.0) -> RigidTransform:
    """Camera-to-world pose with the optical axis through ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < _EPS:
        raise ValueError("eye and target coincide")
    z = forward / norm
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.column_stack([x, y, z])
    if roll_deg:
        pose = RigidTransform(r, eye)
        return pose.compose(RigidTransform.rotation_about_z(np.radians(roll_deg)))
    return RigidTransform(r, eye)


def _ray_plane(origin, dirs, point, normal):
    """t per ray for the plane through ``point`` with ``normal``; inf if parallel."""
    denom = dirs @ normal
    num = (point - origin) @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(denom) > _EPS, num / denom, np.inf)
    return np.where(t > _EPS, t, np.inf)


def _ray_capsule(origin, dirs, cap: TorsoModel):
    """Smallest positive t per ray hitting the capsule surface; inf if none."""
    a, b, r = cap.end_a, cap.end_b, cap.radius
    axis = b - a
    length = np.linalg.norm(axis)
    w = axis / length
    oa = origin - a

    # cylindrical body
    d_perp = dirs - np.outer(dirs @ w, w)
    o_perp = oa - (oa @ w) * w
    qa = np.einsum("ij,ij->i", d_perp, d_perp)
    qb = d_perp @ o_perp
    qc = o_perp @ o_perp - r * r
    disc = qb * qb - qa * qc
    ok = (disc >= 0) & (qa > _EPS)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(ok, (-qb - sq) / qa, np.inf)
        t2 = np.where(ok, (-qb + sq) / qa, np.inf)

    def body_valid(t):
        s = (oa @ w) + t * (dirs @ w)
        return (t > _EPS) & (s >= 0.0) & (s <= length)

    t_body = np.where(body_valid(t1), t1, np.where(body_valid(t2), t2, np.inf))

    def sphere_hit(center, outward_sign):
        oc = origin - center
        sb = dirs @ oc
        sc = oc @ oc - r * r
        sa = np.einsum("ij,ij->i", dirs, dirs)
        sdisc = sb * sb - sa * sc
        sok = sdisc >= 0
        ssq = np.sqrt(np.where(sok, sdisc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            s1 = np.where(sok, (-sb - ssq) / sa, np.inf)
            s2 = np.where(sok, (-sb + ssq) / sa, np.inf)

        def cap_valid(t):
            p_ax = (origin - center) @ w + t * (dirs @ w)
            return (t > _EPS) & (outward_sign * p_ax >= 0.0)

        return np.where(cap_valid(s1), s1, np.where(cap_valid(s2), s2, np.inf))

    t_cap_a = sphere_hit(a, -1.0)
    t_cap_b = sphere_hit(b, +1.0)
    return np.minimum(t_body, np.minimum(t_cap_a, t_cap_b))


def _ray_bore(origin, dirs, scanner: ScannerModel):
    """Smallest positive t hitting the shell or the face annulus; inf if none."""
    pose = scanner.pose
    c0 = pose.translation  # entrance center in world
    w = pose.rotation[:, 2]  # bore axis, into the bore
    radius, length = scanner.bore_radius, scanner.bore_length

    oc = origin - c0
    d_perp = dirs - np.outer(dirs @ w, w)
    o_perp = oc - (oc @ w) * w
    qa = np.einsum("ij,ij->i", d_perp, d_perp)
    qb = d_perp @ o_perp
    qc = o_perp @ o_perp - radius * radius
    disc = qb * qb - qa * qc
    ok = (disc >= 0) & (qa > _EPS)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(ok, (-qb - sq) / qa, np.inf)
        t2 = np.where(ok, (-qb + sq) / qa, np.inf)

    def shell_valid(t):
        s = (oc @ w) + t * (dirs @ w)
        return (t > _EPS) & (s >= 0.0) & (s <= length)

    t_shell = np.where(shell_valid(t1), t1, np.where(shell_valid(t2), t2, np.inf))

    denom = dirs @ w
    with np.errstate(divide="ignore", invalid="ignore"):
        t_face = np.where(np.abs(denom) > _EPS, -(oc @ w) / denom, np.inf)
    p_perp = o_perp[None, :] + t_face[:, None] * d_perp
    rho = np.linalg.norm(p_perp, axis=1)
    face_ok = (t_face > _EPS) & (rho > radius) & (rho <= scanner.face_outer_radius)
    t_face = np.where(face_ok, t_face, np.inf)

    return np.minimum(t_shell, t_face)


def render_depth(scene: SceneConfig, intrinsics: CameraIntrinsics) -> tuple[DepthFrame, GroundTruth]:
    """Raycast the scene; returns the (noisy) depth frame and ground truth.

    Stored depth is the camera-frame z coordinate of the hit. Range noise
    of ``noise_sigma`` is applied along the ray; pixels drop out (depth 0)
    with probability ``dropout_rate``. Deterministic per scene seed.
    """
    h, w = intrinsics.height, intrinsics.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs_cam = np.stack(
        [(us - intrinsics.cx) / intrinsics.fx, (vs - intrinsics.cy) / intrinsics.fy, np.ones_like(us)],
        axis=-1,
    ).reshape(-1, 3)
    r_cam = scene.camera_pose.rotation
    origin = scene.camera_pose.translation
    dirs = dirs_cam @ r_cam.T

    t_table = _ray_plane(origin, dirs, scene.table.center, scene.table.normal)
    with np.errstate(invalid="ignore"):
        p = origin + np.where(np.isfinite(t_table), t_table, 0.0)[:, None] * dirs
        rel = p - scene.table.center
        inside = (np.abs(rel @ scene.table.axis_u) <= scene.table.half_u) & (
            np.abs(rel @ scene.table.axis_v) <= scene.table.half_v
        )
    t_table = np.where(inside, t_table, np.inf)

    t_torso = _ray_capsule(origin, dirs, scene.torso)
    t_bore = _ray_bore(origin, dirs, scene.scanner)

    ts = np.stack([t_table, t_torso, t_bore])
    best = np.argmin(ts, axis=0)
    depth = ts[best, np.arange(ts.shape[1])]
    hit = np.isfinite(depth) & (depth <= MAX_RANGE_M)
    labels = np.where(
        hit, np.choose(best, [LABEL_TABLE, LABEL_TORSO, LABEL_BORE]), LABEL_BACKGROUND
    ).astype(np.uint8)
    depth = np.where(hit, depth, 0.0)

    rng = np.random.default_rng(scene.seed)
    if scene.noise_sigma > 0:
        ray_scale = np.linalg.norm(dirs_cam, axis=1)
        noise = rng.normal(0.0, scene.noise_sigma, size=depth.shape)
        depth = np.where(hit, depth + noise / ray_scale, depth)
        depth = np.where(depth <= 0, 0.0, depth)
    if scene.dropout_rate > 0:
        drop = rng.random(depth.shape) < scene.dropout_rate
        depth = np.where(drop, 0.0, depth)

    frame = DepthFrame(
        intrinsics=intrinsics,
        timestamp_us=0,
        sequence=0,
        depth=depth.reshape(h, w),
    )
    truth = GroundTruth(
        labels=labels.reshape(h, w),
        camera_to_scanner=scene.scanner.pose.inverse().compose(scene.camera_pose),
    )
    return frame, truth


def sample_model_cloud(model: ScannerModel, n: int, seed: int) -> np.ndarray:
    """Uniform-by-area sample of the bore interior shell + face annulus.

    Points are in the scanner's local frame.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    area_shell = 2.0 * np.pi * model.bore_radius * model.bore_length
    area_face = np.pi * (model.face_outer_radius**2 - model.bore_radius**2)
    on_shell = rng.random(n) < area_shell / (area_shell + area_face)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    z = rng.uniform(0.0, model.bore_length, size=n)
    rho_sq = rng.uniform(model.bore_radius**2, model.face_outer_radius**2, size=n)
    rho = np.where(on_shell, model.bore_radius, np.sqrt(rho_sq))
    z = np.where(on_shell, z, 0.0)
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])


def sample_capsule_cloud(torso: TorsoModel, n: int, seed: int) -> np.ndarray:
    """Uniform-by-area sample of the capsule surface, in the torso's frame."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    a, b, r = torso.end_a, torso.end_b, torso.radius
    axis = b - a
    length = np.linalg.norm(axis)
    w = axis / length
    # orthonormal basis around the axis
    ref = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(w, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(w, e1)

    area_body = 2.0 * np.pi * r * length
    area_caps = 4.0 * np.pi * r * r
    on_body = rng.random(n) < area_body / (area_body + area_caps)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    s = rng.uniform(0.0, length, size=n)
    # uniform on the two hemispherical caps = uniform on the full sphere,
    # split by hemisphere onto the matching endpoint
    zc = rng.uniform(-1.0, 1.0, size=n)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    sin_pol = np.sqrt(1.0 - zc * zc)
    sphere = (
        np.outer(sin_pol * np.cos(phi), e1)
        + np.outer(sin_pol * np.sin(phi), e2)
        + np.outer(zc, w)
    )
    cap_center = np.where(zc[:, None] >= 0, (a + axis)[None, :], a[None, :])
    cap_pts = cap_center + r * sphere
    body_pts = (
        a[None, :]
        + np.outer(s, w)
        + r * (np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), e2))
    )
    return np.where(on_body[:, None], body_pts, cap_pts)


def default_intrinsics(width: int = 192, height: int = 144) -> CameraIntrinsics:
    """~53-degree horizontal field of view at the given resolution."""
    return CameraIntrinsics(
        width=width, height=height, fx=float(width), fy=float(width), cx=width / 2.0, cy=height / 2.0
    )


def default_table() -> TableModel:
    return TableModel(
        center=(0.0, -0.15, 0.2),
        axis_u=(1.0, 0.0, 0.0),
        axis_v=(0.0, 0.0, 1.0),
        half_u=0.35,
        half_v=1.5,
    )


def default_torso() -> TorsoModel:
    return TorsoModel(end_a=(0.0, 0.0, -1.05), end_b=(0.0, 0.0, -0.25), radius=0.15)


def default_scene(
    camera_pose: RigidTransform | None = None,
    noise_sigma: float = 0.0,
    dropout_rate: float = 0.0,
    seed: int = 0,
) -> SceneConfig:
    """Scanner at the world origin, patient supine on the table, camera at the foot end."""
    if camera_pose is None:
        camera_pose = look_at(eye=(0.4, 0.9, -2.0), target=(0.0, -0.05, -0.3))
    return SceneConfig(
        scanner=ScannerModel(),
        table=default_table(),
        torso=default_torso(),
        camera_pose=camera_pose,
        noise_sigma=noise_sigma,
        dropout_rate=dropout_rate,
        seed=seed,
    )


def random_camera_pose(rng: np.random.Generator) -> RigidTransform:
    """Clinician-like viewpoint: in front of the bore, above the table."""
    eye = np.array(
        [
            rng.uniform(-0.9, 0.9),
            rng.uniform(0.5, 1.2),
            rng.uniform(-2.4, -1.5),
        ]
    )
    target = np.array(
        [
            rng.uniform(-0.12, 0.12),
            rng.uniform(-0.15, 0.05),
            rng.uniform(-0.45, -0.2),
        ]
    )
    roll = rng.uniform(-20.0, 20.0)
    return look_at(eye, target, roll_deg=roll)


def patient_model_cloud(scene: SceneConfig, n: int, seed: int) -> np.ndarray:
    """Torso surface sample expressed in the scanner's local frame."""
    world_pts = sample_capsule_cloud(scene.torso, n, seed)
    return scene.scanner.pose.inverse().apply(as_cloud(world_pts))
