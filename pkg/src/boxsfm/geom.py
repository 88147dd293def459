"""Gravity-aligned 3D box geometry, point-set registration, and trajectory alignment.

Conventions used throughout the package:

* Right-handed coordinates. A rectified camera frame has +X right, +Y down
  (along gravity) and +Z forward. The world vertical axis is +Y, also pointing
  down, so "up" is -Y.
* Yaw is a rotation about the vertical (+Y) axis; all boxes and relative poses
  are 4-DoF (yaw + translation) because every frame is gravity-rectified.
* Box corners follow a frozen bit-pattern ordering, see :func:`box_corners`.

All types here are immutable values (their arrays are marked read-only) and
all operations are pure functions, so everything is safe to share between
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateInput, NonGravityPose

# A Vec3 is simply a float ndarray of shape (3,); x, y, z in meters.
Vec3 = np.ndarray

VERTICAL_AXIS = np.array([0.0, 1.0, 0.0])
VERTICAL_TILT_TOL = 1e-9
MIN_DEPTH_M = 1e-6

_TWO_PI = 2.0 * math.pi

# Corner sign pattern: corner k has signs ((-1)^(k&1), (-1)^((k>>1)&1), (-1)^((k>>2)&1)).
_CORNER_SIGNS = np.array(
    [
        [(-1.0) ** (k & 1), (-1.0) ** ((k >> 1) & 1), (-1.0) ** ((k >> 2) & 1)]
        for k in range(8)
    ]
)


def vec3(x: float, y: float, z: float) -> Vec3:
    return np.array([float(x), float(y), float(z)])


def _as_vec3(v, name: str) -> Vec3:
    a = np.asarray(v, dtype=float).reshape(3).copy()
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite, got {a!r}")
    a.flags.writeable = False
    return a


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    r = math.fmod(a + math.pi, _TWO_PI)
    if r <= 0.0:
        r += _TWO_PI
    return r - math.pi


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle`."""
    r = np.fmod(np.asarray(a, dtype=float) + math.pi, _TWO_PI)
    r = np.where(r <= 0.0, r + _TWO_PI, r)
    return r - math.pi


def rot_y(yaw: float) -> np.ndarray:
    """Rotation matrix about the vertical (+Y) axis."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_yaw(rotation: np.ndarray) -> float:
    """Yaw component of a rotation matrix (exact for yaw-only rotations)."""
    return math.atan2(
        rotation[0, 2] - rotation[2, 0], rotation[0, 0] + rotation[2, 2]
    )


def vertical_tilt(rotation: np.ndarray) -> float:
    """How far a rotation moves the vertical axis, as an L2 distance."""
    return float(np.linalg.norm(rotation @ VERTICAL_AXIS - VERTICAL_AXIS))


@dataclass(frozen=True, eq=False)
class OrientedBox3:
    """Gravity-aligned 3D box: center, full extents along box axes, yaw.

    ``dims[0]``/``dims[2]`` are the horizontal extents along the box-local X/Z
    axes, ``dims[1]`` is the vertical extent. Yaw is normalized to (-pi, pi].
    """

    center: Vec3
    dims: Vec3
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec3(self.center, "center"))
        dims = _as_vec3(self.dims, "dims")
        if not np.all(dims > 0.0):
            raise ValueError(f"dims must be positive, got {dims!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def volume(self) -> float:
        return float(self.dims[0] * self.dims[1] * self.dims[2])


@dataclass(frozen=True, eq=False)
class YawPose:
    """4-DoF rigid map p -> R_y(yaw) @ p + t, yaw in (-pi, pi]."""

    yaw: float
    t: Vec3

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        object.__setattr__(self, "t", _as_vec3(self.t, "t"))

    @classmethod
    def identity(cls) -> "YawPose":
        return cls(0.0, np.zeros(3))

    def rotation(self) -> np.ndarray:
        return rot_y(self.yaw)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or a stack of points (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation().T + self.t

    def inverse(self) -> "YawPose":
        return YawPose(-self.yaw, -(rot_y(-self.yaw) @ self.t))

    def compose(self, other: "YawPose") -> "YawPose":
        """self o other (apply ``other`` first)."""
        return YawPose(self.yaw + other.yaw, self.apply(other.t))

    def to_se3(self) -> "SE3Pose":
        return SE3Pose(self.rotation(), self.t)


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Rigid transform with a full 3x3 rotation; det +1, orthonormal to 1e-9."""

    rotation: np.ndarray
    t: Vec3

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3).copy()
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (|R'R - I| = {err:.3e})")
        if np.linalg.det(r) < 0.0:
            raise ValueError("rotation has negative determinant (reflection)")
        r.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "t", _as_vec3(self.t, "t"))

    @classmethod
    def identity(cls) -> "SE3Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, t) -> "SE3Pose":
        return cls(rot_y(yaw), t)

    @property
    def center(self) -> Vec3:
        return self.t

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.t

    def inverse(self) -> "SE3Pose":
        return SE3Pose(self.rotation.T, -(self.rotation.T @ self.t))

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """self o other (apply ``other`` first)."""
        return SE3Pose(self.rotation @ other.rotation, self.apply(other.t))

    def matrix34(self) -> np.ndarray:
        return np.hstack([self.rotation, self.t.reshape(3, 1)])


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels plus the image size (width, height)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.width, self.height)


def box_corners(box: OrientedBox3) -> np.ndarray:
    """The 8 corners of a box, shape (8, 3).

    Corner k = center + R_y(yaw) @ (s(k) * dims / 2) with the sign pattern
    s(k) = ((-1)^(k&1), (-1)^((k>>1)&1), (-1)^((k>>2)&1)); so corner 0 carries
    (+,+,+) and corner 7 carries (-,-,-). This ordering is frozen; corner
    indices are meaningful across the whole pipeline.
    """
    local = _CORNER_SIGNS * (box.dims * 0.5)
    return box.center + local @ rot_y(box.yaw).T


def corner_sign_permutation(turns: int) -> list[int]:
    """Corner-index permutation for re-describing a box with yaw + turns*90deg.

    Entry k gives the corner index, in the rotated description, of the physical
    corner that has index k in the original description. Only multiples of a
    quarter turn are box symmetries (half turns exactly; quarter turns only for
    near-square footprints, where the horizontal dims swap is negligible).
    """
    turns = turns % 4
    perm = []
    for k in range(8):
        sx, sy, sz = _CORNER_SIGNS[k]
        if turns == 0:
            s = (sx, sy, sz)
        elif turns == 1:
            s = (-sz, sy, sx)
        elif turns == 2:
            s = (-sx, sy, -sz)
        else:
            s = (sz, sy, -sx)
        idx = (s[0] < 0) | ((s[1] < 0) << 1) | ((s[2] < 0) << 2)
        perm.append(int(idx))
    return perm


# --- footprint helpers (scalar math: these run in tight inner loops) ---------


def _footprint_xz(box: OrientedBox3) -> list[tuple[float, float]]:
    """CCW corners of the box footprint in the horizontal (x, z) plane."""
    c = math.cos(box.yaw)
    s = math.sin(box.yaw)
    hx = float(box.dims[0]) * 0.5
    hz = float(box.dims[2]) * 0.5
    cx = float(box.center[0])
    cz = float(box.center[2])
    pts = []
    for lx, lz in ((hx, hz), (-hx, hz), (-hx, -hz), (hx, -hz)):
        # R_y acts on (x, z) as x' = c*x + s*z, z' = -s*x + c*z.
        pts.append((cx + c * lx + s * lz, cz - s * lx + c * lz))
    return pts


def _polygon_area(poly: list[tuple[float, float]]) -> float:
    """Shoelace area of a CCW polygon; clamped at zero."""
    n = len(poly)
    if n < 3:
        return 0.0
    s = 0.0
    for i in range(n):
        x0, z0 = poly[i]
        x1, z1 = poly[(i + 1) % n]
        s += x0 * z1 - x1 * z0
    return max(0.5 * s, 0.0)


def _clip_convex(subject: list, clip: list) -> list:
    """Sutherland-Hodgman clip of a convex CCW polygon by a convex CCW polygon."""
    output = subject
    n = len(clip)
    for i in range(n):
        if not output:
            return []
        ax, az = clip[i]
        bx, bz = clip[(i + 1) % n]
        ex, ez = bx - ax, bz - az
        pts = output
        output = []
        prev = pts[-1]
        prev_side = ex * (prev[1] - az) - ez * (prev[0] - ax)
        for cur in pts:
            cur_side = ex * (cur[1] - az) - ez * (cur[0] - ax)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    t = prev_side / (prev_side - cur_side)
                    output.append(
                        (prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1]))
                    )
                output.append(cur)
            elif prev_side >= 0.0:
                t = prev_side / (prev_side - cur_side)
                output.append(
                    (prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1]))
                )
            prev, prev_side = cur, cur_side
    return output


def _convex_hull(points: list) -> list:
    """Monotone-chain convex hull, CCW."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _vertical_extent(box: OrientedBox3) -> tuple[float, float]:
    half = float(box.dims[1]) * 0.5
    y = float(box.center[1])
    return y - half, y + half


def _intersection_and_volumes(a: OrientedBox3, b: OrientedBox3):
    """(inter_vol, vol_a, vol_b, foot_a, foot_b).

    Volumes are computed from the same shoelace areas and interval arithmetic
    as the intersection, so identical boxes give IoU of exactly 1.
    """
    fa = _footprint_xz(a)
    fb = _footprint_xz(b)
    a_lo, a_hi = _vertical_extent(a)
    b_lo, b_hi = _vertical_extent(b)
    area_a = _polygon_area(fa)
    area_b = _polygon_area(fb)
    vol_a = area_a * (a_hi - a_lo)
    vol_b = area_b * (b_hi - b_lo)
    dy = min(a_hi, b_hi) - max(a_lo, b_lo)
    if dy <= 0.0:
        return 0.0, vol_a, vol_b, fa, fb
    inter_area = _polygon_area(_clip_convex(fa, fb))
    return inter_area * dy, vol_a, vol_b, fa, fb


def iou3d(a: OrientedBox3, b: OrientedBox3) -> float:
    """Volume IoU of two gravity-aligned boxes, in [0, 1].

    Intersection = (convex clip of footprints) x (vertical interval overlap);
    exact for yaw-only boxes. Disjoint boxes return exactly 0.
    """
    inter, vol_a, vol_b, _, _ = _intersection_and_volumes(a, b)
    if inter <= 0.0:
        return 0.0
    union = vol_a + vol_b - inter
    return inter / union


def giou3d(a: OrientedBox3, b: OrientedBox3) -> float:
    """Generalized volume IoU, in (-1, 1].

    The enclosing shape is the 2D convex hull of both footprints extruded over
    the spanning vertical interval of both boxes.
    """
    inter, vol_a, vol_b, fa, fb = _intersection_and_volumes(a, b)
    union = vol_a + vol_b - inter
    hull_area = _polygon_area(_convex_hull(fa + fb))
    a_lo, a_hi = _vertical_extent(a)
    b_lo, b_hi = _vertical_extent(b)
    vol_c = hull_area * (max(a_hi, b_hi) - min(a_lo, b_lo))
    iou = inter / union if inter > 0.0 else 0.0
    return iou - (vol_c - union) / vol_c


def kabsch_yaw(src: np.ndarray, dst: np.ndarray) -> YawPose:
    """Least-squares yaw + translation aligning ``src`` onto ``dst``.

    Closed form: center both sets, then yaw* = atan2(sum cross, sum dot) over
    the horizontal components of the centered pairs (circular regression); the
    vertical residual is absorbed entirely by the translation.

    Raises:
        DegenerateInput: fewer than 2 points, or the centered source points
            have no horizontal spread (yaw unobservable).
    """
    s = np.asarray(src, dtype=float).reshape(-1, 3)
    d = np.asarray(dst, dtype=float).reshape(-1, 3)
    if s.shape != d.shape:
        raise ValueError(f"point sets differ in shape: {s.shape} vs {d.shape}")
    if s.shape[0] < 2:
        raise DegenerateInput("need at least 2 point pairs")
    sc = s.mean(axis=0)
    dc = d.mean(axis=0)
    a = s - sc
    b = d - dc
    if np.max(a[:, 0] ** 2 + a[:, 2] ** 2) < 1e-24:
        raise DegenerateInput("centered source points have no horizontal spread")
    dot = float(np.sum(b[:, 0] * a[:, 0] + b[:, 2] * a[:, 2]))
    cross = float(np.sum(b[:, 0] * a[:, 2] - b[:, 2] * a[:, 0]))
    yaw = math.atan2(cross, dot)
    t = dc - rot_y(yaw) @ sc
    return YawPose(yaw, t)


def transform_box(box: OrientedBox3, pose) -> OrientedBox3:
    """Map a box through a gravity-preserving rigid transform.

    Accepts a :class:`YawPose` or a yaw-only :class:`SE3Pose`; the center is
    transformed, the yaw incremented, dims are unchanged.

    Raises:
        NonGravityPose: the rotation tilts the vertical axis beyond 1e-9.
    """
    if isinstance(pose, YawPose):
        dyaw = pose.yaw
        center = pose.apply(box.center)
    elif isinstance(pose, SE3Pose):
        if vertical_tilt(pose.rotation) > VERTICAL_TILT_TOL:
            raise NonGravityPose("rotation does not preserve the vertical axis")
        dyaw = rotation_yaw(pose.rotation)
        center = pose.apply(box.center)
    else:
        raise TypeError(f"unsupported pose type {type(pose)!r}")
    return OrientedBox3(center, box.dims, box.yaw + dyaw)


def se3_align(src_poses, dst_poses) -> SE3Pose:
    """SE(3) transform minimizing the camera-center alignment error.

    Kabsch on the camera centers with scale fixed to 1: returns A minimizing
    sum ||A(c_i_src) - c_i_dst||^2. With collinear or coincident centers the
    minimizer is not unique but the returned transform is still optimal.

    Raises:
        DegenerateInput: fewer than 1 pose, or length mismatch.
    """
    src = list(src_poses)
    dst = list(dst_poses)
    if len(src) != len(dst):
        raise DegenerateInput("pose lists differ in length")
    if len(src) < 1:
        raise DegenerateInput("need at least 1 pose")
    a = np.stack([p.center for p in src])
    b = np.stack([p.center for p in dst])
    ac = a.mean(axis=0)
    bc = b.mean(axis=0)
    h = (a - ac).T @ (b - bc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = bc - r @ ac
    return SE3Pose(r, t)


def project_camera_point(k: CameraIntrinsics, p_cam: np.ndarray) -> tuple[float, float]:
    """Pinhole projection of a camera-frame point; depth must exceed 1 um."""
    x, y, z = float(p_cam[0]), float(p_cam[1]), float(p_cam[2])
    if z <= MIN_DEPTH_M:
        raise BehindCamera(f"depth {z:.3e} m is not in front of the camera")
    return (k.fx * x / z + k.cx, k.fy * y / z + k.cy)


def project_point(
    k: CameraIntrinsics, world_from_cam: SE3Pose, p_world: np.ndarray
) -> tuple[float, float]:
    """Project a world point through a camera at ``world_from_cam``.

    Raises:
        BehindCamera: the point's depth in the camera frame is <= 1e-6 m.
    """
    p_cam = world_from_cam.inverse().apply(np.asarray(p_world, dtype=float))
    return project_camera_point(k, p_cam)


def gravity_rectification(gravity_dir_raw: np.ndarray) -> SE3Pose:
    """Rotation-only pose mapping a raw camera frame to its rectified frame.

    Returns the minimal (twist-free) rotation taking the measured gravity
    direction onto the canonical vertical axis +Y. Identity when the frame is
    already rectified.
    """
    g = np.asarray(gravity_dir_raw, dtype=float).reshape(3)
    norm = np.linalg.norm(g)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"gravity direction must be unit norm, got |g| = {norm:.6f}")
    g = g / norm
    axis = np.cross(g, VERTICAL_AXIS)
    sin_t = float(np.linalg.norm(axis))
    cos_t = float(np.dot(g, VERTICAL_AXIS))
    if sin_t < 1e-12:
        if cos_t > 0.0:
            return SE3Pose.identity()
        # Antiparallel: any half-turn about a horizontal axis works; pick X.
        return SE3Pose(np.diag([1.0, -1.0, -1.0]), np.zeros(3))
    axis = axis / sin_t
    ax = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    r = np.eye(3) + sin_t * ax + (1.0 - cos_t) * (ax @ ax)
    return SE3Pose(r, np.zeros(3))
