"""Synthetic shape generators: deterministic desk-scale stand-ins for scanned
point-cloud benchmarks.

Every generator samples a unit-scale surface uniformly by area, returns unit
normals, and takes an explicit RNG so datasets are reproducible. ``two_part``
is the segmentation fixture: a sphere body (label 0) with a cylindrical
handle (label 1).
"""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud

SHAPE_KINDS = ("sphere", "cube", "cylinder", "torus", "two_part")
CLASS_KINDS = ("sphere", "cube", "cylinder", "torus")


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _sphere(n: int, rng: np.random.Generator, radius: float = 1.0,
            center=(0.0, 0.0, 0.0)):
    directions = _unit_rows(rng.standard_normal((n, 3)))
    return directions * radius + np.asarray(center), directions


def _cube(n: int, rng: np.random.Generator):
    # six faces of [-1, 1]^3, equal area
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pos = np.empty((n, 3))
    normals = np.zeros((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        rows = axis == a
        others = [i for i in range(3) if i != a]
        pos[rows, a] = sign[rows]
        pos[rows, others[0]] = uv[rows, 0]
        pos[rows, others[1]] = uv[rows, 1]
        normals[rows, a] = sign[rows]
    return pos, normals


def _cylinder(n: int, rng: np.random.Generator, radius: float = 1.0,
              half_height: float = 1.0):
    side_area = 2 * np.pi * radius * 2 * half_height
    cap_area = np.pi * radius ** 2
    total = side_area + 2 * cap_area
    u = rng.random(n)
    phi = rng.uniform(0.0, 2 * np.pi, size=n)
    pos = np.empty((n, 3))
    normals = np.zeros((n, 3))

    side = u < side_area / total
    pos[side, 0] = radius * np.cos(phi[side])
    pos[side, 1] = radius * np.sin(phi[side])
    pos[side, 2] = rng.uniform(-half_height, half_height, size=int(side.sum()))
    normals[side, 0] = np.cos(phi[side])
    normals[side, 1] = np.sin(phi[side])

    caps = ~side
    top = caps & (u >= (side_area + cap_area) / total)
    r = radius * np.sqrt(rng.random(int(caps.sum())))
    pos[caps, 0] = r * np.cos(phi[caps])
    pos[caps, 1] = r * np.sin(phi[caps])
    pos[caps, 2] = np.where(top[caps], half_height, -half_height)
    normals[caps, 2] = np.where(top[caps], 1.0, -1.0)
    return pos, normals


def _torus(n: int, rng: np.random.Generator, major: float = 0.7, minor: float = 0.3):
    # uniform by area: tube angle density is proportional to (R + r cos t)
    theta = np.empty(n)
    filled = 0
    while filled < n:
        cand = rng.uniform(0.0, 2 * np.pi, size=2 * (n - filled))
        accept = rng.random(cand.size) < (major + minor * np.cos(cand)) / (major + minor)
        kept = cand[accept][: n - filled]
        theta[filled:filled + kept.size] = kept
        filled += kept.size
    phi = rng.uniform(0.0, 2 * np.pi, size=n)
    ring = major + minor * np.cos(theta)
    pos = np.stack([ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)], axis=1)
    normals = np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi),
                        np.sin(theta)], axis=1)
    return pos, normals


def _two_part(n: int, rng: np.random.Generator):
    # sphere body with a cylindrical handle along +x
    handle_radius, handle_len = 0.22, 0.9
    body_area = 4 * np.pi
    handle_area = 2 * np.pi * handle_radius * handle_len
    share = int(round(n * handle_area / (body_area + handle_area)))
    n_handle = int(np.clip(share, 4, n - 4))  # both parts always present
    n_body = n - n_handle
    body_pos, body_nrm = _sphere(n_body, rng)
    phi = rng.uniform(0.0, 2 * np.pi, size=n_handle)
    x = rng.uniform(1.0, 1.0 + handle_len, size=n_handle)
    handle_pos = np.stack([x, handle_radius * np.cos(phi), handle_radius * np.sin(phi)], axis=1)
    handle_nrm = np.stack([np.zeros(n_handle), np.cos(phi), np.sin(phi)], axis=1)
    pos = np.concatenate([body_pos, handle_pos])
    normals = np.concatenate([body_nrm, handle_nrm])
    labels = np.concatenate([np.zeros(n_body, dtype=np.int64),
                             np.ones(n_handle, dtype=np.int64)])
    return pos, normals, labels


def generate_shapes(kind: str, n_points: int, noise_std: float = 0.0,
                    rng: np.random.Generator | None = None) -> PointCloud:
    """Sample ``n_points`` from the named unit-scale surface."""
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r} (want one of {SHAPE_KINDS})")
    if n_points < 8:
        raise ValueError(f"n_points must be >= 8, got {n_points}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    if rng is None:
        rng = np.random.default_rng(0)
    labels = None
    if kind == "sphere":
        pos, normals = _sphere(n_points, rng)
    elif kind == "cube":
        pos, normals = _cube(n_points, rng)
    elif kind == "cylinder":
        pos, normals = _cylinder(n_points, rng)
    elif kind == "torus":
        pos, normals = _torus(n_points, rng)
    else:
        pos, normals, labels = _two_part(n_points, rng)
    if noise_std > 0:
        pos = pos + rng.normal(0.0, noise_std, size=pos.shape)
    return PointCloud(pos.astype(np.float32), normals=normals.astype(np.float32),
                      labels=labels)


def _random_pose(cloud: PointCloud, rng: np.random.Generator,
                 scale_range=(0.8, 1.2)) -> PointCloud:
    """Random rotation about z plus a uniform scale; normals co-rotate."""
    angle = rng.uniform(0.0, 2 * np.pi)
    c, s = np.cos(angle), np.sin(angle)
    rot = np.asarray([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    scale = rng.uniform(*scale_range)
    pos = (cloud.positions @ rot.T) * scale
    normals = cloud.normals @ rot.T if cloud.normals is not None else None
    return PointCloud(pos.astype(np.float32),
                      normals=None if normals is None else normals.astype(np.float32),
                      labels=cloud.labels)


def make_classification_dataset(n_clouds: int, n_points: int,
                                rng: np.random.Generator,
                                noise_std: float = 0.0) -> list[tuple[PointCloud, int]]:
    """Balanced 4-class set (sphere/cube/cylinder/torus) in random poses."""
    out = []
    for i in range(n_clouds):
        label = i % len(CLASS_KINDS)
        cloud = generate_shapes(CLASS_KINDS[label], n_points, noise_std=noise_std, rng=rng)
        out.append((_random_pose(cloud, rng), label))
    return out


def make_segmentation_dataset(n_clouds: int, n_points: int,
                              rng: np.random.Generator,
                              noise_std: float = 0.0) -> list[PointCloud]:
    """Two-part bodies (label 0) with handles (label 1) in random poses."""
    return [
        _random_pose(generate_shapes("two_part", n_points, noise_std=noise_std, rng=rng), rng)
        for _ in range(n_clouds)
    ]
