import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from mmfit.models import ModelType, make_instance


def make_camera_pair(rng, max_rotation_deg=15.0):
    """Random calibrated pair (K, R, t) with a modest rotation, convention
    x2 = R x1 + t."""
    f = 800.0
    K = np.array([[f, 0.0, 400.0], [0.0, f, 400.0], [0.0, 0.0, 1.0]])
    rotvec = rng.normal(size=3)
    rotvec *= np.radians(max_rotation_deg) * rng.uniform(0.2, 1.0) / np.linalg.norm(rotvec)
    R = Rotation.from_rotvec(rotvec).as_matrix()
    t = rng.normal(size=3)
    t *= 0.5 / np.linalg.norm(t)
    return K, R, t


def project_points(K, R, t, X):
    """Pixel projections in both views plus the two depth vectors."""
    X = np.atleast_2d(X)
    X2 = X @ R.T + t
    p1 = (K @ X.T).T
    p2 = (K @ X2.T).T
    return (p1[:, :2] / p1[:, 2:3], p2[:, :2] / p2[:, 2:3],
            X[:, 2].copy(), X2[:, 2].copy())


def visible_cloud(rng, K, R, t, n, depth=(2.0, 6.0), extent=800.0):
    """3D points in front of both cameras projecting inside both images."""
    Kinv = np.linalg.inv(K)
    out = []
    while len(out) < n:
        px = rng.uniform(0.1 * extent, 0.9 * extent, size=2)
        ray = Kinv @ np.array([px[0], px[1], 1.0])
        X = ray * rng.uniform(*depth) / ray[2]
        X2 = R @ X + t
        if X2[2] <= 0.1:
            continue
        p2 = K @ X2
        p2 = p2[:2] / p2[2]
        if not (0 <= p2[0] <= extent and 0 <= p2[1] <= extent):
            continue
        out.append(X)
    return np.array(out)


def fundamental_from_cameras(K1, R, t, K2=None):
    if K2 is None:
        K2 = K1
    tx = np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])
    F = np.linalg.inv(K2).T @ tx @ R @ np.linalg.inv(K1)
    return F / np.linalg.norm(F)


def make_f_scene(seed=0, n=7):
    """Exact correspondences from a known camera pair plus the true F."""
    rng = np.random.default_rng(seed)
    K, R, t = make_camera_pair(rng)
    X = visible_cloud(rng, K, R, t, n)
    p1, p2, z1, z2 = project_points(K, R, t, X)
    corr = np.column_stack([p1, p2])
    return corr, fundamental_from_cameras(K, R, t), (K, R, t, X)


def line_instance(a, b, c):
    return make_instance(ModelType.LINE2D, [a, b, c])


def line_angle_offset(inst_a, inst_b):
    """(degrees between normals mod 180, offset difference) of two lines.

    The angle comes from the cross product so that sub-microdegree
    differences are resolvable (arccos of the dot saturates near 1).
    """
    na, nb = inst_a.params[:2], inst_b.params[:2]
    cross = abs(float(na[0] * nb[1] - na[1] * nb[0]))
    ang = np.degrees(np.arcsin(min(cross, 1.0)))
    off = abs(abs(inst_a.params[2]) - abs(inst_b.params[2]))
    return ang, off


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
