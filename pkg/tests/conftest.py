import numpy as np
import pytest

from garmdyn.mesh import GarmentTemplate
from garmdyn.simulate import SyntheticSceneConfig, build_capsule_body, build_skirt_template


@pytest.fixture(scope="session")
def skirt_template():
    return build_skirt_template()


@pytest.fixture(scope="session")
def capsule_body():
    body, capsules = build_capsule_body()
    return body


@pytest.fixture(scope="session")
def scene():
    return SyntheticSceneConfig()


@pytest.fixture(scope="session")
def square_template():
    """Two-triangle unit-square chart embedded in the z=0 plane."""
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    uv = verts[:, :2].copy()
    return GarmentTemplate(vertices=verts, faces=faces, uv_coords=uv)


def make_plane_body(half=1.0, res=9):
    """Flat z=0 plane mesh with +z normals, used as a degenerate body."""
    xs = np.linspace(-half, half, res)
    verts = np.array([[x, y, 0.0] for y in xs for x in xs])
    faces = []
    for r in range(res - 1):
        for c in range(res - 1):
            a = r * res + c
            b = a + 1
            d = a + res + 1
            e = a + res
            faces.append([a, b, d])
            faces.append([a, d, e])
    return verts, np.asarray(faces)


def make_icosphere(subdiv=3):
    """Unit icosphere (vertices on the sphere), outward-oriented faces."""
    t = (1 + 5**0.5) / 2
    verts = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9],
         [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2],
         [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10],
         [8, 6, 7], [9, 8, 1]]
    )
    for _ in range(subdiv):
        vlist = list(verts)
        cache = {}
        new_faces = []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = (vlist[a] + vlist[b]) / 2
                cache[key] = len(vlist)
                vlist.append(m / np.linalg.norm(m))
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(vlist)
        faces = np.array(new_faces)
    return verts, faces
