"""Incremental Bowyer-Watson tetrahedralization in 3D.

Points are inserted one at a time into an enclosing super-tetrahedron. For each
insertion the conflict cavity (tets whose circumsphere strictly contains the new
point) is carved out and re-filled by connecting its boundary faces to the point.
The cavity is grown until it is star-shaped from the point, which is what keeps
cospherical inputs (the cube corners, for one) from producing inverted tets.

Predicates are plain floating point, normalized by the Hadamard bound of the
determinant and compared against ``TOL``.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .errors import DegenerateInput

TOL = 1e-12

# faces opposite vertex k, listed as the other three positions
_FACE_POS = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
_EDGE_POS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def _det3(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (
        u[..., 0] * (v[..., 1] * w[..., 2] - v[..., 2] * w[..., 1])
        - u[..., 1] * (v[..., 0] * w[..., 2] - v[..., 2] * w[..., 0])
        + u[..., 2] * (v[..., 0] * w[..., 1] - v[..., 1] * w[..., 0])
    )


def _lifted_det(rel: np.ndarray) -> np.ndarray:
    """det of the 4x4 matrix with rows (r_k, |r_k|^2), rel shaped (..., 4, 3)."""
    lift = np.sum(rel * rel, axis=-1)
    total = np.zeros(rel.shape[:-2])
    for k in range(4):
        rows = [r for r in range(4) if r != k]
        minor = _det3(rel[..., rows[0], :], rel[..., rows[1], :], rel[..., rows[2], :])
        total = total + (-1) ** (k + 3) * lift[..., k] * minor
    return total


def _hadamard(rel: np.ndarray, lifted: bool) -> np.ndarray:
    sq = np.sum(rel * rel, axis=-1)
    if lifted:
        sq = sq + sq * sq
    scale = np.sqrt(np.prod(sq, axis=-1))
    return np.where(scale > 0, scale, 1.0)


def orient3d(pts: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Normalized signed volume of each tet; positive for right-handed order."""
    a = pts[tets[:, 0]]
    m = np.stack([pts[tets[:, 1]] - a, pts[tets[:, 2]] - a, pts[tets[:, 3]] - a], axis=1)
    return _det3(m[:, 0], m[:, 1], m[:, 2]) / _hadamard(m, lifted=False)


def insphere(pts: np.ndarray, tets: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Normalized insphere value of ``p`` against positively oriented tets.

    Positive means strictly inside the circumsphere.
    """
    rel = pts[tets] - p
    return -_lifted_det(rel) / _hadamard(rel, lifted=True)


def _check_input(points: np.ndarray) -> None:
    if points.ndim != 2 or points.shape[1] != 3:
        raise DegenerateInput(f"expected (n, 3) points, got shape {points.shape}")
    if len(points) < 4:
        raise DegenerateInput("need at least 4 points")
    if not np.all(np.isfinite(points)):
        raise DegenerateInput("non-finite coordinates")
    if len(np.unique(points, axis=0)) != len(points):
        raise DegenerateInput("duplicate points")
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < 1e-10:
        raise DegenerateInput("points are coplanar")


def _super_tet(points: np.ndarray, factor: float) -> np.ndarray:
    lo, hi = points.min(axis=0), points.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = max(float(np.max(hi - lo)), 1e-300)
    base = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    verts = center + factor * extent * base
    # make the super tet right-handed
    if np.linalg.det(verts[1:] - verts[0]) < 0:
        verts[[2, 3]] = verts[[3, 2]]
    return verts


def _face_keys(tet: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(sorted((tet[a], tet[b], tet[c]))) for a, b, c in _FACE_POS)


class _Mesh:
    """Tets plus their cached face keys, kept in lock-step."""

    def __init__(self, tets: list[tuple[int, ...]]):
        self.tets = tets
        self.keys = [_face_keys(t) for t in tets]


def _insert(pts: np.ndarray, mesh: _Mesh, i: int) -> None:
    p = pts[i]
    tets, keys = mesh.tets, mesh.keys
    arr = np.asarray(tets, dtype=np.int64)
    bad = np.flatnonzero(insphere(pts, arr, p) > TOL)
    if bad.size == 0:
        raise DegenerateInput(f"point {i} conflicts with no tetrahedron")

    # seed the cavity with a conflicting tet that contains p
    sub = np.repeat(arr[bad][:, None, :], 4, axis=1)
    for k in range(4):
        sub[:, k, k] = i
    vol = orient3d(pts, sub.reshape(-1, 4)).reshape(-1, 4)
    containing = np.flatnonzero(np.all(vol >= -TOL, axis=1))
    if containing.size == 0:
        raise DegenerateInput(f"point {i} lies in no conflicting tetrahedron")
    seed = int(bad[containing[0]])

    face_owner: dict[tuple[int, ...], list[int]] = defaultdict(list)
    for t in bad.tolist():
        for key in keys[t]:
            face_owner[key].append(t)
    cavity = {seed}
    stack = [seed]
    while stack:
        t = stack.pop()
        for key in keys[t]:
            for u in face_owner[key]:
                if u not in cavity:
                    cavity.add(u)
                    stack.append(u)

    all_faces: dict[tuple[int, ...], list[int]] | None = None
    while True:
        counts: dict[tuple[int, ...], int] = defaultdict(int)
        for t in cavity:
            for key in keys[t]:
                counts[key] += 1
        new = []
        for t in cavity:
            for k, key in enumerate(keys[t]):
                if counts[key] == 1:
                    nt = list(tets[t])
                    nt[k] = i
                    new.append((tuple(nt), key))
        vol = orient3d(pts, np.asarray([nt for nt, _ in new], dtype=np.int64))
        flat = [key for (_, key), v in zip(new, vol) if v <= TOL]
        if not flat:
            break
        # not star-shaped: absorb the outside neighbour across every flat face
        if all_faces is None:
            all_faces = defaultdict(list)
            for t, tkeys in enumerate(keys):
                for key in tkeys:
                    all_faces[key].append(t)
        grown = False
        for key in flat:
            for u in all_faces[key]:
                if u not in cavity:
                    cavity.add(u)
                    grown = True
        if not grown:
            raise DegenerateInput(f"cannot make a star-shaped cavity for point {i}")

    keep = [t for t in range(len(tets)) if t not in cavity]
    mesh.tets = [tets[t] for t in keep] + [nt for nt, _ in new]
    mesh.keys = [keys[t] for t in keep] + [_face_keys(nt) for nt, _ in new]


def _covers_hull(pts: np.ndarray, tets: np.ndarray) -> bool:
    """Every boundary face of the tet union must be a supporting face of the hull."""
    faces = np.concatenate([tets[:, list(pos)] for pos in _FACE_POS])
    faces.sort(axis=1)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    boundary = uniq[counts == 1]
    if len(boundary) == 0:
        return False
    a, b, c = pts[boundary[:, 0]], pts[boundary[:, 1]], pts[boundary[:, 2]]
    normal = np.cross(b - a, c - a)
    nn = np.linalg.norm(normal, axis=1)
    if np.any(nn == 0):
        return False
    normal /= nn[:, None]
    centroid = pts.mean(axis=0)
    flip = np.where(np.einsum("fi,fi->f", centroid - a, normal) > 0, -1.0, 1.0)
    side = (np.einsum("pi,fi->fp", pts, normal) - np.einsum("fi,fi->f", a, normal)[:, None]) * flip[:, None]
    extent = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    return bool(np.max(side) <= 1e-9 * extent)


def _face_table(tets: np.ndarray) -> dict[tuple[int, ...], list[tuple[int, int]]]:
    """Sorted face key -> [(tet index, opposite vertex)]."""
    table: dict[tuple[int, ...], list[tuple[int, int]]] = defaultdict(list)
    for t, tet in enumerate(tets.tolist()):
        for k, key in enumerate(_face_keys(tuple(tet))):
            table[key].append((t, tet[k]))
    return table


def _fill_hull_gaps(pts: np.ndarray, tets: np.ndarray, max_steps: int = 10_000) -> np.ndarray:
    """Grow the tet set outward until its boundary is the convex hull.

    A large-but-finite super-tet leaves out tets whose circumspheres swallow a
    super vertex (thin slivers along flat stretches of the hull). Each boundary
    face with points beyond it gets the Delaunay tet on its outer side: among
    those points, the one whose sphere through the face has its centre furthest
    back along the outward normal.
    """
    tets = [tuple(t) for t in tets.tolist()]
    extent = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    for _ in range(max_steps):
        table = _face_table(np.asarray(tets, dtype=np.int64))
        added = False
        for key, owners in table.items():
            if len(owners) != 1:
                continue
            a, b, c = (pts[v] for v in key)
            normal = np.cross(b - a, c - a)
            normal /= np.linalg.norm(normal)
            inner = pts[owners[0][1]]
            if np.dot(inner - a, normal) > 0:
                normal = -normal
            height = (pts - a) @ normal
            outside = np.flatnonzero(height > 1e-10 * extent)
            if outside.size == 0:
                continue
            # centre x of the sphere through a, b, c, p: 2 (v - a) . x = |v|^2 - |a|^2
            rows = np.stack([b - a, c - a], axis=0)
            best, best_t = -1, np.inf
            for q in outside.tolist():
                m = 2.0 * np.vstack([rows, pts[q] - a])
                rhs = np.array([b @ b - a @ a, c @ c - a @ a, pts[q] @ pts[q] - a @ a])
                t = float((np.linalg.solve(m, rhs) - a) @ normal)
                if t < best_t:
                    best, best_t = q, t
            tet = [key[0], key[1], key[2], best]
            if orient3d(pts, np.asarray([tet]))[0] < 0:
                tet[1], tet[2] = tet[2], tet[1]
            tets.append(tuple(tet))
            added = True
            break
        if not added:
            return np.asarray(tets, dtype=np.int64)
    raise DegenerateInput("hull gap filling did not terminate")


def _is_manifold(pts: np.ndarray, tets: np.ndarray) -> bool:
    """Each face is shared by at most two tets, lying on opposite sides of it."""
    for key, owners in _face_table(tets).items():
        if len(owners) > 2:
            return False
        if len(owners) == 2:
            a, b, c = (pts[v] for v in key)
            normal = np.cross(b - a, c - a)
            s0 = np.dot(pts[owners[0][1]] - a, normal)
            s1 = np.dot(pts[owners[1][1]] - a, normal)
            if s0 * s1 >= 0:
                return False
    return True


def delaunay_3d(points, factors=(100.0, 1e3, 1e4)) -> np.ndarray:
    """Delaunay tetrahedralization of ``points``.

    Returns an (m, 4) int array of positively oriented tets. Raises
    DegenerateInput for coplanar or duplicated input, or when no super-tet size
    yields a triangulation that is empty-circumsphere and covers the hull.
    """
    pts = np.asarray(points, dtype=float)
    _check_input(pts)
    n = len(pts)
    last_error = "triangulation does not cover the convex hull"
    for factor in factors:
        work = np.vstack([pts, _super_tet(pts, factor)])
        mesh = _Mesh([(n, n + 1, n + 2, n + 3)])
        try:
            for i in range(n):
                _insert(work, mesh, i)
        except DegenerateInput as exc:
            last_error = str(exc)
            continue
        arr = np.asarray([t for t in mesh.tets if max(t) < n], dtype=np.int64)
        if len(arr) == 0:
            continue
        if not _covers_hull(pts, arr):
            arr = _fill_hull_gaps(pts, arr)
            if not _covers_hull(pts, arr):
                continue
        if len(np.unique(arr)) != n:
            continue
        if not _is_manifold(pts, arr):
            last_error = "overlapping tetrahedra"
            continue
        if np.any(orient3d(pts, arr) <= TOL):
            last_error = "flat tetrahedron in result"
            continue
        if not is_delaunay(pts, arr):
            last_error = "empty-circumsphere check failed"
            continue
        return arr
    raise DegenerateInput(last_error)


def is_delaunay(points: np.ndarray, tets: np.ndarray, chunk: int = 64) -> bool:
    """Empty-circumsphere test of every tet against every point."""
    pts = np.asarray(points, dtype=float)
    corners = pts[np.asarray(tets, dtype=np.int64)]
    for s in range(0, len(pts), chunk):
        rel = corners[None, :, :, :] - pts[s : s + chunk, None, None, :]
        if np.any(-_lifted_det(rel) / _hadamard(rel, lifted=True) > TOL):
            return False
    return True


def tets_to_edges(tets) -> np.ndarray:
    """Sorted, unique (i, j) pairs with i < j from the six edges of each tet."""
    arr = np.asarray(tets, dtype=np.int64).reshape(-1, 4)
    if len(arr) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate([arr[:, list(e)] for e in _EDGE_POS])
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)
