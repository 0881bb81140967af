"""Staggered-grid difference and transfer operators on a 3D box.

Electric components live on edges (cell-indexed along their own axis,
node-indexed along the others); magnetic flux components live on faces
(node-indexed along their own axis). Walls are PEC by default: tangential
electric edge values are pinned to zero. Axes may instead be periodic, in
which case node and cell counts coincide and all operators wrap.

The transfer operators between staggered components and cell-center
vectors come in transposed pairs (``avg_*`` and ``dist_*``), and the two
curls are mutual adjoints on PEC-compatible fields. Those exact algebraic
identities are what make the discrete energy bookkeeping of the solvers
exact: div(curl) vanishes to machine precision, so the divergence
constraints propagate for free.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

_CYCLIC = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


class StaggeredGrid3D:
    """Shapes, coordinates, and operators for one staggered box grid."""

    def __init__(self, cells, lengths=(1.0, 1.0, 1.0), periodic=(False, False, False)):
        cells = tuple(int(c) for c in cells)
        if len(cells) != 3 or min(cells) < 1:
            raise InputError("cells must be three positive integers")
        self.cells = cells
        self.lengths = tuple(float(v) for v in lengths)
        if min(self.lengths) <= 0:
            raise InputError("domain lengths must be positive")
        self.periodic = tuple(bool(p) for p in periodic)
        self.h = tuple(L / n for L, n in zip(self.lengths, cells))
        self.nodes = tuple(n if p else n + 1 for n, p in zip(cells, self.periodic))
        self.cell_volume = self.h[0] * self.h[1] * self.h[2]

    # -- shapes ------------------------------------------------------------

    def edge_shape(self, c):
        return tuple(self.cells[a] if a == c else self.nodes[a] for a in range(3))

    def face_shape(self, c):
        return tuple(self.nodes[a] if a == c else self.cells[a] for a in range(3))

    def zero_edges(self):
        return [np.zeros(self.edge_shape(c)) for c in range(3)]

    def zero_faces(self):
        return [np.zeros(self.face_shape(c)) for c in range(3)]

    def centers(self):
        """Cell-center coordinates, shape (nx, ny, nz, 3)."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.cells, self.h)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    # -- 1D primitives -----------------------------------------------------

    def _d_node_to_cell(self, u, axis):
        h = self.h[axis]
        if self.periodic[axis]:
            return (np.roll(u, -1, axis=axis) - u) / h
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        return (u[tuple(hi)] - u[tuple(lo)]) / h

    def _d_cell_to_node(self, u, axis):
        h = self.h[axis]
        if self.periodic[axis]:
            return (u - np.roll(u, 1, axis=axis)) / h
        shape = list(u.shape)
        shape[axis] += 1
        out = np.zeros(shape)
        mid = [slice(None)] * 3
        mid[axis] = slice(1, -1)
        lo = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi = [slice(None)] * 3
        hi[axis] = slice(1, None)
        out[tuple(mid)] = (u[tuple(hi)] - u[tuple(lo)]) / h
        return out  # wall values left zero; callers mask them anyway

    def _avg_node_to_cell(self, u, axis):
        if self.periodic[axis]:
            return 0.5 * (u + np.roll(u, -1, axis=axis))
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        return 0.5 * (u[tuple(lo)] + u[tuple(hi)])

    def _avg_cell_to_node(self, u, axis):
        # exact transpose of _avg_node_to_cell
        if self.periodic[axis]:
            return 0.5 * (u + np.roll(u, 1, axis=axis))
        shape = list(u.shape)
        shape[axis] += 1
        out = np.zeros(shape)
        lo = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi = [slice(None)] * 3
        hi[axis] = slice(1, None)
        out[tuple(lo)] += 0.5 * u
        out[tuple(hi)] += 0.5 * u
        return out

    # -- curls and divergences ----------------------------------------------

    def curl_edges_to_faces(self, e):
        """curl of an edge field, landing on faces."""
        out = []
        for c, a, b in _CYCLIC:
            out.append(self._d_node_to_cell(e[b], a) - self._d_node_to_cell(e[a], b))
        return out

    def curl_faces_to_edges(self, f):
        """curl of a face field, landing on edges (wall rows are zero-filled)."""
        out = []
        for c, a, b in _CYCLIC:
            out.append(self._d_cell_to_node(f[b], a) - self._d_cell_to_node(f[a], b))
        return out

    def div_faces(self, f):
        """Divergence of a face field at cell centers."""
        return sum(self._d_node_to_cell(f[c], c) for c in range(3))

    def div_edges(self, e):
        """Divergence of an edge field at nodes (interior only; walls zero)."""
        return sum(self._d_cell_to_node(e[c], c) for c in range(3))

    # -- PEC mask ------------------------------------------------------------

    def pec_mask_edges(self, e, out=None):
        """Zero tangential edge values on non-periodic walls."""
        out = [np.array(x, copy=True) for x in e] if out is None else out
        for c in range(3):
            for a in range(3):
                if a == c or self.periodic[a]:
                    continue
                sl = [slice(None)] * 3
                sl[a] = 0
                out[c][tuple(sl)] = 0.0
                sl[a] = -1
                out[c][tuple(sl)] = 0.0
        return out

    # -- transfers between staggered components and cell-center vectors ------

    def avg_edges_to_centers(self, e):
        """Component-wise 4-edge average to centers, shape (nx, ny, nz, 3)."""
        comps = []
        for c, a, b in _CYCLIC:
            comps.append(self._avg_node_to_cell(self._avg_node_to_cell(e[c], a), b))
        return np.stack(comps, axis=-1)

    def dist_centers_to_edges(self, v, pec=True):
        """Transpose of avg_edges_to_centers, then the PEC mask."""
        out = []
        for c, a, b in _CYCLIC:
            out.append(self._avg_cell_to_node(self._avg_cell_to_node(v[..., c], a), b))
        if pec:
            self.pec_mask_edges(out, out=out)
        return out

    def avg_faces_to_centers(self, f):
        comps = [self._avg_node_to_cell(f[c], c) for c in range(3)]
        return np.stack(comps, axis=-1)

    def dist_centers_to_faces(self, v):
        return [self._avg_cell_to_node(v[..., c], c) for c in range(3)]

    # -- inner products -------------------------------------------------------

    def dot_faces(self, f, g):
        return self.cell_volume * sum(float(np.sum(a * b)) for a, b in zip(f, g))

    def dot_edges(self, e, g):
        return self.cell_volume * sum(float(np.sum(a * b)) for a, b in zip(e, g))

    def dot_centers(self, u, v):
        return self.cell_volume * float(np.sum(u * v))

    def norms_relative_div(self, div_vals, field_arrays):
        """Scale-free divergence size: ||div||_inf * h_min / ||field||_inf."""
        sup = max(float(np.max(np.abs(a))) for a in field_arrays)
        if sup == 0.0:
            return 0.0
        return float(np.max(np.abs(div_vals))) * min(self.h) / sup
