"""Surface-code lattice on a (2d-1) x (2d-1) grid.

Node ids are 1-based and row-major.  Odd ids are data qubits, even ids are
ancillas.  Ancillas on even rows are X stabilizers (they detect Z errors),
ancillas on odd rows are Z stabilizers (they detect X errors).
"""

import enum
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .exceptions import InvalidParameterError
from .validation import check_distance


class Role(enum.Enum):
    DATA = "data"
    ANCILLA = "ancilla"


class StabilizerType(enum.Enum):
    X = "X"  # flags Z errors
    Z = "Z"  # flags X errors


def _readonly(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SurfaceCode:
    distance: int

    @property
    def side(self):
        return 2 * self.distance - 1

    @property
    def node_count(self):
        return self.side * self.side

    @cached_property
    def node_ids(self):
        return _readonly(np.arange(1, self.node_count + 1))

    @cached_property
    def data_ids(self):
        return _readonly(self.node_ids[self.node_ids % 2 == 1])

    @cached_property
    def ancilla_ids(self):
        return _readonly(self.node_ids[self.node_ids % 2 == 0])

    @property
    def n_data(self):
        return len(self.data_ids)

    @property
    def n_ancilla(self):
        return len(self.ancilla_ids)

    @cached_property
    def data_mask(self):
        """Boolean mask over 0-based node positions selecting data qubits."""
        return _readonly(self.node_ids % 2 == 1)

    def _check_id(self, k):
        if not 1 <= k <= self.node_count:
            raise InvalidParameterError(
                f"node id {k} out of range 1..{self.node_count} for distance {self.distance}"
            )

    def coords(self, k):
        """(row, col) of node ``k``, both 0-based."""
        self._check_id(k)
        return divmod(k - 1, self.side)

    def node_id(self, row, col):
        if not (0 <= row < self.side and 0 <= col < self.side):
            raise InvalidParameterError(f"({row}, {col}) is outside the {self.side}x{self.side} grid")
        return row * self.side + col + 1

    def role(self, k):
        self._check_id(k)
        return Role.DATA if k % 2 == 1 else Role.ANCILLA

    def stabilizer_type(self, k):
        if self.role(k) is not Role.ANCILLA:
            raise InvalidParameterError(f"node {k} is a data qubit and has no stabilizer type")
        return StabilizerType.X if ((k - 1) // self.side) % 2 == 0 else StabilizerType.Z

    @cached_property
    def x_stabilizer_mask(self):
        """Boolean mask over ancillas (ascending id): True for X stabilizers."""
        rows = (self.ancilla_ids - 1) // self.side
        return _readonly(rows % 2 == 0)

    @cached_property
    def adjacency(self):
        """Dense 0/1 adjacency matrix over 0-based node positions."""
        s = self.side
        a = np.zeros((self.node_count, self.node_count), dtype=np.int64)
        idx = np.arange(self.node_count).reshape(s, s)
        right = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
        down = (idx[:-1, :].ravel(), idx[1:, :].ravel())
        for i, j in (right, down):
            a[i, j] = 1
            a[j, i] = 1
        return _readonly(a)

    @cached_property
    def edges(self):
        """Unordered edges as sorted pairs of 1-based ids."""
        i, j = np.nonzero(np.triu(self.adjacency))
        return frozenset(zip((i + 1).tolist(), (j + 1).tolist()))

    @cached_property
    def degrees(self):
        return _readonly(self.adjacency.sum(axis=1))

    @cached_property
    def check_matrix(self):
        """Ancilla x data incidence matrix (uint8), rows and columns in ascending id order."""
        a = self.adjacency[np.ix_(self.ancilla_ids - 1, self.data_ids - 1)]
        return _readonly(a.astype(np.uint8))

    @cached_property
    def rotation_permutation(self):
        """0-based permutation implementing the 180-degree rotation of the grid."""
        return _readonly(np.arange(self.node_count)[::-1].copy())

    @cached_property
    def grid_distances(self):
        """Shortest-path (Manhattan) distance between every pair of nodes."""
        r, c = np.divmod(np.arange(self.node_count), self.side)
        d = np.abs(r[:, None] - r[None, :]) + np.abs(c[:, None] - c[None, :])
        return _readonly(d)


@lru_cache(maxsize=None)
def build_code(distance):
    """Return the surface code of the given distance (cached; instances are immutable)."""
    return SurfaceCode(check_distance(distance))


def neighbors(code, k):
    """Grid neighbours of node ``k`` in ascending id order."""
    code._check_id(k)
    row = code.adjacency[k - 1]
    return (np.flatnonzero(row) + 1).tolist()


def normalized_adjacency(code):
    """Symmetrically normalized adjacency with self loops, D^-1/2 (A + I) D^-1/2."""
    a_tilde = code.adjacency + np.eye(code.node_count, dtype=np.int64)
    inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1).astype(np.float64))
    out = a_tilde * np.outer(inv_sqrt, inv_sqrt)
    # outer() is symmetric in exact arithmetic but force bitwise symmetry anyway
    out = np.triu(out) + np.triu(out, 1).T
    return _readonly(out)
