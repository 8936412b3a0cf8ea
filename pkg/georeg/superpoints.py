#!/usr/bin/env python
#
# superpoints: superpoint correspondence extraction
import logging
from dataclasses import dataclass
import numpy as np
from .core import InvalidInputError
from .core import NumericalError
from .core import ConfigError

logger = logging.getLogger(__name__)

# Constants
UNIT_NORM_TOLERANCE = 1e-6

# Classes

@dataclass(frozen=True,eq=False)
class SuperpointCorrespondences:
    """
    Superpoint correspondences (i,j,score), scores descending

    Attributes:
      src (array): superpoint indices in the source
      dst (array): superpoint indices in the destination
      scores (array): matching scores
    """
    src: np.ndarray
    dst: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.src)

    def __iter__(self):
        for i,j,s in zip(self.src,self.dst,self.scores):
            yield (int(i),int(j),float(s))

    def to_list(self):
        """
        Return the correspondences as a list of [i,j,score]
        """
        return [list(c) for c in self]

# Functions

def normalize_rows_to_sphere(H):
    """
    Scale each row of H to unit L2 norm

    Raises an InvalidInputError naming the first zero row.
    """
    H = np.asarray(H,dtype=np.float64)
    if H.ndim != 2:
        raise InvalidInputError("expected a feature matrix")
    norms = np.linalg.norm(H,axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if len(zero):
        raise InvalidInputError("row %d has zero norm" % zero[0])
    if not np.all(np.isfinite(norms)):
        raise InvalidInputError("non-finite feature rows")
    return H/norms[:,None]

def gaussian_correlation(H_P,H_Q):
    """
    Gaussian correlation s_ij = exp(-|h_i - h_j|^2)

    Both matrices must have unit rows; the squared distance
    is then 2 - 2 h_i.h_j, which is clipped to [0,4].
    """
    H_P = np.asarray(H_P,dtype=np.float64)
    H_Q = np.asarray(H_Q,dtype=np.float64)
    if H_P.ndim != 2 or H_Q.ndim != 2 or H_P.shape[1] != H_Q.shape[1]:
        raise InvalidInputError("feature widths differ (%s vs %s)" %
                                (H_P.shape,H_Q.shape))
    for name,H in (('H_P',H_P),('H_Q',H_Q)):
        if np.any(np.abs(np.linalg.norm(H,axis=1) - 1.0) >
                  UNIT_NORM_TOLERANCE):
            raise InvalidInputError("%s: rows must have unit norm" % name)
    d2 = np.clip(2.0 - 2.0*(H_P @ H_Q.T),0.0,4.0)
    return np.exp(-d2)

def dual_normalize(S):
    """
    Dual normalisation (S/row sums) * (S/column sums)
    """
    S = np.asarray(S,dtype=np.float64)
    rows = S.sum(axis=1,keepdims=True)
    cols = S.sum(axis=0,keepdims=True)
    if np.any(rows <= 0.0) or np.any(cols <= 0.0):
        raise NumericalError("correlation matrix has a zero row or "
                             "column sum")
    return (S/rows)*(S/cols)

def select_topk_correspondences(S_bar,N_c):
    """
    Select the N_c globally largest entries

    Entries are ordered by descending score with ties
    broken by (i,j).

    Returns:
      SuperpointCorrespondences: the selected entries.
    """
    if N_c < 1:
        raise ConfigError("N_c must be at least 1")
    S_bar = np.asarray(S_bar,dtype=np.float64)
    n,m = S_bar.shape
    i,j = np.divmod(np.arange(n*m),m)
    scores = S_bar.reshape(-1)
    order = np.lexsort((j,i,-scores))[:N_c]
    return SuperpointCorrespondences(i[order],j[order],scores[order])

def match_superpoints(H_P,H_Q,N_c,dual_normalization=True):
    """
    Superpoint matching on hybrid features

    Normalises both feature sets onto the unit sphere,
    computes the Gaussian correlation, applies dual
    normalisation (unless disabled) and selects the top
    N_c entries.
    """
    S = gaussian_correlation(normalize_rows_to_sphere(H_P),
                             normalize_rows_to_sphere(H_Q))
    if dual_normalization:
        S = dual_normalize(S)
    correspondences = select_topk_correspondences(S,N_c)
    logger.debug("superpoint matching: %d x %d -> %d correspondences" %
                 (S.shape[0],S.shape[1],len(correspondences)))
    return correspondences
