#!/usr/bin/env python
#
# pointmatch: dense point correspondences within matched patches
"""
Point matching within superpoint correspondences

For each superpoint correspondence the features of the two
patches give a cost matrix, which is augmented with a dustbin
row and column and passed through log-domain Sinkhorn
iterations. Pairs which are among the k largest entries of both
their row and their column (and above a confidence floor) are
kept, and the per-patch results are merged into one set.
"""

import math
import logging
from dataclasses import dataclass
import numpy as np
from scipy.special import logsumexp
from .core import ConfigError
from .core import InvalidInputError
from .core import NumericalError

logger = logging.getLogger(__name__)

# Classes

@dataclass(frozen=True,eq=False)
class AssignmentMatrix:
    """
    Augmented soft assignment matrix from Sinkhorn

    Attributes:
      log_z_bar (array): (n+1) x (m+1) log assignment
    """
    log_z_bar: np.ndarray

    @property
    def z_bar(self):
        return np.exp(self.log_z_bar)

    @property
    def z(self):
        """
        Assignment without the dustbin row and column
        """
        return np.exp(self.log_z_bar[:-1,:-1])

    @property
    def shape(self):
        n,m = self.log_z_bar.shape
        return (n-1,m-1)

    def marginal_residual(self):
        """
        Largest deviation of the row sums from [1,...,1,m]
        and the column sums from [1,...,1,n]
        """
        n,m = self.shape
        z_bar = self.z_bar
        rows = np.ones(n+1)
        rows[-1] = m
        cols = np.ones(m+1)
        cols[-1] = n
        return max(np.max(np.abs(z_bar.sum(axis=1) - rows)),
                   np.max(np.abs(z_bar.sum(axis=0) - cols)))

@dataclass(frozen=True,eq=False)
class PointCorrespondences:
    """
    Dense point correspondences (x,y,confidence)

    Attributes:
      src (array): point indices in the source dense cloud
      dst (array): point indices in the destination dense cloud
      confidence (array): confidence of each pair
    """
    src: np.ndarray
    dst: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src,dtype=np.int64).reshape(-1)
        dst = np.asarray(self.dst,dtype=np.int64).reshape(-1)
        confidence = np.asarray(self.confidence,
                                dtype=np.float64).reshape(-1)
        if not len(src) == len(dst) == len(confidence):
            raise InvalidInputError("correspondence arrays differ in "
                                    "length")
        object.__setattr__(self,'src',src)
        object.__setattr__(self,'dst',dst)
        object.__setattr__(self,'confidence',confidence)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0),np.zeros(0),np.zeros(0))

    def __len__(self):
        return len(self.src)

    def __iter__(self):
        for x,y,c in zip(self.src,self.dst,self.confidence):
            yield (int(x),int(y),float(c))

    def points(self,src_points,dst_points):
        """
        Return the coordinates of the corresponding points

        Returns:
          Tuple: (p,q) arrays of matched source and
            destination coordinates.
        """
        return (np.asarray(src_points)[self.src],
                np.asarray(dst_points)[self.dst])

# Functions

def patch_cost_matrix(F_P_patch,F_Q_patch):
    """
    Cost matrix C = F_P F_Q^T / sqrt(d)
    """
    F_P = np.asarray(F_P_patch,dtype=np.float64)
    F_Q = np.asarray(F_Q_patch,dtype=np.float64)
    if F_P.ndim != 2 or F_Q.ndim != 2 or F_P.shape[1] != F_Q.shape[1]:
        raise InvalidInputError("patch feature widths differ (%s vs %s)" %
                                (F_P.shape,F_Q.shape))
    if F_P.shape[1] < 1:
        raise InvalidInputError("patch features have zero width")
    return (F_P @ F_Q.T)/math.sqrt(F_P.shape[1])

def augment_with_dustbin(C,alpha):
    """
    Append a dustbin row and column filled with alpha
    """
    if not math.isfinite(alpha):
        raise ConfigError("dustbin parameter must be finite (got %s)" %
                          alpha)
    C = np.asarray(C,dtype=np.float64)
    n,m = C.shape
    C_bar = np.full((n+1,m+1),float(alpha))
    C_bar[:n,:m] = C
    return C_bar

def _log_marginals(n,m):
    norm = -math.log(n + m)
    log_mu = np.full(n+1,norm)
    log_mu[-1] = math.log(m) + norm
    log_nu = np.full(m+1,norm)
    log_nu[-1] = math.log(n) + norm
    return log_mu,log_nu,norm

def _sinkhorn_iterations(C_bar,t0,keep_history=False):
    n,m = C_bar.shape[0]-1,C_bar.shape[1]-1
    log_mu,log_nu,norm = _log_marginals(n,m)
    u = np.zeros(n+1)
    v = np.zeros(m+1)
    history = []
    for _ in range(t0):
        v_prev = v
        u = log_mu - logsumexp(C_bar + v[None,:],axis=1)
        v = log_nu - logsumexp(C_bar + u[:,None],axis=0)
        if keep_history:
            history.append((u,v_prev))
    return u,v,norm,history

def _check_scores(C_bar,t0):
    C_bar = np.asarray(C_bar,dtype=np.float64)
    if C_bar.ndim != 2 or min(C_bar.shape) < 2:
        raise InvalidInputError("augmented score matrix must be at least "
                                "2 x 2")
    if not np.all(np.isfinite(C_bar)):
        raise InvalidInputError("augmented score matrix has non-finite "
                                "entries")
    if t0 < 1:
        raise ConfigError("number of Sinkhorn iterations must be at "
                          "least 1")
    return C_bar

def sinkhorn(C_bar,t0=100):
    """
    Log-domain Sinkhorn iterations with dustbin marginals

    The row marginals are 1/(n+m) for real rows and
    m/(n+m) for the dustbin row; the column marginals are
    1/(n+m) and n/(n+m). After t0 iterations the result is
    z_bar = exp(c_bar + u + v)*(n+m).

    Arguments:
      C_bar (array): (n+1) x (m+1) augmented scores
      t0 (int): number of iterations

    Returns:
      AssignmentMatrix: the augmented assignment.
    """
    C_bar = _check_scores(C_bar,t0)
    u,v,norm,_ = _sinkhorn_iterations(C_bar,t0)
    log_z = C_bar + u[:,None] + v[None,:] - norm
    if not np.all(np.isfinite(log_z)):
        raise NumericalError("Sinkhorn produced non-finite values")
    return AssignmentMatrix(log_z)

def sinkhorn_backward(C_bar,t0,grad_log_z):
    """
    Gradient of a loss through the Sinkhorn iterations

    Given dL/dlog(z_bar), returns dL/dC_bar by running the
    recurrences backwards through the stored u and v.

    Arguments:
      C_bar (array): (n+1) x (m+1) augmented scores
      t0 (int): number of iterations used in the forward pass
      grad_log_z (array): gradient with respect to log(z_bar)

    Returns:
      numpy.ndarray: gradient with respect to C_bar.
    """
    C_bar = _check_scores(C_bar,t0)
    G = np.asarray(grad_log_z,dtype=np.float64)
    if G.shape != C_bar.shape:
        raise InvalidInputError("gradient shape %s doesn't match scores "
                                "%s" % (G.shape,C_bar.shape))
    _,_,_,history = _sinkhorn_iterations(C_bar,t0,keep_history=True)
    grad_C = G.copy()
    grad_u = G.sum(axis=1)
    grad_v = G.sum(axis=0)
    for u,v_prev in reversed(history):
        # v = log_nu - logsumexp(C + u, axis=0)
        weights_v = np.exp(C_bar + u[:,None] -
                           logsumexp(C_bar + u[:,None],axis=0)[None,:])
        flow = weights_v*grad_v[None,:]
        grad_C -= flow
        grad_u = grad_u - flow.sum(axis=1)
        # u = log_mu - logsumexp(C + v_prev, axis=1)
        weights_u = np.exp(C_bar + v_prev[None,:] -
                           logsumexp(C_bar + v_prev[None,:],
                                     axis=1)[:,None])
        flow = weights_u*grad_u[:,None]
        grad_C -= flow
        grad_v = -flow.sum(axis=0)
        grad_u = np.zeros_like(grad_u)
    return grad_C

def _topk_mask(Z,k,axis):
    # True where an entry is among the k largest along axis;
    # ties go to the lower index
    order = np.argsort(-Z,axis=axis,kind='stable')
    ranks = np.empty_like(order)
    np.put_along_axis(ranks,order,
                      np.broadcast_to(
                          np.arange(Z.shape[axis]).reshape(
                              (-1,1) if axis == 0 else (1,-1)),
                          Z.shape),
                      axis=axis)
    return ranks < k

def mutual_topk_extract(Z,k,min_conf,patch_P,patch_Q):
    """
    Extract mutual top-k pairs from an assignment

    A pair (x,y) is kept if z_xy is among the k largest
    entries of row x and of column y and z_xy >= min_conf.
    Local indices are mapped to global indices through the
    patch member lists.

    Returns:
      PointCorrespondences: pairs in row-major order.
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    Z = np.asarray(Z,dtype=np.float64)
    patch_P = np.asarray(patch_P,dtype=np.int64)
    patch_Q = np.asarray(patch_Q,dtype=np.int64)
    if Z.shape != (len(patch_P),len(patch_Q)):
        raise InvalidInputError("assignment shape %s doesn't match "
                                "patches (%d,%d)" %
                                (Z.shape,len(patch_P),len(patch_Q)))
    keep = _topk_mask(Z,k,1) & _topk_mask(Z,k,0) & (Z >= min_conf)
    x,y = np.nonzero(keep)
    return PointCorrespondences(patch_P[x],patch_Q[y],Z[x,y])

def merge_correspondences(per_patch):
    """
    Merge per-patch correspondences

    Duplicate (x,y) pairs keep their largest confidence
    and the result is sorted by (x,y).
    """
    per_patch = [c for c in per_patch if len(c)]
    if not per_patch:
        return PointCorrespondences.empty()
    src = np.concatenate([c.src for c in per_patch])
    dst = np.concatenate([c.dst for c in per_patch])
    confidence = np.concatenate([c.confidence for c in per_patch])
    order = np.lexsort((-confidence,dst,src))
    src,dst,confidence = src[order],dst[order],confidence[order]
    first = np.ones(len(src),dtype=bool)
    first[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
    return PointCorrespondences(src[first],dst[first],confidence[first])

def match_patch(F_P,F_Q,patch_P,patch_Q,cfg):
    """
    Point matching within one superpoint correspondence

    Arguments:
      F_P, F_Q (array): dense point features of the two
        clouds
      patch_P, patch_Q (array): dense point indices of the
        two patches
      cfg (MatchingConfig): matching settings

    Returns:
      PointCorrespondences: correspondences for the patch.
    """
    C = patch_cost_matrix(F_P[patch_P],F_Q[patch_Q])
    assignment = sinkhorn(augment_with_dustbin(C,cfg.dustbin_alpha),
                          cfg.sinkhorn_iterations)
    return mutual_topk_extract(assignment.z,cfg.mutual_k,
                               cfg.min_confidence,patch_P,patch_Q)

def match_points(superpoint_correspondences,patches_P,patches_Q,
                 F_P,F_Q,cfg):
    """
    Point matching over all superpoint correspondences

    Arguments:
      superpoint_correspondences (SuperpointCorrespondences):
        the matched patches
      patches_P, patches_Q (list): dense point indices of
        each patch
      F_P, F_Q (array): dense point features
      cfg (MatchingConfig): matching settings

    Returns:
      Tuple: (per_patch,merged) where per_patch is the
        list of correspondences for each superpoint
        correspondence and merged is their union.
    """
    F_P = np.asarray(F_P,dtype=np.float64)
    F_Q = np.asarray(F_Q,dtype=np.float64)
    per_patch = [match_patch(F_P,F_Q,patches_P[i],patches_Q[j],cfg)
                 for i,j,_ in superpoint_correspondences]
    merged = merge_correspondences(per_patch)
    logger.debug("point matching: %d patch pairs -> %d correspondences" %
                 (len(per_patch),len(merged)))
    return per_patch,merged
