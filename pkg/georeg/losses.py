#!/usr/bin/env python
#
# losses: circle losses, point matching loss and gradient checks
"""
Training losses with analytic gradients

No training loop is provided; the losses are implemented so their
values and gradients can be evaluated and checked against finite
differences (see ``run_gradcheck``).

Circle loss, for each anchor patch i of one cloud:

  L_i = log(1 + sum_p exp(l_ip b_ip (d_ip - delta_p))
                * sum_n exp(b_in (delta_n - d_in)))

with b_ip = gamma*relu(d_ip - delta_p), b_in = gamma*relu(delta_n - d_in),
d the feature distance, l_ip = sqrt(overlap) for the overlap-aware
loss and 1 for the vanilla loss. The loss of one side is the mean
over its anchors and the total is the mean of both sides. The
weights b are part of the differentiated function.
"""

import logging
from collections import namedtuple
from dataclasses import dataclass
import numpy as np
from scipy.special import logsumexp
from .core import InvalidInputError
from .core import ConfigError
from .config import CircleLossConfig
from .pointmatch import AssignmentMatrix
from .pointmatch import sinkhorn
from .pointmatch import sinkhorn_backward

logger = logging.getLogger(__name__)

# Constants
LOG_FLOOR = 1e-12

GradcheckResult = namedtuple('GradcheckResult',
                             ('name','max_error','passed'))

# Classes

@dataclass(frozen=True,eq=False)
class OverlapLabels:
    """
    Overlap ratios between the patches of two clouds

    Pairs with overlap of at least ``positive_overlap`` are
    positives, pairs with zero overlap are negatives and
    patches with at least one positive are anchors.
    """
    overlaps: np.ndarray
    positive_overlap: float = 0.1

    def __post_init__(self):
        overlaps = np.asarray(self.overlaps,dtype=np.float64)
        if overlaps.ndim != 2:
            raise InvalidInputError("overlaps must be a matrix")
        if np.any(overlaps < 0.0) or np.any(overlaps > 1.0):
            raise InvalidInputError("overlap ratios must be in [0,1]")
        object.__setattr__(self,'overlaps',overlaps)

    @classmethod
    def from_overlaps(cls,overlaps,positive_overlap=0.1):
        return cls(overlaps,positive_overlap)

    @property
    def positive(self):
        return self.overlaps >= self.positive_overlap

    @property
    def negative(self):
        return self.overlaps <= 0.0

    @property
    def src_anchors(self):
        return np.nonzero(self.positive.any(axis=1))[0]

    @property
    def dst_anchors(self):
        return np.nonzero(self.positive.any(axis=0))[0]

    def transpose(self):
        """
        Labels seen from the destination side
        """
        return OverlapLabels(self.overlaps.T,self.positive_overlap)

@dataclass(frozen=True,eq=False)
class CircleLossResult:
    loss: float
    grad_src: np.ndarray
    grad_dst: np.ndarray
    empty: bool = False

@dataclass(frozen=True,eq=False)
class PointMatchingLossResult:
    loss: float
    gradient: np.ndarray
    floored: int = 0

# Circle loss

def _masked_logsumexp(values,mask):
    # Row-wise log-sum-exp over masked entries and the softmax
    # weights (zero outside the mask; -inf for empty rows)
    masked = np.where(mask,values,-np.inf)
    peak = np.max(masked,axis=1,keepdims=True)
    peak = np.where(np.isfinite(peak),peak,0.0)
    with np.errstate(divide='ignore'):
        e = np.where(mask,np.exp(masked - peak),0.0)
        total = e.sum(axis=1,keepdims=True)
        lse = (np.log(total) + peak)[:,0]
    weights = np.divide(e,total,out=np.zeros_like(e),where=total > 0.0)
    return lse,weights

def _pair_distances(H_a,H_b):
    diff = H_a[:,None,:] - H_b[None,:,:]
    return np.linalg.norm(diff,axis=2),diff

def _circle_side(H_a,H_b,labels,cfg,overlap_weighted):
    # Loss of one side and its gradient with respect to H_a, H_b
    D,diff = _pair_distances(H_a,H_b)
    positive = labels.positive
    negative = labels.negative
    anchors = labels.src_anchors
    grad_a = np.zeros_like(H_a)
    grad_b = np.zeros_like(H_b)
    if len(anchors) == 0:
        return 0.0,grad_a,grad_b,0
    if overlap_weighted:
        lam = np.sqrt(labels.overlaps)
    else:
        lam = np.ones_like(D)
    pos_gap = np.maximum(D - cfg.delta_p,0.0)
    neg_gap = np.maximum(cfg.delta_n - D,0.0)
    pos_exponent = cfg.gamma*lam*pos_gap**2
    neg_exponent = cfg.gamma*neg_gap**2
    lse_p,w_p = _masked_logsumexp(pos_exponent,positive)
    lse_n,w_n = _masked_logsumexp(neg_exponent,negative)
    s = lse_p + lse_n
    losses = np.logaddexp(0.0,s)
    with np.errstate(over='ignore'):
        sigma = np.where(np.isfinite(s),1.0/(1.0 + np.exp(-s)),0.0)
    # dL_i/dD_ij over anchors only
    dD = sigma[:,None]*(w_p*2.0*cfg.gamma*lam*pos_gap -
                        w_n*2.0*cfg.gamma*neg_gap)
    is_anchor = np.zeros(len(H_a),dtype=bool)
    is_anchor[anchors] = True
    dD[~is_anchor] = 0.0
    dD = dD/len(anchors)
    unit = np.divide(diff,D[:,:,None],out=np.zeros_like(diff),
                     where=D[:,:,None] > 0.0)
    flow = dD[:,:,None]*unit
    grad_a = flow.sum(axis=1)
    grad_b = -flow.sum(axis=0)
    return float(losses[anchors].mean()),grad_a,grad_b,len(anchors)

def _circle_loss(H_P,H_Q,labels,cfg,overlap_weighted):
    if cfg is None:
        cfg = CircleLossConfig()
    H_P = np.asarray(H_P,dtype=np.float64)
    H_Q = np.asarray(H_Q,dtype=np.float64)
    if H_P.ndim != 2 or H_Q.ndim != 2 or H_P.shape[1] != H_Q.shape[1]:
        raise InvalidInputError("feature matrices must have equal width")
    if labels.overlaps.shape != (len(H_P),len(H_Q)):
        raise InvalidInputError("overlap matrix shape %s doesn't match "
                                "features (%d,%d)" %
                                (labels.overlaps.shape,len(H_P),len(H_Q)))
    if not (np.all(np.isfinite(H_P)) and np.all(np.isfinite(H_Q))):
        raise InvalidInputError("non-finite features")
    loss_P,gP_a,gQ_b,nP = _circle_side(H_P,H_Q,labels,cfg,
                                       overlap_weighted)
    loss_Q,gQ_a,gP_b,nQ = _circle_side(H_Q,H_P,labels.transpose(),cfg,
                                       overlap_weighted)
    empty = (nP == 0 and nQ == 0)
    if empty:
        logger.warning("circle loss: no anchors")
    return CircleLossResult(loss=0.5*(loss_P + loss_Q),
                            grad_src=0.5*(gP_a + gP_b),
                            grad_dst=0.5*(gQ_b + gQ_a),
                            empty=empty)

def overlap_aware_circle_loss(H_P,H_Q,labels,cfg=None):
    """
    Overlap-aware circle loss

    Positive pairs are weighted by the square root of their
    overlap ratio inside the exponent.

    Arguments:
      H_P, H_Q (array): superpoint features of both clouds
      labels (OverlapLabels): patch overlap ratios
      cfg (CircleLossConfig): margins and scale

    Returns:
      CircleLossResult: loss and gradients for H_P and H_Q
        ('empty' is set if there are no anchors).
    """
    return _circle_loss(H_P,H_Q,labels,cfg,True)

def vanilla_circle_loss(H_P,H_Q,labels,cfg=None):
    """
    Circle loss with all positive pairs weighted equally
    """
    return _circle_loss(H_P,H_Q,labels,cfg,False)

# Point matching loss

def _as_log_assignment(assignment):
    if isinstance(assignment,AssignmentMatrix):
        return assignment.log_z_bar
    return np.asarray(assignment,dtype=np.float64)

def _referenced_cells(shape,matches,unmatched_src,unmatched_dst):
    n,m = shape[0]-1,shape[1]-1
    matches = np.asarray(matches,dtype=np.int64).reshape(-1,2)
    I = np.asarray(unmatched_src,dtype=np.int64).reshape(-1)
    J = np.asarray(unmatched_dst,dtype=np.int64).reshape(-1)
    if np.any(matches[:,0] < 0) or np.any(matches[:,0] >= n) or \
       np.any(matches[:,1] < 0) or np.any(matches[:,1] >= m) or \
       np.any(I < 0) or np.any(I >= n) or np.any(J < 0) or np.any(J >= m):
        raise InvalidInputError("match indices out of bounds for a %d x %d "
                                "assignment" % (n,m))
    rows = np.concatenate([matches[:,0],I,np.full(len(J),n)])
    cols = np.concatenate([matches[:,1],np.full(len(I),m),J])
    return rows,cols

def point_matching_loss(assignment,matches,unmatched_src,unmatched_dst):
    """
    Negative log-likelihood of the ground-truth assignment

    L = -sum_M log z_xy - sum_I log z_x,dustbin
        - sum_J log z_dustbin,y

    Entries below 1e-12 are floored (and counted) so the
    loss stays finite; floored entries get no gradient.

    Arguments:
      assignment (AssignmentMatrix): augmented assignment
      matches (array): (M,2) ground-truth matches
      unmatched_src, unmatched_dst (array): unmatched rows
        and columns

    Returns:
      PointMatchingLossResult: loss and the gradient with
        respect to log(z_bar).
    """
    log_z = _as_log_assignment(assignment)
    rows,cols = _referenced_cells(log_z.shape,matches,unmatched_src,
                                  unmatched_dst)
    values = log_z[rows,cols]
    floored = values < np.log(LOG_FLOOR)
    values = np.where(floored,np.log(LOG_FLOOR),values)
    gradient = np.zeros_like(log_z)
    np.add.at(gradient,(rows[~floored],cols[~floored]),-1.0)
    nfloored = int(np.count_nonzero(floored))
    if nfloored:
        logger.warning("point matching loss: %d entries floored at %g" %
                       (nfloored,LOG_FLOOR))
    return PointMatchingLossResult(loss=float(-values.sum()),
                                   gradient=gradient,
                                   floored=nfloored)

def point_matching_loss_from_scores(C_bar,t0,matches,unmatched_src,
                                    unmatched_dst):
    """
    Point matching loss as a function of the augmented scores

    Returns:
      PointMatchingLossResult: loss and the gradient with
        respect to C_bar (through the Sinkhorn iterations).
    """
    assignment = sinkhorn(C_bar,t0)
    result = point_matching_loss(assignment,matches,unmatched_src,
                                 unmatched_dst)
    return PointMatchingLossResult(
        loss=result.loss,
        gradient=sinkhorn_backward(C_bar,t0,result.gradient),
        floored=result.floored)

def sample_ground_truth_matches(pairs,N_g,rng):
    """
    Sample at most N_g ground-truth superpoint matches

    Returns:
      numpy.ndarray: the sampled rows of ``pairs`` in their
        original order.
    """
    pairs = np.asarray(pairs)
    if N_g < 1:
        raise ConfigError("N_g must be at least 1")
    if len(pairs) <= N_g:
        return pairs
    keep = np.sort(rng.choice(len(pairs),size=N_g,replace=False))
    return pairs[keep]

def mean_point_matching_loss(terms,t0):
    """
    Mean point matching loss over sampled patch matches

    Arguments:
      terms (list): list of (C_bar,matches,unmatched_src,
        unmatched_dst) tuples, one per sampled superpoint
        match
      t0 (int): Sinkhorn iterations

    Returns:
      float: the mean loss (0 if there are no terms).
    """
    if not terms:
        return 0.0
    return float(np.mean([
        point_matching_loss(sinkhorn(C_bar,t0),M,I,J).loss
        for C_bar,M,I,J in terms]))

def total_loss(H_P,H_Q,labels,terms,t0,cfg=None):
    """
    Overlap-aware circle loss plus mean point matching loss
    """
    circle = overlap_aware_circle_loss(H_P,H_Q,labels,cfg)
    return circle.loss + mean_point_matching_loss(terms,t0)

# Cross-entropy demonstration

def multilabel_cross_entropy(y,g):
    """
    Cross-entropy -sum g_i log softmax(y)_i
    """
    y = np.asarray(y,dtype=np.float64)
    g = np.asarray(g,dtype=np.float64)
    return float(-np.sum(g*(y - logsumexp(y))))

def softmax_ce_gradient_demo(y,g):
    """
    Gradient of the multi-label cross-entropy

    d_i = (sum_j g_j) z_i - g_i with z = softmax(y). For
    a positive class, d_i > 0 exactly when z_i exceeds
    g_i/sum_j g_j, i.e. a confident positive is pushed
    down when there are several positives.

    Arguments:
      y (array): scores
      g (array): 0/1 labels with at least one positive

    Returns:
      numpy.ndarray: the gradient d.
    """
    y = np.asarray(y,dtype=np.float64)
    g = np.asarray(g,dtype=np.float64)
    if y.shape != g.shape:
        raise InvalidInputError("scores and labels differ in shape")
    if not np.any(g > 0):
        raise InvalidInputError("labels need at least one positive")
    z = np.exp(y - logsumexp(y))
    return g.sum()*z - g

def suppressed_positives(y,g):
    """
    Indices of positive classes with a positive gradient
    """
    d = softmax_ce_gradient_demo(y,g)
    return np.nonzero((np.asarray(g) > 0) & (d > 0.0))[0]

# Gradient checking

def central_difference(f,x,step=1e-4):
    """
    Fourth-order central difference gradient of f at x
    """
    x = np.array(x,dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for k in range(len(flat)):
        saved = flat[k]
        values = []
        for offset in (-2.0,-1.0,1.0,2.0):
            flat[k] = saved + offset*step
            values.append(f(x))
        flat[k] = saved
        out[k] = (values[0] - 8.0*values[1] + 8.0*values[2] -
                  values[3])/(12.0*step)
    return grad

def max_relative_error(analytic,numeric,floor=1e-8):
    """
    Largest |a - n|/max(|a|,|n|) over coordinates with
    |a| of at least ``floor``
    """
    analytic = np.asarray(analytic,dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric,dtype=np.float64).reshape(-1)
    keep = np.abs(analytic) >= floor
    if not np.any(keep):
        return 0.0
    a,n = analytic[keep],numeric[keep]
    return float(np.max(np.abs(a - n)/np.maximum(np.abs(a),np.abs(n))))

def random_circle_instance(rng,n=8,m=8,dim=16,cfg=None):
    """
    Random features and overlaps for a circle loss check

    Instances with a feature distance within 1e-3 of either
    margin are redrawn, so finite differences don't straddle
    the relu kinks.
    """
    if cfg is None:
        cfg = CircleLossConfig()
    while True:
        H_P = rng.normal(0.0,0.2,size=(n,dim))
        H_Q = rng.normal(0.0,0.2,size=(m,dim))
        D,_ = _pair_distances(H_P,H_Q)
        if np.min(np.abs(D - cfg.delta_p)) > 1e-3 and \
           np.min(np.abs(D - cfg.delta_n)) > 1e-3:
            break
    kind = rng.integers(0,3,size=(n,m))
    overlaps = np.where(kind == 0,0.0,
                        np.where(kind == 1,rng.uniform(0.1,1.0,(n,m)),
                                 rng.uniform(0.01,0.09,(n,m))))
    return H_P,H_Q,OverlapLabels(overlaps,cfg.positive_overlap)

def random_matching_instance(rng,n=6,m=5):
    """
    Random augmented scores and ground truth for a point
    matching loss check
    """
    C_bar = rng.normal(0.0,1.0,size=(n+1,m+1))
    k = min(n,m) - 1
    rows = rng.permutation(n)
    cols = rng.permutation(m)
    matches = np.stack([rows[:k],cols[:k]],axis=1)
    return C_bar,matches,rows[k:],cols[k:]

def run_gradcheck(seed=0,trials=20,step=1e-4,tolerance=1e-4,t0=100):
    """
    Check the analytic loss gradients against finite differences

    Runs ``trials`` random instances of each loss and
    reports the largest relative error per loss.

    Returns:
      List: list of GradcheckResult tuples (name,max_error,
        passed).
    """
    rng = np.random.default_rng(seed)
    cfg = CircleLossConfig()
    results = []
    for name,weighted in (('overlap_aware_circle_loss',True),
                          ('vanilla_circle_loss',False)):
        worst = 0.0
        for _ in range(trials):
            H_P,H_Q,labels = random_circle_instance(rng,cfg=cfg)
            loss = overlap_aware_circle_loss if weighted \
                   else vanilla_circle_loss
            result = loss(H_P,H_Q,labels,cfg)
            numeric_P = central_difference(
                lambda x: loss(x,H_Q,labels,cfg).loss,H_P,step)
            numeric_Q = central_difference(
                lambda x: loss(H_P,x,labels,cfg).loss,H_Q,step)
            worst = max(worst,
                        max_relative_error(result.grad_src,numeric_P),
                        max_relative_error(result.grad_dst,numeric_Q))
        results.append(GradcheckResult(name,worst,worst < tolerance))
    worst = 0.0
    for _ in range(trials):
        C_bar,M,I,J = random_matching_instance(rng)
        result = point_matching_loss_from_scores(C_bar,t0,M,I,J)
        numeric = central_difference(
            lambda x: point_matching_loss_from_scores(x,t0,M,I,J).loss,
            C_bar,step)
        worst = max(worst,max_relative_error(result.gradient,numeric))
    results.append(GradcheckResult('point_matching_loss',worst,
                                   worst < tolerance))
    worst = 0.0
    for _ in range(trials):
        y = rng.normal(0.0,2.0,size=10)
        g = (rng.uniform(size=10) < 0.3).astype(np.float64)
        g[rng.integers(0,10)] = 1.0
        d = softmax_ce_gradient_demo(y,g)
        numeric = central_difference(
            lambda x: multilabel_cross_entropy(x,g),y,1e-5)
        worst = max(worst,float(np.max(np.abs(d - numeric))))
    results.append(GradcheckResult('cross_entropy',worst,worst < 1e-6))
    for r in results:
        logger.debug("gradcheck %s: %.3g" % (r.name,r.max_error))
    return results
