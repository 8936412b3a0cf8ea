#!/usr/bin/env python
#
# registration: transform estimation and the registration pipeline
"""
Transform estimation from point correspondences

Three estimators are provided:

- 'lgr': local-to-global registration. Every patch with enough
  correspondences gives a candidate transform by weighted SVD;
  the candidate with the most inliers over all correspondences
  is kept and then refined on its inliers. No randomness is
  involved.
- 'ransac': 3-point RANSAC with a final refit on the inliers of
  the best hypothesis.
- 'svd': a single weighted SVD over all correspondences.

``register_pair`` runs the full pipeline on two point clouds.
"""

import time
import logging
import dataclasses
from contextlib import contextmanager
from dataclasses import dataclass
from dataclasses import field
from typing import Optional
import numpy as np
from scipy.spatial import cKDTree
from .core import GeoRegError
from .core import ConfigError
from .core import DegenerateInputError
from .core import InvalidInputError
from .core import StageError
from .config import ESTIMATORS
from .config import RunConfig
from .geometry import RigidTransform
from .geometry import PatchAssignment
from .geometry import PointCloud
from .geometry import build_pyramid
from .geometry import point_to_node_grouping
from .geometry import weighted_svd_transform
from .attention import AttentionWeights
from .attention import transformer_stack
from .superpoints import SuperpointCorrespondences
from .superpoints import match_superpoints
from .pointmatch import PointCorrespondences
from .pointmatch import match_points
from .synth import handcrafted_features
from .synth import superpoint_features

logger = logging.getLogger(__name__)

# Constants
SCORING_CHUNK = 64
COLLINEAR_AREA = 1e-9

# Classes

@dataclass(frozen=True,eq=False)
class RegistrationResult:
    """
    Result of a transform estimation

    Attributes:
      transform (RigidTransform): estimated transform
      inlier_count (int): correspondences within the
        acceptance radius under the final transform
      candidate_count (int): number of candidate transforms
        (LGR) or hypotheses (RANSAC) evaluated
      pose_time (float): time spent estimating (seconds)
      estimator (str): name of the estimator
      low_confidence (bool): True if the inlier count is
        too low to trust the result
      model_time (float): time spent extracting the
        correspondences (seconds, pipeline runs only)
      metadata (dict): estimator specific information
    """
    transform: RigidTransform
    inlier_count: int
    candidate_count: int = 0
    pose_time: float = 0.0
    estimator: str = 'lgr'
    low_confidence: bool = False
    model_time: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def replace(self,**values):
        return dataclasses.replace(self,**values)

    def to_dict(self,timing=True):
        """
        Return the result as a dictionary for reports

        Arguments:
          timing (bool): if False then timings are
            reported as None
        """
        data = self.transform.to_dict()
        data.update({
            'estimator': self.estimator,
            'inlier_count': int(self.inlier_count),
            'candidate_count': int(self.candidate_count),
            'low_confidence': bool(self.low_confidence),
            'metadata': dict(self.metadata),
            'timings': None,
        })
        if timing:
            model = self.model_time
            data['timings'] = {
                'model_s': model,
                'pose_s': self.pose_time,
                'total_s': (model or 0.0) + self.pose_time,
            }
        return data

@dataclass(eq=False)
class PipelineState:
    """
    Intermediate results of the registration pipeline
    """
    src_dense: PointCloud
    dst_dense: PointCloud
    src_superpoints: PointCloud
    dst_superpoints: PointCloud
    src_assignment: PatchAssignment
    dst_assignment: PatchAssignment
    src_hybrid: np.ndarray
    dst_hybrid: np.ndarray
    superpoint_correspondences: SuperpointCorrespondences
    per_patch: list
    correspondences: PointCorrespondences
    model_time: float
    input_sizes: tuple = (0,0)

    def counts(self):
        """
        Sizes of each stage's output
        """
        return {
            'src_points': self.input_sizes[0],
            'dst_points': self.input_sizes[1],
            'src_dense': len(self.src_dense),
            'dst_dense': len(self.dst_dense),
            'src_superpoints': len(self.src_superpoints),
            'dst_superpoints': len(self.dst_superpoints),
            'superpoint_correspondences':
            len(self.superpoint_correspondences),
            'point_correspondences': len(self.correspondences),
        }

# Inlier counting

def count_inliers(T,C,src_points,dst_points,tau_a):
    """
    Number of correspondences with |T(p) - q| < tau_a
    """
    p,q = C.points(src_points,dst_points)
    return int(np.count_nonzero(
        np.linalg.norm(T.apply(p) - q,axis=1) < tau_a))

def _batch_inlier_counts(rotations,translations,p,q,tau_a):
    # Inlier counts for a batch of transforms
    aligned = np.matmul(p[None,:,:],np.transpose(rotations,(0,2,1))) + \
              translations[:,None,:]
    return np.count_nonzero(np.linalg.norm(aligned - q[None,:,:],axis=2)
                            < tau_a,axis=1)

def score_candidates(candidates,C,src_points,dst_points,tau_a):
    """
    Inlier counts for a list of candidate transforms

    Returns:
      numpy.ndarray: one count per candidate.
    """
    p,q = C.points(src_points,dst_points)
    counts = []
    for start in range(0,len(candidates),SCORING_CHUNK):
        chunk = candidates[start:start+SCORING_CHUNK]
        rotations = np.stack([T.rotation for T in chunk])
        translations = np.stack([T.translation for T in chunk])
        counts.append(_batch_inlier_counts(rotations,translations,
                                           p,q,tau_a))
    if not counts:
        return np.zeros(0,dtype=np.int64)
    return np.concatenate(counts)

# Local-to-global registration

def lgr_local_phase(per_patch,src_points,dst_points,cfg):
    """
    Candidate transforms from each patch's correspondences

    Patches with fewer than ``cfg.min_local_matches``
    correspondences, or whose correspondences are
    degenerate, are skipped.

    Arguments:
      per_patch (list): PointCorrespondences for each
        superpoint correspondence
      src_points, dst_points (array): dense coordinates
      cfg (LgrConfig): registration settings

    Returns:
      List: list of RigidTransform candidates.
    """
    candidates = []
    skipped = 0
    for C in per_patch:
        if len(C) < cfg.min_local_matches:
            continue
        p,q = C.points(src_points,dst_points)
        try:
            candidates.append(weighted_svd_transform(p,q,C.confidence))
        except DegenerateInputError as ex:
            logger.debug("skipping patch: %s" % ex)
            skipped += 1
    if skipped:
        logger.warning("skipped %d degenerate patches" % skipped)
    if not candidates:
        raise DegenerateInputError("no transformation candidates")
    return candidates

def lgr_global_select(candidates,C,src_points,dst_points,tau_a):
    """
    Select the candidate with the most inliers

    Inliers are counted uniformly over all correspondences;
    ties go to the candidate with the lower index.

    Returns:
      RigidTransform: the selected candidate.
    """
    if not candidates:
        raise DegenerateInputError("no candidates to select from")
    counts = score_candidates(candidates,C,src_points,dst_points,tau_a)
    best = int(np.argmax(counts))
    logger.debug("selected candidate %d of %d (%d inliers)" %
                 (best,len(candidates),counts[best]))
    return candidates[best]

def lgr_refine(T,C,src_points,dst_points,cfg):
    """
    Iteratively refit the transform on its inliers

    Each round selects the correspondences within
    ``cfg.tau_a`` and solves weighted SVD over them using
    their original confidences. Refinement stops early if
    fewer than 3 inliers remain or the inlier set doesn't
    change.

    Returns:
      RegistrationResult: refined transform and final
        inlier count.
    """
    p,q = C.points(src_points,dst_points)
    def inliers_of(transform):
        return np.linalg.norm(transform.apply(p) - q,axis=1) < cfg.tau_a
    inliers = inliers_of(T)
    rounds = 0
    for _ in range(cfg.refinement_iterations):
        if np.count_nonzero(inliers) < 3:
            break
        try:
            refined = weighted_svd_transform(p[inliers],q[inliers],
                                             C.confidence[inliers])
        except DegenerateInputError as ex:
            logger.debug("refinement stopped: %s" % ex)
            break
        rounds += 1
        new_inliers = inliers_of(refined)
        if np.count_nonzero(new_inliers) < 3:
            break
        T = refined
        if np.array_equal(new_inliers,inliers):
            break
        inliers = new_inliers
    return RegistrationResult(transform=T,
                              inlier_count=int(np.count_nonzero(
                                  inliers_of(T))),
                              metadata={'refinement_rounds': rounds})

def lgr_registration(per_patch,C,src_points,dst_points,cfg):
    """
    Local-to-global registration

    If no patch gives a candidate, a single weighted SVD
    over all correspondences is used as the candidate
    instead.

    Returns:
      RegistrationResult: the estimate (with pose time).
    """
    start = time.perf_counter()
    try:
        candidates = lgr_local_phase(per_patch,src_points,dst_points,cfg)
    except DegenerateInputError as ex:
        logger.warning("%s: falling back to SVD over all %d "
                       "correspondences" % (ex,len(C)))
        p,q = C.points(src_points,dst_points)
        candidates = [weighted_svd_transform(p,q,C.confidence)]
    T = lgr_global_select(candidates,C,src_points,dst_points,cfg.tau_a)
    result = lgr_refine(T,C,src_points,dst_points,cfg)
    return result.replace(candidate_count=len(candidates),
                          pose_time=time.perf_counter() - start,
                          estimator='lgr')

# RANSAC

def _batched_kabsch(p,q):
    # Least squares transforms for a batch of point triples
    p_centre = p.mean(axis=1)
    q_centre = q.mean(axis=1)
    H = np.einsum('bni,bnj->bij',p - p_centre[:,None,:],
                  q - q_centre[:,None,:])
    U,S,Vt = np.linalg.svd(H)
    V = np.transpose(Vt,(0,2,1))
    Ut = np.transpose(U,(0,2,1))
    sign = np.where(np.linalg.det(V @ Ut) < 0.0,-1.0,1.0)
    D = np.tile(np.eye(3),(len(p),1,1))
    D[:,2,2] = sign
    R = V @ D @ Ut
    t = q_centre - np.einsum('bij,bj->bi',R,p_centre)
    return R,t

def _triangle_areas(x):
    return 0.5*np.linalg.norm(np.cross(x[:,1] - x[:,0],x[:,2] - x[:,0]),
                              axis=1)

def ransac_registration(C,src_points,dst_points,iterations=50000,
                        tau_a=0.1,seed=42,batch_size=200):
    """
    RANSAC over 3-point samples

    Hypotheses are generated in batches from a seeded
    generator; samples that are collinear in either cloud
    are rejected. The hypothesis with the most inliers
    (earliest on ties) is refit on its inliers.

    Arguments:
      C (PointCorrespondences): correspondences
      src_points, dst_points (array): dense coordinates
      iterations (int): number of hypotheses
      tau_a (float): inlier radius
      seed (int): random seed
      batch_size (int): hypotheses per batch

    Returns:
      RegistrationResult: the estimate.
    """
    if len(C) < 3:
        raise DegenerateInputError("RANSAC needs at least 3 "
                                   "correspondences (got %d)" % len(C))
    if iterations < 1:
        raise ConfigError("RANSAC iterations must be at least 1")
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    p,q = C.points(src_points,dst_points)
    best_count = -1
    best = None
    rejected = 0
    for offset in range(0,iterations,batch_size):
        size = min(batch_size,iterations - offset)
        samples = rng.integers(0,len(C),size=(size,3))
        sp = p[samples]
        sq = q[samples]
        valid = (_triangle_areas(sp) > COLLINEAR_AREA) & \
                (_triangle_areas(sq) > COLLINEAR_AREA)
        rejected += size - int(np.count_nonzero(valid))
        if not np.any(valid):
            continue
        R,t = _batched_kabsch(sp[valid],sq[valid])
        counts = _batch_inlier_counts(R,t,p,q,tau_a)
        index = int(np.argmax(counts))
        if counts[index] > best_count:
            best_count = int(counts[index])
            best = RigidTransform(R[index],t[index])
    if best is None:
        raise DegenerateInputError("all RANSAC samples were degenerate")
    inliers = np.linalg.norm(best.apply(p) - q,axis=1) < tau_a
    T = best
    try:
        T = weighted_svd_transform(p[inliers],q[inliers])
    except DegenerateInputError as ex:
        logger.debug("RANSAC refit skipped: %s" % ex)
    if rejected:
        logger.debug("RANSAC rejected %d degenerate samples" % rejected)
    return RegistrationResult(
        transform=T,
        inlier_count=count_inliers(T,C,src_points,dst_points,tau_a),
        candidate_count=iterations,
        pose_time=time.perf_counter() - start,
        estimator='ransac',
        metadata={'iterations': iterations,'seed': seed})

# Plain SVD

def svd_registration(C,src_points,dst_points,tau_a=0.1):
    """
    Weighted SVD over all correspondences
    """
    start = time.perf_counter()
    p,q = C.points(src_points,dst_points)
    T = weighted_svd_transform(p,q,C.confidence)
    return RegistrationResult(
        transform=T,
        inlier_count=count_inliers(T,C,src_points,dst_points,tau_a),
        candidate_count=1,
        pose_time=time.perf_counter() - start,
        estimator='svd')

def feature_nn_correspondences(F_P,F_Q,top=5000):
    """
    Mutual nearest neighbours in descriptor space

    Keeps at most ``top`` mutual pairs with the smallest
    descriptor distances; the confidence of a pair is
    exp(-|f_P - f_Q|^2) on unit-normalised descriptors.

    Returns:
      PointCorrespondences: pairs sorted by distance.
    """
    F_P = np.asarray(F_P,dtype=np.float64)
    F_Q = np.asarray(F_Q,dtype=np.float64)
    F_P = F_P/np.maximum(np.linalg.norm(F_P,axis=1,keepdims=True),1e-12)
    F_Q = F_Q/np.maximum(np.linalg.norm(F_Q,axis=1,keepdims=True),1e-12)
    if len(F_P) == 0 or len(F_Q) == 0:
        return PointCorrespondences.empty()
    dist,forward = cKDTree(F_Q).query(F_P,k=1)
    _,backward = cKDTree(F_P).query(F_Q,k=1)
    src = np.nonzero(backward[forward] == np.arange(len(F_P)))[0]
    dst = forward[src]
    order = np.lexsort((src,dist[src]))[:top]
    src,dst = src[order],dst[order]
    return PointCorrespondences(src,dst,np.exp(-dist[src]**2))

# Pipeline

@contextmanager
def _stage(name):
    # Tag errors raised inside a pipeline stage
    try:
        yield
    except StageError:
        raise
    except (GeoRegError,ArithmeticError,np.linalg.LinAlgError) as ex:
        raise StageError(name,ex) from ex

def prepare_correspondences(src,dst,config=None,weights=None):
    """
    Run the correspondence stages of the pipeline

    Stages: downsample, group, features, stack, superpoint
    matching and point matching. If the input clouds carry
    features they are averaged through the downsampling
    and used as the dense descriptors; otherwise the
    handcrafted descriptors are computed.

    Arguments:
      src, dst (PointCloud): the two clouds
      config (RunConfig): configuration (defaults if None)
      weights (AttentionWeights): stack weights (seeded
        from the configuration if None)

    Returns:
      PipelineState: intermediate results.
    """
    if config is None:
        config = RunConfig()
    start = time.perf_counter()
    with _stage('downsample'):
        if len(src) == 0 or len(dst) == 0:
            raise InvalidInputError("point clouds must not be empty")
        levels = []
        for cloud in (src,dst):
            pyramid = build_pyramid(cloud,config.sampling.voxel_size,
                                    config.sampling.num_stages)
            levels.append((pyramid[1],pyramid[-1]))
        (dense_P,coarse_P),(dense_Q,coarse_Q) = levels
    with _stage('group'):
        assign_P = point_to_node_grouping(dense_P,coarse_P)
        assign_Q = point_to_node_grouping(dense_Q,coarse_Q)
        coarse_P = assign_P.select(coarse_P)
        coarse_Q = assign_Q.select(coarse_Q)
        logger.debug("superpoints: %d / %d" % (len(coarse_P),
                                               len(coarse_Q)))
    with _stage('features'):
        if dense_P.features is None:
            dense_P = handcrafted_features(dense_P,config.features)
        if dense_Q.features is None:
            dense_Q = handcrafted_features(dense_Q,config.features)
        if dense_P.feature_dim != dense_Q.feature_dim:
            raise InvalidInputError("source and destination features "
                                    "differ in width (%d vs %d)" %
                                    (dense_P.feature_dim,
                                     dense_Q.feature_dim))
        coarse_P = superpoint_features(dense_P,assign_P,coarse_P,
                                       config.features)
        coarse_Q = superpoint_features(dense_Q,assign_Q,coarse_Q,
                                       config.features)
    with _stage('stack'):
        if weights is None:
            weights = AttentionWeights.from_config(config)
        H_P,H_Q = transformer_stack(coarse_P.features,coarse_Q.features,
                                    coarse_P,coarse_Q,weights,
                                    config.embedding,
                                    min(config.attention.num_layers,
                                        weights.num_layers),
                                    config.attention)
    with _stage('superpoint_match'):
        superpoint_correspondences = match_superpoints(
            H_P,H_Q,config.matching.num_correspondences,
            config.matching.dual_normalization)
    with _stage('point_match'):
        per_patch,correspondences = match_points(
            superpoint_correspondences,
            assign_P.patches,assign_Q.patches,
            dense_P.features,dense_Q.features,
            config.matching)
    return PipelineState(src_dense=dense_P,
                         dst_dense=dense_Q,
                         src_superpoints=coarse_P,
                         dst_superpoints=coarse_Q,
                         src_assignment=assign_P,
                         dst_assignment=assign_Q,
                         src_hybrid=H_P,
                         dst_hybrid=H_Q,
                         superpoint_correspondences=
                         superpoint_correspondences,
                         per_patch=per_patch,
                         correspondences=correspondences,
                         model_time=time.perf_counter() - start,
                         input_sizes=(len(src),len(dst)))

def estimate_transform(state,estimator='lgr',config=None,
                       iterations=None,seed=None):
    """
    Run the pose estimation stage on prepared correspondences

    Arguments:
      state (PipelineState): output of prepare_correspondences
      estimator (str): 'lgr', 'ransac' or 'svd'
      config (RunConfig): configuration (defaults if None)
      iterations (int): overrides the RANSAC iterations
      seed (int): overrides the RANSAC seed

    Returns:
      RegistrationResult: the estimate, flagged low
        confidence if it has fewer than 3 x min_local_matches
        inliers.
    """
    if config is None:
        config = RunConfig()
    if estimator not in ESTIMATORS:
        raise ConfigError("unknown estimator '%s' (expected one of %s)" %
                          (estimator,', '.join(ESTIMATORS)))
    C = state.correspondences
    src_points = state.src_dense.points
    dst_points = state.dst_dense.points
    with _stage('estimate'):
        if estimator == 'lgr':
            result = lgr_registration(state.per_patch,C,src_points,
                                      dst_points,config.lgr)
        elif estimator == 'ransac':
            result = ransac_registration(
                C,src_points,dst_points,
                iterations=(iterations or config.ransac.iterations),
                tau_a=config.ransac.tau_a,
                seed=(config.seed if seed is None else seed),
                batch_size=config.ransac.batch_size)
        else:
            result = svd_registration(C,src_points,dst_points,
                                      config.lgr.tau_a)
    low_confidence = result.inlier_count < 3*config.lgr.min_local_matches
    if low_confidence:
        logger.warning("low confidence registration: %d inliers" %
                       result.inlier_count)
    return result.replace(low_confidence=low_confidence,
                          model_time=state.model_time)

def register_pair(src,dst,config=None,estimator='lgr',weights=None,
                  return_state=False):
    """
    Register two point clouds

    Runs downsample, group, features, stack, superpoint
    matching, point matching and pose estimation. Errors
    from any stage are raised as StageError tagged with the
    stage name.

    Arguments:
      src, dst (PointCloud): the clouds (the result maps
        src onto dst)
      config (RunConfig): configuration (defaults if None)
      estimator (str): 'lgr' (default), 'ransac' or 'svd'
      weights (AttentionWeights): stack weights (optional)
      return_state (bool): if True then also return the
        PipelineState

    Returns:
      RegistrationResult: the estimate (or a tuple of
        (result,state) if return_state is True).
    """
    state = prepare_correspondences(src,dst,config,weights)
    result = estimate_transform(state,estimator,config)
    if return_state:
        return result,state
    return result
