#!/usr/bin/env python
#
# metrics: registration evaluation metrics
"""
Evaluation metrics for point cloud registration

All thresholds are strict: a residual exactly at the limit
counts as a failure.
"""

import logging
import numpy as np
from scipy.spatial import cKDTree
from .core import InvalidInputError
from .geometry import RigidTransform

logger = logging.getLogger(__name__)

# Correspondence metrics

def correspondence_residuals(C,src_points,dst_points,T_gt):
    """
    Residuals |T_gt(p) - q| of a correspondence set
    """
    p,q = C.points(src_points,dst_points)
    return np.linalg.norm(T_gt.apply(p) - q,axis=1)

def inlier_ratio(C,src_points,dst_points,T_gt,tau1=0.1):
    """
    Fraction of correspondences with residual below tau1

    Arguments:
      C (PointCorrespondences): putative correspondences
      src_points, dst_points (array): dense coordinates the
        correspondence indices refer to
      T_gt (RigidTransform): ground-truth transform
      tau1 (float): inlier distance

    Returns:
      Float: the inlier ratio (0 for an empty set, with
        a warning).
    """
    if len(C) == 0:
        logger.warning("inlier ratio: no correspondences")
        return 0.0
    residuals = correspondence_residuals(C,src_points,dst_points,T_gt)
    return float(np.count_nonzero(residuals < tau1))/len(C)

def feature_matching_recall(inlier_ratios,tau2=0.05):
    """
    Fraction of pairs with inlier ratio above tau2
    """
    inlier_ratios = np.asarray(inlier_ratios,dtype=np.float64)
    if len(inlier_ratios) == 0:
        raise InvalidInputError("no inlier ratios")
    return float(np.mean(inlier_ratios > tau2))

def patch_inlier_ratio(superpoint_correspondences,patches_P,patches_Q,
                       src_points,dst_points,T_gt,tau=0.05):
    """
    Fraction of superpoint correspondences whose patches overlap

    A pair of patches overlaps if some point of the source
    patch lies within tau of some point of the destination
    patch after applying the ground-truth transform.

    Arguments:
      superpoint_correspondences (SuperpointCorrespondences):
        superpoint matches indexing into the patch lists
      patches_P, patches_Q (list): dense point index arrays
      src_points, dst_points (array): dense coordinates
      T_gt (RigidTransform): ground-truth transform
      tau (float): matching radius

    Returns:
      Float: the patch inlier ratio (0 for no matches).
    """
    sc = superpoint_correspondences
    if len(sc) == 0:
        logger.warning("patch inlier ratio: no superpoint matches")
        return 0.0
    src_points = T_gt.apply(src_points)
    dst_points = np.asarray(dst_points,dtype=np.float64)
    inliers = 0
    for i,j in zip(sc.src,sc.dst):
        tree = cKDTree(dst_points[patches_Q[j]])
        d,_ = tree.query(src_points[patches_P[i]],k=1)
        if np.any(d < tau):
            inliers += 1
    return float(inliers)/len(sc)

# Transform metrics

def rre(R_est,R_gt):
    """
    Relative rotation error in degrees

    arccos((trace(R_est^T R_gt) - 1)/2), with the argument
    clipped to [-1,1].
    """
    R_est = np.asarray(R_est,dtype=np.float64)
    R_gt = np.asarray(R_gt,dtype=np.float64)
    # trace(A^T B) without forming the product
    cos_angle = (np.sum(R_est*R_gt) - 1.0)/2.0
    return float(np.degrees(np.arccos(np.clip(cos_angle,-1.0,1.0))))

def rte(t_est,t_gt):
    """
    Relative translation error (Euclidean distance)
    """
    return float(np.linalg.norm(np.asarray(t_est,dtype=np.float64) -
                                 np.asarray(t_gt,dtype=np.float64)))

def transform_errors(T_est,T_gt):
    """
    Return (RRE in degrees,RTE) between two transforms
    """
    return (rre(T_est.rotation,T_gt.rotation),
            rte(T_est.translation,T_gt.translation))

def registration_rmse(T_est,T_gt,gt_points):
    """
    RMSE of ground-truth source points under both transforms

    sqrt(mean |T_est(p) - T_gt(p)|^2) over the source points
    of the ground-truth correspondences.
    """
    gt_points = np.asarray(gt_points,dtype=np.float64).reshape(-1,3)
    if len(gt_points) == 0:
        raise InvalidInputError("no ground-truth correspondences")
    diff = T_est.apply(gt_points) - T_gt.apply(gt_points)
    return float(np.sqrt(np.mean(np.sum(diff**2,axis=1))))

def _check_aligned(*lists):
    lengths = set([len(x) for x in lists])
    if len(lengths) != 1:
        raise InvalidInputError("metric inputs differ in length: %s" %
                                ','.join([str(len(x)) for x in lists]))
    if lengths == set([0]):
        raise InvalidInputError("no pairs to evaluate")

def registration_recall_rmse(estimates,gt_transforms,gt_point_sets,
                             rmse_limit=0.2):
    """
    Fraction of pairs with RMSE below the limit

    Arguments:
      estimates (list): estimated RigidTransforms
      gt_transforms (list): ground-truth RigidTransforms
      gt_point_sets (list): source points of the ground-truth
        correspondences of each pair
      rmse_limit (float): RMSE limit

    Returns:
      Float: the registration recall.
    """
    _check_aligned(estimates,gt_transforms,gt_point_sets)
    passed = [registration_rmse(T,T_gt,points) < rmse_limit
              for T,T_gt,points in zip(estimates,gt_transforms,
                                       gt_point_sets)]
    return float(np.mean(passed))

def registered(rre_value,rte_value,rre_limit=5.0,rte_limit=2.0):
    return rre_value < rre_limit and rte_value < rte_limit

def registration_recall_threshold(rres,rtes,rre_limit=5.0,rte_limit=2.0):
    """
    Fraction of pairs with RRE and RTE both below their limits
    """
    _check_aligned(rres,rtes)
    return float(np.mean([registered(r,t,rre_limit,rte_limit)
                          for r,t in zip(rres,rtes)]))

def mean_errors_over_registered(rres,rtes,successes):
    """
    Mean RRE and RTE over successfully registered pairs

    Returns:
      Tuple: (mean RRE,mean RTE), or (None,None) if no pair
        was registered.
    """
    _check_aligned(rres,rtes,successes)
    keep = np.asarray(successes,dtype=bool)
    if not np.any(keep):
        logger.warning("no successfully registered pairs")
        return (None,None)
    return (float(np.mean(np.asarray(rres)[keep])),
            float(np.mean(np.asarray(rtes)[keep])))

# Reports

def evaluate_predictions(predictions,ground_truth,thresholds):
    """
    Compare predicted transforms against ground truth

    Arguments:
      predictions (dict): pair id -> RigidTransform
      ground_truth (dict): pair id -> RigidTransform
      thresholds (EvalThresholds): metric limits

    Returns:
      Dictionary: 'pairs' (per pair RRE, RTE and success,
        sorted by pair id) and the aggregate registration
        recall and mean errors.
    """
    missing = sorted(set(ground_truth) - set(predictions))
    if missing:
        raise InvalidInputError("no prediction for pair(s): %s" %
                                ', '.join(missing))
    pairs = []
    for name in sorted(ground_truth):
        r,t = transform_errors(predictions[name],ground_truth[name])
        pairs.append({
            'pair': name,
            'rre_deg': r,
            'rte_m': t,
            'registered': registered(r,t,
                                     thresholds.rre_limit,
                                     thresholds.rte_limit),
        })
    rres = [p['rre_deg'] for p in pairs]
    rtes = [p['rte_m'] for p in pairs]
    successes = [p['registered'] for p in pairs]
    mean_rre,mean_rte = mean_errors_over_registered(rres,rtes,successes)
    return {
        'pairs': pairs,
        'registration_recall': float(np.mean(successes)),
        'mean_rre_deg': mean_rre,
        'mean_rte_m': mean_rte,
    }

def transforms_from_json(data):
    """
    Read a pair id -> transform mapping from JSON data

    Accepts either a single transform ({"R": ..., "t": ...},
    keyed as pair 'pair') or a mapping of pair ids to
    transforms.
    """
    if not isinstance(data,dict):
        raise InvalidInputError("expected a JSON object of transforms")
    if 'R' in data and 't' in data:
        return { 'pair': RigidTransform.from_dict(data) }
    return dict([(name,RigidTransform.from_dict(value))
                 for name,value in data.items()])
