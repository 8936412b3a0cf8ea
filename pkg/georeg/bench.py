#!/usr/bin/env python
#
# bench: benchmark harness over registration pairs
"""
Benchmark harness

A benchmark runs the registration pipeline over a set of pairs
with known ground-truth transforms and reports the correspondence
metrics (IR, FMR, PIR) once per pair and the transform metrics
(RR, RRE, RTE and pose time) once per estimator.

Pairs are read from a directory containing one subdirectory per
pair, each holding:

- src.ply: source cloud
- dst.ply: destination cloud
- gt.json: ground truth {"R": [...], "t": [...], "overlap": ...,
  "scene": ...}; the transform maps src onto dst

or are generated on the fly from seeded synthetic scenes.
"""

import os
import logging
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
import numpy as np
from mako.template import Template
from .core import GeoRegError
from .core import InvalidInputError
from .core import StageError
from .core import read_json
from .core import write_json
from .config import RunConfig
from .geometry import RigidTransform
from .fileio import read_ply
from .fileio import write_ply
from .fileio import write_features
from .registration import prepare_correspondences
from .registration import estimate_transform
from .registration import ransac_registration
from .registration import svd_registration
from .registration import feature_nn_correspondences
from .synth import generate_scene
from .synth import handcrafted_features
from .synth import ground_truth_correspondences
from .metrics import inlier_ratio
from .metrics import feature_matching_recall
from .metrics import patch_inlier_ratio
from .metrics import transform_errors
from .metrics import registration_rmse
from .metrics import registered
from .metrics import mean_errors_over_registered

logger = logging.getLogger(__name__)

# Constants
LOW_OVERLAP = 0.3
BASELINE_ESTIMATORS = ('ransac','svd')

DEFAULT_SUMMARY = """\
Benchmark: ${report['num_pairs']} pair(s) in ${report['num_scenes']} scene(s)
Feature matching recall: ${fmt(report['feature_matching_recall'])}
Inlier ratio:            ${fmt(report['inlier_ratio'])}
Patch inlier ratio:      ${fmt(report['patch_inlier_ratio'])}
% if report.get('failed_pairs'):
Failed pairs:            ${report['failed_pairs']}
% endif
% for name in sorted(report['estimators']):
<% est = report['estimators'][name] %>\\
${name}: RR ${fmt(est['registration_recall'])} \\
RRE ${fmt(est['mean_rre_deg'])} deg \\
RTE ${fmt(est['mean_rte_m'])} m \\
pose ${fmt(est['mean_pose_time_s'])} s
% endfor
% if report.get('ransac_lgr_pose_ratio') is not None:
RANSAC/LGR pose time ratio: ${fmt(report['ransac_lgr_pose_ratio'])}
% endif
"""

BenchPair = namedtuple('BenchPair',
                       ('name','scene','src','dst','transform','overlap'))

# Pair handling

def write_pair(dirn,scene,name=None,binary=True,features=None):
    """
    Write a synthetic scene as a benchmark pair directory

    Arguments:
      dirn (str): output directory (created if missing)
      scene (Scene): scene from generate_scene
      name (str): scene label stored in gt.json
      binary (bool): write binary (default) or ASCII PLY
      features (FeatureSpec): if supplied then also write
        src.feat and dst.feat descriptor sidecars
    """
    if not os.path.isdir(dirn):
        os.makedirs(dirn)
    write_ply(os.path.join(dirn,"src.ply"),scene.src,binary=binary)
    write_ply(os.path.join(dirn,"dst.ply"),scene.dst,binary=binary)
    gt = scene.transform.to_dict()
    gt['overlap'] = float(scene.overlap)
    if name is not None:
        gt['scene'] = name
    write_json(os.path.join(dirn,"gt.json"),gt)
    if features is not None:
        for label,cloud in (('src',scene.src),('dst',scene.dst)):
            write_features(os.path.join(dirn,"%s.feat" % label),
                           handcrafted_features(cloud,features).features)

def read_pair(dirn):
    """
    Read a benchmark pair directory

    Returns:
      BenchPair: the pair, named after the directory.
    """
    name = os.path.basename(os.path.normpath(dirn))
    gt = read_json(os.path.join(dirn,"gt.json"))
    return BenchPair(name=name,
                     scene=str(gt.get('scene',name)),
                     src=read_ply(os.path.join(dirn,"src.ply")),
                     dst=read_ply(os.path.join(dirn,"dst.ply")),
                     transform=RigidTransform.from_dict(gt),
                     overlap=gt.get('overlap'))

def collect_pairs(dirn):
    """
    Collect the benchmark pairs under a directory

    ``dirn`` may itself be a pair directory.

    Returns:
      List: BenchPair tuples sorted by name.
    """
    if not os.path.isdir(dirn):
        raise InvalidInputError("%s: not a directory" % dirn)
    if os.path.exists(os.path.join(dirn,"gt.json")):
        return [read_pair(dirn)]
    pairs = []
    for name in sorted(os.listdir(dirn)):
        path = os.path.join(dirn,name)
        if os.path.isdir(path) and \
           os.path.exists(os.path.join(path,"gt.json")):
            pairs.append(read_pair(path))
    if not pairs:
        raise InvalidInputError("%s: no pairs found" % dirn)
    return pairs

def generate_pairs(count,spec,overlap_range=None):
    """
    Generate seeded synthetic benchmark pairs

    Pair i uses seed ``spec.seed + i``; with an overlap
    range the overlap target of each pair is drawn
    uniformly from it using the pair's seed.

    Returns:
      List: BenchPair tuples named 'scene-<seed>'.
    """
    pairs = []
    for i in range(count):
        seed = spec.seed + i
        pair_spec = spec.replace(seed=seed)
        if overlap_range is not None:
            lo,hi = overlap_range
            overlap = np.random.default_rng(seed).uniform(lo,hi)
            pair_spec = pair_spec.replace(overlap=float(overlap))
        scene = generate_scene(pair_spec)
        name = "scene-%04d" % seed
        pairs.append(BenchPair(name=name,scene=name,src=scene.src,
                               dst=scene.dst,transform=scene.transform,
                               overlap=scene.overlap))
    return pairs

# Evaluation

def _failed_stage(ex,default):
    if isinstance(ex,StageError):
        return ex.stage
    return default

def _failed_estimate(stage):
    # Unregistered placeholder for an estimator that didn't run
    return {
        'rre_deg': None,
        'rte_m': None,
        'rmse_m': None,
        'registered': False,
        'registered_threshold': False,
        'inlier_count': 0,
        'low_confidence': True,
        'pose_time_s': None,
        'failed_stage': stage,
    }

def _estimate_record(result,T_gt,gt_points,thresholds,timing):
    rre_value,rte_value = transform_errors(result.transform,T_gt)
    rmse = registration_rmse(result.transform,T_gt,gt_points)
    record = {
        'rre_deg': rre_value,
        'rte_m': rte_value,
        'rmse_m': rmse,
        'registered': bool(rmse < thresholds.rmse_limit),
        'registered_threshold': registered(rre_value,rte_value,
                                           thresholds.rre_limit,
                                           thresholds.rte_limit),
        'inlier_count': result.inlier_count,
        'low_confidence': result.low_confidence,
        'pose_time_s': None,
    }
    if timing:
        record['pose_time_s'] = result.pose_time
    return record

def evaluate_pair(pair,config=None,estimators=('lgr',),weights=None,
                  baseline=False,timing=True):
    """
    Run and evaluate the pipeline on one pair

    The correspondence stages run once; every estimator is
    then applied to the same correspondences. A pipeline
    error doesn't abort the benchmark: the pair is recorded
    with the error and the failed stage, and every estimator
    on it counts as unregistered.

    Arguments:
      pair (BenchPair): the pair to evaluate
      config (RunConfig): configuration (defaults if None)
      estimators (list): estimators to run
      weights (AttentionWeights): stack weights (optional)
      baseline (bool): if True then also run RANSAC and SVD
        on mutual nearest neighbour descriptor matches
      timing (bool): if False then timings are omitted

    Returns:
      Dictionary: the per-pair record.
    """
    if config is None:
        config = RunConfig()
    thresholds = config.evaluation
    names = list(estimators)
    if baseline:
        names.extend(['%s_baseline' % e for e in BASELINE_ESTIMATORS])
    T_gt = pair.transform
    try:
        state = prepare_correspondences(pair.src,pair.dst,config,weights)
        src_points = state.src_dense.points
        dst_points = state.dst_dense.points
        gt = ground_truth_correspondences(state.src_dense,
                                          state.dst_dense,T_gt,
                                          thresholds.matching_radius)
    except GeoRegError as ex:
        stage = _failed_stage(ex,'evaluate')
        logger.warning("%s: not registered, failed in '%s': %s" %
                       (pair.name,stage,ex))
        return {
            'pair': pair.name,
            'scene': pair.scene,
            'overlap': pair.overlap,
            'counts': None,
            'inlier_ratio': 0.0,
            'patch_inlier_ratio': None,
            'model_time_s': None,
            'error': str(ex),
            'failed_stage': stage,
            'estimators': dict([(name,_failed_estimate(stage))
                                for name in names]),
        }
    if len(gt.matches):
        gt_points = src_points[gt.matches[:,0]]
    else:
        logger.warning("%s: no ground-truth matches, RMSE over all "
                       "points" % pair.name)
        gt_points = src_points
    record = {
        'pair': pair.name,
        'scene': pair.scene,
        'overlap': pair.overlap,
        'counts': state.counts(),
        'inlier_ratio': inlier_ratio(state.correspondences,src_points,
                                     dst_points,T_gt,thresholds.tau1),
        'patch_inlier_ratio': patch_inlier_ratio(
            state.superpoint_correspondences,
            state.src_assignment.patches,
            state.dst_assignment.patches,
            src_points,dst_points,T_gt,thresholds.matching_radius),
        'model_time_s': state.model_time if timing else None,
        'error': None,
        'failed_stage': None,
        'estimators': {},
    }
    def run_estimator(name,estimate):
        try:
            result = estimate()
        except GeoRegError as ex:
            stage = _failed_stage(ex,'estimate')
            logger.warning("%s: %s not registered: %s" % (pair.name,
                                                           name,ex))
            record['estimators'][name] = _failed_estimate(stage)
            return
        record['estimators'][name] = _estimate_record(
            result,T_gt,gt_points,thresholds,timing)
    for estimator in estimators:
        run_estimator(estimator,
                      lambda: estimate_transform(state,estimator,config))
    if baseline:
        C = feature_nn_correspondences(state.src_dense.features,
                                       state.dst_dense.features)
        record['baseline_inlier_ratio'] = inlier_ratio(
            C,src_points,dst_points,T_gt,thresholds.tau1)
        run_estimator('ransac_baseline',
                      lambda: ransac_registration(
                          C,src_points,dst_points,
                          iterations=config.ransac.iterations,
                          tau_a=config.ransac.tau_a,
                          seed=config.seed,
                          batch_size=config.ransac.batch_size))
        run_estimator('svd_baseline',
                      lambda: svd_registration(C,src_points,dst_points,
                                               config.lgr.tau_a))
    logger.debug("%s: IR %.3f PIR %.3f" % (pair.name,
                                           record['inlier_ratio'],
                                           record['patch_inlier_ratio']))
    return record

def _mean(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    return float(np.mean(values))

def _summarise(records,thresholds):
    # Aggregate metrics over a group of pair records
    irs = [r['inlier_ratio'] for r in records]
    summary = {
        'num_pairs': len(records),
        'failed_pairs': len([r for r in records if r.get('error')]),
        'inlier_ratio': _mean(irs),
        'patch_inlier_ratio': _mean([r['patch_inlier_ratio']
                                     for r in records]),
        'feature_matching_recall': feature_matching_recall(
            irs,thresholds.tau2),
        'mean_model_time_s': _mean([r['model_time_s'] for r in records]),
        'estimators': {},
    }
    names = sorted(set([name for r in records
                        for name in r['estimators']]))
    for name in names:
        runs = [r['estimators'][name] for r in records
                if name in r['estimators']]
        rres = [x['rre_deg'] for x in runs]
        rtes = [x['rte_m'] for x in runs]
        successes = [x['registered'] for x in runs]
        mean_rre,mean_rte = mean_errors_over_registered(rres,rtes,
                                                        successes)
        summary['estimators'][name] = {
            'registration_recall': float(np.mean(successes)),
            'registration_recall_threshold': float(np.mean(
                [x['registered_threshold'] for x in runs])),
            'mean_rre_deg': mean_rre,
            'mean_rte_m': mean_rte,
            'mean_rmse_m': _mean([x['rmse_m'] for x in runs]),
            'mean_pose_time_s': _mean([x['pose_time_s'] for x in runs]),
        }
    return summary

def aggregate(records,thresholds):
    """
    Aggregate per-pair records into a benchmark report

    Besides the metrics over all pairs the report has
    per-scene summaries with their mean ('scene_mean'),
    summaries for low (<30%) and high overlap pairs and
    the RANSAC/LGR pose time ratio when both ran with
    timing.

    Returns:
      Dictionary: the report (without the per-pair records).
    """
    if not records:
        raise InvalidInputError("no pairs to aggregate")
    report = _summarise(records,thresholds)
    scenes = {}
    for r in records:
        scenes.setdefault(r['scene'],[]).append(r)
    report['num_scenes'] = len(scenes)
    report['scenes'] = dict([(name,_summarise(group,thresholds))
                             for name,group in scenes.items()])
    report['scene_mean'] = {
        'inlier_ratio': _mean([s['inlier_ratio']
                               for s in report['scenes'].values()]),
        'feature_matching_recall': _mean(
            [s['feature_matching_recall']
             for s in report['scenes'].values()]),
        'registration_recall': dict([
            (name,_mean([s['estimators'][name]['registration_recall']
                         for s in report['scenes'].values()
                         if name in s['estimators']]))
            for name in report['estimators']]),
    }
    bins = {}
    for r in records:
        if r['overlap'] is None:
            continue
        label = 'low' if r['overlap'] < LOW_OVERLAP else 'high'
        bins.setdefault(label,[]).append(r)
    report['overlap_bins'] = dict([(label,_summarise(group,thresholds))
                                   for label,group in bins.items()])
    ratio = None
    estimators = report['estimators']
    if 'lgr' in estimators and 'ransac' in estimators:
        lgr_time = estimators['lgr']['mean_pose_time_s']
        ransac_time = estimators['ransac']['mean_pose_time_s']
        if lgr_time and ransac_time is not None:
            ratio = ransac_time/lgr_time
    report['ransac_lgr_pose_ratio'] = ratio
    return report

def bench_threads():
    """
    Number of benchmark workers from GEOREG_THREADS

    Defaults to 1; invalid values give a warning and 1.
    """
    value = os.environ.get('GEOREG_THREADS')
    if value is None:
        return 1
    try:
        threads = int(value)
        if threads < 1:
            raise ValueError(value)
        return threads
    except ValueError:
        logger.warning("GEOREG_THREADS: invalid value '%s', using 1" %
                       value)
        return 1

def run_bench(pairs,config=None,estimators=('lgr',),weights=None,
              baseline=False,timing=True,threads=None):
    """
    Run a benchmark over a list of pairs

    A pair whose pipeline fails is recorded as unregistered
    rather than stopping the run (see evaluate_pair).

    Pairs are processed by a pool of ``threads`` workers
    (default from GEOREG_THREADS); records are merged in
    pair name order so the report doesn't depend on the
    scheduling.

    Returns:
      Dictionary: report with 'config', 'pairs' (per-pair
        records) and 'summary' (aggregates).
    """
    if config is None:
        config = RunConfig()
    if not pairs:
        raise InvalidInputError("no pairs to benchmark")
    if threads is None:
        threads = bench_threads()
    def run(pair):
        return evaluate_pair(pair,config,estimators,weights,
                             baseline,timing)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run,pairs))
    else:
        records = [run(pair) for pair in pairs]
    records = sorted(records,key=lambda r: r['pair'])
    return {
        'config': config.to_dict(),
        'estimators': list(estimators),
        'pairs': records,
        'summary': aggregate(records,config.evaluation),
    }

def render_summary(summary,template=None):
    """
    Render the text summary of a benchmark report

    Arguments:
      summary (dict): the 'summary' part of a report
      template (str): Mako template file (uses the built-in
        summary if None). The template is supplied with
        'report' (the summary) and 'fmt' (formats numbers
        and None values).
    """
    def fmt(value):
        if value is None:
            return '-'
        return "%.4g" % value
    if template:
        return Template(filename=template).render(report=summary,fmt=fmt)
    return Template(text=DEFAULT_SUMMARY).render(report=summary,fmt=fmt)
