#!/usr/bin/env python
#
# cli: functions for building command utilities
import os
import sys
import logging
import click
from georeg import get_version
from .core import GeoRegError
from .core import ConfigError
from .core import FormatError
from .core import InvalidInputError
from .core import Reporter
from .core import dumps_json
from .core import read_json
from .core import write_json
from .config import SceneSpec
from .config import load_config
from .geometry import RigidTransform
from .fileio import read_ply
from .fileio import read_features
from .fileio import write_correspondences
from .attention import AttentionWeights
from .registration import prepare_correspondences
from .registration import estimate_transform
from .synth import generate_scene
from .synth import ground_truth_correspondences
from .metrics import inlier_ratio
from .metrics import transform_errors
from .metrics import registration_rmse
from .metrics import evaluate_predictions
from .metrics import transforms_from_json
from .losses import run_gradcheck
from . import bench
from . import options

# Initialise logging
logger = logging.getLogger(__name__)

# Exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

def handle_debug(debug=True):
    """
    Turn on debugging output from logging

    Arguments:
      debug (bool): if True then turn on debugging output

    """
    if debug:
        level = logging.DEBUG
    else:
        level = logging.WARNING
    logging.getLogger("georeg").setLevel(level)

def handle_suppress_warnings(suppress_warnings=True):
    """
    Suppress warning messages output from logging

    Arguments:
      suppress_warnings (bool): if True then turn off
        warning messages

    """
    if suppress_warnings:
        logging.getLogger("georeg").setLevel(logging.ERROR)

def handle_config(config_file=None,preset='indoor',seed=None):
    """
    Load the run configuration, exiting on errors

    Returns:
      RunConfig: the resolved configuration.
    """
    try:
        return load_config(config_file,preset=preset,seed=seed)
    except (ConfigError,FormatError,OSError) as ex:
        logger.critical("Bad configuration: %s" % ex)
        sys.exit(EXIT_USAGE)

def output_report(report,report_file=None):
    """
    Write a JSON report to a file or to stdout
    """
    if report_file:
        write_json(report_file,report)
    else:
        click.echo(dumps_json(report),nl=False)

def read_cloud(path,features_file=None):
    """
    Read a PLY cloud with an optional feature sidecar
    """
    cloud = read_ply(path)
    if features_file:
        features = read_features(features_file)
        if len(features) != len(cloud):
            raise FormatError("%s: %d feature rows for %d points" %
                              (features_file,len(features),len(cloud)))
        cloud = cloud.with_features(features)
    return cloud

class Context:
    """
    Provide context for georeg command
    """
    def __init__(self):
        self.debug = False
        self.suppress_warnings = False

pass_context = click.make_pass_decorator(Context,ensure=True)

@click.group()
@click.version_option(version=get_version())
@click.option('--suppress-warnings','-q',is_flag=True,
              help="suppress warning messages from georeg.")
@click.option('--debug',is_flag=True,
              help="turn on debugging output.")
@pass_context
def georeg(context,suppress_warnings,debug):
    """
    Register point clouds and evaluate registrations
    """
    context.debug = debug
    context.suppress_warnings = suppress_warnings
    handle_debug(debug=context.debug)
    handle_suppress_warnings(suppress_warnings=context.suppress_warnings)

@georeg.command(name="register")
@click.option('--src','src_file',required=True,
              type=click.Path(exists=True,dir_okay=False),
              help="source point cloud (PLY).")
@click.option('--dst','dst_file',required=True,
              type=click.Path(exists=True,dir_okay=False),
              help="destination point cloud (PLY).")
@options.config_option()
@options.preset_option()
@options.estimator_option()
@options.report_option()
@click.option('--iterations',type=int,
              help="number of RANSAC iterations (overrides the "
              "configuration).")
@options.seed_option()
@click.option('--gt','gt_file',
              type=click.Path(exists=True,dir_okay=False),
              help="ground-truth JSON ('R', 't'); adds RRE, RTE, "
              "RMSE and inlier ratio to the report.")
@click.option('--correspondences','correspondences_file',
              type=click.Path(dir_okay=False,writable=True),
              help="write the dense correspondences to this file "
              "(CSV, or JSON if it ends with '.json').")
@click.option('--src-features','src_features',
              type=click.Path(exists=True,dir_okay=False),
              help="feature sidecar for the source cloud.")
@click.option('--dst-features','dst_features',
              type=click.Path(exists=True,dir_okay=False),
              help="feature sidecar for the destination cloud.")
@options.weights_option()
@click.option('--save-weights','save_weights',
              type=click.Path(dir_okay=False,writable=True),
              help="save the attention stack weights used for the "
              "run.")
@options.no_timing_option()
@pass_context
def register(context,src_file,dst_file,config_file,preset,estimator,
             report_file,iterations,seed,gt_file,correspondences_file,
             src_features,dst_features,weights_file,save_weights,
             no_timing):
    """
    Register a pair of point clouds.

    Estimates the rigid transform mapping the source cloud
    onto the destination cloud and reports it as JSON ('R'
    row-major, 't').
    """
    config = handle_config(config_file,preset,seed)
    if iterations is not None and iterations < 1:
        logger.critical("--iterations must be at least 1")
        sys.exit(EXIT_USAGE)
    try:
        src = read_cloud(src_file,src_features)
        dst = read_cloud(dst_file,dst_features)
        if weights_file:
            weights = AttentionWeights.load(weights_file,
                                            config.attention.heads)
        else:
            weights = AttentionWeights.from_config(config)
        T_gt = None
        if gt_file:
            T_gt = RigidTransform.from_dict(read_json(gt_file))
    except (GeoRegError,OSError) as ex:
        logger.critical("%s" % ex)
        sys.exit(EXIT_USAGE)
    try:
        state = prepare_correspondences(src,dst,config,weights)
        result = estimate_transform(state,estimator,config,
                                    iterations=iterations)
    except GeoRegError as ex:
        logger.critical("Registration failed: %s" % ex)
        sys.exit(EXIT_FAILURE)
    report = result.to_dict(timing=(not no_timing))
    report['counts'] = state.counts()
    report['config'] = config.to_dict()
    if T_gt is not None:
        rre_value,rte_value = transform_errors(result.transform,T_gt)
        gt = ground_truth_correspondences(
            state.src_dense,state.dst_dense,T_gt,
            config.evaluation.matching_radius)
        if len(gt.matches):
            gt_points = state.src_dense.points[gt.matches[:,0]]
        else:
            gt_points = state.src_dense.points
        rmse = registration_rmse(result.transform,T_gt,gt_points)
        report['evaluation'] = {
            'rre_deg': rre_value,
            'rte_m': rte_value,
            'rmse_m': rmse,
            'inlier_ratio': inlier_ratio(state.correspondences,
                                         state.src_dense.points,
                                         state.dst_dense.points,T_gt,
                                         config.evaluation.tau1),
            'registered': bool(rmse < config.evaluation.rmse_limit),
        }
    try:
        if correspondences_file:
            write_correspondences(correspondences_file,
                                  state.correspondences)
        if save_weights:
            weights.save(save_weights)
        output_report(report,report_file)
    except OSError as ex:
        logger.critical("%s" % ex)
        sys.exit(EXIT_USAGE)
    sys.exit(EXIT_OK)

@georeg.command(name="synth")
@click.option('--spec','spec_file',
              type=click.Path(exists=True,dir_okay=False),
              help="JSON scene spec (defaults for missing keys).")
@click.option('--out','out_dir',required=True,
              type=click.Path(file_okay=False),
              help="output directory.")
@options.seed_option(help_text="scene seed (overrides the spec).")
@click.option('--count',type=int,default=1,
              help="number of scenes; with more than one, scene i "
              "uses seed+i and goes into OUT/scene-<seed> "
              "(default: 1).")
@click.option('--ascii','ascii_ply',is_flag=True,
              help="write ASCII instead of binary PLY files.")
@click.option('--features',is_flag=True,
              help="also write handcrafted descriptor sidecars "
              "(src.feat, dst.feat).")
@options.config_option()
@options.preset_option()
@pass_context
def synth(context,spec_file,out_dir,seed,count,ascii_ply,features,
          config_file,preset):
    """
    Generate synthetic registration pairs.

    Writes src.ply, dst.ply and gt.json ('R', 't',
    'overlap') for each scene.
    """
    config = handle_config(config_file,preset)
    try:
        if spec_file:
            spec = SceneSpec.from_dict(read_json(spec_file))
        else:
            spec = SceneSpec()
    except (ConfigError,FormatError,OSError) as ex:
        logger.critical("Bad scene spec: %s" % ex)
        sys.exit(EXIT_USAGE)
    if seed is not None:
        spec = spec.replace(seed=seed)
    if count < 1:
        logger.critical("--count must be at least 1")
        sys.exit(EXIT_USAGE)
    feature_spec = config.features if features else None
    for i in range(count):
        scene_spec = spec.replace(seed=spec.seed + i)
        name = "scene-%04d" % scene_spec.seed
        dirn = out_dir if count == 1 else os.path.join(out_dir,name)
        try:
            scene = generate_scene(scene_spec)
        except GeoRegError as ex:
            logger.critical("%s: %s" % (name,ex))
            sys.exit(EXIT_FAILURE)
        try:
            bench.write_pair(dirn,scene,name=name,
                             binary=(not ascii_ply),
                             features=feature_spec)
        except OSError as ex:
            logger.critical("%s" % ex)
            sys.exit(EXIT_USAGE)
        click.echo("%s: %d/%d points, overlap %.3f" %
                   (dirn,len(scene.src),len(scene.dst),scene.overlap))
    sys.exit(EXIT_OK)

def parse_overlap_range(value):
    """
    Parse an overlap range of the form 'LO,HI'
    """
    try:
        lo,hi = [float(x) for x in value.split(',')]
    except ValueError:
        raise click.BadParameter("expected 'LO,HI'")
    if not 0.0 < lo <= hi <= 1.0:
        raise click.BadParameter("need 0 < LO <= HI <= 1")
    return (lo,hi)

@georeg.command(name="bench")
@click.option('--scenes','scenes_dir',
              type=click.Path(exists=True,file_okay=False),
              help="directory of pair directories (src.ply, dst.ply, "
              "gt.json).")
@click.option('--generate',type=int,
              help="benchmark this many generated synthetic scenes "
              "instead of reading --scenes.")
@click.option('--spec','spec_file',
              type=click.Path(exists=True,dir_okay=False),
              help="JSON scene spec for --generate.")
@click.option('--overlap-range',
              help="draw the overlap of each generated scene from "
              "'LO,HI' (e.g. '0.3,1.0').")
@options.estimator_option(multiple=True)
@click.option('--baseline-correspondences','baseline',is_flag=True,
              help="also run RANSAC and SVD on mutual nearest "
              "neighbour descriptor matches.")
@options.config_option()
@options.preset_option()
@options.seed_option()
@options.report_option()
@click.option('--summary-template',
              type=click.Path(exists=True,dir_okay=False),
              help="Mako template for the text summary.")
@options.no_timing_option()
@pass_context
def bench_command(context,scenes_dir,generate,spec_file,overlap_range,
                  estimators,baseline,config_file,preset,seed,
                  report_file,summary_template,no_timing):
    """
    Benchmark the registration pipeline.

    Runs the pipeline over pairs with known ground truth and
    reports IR, FMR, PIR and, per estimator, registration
    recall, RRE, RTE and pose time. Set GEOREG_THREADS to
    process pairs in parallel.
    """
    # Check summary template is a .mako file
    if summary_template:
        if not summary_template.endswith(".mako"):
            logger.critical("Summary template '%s' is not a .mako file"
                            % summary_template)
            sys.exit(EXIT_USAGE)
    if (scenes_dir is None) == (generate is None):
        logger.critical("Specify exactly one of --scenes or --generate")
        sys.exit(EXIT_USAGE)
    config = handle_config(config_file,preset,seed)
    if not estimators:
        estimators = ('lgr',)
    try:
        if scenes_dir:
            pairs = bench.collect_pairs(scenes_dir)
        else:
            if generate < 1:
                raise InvalidInputError("--generate must be at least 1")
            spec = SceneSpec()
            if spec_file:
                spec = SceneSpec.from_dict(read_json(spec_file))
            if overlap_range:
                overlap_range = parse_overlap_range(overlap_range)
            pairs = bench.generate_pairs(generate,spec,overlap_range)
    except click.BadParameter as ex:
        logger.critical("--overlap-range: %s" % ex.message)
        sys.exit(EXIT_USAGE)
    except (GeoRegError,OSError) as ex:
        logger.critical("%s" % ex)
        sys.exit(EXIT_USAGE)
    try:
        report = bench.run_bench(pairs,config,estimators,
                                 baseline=baseline,
                                 timing=(not no_timing))
    except GeoRegError as ex:
        logger.critical("Benchmark failed: %s" % ex)
        sys.exit(EXIT_FAILURE)
    # Per-pair table
    output = Reporter()
    output.append(['#pair','IR','PIR'] +
                  ['%s RRE' % name for name in
                   sorted(report['summary']['estimators'])])
    for record in report['pairs']:
        output.append([record['pair'],record['inlier_ratio'],
                       record['patch_inlier_ratio']] +
                      [record['estimators'][name]['rre_deg']
                       for name in sorted(record['estimators'])])
    output.report()
    click.echo(bench.render_summary(report['summary'],summary_template),
               nl=False)
    try:
        if report_file:
            write_json(report_file,report)
    except OSError as ex:
        logger.critical("%s" % ex)
        sys.exit(EXIT_USAGE)
    sys.exit(EXIT_OK)

@georeg.command(name="gradcheck")
@options.seed_option(default=0,help_text="seed for the random "
                     "instances (default: 0).")
@click.option('--trials',type=int,default=20,
              help="random instances per loss (default: 20).")
@options.report_option()
@pass_context
def gradcheck(context,seed,trials,report_file):
    """
    Check loss gradients against finite differences.

    Prints the largest relative error of each loss and
    whether it passed.
    """
    if trials < 1:
        logger.critical("--trials must be at least 1")
        sys.exit(EXIT_USAGE)
    results = run_gradcheck(seed=seed,trials=trials)
    output = Reporter(float_format="%.3e")
    for r in results:
        output.append([r.name,r.max_error,'PASS' if r.passed else 'FAIL'])
    output.report()
    if report_file:
        write_json(report_file,{
            'seed': seed,
            'trials': trials,
            'losses': dict([(r.name,{'max_relative_error': r.max_error,
                                     'passed': r.passed})
                            for r in results]),
        })
    if all([r.passed for r in results]):
        sys.exit(EXIT_OK)
    sys.exit(EXIT_FAILURE)

@georeg.command(name="metrics")
@click.option('--pred','pred_file',required=True,
              type=click.Path(exists=True,dir_okay=False),
              help="JSON with the estimated transform(s).")
@click.option('--gt','gt_file',required=True,
              type=click.Path(exists=True,dir_okay=False),
              help="JSON with the ground-truth transform(s).")
@options.config_option()
@options.preset_option()
@options.report_option()
@pass_context
def metrics(context,pred_file,gt_file,config_file,preset,report_file):
    """
    Evaluate estimated transforms against ground truth.

    Both files hold either a single transform ('R', 't';
    'register' reports and 'gt.json' files qualify) or an
    object mapping pair names to transforms.
    """
    config = handle_config(config_file,preset)
    try:
        predictions = transforms_from_json(read_json(pred_file))
        ground_truth = transforms_from_json(read_json(gt_file))
        report = evaluate_predictions(predictions,ground_truth,
                                      config.evaluation)
    except (GeoRegError,OSError) as ex:
        logger.critical("%s" % ex)
        sys.exit(EXIT_USAGE)
    try:
        if report_file:
            write_json(report_file,report)
            output = Reporter()
            for p in report["pairs"]:
                output.append([p["pair"],p["rre_deg"],p["rte_m"],
                               "yes" if p["registered"] else "no"])
            output.report()
        else:
            click.echo(dumps_json(report),nl=False)
    except OSError as ex:
        logger.critical("%s" % ex)
        sys.exit(EXIT_USAGE)
    sys.exit(EXIT_OK)
