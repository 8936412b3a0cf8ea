#!/usr/bin/env python
#
# options: click definitions for shared options and arguments
import click
from .config import ESTIMATORS
from .config import PRESETS

def seed_option(default=None,help_text="seed for the run (overrides the "
                "configuration)"):
    return click.option('--seed',
                        type=int,
                        default=default,
                        help=help_text)

def config_option():
    return click.option('--config','config_file',
                        type=click.Path(exists=True,dir_okay=False),
                        help="JSON configuration file; keys not in the "
                        "file take their values from the preset")

def preset_option(default='indoor'):
    return click.option('--preset',
                        type=click.Choice(PRESETS),
                        default=default,
                        help="configuration preset: one of %s "
                        "(default is '%s')" % (', '.join(PRESETS),default))

def estimator_option(default='lgr',multiple=False):
    if multiple:
        return click.option('--estimator','estimators',
                            type=click.Choice(ESTIMATORS),
                            multiple=True,
                            help="estimator to benchmark; can be "
                            "given more than once (default is '%s')" %
                            default)
    return click.option('--estimator',
                        type=click.Choice(ESTIMATORS),
                        default=default,
                        help="transform estimator: one of %s "
                        "(default is '%s')" % (', '.join(ESTIMATORS),
                                               default))

def no_timing_option():
    return click.option('--no-timing',is_flag=True,
                        help="leave timings out of the report, so "
                        "identical runs give identical reports")

def report_option(help_text="write the JSON report to FILE"):
    return click.option('--report','report_file',
                        type=click.Path(dir_okay=False,writable=True),
                        metavar="FILE",
                        help=help_text)

def weights_option():
    return click.option('--weights','weights_file',
                        type=click.Path(exists=True,dir_okay=False),
                        help="load the attention stack weights from a "
                        "weights file instead of seeding them")
