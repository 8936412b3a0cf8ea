#!/usr/bin/env python
#
# config: run configuration for georeg
"""
Configuration for georeg runs

Each section of the configuration is a dataclass whose defaults
are the published indoor settings. Configurations are loaded from
JSON with strict checking: any key that isn't recognised raises a
ConfigError naming its dotted path (e.g. 'lgr.acceptance_radius').

Example JSON:

{
  "seed": 7,
  "lgr": { "acceptance_radius_m": 0.1, "refinement_iterations": 5 },
  "embedding": { "sigma_d_m": 0.2, "sigma_a_deg": 15.0 }
}
"""

import math
import logging
import dataclasses
from dataclasses import dataclass
from dataclasses import field
from .core import ConfigError
from .core import read_json

logger = logging.getLogger(__name__)

# Constants
PRECISIONS = ('single','double')
CROSS_UPDATES = ('sequential','parallel')
ESTIMATORS = ('lgr','ransac','svd')
PRESETS = ('indoor','outdoor')

def _degrees(value):
    return round(math.degrees(value),12)

def _option(default,json=None,to_internal=None,to_json=None):
    # Dataclass field with an optional JSON key and unit conversion
    metadata = {}
    if json:
        metadata['json'] = json
    if to_internal:
        metadata['to_internal'] = to_internal
        metadata['to_json'] = to_json
    if isinstance(default,tuple):
        return field(default_factory=lambda: default,metadata=metadata)
    return field(default=default,metadata=metadata)

def _section(cls):
    return field(default_factory=cls)

# Configuration sections

@dataclass(frozen=True)
class SamplingConfig:
    """
    Grid subsampling pyramid: voxel size of the first stage
    and number of stages (the voxel size doubles each stage)
    """
    voxel_size: float = _option(0.025,json='voxel_size_m')
    num_stages: int = 4

    def validate(self):
        if not self.voxel_size > 0.0:
            raise ConfigError("voxel_size_m must be positive")
        if self.num_stages < 2:
            raise ConfigError("num_stages must be at least 2")

@dataclass(frozen=True)
class FeatureSpec:
    """
    Handcrafted local descriptor settings

    ``radii`` are the neighbourhood radii (one block of
    statistics per radius), ``point_dim`` is the width of
    the dense point descriptors and ``backbone_dim`` the
    width of the pooled superpoint features fed to the
    attention stack. Dense points also get a spin image of
    ``spin_bins`` x ``spin_bins`` over ``spin_radius`` and
    superpoints a wider one; neighbours within
    ``min_height`` of the tangent plane are left out of
    both.
    """
    radii: tuple = _option((0.1,0.2,0.4),json='radii_m')
    point_dim: int = 128
    backbone_dim: int = 256
    point_norm: float = 24.0
    spin_radius: float = _option(0.5,json='spin_radius_m')
    spin_bins: int = 8
    superpoint_spin_radius: float = _option(0.8,
                                            json='superpoint_spin_radius_m')
    superpoint_spin_bins: int = 6
    min_height: float = _option(0.03,json='min_height_m')
    projection_seed: int = 1234

    def validate(self):
        if not self.radii:
            raise ConfigError("radii_m must not be empty")
        if any([not r > 0.0 for r in self.radii]):
            raise ConfigError("radii_m must all be positive")
        if self.point_dim < 1 or self.backbone_dim < 1:
            raise ConfigError("descriptor widths must be at least 1")
        if not self.point_norm > 0.0:
            raise ConfigError("point_norm must be positive")
        if not (self.spin_radius > 0.0 and
                self.superpoint_spin_radius > 0.0):
            raise ConfigError("spin image radii must be positive")
        if self.spin_bins < 1 or self.superpoint_spin_bins < 1:
            raise ConfigError("spin images need at least 1 bin")
        if self.min_height < 0.0:
            raise ConfigError("min_height_m must not be negative")

@dataclass(frozen=True)
class EmbeddingConfig:
    """
    Geometric structure embedding settings

    ``sigma_a`` is held in radians; the JSON key
    ``sigma_a_deg`` is in degrees.
    """
    d_t: int = 256
    sigma_d: float = _option(0.2,json='sigma_d_m')
    sigma_a: float = _option(math.radians(15.0),json='sigma_a_deg',
                             to_internal=math.radians,
                             to_json=_degrees)
    k: int = _option(3,json='k_angular')
    angular: bool = True

    def validate(self):
        if self.d_t < 2 or self.d_t % 2:
            raise ConfigError("d_t must be a positive even integer "
                              "(got %s)" % self.d_t)
        if not self.sigma_d > 0.0:
            raise ConfigError("sigma_d_m must be positive")
        if not self.sigma_a > 0.0:
            raise ConfigError("sigma_a_deg must be positive")
        if self.k < 1:
            raise ConfigError("k_angular must be at least 1")

@dataclass(frozen=True)
class AttentionConfig:
    """
    Attention stack settings
    """
    heads: int = 4
    num_layers: int = _option(3,json='n_t')
    output_dim: int = 256
    ffn_multiplier: int = 2
    precision: str = 'single'
    geometric: bool = True
    cross_update: str = 'sequential'

    def validate(self):
        if self.heads < 1:
            raise ConfigError("heads must be at least 1")
        if self.num_layers < 0:
            raise ConfigError("n_t must not be negative")
        if self.output_dim < 1 or self.ffn_multiplier < 1:
            raise ConfigError("output_dim and ffn_multiplier must be "
                              "at least 1")
        if self.precision not in PRECISIONS:
            raise ConfigError("precision must be one of %s" %
                              ', '.join(PRECISIONS))
        if self.cross_update not in CROSS_UPDATES:
            raise ConfigError("cross_update must be one of %s" %
                              ', '.join(CROSS_UPDATES))

@dataclass(frozen=True)
class MatchingConfig:
    """
    Superpoint and point matching settings
    """
    num_correspondences: int = 256
    dual_normalization: bool = True
    sinkhorn_iterations: int = 100
    dustbin_alpha: float = 1.0
    mutual_k: int = 3
    min_confidence: float = 0.05

    def validate(self):
        if self.num_correspondences < 1:
            raise ConfigError("num_correspondences must be at least 1")
        if self.sinkhorn_iterations < 1:
            raise ConfigError("sinkhorn_iterations must be at least 1")
        if not math.isfinite(self.dustbin_alpha):
            raise ConfigError("dustbin_alpha must be finite")
        if self.mutual_k < 1:
            raise ConfigError("mutual_k must be at least 1")
        if self.min_confidence < 0.0:
            raise ConfigError("min_confidence must not be negative")

@dataclass(frozen=True)
class LgrConfig:
    """
    Local-to-global registration settings
    """
    tau_a: float = _option(0.1,json='acceptance_radius_m')
    refinement_iterations: int = 5
    min_local_matches: int = 3

    def validate(self):
        if not self.tau_a > 0.0:
            raise ConfigError("acceptance_radius_m must be positive")
        if self.refinement_iterations < 0:
            raise ConfigError("refinement_iterations must not be "
                              "negative")
        if self.min_local_matches < 3:
            raise ConfigError("min_local_matches must be at least 3")

@dataclass(frozen=True)
class RansacConfig:
    """
    RANSAC baseline settings
    """
    iterations: int = 50000
    tau_a: float = _option(0.1,json='acceptance_radius_m')
    batch_size: int = 200

    def validate(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if not self.tau_a > 0.0:
            raise ConfigError("acceptance_radius_m must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")

@dataclass(frozen=True)
class EvalThresholds:
    """
    Evaluation thresholds

    ``tau1`` inlier distance, ``tau2`` feature matching
    recall cutoff, ``rmse_limit`` for RMSE-based recall,
    ``rre_limit`` (degrees) and ``rte_limit`` for threshold
    recall, ``matching_radius`` for ground truth matches
    and patch overlap.
    """
    tau1: float = _option(0.1,json='inlier_distance_m')
    tau2: float = _option(0.05,json='fmr_threshold')
    rmse_limit: float = _option(0.2,json='rmse_limit_m')
    rre_limit: float = _option(5.0,json='rre_limit_deg')
    rte_limit: float = _option(2.0,json='rte_limit_m')
    matching_radius: float = _option(0.05,json='matching_radius_m')

    def validate(self):
        for name in ('tau1','tau2','rmse_limit','rre_limit',
                     'rte_limit','matching_radius'):
            if not getattr(self,name) > 0.0:
                raise ConfigError("%s must be positive" % name)

@dataclass(frozen=True)
class CircleLossConfig:
    """
    Circle loss margins and scale
    """
    delta_p: float = 0.1
    delta_n: float = 1.4
    gamma: float = 10.0
    positive_overlap: float = 0.1
    num_gt_matches: int = 128

    def validate(self):
        if not self.delta_n > self.delta_p:
            raise ConfigError("delta_n must be greater than delta_p")
        if not self.gamma > 0.0:
            raise ConfigError("gamma must be positive")
        if not 0.0 < self.positive_overlap <= 1.0:
            raise ConfigError("positive_overlap must be in (0,1]")
        if self.num_gt_matches < 1:
            raise ConfigError("num_gt_matches must be at least 1")

@dataclass(frozen=True)
class RunConfig:
    """
    Complete configuration for a registration run
    """
    sampling: SamplingConfig = _section(SamplingConfig)
    features: FeatureSpec = _section(FeatureSpec)
    embedding: EmbeddingConfig = _section(EmbeddingConfig)
    attention: AttentionConfig = _section(AttentionConfig)
    matching: MatchingConfig = _section(MatchingConfig)
    lgr: LgrConfig = _section(LgrConfig)
    ransac: RansacConfig = _section(RansacConfig)
    evaluation: EvalThresholds = _section(EvalThresholds)
    losses: CircleLossConfig = _section(CircleLossConfig)
    seed: int = 42

    def validate(self):
        if self.embedding.d_t % self.attention.heads:
            raise ConfigError("d_t (%d) must be divisible by heads (%d)"
                              % (self.embedding.d_t,
                                 self.attention.heads))

    @classmethod
    def from_dict(cls,data,base=None):
        """
        Build a RunConfig from a dictionary

        Arguments:
          data (dict): configuration data (as loaded
            from JSON)
          base (RunConfig): configuration supplying
            values for keys missing from ``data``
            (defaults to the built-in defaults)
        """
        return _parse_section(cls,data,'',base)

    def to_dict(self):
        """
        Return the resolved configuration as a dictionary
        using the JSON keys
        """
        return _dump_section(self)

    def replace(self,**sections):
        """
        Return a copy with the named sections or values replaced
        """
        return dataclasses.replace(self,**sections)

@dataclass(frozen=True)
class SceneSpec:
    """
    Synthetic scene settings

    A scene is a floor and walls (``num_planes``, at most
    5) plus boxes and cylinders standing on the floor,
    each sampled with ``points_per_primitive`` points. The
    two clouds are overlapping crops of the scene along a
    random horizontal direction; ``overlap`` of 1.0 means
    no cropping.
    """
    seed: int = 0
    num_planes: int = 3
    num_boxes: int = 3
    num_cylinders: int = 2
    points_per_primitive: int = 2500
    extent: float = _option(1.2,json='extent_m')
    wall_height: float = _option(0.8,json='wall_height_m')
    overlap: float = 1.0
    overlap_tolerance: float = 0.05
    overlap_radius: float = _option(0.05,json='overlap_radius_m')
    noise_sigma: float = _option(0.0,json='noise_sigma_m')
    max_rotation: float = _option(math.pi,json='max_rotation_deg',
                                  to_internal=math.radians,
                                  to_json=_degrees)
    max_translation: float = _option(1.0,json='max_translation_m')

    def validate(self):
        if not 0 <= self.num_planes <= 5:
            raise ConfigError("num_planes must be between 0 and 5")
        if self.num_boxes < 0 or self.num_cylinders < 0:
            raise ConfigError("primitive counts must not be negative")
        if self.num_planes + self.num_boxes + self.num_cylinders < 1:
            raise ConfigError("scene needs at least one primitive")
        if self.points_per_primitive < 1:
            raise ConfigError("points_per_primitive must be at least 1")
        if not self.extent > 0.0 or not self.wall_height > 0.0:
            raise ConfigError("extent_m and wall_height_m must be "
                              "positive")
        if not 0.0 < self.overlap <= 1.0:
            raise ConfigError("overlap must be in (0,1]")
        if not self.overlap_tolerance > 0.0:
            raise ConfigError("overlap_tolerance must be positive")
        if not self.overlap_radius > 0.0:
            raise ConfigError("overlap_radius_m must be positive")
        if self.noise_sigma < 0.0 or self.max_translation < 0.0 or \
           self.max_rotation < 0.0:
            raise ConfigError("noise, rotation and translation ranges "
                              "must not be negative")

    @classmethod
    def from_dict(cls,data,base=None):
        return _parse_section(cls,data,'',base)

    def to_dict(self):
        return _dump_section(self)

    def replace(self,**values):
        return dataclasses.replace(self,**values)

# Functions

def _json_key(f):
    return f.metadata.get('json',f.name)

def _join(path,key):
    if path:
        return "%s.%s" % (path,key)
    return key

def _coerce(value,f,where):
    # Type check a scalar value against the field type
    kind = f.type
    if kind is bool:
        if not isinstance(value,bool):
            raise ConfigError("%s: expected true or false" % where)
    elif kind is int:
        if isinstance(value,bool) or not isinstance(value,int):
            raise ConfigError("%s: expected an integer" % where)
    elif kind is float:
        if isinstance(value,bool) or not isinstance(value,(int,float)):
            raise ConfigError("%s: expected a number" % where)
        value = float(value)
    elif kind is str:
        if not isinstance(value,str):
            raise ConfigError("%s: expected a string" % where)
    elif kind is tuple:
        if not isinstance(value,list) or \
           any([isinstance(x,bool) or not isinstance(x,(int,float))
                for x in value]):
            raise ConfigError("%s: expected a list of numbers" % where)
        value = tuple([float(x) for x in value])
    if 'to_internal' in f.metadata:
        value = f.metadata['to_internal'](value)
    return value

def _parse_section(cls,data,path,base=None):
    # Strictly parse one configuration section
    if not isinstance(data,dict):
        raise ConfigError("%s: expected an object" % (path or 'config'))
    fields = { _json_key(f): f for f in dataclasses.fields(cls) }
    for key in sorted(data):
        if key not in fields:
            raise ConfigError("unknown configuration key '%s'" %
                              _join(path,key))
    values = {}
    for key,f in fields.items():
        where = _join(path,key)
        if dataclasses.is_dataclass(f.type):
            sub_base = getattr(base,f.name) if base is not None else None
            if key in data:
                values[f.name] = _parse_section(f.type,data[key],
                                                where,sub_base)
            elif sub_base is not None:
                values[f.name] = sub_base
        elif key in data:
            values[f.name] = _coerce(data[key],f,where)
    if base is not None:
        section = dataclasses.replace(base,**values)
    else:
        section = cls(**values)
    try:
        section.validate()
    except ConfigError as ex:
        if path:
            raise ConfigError("%s: %s" % (path,ex))
        raise
    return section

def _dump_section(section):
    data = {}
    for f in dataclasses.fields(section):
        value = getattr(section,f.name)
        if dataclasses.is_dataclass(value):
            value = _dump_section(value)
        elif 'to_json' in f.metadata:
            value = f.metadata['to_json'](value)
        elif isinstance(value,tuple):
            value = list(value)
        data[_json_key(f)] = value
    return data

def preset_config(name='indoor'):
    """
    Return the RunConfig for a named preset

    Arguments:
      name (str): 'indoor' (published indoor settings,
        the default) or 'outdoor' (LiDAR-scale settings)
    """
    if name == 'indoor':
        return RunConfig()
    elif name == 'outdoor':
        return RunConfig(
            sampling=SamplingConfig(voxel_size=0.3,num_stages=5),
            features=FeatureSpec(radii=(1.2,2.4,4.8),spin_radius=6.0,
                                 superpoint_spin_radius=9.6,
                                 min_height=0.36),
            embedding=EmbeddingConfig(d_t=128,sigma_d=4.8),
            lgr=LgrConfig(tau_a=0.6),
            ransac=RansacConfig(tau_a=0.6),
            evaluation=EvalThresholds(tau1=0.6,matching_radius=0.6))
    raise ConfigError("unknown preset '%s' (expected one of %s)" %
                      (name,', '.join(PRESETS)))

def load_config(path=None,preset='indoor',seed=None):
    """
    Load a RunConfig

    Arguments:
      path (str): JSON configuration file (optional)
      preset (str): preset supplying the values for
        keys not in the file
      seed (int): if not None then overrides the seed

    Returns:
      RunConfig: the resolved configuration.
    """
    config = preset_config(preset)
    if path:
        logger.debug("Loading configuration from %s" % path)
        config = RunConfig.from_dict(read_json(path),base=config)
    if seed is not None:
        config = config.replace(seed=seed)
    return config
