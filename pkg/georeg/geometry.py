#!/usr/bin/env python
#
# geometry: points, rigid transforms, grid subsampling and grouping
import logging
from typing import NamedTuple
from typing import Optional
from dataclasses import dataclass
import numpy as np
from scipy.spatial import cKDTree
from .core import InvalidInputError
from .core import DegenerateInputError
from .core import ConfigError

logger = logging.getLogger(__name__)

# Constants
ORTHONORMAL_TOLERANCE = 1e-9
RANK_TOLERANCE = 1e-10
TIE_TOLERANCE = 1e-9

# Classes

class Point3(NamedTuple):
    """
    Single point in space (coordinates in metres)
    """
    x: float
    y: float
    z: float

def _as_points(points,name="points"):
    # Return points as a read-only (n,3) float64 array
    points = np.array(points,dtype=np.float64)
    if points.size == 0:
        points = points.reshape(0,3)
    if points.ndim != 2 or points.shape[1] != 3:
        raise InvalidInputError("%s: expected (n,3) array, got shape %s"
                                % (name,points.shape))
    if not np.all(np.isfinite(points)):
        bad = int(np.nonzero(~np.all(np.isfinite(points),axis=1))[0][0])
        raise InvalidInputError("%s: non-finite coordinates at row %d"
                                % (name,bad))
    points.flags.writeable = False
    return points

@dataclass(frozen=True,eq=False)
class PointCloud:
    """
    Ordered set of points with optional per-point features

    Arguments:
      points (array): (n,3) coordinates (Point3 tuples or
        any array-like)
      features (array): optional (n,d) feature matrix
    """
    points: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        points = _as_points(self.points)
        object.__setattr__(self,'points',points)
        if self.features is not None:
            features = np.array(self.features,dtype=np.float64)
            if features.ndim != 2 or features.shape[0] != len(points):
                raise InvalidInputError("features: expected %d rows, got "
                                        "shape %s" % (len(points),
                                                      features.shape))
            if features.shape[1] < 1:
                raise InvalidInputError("features: width must be at "
                                        "least 1")
            features.flags.writeable = False
            object.__setattr__(self,'features',features)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        for p in self.points:
            yield Point3(*p.tolist())

    def point(self,i):
        """
        Return point ``i`` as a Point3
        """
        return Point3(*self.points[i].tolist())

    @property
    def feature_dim(self):
        """
        Width of the feature rows (0 if no features)
        """
        if self.features is None:
            return 0
        return self.features.shape[1]

    def with_features(self,features):
        """
        Return a copy of the cloud carrying ``features``
        """
        return PointCloud(self.points,features)

    def subset(self,indices):
        """
        Return the cloud restricted to ``indices`` (in order)
        """
        indices = np.asarray(indices,dtype=np.int64)
        features = None
        if self.features is not None:
            features = self.features[indices]
        return PointCloud(self.points[indices],features)

@dataclass(frozen=True,eq=False)
class RigidTransform:
    """
    Rigid transformation x -> R x + t

    The rotation must be orthonormal with determinant +1
    (to within 1e-9) otherwise an InvalidInputError is
    raised.
    """
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation,dtype=np.float64)
        t = np.array(self.translation,dtype=np.float64).reshape(-1)
        if R.shape != (3,3) or t.shape != (3,):
            raise InvalidInputError("rigid transform needs a 3x3 rotation "
                                    "and a 3-vector translation")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidInputError("rigid transform has non-finite "
                                    "entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) >= ORTHONORMAL_TOLERANCE:
            raise InvalidInputError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise InvalidInputError("rotation determinant is not +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self,'rotation',R)
        object.__setattr__(self,'translation',t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3),np.zeros(3))

    @classmethod
    def from_axis_angle(cls,axis,angle,translation=(0.0,0.0,0.0)):
        """
        Build a transform from a rotation about ``axis``
        by ``angle`` radians plus a translation
        """
        axis = np.asarray(axis,dtype=np.float64)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise InvalidInputError("rotation axis is the zero vector")
        x,y,z = axis/norm
        K = np.array([[0.0,-z,y],[z,0.0,-x],[-y,x,0.0]])
        R = np.eye(3) + np.sin(angle)*K + (1.0 - np.cos(angle))*(K @ K)
        return cls(R,translation)

    @classmethod
    def from_matrix(cls,matrix):
        """
        Build a transform from a 4x4 homogeneous matrix
        """
        matrix = np.asarray(matrix,dtype=np.float64)
        if matrix.shape != (4,4):
            raise InvalidInputError("expected a 4x4 matrix")
        return cls(matrix[:3,:3],matrix[:3,3])

    @classmethod
    def from_dict(cls,data):
        """
        Build a transform from a dictionary with keys 'R'
        (9 floats, row-major) and 't' (3 floats)
        """
        try:
            R = np.asarray(data['R'],dtype=np.float64).reshape(3,3)
            t = np.asarray(data['t'],dtype=np.float64).reshape(3)
        except (KeyError,ValueError,TypeError) as ex:
            raise InvalidInputError("bad transform data: %s" % ex)
        return cls(R,t)

    def to_dict(self):
        return { 'R': self.rotation.reshape(-1).tolist(),
                 't': self.translation.tolist() }

    def matrix(self):
        """
        Return the 4x4 homogeneous matrix
        """
        m = np.eye(4)
        m[:3,:3] = self.rotation
        m[:3,3] = self.translation
        return m

    def inverse(self):
        Rt = self.rotation.T
        return RigidTransform(Rt,-Rt @ self.translation)

    def compose(self,other):
        """
        Return the transform applying ``other`` then ``self``
        """
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation +
                              self.translation)

    def apply(self,points):
        """
        Apply the transform to an (n,3) array of points
        """
        points = np.asarray(points,dtype=np.float64)
        return points @ self.rotation.T + self.translation

class PatchAssignment:
    """
    Result of point-to-node grouping

    Attributes:
      node_of_point: for each dense point, the index of its
        nearest superpoint in the original superpoint cloud
      nodes: indices (into the original superpoint cloud) of
        the superpoints that kept a non-empty patch, ascending
      patch_of_point: for each dense point, the index of its
        patch in ``nodes``
      patches: list of dense point index arrays, one per kept
        superpoint, in the order of ``nodes``
    """
    def __init__(self,node_of_point,num_superpoints):
        self.node_of_point = np.asarray(node_of_point,dtype=np.int64)
        counts = np.bincount(self.node_of_point,
                             minlength=num_superpoints)
        self.nodes = np.nonzero(counts)[0]
        remap = np.full(num_superpoints,-1,dtype=np.int64)
        remap[self.nodes] = np.arange(len(self.nodes))
        self.patch_of_point = remap[self.node_of_point]
        order = np.argsort(self.patch_of_point,kind='stable')
        bounds = np.cumsum(counts[self.nodes])[:-1]
        self.patches = np.split(order,bounds)
        self.num_pruned = num_superpoints - len(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def patch_sizes(self):
        return np.array([len(p) for p in self.patches],dtype=np.int64)

    def select(self,superpoints):
        """
        Return the superpoints that kept a non-empty patch
        """
        return superpoints.subset(self.nodes)

# Functions

def apply_transform(T,cloud):
    """
    Apply a rigid transform to a point cloud

    Features are carried through unchanged.

    Arguments:
      T (RigidTransform): transform to apply
      cloud (PointCloud): cloud to transform

    Returns:
      PointCloud: transformed cloud.
    """
    return PointCloud(T.apply(cloud.points),cloud.features)

def voxel_downsample(cloud,voxel_size):
    """
    Grid subsampling with one centroid per occupied voxel

    Features (if present) are averaged over the voxel
    members in the same way as the coordinates. Output
    points are ordered by voxel key.

    Arguments:
      cloud (PointCloud): cloud to downsample
      voxel_size (float): edge length of the voxels (metres)

    Returns:
      PointCloud: the downsampled cloud.
    """
    if not voxel_size > 0.0:
        raise ConfigError("voxel size must be positive (got %s)" %
                          voxel_size)
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points/voxel_size).astype(np.int64)
    _,inverse,counts = np.unique(keys,axis=0,return_inverse=True,
                                 return_counts=True)
    inverse = inverse.reshape(-1)
    nvoxels = len(counts)
    def centroid(values):
        return np.stack([np.bincount(inverse,weights=values[:,i],
                                     minlength=nvoxels)
                         for i in range(values.shape[1])],axis=1) \
                         / counts[:,None]
    points = centroid(cloud.points)
    features = None
    if cloud.features is not None:
        features = centroid(cloud.features)
    return PointCloud(points,features)

def build_pyramid(cloud,voxel_size,num_stages):
    """
    Build a grid subsampling pyramid

    Stage 0 is subsampled at ``voxel_size`` and each
    later stage doubles the voxel size of the previous
    one.

    Arguments:
      cloud (PointCloud): input cloud
      voxel_size (float): voxel size of the first stage
      num_stages (int): number of stages

    Returns:
      List: list of PointClouds, one per stage.
    """
    if num_stages < 1:
        raise ConfigError("number of stages must be at least 1")
    levels = []
    current = cloud
    for stage in range(num_stages):
        current = voxel_downsample(current,voxel_size*(2**stage))
        logger.debug("stage %d: voxel %.4g m: %d points" %
                     (stage,voxel_size*(2**stage),len(current)))
        levels.append(current)
    return levels

def point_to_node_grouping(dense,superpoints):
    """
    Assign each dense point to its nearest superpoint

    Ties between equidistant superpoints (within a relative
    TIE_TOLERANCE of the nearest distance) go to the lowest
    superpoint index, however many superpoints are tied.
    Superpoints whose patch is empty are pruned from the
    assignment.

    Arguments:
      dense (PointCloud): dense points
      superpoints (PointCloud): superpoints

    Returns:
      PatchAssignment: the grouping.
    """
    m = len(superpoints)
    if m == 0:
        raise InvalidInputError("no superpoints to group around")
    if len(dense) == 0:
        raise DegenerateInputError("no patches: dense cloud is empty")
    tree = cKDTree(superpoints.points)
    k = min(m,2)
    dist,idx = tree.query(dense.points,k=k)
    dist = np.asarray(dist).reshape(len(dense),k)
    idx = np.asarray(idx).reshape(len(dense),k)
    node = idx[:,0].copy()
    if k > 1:
        radius = dist[:,0]*(1.0 + TIE_TOLERANCE)
        for i in np.nonzero(dist[:,1] <= radius)[0]:
            tied = tree.query_ball_point(dense.points[i],r=radius[i])
            if tied:
                node[i] = min(tied)
    assignment = PatchAssignment(node,m)
    if assignment.num_pruned:
        logger.debug("pruned %d superpoints with empty patches" %
                     assignment.num_pruned)
    return assignment

def weighted_svd_transform(src,dst,weights=None):
    """
    Closed-form weighted Procrustes (Kabsch) solution

    Returns the rigid transform minimising
    sum_j w_j |R p_j + t - q_j|^2, with the sign of the
    last singular vector corrected so that det(R) = +1.

    Arguments:
      src (array): (n,3) source points
      dst (array): (n,3) destination points
      weights (array): n non-negative weights (default
        uniform)

    Returns:
      RigidTransform: the optimal transform.
    """
    src = _as_points(src,"src")
    dst = _as_points(dst,"dst")
    if src.shape != dst.shape:
        raise InvalidInputError("src and dst must have the same shape "
                                "(%s != %s)" % (src.shape,dst.shape))
    if weights is None:
        weights = np.ones(len(src))
    weights = np.asarray(weights,dtype=np.float64).reshape(-1)
    if len(weights) != len(src):
        raise InvalidInputError("expected %d weights, got %d" %
                                (len(src),len(weights)))
    if not np.all(np.isfinite(weights)) or np.any(weights < 0.0):
        raise InvalidInputError("weights must be finite and "
                                "non-negative")
    if np.count_nonzero(weights > 0.0) < 3:
        raise DegenerateInputError("need at least 3 correspondences "
                                   "with positive weight")
    w = weights/weights.sum()
    src_centre = w @ src
    dst_centre = w @ dst
    H = (src - src_centre).T @ ((dst - dst_centre)*w[:,None])
    U,S,Vt = np.linalg.svd(H)
    if not S[0] > 0.0 or S[1] <= RANK_TOLERANCE*S[0]:
        raise DegenerateInputError("collinear or coincident points: "
                                   "cross-covariance is rank deficient")
    V = Vt.T
    D = np.eye(3)
    if np.linalg.det(V @ U.T) < 0.0:
        D[2,2] = -1.0
    R = V @ D @ U.T
    t = dst_centre - R @ src_centre
    return RigidTransform(R,t)

def residuals(T,src,dst):
    """
    Return |T(p_j) - q_j| for corresponding rows
    """
    return np.linalg.norm(T.apply(src) - np.asarray(dst),axis=1)

def random_rotation(rng,max_angle=np.pi):
    """
    Return a random rotation matrix

    Arguments:
      rng (numpy.random.Generator): random generator
      max_angle (float): angle is drawn uniformly from
        [0,max_angle] about a uniformly random axis
    """
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-8:
        axis = rng.normal(size=3)
    angle = rng.uniform(0.0,max_angle)
    return RigidTransform.from_axis_angle(axis,angle).rotation

def random_transform(rng,max_angle=np.pi,max_translation=1.0):
    """
    Return a random rigid transform (uniform axis, angle
    in [0,max_angle], translation in a cube of half-width
    max_translation)
    """
    R = random_rotation(rng,max_angle)
    t = rng.uniform(-max_translation,max_translation,size=3)
    return RigidTransform(R,t)
