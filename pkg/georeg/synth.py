#!/usr/bin/env python
#
# synth: synthetic scenes, handcrafted descriptors and ground truth
"""
Synthetic registration data

Scenes are made of planes (a floor and walls), boxes and
cylinders. The source and destination clouds are overlapping
crops of the same sampled surfaces; the destination is noised
and moved by a random rigid transform.

In place of a learned backbone, points are described by
rigid-invariant local statistics at several radii (covariance
eigenvalue shape measures, centroid offsets, point density and a
radial histogram) together with a spin image: a histogram of the
neighbours' distances from the normal line and from the tangent
plane, which captures the off-plane structure around a point.
Superpoints add a wider spin image to their pooled descriptors.
Both are mapped through fixed random matrices with orthonormal
rows.
"""

import logging
from collections import namedtuple
import numpy as np
from scipy.spatial import cKDTree
from .core import ConfigError
from .core import InvalidInputError
from .core import splitmix_uniform
from .core import stream_seed
from .config import SceneSpec
from .geometry import PointCloud
from .geometry import RigidTransform
from .geometry import random_transform

logger = logging.getLogger(__name__)

# Constants
HISTOGRAM_BINS = 4
STATISTICS_PER_RADIUS = 7 + HISTOGRAM_BINS
OVERLAP_SEARCH_STEPS = 30
STATISTICS_WEIGHT = 0.1
SPIN_IMAGE_CHUNK = 1024

Scene = namedtuple('Scene',('src','dst','transform','overlap'))
GroundTruth = namedtuple('GroundTruth',
                         ('matches','unmatched_src','unmatched_dst'))

# Scene generation

def _sample_rectangle(rng,origin,u,v,n):
    a = rng.uniform(0.0,1.0,size=(n,1))
    b = rng.uniform(0.0,1.0,size=(n,1))
    return origin + a*u + b*v

def _sample_plane(rng,index,spec):
    E,H,n = spec.extent,spec.wall_height,spec.points_per_primitive
    planes = [
        ((0,0,0),(E,0,0),(0,E,0)),  # floor
        ((0,0,0),(0,E,0),(0,0,H)),
        ((0,0,0),(E,0,0),(0,0,H)),
        ((E,0,0),(0,E,0),(0,0,H)),
        ((0,E,0),(E,0,0),(0,0,H)),
    ]
    origin,u,v = [np.array(x,dtype=np.float64) for x in planes[index]]
    return _sample_rectangle(rng,origin,u,v,n)

def _sample_box(rng,spec):
    E,n = spec.extent,spec.points_per_primitive
    size = np.array([rng.uniform(0.15,0.35),rng.uniform(0.15,0.35),
                     rng.uniform(0.1,0.4)])
    centre = np.array([rng.uniform(0.25*E,0.75*E),
                       rng.uniform(0.25*E,0.75*E),0.0])
    yaw = rng.uniform(0.0,0.5*np.pi)
    sx,sy,sz = size
    # Faces as (origin,u,v) in box coordinates; the bottom is hidden
    faces = [((-sx/2,-sy/2,sz),(sx,0,0),(0,sy,0)),
             ((-sx/2,-sy/2,0),(sx,0,0),(0,0,sz)),
             ((-sx/2,sy/2,0),(sx,0,0),(0,0,sz)),
             ((-sx/2,-sy/2,0),(0,sy,0),(0,0,sz)),
             ((sx/2,-sy/2,0),(0,sy,0),(0,0,sz))]
    areas = np.array([np.linalg.norm(np.cross(u,v)) for _,u,v in faces])
    counts = rng.multinomial(n,areas/areas.sum())
    points = np.concatenate([
        _sample_rectangle(rng,np.array(o,dtype=np.float64),
                          np.array(u,dtype=np.float64),
                          np.array(v,dtype=np.float64),c)
        for (o,u,v),c in zip(faces,counts)])
    R = RigidTransform.from_axis_angle((0,0,1),yaw,centre)
    return R.apply(points)

def _sample_cylinder(rng,spec):
    E,n = spec.extent,spec.points_per_primitive
    radius = rng.uniform(0.05,0.12)
    height = rng.uniform(0.2,0.5)
    centre = np.array([rng.uniform(0.2*E,0.8*E),
                       rng.uniform(0.2*E,0.8*E),0.0])
    side = 2.0*np.pi*radius*height
    top = np.pi*radius**2
    n_side = rng.binomial(n,side/(side + top))
    theta = rng.uniform(0.0,2.0*np.pi,size=n_side)
    z = rng.uniform(0.0,height,size=n_side)
    lateral = np.stack([radius*np.cos(theta),radius*np.sin(theta),z],
                       axis=1)
    theta = rng.uniform(0.0,2.0*np.pi,size=n - n_side)
    r = radius*np.sqrt(rng.uniform(0.0,1.0,size=n - n_side))
    cap = np.stack([r*np.cos(theta),r*np.sin(theta),
                    np.full(n - n_side,height)],axis=1)
    return np.concatenate([lateral,cap]) + centre

def sample_scene_surfaces(spec,rng):
    """
    Sample the primitives of a scene

    Returns:
      numpy.ndarray: (n,3) points on the scene surfaces.
    """
    parts = [_sample_plane(rng,i,spec) for i in range(spec.num_planes)]
    parts.extend([_sample_box(rng,spec) for i in range(spec.num_boxes)])
    parts.extend([_sample_cylinder(rng,spec)
                  for i in range(spec.num_cylinders)])
    return np.concatenate(parts)

def coverage(points,others,tau):
    """
    Fraction of ``points`` with a point of ``others`` closer
    than tau
    """
    if len(points) == 0:
        return 0.0
    if len(others) == 0:
        return 0.0
    dist,_ = cKDTree(others).query(points,k=1)
    return float(np.count_nonzero(dist < tau))/len(points)

def measure_overlap(src_points,dst_points,T,tau):
    """
    Overlap of two clouds under a transform

    The overlap is the smaller of the two coverage fractions
    (source points covered by the destination and vice
    versa) at radius tau after applying T to the source.
    """
    aligned = T.apply(src_points)
    dst_points = np.asarray(dst_points,dtype=np.float64)
    return min(coverage(aligned,dst_points,tau),
               coverage(dst_points,aligned,tau))

def _crop(points,projection,fraction):
    lo,hi = projection.min(),projection.max()
    width = hi - lo
    return (points[projection <= lo + fraction*width],
            points[projection >= hi - fraction*width])

def generate_scene(spec=None):
    """
    Generate a synthetic registration pair

    Arguments:
      spec (SceneSpec): scene settings (defaults if None)

    Returns:
      Scene: named tuple (src,dst,transform,overlap) where
        dst = transform(crop of the scene) + noise and
        overlap is the overlap actually achieved.
    """
    if spec is None:
        spec = SceneSpec()
    rng = np.random.default_rng(spec.seed)
    surfaces = sample_scene_surfaces(spec,rng)
    angle = rng.uniform(0.0,2.0*np.pi)
    direction = np.array([np.cos(angle),np.sin(angle),0.0])
    identity = RigidTransform.identity()
    tau = spec.overlap_radius
    if spec.overlap >= 1.0:
        src_points,dst_points = surfaces,surfaces
    else:
        projection = surfaces @ direction
        def overlap_at(fraction):
            p,q = _crop(surfaces,projection,fraction)
            return measure_overlap(p,q,identity,tau)
        lo,hi = 0.5,1.0
        bounds = (overlap_at(lo),overlap_at(hi))
        if not bounds[0] - spec.overlap_tolerance <= spec.overlap \
           <= bounds[1] + spec.overlap_tolerance:
            raise InvalidInputError("overlap %.3f can't be reached: "
                                    "achievable range is %.3f to %.3f" %
                                    (spec.overlap,bounds[0],bounds[1]))
        for _ in range(OVERLAP_SEARCH_STEPS):
            mid = 0.5*(lo + hi)
            if overlap_at(mid) < spec.overlap:
                lo = mid
            else:
                hi = mid
        src_points,dst_points = _crop(surfaces,projection,hi)
    if spec.noise_sigma > 0.0:
        dst_points = dst_points + rng.normal(0.0,spec.noise_sigma,
                                             size=dst_points.shape)
    T = random_transform(rng,spec.max_rotation,spec.max_translation)
    dst_points = T.apply(dst_points)
    overlap = measure_overlap(src_points,dst_points,T,tau)
    if abs(overlap - spec.overlap) > spec.overlap_tolerance:
        raise InvalidInputError("overlap %.3f can't be reached: achieved "
                                "%.3f" % (spec.overlap,overlap))
    logger.debug("scene %d: %d / %d points, overlap %.3f" %
                 (spec.seed,len(src_points),len(dst_points),overlap))
    return Scene(PointCloud(src_points),PointCloud(dst_points),T,overlap)

# Descriptors

def _neighbourhoods(points,radius):
    # Flattened neighbour lists: (centre index,neighbour index,starts)
    tree = cKDTree(points)
    lists = tree.query_ball_point(points,r=radius,return_sorted=True)
    counts = np.array([len(l) for l in lists],dtype=np.int64)
    neighbours = np.concatenate([np.asarray(l,dtype=np.int64)
                                 for l in lists])
    centres = np.repeat(np.arange(len(points)),counts)
    starts = np.concatenate([[0],np.cumsum(counts)[:-1]])
    return centres,neighbours,starts,counts

def _row_sums(values,rows,n):
    # Per-row sums of the columns of values (empty rows give 0)
    return np.stack([np.bincount(rows,weights=values[:,k],minlength=n)
                     for k in range(values.shape[1])],axis=1)

def local_statistics(points,radius):
    """
    Rigid-invariant statistics of each point's neighbourhood

    For the neighbours within ``radius`` (including the
    point itself) the statistics are: linearity, planarity
    and scattering from the covariance eigenvalues, the
    eigenvalue sum over radius^2, the centroid offset over
    radius, the centroid offset along the normal over
    radius, log point count and a radial histogram. Values
    are centred by fixed offsets.

    Returns:
      Tuple: (statistics,isolated) where statistics is an
        (n,11) array and isolated a boolean mask of points
        with no neighbour other than themselves.
    """
    points = np.asarray(points,dtype=np.float64)
    centres,neighbours,starts,counts = _neighbourhoods(points,radius)
    offsets = points[neighbours] - points[centres]
    n = counts[:,None].astype(np.float64)
    mean = np.add.reduceat(offsets,starts,axis=0)/n
    outer = (offsets[:,:,None]*offsets[:,None,:]).reshape(-1,9)
    second = (np.add.reduceat(outer,starts,axis=0)/n).reshape(-1,3,3)
    cov = second - mean[:,:,None]*mean[:,None,:]
    evals,evecs = np.linalg.eigh(cov)
    evals = np.clip(evals[:,::-1],0.0,None)
    normal = evecs[:,:,0]
    l1,l2,l3 = evals[:,0],evals[:,1],evals[:,2]
    isolated = counts < 2
    safe = np.where(l1 > 0.0,l1,1.0)
    shape = np.stack([(l1 - l2)/safe,(l2 - l3)/safe,l3/safe - 1.0/3.0],
                     axis=1)
    shape[l1 <= 0.0] = 0.0
    spread = evals.sum(axis=1)/radius**2
    offset = np.linalg.norm(mean,axis=1)/radius
    height = np.abs(np.sum(mean*normal,axis=1))/radius
    density = np.log1p(counts) - 2.5
    bins = np.minimum((np.linalg.norm(offsets,axis=1)/radius*
                       HISTOGRAM_BINS).astype(np.int64),HISTOGRAM_BINS - 1)
    histogram = np.zeros((len(points),HISTOGRAM_BINS))
    np.add.at(histogram,(centres,bins),1.0)
    histogram = histogram/n - 1.0/HISTOGRAM_BINS
    statistics = np.column_stack([shape,spread,offset,height,density,
                                  histogram])
    return statistics,isolated

def estimate_normals(points,radius,centres=None):
    """
    Surface normals from the neighbourhood covariance

    The normal at a centre is the eigenvector of the
    smallest eigenvalue of the covariance of the points
    within ``radius``; its sign is arbitrary.

    Arguments:
      points (array): the points to take neighbours from
      radius (float): neighbourhood radius
      centres (array): where to estimate normals (defaults
        to the points themselves)

    Returns:
      numpy.ndarray: (number of centres) x 3 unit normals.
    """
    points = np.asarray(points,dtype=np.float64)
    centres = points if centres is None else \
              np.asarray(centres,dtype=np.float64)
    lists = cKDTree(points).query_ball_point(centres,r=radius)
    counts = np.array([len(l) for l in lists],dtype=np.int64)
    rows = np.repeat(np.arange(len(centres)),counts)
    neighbours = np.concatenate([np.asarray(l,dtype=np.int64)
                                 for l in lists] +
                                [np.zeros(0,dtype=np.int64)])
    offsets = points[neighbours] - centres[rows]
    n = np.maximum(counts,1)[:,None].astype(np.float64)
    mean = _row_sums(offsets,rows,len(centres))/n
    outer = (offsets[:,:,None]*offsets[:,None,:]).reshape(-1,9)
    cov = (_row_sums(outer,rows,len(centres))/n).reshape(-1,3,3) - \
          mean[:,:,None]*mean[:,None,:]
    return np.linalg.eigh(cov)[1][:,:,0]

def spin_images(points,centres,normals,radius,bins,min_height):
    """
    Square-root spin images around each centre

    Each neighbour within ``radius`` of a centre is placed
    by its distance from the normal line through the centre
    and its distance from the tangent plane, and spread
    bilinearly over a ``bins`` x ``bins`` grid covering
    [0,radius] in both. Neighbours close to the tangent
    plane are faded out: their weight ramps from 0 at
    ``min_height`` to 1 at twice that. Bin totals are
    divided by the number of neighbours before taking
    square roots, so a flat neighbourhood gives zeros.

    Arguments:
      points (array): the points to take neighbours from
      centres (array): image centres
      normals (array): unit normal at each centre (either
        sign)
      radius (float): support radius
      bins (int): bins along each axis
      min_height (float): start of the tangent plane fade

    Returns:
      numpy.ndarray: (number of centres) x bins^2 array.
    """
    points = np.asarray(points,dtype=np.float64)
    centres = np.asarray(centres,dtype=np.float64)
    normals = np.asarray(normals,dtype=np.float64)
    tree = cKDTree(points)
    width = radius/bins
    images = np.zeros((len(centres),bins*bins))
    for start in range(0,len(centres),SPIN_IMAGE_CHUNK):
        chunk = centres[start:start+SPIN_IMAGE_CHUNK]
        lists = tree.query_ball_point(chunk,r=radius)
        counts = np.array([len(l) for l in lists],dtype=np.int64)
        if counts.sum() == 0:
            continue
        rows = np.repeat(np.arange(len(chunk)),counts)
        offsets = points[np.concatenate([np.asarray(l,dtype=np.int64)
                                         for l in lists])] - chunk[rows]
        height = np.abs(np.sum(offsets*normals[start+rows],axis=1))
        axial = np.sqrt(np.maximum(np.sum(offsets**2,axis=1) - height**2,
                                   0.0))
        if min_height > 0.0:
            weight = np.clip(height/min_height - 1.0,0.0,1.0)
        else:
            weight = np.ones(len(height))
        a = np.clip(axial/width - 0.5,0.0,bins - 1.0)
        h = np.clip(height/width - 0.5,0.0,bins - 1.0)
        a0 = np.floor(a).astype(np.int64)
        h0 = np.floor(h).astype(np.int64)
        fa = a - a0
        fh = h - h0
        a1 = np.minimum(a0 + 1,bins - 1)
        h1 = np.minimum(h0 + 1,bins - 1)
        size = len(chunk)*bins*bins
        base = rows*bins*bins
        histogram = np.zeros(size)
        for ia,wa in ((a0,1.0 - fa),(a1,fa)):
            for ih,wh in ((h0,1.0 - fh),(h1,fh)):
                histogram += np.bincount(base + ia*bins + ih,
                                         weights=weight*wa*wh,
                                         minlength=size)
        histogram = histogram.reshape(len(chunk),-1)/ \
                    np.maximum(counts,1)[:,None]
        images[start:start+len(chunk)] = np.sqrt(histogram)
    return images

def _embedding(seed,name,rows,cols):
    # Fixed random matrix with orthonormal rows (rows <= cols)
    # or orthonormal columns
    A = splitmix_uniform(stream_seed(seed,name),
                         (max(rows,cols),min(rows,cols)),-1.0,1.0)
    Q,_ = np.linalg.qr(A)
    if rows <= cols:
        return Q.T
    return Q

def raw_descriptors(cloud,spec):
    """
    Local statistics over all radii plus a spin image

    The statistics blocks are down-weighted by
    STATISTICS_WEIGHT; the spin image uses normals from the
    smallest radius.

    Returns:
      Tuple: (descriptors,isolated) with descriptors of
        width 11 x number of radii + spin_bins^2 and
        isolated a mask of points isolated at the smallest
        radius.
    """
    if any([not r > 0.0 for r in spec.radii]):
        raise ConfigError("neighbourhood radii must be positive")
    radii = sorted(spec.radii)
    blocks = []
    isolated = None
    for radius in radii:
        statistics,alone = local_statistics(cloud.points,radius)
        blocks.append(STATISTICS_WEIGHT*statistics)
        if isolated is None:
            isolated = alone
    normals = estimate_normals(cloud.points,radii[0])
    blocks.append(spin_images(cloud.points,cloud.points,normals,
                              spec.spin_radius,spec.spin_bins,
                              spec.min_height))
    return np.concatenate(blocks,axis=1),isolated

def handcrafted_features(cloud,spec,return_isolated=False):
    """
    Attach handcrafted descriptors to a cloud

    The raw descriptors are mapped through a fixed random
    matrix with orthonormal rows (or columns, if
    ``spec.point_dim`` is narrower than the raw width) and
    each row is scaled to norm ``spec.point_norm``.

    Arguments:
      cloud (PointCloud): points to describe
      spec (FeatureSpec): descriptor settings
      return_isolated (bool): if True then also return the
        number of isolated points

    Returns:
      PointCloud: the cloud with features (and the isolated
        count if requested).
    """
    if len(cloud) == 0:
        raise InvalidInputError("can't describe an empty cloud")
    raw,isolated = raw_descriptors(cloud,spec)
    W = _embedding(spec.projection_seed,'features.point',
                   raw.shape[1],spec.point_dim)
    features = raw @ W
    norms = np.linalg.norm(features,axis=1,keepdims=True)
    features = spec.point_norm*features/np.maximum(norms,1e-12)
    num_isolated = int(np.count_nonzero(isolated))
    if num_isolated:
        logger.warning("%d isolated points described from the point "
                       "alone" % num_isolated)
    described = cloud.with_features(features)
    if return_isolated:
        return described,num_isolated
    return described

def superpoint_features(dense,assignment,superpoints,spec):
    """
    Pool dense descriptors into superpoint features

    Each superpoint is described by the mean descriptor of
    its patch (over ``spec.point_norm``), a wide spin image
    of the dense points around it and the normalised
    covariance spectrum, spread and size of the patch,
    mapped to ``spec.backbone_dim``.

    Arguments:
      dense (PointCloud): dense points with features
      assignment (PatchAssignment): point-to-node grouping
      superpoints (PointCloud): the kept superpoints (one
        per patch)
      spec (FeatureSpec): descriptor settings

    Returns:
      PointCloud: the superpoints with features.
    """
    if dense.features is None:
        raise InvalidInputError("dense points have no features")
    if len(superpoints) != len(assignment):
        raise InvalidInputError("%d superpoints for %d patches" %
                                (len(superpoints),len(assignment)))
    order = np.concatenate(assignment.patches)
    sizes = assignment.patch_sizes()
    starts = np.concatenate([[0],np.cumsum(sizes)[:-1]])
    n = sizes[:,None].astype(np.float64)
    mean = np.add.reduceat(dense.features[order],starts,axis=0)/n
    offsets = dense.points[order] - \
              np.repeat(superpoints.points,sizes,axis=0)
    centroid = np.add.reduceat(offsets,starts,axis=0)/n
    outer = (offsets[:,:,None]*offsets[:,None,:]).reshape(-1,9)
    cov = (np.add.reduceat(outer,starts,axis=0)/n).reshape(-1,3,3) - \
          centroid[:,:,None]*centroid[:,None,:]
    evals = np.clip(np.linalg.eigvalsh(cov)[:,::-1],0.0,None)
    total = evals.sum(axis=1)
    spectrum = evals/np.where(total > 0.0,total,1.0)[:,None]
    normals = estimate_normals(dense.points,2.0*min(spec.radii),
                               superpoints.points)
    context = spin_images(dense.points,superpoints.points,normals,
                          spec.superpoint_spin_radius,
                          spec.superpoint_spin_bins,spec.min_height)
    raw = np.column_stack([mean/spec.point_norm,context,
                           STATISTICS_WEIGHT*spectrum,np.sqrt(total),
                           STATISTICS_WEIGHT*np.log1p(sizes)])
    W = _embedding(spec.projection_seed,
                   'features.superpoint.%d' % raw.shape[1],
                   raw.shape[1],spec.backbone_dim)
    return superpoints.with_features(raw @ W)

# Ground truth

def ground_truth_correspondences(src,dst,T_gt,tau):
    """
    Ground-truth point matches between two clouds

    A pair (x,y) matches if q_y is the nearest neighbour of
    T(p_x), T(p_x) is the nearest neighbour of q_y and the
    distance is less than tau. Unmatched points are those
    with no counterpart closer than tau.

    Arguments:
      src, dst (PointCloud or array): the two clouds
      T_gt (RigidTransform): transform mapping src to dst
      tau (float): matching radius

    Returns:
      GroundTruth: named tuple (matches,unmatched_src,
        unmatched_dst) with matches an (M,2) index array.
    """
    if not tau > 0.0:
        raise ConfigError("matching radius must be positive")
    p = T_gt.apply(getattr(src,'points',src))
    q = np.asarray(getattr(dst,'points',dst),dtype=np.float64)
    d_pq,nn_pq = cKDTree(q).query(p,k=1)
    d_qp,nn_qp = cKDTree(p).query(q,k=1)
    x = np.nonzero((d_pq < tau) &
                   (nn_qp[nn_pq] == np.arange(len(p))))[0]
    matches = np.stack([x,nn_pq[x]],axis=1).astype(np.int64)
    return GroundTruth(matches.reshape(-1,2),
                       np.nonzero(d_pq >= tau)[0],
                       np.nonzero(d_qp >= tau)[0])

def patch_overlap_ratios(src_points,dst_points,assign_P,assign_Q,
                         T_gt,tau):
    """
    Overlap ratio of every pair of patches

    o_ij is the fraction of the points of source patch i
    having a destination point of patch j closer than tau
    after applying T_gt.

    Returns:
      numpy.ndarray: (patches in P) x (patches in Q) array.
    """
    p = T_gt.apply(src_points)
    q = np.asarray(dst_points,dtype=np.float64)
    lists = cKDTree(q).query_ball_point(p,r=tau)
    counts = np.array([len(l) for l in lists],dtype=np.int64)
    ratios = np.zeros((len(assign_P),len(assign_Q)))
    if counts.sum() == 0:
        return ratios
    x = np.repeat(np.arange(len(p)),counts)
    y = np.concatenate([np.asarray(l,dtype=np.int64) for l in lists])
    close = np.linalg.norm(p[x] - q[y],axis=1) < tau
    x,y = x[close],y[close]
    keys = np.unique(np.stack([assign_P.patch_of_point[x],
                               assign_Q.patch_of_point[y],x],axis=1),
                     axis=0)
    np.add.at(ratios,(keys[:,0],keys[:,1]),1.0)
    return ratios/assign_P.patch_sizes()[:,None]
