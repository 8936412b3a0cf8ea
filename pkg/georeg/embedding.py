#!/usr/bin/env python
#
# embedding: rigid-invariant geometric structure embedding
"""
Geometric structure embedding of a superpoint set

For every pair of superpoints (i,j) the embedding combines a
sinusoidal encoding of their distance with sinusoidal encodings
of the angles that the vector p_j - p_i makes with the vectors
from p_i to its k nearest neighbours. Only distances and angles
are used, so the result doesn't change under rigid motion of
the superpoints.
"""

import logging
from dataclasses import dataclass
import numpy as np
from .core import ConfigError
from .core import InvalidInputError

logger = logging.getLogger(__name__)

# Classes

@dataclass(frozen=True,eq=False)
class GeoEmbeddingTensor:
    """
    Geometric structure embedding r_ij (n x n x d_t)
    """
    values: np.ndarray

    @property
    def size(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[2]

# Functions

def _check_width(d_t):
    if d_t < 2 or d_t % 2:
        raise ConfigError("embedding width must be a positive even "
                          "integer (got %s)" % d_t)

def sinusoidal_embedding(values,temperature,d_t):
    """
    Sinusoidal encoding of an array of values

    Entry 2k of the encoding of v is
    sin(v/temperature/10000^(2k/d_t)) and entry 2k+1 is the
    cosine of the same argument.

    Arguments:
      values (array): values to encode (any shape)
      temperature (float): temperature (positive)
      d_t (int): encoding width (even)

    Returns:
      numpy.ndarray: array of shape values.shape + (d_t,).
    """
    _check_width(d_t)
    if not temperature > 0.0:
        raise ConfigError("temperature must be positive (got %s)" %
                          temperature)
    values = np.asarray(values,dtype=np.float64)
    omega = 1.0/np.power(10000.0,np.arange(0,d_t,2,dtype=np.float64)/d_t)
    arg = (values/temperature)[...,None]*omega
    out = np.empty(values.shape + (d_t,),dtype=np.float64)
    out[...,0::2] = np.sin(arg)
    out[...,1::2] = np.cos(arg)
    return out

def sinusoidal_embed(value,temperature,d_t):
    """
    Sinusoidal encoding of a single value

    Returns:
      numpy.ndarray: vector of length d_t.
    """
    return sinusoidal_embedding(float(value),temperature,d_t)

def pairwise_distances(points):
    """
    Return the matrix of Euclidean distances between points
    """
    points = np.asarray(points,dtype=np.float64)
    return np.linalg.norm(points[:,None,:] - points[None,:,:],axis=-1)

def pairwise_distance_embedding(superpoints,cfg):
    """
    Sinusoidal encoding of all pair-wise superpoint distances

    Arguments:
      superpoints (PointCloud): superpoints
      cfg (EmbeddingConfig): embedding settings

    Returns:
      numpy.ndarray: n x n x d_t array.
    """
    if len(superpoints) < 1:
        raise InvalidInputError("need at least one superpoint")
    return sinusoidal_embedding(pairwise_distances(superpoints.points),
                                cfg.sigma_d,cfg.d_t)

def nearest_neighbours(points,k):
    """
    Return the k nearest neighbours of each point

    The point itself is excluded and ties are broken by
    the lower index.

    Returns:
      numpy.ndarray: n x k integer array.
    """
    n = len(points)
    if n < k + 1:
        raise ConfigError("angular embedding needs at least %d "
                          "superpoints (k = %d), got %d" % (k+1,k,n))
    dist = pairwise_distances(points)
    np.fill_diagonal(dist,np.inf)
    return np.argsort(dist,axis=1,kind='stable')[:,:k]

def triplet_angles(points,k):
    """
    Return the triplet angles and the neighbour table

    Angle [i,j,x] is the angle between p_nx - p_i and
    p_j - p_i where nx = neighbours[i,x], computed as
    atan2(|u x v|,u.v). The angle for j = i is 0.

    Returns:
      Tuple: (angles,neighbours) with angles an n x n x k
        array in [0,pi] and neighbours an n x k array.
    """
    points = np.asarray(points,dtype=np.float64)
    neighbours = nearest_neighbours(points,k)
    n = len(points)
    to_neighbour = points[neighbours] - points[:,None,:]
    to_other = points[None,:,:] - points[:,None,:]
    angles = np.empty((n,n,k),dtype=np.float64)
    for x in range(k):
        u = to_neighbour[:,x,:][:,None,:]
        cross = np.linalg.norm(np.cross(u,to_other),axis=-1)
        dot = np.sum(u*to_other,axis=-1)
        angles[:,:,x] = np.arctan2(cross,dot)
    idx = np.arange(n)
    angles[idx,idx,:] = 0.0
    return angles,neighbours

def triplet_angular_embedding(superpoints,cfg):
    """
    Sinusoidal encoding of the triplet-wise angles

    Arguments:
      superpoints (PointCloud): superpoints
      cfg (EmbeddingConfig): embedding settings

    Returns:
      Tuple: (embedding,neighbours) where embedding is an
        n x n x k x d_t array indexed [i,j,x] and neighbours
        is the n x k neighbour index table.
    """
    angles,neighbours = triplet_angles(superpoints.points,cfg.k)
    return sinusoidal_embedding(angles,cfg.sigma_a,cfg.d_t),neighbours

def geometric_structure_embedding(superpoints,cfg,W_D,W_A):
    """
    Geometric structure embedding r_ij

    r_ij = r^D_ij W_D + max_x (r^A_ijx W_A), the maximum being
    taken component-wise over the k neighbours. When the
    angular embedding is disabled in the configuration only
    the distance term is used.

    Arguments:
      superpoints (PointCloud): superpoints
      cfg (EmbeddingConfig): embedding settings
      W_D (array): d_t x d_t distance projection
      W_A (array): d_t x d_t angular projection

    Returns:
      GeoEmbeddingTensor: the embedding.
    """
    W_D = np.asarray(W_D,dtype=np.float64)
    W_A = np.asarray(W_A,dtype=np.float64)
    if W_D.shape != (cfg.d_t,cfg.d_t) or W_A.shape != (cfg.d_t,cfg.d_t):
        raise ConfigError("embedding projections must be %d x %d" %
                          (cfg.d_t,cfg.d_t))
    r = pairwise_distance_embedding(superpoints,cfg) @ W_D
    if cfg.angular:
        angles,_ = triplet_angles(superpoints.points,cfg.k)
        pooled = None
        # One neighbour at a time keeps memory at n x n x d_t
        for x in range(cfg.k):
            term = sinusoidal_embedding(angles[:,:,x],cfg.sigma_a,
                                        cfg.d_t) @ W_A
            pooled = term if pooled is None else np.maximum(pooled,term)
        r = r + pooled
    logger.debug("geometric structure embedding: %d superpoints, "
                 "d_t %d" % (len(superpoints),cfg.d_t))
    return GeoEmbeddingTensor(r)
