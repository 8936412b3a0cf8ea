#!/usr/bin/env python
#
# attention: geometric self-attention, cross-attention and the stack
"""
Geometric transformer stack (forward pass only)

The stack projects backbone features to width d_t, then runs
N_t rounds of:

- geometric self-attention on each cloud, with the geometric
  structure embedding added to the key term;
- feature-based cross-attention from each cloud to the other;

and finally projects to the output width. Every attention call
is wrapped in a block: output projection, residual, layer
normalisation, two-layer ReLU feed-forward, residual and a second
layer normalisation.

Weights are not trained here: they are drawn uniformly from
[-1/sqrt(d_t),1/sqrt(d_t)] using the splitmix64 generator seeded
per matrix name, so a given seed always gives the same weights.
Layer normalisation gains start at 1 and all biases at 0.
"""

import logging
import numpy as np
from .core import ConfigError
from .core import InvalidInputError
from .core import FormatError
from .core import splitmix_uniform
from .core import stream_seed
from .config import AttentionConfig
from .embedding import geometric_structure_embedding
from .fileio import read_weight_matrices
from .fileio import write_weight_matrices

logger = logging.getLogger(__name__)

# Constants
LAYER_NORM_EPS = 1e-5
BLOCK_MATRICES = ('query','key','value','output',
                  'ffn_hidden','ffn_output')
BLOCK_VECTORS = ('ffn_hidden_bias','ffn_output_bias',
                 'norm1_gain','norm1_bias',
                 'norm2_gain','norm2_bias')

# Classes

class AttentionModule:
    """
    Weights of one attention block (self or cross)

    Attributes are the float32 matrices 'query', 'key',
    'value', 'geometric' (self-attention only, otherwise
    None), 'output', 'ffn_hidden', 'ffn_output' and the
    vectors 'ffn_hidden_bias', 'ffn_output_bias',
    'norm1_gain', 'norm1_bias', 'norm2_gain', 'norm2_bias'.
    """
    def __init__(self,matrices,prefix,heads):
        self.name = prefix
        self.heads = heads
        for name in BLOCK_MATRICES:
            setattr(self,name,matrices["%s.%s" % (prefix,name)])
        for name in BLOCK_VECTORS:
            setattr(self,name,matrices["%s.%s" % (prefix,name)]
                    .reshape(-1))
        self.geometric = matrices.get("%s.geometric" % prefix)
        self.d_t = self.query.shape[0]

    def with_matrix(self,name,value):
        """
        Return a copy with one weight replaced

        Used for ablations, e.g. zeroing the geometric
        projection.
        """
        module = AttentionModule.__new__(AttentionModule)
        module.__dict__.update(self.__dict__)
        setattr(module,name,None if value is None
                else np.asarray(value,dtype=np.float32))
        return module

class AttentionWeights:
    """
    All weights of a geometric transformer stack

    Matrices are held by name:

    - 'input': backbone width x d_t
    - 'output': d_t x output width
    - 'embedding.distance', 'embedding.angular': d_t x d_t
    - 'layers.<t>.self.<name>', 'layers.<t>.cross.<name>'
      for the attention blocks of layer t

    Arguments:
      matrices (dict): mapping of names to arrays
      heads (int): number of attention heads
      num_layers (int): number of layers
    """
    def __init__(self,matrices,heads,num_layers):
        self.matrices = { name: np.asarray(m,dtype=np.float32)
                          for name,m in matrices.items() }
        self.heads = heads
        self.num_layers = num_layers
        self._check()

    def _check(self):
        for name in ('input','output',
                     'embedding.distance','embedding.angular'):
            if name not in self.matrices:
                raise FormatError("missing weight matrix '%s'" % name)
        d_t = self.d_t
        if self.heads < 1 or d_t % self.heads:
            raise ConfigError("d_t (%d) must be divisible by the number "
                              "of heads (%d)" % (d_t,self.heads))
        for name in ('embedding.distance','embedding.angular'):
            if self.matrices[name].shape != (d_t,d_t):
                raise FormatError("'%s' must be %d x %d" % (name,d_t,d_t))
        if self.matrices['output'].shape[0] != d_t:
            raise FormatError("'output' must have %d rows" % d_t)
        for t in range(self.num_layers):
            for kind in ('self','cross'):
                prefix = "layers.%d.%s" % (t,kind)
                names = ["%s.%s" % (prefix,n)
                         for n in BLOCK_MATRICES + BLOCK_VECTORS]
                if kind == 'self':
                    names.append("%s.geometric" % prefix)
                for name in names:
                    if name not in self.matrices:
                        raise FormatError("missing weight matrix '%s'" %
                                          name)
                for name in ('query','key','value','output'):
                    shape = self.matrices["%s.%s" % (prefix,name)].shape
                    if shape != (d_t,d_t):
                        raise FormatError("'%s.%s' must be %d x %d" %
                                          (prefix,name,d_t,d_t))

    @classmethod
    def initialize(cls,seed,input_dim,d_t,output_dim,num_layers,
                   heads=4,ffn_multiplier=2):
        """
        Create deterministic weights from a seed

        Arguments:
          seed (int): base seed
          input_dim (int): backbone feature width
          d_t (int): attention width
          output_dim (int): width of the hybrid features
          num_layers (int): number of self/cross layers
          heads (int): number of attention heads
          ffn_multiplier (int): hidden width of the feed
            forward layers as a multiple of d_t
        """
        if d_t < 1 or input_dim < 1 or output_dim < 1:
            raise ConfigError("weight dimensions must be positive")
        bound = 1.0/np.sqrt(d_t)
        hidden = ffn_multiplier*d_t
        matrices = {}
        def uniform(name,rows,cols):
            matrices[name] = splitmix_uniform(stream_seed(seed,name),
                                              (rows,cols),
                                              -bound,bound)
        uniform('input',input_dim,d_t)
        uniform('output',d_t,output_dim)
        uniform('embedding.distance',d_t,d_t)
        uniform('embedding.angular',d_t,d_t)
        for t in range(num_layers):
            for kind in ('self','cross'):
                prefix = "layers.%d.%s" % (t,kind)
                for name in ('query','key','value','output'):
                    uniform("%s.%s" % (prefix,name),d_t,d_t)
                if kind == 'self':
                    uniform("%s.geometric" % prefix,d_t,d_t)
                uniform("%s.ffn_hidden" % prefix,d_t,hidden)
                uniform("%s.ffn_output" % prefix,hidden,d_t)
                matrices["%s.ffn_hidden_bias" % prefix] = np.zeros((1,hidden))
                matrices["%s.ffn_output_bias" % prefix] = np.zeros((1,d_t))
                for norm in ('norm1','norm2'):
                    matrices["%s.%s_gain" % (prefix,norm)] = np.ones((1,d_t))
                    matrices["%s.%s_bias" % (prefix,norm)] = np.zeros((1,d_t))
        logger.debug("initialised %d weight matrices (seed %d)" %
                     (len(matrices),seed))
        return cls(matrices,heads,num_layers)

    @classmethod
    def from_config(cls,config):
        """
        Create the seeded weights described by a RunConfig
        """
        attention = config.attention
        return cls.initialize(config.seed,
                              config.features.backbone_dim,
                              config.embedding.d_t,
                              attention.output_dim,
                              attention.num_layers,
                              heads=attention.heads,
                              ffn_multiplier=attention.ffn_multiplier)

    @classmethod
    def load(cls,path,heads=4):
        """
        Load weights from a weights file
        """
        num_layers,matrices = read_weight_matrices(path)
        logger.debug("%s: %d layers, %d matrices" % (path,num_layers,
                                                     len(matrices)))
        return cls(matrices,heads,num_layers)

    def save(self,path):
        """
        Save the weights to a weights file
        """
        write_weight_matrices(path,self.num_layers,self.matrices)

    @property
    def d_t(self):
        return self.matrices['input'].shape[1]

    @property
    def input_dim(self):
        return self.matrices['input'].shape[0]

    @property
    def output_dim(self):
        return self.matrices['output'].shape[1]

    @property
    def W_D(self):
        return self.matrices['embedding.distance']

    @property
    def W_A(self):
        return self.matrices['embedding.angular']

    def module(self,layer,kind):
        """
        Return the weights of one attention block

        Arguments:
          layer (int): layer index
          kind (str): 'self' or 'cross'
        """
        if not 0 <= layer < self.num_layers:
            raise ConfigError("no layer %d (stack has %d)" %
                              (layer,self.num_layers))
        return AttentionModule(self.matrices,
                               "layers.%d.%s" % (layer,kind),
                               self.heads)

# Functions

def _dtype(precision):
    if precision == 'single':
        return np.float32
    elif precision == 'double':
        return np.float64
    raise ConfigError("unknown precision '%s'" % precision)

def _matmul(a,b,dtype):
    # Accumulate in double precision, store at working precision
    return np.matmul(np.asarray(a,dtype=np.float64),
                     np.asarray(b,dtype=np.float64)).astype(dtype)

def _as_features(X,width,name):
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != width:
        raise InvalidInputError("%s: expected n x %d features, got shape "
                                "%s" % (name,width,X.shape))
    if X.shape[0] < 1:
        raise InvalidInputError("%s: no feature rows" % name)
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("%s: non-finite features" % name)
    return X

def _split_heads(x,heads):
    # (n,d) -> (heads,n,d/heads)
    n,d = x.shape
    return x.astype(np.float64).reshape(n,heads,d//heads).transpose(1,0,2)

def _merge_heads(x):
    # (heads,n,dh) -> (n,heads*dh)
    h,n,dh = x.shape
    return x.transpose(1,0,2).reshape(n,h*dh)

def softmax(scores,axis=-1):
    """
    Numerically stable softmax (double precision)
    """
    scores = np.asarray(scores,dtype=np.float64)
    e = np.exp(scores - np.max(scores,axis=axis,keepdims=True))
    return e/np.sum(e,axis=axis,keepdims=True)

def layer_norm(x,gain,bias,dtype=np.float64):
    """
    Layer normalisation over the feature dimension
    """
    x = np.asarray(x,dtype=np.float64)
    mean = x.mean(axis=-1,keepdims=True)
    var = x.var(axis=-1,keepdims=True)
    y = (x - mean)/np.sqrt(var + LAYER_NORM_EPS)
    return (y*np.asarray(gain,dtype=np.float64) +
            np.asarray(bias,dtype=np.float64)).astype(dtype)

def _attend(queries,keys,values,heads,dtype,geometric=None):
    # Multi-head attention; returns the merged message and the
    # attention weights (heads,n,m)
    dh = queries.shape[1]//heads
    qh = _split_heads(queries,heads)
    kh = _split_heads(keys,heads)
    vh = _split_heads(values,heads)
    scores = np.einsum('hid,hjd->hij',qh,kh)
    if geometric is not None:
        n,m,d = geometric.shape
        gh = geometric.astype(np.float64).reshape(n,m,heads,dh)
        scores = scores + np.einsum('hid,ijhd->hij',qh,gh)
    attention = softmax(scores/np.sqrt(dh),axis=-1)
    message = _merge_heads(np.einsum('hij,hjd->hid',attention,vh))
    return message.astype(dtype),attention.astype(dtype)

def geometric_self_attention_message(X,geo,module,precision='single'):
    """
    Geometric self-attention before the block

    Scores are e_ij = q_i . (k_j + r_ij W^R)/sqrt(d_h) per
    head, where the projected embedding r_ij W^R is split
    into head slices alongside the queries and keys. If
    ``geo`` is None, or the module has no geometric
    projection, this is plain self-attention.

    Arguments:
      X (array): n x d_t features
      geo (GeoEmbeddingTensor): embedding for the n points
      module (AttentionModule): self-attention weights
      precision (str): 'single' or 'double'

    Returns:
      Tuple: (message,attention) with message n x d_t and
        attention heads x n x n.
    """
    dtype = _dtype(precision)
    X = _as_features(X,module.d_t,"X").astype(dtype)
    n = len(X)
    q = _matmul(X,module.query,dtype)
    k = _matmul(X,module.key,dtype)
    v = _matmul(X,module.value,dtype)
    geometric = None
    if geo is not None and module.geometric is not None:
        if geo.values.shape[:2] != (n,n):
            raise InvalidInputError("embedding is for %d points but X has "
                                    "%d rows" % (geo.values.shape[0],n))
        geometric = _matmul(geo.values.astype(dtype).reshape(n*n,-1),
                            module.geometric,dtype).reshape(n,n,-1)
    return _attend(q,k,v,module.heads,dtype,geometric)

def feature_cross_attention_message(X_P,X_Q,module,precision='single'):
    """
    Feature-based cross-attention before the block

    Rows of X_P attend to the rows of X_Q.

    Returns:
      Tuple: (message,attention) with message n x d_t and
        attention heads x n x m.
    """
    dtype = _dtype(precision)
    X_P = _as_features(X_P,module.d_t,"X_P").astype(dtype)
    X_Q = _as_features(X_Q,module.d_t,"X_Q").astype(dtype)
    q = _matmul(X_P,module.query,dtype)
    k = _matmul(X_Q,module.key,dtype)
    v = _matmul(X_Q,module.value,dtype)
    return _attend(q,k,v,module.heads,dtype)

def transformer_block(X,message,module,precision='single'):
    """
    Output projection, residual, norm, feed-forward, residual, norm
    """
    dtype = _dtype(precision)
    out = _matmul(message,module.output,dtype)
    x = layer_norm(np.asarray(X,dtype=np.float64) + out,
                   module.norm1_gain,module.norm1_bias,dtype)
    hidden = _matmul(x,module.ffn_hidden,np.float64) + module.ffn_hidden_bias
    hidden = np.maximum(hidden,0.0).astype(dtype)
    y = _matmul(hidden,module.ffn_output,np.float64) + module.ffn_output_bias
    return layer_norm(x.astype(np.float64) + y,
                      module.norm2_gain,module.norm2_bias,dtype)

def geometric_self_attention(X,geo,module,precision='single'):
    """
    Geometric self-attention wrapped in the transformer block

    Returns:
      numpy.ndarray: n x d_t updated features.
    """
    message,_ = geometric_self_attention_message(X,geo,module,precision)
    return transformer_block(X,message,module,precision)

def feature_cross_attention(X_P,X_Q,module,precision='single'):
    """
    Cross-attention from X_P to X_Q wrapped in the block

    Returns:
      numpy.ndarray: updated features for the rows of X_P.
    """
    message,_ = feature_cross_attention_message(X_P,X_Q,module,precision)
    return transformer_block(X_P,message,module,precision)

def transformer_stack(F_P,F_Q,P_hat,Q_hat,w,cfg,N_t=None,
                      attention_cfg=None):
    """
    Run the geometric transformer stack on two superpoint sets

    Arguments:
      F_P, F_Q (array): backbone features of the superpoints
      P_hat, Q_hat (PointCloud): superpoint coordinates
      w (AttentionWeights): stack weights
      cfg (EmbeddingConfig): embedding settings
      N_t (int): number of rounds (defaults to the number
        of layers in the weights)
      attention_cfg (AttentionConfig): precision, ablation
        and cross update settings (defaults are used if
        not supplied)

    Returns:
      Tuple: (H_P,H_Q) hybrid features.
    """
    if attention_cfg is None:
        attention_cfg = AttentionConfig()
    if N_t is None:
        N_t = w.num_layers
    if N_t > w.num_layers:
        raise ConfigError("N_t = %d but weights only have %d layers" %
                          (N_t,w.num_layers))
    if cfg.d_t != w.d_t:
        raise ConfigError("embedding width %d doesn't match weights "
                          "(%d)" % (cfg.d_t,w.d_t))
    precision = attention_cfg.precision
    dtype = _dtype(precision)
    F_P = _as_features(F_P,w.input_dim,"F_P")
    F_Q = _as_features(F_Q,w.input_dim,"F_Q")
    if len(F_P) != len(P_hat) or len(F_Q) != len(Q_hat):
        raise InvalidInputError("feature rows don't match superpoint "
                                "counts")
    X_P = _matmul(F_P,w.matrices['input'],dtype)
    X_Q = _matmul(F_Q,w.matrices['input'],dtype)
    if N_t > 0:
        geo_P = geo_Q = None
        if attention_cfg.geometric:
            geo_P = geometric_structure_embedding(P_hat,cfg,w.W_D,w.W_A)
            geo_Q = geometric_structure_embedding(Q_hat,cfg,w.W_D,w.W_A)
        for t in range(N_t):
            self_module = w.module(t,'self')
            cross_module = w.module(t,'cross')
            X_P = geometric_self_attention(X_P,geo_P,self_module,precision)
            X_Q = geometric_self_attention(X_Q,geo_Q,self_module,precision)
            new_P = feature_cross_attention(X_P,X_Q,cross_module,precision)
            if attention_cfg.cross_update == 'sequential':
                X_Q = feature_cross_attention(X_Q,new_P,cross_module,
                                              precision)
            else:
                X_Q = feature_cross_attention(X_Q,X_P,cross_module,
                                              precision)
            X_P = new_P
    H_P = _matmul(X_P,w.matrices['output'],dtype)
    H_Q = _matmul(X_Q,w.matrices['output'],dtype)
    logger.debug("transformer stack: %d + %d superpoints, %d rounds" %
                 (len(H_P),len(H_Q),N_t))
    return H_P,H_Q
