#!/usr/bin/env python
#
# fileio: reading and writing point clouds, features and correspondences
import os
import csv
import json
import struct
import logging
import numpy as np
from .core import FormatError
from .core import InvalidInputError
from .geometry import PointCloud

logger = logging.getLogger(__name__)

# Constants
PLY_TYPES = {
    'char': 'i1', 'int8': 'i1',
    'uchar': 'u1', 'uint8': 'u1',
    'short': 'i2', 'int16': 'i2',
    'ushort': 'u2', 'uint16': 'u2',
    'int': 'i4', 'int32': 'i4',
    'uint': 'u4', 'uint32': 'u4',
    'float': 'f4', 'float32': 'f4',
    'double': 'f8', 'float64': 'f8',
}
PLY_FORMATS = {
    'ascii': None,
    'binary_little_endian': '<',
    'binary_big_endian': '>',
}
FEATURE_MAGIC = b'GRFT'
WEIGHTS_MAGIC = b'GRWT'

# PLY

class _PlyElement:
    # Element declared in a PLY header
    def __init__(self,name,count):
        self.name = name
        self.count = count
        self.properties = []
        self.has_lists = False

    def add_property(self,tokens):
        if tokens[1] == 'list':
            self.has_lists = True
            self.properties.append((tokens[-1],None))
        else:
            if tokens[1] not in PLY_TYPES:
                raise FormatError("unknown PLY property type '%s'" %
                                  tokens[1])
            self.properties.append((tokens[2],PLY_TYPES[tokens[1]]))

    def dtype(self,order):
        return np.dtype([(name,order+kind)
                         for name,kind in self.properties])

def _read_ply_header(fp,path):
    # Returns (format,elements)
    if fp.readline().strip() != b'ply':
        raise FormatError("%s: not a PLY file" % path)
    fmt = None
    elements = []
    while True:
        line = fp.readline()
        if not line:
            raise FormatError("%s: missing end_header" % path)
        tokens = line.decode('ascii',errors='replace').split()
        if not tokens or tokens[0] in ('comment','obj_info'):
            continue
        if tokens[0] == 'end_header':
            break
        try:
            if tokens[0] == 'format':
                fmt = tokens[1]
                if fmt not in PLY_FORMATS:
                    raise FormatError("%s: unsupported PLY format '%s'" %
                                      (path,fmt))
            elif tokens[0] == 'element':
                elements.append(_PlyElement(tokens[1],int(tokens[2])))
            elif tokens[0] == 'property':
                elements[-1].add_property(tokens)
        except (IndexError,ValueError):
            raise FormatError("%s: bad PLY header line '%s'" %
                              (path,line.strip()))
    if fmt is None:
        raise FormatError("%s: no format line in PLY header" % path)
    return fmt,elements

def read_ply(path):
    """
    Read the vertices of a PLY file as a PointCloud

    ASCII and binary files are supported. The vertex
    element must have 'x', 'y' and 'z' properties;
    any other properties are ignored.

    Arguments:
      path (str): path to the PLY file

    Returns:
      PointCloud: the vertex coordinates.
    """
    with open(path,'rb') as fp:
        fmt,elements = _read_ply_header(fp,path)
        order = PLY_FORMATS[fmt]
        vertex = None
        for element in elements:
            if element.name == 'vertex':
                vertex = element
                break
            # Skip elements preceding the vertices
            if order is None:
                for i in range(element.count):
                    fp.readline()
            elif element.has_lists:
                raise FormatError("%s: can't skip list element '%s' "
                                  "before vertices" % (path,element.name))
            else:
                fp.seek(element.count*element.dtype(order).itemsize,
                        os.SEEK_CUR)
        if vertex is None:
            raise FormatError("%s: no vertex element" % path)
        names = [name for name,_ in vertex.properties]
        for axis in ('x','y','z'):
            if axis not in names:
                raise FormatError("%s: vertex has no '%s' property" %
                                  (path,axis))
        if order is None:
            rows = []
            for i in range(vertex.count):
                tokens = fp.readline().split()
                try:
                    rows.append([float(tokens[names.index(axis)])
                                 for axis in ('x','y','z')])
                except (IndexError,ValueError):
                    raise FormatError("%s: bad vertex line %d" %
                                      (path,i+1))
            points = np.array(rows,dtype=np.float64).reshape(-1,3)
        else:
            if vertex.has_lists:
                raise FormatError("%s: list properties on vertices are "
                                  "not supported" % path)
            dtype = vertex.dtype(order)
            data = fp.read(vertex.count*dtype.itemsize)
            if len(data) < vertex.count*dtype.itemsize:
                raise FormatError("%s: truncated vertex data" % path)
            data = np.frombuffer(data,dtype=dtype,count=vertex.count)
            points = np.stack([data[axis].astype(np.float64)
                               for axis in ('x','y','z')],axis=1)
    logger.debug("%s: read %d points" % (path,len(points)))
    try:
        return PointCloud(points)
    except InvalidInputError as ex:
        raise FormatError("%s: %s" % (path,ex))

def write_ply(path,cloud,binary=True):
    """
    Write the points of a cloud to a PLY file

    Coordinates are written as doubles so that reading
    the file back gives the same values.

    Arguments:
      path (str): output file
      cloud (PointCloud): cloud to write
      binary (bool): if True (the default) write binary
        little-endian, otherwise ASCII
    """
    fmt = 'binary_little_endian' if binary else 'ascii'
    header = ["ply",
              "format %s 1.0" % fmt,
              "comment written by georeg",
              "element vertex %d" % len(cloud),
              "property double x",
              "property double y",
              "property double z",
              "end_header"]
    with open(path,'wb') as fp:
        fp.write(("\n".join(header) + "\n").encode('ascii'))
        if binary:
            fp.write(np.ascontiguousarray(cloud.points,
                                          dtype='<f8').tobytes())
        else:
            for p in cloud.points:
                fp.write(("%.17g %.17g %.17g\n" % tuple(p)).encode('ascii'))

# Feature sidecars

def write_features(path,features):
    """
    Write a feature sidecar file

    The format is the magic 'GRFT', the number of rows and
    the row width as little-endian u32, then the rows as
    little-endian 32-bit floats.
    """
    features = np.asarray(features,dtype=np.float64)
    if features.ndim != 2:
        raise InvalidInputError("features must be a 2D array")
    with open(path,'wb') as fp:
        fp.write(FEATURE_MAGIC)
        fp.write(struct.pack('<II',*features.shape))
        fp.write(np.ascontiguousarray(features,dtype='<f4').tobytes())

def read_features(path):
    """
    Read a feature sidecar file

    Returns:
      numpy.ndarray: (n,d) float64 array.
    """
    with open(path,'rb') as fp:
        if fp.read(4) != FEATURE_MAGIC:
            raise FormatError("%s: not a feature file" % path)
        header = fp.read(8)
        if len(header) != 8:
            raise FormatError("%s: truncated header" % path)
        nrows,dim = struct.unpack('<II',header)
        data = fp.read()
    if len(data) != 4*nrows*dim:
        raise FormatError("%s: expected %d values, found %d bytes" %
                          (path,nrows*dim,len(data)))
    return np.frombuffer(data,dtype='<f4').astype(np.float64)\
                                          .reshape(nrows,dim)

# Weight files

def write_weight_matrices(path,num_layers,matrices):
    """
    Write named matrices to a weights file

    The format is the magic 'GRWT', the layer count as
    u32, then for each matrix: name length (u32), name
    (UTF-8), rows and cols (u32) and the row-major
    32-bit float data. Everything is little-endian.

    Arguments:
      path (str): output file
      num_layers (int): number of attention layers
      matrices (dict): mapping of names to 2D arrays
        (written in sorted name order)
    """
    with open(path,'wb') as fp:
        fp.write(WEIGHTS_MAGIC)
        fp.write(struct.pack('<I',num_layers))
        for name in sorted(matrices):
            matrix = np.asarray(matrices[name])
            if matrix.ndim != 2:
                raise InvalidInputError("%s: weight '%s' is not a "
                                        "matrix" % (path,name))
            encoded = name.encode('utf-8')
            fp.write(struct.pack('<I',len(encoded)))
            fp.write(encoded)
            fp.write(struct.pack('<II',*matrix.shape))
            fp.write(np.ascontiguousarray(matrix,dtype='<f4').tobytes())

def read_weight_matrices(path):
    """
    Read a weights file

    Returns:
      Tuple: (num_layers,matrices) where matrices maps
        names to float32 arrays.
    """
    with open(path,'rb') as fp:
        data = fp.read()
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError("%s: not a weights file" % path)
    def unpack(fmt,offset):
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise FormatError("%s: truncated weights file" % path)
        return struct.unpack_from(fmt,data,offset),offset + size
    (num_layers,),offset = unpack('<I',4)
    matrices = {}
    while offset < len(data):
        (length,),offset = unpack('<I',offset)
        if offset + length > len(data):
            raise FormatError("%s: truncated weights file" % path)
        name = data[offset:offset+length].decode('utf-8')
        offset += length
        (rows,cols),offset = unpack('<II',offset)
        nbytes = 4*rows*cols
        if offset + nbytes > len(data):
            raise FormatError("%s: truncated data for '%s'" % (path,name))
        matrices[name] = np.frombuffer(data[offset:offset+nbytes],
                                       dtype='<f4')\
                           .astype(np.float32).reshape(rows,cols)
        offset += nbytes
    return num_layers,matrices

# Correspondences

def write_correspondences(path,correspondences):
    """
    Write point correspondences as CSV or JSON

    The format is chosen from the file extension ('.json'
    for JSON, anything else is CSV with the header
    'src_index,dst_index,confidence').
    """
    rows = [(int(x),int(y),float(c))
            for x,y,c in zip(correspondences.src,
                             correspondences.dst,
                             correspondences.confidence)]
    if path.endswith('.json'):
        with open(path,'w') as fp:
            json.dump({'correspondences':
                       [{'src_index': x,
                         'dst_index': y,
                         'confidence': c} for x,y,c in rows]},
                      fp,indent=2,sort_keys=True)
            fp.write("\n")
    else:
        with open(path,'w',newline='') as fp:
            writer = csv.writer(fp)
            writer.writerow(('src_index','dst_index','confidence'))
            for x,y,c in rows:
                writer.writerow((x,y,repr(c)))

def read_correspondences(path):
    """
    Read point correspondences written by write_correspondences

    Returns:
      Tuple: (src,dst,confidence) arrays.
    """
    try:
        if path.endswith('.json'):
            with open(path) as fp:
                rows = [(r['src_index'],r['dst_index'],r['confidence'])
                        for r in json.load(fp)['correspondences']]
        else:
            with open(path,newline='') as fp:
                reader = csv.reader(fp)
                header = next(reader)
                if header != ['src_index','dst_index','confidence']:
                    raise FormatError("%s: unexpected header %s" %
                                      (path,header))
                rows = [(int(x),int(y),float(c)) for x,y,c in reader]
    except (KeyError,ValueError,TypeError,StopIteration) as ex:
        raise FormatError("%s: bad correspondence data (%s)" % (path,ex))
    src = np.array([r[0] for r in rows],dtype=np.int64)
    dst = np.array([r[1] for r in rows],dtype=np.int64)
    confidence = np.array([r[2] for r in rows],dtype=np.float64)
    return src,dst,confidence
