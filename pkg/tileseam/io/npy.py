"""
NPY v1.0 reader and writer restricted to C-ordered little-endian float32/float64 payloads
"""
import numpy as np
from numpy.lib import format as npy_format
from ..core.errors import NpyFormatError, MagicMismatchError, FortranOrderError, UnsupportedDtypeError, \
    TruncatedPayloadError

SUPPORTED_DTYPES = ('<f4', '<f8')


def _check_dtype(dtype):
    if dtype not in SUPPORTED_DTYPES:
        raise UnsupportedDtypeError('Unsupported dtype {0}, expected one of {1}'.format(dtype, SUPPORTED_DTYPES))


def write_npy_header(fp, shape, dtype='<f8'):
    _check_dtype(dtype)
    header = {'descr': dtype, 'fortran_order': False, 'shape': tuple(int(extent) for extent in shape)}
    npy_format.write_array_header_1_0(fp, header)


def write_npy(path, tensor, dtype='<f8'):
    _check_dtype(dtype)
    array = np.ascontiguousarray(tensor, dtype=np.dtype(dtype))
    with open(path, 'wb') as fp:
        write_npy_header(fp, array.shape, dtype)
        fp.write(array.tobytes(order='C'))


def read_npy(path):
    """
    Reads a tensor written by :func:`write_npy`. float32 payloads are upcast to float64.

    Raises:
        MagicMismatchError: the file is not an NPY file
        NpyFormatError: the version is not 1.0 or the header is malformed
        FortranOrderError: the payload is column-major
        UnsupportedDtypeError: the payload is neither '<f4' nor '<f8'
        TruncatedPayloadError: the payload is shorter than the header announces
    """
    with open(path, 'rb') as fp:
        try:
            version = npy_format.read_magic(fp)
        except ValueError as exc:
            raise MagicMismatchError('{0}: {1}'.format(path, exc))
        if version != (1, 0):
            raise NpyFormatError('{0}: only NPY version 1.0 is supported, got {1}'.format(path, version))
        try:
            shape, fortran_order, dtype = npy_format.read_array_header_1_0(fp)
        except ValueError as exc:
            raise NpyFormatError('{0}: malformed header ({1})'.format(path, exc))
        if fortran_order:
            raise FortranOrderError('{0}: fortran_order=True payloads are not supported'.format(path))
        _check_dtype(dtype.str)
        count = int(np.prod(shape, dtype=np.int64))
        payload = fp.read(count * dtype.itemsize)
    if len(payload) < count * dtype.itemsize:
        raise TruncatedPayloadError('{0}: expected {1} payload bytes, found {2}'
                                    .format(path, count * dtype.itemsize, len(payload)))
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(np.float64)
