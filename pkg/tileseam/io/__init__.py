from tileseam.io.npy import read_npy, write_npy, write_npy_header
