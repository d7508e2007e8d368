from tileseam.utils.utils import *
