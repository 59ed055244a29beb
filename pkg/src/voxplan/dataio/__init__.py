from .dataset import load_dataset, read_volume, save_samples, split_dataset, volume_files
from .nifti import (
    NiftiDatatypeError,
    NiftiDimError,
    NiftiError,
    NiftiHeaderSizeError,
    NiftiMagicError,
    NiftiTruncatedError,
    NiftiUnsupportedFormatError,
    encode_nifti1,
    parse_nifti1,
    read_nifti1,
    write_nifti1,
)
from .phantom import PhantomSpec, generate_phantom, phantom_corpus
from .raw import RawFormatError, RawLengthError, RawMagicError, decode_raw, encode_raw, read_raw, write_raw
from .volume import Sample, Volume
