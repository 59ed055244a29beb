"""Training-memory planning and a reference executor for 3D U-Net segmentation."""

__version__ = "0.1.0"

from .graph import Graph, Precision, TensorShape, UNetSpec, build_unet, infer_shapes, param_count, topo_order
from .memplan import MemReport, TimeEstimate, estimate_completion_time, plan_training_memory, sweep, tensor_bytes
