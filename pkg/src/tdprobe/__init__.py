"""Traffic-differentiation probing by differential record-and-replay.

An original replay carries a service's recorded bytes (optionally behind a
ClientHello naming the service); a control replay carries the same bytes
bit-reversed. Comparing their throughput through a network reveals
service-specific shaping.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
