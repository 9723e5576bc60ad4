"""Host-guided data placement for zoned block devices.

The stack, bottom up: an emulated zoned device (:mod:`valet.device`), hint
generation (:mod:`valet.placement`), the extent mapper with lazy GC and
crash-safe metadata (:mod:`valet.mapper`), a POSIX-flavored facade
(:mod:`valet.vfs`), and trace generation plus verified replay
(:mod:`valet.workload`).
"""

from .device import DeviceConfig, ZonedDevice, ZoneState
from .errors import ValetError
from .mapper import Mapper, MapperConfig
from .placement import Hint, KernelHint, OpenFlag, PlacementEngine
from .vfs import Mode, Vfs

__all__ = [
    "DeviceConfig", "ZonedDevice", "ZoneState", "ValetError", "Mapper", "MapperConfig",
    "Hint", "KernelHint", "OpenFlag", "PlacementEngine", "Mode", "Vfs",
]
__version__ = "0.1.0"
