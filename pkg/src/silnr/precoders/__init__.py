from .base import PrecoderResult, uniform_power
from .gpi import NetworkCSI, coop_gpi, default_init, silnr_gpi
from .linear import mrt, multicell_mmse, zf
from .wmmse import WmmseState, wmmse_leakage

__all__ = [
    "PrecoderResult",
    "uniform_power",
    "NetworkCSI",
    "coop_gpi",
    "default_init",
    "silnr_gpi",
    "mrt",
    "multicell_mmse",
    "zf",
    "WmmseState",
    "wmmse_leakage",
]
