"""Pre/postselected quantum walk with a superluminal weak velocity.

Modules: :mod:`coin` (spin sectors, weak values, moments), :mod:`wavepacket`
(exact and weak packet evolution), :mod:`ensemble_stats` (probabilities and
sampling), :mod:`fields` (potentials of a uniformly moving charge),
:mod:`coupling` (kick experiment, moment table, causality checks) and
:mod:`cli`.
"""
from . import coin, coupling, ensemble_stats, fields, wavepacket
from .coin import CoinState, overlap, sector_decomposition, weak_velocity
from .errors import (
    GridTooCoarse,
    OnWorldline,
    SplitStepUnconverged,
    SubluminalInput,
    UndefinedRegion,
    UnresolvedCells,
    WeakflowError,
    ZeroNorm,
    ZeroOverlap,
)
from .wavepacket import GaussianPacket, PacketSuperposition

__version__ = "0.1.0"
