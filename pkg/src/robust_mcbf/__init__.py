"""Worst-case robust multi-cell coordinated beamforming.

Subpackages: :mod:`.model` (system, channels, error balls, SINR),
:mod:`.conic` (interior-point SDP solver), :mod:`.sdr` (centralized robust
relaxations), :mod:`.admm` (distributed solution), :mod:`.backhaul`
(message transport) and :mod:`.cli` (experiment harness).
"""

__version__ = "0.1.0"
