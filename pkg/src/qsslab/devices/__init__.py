"""Device models; each contributes residual rows and Jacobian entries to the system."""
from .base import Device, DeviceContribution, contribute_jacobian, contribute_residuals
from .generator import AvrParams, GeneratorParams, OxlParams, SyncMachines
from .governor import TurbineGovernorParams, TurbineGovernors
from .loads import ConstantPowerInjections, ExpRecoveryLoadParams, ExpRecoveryLoads
from .ltc import LtcParams, TapChangers
