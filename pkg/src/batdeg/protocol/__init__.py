from .generate import (POWER_CAP, ZERO_KEEP_RATIO, ProtocolSpec, constant_protocol, generate_protocol,
                       postprocess, sample_protocol, write_protocols)
from .hmm import VARIANCE_FLOOR, GaussianHmm, fit_hmm, loglik, sample_states
from .vehicle import (PowerTrace, SpeedTrace, VehicleParams, load_vehicle_params, read_speed_csv,
                      scale_power, speed_to_power, synthetic_drive_cycle, write_speed_csv)

__all__ = [
    "POWER_CAP", "ZERO_KEEP_RATIO", "ProtocolSpec", "constant_protocol", "generate_protocol",
    "postprocess", "sample_protocol", "write_protocols",
    "VARIANCE_FLOOR", "GaussianHmm", "fit_hmm", "loglik", "sample_states",
    "PowerTrace", "SpeedTrace", "VehicleParams", "load_vehicle_params", "read_speed_csv",
    "scale_power", "speed_to_power", "synthetic_drive_cycle", "write_speed_csv",
]
