"""Error-mitigated training of quantum circuit Born machines on a simulated noisy device."""

from .ansatz import (
    AnsatzSpec,
    build_circuit,
    circ_calibration_params,
    cnot_count,
    entangler_layout,
    hw_calibration_circuits,
    route,
)
from .distributions import (
    BasisState,
    CountVector,
    bas_target,
    composite,
    kl_divergence,
    mean_kl,
    poisson_target,
    subsample,
    threshold_filter,
)
from .mitigation import (
    AssignmentErrorMatrix,
    aem_condition_diagnostics,
    build_aem,
    frobenius_distance,
    mitigate,
)
from .simulator import Circuit, DeviceProfile, Gate, NoiseModel, device_preset, exact_distribution, noisy_distribution, sample
from .training import (
    AdamState,
    KernelMatrix,
    TrainConfig,
    TrainTrace,
    adam_step,
    final_kl,
    mmd_gradient,
    mmd_loss,
    train,
)

__version__ = "0.1.0"
