"""Learning and verifying neural networks under ellipsoidal reachability specifications."""

from .lmi import (AffinePencil, LearningVariables, Sign, build_learning, build_verification,
                  build_verification_multilayer, export_sdpa, parse_sdpa, schur_check)
from .loop_transform import (RecoveryMode, TransformedForm, eval_transformed, inverse_two_layer,
                             transform)
from .model import Activation, IsolatedForm, Network, forward, isolate, multilayer_blocks
from .pipeline import ProblemSpec, RunReport, SoundnessError, learn, monte_carlo, verify
from .sets import (Ellipsoid, IntervalBounds, Role, SectorBounds, contains, ellipsoid_box,
                   global_sector, ibp, input_qc, local_sector, output_spec, sample, sector_qc)
from .solver import Certificate, SolveOptions, Verdict, check_certificate, min_eig, solve

__version__ = "0.1.0"
