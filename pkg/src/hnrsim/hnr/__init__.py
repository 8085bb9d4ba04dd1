"""H-NR neural receiver: model, training stages and inference."""
from .model import HnrConfig, build_tanner, fingerprint, init_params, param_count_formula
from .receiver import FingerprintError, hnr_receive, layout_fingerprint

__all__ = ["HnrConfig", "build_tanner", "fingerprint", "init_params", "param_count_formula",
           "FingerprintError", "hnr_receive", "layout_fingerprint"]
