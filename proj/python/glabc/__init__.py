"""Python bindings for the glabc Global-Local ABC-MCMC library."""

import json

from ._core import (
    ConfigError,
    RuntimeAbort,
    __version__,
    esjd,
    ess,
    gradient,
    load_reference,
    model_names,
    simulate,
    vdp_observed,
    vdp_true_theta,
)


def run(config):
    """Run chains from a config dict (same schema as `glabc run`).

    Returns (manifest, chains); each chain is a dict with theta (n, p),
    move, accepted, sims_used, log_weight and init_sims.
    """
    manifest, chains = _core_run(json.dumps(config))
    return json.loads(manifest), chains


from ._core import run_json as _core_run  # noqa: E402

__all__ = [
    "ConfigError",
    "RuntimeAbort",
    "__version__",
    "esjd",
    "ess",
    "gradient",
    "load_reference",
    "model_names",
    "run",
    "simulate",
    "vdp_observed",
    "vdp_true_theta",
]
