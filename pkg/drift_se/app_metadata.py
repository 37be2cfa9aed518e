# flake8: noqa

from . import __version__

version = __version__

description = """
Drifting-model training for one-step signal enhancement.

A generator is trained until its outputs, seen through a frozen encoder, stop
drifting: every generated latent frame is attracted toward clean frames and
repelled from the other generated frames by a kernel mean-shift field, and the
generator regresses onto the drifted frames. Tasks:

- toy2d:      2-D Gaussian prior pushed onto a ring of Gaussians
- denoise:    paired enhancement on a synthetic harmonic corpus
- unpaired:   clean targets drawn from an independent pool
- drift-eval: numerical property suite for the drift field and gradients
- stft-check: signal pipeline round-trip report
"""

metadata = dict(
    prog='drift',
    description=description,
    epilog='exit codes: 0 success, 1 config error, 2 numerical failure, 3 property failure',
)
