"""Domain-adversarial action recognition on skeleton images, desk scale.

The package is a self-contained trainer: a small reverse-mode autodiff
engine (:mod:`skelalign.autodiff`), skeleton sequence data handling
(:mod:`skelalign.data`), the joints-by-frames image encoding
(:mod:`skelalign.encode`), a compact CNN with a dual classifier head
(:mod:`skelalign.model`), the alignment losses (:mod:`skelalign.losses`),
the alternating two-phase trainer (:mod:`skelalign.train`), and a CLI
(:mod:`skelalign.cli`).
"""

__version__ = "0.1.0"
