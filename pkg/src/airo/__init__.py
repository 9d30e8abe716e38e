"""airo: inspectable AI-assisted drafting runs.

Binds generative drafting to a human-authored note bundle under hard prompt
constraints, records hash-linked provenance for every model interaction,
audits generated claims against the bundle, redacts logs for blind review,
and packages each run as a verifiable RO-Crate with an inspection card.
"""

__version__ = "0.1.0"
