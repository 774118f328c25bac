"""Grammar-constrained online speech recognition stack for scripted
child-robot interaction sessions.

Modules
-------
portnet    named-port pub/sub middleware (TCP broker)
grammar    JSGF-subset parsing and weighted FST compilation
decoder    token-passing recogniser with gating and endpointing
augment    SNR-controlled noise mixing for WAV corpora
dialogue   scripted exercise-session state machine
simulator  closed-loop session generation with seeded noise injection
evalkit    transcription scoring, segmentation-error taxonomy, reports
gateway    JSON event bridge for operator consoles
"""

__version__ = "0.1.0"
