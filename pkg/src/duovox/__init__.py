"""duovox: a desk-scale cross-lingual TTS pipeline with dual speaker routing.

The pipeline predicts discrete vector-quantized acoustic frames from text
with one speaker identity (the linguistic side) and renders audio with a
second speaker identity (the timbre side), so that a voice can be carried
into a language its speaker never recorded.  Everything runs on CPU against
a deterministic synthetic corpus that doubles as the test oracle.
"""

__version__ = "0.1.0"
