"""turboeq: a coded-MIMO turbo-equalization laboratory.

Soft-input soft-output equalization (in-context-learning sequence models and
classical baselines) iterating with LDPC belief-propagation decoding over a
quantized MIMO front end, plus the pre-training and sweep harness around it.
"""

__version__ = "0.1.0"
