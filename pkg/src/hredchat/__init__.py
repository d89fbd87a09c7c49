"""Generative dialogue modeling with hierarchical recurrent encoder-decoders.

Subpackages roughly follow the pipeline: ``corpus`` builds datasets,
``tensor``/``layers``/``models`` define the networks, ``training`` fits
them, ``ngram`` provides smoothed baselines, ``evaldecode`` scores and
decodes, and ``cli``/``service`` expose everything to the shell and HTTP.
"""

__version__ = "0.1.0"
