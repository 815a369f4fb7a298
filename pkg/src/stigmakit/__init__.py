"""Toolkit for finding, annotating, and evaluating stigma language in
clinical-note corpora: lexicon-driven candidate extraction, dual human
annotation with agreement and adjudication, prompt-based LLM classification
with failure accounting, and micro/macro evaluation over four stigma
subscales.
"""

from .subscales import GUIDELINES, SUBSCALES, Guideline, Subscale

__all__ = ["GUIDELINES", "SUBSCALES", "Guideline", "Subscale"]

__version__ = "0.1.0"
