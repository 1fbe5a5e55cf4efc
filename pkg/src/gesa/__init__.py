"""Graph-enhanced, entity-aware self-attention for cloze reading comprehension.

Modules follow the data path: ``corpus`` -> ``sequence`` -> ``graph`` ->
``labels`` -> ``attention`` / ``model`` -> ``reader`` -> ``train``.
"""

__version__ = "0.1.0"
