"""Pool-based active learning for classification at desk scale.

Library layout:

- :mod:`alpool.core` -- pool state machine and domain types
- :mod:`alpool.dataio` -- dataset formats and the synthetic pool generator
- :mod:`alpool.model` -- probabilistic classifier with MC-dropout prediction
- :mod:`alpool.tapt` -- self-supervised adaptation pretraining
- :mod:`alpool.clustering` -- K-means with elbow K selection
- :mod:`alpool.initializers` -- cold-start selection strategies
- :mod:`alpool.acquisition` -- per-round query scoring and batch selection
- :mod:`alpool.annotate` -- oracle, simulated and human label provisioning
- :mod:`alpool.loop` -- the experiment orchestrator and UA/WA evaluation
- :mod:`alpool.report` -- delimited run reports and figures
- :mod:`alpool.service` -- HTTP surface for the human annotation loop
"""

from alpool.core import ExperimentConfig, LabelRecord, Pool, Sample, split_budget

__all__ = ["ExperimentConfig", "LabelRecord", "Pool", "Sample", "split_budget"]

__version__ = "0.1.0"
