"""Natural-language navigation in unknown 2-D worlds.

Library layout:

- ``grammar``       tokenizer + chart parser for the instruction fragment
- ``grounding``     symbol spaces, log-linear grounding model, training
- ``semantic_map``  hybrid metric/topological/semantic graph, information form
- ``rbpf``          Rao-Blackwellized particle filter over semantic graphs
- ``policy``        belief-space action selection and imitation learning
- ``sim``           2-D worlds, sensing, motion, expert oracle, episodes
- ``harness``       Monte Carlo experiment runner and plots
- ``cli``           command line entry points
"""

__version__ = "0.1.0"
