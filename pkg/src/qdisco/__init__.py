"""Compositional quantum models of direction-following stories.

Modules: story (datasets and oracle), diagram (text diagrams and rewrites),
circuit (functor to parameterised circuits), sim (exact evaluation and
gradients), train, noise, compiler, planner, interpret and cli.
"""

__version__ = "0.1.0"
