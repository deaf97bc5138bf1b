"""BRAINet: hierarchies of bootstrap-scored causal structures turned into
discriminative dense-network ensembles with posterior sub-network sampling.

The package is organised around the pipeline stages:

* :mod:`brainet.data` -- dataset loading, discretization, splits, bootstrap
* :mod:`brainet.indtest` -- conditional-independence decisions (CMI / G-test)
* :mod:`brainet.graph` -- CPDAG refinement, orientation, autonomous sets
* :mod:`brainet.bdeu` -- Bayesian Dirichlet equivalent-uniform scoring
* :mod:`brainet.structure` -- recursive structure-tree learning
* :mod:`brainet.nnet` -- the dense-network hierarchy and its numeric engine
* :mod:`brainet.sampling` -- Boltzmann branch sampling and stochastic inference
* :mod:`brainet.uncertainty` -- calibration and uncertainty measures
* :mod:`brainet.evalharness` -- experiment drivers and ranking metrics
* :mod:`brainet.cli` -- the ``brainet`` command-line entry point
"""

__version__ = "0.1.0"
