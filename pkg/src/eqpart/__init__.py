"""Equal-measure, diameter-bounded partitions of weighted point clouds,
with the hierarchical cell trees and quadrature rules built on top of them."""

from .cubes import (
    Cube,
    CubeAxiomReport,
    CubeTree,
    build_cube_tree,
    envelope_violations,
    neighbor_pairs,
    tree_to_json,
    verify_cube_axioms,
)
from .errors import (
    ConstructionDegenerateError,
    EqpartError,
    ResolutionTooCoarseError,
    SpaceNotConnectedError,
)
from .nets import (
    SeparatedNet,
    maximal_net,
    maximal_net_reference,
    nested_nets,
    net_covering,
    net_separation,
)
from .partition import (
    NodeLedger,
    OverlapGraph,
    Partition,
    PartitionParams,
    PartitionReport,
    Region,
    RootedTree,
    equal_measure_partition,
    extract_subset,
    partition_labels_csv,
    partition_to_json,
    quasi_equal_partition,
    region_diameters,
    spanning_tree_rooted,
    verify_partition,
)
from .quadrature import (
    QuadratureRow,
    QuadratureRule,
    TestFunction,
    atom_integral,
    error_decay_experiment,
    error_slopes,
    integrate,
    lipschitz_suite,
    rows_to_csv,
    rule_from_partition,
)
from .spaces import (
    Atom,
    AtomizedSpace,
    ChebyshevMetric,
    EuclideanMetric,
    GASKET_DIMENSION,
    RegularityReport,
    SphereGeodesicMetric,
    build_gasket,
    build_interval,
    build_plus_sign,
    build_space,
    build_sphere_s2,
    build_square,
    default_regularity_probe,
    regularity_probe,
    space_to_json,
    sweep_rank,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
