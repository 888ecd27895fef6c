"""Exact harmonic calculus on p.c.f. fractals, cell-level index statistics and carpet resistance scaling."""

import os as _os

# FRACTAL_INDEX_THREADS caps BLAS/OpenMP threads; it must be set before numpy loads.
_threads = _os.environ.get("FRACTAL_INDEX_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .structure import (ALPHABET, PcfStructure, SelfSimilarWeights, StructureError, cells_at_level,  # noqa: E402
                        measure_weight, neighbor_set, preset)
from .harmonic import (HarmonicStructure, PiecewiseHarmonicFunction, assemble_graph_form, energy,  # noqa: E402
                       extension_matrices, harmonic_extension, mutual_energy, preset_harmonic_structure,
                       pullback, solve_renormalization_scalar, trace_form, verify_harmonic_structure)
from .measures import (cell_energy_measure, derivation_check, kusuoka_table, mutual_cell_measure,  # noqa: E402
                       phi_eigenvalues, phi_field)
from .dimension import blowup_search, index_report, rank_spectrum, renormalize_pair  # noqa: E402
from .carpet import (CarpetGenerator, build_pre_carpet, carpet_preset, check_all, dimension_report,  # noqa: E402
                     effective_resistance, resistance_scaling)
