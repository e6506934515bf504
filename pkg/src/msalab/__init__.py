"""Desk-scale laboratory for multiparticle random Schrodinger operators.

Modules:
    geometry   -- n-particle rectangles, Hausdorff distance, covers
    disorder   -- random potential sampling and evaluation
    operators  -- finite-volume Hamiltonian assembly
    spectral   -- eigensolvers, resolvent block norms, decay estimates
    classify   -- box taxonomy (suitable / SES / regular / resonant ...)
    msa        -- scale schedules, Wegner statistics, multiscale drivers
    cli        -- configuration and experiment orchestration
"""

from .geometry import (
    NRectangle,
    Cover,
    SeparationClass,
    InteractionClass,
    hausdorff_distance,
    diam,
    separation_class,
    interaction_class,
    is_l_distant,
    suitable_cover,
    cover_cell_for,
)
from .disorder import (
    SingleSiteProfile,
    AmplitudeDistribution,
    InteractionSpec,
    ModelParams,
    DisorderField,
    sample_disorder,
    finite_volume_potential,
    interaction_potential,
)
from .operators import FiniteVolumeOperator, assemble, kronecker_factors, dump_matrix
from .spectral import (
    Spectrum,
    BlockNormReport,
    spectrum,
    resolvent_block_norm,
    counting_check,
    combes_thomas_check,
    pi_resolvent_bound_check,
    geometric_resolvent_check,
)
from .classify import (
    Verdict,
    classify_suitable,
    classify_ses,
    classify_regular,
    classify_resonant,
    goodbox_implications,
    classify_pi_combination,
    classify_hnr,
    classify_preregular,
    energy_stability_check,
)
from .msa import (
    ExponentLedger,
    ScaleSchedule,
    EnsembleEstimate,
    validate_ledger,
    scale_schedule,
    initial_step_energy,
    gamma_constant,
    estimate_event_probability,
    verify_initial_step,
    wegner_trace_estimate,
    two_volume_spacing_estimate,
    verify_deterministic_lemma,
    run_msa_stage,
)

__version__ = "0.1.0"
