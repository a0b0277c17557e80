"""Simulator and optimizers for IRS-assisted full-duplex multi-user MIMO
beamforming on two timescales: per-slot active precoding on effective CSI
and statistics-driven passive reflection phases, plus a learned unrolling
of the short-term optimizer."""

from .channels import (EffectiveCsi, FullCsi, delayed_csi, effective_channels,
                       load_csi_dump, path_loss, perturb_csi, quantize_phases,
                       rician_channel, sample_full_csi, save_csi_dump,
                       si_channel)
from .linalg import NumericalError
from .numdiff import GradCheckReport, central_diff, grad_check
from .overhead import OverheadParams, csi_overhead
from .rates import (BeamformerSet, WmmseAux, downlink_rate, mse_matrix_dl,
                    mse_matrix_ul, sum_rate, uplink_rate, weighted_sum_rate,
                    wmmse_objective)
from .scenario import (ScenarioConfig, desk_scenario, load_scenario,
                       paper_scenario, save_scenario, unit_scenario)
from .ssca import (SscaConfig, long_term_step, run_ssca, sample_gradient,
                   step_schedules, surrogate_minimizer, update_surrogate)
from .unfolding import (LpbnParams, SabnParams, TrainConfig, dagger,
                        inverse_approx, load_checkpoint, sabn_forward,
                        save_checkpoint, train)
from .wmmse import (BcdConfig, BcdTrace, run_bcd, update_dl_precoders,
                    update_receivers, update_ul_precoders, update_weights)

__version__ = "0.1.0"
