"""Fault-tolerant estimation and safe control for 2D LiDAR-based systems.

The package pairs a bank of per-sensor EKFs with NDT scan matching against an
a-priori map to screen out spoofed sensors, removes compromised LiDAR sectors,
and certifies the fault-tolerant controller with a discrete-time barrier
certificate. A deterministic scenario simulator reproduces the UAV
corridor-delivery case study.
"""

from .attack import FdiSpec, LidarSpoofSpec, inject_fdi, spoof_scan
from .barrier import (BarrierCertificate, GridSpec, Poly, Region, SetSpec,
                      VerificationReport, ball_cover, expected_next_b,
                      safety_probability, verify_certificate)
from .control import (BallConstraint, BankMember, ControlDecision, ControlThresholds,
                      NominalController, ProjectionConfig, QuadraticCost,
                      ft_control_step, nominal, solve_constrained)
from .estimation import (AssumptionBounds, AssumptionReport, EstimatorEntry,
                         SensorModel, SystemModel, ekf_step, linear_system,
                         monitor_assumption, position_sensor, residual,
                         stacked_sensor)
from .geometry import (CartesianScan, MapParseError, PointCloudMap, PolarScan, Pose,
                       load_map, polar_about, save_map, to_cartesian)
from .ndt import (MatchResult, NdtGrid, SolverConfig, build_grid, match_cells,
                  ndt_score, scan_match, score_gradient, shortfall_bound)
from .scanner import LidarNoise, ScanParams, reconstruct_scan, sense_lidar
from .sim import (ConfigError, RunArtifacts, SafetyReport, SafetyVerificationError,
                  ScenarioConfig, batch_violation_summary, data_path,
                  evaluate_safety, load_config, load_scan, run_batch, run_scenario,
                  write_scan_csv, write_world_svg)
from .trust import (EmptyTrustError, FtLidarResult, NoConsistentSectorError, Sector,
                    TrustReport, candidate_sectors, ft_lidar_estimation,
                    select_trusted)
from .worlds import corridor_world, rectangle_outline

__version__ = "0.1.0"
