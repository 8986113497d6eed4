"""Pseudo-label generation: deformation regularization and correspondence refinement.

The teacher's warped cloud (first frame + predicted flow) is made rigid per
cluster by a Kabsch fit against the first frame, then each cluster receives one
shared translation derived from the gap between within-warp and cross-frame
Laplacian coordinates.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from src.geometry.clustering import Clustering
from src.geometry.core import FlowField, KnnIndex, PointCloud, RigidMotion, kabsch_fit
from src.utils.config import CrConfig
from src.utils.error_handler import DegenerateCluster, DiagnosticTally, EmptyCloud, EmptyNeighborhood
from src.utils.logger_setup import setup_logger
from src.utils.validators import as_points, as_vector3, readonly, require_same_length

logger = setup_logger(__name__)


@dataclass(frozen=True)
class WarpedCloud:
    """First frame displaced by a flow, index-aligned with the first frame"""
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", readonly(as_points(self.points, "WarpedCloud.points").copy()))

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_flow(cls, first: PointCloud, flow: FlowField) -> "WarpedCloud":
        flow.check_anchor(first)
        return cls(first.points + flow.vectors)

    def flow_from(self, first: PointCloud) -> FlowField:
        require_same_length(first.points, self.points, names=("first", "warp"))
        return FlowField(self.points - first.points)


@dataclass(frozen=True)
class Reconstruction:
    """Output of deformation regularization"""
    reconstructed: WarpedCloud
    motions: List[RigidMotion]
    diagnostics: DiagnosticTally = field(default_factory=DiagnosticTally, compare=False)


@dataclass(frozen=True)
class PseudoLabels:
    """Final pseudo labels P_pseudo with the per-cluster motions and corrections"""
    points: np.ndarray
    motions: List[RigidMotion]
    deltas: np.ndarray  # (cluster_count, 3) shared corrections
    diagnostics: DiagnosticTally = field(default_factory=DiagnosticTally, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "points", readonly(as_points(self.points, "PseudoLabels.points").copy()))
        deltas = np.asarray(self.deltas, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "deltas", readonly(deltas.copy()))

    def __len__(self) -> int:
        return self.points.shape[0]

    def as_warp(self) -> WarpedCloud:
        return WarpedCloud(self.points)

    def flow_from(self, first: PointCloud) -> FlowField:
        require_same_length(first.points, self.points, names=("first", "pseudo"))
        return FlowField(self.points - first.points)


def deformation_regularize(first_frame: PointCloud, warp: WarpedCloud,
                           clusters: Clustering) -> Reconstruction:
    """Replace each cluster of the warp by its best-fit rigid motion of the first frame.

    Noise points pass through unchanged. Degenerate clusters get the identity
    motion, i.e. their reconstructed points are their first-frame positions.
    """
    require_same_length(first_frame.points, warp.points, clusters.assignments,
                        names=("first_frame", "warp", "clusters"))
    tally = DiagnosticTally()
    reconstructed = np.array(warp.points)
    motions: List[RigidMotion] = []

    for cluster_id, members in enumerate(clusters.clusters()):
        source = first_frame.points[members]
        try:
            motion = kabsch_fit(source, warp.points[members])
        except DegenerateCluster as e:
            logger.debug(f"Cluster {cluster_id} degenerate ({e}); identity motion used")
            tally.record("degenerate_cluster")
            motion = RigidMotion.identity()
        reconstructed[members] = motion.apply(source)
        motions.append(motion)

    tally.record("noise_points", int(clusters.noise.shape[0]))
    return Reconstruction(WarpedCloud(reconstructed), motions, tally)


def laplacian_coordinate_self(warp: WarpedCloud, index: KnnIndex, j: int, k: int) -> np.ndarray:
    """Mean offset from warp point j to its k nearest other warp points"""
    if len(warp) < 2:
        raise EmptyNeighborhood("Laplacian coordinate needs at least 2 points")
    neighbors, _ = index.query(warp.points[j], k, exclude=j)
    return np.mean(warp.points[neighbors] - warp.points[j], axis=0)


def laplacian_coordinate_cross(point, second_index: KnnIndex, k: int) -> np.ndarray:
    """Mean offset from a warp point to its k nearest second-frame points"""
    point = as_vector3(point, "point")
    neighbors, _ = second_index.query(point, k)
    return np.mean(second_index.points[neighbors] - point, axis=0)


def laplacian_self_batch(points: np.ndarray, index: KnnIndex, subset: np.ndarray, k: int) -> np.ndarray:
    """L1 for every point listed in `subset`, neighbors drawn from the whole indexed cloud"""
    if index.size < 2:
        raise EmptyNeighborhood("Laplacian coordinate needs at least 2 points")
    queries = points[subset]
    neighbors, _ = index.query_many(queries, k, exclude=subset)
    return np.mean(index.points[neighbors] - queries[:, None, :], axis=1)


def laplacian_cross_batch(queries: np.ndarray, second_index: KnnIndex, k: int) -> np.ndarray:
    neighbors, _ = second_index.query_many(queries, k)
    return np.mean(second_index.points[neighbors] - queries[:, None, :], axis=1)


def correspondence_refine(reconstructed: WarpedCloud, motions: List[RigidMotion], clusters: Clustering,
                          second_frame: PointCloud, cfg: CrConfig = None) -> PseudoLabels:
    """Shift each reconstructed cluster by the mean of (L2 - L1) over its members"""
    cfg = cfg or CrConfig()
    require_same_length(reconstructed.points, clusters.assignments, names=("reconstructed", "clusters"))
    if len(second_frame) == 0:
        raise EmptyCloud("Correspondence refinement needs a non-empty second frame")

    member_lists = clusters.clusters()
    points = np.array(reconstructed.points)
    deltas = np.zeros((clusters.cluster_count, 3))
    tally = DiagnosticTally()

    if member_lists and len(reconstructed) >= 2:
        warp_index = KnnIndex(reconstructed.points)
        second_index = KnnIndex(second_frame)
        clustered = np.concatenate(member_lists)
        l1 = laplacian_self_batch(reconstructed.points, warp_index, clustered, cfg.k_neighbors)
        l2 = laplacian_cross_batch(reconstructed.points[clustered], second_index, cfg.k_neighbors)
        discrepancy = l2 - l1

        offset = 0
        for cluster_id, members in enumerate(member_lists):
            count = members.shape[0]
            deltas[cluster_id] = discrepancy[offset:offset + count].mean(axis=0)
            points[members] += deltas[cluster_id]
            offset += count
    elif member_lists:
        tally.record("cr_skipped_tiny_cloud")

    return PseudoLabels(points, list(motions), deltas, tally)


def mean_discrepancy(warp_points: np.ndarray, members: np.ndarray, second_frame: PointCloud, k: int) -> float:
    """Mean ||L2 - L1|| over the given warp points"""
    warp_index = KnnIndex(warp_points)
    second_index = KnnIndex(second_frame)
    l1 = laplacian_self_batch(warp_points, warp_index, members, k)
    l2 = laplacian_cross_batch(warp_points[members], second_index, k)
    return float(np.mean(np.linalg.norm(l2 - l1, axis=1)))


def generate_pseudo_labels(first: PointCloud, warp: WarpedCloud, clusters: Clustering, second: PointCloud,
                           cr_cfg: CrConfig = None, use_dr: bool = True, use_cr: bool = True) -> PseudoLabels:
    """DR then CR, either of which may be switched off for component ablations"""
    if use_dr:
        reconstruction = deformation_regularize(first, warp, clusters)
    else:
        reconstruction = Reconstruction(warp, [RigidMotion.identity()] * clusters.cluster_count)

    if use_cr:
        labels = correspondence_refine(reconstruction.reconstructed, reconstruction.motions, clusters, second, cr_cfg)
        labels.diagnostics.merge(reconstruction.diagnostics)
        return labels
    return PseudoLabels(reconstruction.reconstructed.points, reconstruction.motions,
                        np.zeros((clusters.cluster_count, 3)), reconstruction.diagnostics)


def refine_flow(first: PointCloud, second: PointCloud, flow: FlowField, clusters: Clustering,
                cr_cfg: CrConfig = None, use_dr: bool = True, use_cr: bool = True) -> Tuple[FlowField, PseudoLabels]:
    """Standalone DR+CR on a pair and a flow: returns the refined flow P_pseudo - P1"""
    warp = WarpedCloud.from_flow(first, flow)
    labels = generate_pseudo_labels(first, warp, clusters, second, cr_cfg, use_dr, use_cr)
    return labels.flow_from(first), labels
