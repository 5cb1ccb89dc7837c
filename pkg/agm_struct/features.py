"""
Feature template, empirical moments and potential assembly.

Node features are the outer product of a label indicator with the node input vector plus a
per-label bias; edge features are label-pair indicators crossed with the edge input plus a
bias. Parameters are tied across nodes and across edges.

Array conventions used throughout the package (n nodes, k labels):

- node arrays have shape (n, k), row i-1 belongs to node i;
- pairwise arrays have shape (n, k, k), slot i-1 holds the (pt(i), i) matrix with rows indexed
  by the parent label and columns by the child label. The root slot holds the dummy edge:
  only its first row is used (the dummy parent has a single state) and it carries no features.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from agm_struct.exceptions import DatasetError, FeatureShapeError
from agm_struct.graph import TreeGraph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureTemplate:
    """
    Index layout of the parameter vectors.

    theta_v is laid out as (label, input feature) with the bias last, theta_e as
    (parent label, child label, edge input feature) with the bias last.
    """
    d: int
    d_e: int
    k: int

    @property
    def node_size(self):
        return self.k * (self.d + 1)

    @property
    def edge_size(self):
        return self.k * self.k * (self.d_e + 1)

    def node_index(self, label, feature=None):
        """Position of (1-based label, 0-based feature) in theta_v; feature None is the bias."""
        f = self.d if feature is None else feature
        return (label - 1) * (self.d + 1) + f

    def edge_index(self, parent_label, child_label, feature=None):
        f = self.d_e if feature is None else feature
        return ((parent_label - 1) * self.k + (child_label - 1)) * (self.d_e + 1) + f


def feature_template(d, d_e, k):
    """
    Fixes the feature layout for input dimension d, edge input dimension d_e and k labels.

    Returns:
    FeatureTemplate: with node_size = k(d+1) and edge_size = k^2(d_e+1).

    Raises:
    FeatureShapeError: If k < 2 or a dimension is negative.
    """
    if k < 2:
        raise FeatureShapeError(f"need at least 2 labels, got {k}")
    if d < 0 or d_e < 0:
        raise FeatureShapeError(f"input dimensions must be >= 0, got d={d}, d_e={d_e}")
    return FeatureTemplate(int(d), int(d_e), int(k))


@dataclass(frozen=True, eq=False)
class Instance:
    """
    One structured input with optional gold labels.

    Attributes:
    x (numpy.ndarray): (n, d) node inputs.
    edge_x (numpy.ndarray): (n, d_e) edge inputs; row i-1 belongs to edge (pt(i), i), the root row is zero.
    tree (TreeGraph): Label dependency structure.
    y (numpy.ndarray or None): Gold labels in 1..k.
    weight (float): Instance weight in moments and objectives.
    """
    x: np.ndarray
    edge_x: np.ndarray
    tree: TreeGraph
    y: Optional[np.ndarray] = None
    weight: float = 1.0

    @property
    def n(self):
        return self.tree.n

    def with_labels(self, y):
        return make_instance(self.x, self.tree, y=y, edge_x=self.edge_x, weight=self.weight)

    def input_key(self):
        """Hashable key of everything the inner game depends on (not the gold labels)."""
        return (self.tree, self.x.shape, self.x.tobytes(), self.edge_x.shape, self.edge_x.tobytes())


def make_instance(x, tree, y=None, edge_x=None, weight=1.0, k=None):
    """
    Validates and freezes the arrays of an instance.

    Parameters:
    x (array-like): (n, d) node inputs; a (n,) or empty input is reshaped to (n, 0).
    tree (TreeGraph): The label tree.
    y (sequence, optional): Gold labels in 1..k.
    edge_x (array-like, optional): (n, d_e) edge inputs indexed by child node; defaults to (n, 0).
    weight (float): Positive instance weight.
    k (int, optional): Label count used to range-check y.

    Raises:
    FeatureShapeError: On shape mismatches, non-finite inputs or labels out of range.
    """
    n = tree.n
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        x = np.zeros((n, 0))
    if x.ndim != 2 or x.shape[0] != n:
        raise FeatureShapeError(f"node inputs must have shape ({n}, d), got {x.shape}")
    if edge_x is None:
        edge_x = np.zeros((n, 0))
    edge_x = np.asarray(edge_x, dtype=float)
    if edge_x.size == 0:
        edge_x = np.zeros((n, edge_x.shape[1] if edge_x.ndim == 2 else 0))
    if edge_x.ndim != 2 or edge_x.shape[0] != n:
        raise FeatureShapeError(f"edge inputs must have shape ({n}, d_e), got {edge_x.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(edge_x))):
        raise FeatureShapeError("instance inputs contain non-finite values")
    edge_x = edge_x.copy()
    edge_x[tree.root - 1] = 0.0
    if y is not None:
        y = np.asarray(y, dtype=np.int64).ravel()
        if y.size != n:
            raise FeatureShapeError(f"expected {n} labels, got {y.size}")
        if np.any(y < 1) or (k is not None and np.any(y > k)):
            raise FeatureShapeError(f"labels {y.tolist()} outside 1..{k if k is not None else 'k'}")
        y.setflags(write=False)
    if not weight > 0:
        raise FeatureShapeError(f"instance weight must be positive, got {weight}")
    x = x.copy()
    x.setflags(write=False)
    edge_x.setflags(write=False)
    return Instance(x=x, edge_x=edge_x, tree=tree, y=y, weight=float(weight))


@dataclass(frozen=True)
class ModelParams:
    """
    Lagrange multipliers of the node (theta_v) and edge (theta_e) moment constraints.
    """
    theta_v: np.ndarray
    theta_e: np.ndarray

    @classmethod
    def zeros(cls, template):
        return cls(np.zeros(template.node_size), np.zeros(template.edge_size))

    @classmethod
    def from_flat(cls, template, vector):
        vector = np.asarray(vector, dtype=float)
        if vector.size != template.node_size + template.edge_size:
            raise FeatureShapeError(
                f"parameter vector has {vector.size} entries, template needs "
                f"{template.node_size + template.edge_size}")
        return cls(vector[:template.node_size].copy(), vector[template.node_size:].copy())

    def flat(self):
        return np.concatenate([self.theta_v, self.theta_e])

    def norm_sq(self):
        return float(self.theta_v @ self.theta_v + self.theta_e @ self.theta_e)


@dataclass(frozen=True)
class Potentials:
    """
    b: (n, k) node potentials; B: (n, k, k) edge potentials with a zero root slot.
    """
    b: np.ndarray
    B: np.ndarray

    @property
    def n(self):
        return self.b.shape[0]

    @property
    def k(self):
        return self.b.shape[1]


@dataclass(frozen=True)
class MomentVector:
    node_part: np.ndarray
    edge_part: np.ndarray

    def flat(self):
        return np.concatenate([self.node_part, self.edge_part])

    def __sub__(self, other):
        return MomentVector(self.node_part - other.node_part, self.edge_part - other.edge_part)


@dataclass(frozen=True)
class EncodedTruth:
    """
    One-hot encodings of gold labels: z is (n, k); Z is (n, k, k) in the pairwise layout.
    """
    z: np.ndarray
    Z: np.ndarray = field(repr=False)


def _node_inputs(instance):
    return np.hstack([instance.x, np.ones((instance.n, 1))])


def _edge_inputs(instance):
    return np.hstack([instance.edge_x, np.ones((instance.n, 1))])


def check_template(template, instance):
    if instance.x.shape[1] != template.d or instance.edge_x.shape[1] != template.d_e:
        raise FeatureShapeError(
            f"instance has d={instance.x.shape[1]}, d_e={instance.edge_x.shape[1]} but template expects "
            f"d={template.d}, d_e={template.d_e}")


def encode_labels(tree, labels, k):
    """
    One-hot encodes a label sequence into node vectors and pairwise matrices.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = tree.n
    z = np.zeros((n, k))
    z[np.arange(n), labels - 1] = 1.0
    Z = np.zeros((n, k, k))
    parent_index = tree.parent_index
    for i in range(n):
        row = 0 if parent_index[i] < 0 else labels[parent_index[i]] - 1
        Z[i, row, labels[i] - 1] = 1.0
    return EncodedTruth(z=z, Z=Z)


def encode_truth(instance, k):
    if instance.y is None:
        raise DatasetError("instance has no gold labels")
    return encode_labels(instance.tree, instance.y, k)


def moments_from_marginals(template, instance, r, Q):
    """
    Feature expectations under node marginals r (n, k) and pairwise marginals Q (n, k, k).

    The root slot of Q is the dummy edge and contributes nothing to edge moments.
    """
    node_part = np.einsum("na,nf->af", r, _node_inputs(instance)).ravel()
    mask = np.ones(instance.n, dtype=bool)
    mask[instance.tree.root - 1] = False
    edge_part = np.einsum("nab,nf->abf", Q[mask], _edge_inputs(instance)[mask]).ravel()
    if node_part.size != template.node_size or edge_part.size != template.edge_size:
        raise FeatureShapeError("marginal shapes disagree with the feature template")
    return MomentVector(node_part, edge_part)


def instance_moments(template, instance, labels=None):
    """Phi(x, y) of one instance at the given labels (gold labels by default)."""
    check_template(template, instance)
    labels = instance.y if labels is None else labels
    if labels is None:
        raise DatasetError("instance has no gold labels")
    truth = encode_labels(instance.tree, labels, template.k)
    return moments_from_marginals(template, instance, truth.z, truth.Z)


def empirical_moments(template, dataset):
    """
    Weighted mean over instances of the summed node and edge features at the gold labels.

    Parameters:
    template (FeatureTemplate): The feature layout.
    dataset (sequence of Instance): Labeled instances.

    Returns:
    MomentVector: The empirical moments.

    Raises:
    DatasetError: If the dataset is empty or an instance is unlabeled.
    """
    if len(dataset) == 0:
        raise DatasetError("cannot compute moments of an empty dataset")
    node = np.zeros(template.node_size)
    edge = np.zeros(template.edge_size)
    total = 0.0
    for idx, inst in enumerate(dataset):
        if inst.y is None:
            raise DatasetError("instance has no gold labels", instance=idx)
        m = instance_moments(template, inst)
        node += inst.weight * m.node_part
        edge += inst.weight * m.edge_part
        total += inst.weight
    return MomentVector(node / total, edge / total)


def assemble_potentials(params, instance, template):
    """
    Contracts the parameters with the feature tensors of an instance.

    Parameters:
    params (ModelParams): theta_v and theta_e.
    instance (Instance): The input.
    template (FeatureTemplate): The layout the parameters follow.

    Returns:
    Potentials: b_i = sum_l theta_v^(l) w_{i;l} and B_{pt(i);i} = sum_l theta_e^(l) W_{pt(i);i;l}.

    Raises:
    FeatureShapeError: If the parameter or input dimensions disagree with the template.
    """
    check_template(template, instance)
    if params.theta_v.size != template.node_size or params.theta_e.size != template.edge_size:
        raise FeatureShapeError(
            f"parameters have sizes ({params.theta_v.size}, {params.theta_e.size}), template needs "
            f"({template.node_size}, {template.edge_size})")
    k = template.k
    b = _node_inputs(instance) @ params.theta_v.reshape(k, template.d + 1).T
    B = np.einsum("nf,abf->nab", _edge_inputs(instance), params.theta_e.reshape(k, k, template.d_e + 1))
    B[instance.tree.root - 1] = 0.0
    return Potentials(b=b, B=B)


def labeling_score(pots, tree, labels):
    """theta . Phi(x, y) expressed through potentials: sum_i b_i[y_i] + sum_edges B[y_pt, y_i]."""
    labels = np.asarray(labels, dtype=np.int64) - 1
    score = float(pots.b[np.arange(tree.n), labels].sum())
    for parent, child in tree.edges:
        score += float(pots.B[child - 1, labels[parent - 1], labels[child - 1]])
    return score
