"""
Dataset files, the synthetic hidden ordinal chain generator and its exact Bayes risk.

File format (line oriented, whitespace separated decimal text):

    AGM 1 k=<k> d=<d> de=<d_e> template=tied
    instance n=<n> root=<root> edges=<u>:<v>,<u>:<v> [weight=<w>]
    <label or -> <x_1> ... <x_d>            (n lines, node 1..n)
    <child> <e_1> ... <e_de>                (n-1 lines when de > 0)

Blank lines and lines starting with '#' are ignored.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from agm_struct.config import GeneratorConfig, load_model
from agm_struct.exceptions import DatasetError, FeatureShapeError, OracleSizeError, TreeStructureError
from agm_struct.features import feature_template, make_instance
from agm_struct.game_solver import enumerate_labelings
from agm_struct.graph import build_tree, chain
from agm_struct.helper_functions import make_rng
from agm_struct.losses import loss_matrices

logger = logging.getLogger(__name__)

FORMAT_MAGIC = "AGM"
FORMAT_VERSION = 1
TEMPLATE_ID = "tied"
BAYES_MAX_JOINT = 10 ** 6


@dataclass(frozen=True)
class DatasetFile:
    """
    Attributes:
    k (int): Number of labels.
    d (int): Node input dimension.
    d_e (int): Edge input dimension.
    instances (list): Instance objects sharing k, d and d_e.
    template_id (str): Feature template identifier from the header.
    """
    k: int
    d: int
    d_e: int
    instances: List
    template_id: str = TEMPLATE_ID

    @property
    def template(self):
        return feature_template(self.d, self.d_e, self.k)

    def subset(self, indices):
        return DatasetFile(self.k, self.d, self.d_e, [self.instances[i] for i in indices], self.template_id)

    def __len__(self):
        return len(self.instances)


def _fmt(value):
    return repr(float(value))


def dumps_dataset(dataset):
    """Serializes a DatasetFile to the text format."""
    lines = [f"{FORMAT_MAGIC} {FORMAT_VERSION} k={dataset.k} d={dataset.d} de={dataset.d_e} "
             f"template={dataset.template_id}"]
    for inst in dataset.instances:
        tree = inst.tree
        edges = ",".join(f"{p}:{c}" for p, c in tree.edges) or "-"
        header = f"instance n={tree.n} root={tree.root} edges={edges}"
        if inst.weight != 1.0:
            header += f" weight={_fmt(inst.weight)}"
        lines.append(header)
        for i in range(tree.n):
            label = "-" if inst.y is None else str(int(inst.y[i]))
            lines.append(" ".join([label] + [_fmt(v) for v in inst.x[i]]))
        if dataset.d_e > 0:
            for _, child in tree.edges:
                lines.append(" ".join([str(child)] + [_fmt(v) for v in inst.edge_x[child - 1]]))
    return "\n".join(lines) + "\n"


def save_dataset(dataset, path):
    Path(path).write_text(dumps_dataset(dataset), encoding="utf-8")
    logger.info("wrote %d instances to %s", len(dataset.instances), path)


def _parse_fields(tokens, line_no, required):
    fields = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep:
            raise DatasetError(f"expected key=value, got {token!r}", line=line_no)
        fields[key] = value
    missing = [key for key in required if key not in fields]
    if missing:
        raise DatasetError(f"missing field(s) {', '.join(missing)}", line=line_no)
    return fields


def _parse_int(value, name, line_no, instance=None):
    try:
        return int(value)
    except ValueError:
        raise DatasetError(f"{name} must be an integer, got {value!r}", line=line_no, instance=instance) from None


def _parse_floats(tokens, expected, what, line_no, instance):
    if len(tokens) != expected:
        raise DatasetError(f"{what} has {len(tokens)} values, expected {expected}", line=line_no, instance=instance)
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise DatasetError(f"{what} contains a non-numeric value", line=line_no, instance=instance) from None
    if not np.all(np.isfinite(values)):
        raise DatasetError(f"{what} contains a non-finite value", line=line_no, instance=instance)
    return values


def _parse_edges(value, line_no, instance):
    if value in ("", "-"):
        return []
    edges = []
    for item in value.split(","):
        u, sep, v = item.partition(":")
        if not sep:
            raise DatasetError(f"edge {item!r} is not of the form u:v", line=line_no, instance=instance)
        edges.append((_parse_int(u, "edge node", line_no, instance), _parse_int(v, "edge node", line_no, instance)))
    return edges


def loads_dataset(text):
    """
    Parses the text format into a validated DatasetFile.

    Raises:
    DatasetError: On a malformed header, ragged rows, bad trees or labels out of range;
    the message names the line and the instance.
    """
    lines = [(no, line.strip()) for no, line in enumerate(text.splitlines(), start=1)]
    lines = [(no, line) for no, line in lines if line and not line.startswith("#")]
    if not lines:
        raise DatasetError("empty dataset file")

    header_no, header = lines[0]
    tokens = header.split()
    if len(tokens) < 2 or tokens[0] != FORMAT_MAGIC:
        raise DatasetError(f"header must start with '{FORMAT_MAGIC} <version>'", line=header_no)
    if tokens[1] != str(FORMAT_VERSION):
        raise DatasetError(f"unsupported format version {tokens[1]!r}", line=header_no)
    fields = _parse_fields(tokens[2:], header_no, ("k", "d", "de"))
    k = _parse_int(fields["k"], "k", header_no)
    d = _parse_int(fields["d"], "d", header_no)
    d_e = _parse_int(fields["de"], "de", header_no)
    template_id = fields.get("template", TEMPLATE_ID)
    if k < 2 or d < 0 or d_e < 0:
        raise DatasetError(f"invalid header dimensions k={k}, d={d}, de={d_e}", line=header_no)
    if template_id != TEMPLATE_ID:
        raise DatasetError(f"unknown feature template {template_id!r}", line=header_no)

    instances = []
    pos = 1
    while pos < len(lines):
        line_no, line = lines[pos]
        idx = len(instances)
        tokens = line.split()
        if tokens[0] != "instance":
            raise DatasetError(f"expected an instance header, got {tokens[0]!r}", line=line_no, instance=idx)
        fields = _parse_fields(tokens[1:], line_no, ("n", "edges"))
        n = _parse_int(fields["n"], "n", line_no, idx)
        root = _parse_int(fields.get("root", "1"), "root", line_no, idx)
        if n < 1:
            raise DatasetError(f"instance must have at least one node, got n={n}", line=line_no, instance=idx)
        try:
            weight = float(fields.get("weight", "1"))
        except ValueError:
            raise DatasetError("weight must be a number", line=line_no, instance=idx) from None
        try:
            tree = build_tree(n, _parse_edges(fields["edges"], line_no, idx), root)
        except TreeStructureError as e:
            raise DatasetError(str(e), line=line_no, instance=idx) from e
        if len(tree.edges) != n - 1:
            raise DatasetError(f"{len(tree.edges)} edges for {n} nodes", line=line_no, instance=idx)

        body = n + (n - 1 if d_e > 0 else 0)
        if pos + body > len(lines) - 1:
            raise DatasetError(f"instance needs {body} more lines, file ends early", line=line_no, instance=idx)
        labels = []
        x = []
        for offset in range(1, n + 1):
            row_no, row = lines[pos + offset]
            parts = row.split()
            label = parts[0] if parts else ""
            if label == "-":
                labels.append(None)
            else:
                value = _parse_int(label, "label", row_no, idx)
                if value < 1 or value > k:
                    raise DatasetError(f"label {value} outside 1..{k}", line=row_no, instance=idx)
                labels.append(value)
            x.append(_parse_floats(parts[1:], d, "node feature row", row_no, idx))
        if any(lab is None for lab in labels) and not all(lab is None for lab in labels):
            raise DatasetError("instance mixes labeled and unlabeled nodes", line=line_no, instance=idx)
        edge_x = np.zeros((n, d_e))
        seen = set()
        for offset in range(n + 1, body + 1):
            row_no, row = lines[pos + offset]
            parts = row.split()
            child = _parse_int(parts[0], "edge child", row_no, idx)
            if child == root or child < 1 or child > n or child in seen:
                raise DatasetError(f"invalid or repeated edge child {child}", line=row_no, instance=idx)
            seen.add(child)
            edge_x[child - 1] = _parse_floats(parts[1:], d_e, "edge feature row", row_no, idx)
        y = None if labels[0] is None else labels
        try:
            instances.append(make_instance(np.array(x).reshape(n, d), tree, y=y, edge_x=edge_x, weight=weight, k=k))
        except FeatureShapeError as e:
            raise DatasetError(str(e), line=line_no, instance=idx) from e
        pos += body + 1

    logger.debug("parsed %d instances (k=%d, d=%d, de=%d)", len(instances), k, d, d_e)
    return DatasetFile(k=k, d=d, d_e=d_e, instances=instances, template_id=template_id)


def load_dataset(path):
    """
    Reads and validates a dataset file.

    Parameters:
    path (str or Path): The dataset file.

    Returns:
    DatasetFile: The parsed dataset.

    Raises:
    DatasetError: If the file is missing or malformed.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"cannot read dataset {path}: {e}") from e
    return loads_dataset(text)


def population_dataset(tree, x, probabilities, k, edge_x=None):
    """
    Weighted instances expressing a label distribution for one input: one instance per
    labeling with positive probability, weighted by it. Labelings follow enumerate_labelings order.
    """
    probabilities = np.asarray(probabilities, dtype=float).ravel()
    labelings = enumerate_labelings(tree.n, k)
    if probabilities.size != labelings.shape[0]:
        raise DatasetError(f"need {labelings.shape[0]} probabilities, got {probabilities.size}")
    instances = [make_instance(x, tree, y=labelings[j] + 1, edge_x=edge_x, weight=probabilities[j], k=k)
                 for j in np.flatnonzero(probabilities > 0)]
    first = instances[0]
    return DatasetFile(k=k, d=first.x.shape[1], d_e=first.edge_x.shape[1], instances=instances)


################################


#     Synthetic generator     #


@dataclass(frozen=True)
class GeneratorModel:
    """initial: (k,) label distribution; transition: (k, k) row-stochastic; emission: (k, m) row-stochastic."""
    initial: np.ndarray
    transition: np.ndarray
    emission: np.ndarray


def generator_model(cfg):
    """
    Distributions of the hidden ordinal chain.

    From label a the chain stays with stay_prob, moves to a+1 with advance_prob (stays at the
    top label) and otherwise jumps uniformly. The emitted symbol equals the label index with
    emission_accuracy and is otherwise uniform over the other symbols.
    """
    k = cfg.k
    m = cfg.num_symbols
    rest = 1.0 - cfg.stay_prob - cfg.advance_prob
    transition = np.full((k, k), max(rest, 0.0) / k)
    for a in range(k):
        transition[a, a] += cfg.stay_prob
        transition[a, min(a + 1, k - 1)] += cfg.advance_prob
    emission = np.full((k, m), (1.0 - cfg.emission_accuracy) / (m - 1))
    emission[np.arange(k), np.arange(k)] = cfg.emission_accuracy
    return GeneratorModel(initial=np.full(k, 1.0 / k), transition=transition, emission=emission)


def _node_inputs(cfg, symbols):
    n = symbols.size
    x = np.zeros((n, cfg.num_symbols))
    x[np.arange(n), symbols] = 1.0
    if cfg.position_features:
        x = np.hstack([x, np.eye(n)])
    return x


def _edge_inputs(cfg, n):
    if not cfg.edge_identity:
        return None
    edge_x = np.zeros((n, max(n - 1, 0)))
    for child in range(2, n + 1):
        edge_x[child - 1, child - 2] = 1.0
    return edge_x


def generate_synthetic(cfg):
    """
    Samples labeled chains from the hidden ordinal chain generator.

    Parameters:
    cfg (GeneratorConfig): Generator settings including the seed.

    Returns:
    DatasetFile: Chains with one-hot symbol features (plus optional identity features).
    """
    model = generator_model(cfg)
    rng = make_rng(cfg.seed)
    k = cfg.k
    instances = []
    for _ in range(cfg.n_instances):
        n = int(rng.integers(cfg.min_length, cfg.max_length + 1))
        hidden = np.zeros(n, dtype=np.int64)
        hidden[0] = rng.choice(k, p=model.initial)
        for i in range(1, n):
            hidden[i] = rng.choice(k, p=model.transition[hidden[i - 1]])
        symbols = np.array([rng.choice(cfg.num_symbols, p=model.emission[h]) for h in hidden])
        observed = hidden.copy()
        flips = rng.random(n) < cfg.label_noise
        observed[flips] = rng.integers(0, k, size=int(flips.sum()))
        instances.append(make_instance(_node_inputs(cfg, symbols), chain(n), y=observed + 1,
                                       edge_x=_edge_inputs(cfg, n), k=k))
    d = cfg.num_symbols + (cfg.max_length if cfg.position_features else 0)
    d_e = (cfg.max_length - 1) if cfg.edge_identity else 0
    logger.info("generated %d chains with k=%d", len(instances), k)
    return DatasetFile(k=k, d=d, d_e=d_e, instances=instances)


def bayes_risk(cfg, spec):
    """
    Exact expected per-node loss of the Bayes optimal predictor under the generator.

    Enumerates hidden label sequences and emissions for every length in the generator's range
    (lengths are uniform); the observed labels are the hidden ones passed through label noise.

    Parameters:
    cfg (GeneratorConfig): The generating distribution.
    spec (LossSpec): An additive loss metric.

    Returns:
    float: E[ sum_i min_a sum_b L_i[a][b] P(y_i = b | x) / n ].

    Raises:
    OracleSizeError: If the enumeration for the longest length exceeds 10^6 joint states.
    """
    model = generator_model(cfg)
    k = cfg.k
    m = cfg.num_symbols
    lengths = range(cfg.min_length, cfg.max_length + 1)
    risk = 0.0
    for n in lengths:
        if k ** n * m ** n > BAYES_MAX_JOINT:
            raise OracleSizeError(f"Bayes risk enumeration for n={n} needs {k ** n * m ** n} states")
        H = enumerate_labelings(n, k)
        X = enumerate_labelings(n, m)
        prior = model.initial[H[:, 0]].copy()
        for i in range(1, n):
            prior *= model.transition[H[:, i - 1], H[:, i]]
        joint = prior[:, None] * np.prod(model.emission[H[:, None, :], X[None, :, :]], axis=2)
        losses = loss_matrices(spec, n)
        total = 0.0
        for i in range(n):
            # (k, m^n) joint of hidden label i and emissions, then label noise
            hidden_i = np.zeros((k, X.shape[0]))
            np.add.at(hidden_i, H[:, i], joint)
            observed_i = (1.0 - cfg.label_noise) * hidden_i + cfg.label_noise / k * hidden_i.sum(axis=0)[None, :]
            total += float((losses[i] @ observed_i).min(axis=0).sum())
        risk += total / n
    return risk / len(lengths)


def save_generator(cfg, path):
    """Stores the generating distribution as JSON next to a synthetic dataset."""
    Path(path).write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_generator(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"cannot read generator description {path}: {e}") from e
    return load_model(GeneratorConfig, data)
