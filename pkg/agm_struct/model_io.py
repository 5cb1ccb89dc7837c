"""
Versioned model files: a protobuf ModelFile message stored as protobuf text format.
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from google.protobuf import text_format

from agm_struct import model_pb2
from agm_struct.config import LossSpec, load_model
from agm_struct.exceptions import ConfigError, DatasetError
from agm_struct.features import ModelParams, feature_template
from agm_struct.losses import spec_digest

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
MODEL_KINDS = ("agm", "crf", "ssvm")


@dataclass(frozen=True)
class SavedModel:
    kind: str
    template: object
    params: ModelParams
    spec: LossSpec
    lam: float


def to_message(model):
    """Builds the ModelFile message of a SavedModel."""
    if model.kind not in MODEL_KINDS:
        raise ValueError(f"model kind must be one of {', '.join(MODEL_KINDS)}, got {model.kind!r}")
    message = model_pb2.ModelFile()
    message.kind = model.kind
    message.format_version = MODEL_FORMAT_VERSION
    message.k = model.template.k
    message.d = model.template.d
    message.d_e = model.template.d_e
    message.template_id = "tied"
    message.loss_spec_json = model.spec.digest_source()
    message.loss_spec_sha256 = spec_digest(model.spec)
    message.lam = float(model.lam)
    message.theta_v.extend(float(v) for v in model.params.theta_v)
    message.theta_e.extend(float(v) for v in model.params.theta_e)
    return message


def from_message(message):
    """
    Validates a ModelFile message and turns it back into a SavedModel.

    Raises:
    DatasetError: On an unknown kind or version, a digest mismatch or parameter sizes that disagree with the header.
    """
    if message.format_version != MODEL_FORMAT_VERSION:
        raise DatasetError(f"unsupported model format version {message.format_version}")
    if message.kind not in MODEL_KINDS:
        raise DatasetError(f"unknown model kind {message.kind!r}")
    if spec_digest_of_json(message.loss_spec_json) != message.loss_spec_sha256:
        raise DatasetError("loss spec digest does not match the stored loss spec")
    try:
        spec = load_model(LossSpec, json.loads(message.loss_spec_json))
        template = feature_template(message.d, message.d_e, message.k)
    except (ValueError, ConfigError) as e:
        raise DatasetError(f"invalid model header: {e}") from e
    theta_v = np.array(message.theta_v, dtype=float)
    theta_e = np.array(message.theta_e, dtype=float)
    if theta_v.size != template.node_size or theta_e.size != template.edge_size:
        raise DatasetError(
            f"model has ({theta_v.size}, {theta_e.size}) parameters, header needs "
            f"({template.node_size}, {template.edge_size})")
    return SavedModel(kind=message.kind, template=template, params=ModelParams(theta_v, theta_e),
                      spec=spec, lam=message.lam)


def spec_digest_of_json(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dumps_model(model):
    return text_format.MessageToString(to_message(model), double_format=".17g")


def loads_model(text):
    try:
        message = text_format.Parse(text, model_pb2.ModelFile())
    except text_format.ParseError as e:
        raise DatasetError(f"cannot parse model file: {e}") from e
    return from_message(message)


def save_model(model, path):
    """
    Writes a model file.

    Parameters:
    model (SavedModel): Kind, template, parameters, loss spec and lam.
    path (str or Path): Destination.
    """
    Path(path).write_text(dumps_model(model), encoding="utf-8")
    logger.info("saved %s model to %s", model.kind, path)


def load_model_file(path):
    """
    Reads a model file written by save_model.

    Raises:
    DatasetError: If the file is missing, unparsable or inconsistent.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"cannot read model file {path}: {e}") from e
    return loads_model(text)
