# -*- coding: utf-8 -*-
# source: agm_model.proto
"""Protocol buffer classes of the model file."""
from google.protobuf import descriptor as _descriptor
from google.protobuf import descriptor_pb2 as _descriptor_pb2
from google.protobuf import descriptor_pool as _descriptor_pool
from google.protobuf import symbol_database as _symbol_database
from google.protobuf.internal import builder as _builder

_sym_db = _symbol_database.Default()

_FIELD = _descriptor_pb2.FieldDescriptorProto

# message ModelFile {
#   string kind = 1;              agm | crf | ssvm
#   uint32 format_version = 2;
#   uint32 k = 3;
#   uint32 d = 4;
#   uint32 d_e = 5;
#   string template_id = 6;
#   string loss_spec_json = 7;
#   string loss_spec_sha256 = 8;
#   double lam = 9;
#   repeated double theta_v = 10;
#   repeated double theta_e = 11;
# }
_MODEL_FILE_FIELDS = (
    ("kind", _FIELD.TYPE_STRING, _FIELD.LABEL_OPTIONAL),
    ("format_version", _FIELD.TYPE_UINT32, _FIELD.LABEL_OPTIONAL),
    ("k", _FIELD.TYPE_UINT32, _FIELD.LABEL_OPTIONAL),
    ("d", _FIELD.TYPE_UINT32, _FIELD.LABEL_OPTIONAL),
    ("d_e", _FIELD.TYPE_UINT32, _FIELD.LABEL_OPTIONAL),
    ("template_id", _FIELD.TYPE_STRING, _FIELD.LABEL_OPTIONAL),
    ("loss_spec_json", _FIELD.TYPE_STRING, _FIELD.LABEL_OPTIONAL),
    ("loss_spec_sha256", _FIELD.TYPE_STRING, _FIELD.LABEL_OPTIONAL),
    ("lam", _FIELD.TYPE_DOUBLE, _FIELD.LABEL_OPTIONAL),
    ("theta_v", _FIELD.TYPE_DOUBLE, _FIELD.LABEL_REPEATED),
    ("theta_e", _FIELD.TYPE_DOUBLE, _FIELD.LABEL_REPEATED),
)


def _serialized_file():
    proto = _descriptor_pb2.FileDescriptorProto(name="agm_model.proto", package="agm_struct.model", syntax="proto3")
    message = proto.message_type.add(name="ModelFile")
    for number, (name, field_type, label) in enumerate(_MODEL_FILE_FIELDS, start=1):
        message.field.add(name=name, number=number, type=field_type, label=label)
    return proto.SerializeToString()


DESCRIPTOR = _descriptor_pool.Default().AddSerializedFile(_serialized_file())

_globals = globals()
_builder.BuildMessageAndEnumDescriptors(DESCRIPTOR, _globals)
_builder.BuildTopDescriptorsAndMessages(DESCRIPTOR, 'model_pb2', _globals)
if _descriptor._USE_C_DESCRIPTORS == False:
  DESCRIPTOR._options = None
