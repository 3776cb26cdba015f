"""
Canonical representations of store records.

Field declaration order is the documented on-disk key order, so
``canonical_dumps(ManifestSerializer(manifest).data)`` is the canonical
serialization hashed into ``manifest_id``.
"""
from rest_framework import serializers

from repository.canonical import content_id
from repository.exceptions import IntegrityError, ValidationError
from repository.validators import HEX_PATTERN, validate_relative_path
from .models import ChunkRef, FileEntry, Manifest


def _validate_digest(value: str) -> str:
    if len(value) != 64 or not HEX_PATTERN.match(value):
        raise serializers.ValidationError(f"not a SHA-256 hex digest: {value!r}")
    return value


class ChunkRefField(serializers.Field):
    """A chunk reference renders as ``[chunk_id, length]``."""

    def to_representation(self, value: ChunkRef):
        return [value.chunk_id, value.length]

    def to_internal_value(self, data):
        if not isinstance(data, (list, tuple)) or len(data) != 2:
            raise serializers.ValidationError("chunk reference must be [chunk_id, length]")
        chunk_id, length = data
        if not isinstance(chunk_id, str):
            raise serializers.ValidationError("chunk id must be a string")
        _validate_digest(chunk_id)
        if not isinstance(length, int) or isinstance(length, bool) or length <= 0:
            raise serializers.ValidationError("chunk length must be a positive integer")
        return ChunkRef(chunk_id, length)


class FileEntrySerializer(serializers.Serializer):
    path = serializers.CharField(trim_whitespace=False)
    size = serializers.IntegerField(min_value=0)
    file_hash = serializers.CharField(validators=[_validate_digest])
    chunks = serializers.ListField(child=ChunkRefField(), allow_empty=True)

    def validate_path(self, value):
        try:
            return validate_relative_path(value)
        except ValidationError as exc:
            raise serializers.ValidationError(str(exc))

    def create(self, validated_data):
        return FileEntry(
            path=validated_data['path'],
            size=validated_data['size'],
            file_hash=validated_data['file_hash'],
            chunks=tuple(validated_data['chunks']),
        )


class ManifestSerializer(serializers.Serializer):
    entries = FileEntrySerializer(many=True)

    def validate_entries(self, value):
        paths = [entry['path'] for entry in value]
        if paths != sorted(paths, key=lambda p: p.encode('utf-8')) or len(set(paths)) != len(paths):
            raise serializers.ValidationError("manifest paths must be unique and sorted bytewise")
        return value

    def create(self, validated_data):
        entries = tuple(FileEntrySerializer().create(entry) for entry in validated_data['entries'])
        return build_manifest(entries)


def manifest_record(entries) -> dict:
    return ManifestSerializer({'entries': entries}).data


def build_manifest(entries) -> Manifest:
    """Sort entries bytewise by path and derive the manifest id."""
    ordered = tuple(sorted(entries, key=lambda entry: entry.path.encode('utf-8')))
    paths = [entry.path for entry in ordered]
    if len(set(paths)) != len(paths):
        raise ValidationError("duplicate path in manifest")
    return Manifest(manifest_id=content_id(manifest_record(ordered)), entries=ordered)


def load_manifest(manifest_id: str, payload: dict) -> Manifest:
    serializer = ManifestSerializer(data=payload)
    if not serializer.is_valid():
        raise IntegrityError(f"manifest {manifest_id} is malformed: {serializer.errors}")
    manifest = serializer.save()
    if manifest.manifest_id != manifest_id:
        raise IntegrityError(f"manifest {manifest_id} does not hash to its name")
    return manifest
