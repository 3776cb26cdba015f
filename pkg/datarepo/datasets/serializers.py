"""
Canonical representations of catalog records.

Declaration order is the documented key order of ``commits/<id>.json``,
``tombstones.jsonl``, ``events.jsonl`` and the CLI ``--json`` output.
"""
from immutabledict import immutabledict
from rest_framework import serializers

from repository.canonical import content_id, sorted_map
from repository.exceptions import IntegrityError, ValidationError
from repository.validators import validate_name
from .models import Commit, CommitEvent, DiffReport, QueryExpr, Tombstone
from .query import parse_timestamp, validate_glob


def flatten_errors(errors) -> str:
    if isinstance(errors, dict):
        return '; '.join(f"{key}: {flatten_errors(value)}" for key, value in errors.items())
    if isinstance(errors, list):
        return '; '.join(flatten_errors(item) for item in errors if item)
    return str(errors)


def reject_unknown_keys(serializer: serializers.Serializer, data) -> None:
    """Errors are keyed by field so they survive as a top-level serializer error."""
    if isinstance(data, dict):
        unknown = sorted(set(data) - set(serializer.fields))
        if unknown:
            raise serializers.ValidationError({key: ['unknown key'] for key in unknown})


class SortedDictField(serializers.DictField):
    def to_representation(self, value):
        return sorted_map(super().to_representation(value))


class NameField(serializers.CharField):
    def __init__(self, kind='name', **kwargs):
        self.kind = kind
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        value = super().to_internal_value(data)
        try:
            return validate_name(value, self.kind)
        except ValidationError as exc:
            raise serializers.ValidationError(str(exc))


class CommitSerializer(serializers.Serializer):
    commit_id = serializers.CharField()
    dataset = NameField(kind='dataset name')
    manifest_id = serializers.CharField()
    parents = serializers.ListField(child=serializers.CharField(), allow_empty=True)
    author = NameField(kind='principal')
    timestamp = serializers.IntegerField(min_value=0)
    message = serializers.CharField(allow_blank=True, trim_whitespace=False)
    attributes = SortedDictField(child=serializers.CharField(allow_blank=True, trim_whitespace=False))
    revoked = serializers.BooleanField(read_only=True)

    IDENTITY_EXCLUDED = ('commit_id', 'revoked')

    def create(self, validated_data):
        return Commit(
            commit_id=validated_data['commit_id'],
            dataset=validated_data['dataset'],
            manifest_id=validated_data['manifest_id'],
            parents=tuple(validated_data['parents']),
            author=validated_data['author'],
            timestamp=validated_data['timestamp'],
            message=validated_data['message'],
            attributes=immutabledict(sorted_map(validated_data['attributes'])),
        )


def commit_body(commit: Commit) -> dict:
    """The fields hashed into ``commit_id``, in canonical order."""
    data = CommitSerializer(commit).data
    return {key: value for key, value in data.items() if key not in CommitSerializer.IDENTITY_EXCLUDED}


def commit_record(commit: Commit) -> dict:
    return {'commit_id': commit.commit_id, **commit_body(commit)}


def compute_commit_id(commit: Commit) -> str:
    return content_id(commit_body(commit))


def load_commit_record(payload: dict) -> Commit:
    serializer = CommitSerializer(data=payload)
    if not serializer.is_valid():
        raise IntegrityError(f"malformed commit record: {serializer.errors}")
    commit = serializer.save()
    if compute_commit_id(commit) != commit.commit_id:
        raise IntegrityError(f"commit {commit.commit_id} does not hash to its id")
    return commit


class DiffReportSerializer(serializers.Serializer):
    added = serializers.ListField(child=serializers.CharField())
    deleted = serializers.ListField(child=serializers.CharField())
    modified = serializers.ListField(child=serializers.CharField())
    unchanged_count = serializers.IntegerField()


class TombstoneSerializer(serializers.Serializer):
    dataset = serializers.CharField()
    deleted_by = serializers.CharField()
    deleted_at = serializers.IntegerField()
    head = serializers.CharField()
    commits = serializers.ListField(child=serializers.CharField(), allow_empty=True)

    def create(self, validated_data):
        return Tombstone(**{**validated_data, 'commits': tuple(validated_data['commits'])})


class CommitEventSerializer(serializers.Serializer):
    commit_id = serializers.CharField()
    dataset = serializers.CharField()
    depth = serializers.IntegerField(min_value=0)
    root = serializers.CharField(allow_null=True)

    def create(self, validated_data):
        return CommitEvent(**validated_data)


class TimestampField(serializers.Field):
    """Epoch seconds or an ISO-8601 datetime (UTC when no offset is given)."""

    def to_representation(self, value):
        return value

    def to_internal_value(self, data):
        try:
            return parse_timestamp(data)
        except ValidationError as exc:
            raise serializers.ValidationError(str(exc))


class QueryExprSerializer(serializers.Serializer):
    """JSON form of a query, as written in workflow definitions."""
    dataset = serializers.CharField(source='dataset_glob', required=False, allow_null=True, default=None)
    tag = serializers.CharField(source='tag_equals', required=False, allow_null=True, default=None)
    attrs = SortedDictField(child=serializers.CharField(allow_blank=True), required=False, default=dict)
    after = TimestampField(source='committed_after', required=False, allow_null=True, default=None)
    before = TimestampField(source='committed_before', required=False, allow_null=True, default=None)
    head_only = serializers.BooleanField(required=False, default=False)
    include_revoked = serializers.BooleanField(required=False, default=False)

    def validate_dataset(self, value):
        if value is None:
            return value
        try:
            return validate_glob(value)
        except ValidationError as exc:
            raise serializers.ValidationError(str(exc))

    def to_internal_value(self, data):
        reject_unknown_keys(self, data)
        return super().to_internal_value(data)

    def to_representation(self, instance: QueryExpr):
        return {
            'dataset': instance.dataset_glob,
            'tag': instance.tag_equals,
            'attrs': sorted_map(dict(instance.attr_equals)),
            'after': instance.committed_after,
            'before': instance.committed_before,
            'head_only': instance.head_only,
            'include_revoked': instance.include_revoked,
        }

    def create(self, validated_data):
        return QueryExpr(
            dataset_glob=validated_data.get('dataset_glob'),
            tag_equals=validated_data.get('tag_equals'),
            attr_equals=tuple(sorted(validated_data.get('attrs', {}).items())),
            committed_after=validated_data.get('committed_after'),
            committed_before=validated_data.get('committed_before'),
            head_only=validated_data.get('head_only', False),
            include_revoked=validated_data.get('include_revoked', False),
        )


def load_query(payload: dict) -> QueryExpr:
    serializer = QueryExprSerializer(data=payload)
    if not serializer.is_valid():
        raise ValidationError(f"invalid query: {flatten_errors(serializer.errors)}")
    return serializer.save()
