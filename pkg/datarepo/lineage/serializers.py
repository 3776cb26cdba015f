from rest_framework import serializers

from .models import ProvenanceRecord, RevocationMark


class ProvenanceRecordSerializer(serializers.Serializer):
    output_commit = serializers.CharField()
    input_commits = serializers.ListField(child=serializers.CharField(), allow_empty=True)
    workflow = serializers.CharField()
    workflow_def = serializers.CharField()
    run_id = serializers.CharField()
    terminal_step = serializers.CharField()
    recorded_at = serializers.IntegerField()

    def create(self, validated_data):
        return ProvenanceRecord(**{**validated_data, 'input_commits': tuple(validated_data['input_commits'])})


class RevocationMarkSerializer(serializers.Serializer):
    commit_id = serializers.CharField()
    reason = serializers.CharField(allow_blank=True)
    revoked_by = serializers.CharField()
    revoked_at = serializers.IntegerField()
    cascade = serializers.BooleanField()
    closure = serializers.ListField(child=serializers.CharField(), allow_empty=True)

    def create(self, validated_data):
        return RevocationMark(**{**validated_data, 'closure': tuple(validated_data['closure'])})
