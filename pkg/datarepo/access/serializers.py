from rest_framework import serializers

from repository.exceptions import ValidationError
from repository.validators import validate_name
from .models import ANY_DATASET, AclEntry, Role


class AclEntrySerializer(serializers.Serializer):
    principal = serializers.CharField()
    dataset = serializers.CharField()
    role = serializers.ChoiceField(choices=Role.choices)

    def validate_principal(self, value):
        try:
            return validate_name(value, 'principal')
        except ValidationError as exc:
            raise serializers.ValidationError(str(exc))

    def validate_dataset(self, value):
        if value == ANY_DATASET:
            return value
        try:
            return validate_name(value, 'dataset name')
        except ValidationError as exc:
            raise serializers.ValidationError(str(exc))

    def create(self, validated_data):
        return AclEntry(
            principal=validated_data['principal'],
            dataset=validated_data['dataset'],
            role=Role(validated_data['role']),
        )
