"""
JSON schema of workflow definitions and run journal records.

A definition file looks like::

    {
      "name": "normalize",
      "steps": [
        {"id": "fetch", "kind": "program", "input": {"query": {"dataset": "raw", "head_only": true}},
         "argv": ["sh", "-c", "cp -r $DSR_INPUTS/. $DSR_OUTPUTS/"]},
        {"id": "review", "kind": "human", "needs": ["fetch"], "instructions": "spot-check", "terminal": true}
      ],
      "triggers": [{"kind": "event", "query": {"dataset": "raw"}}, {"kind": "schedule", "cron": "0 3 * * *"}],
      "output": {"dataset": "clean", "tags": ["latest-clean"], "message": "{workflow} run {run_id}"}
    }

Structural checks live here; graph checks (cycles, dangling needs, cron
satisfiability) live in ``workflows.registry``.
"""
from rest_framework import serializers

from datasets.serializers import NameField, QueryExprSerializer, reject_unknown_keys
from .models import (
    OutputSpec,
    RunCause,
    Step,
    StepInput,
    StepKind,
    Trigger,
    TriggerKind,
    WorkflowDef,
)


class StrictSerializer(serializers.Serializer):
    """Rejects keys that are not declared fields."""

    def to_internal_value(self, data):
        reject_unknown_keys(self, data)
        return super().to_internal_value(data)


class StepInputSerializer(StrictSerializer):
    query = QueryExprSerializer(required=False, allow_null=True, default=None)
    multi = serializers.BooleanField(required=False, default=False)
    trigger = serializers.BooleanField(required=False, default=False)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        if attrs.get('trigger'):
            if attrs.get('query') is not None or attrs.get('multi'):
                raise serializers.ValidationError("a trigger input takes no query")
        elif attrs.get('query') is None:
            raise serializers.ValidationError("input needs a query or \"trigger\": true")
        return attrs

    def to_representation(self, instance: StepInput):
        if instance.trigger:
            return {'trigger': True}
        return {'query': QueryExprSerializer(instance.query).data, 'multi': instance.multi}

    def create(self, validated_data):
        query = validated_data.get('query')
        if query is not None:
            query = QueryExprSerializer().create(query)
        return StepInput(query=query, multi=validated_data['multi'], trigger=validated_data['trigger'])


class StepSerializer(StrictSerializer):
    id = NameField(kind='step id')
    kind = serializers.ChoiceField(choices=StepKind.choices)
    needs = serializers.ListField(child=serializers.CharField(), required=False, default=list)
    input = StepInputSerializer(required=False, allow_null=True, default=None)
    argv = serializers.ListField(child=serializers.CharField(trim_whitespace=False), required=False, default=list)
    cpu_slots = serializers.IntegerField(min_value=1, required=False, default=1)
    instructions = serializers.CharField(required=False, default='', allow_blank=True)
    terminal = serializers.BooleanField(required=False, default=False)
    timeout_seconds = serializers.FloatField(min_value=0.001, required=False, allow_null=True, default=None)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        if attrs['kind'] == StepKind.PROGRAM and not attrs['argv']:
            raise serializers.ValidationError("program steps need a nonempty argv")
        if attrs['kind'] == StepKind.HUMAN and attrs['argv']:
            raise serializers.ValidationError("human steps take no argv")
        if attrs.get('input') is not None and attrs['needs']:
            raise serializers.ValidationError("only source steps (no needs) may declare an input")
        if len(set(attrs['needs'])) != len(attrs['needs']):
            raise serializers.ValidationError("needs lists a step twice")
        return attrs

    def to_representation(self, instance: Step):
        return {
            'id': instance.id,
            'kind': StepKind(instance.kind).value,
            'needs': list(instance.needs),
            'input': StepInputSerializer(instance.input).data if instance.input else None,
            'argv': list(instance.argv),
            'cpu_slots': instance.cpu_slots,
            'instructions': instance.instructions,
            'terminal': instance.terminal,
            'timeout_seconds': instance.timeout_seconds,
        }

    def create(self, validated_data):
        step_input = validated_data.get('input')
        if step_input is not None:
            step_input = StepInputSerializer().create(step_input)
        return Step(
            id=validated_data['id'],
            kind=StepKind(validated_data['kind']),
            needs=tuple(validated_data['needs']),
            input=step_input,
            argv=tuple(validated_data['argv']),
            cpu_slots=validated_data['cpu_slots'],
            instructions=validated_data['instructions'],
            terminal=validated_data['terminal'],
            timeout_seconds=validated_data.get('timeout_seconds'),
        )


class TriggerSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=TriggerKind.choices)
    query = QueryExprSerializer(required=False, allow_null=True, default=None)
    cron = serializers.CharField(required=False, allow_null=True, default=None)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        kind = attrs['kind']
        if kind == TriggerKind.EVENT and attrs.get('query') is None:
            raise serializers.ValidationError("event triggers need a query")
        if kind == TriggerKind.SCHEDULE and not attrs.get('cron'):
            raise serializers.ValidationError("schedule triggers need a cron expression")
        if kind != TriggerKind.EVENT and attrs.get('query') is not None:
            raise serializers.ValidationError(f"{kind} triggers take no query")
        if kind != TriggerKind.SCHEDULE and attrs.get('cron'):
            raise serializers.ValidationError(f"{kind} triggers take no cron expression")
        return attrs

    def to_representation(self, instance: Trigger):
        return {
            'kind': TriggerKind(instance.kind).value,
            'query': QueryExprSerializer(instance.query).data if instance.query else None,
            'cron': instance.cron,
        }

    def create(self, validated_data):
        query = validated_data.get('query')
        return Trigger(
            kind=TriggerKind(validated_data['kind']),
            query=QueryExprSerializer().create(query) if query is not None else None,
            cron=' '.join(validated_data['cron'].split()) if validated_data.get('cron') else None,
        )


class OutputSpecSerializer(StrictSerializer):
    dataset = NameField(kind='dataset name')
    tags = serializers.ListField(child=NameField(kind='tag name'), required=False, default=list)
    message = serializers.CharField(required=False, default=OutputSpec.message, allow_blank=True)

    def validate_message(self, value):
        try:
            render_message(value, workflow='w', run_id='r', step='s')
        except (ValueError, IndexError) as exc:
            raise serializers.ValidationError(f"bad message template: {exc}")
        return value

    def to_representation(self, instance: OutputSpec):
        return {'dataset': instance.dataset, 'tags': list(instance.tags), 'message': instance.message}

    def create(self, validated_data):
        return OutputSpec(
            dataset=validated_data['dataset'],
            tags=tuple(validated_data['tags']),
            message=validated_data['message'],
        )


class WorkflowDefSerializer(StrictSerializer):
    name = NameField(kind='workflow name')
    owner = NameField(kind='principal', required=False)
    steps = StepSerializer(many=True, allow_empty=False)
    triggers = TriggerSerializer(many=True, required=False, default=list)
    output = OutputSpecSerializer(required=False, allow_null=True, default=None)

    def to_representation(self, instance: WorkflowDef):
        return {
            'name': instance.name,
            'owner': instance.owner,
            'steps': [StepSerializer(step).data for step in instance.steps],
            'triggers': [TriggerSerializer(trigger).data for trigger in instance.triggers],
            'output': OutputSpecSerializer(instance.output).data if instance.output else None,
        }

    def create(self, validated_data):
        output = validated_data.get('output')
        return WorkflowDef(
            name=validated_data['name'],
            owner=validated_data.get('owner', ''),
            steps=tuple(StepSerializer().create(step) for step in validated_data['steps']),
            triggers=tuple(TriggerSerializer().create(trigger) for trigger in validated_data['triggers']),
            output=OutputSpecSerializer().create(output) if output is not None else None,
        )


class RunCauseSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=TriggerKind.choices)
    commit_id = serializers.CharField(allow_null=True)
    fire_time = serializers.IntegerField(allow_null=True)
    depth = serializers.IntegerField(min_value=0)
    root = serializers.CharField(allow_null=True)

    def create(self, validated_data):
        return RunCause(**{**validated_data, 'kind': TriggerKind(validated_data['kind'])})


class _Placeholders(dict):
    def __missing__(self, key):
        return '{' + key + '}'


def render_message(template: str, **values) -> str:
    """``{workflow}``, ``{run_id}`` and ``{step}`` are filled in; other names are kept as written."""
    return template.format_map(_Placeholders(values))


class StepResultSerializer(serializers.Serializer):
    step_id = serializers.CharField()
    state = serializers.CharField()
    exit_code = serializers.IntegerField(allow_null=True)
    started_at = serializers.FloatField(allow_null=True)
    finished_at = serializers.FloatField(allow_null=True)
    stderr_tail = serializers.CharField(allow_blank=True)
    error = serializers.CharField(allow_blank=True)
    approved_by = serializers.CharField(allow_null=True)


class RunSerializer(serializers.Serializer):
    """``dsr workflow report --json``; steps are listed in execution order."""
    run_id = serializers.CharField()
    workflow = serializers.CharField()
    def_id = serializers.CharField()
    state = serializers.CharField()
    cause = RunCauseSerializer()
    principal = serializers.CharField()
    created_at = serializers.FloatField()
    finished_at = serializers.FloatField(allow_null=True)
    pins = serializers.DictField(child=serializers.ListField(child=serializers.CharField()))
    steps = serializers.SerializerMethodField()
    output_commit = serializers.CharField(allow_null=True)
    output_manifest = serializers.CharField(allow_null=True)
    error = serializers.CharField(allow_blank=True)

    def get_steps(self, run):
        return [StepResultSerializer(result).data for result in run.steps.values()]
