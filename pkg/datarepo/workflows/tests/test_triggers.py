from collections import Counter
from datetime import datetime, timezone

from repository.testing import ADMIN, WorkflowTestCase, write_tree
from workflows.daemon import Daemon
from workflows.models import RunCause, RunState, TriggerKind
from workflows.triggers import TriggerService, read_event_cursor, read_last_fired


def event_workflow(name='on-raw', dataset='raw', output=None, argv=('true',)):
    payload = {
        'name': name,
        'steps': [{'id': 'use', 'kind': 'program', 'argv': list(argv), 'input': {'trigger': True}, 'terminal': True}],
        'triggers': [{'kind': 'event', 'query': {'dataset': dataset}}],
    }
    if output:
        payload['output'] = {'dataset': output}
    return payload


def schedule_workflow(cron, name='nightly'):
    return {
        'name': name,
        'steps': [{'id': 'tick', 'kind': 'program', 'argv': ['true']}],
        'triggers': [{'kind': 'schedule', 'cron': cron}],
    }


def at(hour, minute, second=0):
    return datetime(2026, 3, 2, hour, minute, second, tzinfo=timezone.utc)


class EventTriggerTests(WorkflowTestCase):
    def setUp(self):
        super().setUp()
        self.engine, self.runner = self.make_engine()
        self.triggers = TriggerService(self.engine)

    def fire(self, triggers=None):
        handles = (triggers or self.triggers).evaluate_event_triggers()
        return [handle.result() for handle in handles]

    def event_commits(self, workflow):
        return Counter(
            run.cause.commit_id for run in self.engine.runs(workflow=workflow)
            if run.cause.kind == TriggerKind.EVENT
        )

    def test_only_versions_after_registration_fire(self):
        self.checkin_files('raw', {'a': b'before'})
        self.engine.register_workflow(ADMIN, event_workflow())
        self.assertEqual(self.fire(), [])
        after = self.checkin_files('raw', {'a': b'after'})
        self.checkin_files('unrelated', {'a': b'x'})
        (run,) = self.fire()
        self.assertEqual(run.cause.commit_id, after.commit_id)
        self.assertEqual(run.state, RunState.SUCCEEDED)
        self.assertEqual(run.pins, {'use': (after.commit_id,)})
        self.assertEqual(self.fire(), [])

    def test_each_commit_fires_once_across_restarts(self):
        self.engine.register_workflow(ADMIN, event_workflow())
        commits = [self.checkin_files('raw', {'a': str(i).encode()}) for i in range(3)]

        # A previous daemon started a run for the first commit and died before
        # moving the cursor.
        definition = self.engine.registry.latest('on-raw')
        self.engine.start_run(ADMIN, definition, RunCause.event(commits[0].commit_id)).result()
        self.assertEqual(read_event_cursor(self.repo, 'on-raw'), 0)

        restarted, _ = self.make_engine()
        runs = self.fire(TriggerService(restarted))
        self.assertEqual({run.cause.commit_id for run in runs}, {c.commit_id for c in commits[1:]})
        self.assertEqual(self.fire(TriggerService(restarted)), [])
        self.assertEqual(read_event_cursor(self.repo, 'on-raw'), len(self.datasets.events()))
        self.assertEqual(self.event_commits('on-raw'), Counter({c.commit_id: 1 for c in commits}))

    def test_owner_without_read_access_is_not_triggered(self):
        self.access.grant(ADMIN, 'bob', 'public', 'reader')
        self.engine.register_workflow('bob', event_workflow(dataset='*'))
        self.checkin_files('secret', {'a': b'1'})
        public = self.checkin_files('public', {'a': b'2'})
        runs = self.fire()
        self.assertEqual([run.cause.commit_id for run in runs], [public.commit_id])
        self.assertEqual(runs[0].principal, 'bob')

    def test_self_triggering_chains_stop_at_the_limit(self):
        def stamp(context):
            write_tree(context.outputs_dir, {'run': context.run_id.encode()})

        engine, runner = self.make_engine(default=stamp)
        engine.register_workflow(ADMIN, event_workflow(name='loop', dataset='loop', output='loop'))
        triggers = TriggerService(engine, chain_limit=3)
        self.checkin_files('loop', {'seed': b'0'})

        runs = []
        for _ in range(10):
            batch = self.fire(triggers)
            if not batch:
                break
            runs.extend(batch)
        self.assertEqual(len(runs), 3)
        self.assertEqual([run.cause.depth for run in runs], [0, 1, 2])
        self.assertEqual(len({run.cause.root for run in runs}), 1)
        self.assertEqual(self.datasets.events()[-1].depth, 3)

    def test_matching_uses_tags_and_attributes(self):
        payload = event_workflow()
        payload['triggers'] = [{'kind': 'event', 'query': {'dataset': 'raw', 'attrs': {'split': 'train'}}}]
        self.engine.register_workflow(ADMIN, payload)
        self.checkin_files('raw', {'a': b'1'}, attributes={'split': 'test'})
        train = self.checkin_files('raw', {'a': b'2'}, attributes={'split': 'train'})
        self.assertEqual([run.cause.commit_id for run in self.fire()], [train.commit_id])


class ScheduleTriggerTests(WorkflowTestCase):
    def setUp(self):
        super().setUp()
        self.engine, self.runner = self.make_engine()
        self.triggers = TriggerService(self.engine)

    def tick(self, now):
        return [handle.result() for handle in self.triggers.schedule_tick(now)]

    def test_fires_once_per_matching_minute(self):
        self.engine.register_workflow(ADMIN, schedule_workflow('*/5 * * * *'))
        self.assertEqual(self.tick(at(12, 3)), [])
        (run,) = self.tick(at(12, 5, 30))
        self.assertEqual(run.cause.fire_time, int(at(12, 5).timestamp()))
        self.assertEqual(self.tick(at(12, 5, 50)), [])
        self.assertEqual(len(self.tick(at(12, 10))), 1)
        self.assertEqual(read_last_fired(self.repo, 'nightly'), int(at(12, 10).timestamp()))

    def test_missed_minutes_are_not_replayed(self):
        self.engine.register_workflow(ADMIN, schedule_workflow('* * * * *'))
        self.tick(at(8, 0))
        runs = self.tick(at(9, 30))
        self.assertEqual([run.cause.fire_time for run in runs], [int(at(9, 30).timestamp())])

    def test_clock_going_backwards_does_not_refire(self):
        self.engine.register_workflow(ADMIN, schedule_workflow('* * * * *'))
        self.tick(at(10, 0))
        self.assertEqual(self.tick(at(9, 59)), [])

    def test_already_started_minute_only_advances_the_marker(self):
        self.engine.register_workflow(ADMIN, schedule_workflow('0 * * * *'))
        definition = self.engine.registry.latest('nightly')
        fire_time = int(at(7, 0).timestamp())
        self.engine.start_run(ADMIN, definition, RunCause.schedule(fire_time)).result()
        self.assertEqual(self.tick(at(7, 0, 20)), [])
        self.assertEqual(read_last_fired(self.repo, 'nightly'), fire_time)
        self.assertEqual(len(self.engine.runs(workflow='nightly')), 1)

    def test_daemon_cycle_ticks_once_per_minute(self):
        self.engine.register_workflow(ADMIN, schedule_workflow('* * * * *'))
        daemon = Daemon(self.repo, engine=self.engine)
        first = daemon.cycle(at(6, 0, 1))
        second = daemon.cycle(at(6, 0, 40))
        third = daemon.cycle(at(6, 1, 2))
        for handle in first + second + third:
            handle.result()
        self.assertEqual((len(first), len(second), len(third)), (1, 0, 1))
